//! One expert: Chebyshev graph convolution, a classifier head, and
//! gradient-based channel attention with normalization and threshold pruning.
//!
//! The attention gradient `∂S_target/∂H` is assembled in closed form from the
//! head weights and the softmax Jacobian, but through recorded tensor ops, so
//! the diversity loss backpropagates through attention with first-order
//! autodiff only. The derived keep-mask is a constant during backpropagation;
//! the masked map `Φ` carries gradients on kept channels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{self, EegGraph};
use crate::record::{Axis, DiffRecord, NodeId, ReduceKind};
use crate::tensor::Tensor;

/// Learnable parameters of one expert.
///
/// `cheb_weights` maps the concatenated Chebyshev basis `(K·F)` to `D`
/// filters; the head maps the flattened `C×D` representation to `E` logits.
#[derive(Debug, Clone)]
pub struct ExpertParams {
    pub cheb_weights: Tensor,
    pub head_weights: Tensor,
    pub head_bias: Tensor,
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor { rows, cols, data, requires_grad: false }
}

impl ExpertParams {
    pub fn init(
        channels: usize,
        bands: usize,
        order: usize,
        filters: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            cheb_weights: xavier(order * bands, filters, rng),
            head_weights: xavier(channels * filters, classes, rng),
            head_bias: Tensor::zeros(1, classes),
        }
    }

    /// Check shape consistency against the configured dimensions.
    pub fn validate(
        &self,
        channels: usize,
        bands: usize,
        order: usize,
        filters: usize,
        classes: usize,
    ) -> Result<()> {
        let want = [
            ("cheb_weights", self.cheb_weights.shape(), (order * bands, filters)),
            ("head_weights", self.head_weights.shape(), (channels * filters, classes)),
            ("head_bias", self.head_bias.shape(), (1, classes)),
        ];
        for (name, got, expect) in want {
            if got != expect {
                return Err(Error::Shape(format!(
                    "{name}: got {}x{}, expected {}x{}",
                    got.0, got.1, expect.0, expect.1
                )));
            }
        }
        Ok(())
    }
}

/// Record node ids of one expert's parameters on a specific record.
#[derive(Debug, Clone, Copy)]
pub struct BoundExpertParams {
    pub cheb: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

impl ExpertParams {
    pub fn bind(&self, rec: &mut DiffRecord, trainable: bool) -> BoundExpertParams {
        let enter = |rec: &mut DiffRecord, t: &Tensor| {
            let mut t = t.clone();
            t.requires_grad = trainable;
            rec.leaf(t)
        };
        BoundExpertParams {
            cheb: enter(rec, &self.cheb_weights),
            head_w: enter(rec, &self.head_weights),
            head_b: enter(rec, &self.head_bias),
        }
    }
}

/// Which class index the attention gradient targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionTarget {
    /// Ground-truth label (training).
    Label(usize),
    /// The expert's own argmax prediction (inference).
    Predicted,
}

/// Recorded nodes of one expert forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ExpertPass {
    pub h: NodeId,
    pub z: NodeId,
    pub s: NodeId,
}

/// Plain-value bundle produced by one expert on one sample.
#[derive(Debug, Clone)]
pub struct ExpertOutput {
    pub h: Tensor,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub importance: Vec<f64>,
    pub normalized: Vec<f64>,
    pub masked_attention: Vec<f64>,
    pub keep_mask: Vec<bool>,
    /// Class index the attention map was computed for.
    pub target_class: usize,
}

/// One expert's recorded trace plus its value-level output.
#[derive(Debug, Clone)]
pub struct ExpertRun {
    pub pass: ExpertPass,
    pub phi: NodeId,
    pub output: ExpertOutput,
}

/// Forward pass: mask features, prune the graph, recompute the scaled
/// Laplacian, evaluate the Chebyshev basis, convolve, classify.
pub fn forward(
    rec: &mut DiffRecord,
    graph: &EegGraph,
    keep_in: &[bool],
    params: &BoundExpertParams,
    order: usize,
) -> Result<ExpertPass> {
    let c = graph.channel_count();
    if keep_in.len() != c {
        return Err(Error::Shape(format!(
            "input keep mask length {} does not match {c} channels",
            keep_in.len()
        )));
    }
    let masked_x = mask_feature_rows(&graph.features, keep_in);
    let pruned_a = graph::prune_graph(&graph.adjacency, keep_in)?;
    let lap = graph::scaled_laplacian(&pruned_a)?;
    let basis = graph::chebyshev_basis(&masked_x, &lap, order)?;
    let basis_refs: Vec<&Tensor> = basis.iter().collect();
    let stacked = Tensor::concat_cols(&basis_refs)?;

    let b = rec.constant(stacked);
    let pre = rec.matmul(b, params.cheb)?;
    let h = rec.relu(pre)?;
    let flat = rec.flatten_row(h)?;
    let zlin = rec.matmul(flat, params.head_w)?;
    let z = rec.add(zlin, params.head_b)?;
    let s = rec.softmax_row(z)?;
    Ok(ExpertPass { h, z, s })
}

fn mask_feature_rows(x: &Tensor, keep: &[bool]) -> Tensor {
    let mut out = x.clone();
    out.requires_grad = false;
    for (r, &k) in keep.iter().enumerate() {
        if !k {
            out.data[r * x.cols..(r + 1) * x.cols].fill(0.0);
        }
    }
    out
}

/// Cross-entropy of one expert's probabilities against a class index.
pub fn expert_loss(rec: &mut DiffRecord, s: NodeId, label: usize) -> Result<NodeId> {
    let e = rec.value(s).cols;
    if label >= e {
        return Err(Error::Contract(format!("label {label} out of range for {e} classes")));
    }
    let p = rec.pick(s, 0, label)?;
    let lp = rec.log_clamped(p)?;
    rec.scale(lp, -1.0)
}

/// Per-filter importance `α` from the closed-form gradient of the target
/// probability with respect to the representation, pooled over channels.
///
/// The gradient is restricted to entries where the ReLU was active
/// (`H > 0`); the restriction mask is a constant of the backward pass.
pub fn gradcam_alpha(
    rec: &mut DiffRecord,
    pass: ExpertPass,
    params: &BoundExpertParams,
    target: usize,
) -> Result<NodeId> {
    let (c, d) = rec.value(pass.h).shape();
    let e = rec.value(pass.s).cols;
    if target >= e {
        return Err(Error::Contract(format!("target {target} out of range for {e} classes")));
    }
    let s_target = rec.pick(pass.s, 0, target)?;
    let s_col = rec.transpose(pass.s)?;
    let mut onehot = Tensor::zeros(e, 1);
    onehot.data[target] = 1.0;
    let onehot = rec.constant(onehot);
    let delta = rec.sub(onehot, s_col)?;
    let grad_flat = rec.matmul(params.head_w, delta)?;
    let grad_flat = rec.scale_by_scalar(grad_flat, s_target)?;
    let grad = rec.reshape(grad_flat, c, d)?;
    let active = rec.value(pass.h).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let active = rec.constant(active);
    let masked = rec.mul(grad, active)?;
    rec.reduce(masked, ReduceKind::Mean, Axis::Rows)
}

/// Channel importance `I_c = ReLU(Σ_d α_d · H_{c,d})` as a `1×C` row.
pub fn channel_importance(rec: &mut DiffRecord, h: NodeId, alpha: NodeId) -> Result<NodeId> {
    let alpha_col = rec.transpose(alpha)?;
    let weighted = rec.matmul(h, alpha_col)?;
    let rectified = rec.relu(weighted)?;
    rec.transpose(rectified)
}

/// Min-max rescale importance to `[0, 1]`; a constant map keeps everything.
pub fn normalize_attention(rec: &mut DiffRecord, importance: NodeId) -> Result<NodeId> {
    rec.minmax_normalize(importance)
}

/// Threshold the normalized map. Returns the keep mask (constant under
/// backpropagation) and the recorded masked map `Φ`.
pub fn threshold_mask(
    rec: &mut DiffRecord,
    normalized: NodeId,
    eta: f64,
) -> Result<(Vec<bool>, NodeId)> {
    if !(0.0..1.0).contains(&eta) || eta <= 0.0 {
        return Err(Error::Config(format!("threshold eta={eta} must lie in (0,1)")));
    }
    let keep: Vec<bool> = rec.value(normalized).data.iter().map(|&v| v >= eta).collect();
    let mask_row = Tensor::row(&keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    let mask = rec.constant(mask_row);
    let phi = rec.mul(normalized, mask)?;
    Ok((keep, phi))
}

/// Run the full expert unit: forward, attention, normalization, threshold.
pub fn run(
    rec: &mut DiffRecord,
    graph: &EegGraph,
    keep_in: &[bool],
    params: &BoundExpertParams,
    order: usize,
    eta: f64,
    target: AttentionTarget,
) -> Result<ExpertRun> {
    let pass = forward(rec, graph, keep_in, params, order)?;
    let probs = rec.value(pass.s).data.clone();
    let target_class = match target {
        AttentionTarget::Label(l) => {
            if l >= probs.len() {
                return Err(Error::Contract(format!(
                    "label {l} out of range for {} classes",
                    probs.len()
                )));
            }
            l
        }
        AttentionTarget::Predicted => argmax(&probs),
    };
    let alpha = gradcam_alpha(rec, pass, params, target_class)?;
    let importance = channel_importance(rec, pass.h, alpha)?;
    let normalized = normalize_attention(rec, importance)?;
    let (keep_mask, phi) = threshold_mask(rec, normalized, eta)?;
    let output = ExpertOutput {
        h: rec.value(pass.h).clone(),
        logits: rec.value(pass.z).data.clone(),
        probs,
        importance: rec.value(importance).data.clone(),
        normalized: rec.value(normalized).data.clone(),
        masked_attention: rec.value(phi).data.clone(),
        keep_mask,
        target_class,
    };
    Ok(ExpertRun { pass, phi, output })
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
