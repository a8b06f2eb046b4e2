//! Electrode graphs and their spectral machinery.
//!
//! Montage coordinates become a binary adjacency (k-nearest-neighbour or
//! radius rule), the adjacency becomes a scaled normalized Laplacian, and the
//! Laplacian drives the Chebyshev polynomial recurrence that the experts
//! convolve with. Attention masks prune nodes by zeroing feature rows and
//! adjacency rows/columns; the Laplacian of a pruned graph is recomputed from
//! the pruned adjacency.
//!
//! All functions here are pure value computations (no gradient recording),
//! safe to call concurrently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One electrode position in normalized head coordinates (unit circle).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MontagePoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

/// How electrode coordinates become graph edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum AdjacencyRule {
    /// Connect each node to its `k` nearest neighbours, symmetrized by OR.
    Knn { k: usize },
    /// Connect nodes closer than `r`.
    Radius { r: f64 },
}

impl Default for AdjacencyRule {
    fn default() -> Self {
        AdjacencyRule::Knn { k: 4 }
    }
}

/// Node features `X` (channels × bands) plus binary adjacency `A`.
#[derive(Debug, Clone)]
pub struct EegGraph {
    pub channel_names: Vec<String>,
    pub features: Tensor,
    pub adjacency: Tensor,
}

impl EegGraph {
    pub fn new(channel_names: Vec<String>, features: Tensor, adjacency: Tensor) -> Result<Self> {
        let c = features.rows;
        if channel_names.len() != c {
            return Err(Error::Shape(format!(
                "{} channel names for {} feature rows",
                channel_names.len(),
                c
            )));
        }
        if adjacency.shape() != (c, c) {
            return Err(Error::Shape(format!(
                "adjacency {}x{} does not match {c} channels",
                adjacency.rows, adjacency.cols
            )));
        }
        validate_adjacency(&adjacency)?;
        Ok(Self { channel_names, features, adjacency })
    }

    pub fn channel_count(&self) -> usize {
        self.features.rows
    }

    pub fn band_count(&self) -> usize {
        self.features.cols
    }
}

/// Scaled Laplacian `L̃ = L − I` with spectrum in `[−1, 1]`.
///
/// Uses the normalized Laplacian `L = I − D^{−1/2} A D^{−1/2}` and the fixed
/// `λ_max = 2` convention. Isolated nodes take `D^{−1/2} = 0`, so their rows
/// and columns vanish in the adjacency-dependent term.
#[derive(Debug, Clone)]
pub struct ScaledLaplacian {
    pub matrix: Tensor,
}

fn validate_adjacency(a: &Tensor) -> Result<()> {
    if a.rows != a.cols {
        return Err(Error::Contract(format!("adjacency must be square, got {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    for i in 0..n {
        if a.at(i, i) != 0.0 {
            return Err(Error::Contract(format!("adjacency diagonal non-zero at {i}")));
        }
        for j in 0..n {
            let v = a.at(i, j);
            if v != 0.0 && v != 1.0 {
                return Err(Error::Contract(format!("adjacency entry ({i},{j}) = {v} not binary")));
            }
            if v != a.at(j, i) {
                return Err(Error::Contract(format!("adjacency asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Build a symmetric binary adjacency from montage coordinates.
pub fn build_adjacency(montage: &[MontagePoint], rule: AdjacencyRule) -> Result<Tensor> {
    let c = montage.len();
    if c == 0 {
        return Err(Error::Config("montage is empty".into()));
    }
    for i in 0..c {
        for j in (i + 1)..c {
            if montage[i].x == montage[j].x && montage[i].y == montage[j].y {
                return Err(Error::Config(format!(
                    "duplicate montage coordinates for '{}' and '{}'",
                    montage[i].name, montage[j].name
                )));
            }
        }
    }
    let dist2 = |i: usize, j: usize| -> f64 {
        let dx = montage[i].x - montage[j].x;
        let dy = montage[i].y - montage[j].y;
        dx * dx + dy * dy
    };
    let mut a = Tensor::zeros(c, c);
    match rule {
        AdjacencyRule::Knn { k } => {
            if k >= c {
                return Err(Error::Config(format!("knn k={k} must be below channel count {c}")));
            }
            if k == 0 {
                return Err(Error::Config("knn k must be at least 1".into()));
            }
            for i in 0..c {
                let mut order: Vec<usize> = (0..c).filter(|&j| j != i).collect();
                // ties broken by index for determinism
                order.sort_by(|&p, &q| {
                    dist2(i, p).partial_cmp(&dist2(i, q)).unwrap().then(p.cmp(&q))
                });
                for &j in order.iter().take(k) {
                    a.set(i, j, 1.0);
                    a.set(j, i, 1.0);
                }
            }
        }
        AdjacencyRule::Radius { r } => {
            if r <= 0.0 {
                return Err(Error::Config(format!("radius r={r} must be positive")));
            }
            for i in 0..c {
                for j in (i + 1)..c {
                    if dist2(i, j) <= r * r {
                        a.set(i, j, 1.0);
                        a.set(j, i, 1.0);
                    }
                }
            }
        }
    }
    Ok(a)
}

/// Compute `L̃ = L − I = −D^{−1/2} A D^{−1/2}` from a binary adjacency.
pub fn scaled_laplacian(adjacency: &Tensor) -> Result<ScaledLaplacian> {
    validate_adjacency(adjacency)?;
    let n = adjacency.rows;
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = (0..n).map(|j| adjacency.at(i, j)).sum();
        if deg > 0.0 {
            inv_sqrt_deg[i] = 1.0 / deg.sqrt();
        }
    }
    let mut m = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = -inv_sqrt_deg[i] * adjacency.at(i, j) * inv_sqrt_deg[j];
            m.set(i, j, v);
        }
    }
    Ok(ScaledLaplacian { matrix: m })
}

/// Evaluate the Chebyshev basis `X̄_0 … X̄_{K−1}` by the three-term
/// recurrence: `X̄_0 = X`, `X̄_1 = L̃X`, `X̄_k = 2L̃X̄_{k−1} − X̄_{k−2}`.
pub fn chebyshev_basis(x: &Tensor, lap: &ScaledLaplacian, order: usize) -> Result<Vec<Tensor>> {
    if order < 1 {
        return Err(Error::Config("chebyshev order must be at least 1".into()));
    }
    if lap.matrix.cols != x.rows {
        return Err(Error::Shape(format!(
            "laplacian {}x{} does not match features with {} rows",
            lap.matrix.rows, lap.matrix.cols, x.rows
        )));
    }
    let mut terms = Vec::with_capacity(order);
    terms.push(x.clone());
    if order >= 2 {
        terms.push(lap.matrix.matmul(x)?);
    }
    for k in 2..order {
        let lx = lap.matrix.matmul(&terms[k - 1])?;
        let next = lx.scale(2.0).sub(&terms[k - 2])?;
        terms.push(next);
    }
    Ok(terms)
}

/// Zero rows and columns of dropped nodes; the result stays symmetric binary.
pub fn prune_graph(adjacency: &Tensor, keep: &[bool]) -> Result<Tensor> {
    let n = adjacency.rows;
    if keep.len() != n {
        return Err(Error::Shape(format!(
            "keep mask length {} does not match {n} nodes",
            keep.len()
        )));
    }
    let mut out = adjacency.clone();
    out.requires_grad = false;
    for i in 0..n {
        for j in 0..n {
            if !keep[i] || !keep[j] {
                out.set(i, j, 0.0);
            }
        }
    }
    Ok(out)
}

// ---- dense symmetric eigendecomposition (test oracle) ---------------------

/// Cyclic Jacobi rotations for a symmetric matrix (desk scale, `n ≤ 64`).
///
/// Returns eigenvalues and an orthogonal matrix whose columns are the
/// corresponding eigenvectors, with `‖UΛUᵀ − M‖_max` at machine-precision
/// levels for well-scaled inputs. Used as the independent spectral oracle;
/// the runtime path never eigendecomposes.
pub fn eigen_sym(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::Contract(format!("eigen_sym needs a square matrix, got {}x{}", m.rows, m.cols)));
    }
    if n > 64 {
        return Err(Error::Contract(format!("eigen_sym is desk-scale only (n ≤ 64), got {n}")));
    }
    let scale = m.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.at(i, j) - m.at(j, i)).abs() > 1e-10 * scale {
                return Err(Error::Contract(format!("eigen_sym input asymmetric at ({i},{j})")));
            }
        }
    }
    let mut a = m.clone();
    // enforce exact symmetry before rotating
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.at(i, j) + a.at(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut u = Tensor::identity(n);
    let tol = 1e-15 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a.at(i, j).abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() <= tol {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                // zero a_pq: tan(2θ) = 2·a_pq / (a_pp − a_qq)
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp + s * akq);
                    a.set(k, q, -s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk + s * aqk);
                    a.set(q, k, -s * apk + c * aqk);
                }
                for k in 0..n {
                    let ukp = u.at(k, p);
                    let ukq = u.at(k, q);
                    u.set(k, p, c * ukp + s * ukq);
                    u.set(k, q, -s * ukp + c * ukq);
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..n).map(|i| a.at(i, i)).collect();
    Ok((eigenvalues, u))
}
