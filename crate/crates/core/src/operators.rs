//! Operator pairs `(Σ̂, L̂_λ)` in a Nyström landmark basis or an RFF basis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KdmError, Result};
use crate::kernels::{gram, KernelFamily, KernelSpec, MixtureWeights};
use crate::linalg::{gram_scaled, symmetrize, Mat};

/// Default landmark-Gram jitter.
pub const EPS_W: f64 = 1e-8;
/// Default landmark count.
pub const DEFAULT_LANDMARKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Nystrom,
    Rff,
}

/// Per-kernel Nyström matrices before aggregation.
#[derive(Debug, Clone)]
pub struct NystromParts {
    pub spec: KernelSpec,
    /// N × p, `C_{im} = k(x_i, z_m)`.
    pub c: Mat,
    /// p × p landmark Gram.
    pub w: Mat,
    /// (N·d) × p, row `i·d + j` holds `∂_{x_j} k(x_i, z_m)`.
    pub j: Mat,
}

/// Aggregated, symmetrized and jittered Nyström matrices.
#[derive(Debug, Clone)]
pub struct NystromMatrices {
    pub c: Mat,
    pub w: Mat,
    pub j: Mat,
    pub z: Mat,
}

#[derive(Debug, Clone)]
pub struct OperatorPair {
    pub sigma: Mat,
    pub llam: Mat,
    pub basis: BasisKind,
    pub lambda: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(KdmError::InvalidParameter(format!("lambda must be positive, got {lambda}")))
    }
}

/// Gaussian derivative cross-matrix from an existing cross-Gram.
fn derivative_cross(spec: &KernelSpec, x: &Mat, z: &Mat, c: &Mat) -> Mat {
    let (n, d, p) = (x.nrows(), x.ncols(), z.nrows());
    let mut j = Mat::zeros(n * d, p);
    for m in 0..p {
        for i in 0..n {
            let k = c[(i, m)];
            for a in 0..d {
                let s = spec.sigma.at(a);
                j[(i * d + a, m)] = -(x[(i, a)] - z[(m, a)]) / (s * s) * k;
            }
        }
    }
    j
}

/// Build `{C_ℓ, W_ℓ, J_ℓ}` for every kernel of a Gaussian dictionary.
pub fn build_nystrom(dictionary: &[KernelSpec], x: &Mat, z: &Mat) -> Result<Vec<NystromParts>> {
    if x.ncols() != z.ncols() {
        return Err(KdmError::DimensionMismatch { expected: x.ncols(), got: z.ncols() });
    }
    dictionary
        .iter()
        .map(|spec| {
            if spec.family != KernelFamily::Gaussian {
                return Err(KdmError::UnsupportedFamily(format!(
                    "{} has no Nyström derivative path",
                    spec.family
                )));
            }
            let c = gram(spec, x, z)?;
            let w = gram(spec, z, z)?;
            let j = derivative_cross(spec, x, z, &c);
            Ok(NystromParts { spec: spec.clone(), c, w, j })
        })
        .collect()
}

/// `C_β = Σ β_ℓ C_ℓ` (likewise W, J), then `W ← (W+Wᵀ)/2 + ε_W I`.
pub fn aggregate_mixture(
    parts: &[NystromParts],
    beta: &MixtureWeights,
    z: &Mat,
    eps_w: f64,
) -> Result<NystromMatrices> {
    if parts.len() != beta.len() || parts.is_empty() {
        return Err(KdmError::DimensionMismatch { expected: parts.len(), got: beta.len() });
    }
    let first = &parts[0];
    for p in parts {
        if p.c.shape() != first.c.shape() || p.w.shape() != first.w.shape() || p.j.shape() != first.j.shape() {
            return Err(KdmError::Shape("mixture parts have different shapes".into()));
        }
    }
    let mut c = Mat::zeros(first.c.nrows(), first.c.ncols());
    let mut w = Mat::zeros(first.w.nrows(), first.w.ncols());
    let mut j = Mat::zeros(first.j.nrows(), first.j.ncols());
    for (p, &b) in parts.iter().zip(&beta.beta) {
        c += &p.c * b;
        w += &p.w * b;
        j += &p.j * b;
    }
    let mut w = symmetrize(&w);
    for i in 0..w.nrows() {
        w[(i, i)] += eps_w;
    }
    Ok(NystromMatrices { c, w, j, z: z.clone() })
}

/// `Σ̂ = CᵀC/N`, `L̂_λ = JᵀJ/N + λW`.
pub fn operator_pair_nystrom(m: &NystromMatrices, lambda: f64, n: usize) -> Result<OperatorPair> {
    check_lambda(lambda)?;
    let nf = n as f64;
    let sigma = gram_scaled(&m.c, nf);
    let llam = gram_scaled(&m.j, nf) + &m.w * lambda;
    Ok(OperatorPair { sigma, llam: symmetrize(&llam), basis: BasisKind::Nystrom, lambda })
}

/// `Σ̂ = SᵀS/N`, `L̂_λ = DᵀD/N + λI`.
pub fn operator_pair_rff(s: &Mat, d: &Mat, lambda: f64, n: usize) -> Result<OperatorPair> {
    check_lambda(lambda)?;
    if s.ncols() != d.ncols() {
        return Err(KdmError::DimensionMismatch { expected: s.ncols(), got: d.ncols() });
    }
    let nf = n as f64;
    let sigma = gram_scaled(s, nf);
    let mut llam = gram_scaled(d, nf);
    for i in 0..llam.nrows() {
        llam[(i, i)] += lambda;
    }
    Ok(OperatorPair { sigma, llam, basis: BasisKind::Rff, lambda })
}

fn sq_dist(x: &Mat, i: usize, c: &Mat, m: usize) -> f64 {
    (0..x.ncols()).map(|j| (x[(i, j)] - c[(m, j)]).powi(2)).sum()
}

/// k-means++ seeding followed by 50 Lloyd iterations.
pub fn kmeans_landmarks(x: &Mat, p: usize, seed: u64) -> Result<Mat> {
    let (n, d) = (x.nrows(), x.ncols());
    if p == 0 || n == 0 {
        return Err(KdmError::InvalidParameter("need at least one point and one landmark".into()));
    }
    if p >= n {
        return Ok(x.clone());
    }
    let mut rng = crate::seed::rng(seed);
    let mut centers = Mat::zeros(p, d);
    centers.set_row(0, &x.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for m in 1..p {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &v) in dist.iter().enumerate() {
                if t < v {
                    chosen = i;
                    break;
                }
                t -= v;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.set_row(m, &x.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(x, i, &centers, m));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..p)
                .min_by(|&u, &v| sq_dist(x, i, &centers, u).total_cmp(&sq_dist(x, i, &centers, v)))
                .unwrap();
            if best != *a {
                *a = best;
                changed = true;
            }
        }
        let mut sums = Mat::zeros(p, d);
        let mut counts = vec![0usize; p];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for j in 0..d {
                sums[(a, j)] += x[(i, j)];
            }
        }
        for m in 0..p {
            if counts[m] > 0 {
                for j in 0..d {
                    centers[(m, j)] = sums[(m, j)] / counts[m] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(centers)
}
