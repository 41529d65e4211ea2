//! Generalized symmetric eigenproblem `Σ̂ a = μ L̂_λ a`, lifting to samples,
//! gauge fixing and alignment.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{KdmError, Result};
use crate::linalg::{psd_floor, sym_eig_desc, Mat, Vector};
use crate::operators::OperatorPair;

/// Floor used when the regularized matrix must be repaired before Cholesky.
pub const EPS_PSD: f64 = 1e-10;

/// Top eigenpairs in coefficient space, `aᵀ L̂_λ a = 1`.
#[derive(Debug, Clone)]
pub struct GevpSolution {
    pub mu: Vector,
    pub a: Mat,
}

/// Eigenvalues, coefficients and gauge-fixed sample evaluations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenSolution {
    pub mu: Vec<f64>,
    #[serde(skip)]
    pub a: Mat,
    #[serde(skip)]
    pub phi: Mat,
    /// Index (within the top r+1) of the mode dropped as constant-like.
    pub dropped: Option<usize>,
    pub dropped_mu: Option<f64>,
    /// Columns kept by gauge fixing; shorter than `mu` on rank loss.
    pub rank: usize,
}

fn cholesky(llam: &Mat) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(llam.clone()) {
        return Ok(c);
    }
    Cholesky::new(psd_floor(llam, EPS_PSD))
        .ok_or_else(|| KdmError::NotPositiveDefinite("regularized operator".into()))
}

/// Top-`r` generalized eigenpairs via `L̂_λ = LLᵀ`, `M = L⁻¹Σ̂L⁻ᵀ`, `a = L⁻ᵀv`.
pub fn solve_gevp(pair: &OperatorPair, r: usize) -> Result<GevpSolution> {
    let p = pair.sigma.nrows();
    if pair.sigma.shape() != pair.llam.shape() || pair.sigma.ncols() != p {
        return Err(KdmError::Shape("operator pair must be square and conformal".into()));
    }
    if r == 0 || r > p {
        return Err(KdmError::InvalidParameter(format!("need 1 <= r <= p, got r={r}, p={p}")));
    }
    if !crate::linalg::all_finite(&pair.sigma) || !crate::linalg::all_finite(&pair.llam) {
        return Err(KdmError::NonFinite("operator pair".into()));
    }
    let chol = cholesky(&pair.llam)?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&pair.sigma)
        .ok_or_else(|| KdmError::NotPositiveDefinite("triangular solve".into()))?;
    let m = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| KdmError::NotPositiveDefinite("triangular solve".into()))?;
    let (vals, vecs) = sym_eig_desc(&m);
    let v = vecs.columns(0, r).into_owned();
    let a = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or_else(|| KdmError::NotPositiveDefinite("back substitution".into()))?;
    Ok(GevpSolution { mu: vals.rows(0, r).into_owned(), a })
}

/// `Φ_raw = C·A` (Nyström) or `S·A` (RFF).
pub fn lift(c: &Mat, a: &Mat) -> Result<Mat> {
    if c.ncols() != a.nrows() {
        return Err(KdmError::DimensionMismatch { expected: c.ncols(), got: a.nrows() });
    }
    Ok(c * a)
}

/// `(aᵀΣ̂a)/(aᵀL̂_λa)`.
pub fn rayleigh_quotient(pair: &OperatorPair, a: &Vector) -> f64 {
    let num = a.dot(&(&pair.sigma * a));
    let den = a.dot(&(&pair.llam * a));
    num / den
}

/// How constant a column looks: `|mean| / rms`, in [0, 1].
pub fn constness(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let rms = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms == 0.0 {
        1.0
    } else {
        mean.abs() / rms
    }
}

/// Solve for `r + extra` non-constant modes.
///
/// The uncentered covariance carries a near-constant eigenfunction at the
/// top of the spectrum. `r + 1 + extra` pairs are solved, lifted through
/// `lift_basis`, and the most constant-like column among the top `r + 1`
/// is removed.
pub fn solve_nonconstant(
    pair: &OperatorPair,
    lift_basis: &Mat,
    r: usize,
    extra: usize,
) -> Result<(GevpSolution, Mat, usize, f64)> {
    let p = pair.sigma.nrows();
    let want = r + 1 + extra;
    if want > p {
        return Err(KdmError::InvalidParameter(format!("basis size {p} too small for {want} modes")));
    }
    let sol = solve_gevp(pair, want)?;
    let raw = lift(lift_basis, &sol.a)?;
    let drop = (0..=r)
        .max_by(|&i, &j| {
            let ci = constness(raw.column(i).as_slice());
            let cj = constness(raw.column(j).as_slice());
            ci.total_cmp(&cj).then(j.cmp(&i))
        })
        .unwrap();
    let keep: Vec<usize> = (0..want).filter(|&k| k != drop).collect();
    let mu = Vector::from_iterator(keep.len(), keep.iter().map(|&k| sol.mu[k]));
    let a = sol.a.select_columns(&keep);
    let raw = raw.select_columns(&keep);
    Ok((GevpSolution { mu, a }, raw, drop, sol.mu[drop]))
}

/// Full pipeline: non-constant solve, lift, gauge fix, keep `r` modes.
pub fn solve_and_fix(pair: &OperatorPair, lift_basis: &Mat, r: usize) -> Result<EigenSolution> {
    let (sol, raw, drop, dmu) = solve_nonconstant(pair, lift_basis, r, 0)?;
    let fixed = gauge_fix(&raw);
    Ok(EigenSolution {
        mu: sol.mu.iter().copied().collect(),
        a: sol.a,
        rank: fixed.kept.len(),
        phi: fixed.phi,
        dropped: Some(drop),
        dropped_mu: Some(dmu),
    })
}

/// Output of [`gauge_fix`].
#[derive(Debug, Clone)]
pub struct GaugeFixed {
    pub phi: Mat,
    /// Input columns that survived; the rest were linearly dependent.
    pub kept: Vec<usize>,
}

impl GaugeFixed {
    pub fn is_full_rank(&self, r: usize) -> bool {
        self.kept.len() == r
    }

    pub fn into_full_rank(self, r: usize) -> Result<Mat> {
        if self.kept.len() == r {
            Ok(self.phi)
        } else {
            Err(KdmError::RankDeficient { rank: self.kept.len(), requested: r })
        }
    }
}

const RANK_TOL: f64 = 1e-9;

/// Center each column and orthonormalize under `⟨u,v⟩_N = uᵀv/N`, keeping order.
///
/// Modified Gram-Schmidt with one re-orthogonalization pass. Columns whose
/// residual norm falls below `1e-9` of their centered norm are dropped.
pub fn gauge_fix(phi_raw: &Mat) -> GaugeFixed {
    let (n, r) = phi_raw.shape();
    let nf = n as f64;
    let mut out: Vec<Vector> = Vec::with_capacity(r);
    let mut kept = Vec::with_capacity(r);
    for k in 0..r {
        let mut v: Vector = phi_raw.column(k).into_owned();
        let mean = v.mean();
        v.add_scalar_mut(-mean);
        let base = (v.norm_squared() / nf).sqrt();
        if base == 0.0 || !base.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&v) / nf;
                v.axpy(-c, q, 1.0);
            }
        }
        let nrm = (v.norm_squared() / nf).sqrt();
        if nrm <= RANK_TOL * base {
            continue;
        }
        v /= nrm;
        out.push(v);
        kept.push(k);
    }
    let phi = if out.is_empty() { Mat::zeros(n, 0) } else { Mat::from_columns(&out) };
    GaugeFixed { phi, kept }
}

/// Flip column signs so `⟨anchor_k, φ_k⟩ > 0`; returns flags for zero products.
pub fn sign_anchor(phi: &Mat, anchors: &Mat) -> Result<(Mat, Vec<bool>)> {
    if phi.shape() != anchors.shape() {
        return Err(KdmError::Shape(format!("{:?} vs {:?}", phi.shape(), anchors.shape())));
    }
    let mut out = phi.clone();
    let mut flags = vec![false; phi.ncols()];
    for k in 0..phi.ncols() {
        let ip = phi.column(k).dot(&anchors.column(k));
        if ip == 0.0 {
            flags[k] = true;
        } else if ip < 0.0 {
            out.column_mut(k).neg_mut();
        }
    }
    Ok((out, flags))
}

/// Largest entry of `|UᵀU/N − I|`.
pub fn orthonormality_error(u: &Mat) -> f64 {
    let g = u.tr_mul(u) / u.nrows() as f64;
    (g - Mat::identity(u.ncols(), u.ncols())).amax()
}

/// Orthogonal `Q` minimizing `‖ŨQ − U‖²_F / N`, and that minimum `2r − 2 tr Σ`.
pub fn procrustes_align(u: &Mat, utilde: &Mat) -> Result<(Mat, f64)> {
    if u.shape() != utilde.shape() {
        return Err(KdmError::Shape(format!("{:?} vs {:?}", u.shape(), utilde.shape())));
    }
    for m in [u, utilde] {
        let e = orthonormality_error(m);
        if e > 1e-6 {
            return Err(KdmError::NotOrthonormal(e));
        }
    }
    let r = u.ncols();
    let m = utilde.tr_mul(u) / u.nrows() as f64;
    let svd = m.svd(true, true);
    let (p, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let q = p * vt;
    let residual = (2.0 * r as f64 - 2.0 * svd.singular_values.sum()).max(0.0);
    Ok((q, residual))
}
