//! Subspace and correlation scores against reference eigenfunctions.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::eigsolve::gauge_fix;
use crate::error::{KdmError, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub subr2: f64,
    /// Principal-angle cosines, descending.
    pub cosines: Vec<f64>,
    pub avg_abs_corr: f64,
    /// `permutation[k]` is the estimated column matched to reference column `k`.
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    /// Columns with undefined correlation (constant).
    pub flagged: Vec<usize>,
}

/// Largest `r` handled by exhaustive assignment.
pub const MAX_ASSIGN: usize = 8;

fn orthonormalized(m: &Mat) -> Result<Mat> {
    gauge_fix(m).into_full_rank(m.ncols())
}

/// Mean squared principal-angle cosine and the cosines themselves.
pub fn subr2(phi: &Mat, phi_star: &Mat) -> Result<(f64, Vec<f64>)> {
    if phi.shape() != phi_star.shape() {
        return Err(KdmError::Shape(format!("{:?} vs {:?}", phi.shape(), phi_star.shape())));
    }
    let a = orthonormalized(phi)?;
    let b = orthonormalized(phi_star)?;
    let n = phi.nrows() as f64;
    let r = phi.ncols();
    let m = a.transpose() * &b / n;
    let score = (m.norm_squared() / r as f64).clamp(0.0, 1.0);
    let mut cos: Vec<f64> = m.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    Ok((score, cos))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Exact maximum-|correlation| matching by enumerating permutations.
pub fn align_and_corr(phi: &Mat, phi_star: &Mat) -> Result<(f64, Vec<usize>, Vec<f64>, Vec<usize>)> {
    if phi.shape() != phi_star.shape() {
        return Err(KdmError::Shape(format!("{:?} vs {:?}", phi.shape(), phi_star.shape())));
    }
    let r = phi.ncols();
    if r > MAX_ASSIGN {
        return Err(KdmError::InvalidParameter(format!("assignment supports r <= {MAX_ASSIGN}")));
    }
    let mut flagged = Vec::new();
    let mut corr = Mat::zeros(r, r);
    for k in 0..r {
        for j in 0..r {
            match pearson(phi_star.column(k).as_slice(), phi.column(j).as_slice()) {
                Some(c) => corr[(k, j)] = c,
                None => {
                    if !flagged.contains(&j) && phi.column(j).iter().all(|&v| v == phi[(0, j)]) {
                        flagged.push(j);
                    }
                }
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, (0..r).collect::<Vec<_>>());
    for perm in (0..r).permutations(r) {
        let s: f64 = perm.iter().enumerate().map(|(k, &j)| corr[(k, j)].abs()).sum();
        if s > best.0 + 1e-15 {
            best = (s, perm);
        }
    }
    let perm = best.1;
    let signs = perm.iter().enumerate().map(|(k, &j)| if corr[(k, j)] < 0.0 { -1.0 } else { 1.0 }).collect();
    let avg = if r == 0 { 0.0 } else { best.0 / r as f64 };
    flagged.sort_unstable();
    Ok((avg, perm, signs, flagged))
}

pub fn evaluate(phi: &Mat, phi_star: &Mat) -> Result<MetricReport> {
    let (s, cosines) = subr2(phi, phi_star)?;
    let (avg_abs_corr, permutation, signs, flagged) = align_and_corr(phi, phi_star)?;
    Ok(MetricReport { subr2: s, cosines, avg_abs_corr, permutation, signs, flagged })
}
