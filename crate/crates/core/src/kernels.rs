//! Stationary kernel families in closed form, Gaussian derivative identities,
//! and the floored softmax used for mixture weights.

use serde::{Deserialize, Serialize};

use crate::error::{KdmError, Result};
use crate::linalg::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
    Matern32,
    Matern52,
    RatQuad2,
    RatQuad5,
}

impl KernelFamily {
    /// Dictionary order used for CV grids and tie-breaking.
    pub const ALL: [KernelFamily; 6] = [
        KernelFamily::Gaussian,
        KernelFamily::Laplacian,
        KernelFamily::Matern32,
        KernelFamily::Matern52,
        KernelFamily::RatQuad2,
        KernelFamily::RatQuad5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplacian => "laplacian",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::RatQuad2 => "ratquad2",
            KernelFamily::RatQuad5 => "ratquad5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap()
    }

    /// Families whose anisotropic (diagonal) bandwidth is supported.
    pub fn allows_anisotropic(self) -> bool {
        matches!(self, KernelFamily::Gaussian | KernelFamily::Matern32)
    }

    /// Profile `k(ρ)` for radial families, with ρ = ‖r/σ‖.
    fn radial(self, rho2: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-0.5 * rho2).exp(),
            KernelFamily::Matern32 => {
                let s = (3.0 * rho2).sqrt();
                (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = (5.0 * rho2).sqrt();
                (1.0 + s + 5.0 * rho2 / 3.0) * (-s).exp()
            }
            KernelFamily::RatQuad2 => (1.0 + rho2 / 4.0).powi(-2),
            KernelFamily::RatQuad5 => (1.0 + rho2 / 10.0).powi(-5),
            KernelFamily::Laplacian => unreachable!("laplacian is not radial"),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Iso(f64),
    Diag(Vec<f64>),
}

impl Bandwidth {
    /// Bandwidth along coordinate `j`.
    pub fn at(&self, j: usize) -> f64 {
        match self {
            Bandwidth::Iso(s) => *s,
            Bandwidth::Diag(v) => v[j],
        }
    }

    /// Scalar summary: the value itself, or the geometric mean of a diagonal.
    pub fn scale(&self) -> f64 {
        match self {
            Bandwidth::Iso(s) => *s,
            Bandwidth::Diag(v) => (v.iter().map(|s| s.ln()).sum::<f64>() / v.len() as f64).exp(),
        }
    }

    pub fn is_iso(&self) -> bool {
        matches!(self, Bandwidth::Iso(_))
    }
}

#[derive(Deserialize)]
struct RawSpec {
    family: KernelFamily,
    sigma: Bandwidth,
}

/// A kernel family with a validated bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma: Bandwidth,
}

impl TryFrom<RawSpec> for KernelSpec {
    type Error = KdmError;
    fn try_from(raw: RawSpec) -> Result<Self> {
        match raw.sigma {
            Bandwidth::Iso(s) => KernelSpec::iso(raw.family, s),
            Bandwidth::Diag(v) => KernelSpec::diag(raw.family, v),
        }
    }
}

fn check_sigma(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(KdmError::InvalidBandwidth(format!("{s}")))
    }
}

impl KernelSpec {
    pub fn iso(family: KernelFamily, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { family, sigma: Bandwidth::Iso(sigma) })
    }

    pub fn diag(family: KernelFamily, sigma: Vec<f64>) -> Result<Self> {
        if !family.allows_anisotropic() {
            return Err(KdmError::UnsupportedFamily(format!(
                "{family} does not take an anisotropic bandwidth"
            )));
        }
        if sigma.is_empty() {
            return Err(KdmError::InvalidBandwidth("empty bandwidth vector".into()));
        }
        for &s in &sigma {
            check_sigma(s)?;
        }
        Ok(Self { family, sigma: Bandwidth::Diag(sigma) })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::iso(KernelFamily::Gaussian, sigma)
    }

    /// Check compatibility with ambient dimension `d`.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        if let Bandwidth::Diag(v) = &self.sigma {
            if v.len() != d {
                return Err(KdmError::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        Ok(())
    }

    /// Kernel value without dimension checks.
    pub(crate) fn eval_raw(&self, x: &[f64], z: &[f64]) -> f64 {
        if self.family == KernelFamily::Laplacian {
            let l1: f64 = x
                .iter()
                .zip(z)
                .enumerate()
                .map(|(j, (a, b))| (a - b).abs() / self.sigma.at(j))
                .sum();
            return (-l1).exp();
        }
        let rho2: f64 = x
            .iter()
            .zip(z)
            .enumerate()
            .map(|(j, (a, b))| {
                let t = (a - b) / self.sigma.at(j);
                t * t
            })
            .sum();
        self.family.radial(rho2)
    }

    fn require_gaussian(&self) -> Result<()> {
        if self.family == KernelFamily::Gaussian {
            Ok(())
        } else {
            Err(KdmError::UnsupportedFamily(format!(
                "{} has no analytic derivative path here; use random features",
                self.family
            )))
        }
    }
}

fn check_pair(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<()> {
    if x.len() != z.len() {
        return Err(KdmError::DimensionMismatch { expected: x.len(), got: z.len() });
    }
    spec.check_dim(x.len())
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    check_pair(spec, x, z)?;
    Ok(spec.eval_raw(x, z))
}

/// `∇_x k(x,z) = −(r_j/σ_j²) k(x,z)` with `r = x − z`.
pub fn grad_kernel_gaussian(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    spec.require_gaussian()?;
    check_pair(spec, x, z)?;
    let k = spec.eval_raw(x, z);
    Ok((0..x.len())
        .map(|j| {
            let s = spec.sigma.at(j);
            -(x[j] - z[j]) / (s * s) * k
        })
        .collect())
}

/// `Δ_x k(x,z) = Σ_j (r_j²/σ_j⁴ − 1/σ_j²) k(x,z)`.
pub fn laplacian_kernel_gaussian(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    spec.require_gaussian()?;
    check_pair(spec, x, z)?;
    let k = spec.eval_raw(x, z);
    let c: f64 = (0..x.len())
        .map(|j| {
            let s2 = spec.sigma.at(j).powi(2);
            let r = x[j] - z[j];
            r * r / (s2 * s2) - 1.0 / s2
        })
        .sum();
    Ok(c * k)
}

/// Cross-Gram `K_{im} = k(x_i, z_m)`.
pub fn gram(spec: &KernelSpec, x: &Mat, z: &Mat) -> Result<Mat> {
    if x.ncols() != z.ncols() {
        return Err(KdmError::DimensionMismatch { expected: x.ncols(), got: z.ncols() });
    }
    spec.check_dim(x.ncols())?;
    let xr: Vec<Vec<f64>> = (0..x.nrows()).map(|i| crate::linalg::row(x, i)).collect();
    let zr: Vec<Vec<f64>> = (0..z.nrows()).map(|i| crate::linalg::row(z, i)).collect();
    Ok(Mat::from_fn(x.nrows(), z.nrows(), |i, m| spec.eval_raw(&xr[i], &zr[m])))
}

/// Point on the floored simplex with its softmax preimage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub u: Vec<f64>,
    pub beta: Vec<f64>,
    pub floor: f64,
}

/// Default softmax floor.
pub const SOFTMAX_FLOOR: f64 = 0.01;

fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl MixtureWeights {
    /// `β = (1−τ)·softmax(u) + τ/L`.
    pub fn from_u(u: &[f64], tau: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(KdmError::InvalidParameter(format!("softmax floor {tau} not in [0,1)")));
        }
        if u.is_empty() {
            return Err(KdmError::InvalidParameter("empty mixture".into()));
        }
        let l = u.len() as f64;
        let beta = softmax(u).into_iter().map(|s| (1.0 - tau) * s + tau / l).collect();
        Ok(Self { u: u.to_vec(), beta, floor: tau })
    }

    pub fn uniform(l: usize, tau: f64) -> Result<Self> {
        Self::from_u(&vec![0.0; l], tau)
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// Jacobian `∂β_l/∂u_m = (1−τ) s_l (δ_lm − s_m)`.
    pub fn jacobian(&self) -> Mat {
        let s = softmax(&self.u);
        let l = s.len();
        Mat::from_fn(l, l, |a, b| {
            let delta = if a == b { 1.0 } else { 0.0 };
            (1.0 - self.floor) * s[a] * (delta - s[b])
        })
    }

    /// Pull a gradient in β back to u.
    pub fn pullback(&self, grad_beta: &[f64]) -> Vec<f64> {
        let g = Vector::from_column_slice(grad_beta);
        (self.jacobian().transpose() * g).iter().copied().collect()
    }
}
