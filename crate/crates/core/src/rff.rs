//! Random Fourier feature bases.
//!
//! Frequencies are stored as unit-bandwidth draws and divided by the
//! bandwidth per coordinate, so one draw serves every σ on a grid and every
//! anisotropic rescaling.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Cauchy, ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KdmError, Result};
use crate::kernels::{Bandwidth, KernelFamily, KernelSpec};
use crate::linalg::{Mat, Vector};

#[derive(Debug, Clone)]
pub struct RffBasis {
    pub spec: KernelSpec,
    pub p_rff: usize,
    pub d: usize,
    pub seed: u64,
    /// Unit-bandwidth frequencies, p_rff × d.
    raw: Mat,
    /// Frequencies at the spec's bandwidth, p_rff × d.
    w: Mat,
    /// Phases in [0, 2π).
    b: Vector,
}

#[derive(Serialize, Deserialize)]
struct BasisRecord {
    seed: u64,
    family: KernelFamily,
    sigma: Bandwidth,
    p_rff: usize,
    d: usize,
}

impl Serialize for RffBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BasisRecord {
            seed: self.seed,
            family: self.spec.family,
            sigma: self.spec.sigma.clone(),
            p_rff: self.p_rff,
            d: self.d,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RffBasis {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let rec = BasisRecord::deserialize(de)?;
        let spec = match rec.sigma {
            Bandwidth::Iso(s) => KernelSpec::iso(rec.family, s),
            Bandwidth::Diag(v) => KernelSpec::diag(rec.family, v),
        }
        .map_err(serde::de::Error::custom)?;
        sample_basis(&spec, rec.p_rff, rec.d, rec.seed).map_err(serde::de::Error::custom)
    }
}

fn unit_frequency<R: Rng>(family: KernelFamily, d: usize, rng: &mut R) -> Vec<f64> {
    let normals = |rng: &mut R| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    match family {
        KernelFamily::Gaussian => normals(rng),
        KernelFamily::Laplacian => {
            let c = Cauchy::new(0.0, 1.0).unwrap();
            (0..d).map(|_| c.sample(rng)).collect()
        }
        KernelFamily::Matern32 | KernelFamily::Matern52 => {
            let df = if family == KernelFamily::Matern32 { 3.0 } else { 5.0 };
            let z = normals(rng);
            let g: f64 = ChiSquared::new(df).unwrap().sample(rng) / df;
            let s = 1.0 / g.sqrt();
            z.into_iter().map(|v| v * s).collect()
        }
        KernelFamily::RatQuad2 | KernelFamily::RatQuad5 => {
            let alpha = if family == KernelFamily::RatQuad2 { 2.0 } else { 5.0 };
            let z = normals(rng);
            let tau: f64 = Gamma::new(alpha, 1.0 / alpha).unwrap().sample(rng);
            let s = tau.sqrt();
            z.into_iter().map(|v| v * s).collect()
        }
    }
}

fn scaled(raw: &Mat, sigma: &Bandwidth) -> Mat {
    Mat::from_fn(raw.nrows(), raw.ncols(), |m, j| raw[(m, j)] / sigma.at(j))
}

/// Draw a basis from the family's spectral measure.
pub fn sample_basis(spec: &KernelSpec, p_rff: usize, d: usize, seed: u64) -> Result<RffBasis> {
    if p_rff == 0 || d == 0 {
        return Err(KdmError::InvalidParameter("p_rff and d must be positive".into()));
    }
    spec.check_dim(d)?;
    let mut rng = crate::seed::rng(seed);
    let mut raw = Mat::zeros(p_rff, d);
    let mut b = Vector::zeros(p_rff);
    for m in 0..p_rff {
        for (j, v) in unit_frequency(spec.family, d, &mut rng).into_iter().enumerate() {
            raw[(m, j)] = v;
        }
        b[m] = rng.random_range(0.0..2.0 * PI);
    }
    let w = scaled(&raw, &spec.sigma);
    Ok(RffBasis { spec: spec.clone(), p_rff, d, seed, raw, w, b })
}

impl RffBasis {
    /// Basis with explicit frequencies and phases (seed-free; not reproducible from JSON).
    pub fn from_parts(spec: KernelSpec, w: Mat, b: Vector) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(KdmError::DimensionMismatch { expected: w.nrows(), got: b.len() });
        }
        spec.check_dim(w.ncols())?;
        let raw = Mat::from_fn(w.nrows(), w.ncols(), |m, j| w[(m, j)] * spec.sigma.at(j));
        Ok(Self { p_rff: w.nrows(), d: w.ncols(), seed: 0, raw, w, b, spec })
    }

    pub fn frequencies(&self) -> &Mat {
        &self.w
    }

    pub fn phases(&self) -> &Vector {
        &self.b
    }

    fn check(&self, x: &Mat) -> Result<()> {
        if x.ncols() != self.d {
            return Err(KdmError::DimensionMismatch { expected: self.d, got: x.ncols() });
        }
        Ok(())
    }

    fn args(&self, x: &Mat) -> Mat {
        let mut a = x * self.w.transpose();
        for mut row in a.row_iter_mut() {
            row += self.b.transpose();
        }
        a
    }

    fn amp(&self) -> f64 {
        (2.0 / self.p_rff as f64).sqrt()
    }

    /// `S_{im} = √(2/p)·cos(w_m·x_i + b_m)`.
    pub fn features(&self, x: &Mat) -> Result<Mat> {
        self.check(x)?;
        let c = self.amp();
        Ok(self.args(x).map(|t| c * t.cos()))
    }

    /// `D_{(i·d+j),m} = −√(2/p)·sin(w_m·x_i + b_m)·(w_m)_j`.
    pub fn feature_derivatives(&self, x: &Mat) -> Result<Mat> {
        self.check(x)?;
        let c = self.amp();
        let s = self.args(x).map(|t| -c * t.sin());
        let (n, d, p) = (x.nrows(), self.d, self.p_rff);
        let mut out = Mat::zeros(n * d, p);
        for m in 0..p {
            for i in 0..n {
                let si = s[(i, m)];
                for j in 0..d {
                    out[(i * d + j, m)] = si * self.w[(m, j)];
                }
            }
        }
        Ok(out)
    }

    /// Features together with their derivatives, sharing one pass over `x·Wᵀ`.
    pub fn features_and_derivatives(&self, x: &Mat) -> Result<(Mat, Mat)> {
        self.check(x)?;
        let c = self.amp();
        let a = self.args(x);
        let (n, d, p) = (x.nrows(), self.d, self.p_rff);
        let s = a.map(|t| c * t.cos());
        let mut dm = Mat::zeros(n * d, p);
        for m in 0..p {
            for i in 0..n {
                let si = -c * a[(i, m)].sin();
                for j in 0..d {
                    dm[(i * d + j, m)] = si * self.w[(m, j)];
                }
            }
        }
        Ok((s, dm))
    }

    /// Laplacians of each feature: `−‖w_m‖²·φ_m(x_i)`.
    pub fn feature_laplacians(&self, x: &Mat) -> Result<Mat> {
        let mut s = self.features(x)?;
        for m in 0..self.p_rff {
            let n2 = self.w.row(m).norm_squared();
            s.column_mut(m).scale_mut(-n2);
        }
        Ok(s)
    }

    /// Same draw at a new isotropic bandwidth.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        let spec = KernelSpec::iso(self.spec.family, sigma)?;
        let w = scaled(&self.raw, &spec.sigma);
        Ok(Self { spec, w, ..self.clone() })
    }
}

/// Rescale coordinate `j` of every frequency to bandwidth `σ_j`.
pub fn rescale_anisotropic(basis: &RffBasis, sigma: &[f64]) -> Result<RffBasis> {
    if !basis.spec.family.allows_anisotropic() {
        return Err(KdmError::UnsupportedFamily(format!(
            "{} cannot be rescaled per coordinate",
            basis.spec.family
        )));
    }
    if sigma.len() != basis.d {
        return Err(KdmError::DimensionMismatch { expected: basis.d, got: sigma.len() });
    }
    let spec = KernelSpec::diag(basis.spec.family, sigma.to_vec())?;
    let w = scaled(&basis.raw, &spec.sigma);
    Ok(RffBasis { spec, w, ..basis.clone() })
}
