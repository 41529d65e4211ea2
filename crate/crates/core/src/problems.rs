//! Synthetic benchmark problems with reference eigenfunctions.
//!
//! Samples are drawn i.i.d. from the stationary law of each diffusion:
//! exact Gaussians for OU, inverse-CDF on a fine grid for double wells.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigsolve::gauge_fix;
use crate::error::{KdmError, Result};
use crate::linalg::Mat;

/// Double-well grid: nodes and domain.
pub const DW_NODES: usize = 4000;
pub const DW_DOMAIN: (f64, f64) = (-2.5, 2.5);
/// Linear tilt of the asymmetric double well.
pub const DW_TILT: f64 = 0.25;
/// Variance of MD-like fast coordinates.
pub const FAST_VARIANCE: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Problem {
    /// Ornstein-Uhlenbeck with drift `−diag(α)x` and diffusion `√2`.
    Ou { alphas: Vec<f64> },
    DoubleWell { asymmetric: bool },
    Circle { noise: f64 },
    MdLike { d_slow: usize, d_fast: usize },
}

impl Problem {
    pub fn ou2d(alpha_y: f64) -> Self {
        Problem::Ou { alphas: vec![1.0, alpha_y] }
    }

    pub fn ou3d() -> Self {
        Problem::Ou { alphas: vec![1.0, 4.0, 16.0] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Ou { alphas } => alphas.len(),
            Problem::DoubleWell { .. } => 1,
            Problem::Circle { .. } => 2,
            Problem::MdLike { d_slow, d_fast } => d_slow + d_fast,
        }
    }

    /// Number of reference modes.
    pub fn rank(&self) -> usize {
        match self {
            Problem::MdLike { d_slow, .. } => *d_slow,
            _ => 4,
        }
    }

    /// Default Tikhonov weight.
    pub fn lambda(&self) -> f64 {
        match self {
            Problem::Circle { .. } => 0.005,
            _ => 0.01,
        }
    }

    /// Short label used in CSV rows.
    pub fn label(&self) -> String {
        match self {
            Problem::Ou { alphas } if alphas.len() == 1 => format!("ou1d_a{}", alphas[0]),
            Problem::Ou { alphas } if alphas.len() == 2 && alphas[0] == 1.0 => {
                format!("ou2d_a{}", alphas[1])
            }
            Problem::Ou { alphas } if alphas == &[1.0, 4.0, 16.0] => "ou3d".into(),
            Problem::Ou { alphas } => format!("ou{}d", alphas.len()),
            Problem::DoubleWell { asymmetric: false } => "dw1d".into(),
            Problem::DoubleWell { asymmetric: true } => "asym_dw".into(),
            Problem::Circle { .. } => "circle".into(),
            Problem::MdLike { d_slow, d_fast } => format!("mdlike_d{}", d_slow + d_fast),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Problem::Ou { alphas } => {
                if alphas.is_empty() || alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(KdmError::InvalidParameter("OU rates must be positive".into()));
                }
            }
            Problem::Circle { noise } => {
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(KdmError::InvalidParameter("noise must be non-negative".into()));
                }
            }
            Problem::MdLike { d_slow, .. } => {
                if *d_slow == 0 {
                    return Err(KdmError::InvalidParameter("d_slow must be at least 1".into()));
                }
            }
            Problem::DoubleWell { .. } => {}
        }
        Ok(())
    }

    /// `∇V` for problems with a known potential.
    pub fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Problem::Ou { alphas } => Ok(x.iter().zip(alphas).map(|(v, a)| a * v).collect()),
            Problem::DoubleWell { asymmetric } => {
                let tilt = if *asymmetric { DW_TILT } else { 0.0 };
                Ok(vec![x[0] * (x[0] * x[0] - 1.0) + tilt])
            }
            _ => Err(KdmError::NoGenerator(self.label())),
        }
    }
}

pub fn dw_potential(x: f64, asymmetric: bool) -> f64 {
    let tilt = if asymmetric { DW_TILT } else { 0.0 };
    (x * x - 1.0).powi(2) / 4.0 + tilt * x
}

/// Probabilists' Hermite polynomials `He_0..He_n` at `y`.
pub fn hermite_all(n: usize, y: f64) -> Vec<f64> {
    let mut h = vec![1.0; n + 1];
    if n >= 1 {
        h[1] = y;
    }
    for k in 1..n {
        h[k + 1] = y * h[k] - k as f64 * h[k - 1];
    }
    h
}

pub fn hermite(n: usize, y: f64) -> f64 {
    hermite_all(n, y)[n]
}

/// First `r` non-constant OU multi-indices, ordered by `Σ n_j α_j`, ties lexicographic.
pub fn ou_multi_indices(alphas: &[f64], r: usize) -> Vec<(Vec<usize>, f64)> {
    let d = alphas.len();
    let amin = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    // r one-dimensional excitations of the slowest coordinate bound the r-th eigenvalue.
    let bound = r as f64 * amin + 1e-9;
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let e: f64 = idx.iter().zip(alphas).map(|(&n, a)| n as f64 * a).sum();
        if e <= bound && idx.iter().any(|&n| n > 0) {
            out.push((idx.clone(), e));
        }
        let mut j = 0;
        loop {
            if j == d {
                out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
                out.truncate(r);
                return out;
            }
            idx[j] += 1;
            let e: f64 = idx.iter().zip(alphas).map(|(&n, a)| n as f64 * a).sum();
            if e <= bound {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Value, gradient and Laplacian of `Π_j He_{n_j}(√α_j x_j)`.
pub fn ou_mode(alphas: &[f64], index: &[usize], x: &[f64]) -> (f64, Vec<f64>, f64) {
    let d = alphas.len();
    let mut h = Vec::with_capacity(d);
    let mut dh = Vec::with_capacity(d);
    let mut ddh = Vec::with_capacity(d);
    for j in 0..d {
        let s = alphas[j].sqrt();
        let n = index[j];
        let all = hermite_all(n.max(2), s * x[j]);
        h.push(all[n]);
        dh.push(if n >= 1 { n as f64 * all[n - 1] * s } else { 0.0 });
        ddh.push(if n >= 2 { (n * (n - 1)) as f64 * all[n - 2] * alphas[j] } else { 0.0 });
    }
    let prod_except = |skip: usize| -> f64 { (0..d).filter(|&k| k != skip).map(|k| h[k]).product() };
    let value: f64 = h.iter().product();
    let grad: Vec<f64> = (0..d).map(|j| dh[j] * prod_except(j)).collect();
    let lap: f64 = (0..d).map(|j| ddh[j] * prod_except(j)).sum();
    (value, grad, lap)
}

/// 1D reversible Langevin generator `f'' − V'f'` on a uniform grid.
///
/// Flux form with midpoint weights `π_{i±1/2} = exp(−V(x_{i±1/2}))` and
/// no-flux ends: self-adjoint in `Σ π_i f_i g_i`, rows sum to zero.
#[derive(Debug, Clone)]
pub struct GridGenerator {
    pub nodes: Vec<f64>,
    pub h: f64,
    /// Node weights `exp(−V(x_i))`.
    pub weights: Vec<f64>,
    /// Midpoint weights, length `n − 1`.
    pub flux: Vec<f64>,
}

impl GridGenerator {
    pub fn new(potential: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let weights = nodes.iter().map(|&x| (-potential(x)).exp()).collect();
        let flux = (0..n - 1).map(|i| (-potential(lo + h * (i as f64 + 0.5))).exp()).collect();
        Self { nodes, h, weights, flux }
    }

    pub fn double_well(asymmetric: bool) -> Self {
        Self::new(|x| dw_potential(x, asymmetric), DW_DOMAIN.0, DW_DOMAIN.1, DW_NODES)
    }

    pub fn ou1d(alpha: f64, n: usize) -> Self {
        let half = 7.0 / alpha.sqrt();
        Self::new(|x| 0.5 * alpha * x * x, -half, half, n)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply the generator to grid values.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.len();
        let h2 = self.h * self.h;
        (0..n)
            .map(|i| {
                let mut acc = 0.0;
                if i + 1 < n {
                    acc += self.flux[i] * (f[i + 1] - f[i]);
                }
                if i > 0 {
                    acc -= self.flux[i - 1] * (f[i] - f[i - 1]);
                }
                acc / (h2 * self.weights[i])
            })
            .collect()
    }

    /// Symmetric tridiagonal of `−G` in `√π`-scaled coordinates: (diagonal, off-diagonal).
    pub fn symmetric_negated(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let h2 = self.h * self.h;
        let diag = (0..n)
            .map(|i| {
                let l = if i > 0 { self.flux[i - 1] } else { 0.0 };
                let r = if i + 1 < n { self.flux[i] } else { 0.0 };
                (l + r) / (h2 * self.weights[i])
            })
            .collect();
        let off = (0..n - 1)
            .map(|i| -self.flux[i] / (h2 * (self.weights[i] * self.weights[i + 1]).sqrt()))
            .collect();
        (diag, off)
    }

    /// Smallest `k` eigenvalues of `−G` and their eigenfunctions on the grid
    /// (columns normalized so `Σ π_i f_i² / Σ π_i = 1`).
    pub fn eigenpairs(&self, k: usize) -> (Vec<f64>, Mat) {
        let (a, b) = self.symmetric_negated();
        let (vals, vecs) = tridiag_smallest(&a, &b, k);
        let total: f64 = self.weights.iter().sum();
        let mut f = Mat::zeros(self.len(), k);
        for c in 0..k {
            let mut sign = 0.0;
            for i in 0..self.len() {
                f[(i, c)] = vecs[(i, c)] / self.weights[i].sqrt() * total.sqrt();
                if sign == 0.0 && f[(i, c)].abs() > 1e-8 {
                    sign = f[(i, c)].signum();
                }
            }
            // Fix the sign so the right end is positive.
            let last = f[(self.len() - 1, c)];
            if last < 0.0 {
                f.column_mut(c).neg_mut();
            }
        }
        (vals, f)
    }

    /// Linear interpolation of grid values at `x` (clamped to the domain).
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = self.len();
        let t = ((x - self.nodes[0]) / self.h).clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        let w = t - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    /// Sample-based generator: interpolate columns of `phi` (given at sorted or
    /// unsorted 1D samples `x`) onto the grid, apply `G`, interpolate back.
    pub fn apply_interpolated(&self, x: &[f64], phi: &Mat) -> Result<Mat> {
        if x.len() != phi.nrows() {
            return Err(KdmError::DimensionMismatch { expected: x.len(), got: phi.nrows() });
        }
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let mut out = Mat::zeros(phi.nrows(), phi.ncols());
        for c in 0..phi.ncols() {
            let ys: Vec<f64> = order.iter().map(|&i| phi[(i, c)]).collect();
            let grid: Vec<f64> = self.nodes.iter().map(|&g| interp_sorted(&xs, &ys, g)).collect();
            let gf = self.apply(&grid);
            for i in 0..x.len() {
                out[(i, c)] = self.interpolate(&gf, x[i]);
            }
        }
        Ok(out)
    }
}

fn interp_sorted(xs: &[f64], ys: &[f64], t: f64) -> f64 {
    if t <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if t >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= t);
    let (x0, x1) = (xs[j - 1], xs[j]);
    if x1 == x0 {
        return ys[j];
    }
    let w = (t - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - w) + ys[j] * w
}

/// Number of eigenvalues of the symmetric tridiagonal `(a, b)` below `x`.
fn sturm_count(a: &[f64], b: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = a[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..a.len() {
        let prev = if q == 0.0 { f64::MIN_POSITIVE } else { q };
        q = a[i] - x - b[i - 1] * b[i - 1] / prev;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Solve `(T − s I) y = rhs` by the Thomas algorithm.
fn tridiag_solve(a: &[f64], b: &[f64], s: f64, rhs: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = a[0] - s;
    if piv == 0.0 {
        piv = f64::MIN_POSITIVE.sqrt();
    }
    c[0] = if n > 1 { b[0] / piv } else { 0.0 };
    d[0] = rhs[0] / piv;
    for i in 1..n {
        let mut m = a[i] - s - b[i - 1] * c[i - 1];
        if m == 0.0 {
            m = f64::MIN_POSITIVE.sqrt();
        }
        c[i] = if i + 1 < n { b[i] / m } else { 0.0 };
        d[i] = (rhs[i] - b[i - 1] * d[i - 1]) / m;
    }
    let mut y = vec![0.0; n];
    y[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        y[i] = d[i] - c[i] * y[i + 1];
    }
    y
}

/// Smallest `k` eigenpairs of a symmetric tridiagonal matrix: Sturm bisection
/// for the eigenvalues, inverse iteration for unit eigenvectors.
pub fn tridiag_smallest(a: &[f64], b: &[f64], k: usize) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { b[i - 1].abs() } else { 0.0 } + if i + 1 < n { b[i].abs() } else { 0.0 };
        lo = lo.min(a[i] - r);
        hi = hi.max(a[i] + r);
    }
    let mut vals = Vec::with_capacity(k);
    for m in 0..k {
        let (mut l, mut u) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (l + u);
            if mid <= l || mid >= u {
                break;
            }
            if sturm_count(a, b, mid) > m {
                u = mid;
            } else {
                l = mid;
            }
        }
        vals.push(0.5 * (l + u));
    }
    let mut vecs = Mat::zeros(n, k);
    let mut prev: Vec<Vec<f64>> = Vec::new();
    for (m, &lam) in vals.iter().enumerate() {
        let shift = lam + 1e-12 * (1.0 + lam.abs());
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919 + m * 104729) % 1000) as f64 / 1e4).collect();
        for _ in 0..4 {
            v = tridiag_solve(a, b, shift, &v);
            for q in &prev {
                let c: f64 = q.iter().zip(&v).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
            let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
        }
        for i in 0..n {
            vecs[(i, m)] = v[i];
        }
        prev.push(v);
    }
    (vals, vecs)
}

/// Inverse-CDF sampler for a 1D density `∝ exp(−V)` tabulated on a grid.
#[derive(Debug, Clone)]
pub struct GridSampler {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridSampler {
    pub fn new(potential: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let dens: Vec<f64> = nodes.iter().map(|&x| (-potential(x)).exp()).collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
        }
        let total = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { nodes, cdf }
    }

    pub fn double_well(asymmetric: bool) -> Self {
        Self::new(|x| dw_potential(x, asymmetric), DW_DOMAIN.0, DW_DOMAIN.1, DW_NODES)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        interp_sorted(&self.nodes, &self.cdf, x)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let j = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.nodes[j - 1] + w * (self.nodes[j] - self.nodes[j - 1])
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random_range(0.0..1.0))
    }
}

/// Samples, gauge-fixed reference eigenfunctions, and provenance.
#[derive(Debug, Clone)]
pub struct BenchmarkDataset {
    pub problem: Problem,
    pub seed: u64,
    pub x: Mat,
    pub phi_star: Mat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub problem: String,
    pub params: Problem,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
}

impl BenchmarkDataset {
    pub fn generate(problem: &Problem, n: usize, seed: u64) -> Result<Self> {
        problem.validate()?;
        if n < 2 {
            return Err(KdmError::InvalidParameter("need at least 2 samples".into()));
        }
        let mut rng = crate::seed::rng(crate::seed::stream_seed(seed, "data", &[]));
        let d = problem.dim();
        let (x, raw_ref) = match problem {
            Problem::Ou { alphas } => {
                let x = Mat::from_fn(n, d, |_, j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z / alphas[j].sqrt()
                });
                let modes = ou_multi_indices(alphas, problem.rank());
                let phi = Mat::from_fn(n, modes.len(), |i, k| {
                    let xi: Vec<f64> = x.row(i).iter().copied().collect();
                    ou_mode(alphas, &modes[k].0, &xi).0
                });
                (x, phi)
            }
            Problem::DoubleWell { asymmetric } => {
                let sampler = GridSampler::double_well(*asymmetric);
                let x = Mat::from_fn(n, 1, |_, _| sampler.sample(&mut rng));
                let grid = GridGenerator::double_well(*asymmetric);
                let (_, f) = grid.eigenpairs(problem.rank() + 1);
                let phi = Mat::from_fn(n, problem.rank(), |i, k| {
                    grid.interpolate(f.column(k + 1).as_slice(), x[(i, 0)])
                });
                (x, phi)
            }
            Problem::Circle { noise } => {
                let normal = Normal::new(0.0, 1.0).unwrap();
                let mut theta = vec![0.0; n];
                let mut x = Mat::zeros(n, 2);
                for i in 0..n {
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    theta[i] = t;
                    let e0: f64 = normal.sample(&mut rng);
                    let e1: f64 = normal.sample(&mut rng);
                    x[(i, 0)] = t.cos() + noise * e0;
                    x[(i, 1)] = t.sin() + noise * e1;
                }
                let phi = Mat::from_fn(n, 4, |i, k| {
                    let t = theta[i];
                    match k {
                        0 => t.cos(),
                        1 => t.sin(),
                        2 => (2.0 * t).cos(),
                        _ => (2.0 * t).sin(),
                    }
                });
                (x, phi)
            }
            Problem::MdLike { d_slow, .. } => {
                let sampler = GridSampler::double_well(false);
                let fast = Normal::new(0.0, FAST_VARIANCE.sqrt()).unwrap();
                let x = Mat::from_fn(n, d, |_, j| {
                    if j < *d_slow {
                        sampler.sample(&mut rng)
                    } else {
                        fast.sample(&mut rng)
                    }
                });
                let phi = Mat::from_fn(n, *d_slow, |i, j| (3.0 * x[(i, j)]).tanh());
                (x, phi)
            }
        };
        let fixed = gauge_fix(&raw_ref);
        let r = raw_ref.ncols();
        let phi_star = fixed.into_full_rank(r)?;
        Ok(Self { problem: problem.clone(), seed, x, phi_star })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.phi_star.ncols()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            problem: self.problem.label(),
            params: self.problem.clone(),
            seed: self.seed,
            n: self.n(),
            d: self.d(),
        }
    }

    pub fn has_generator(&self) -> bool {
        matches!(self.problem, Problem::Ou { .. } | Problem::DoubleWell { .. })
    }
}

/// Values, gradients and Laplacians of a function expansion at the samples.
#[derive(Debug, Clone)]
pub struct ExpansionEval {
    /// N × r.
    pub values: Mat,
    /// (N·d) × r, row `i·d + j` holds `∂_j φ(x_i)`.
    pub grads: Mat,
    /// N × r.
    pub laplacians: Mat,
}

/// `Gφ = Δφ − ∇V·∇φ` at the samples, termwise on an analytic expansion.
pub fn apply_generator(problem: &Problem, x: &Mat, eval: &ExpansionEval) -> Result<Mat> {
    let (n, d) = x.shape();
    let r = eval.values.ncols();
    if eval.grads.nrows() != n * d || eval.laplacians.nrows() != n {
        return Err(KdmError::Shape("expansion does not match samples".into()));
    }
    let mut out = eval.laplacians.clone();
    for i in 0..n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let gv = problem.grad_potential(&xi)?;
        for k in 0..r {
            let drift: f64 = (0..d).map(|j| gv[j] * eval.grads[(i * d + j, k)]).sum();
            out[(i, k)] -= drift;
        }
    }
    Ok(out)
}

/// `λ̂_k = −⟨φ_k, Gφ_k⟩ / ⟨φ_k, φ_k⟩`.
pub fn rayleigh_eigenvalues(phi: &Mat, gphi: &Mat) -> Result<Vec<f64>> {
    (0..phi.ncols())
        .map(|k| {
            let den = phi.column(k).norm_squared();
            if den == 0.0 {
                return Err(KdmError::DegenerateData(format!("mode {k} is identically zero")));
            }
            Ok(-phi.column(k).dot(&gphi.column(k)) / den)
        })
        .collect()
}
