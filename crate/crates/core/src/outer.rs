//! Variational outer loops over the KDM eigenproblem.
//!
//! `run_vmkl` learns softmax mixture weights over a Gaussian Nyström
//! dictionary; `run_varrff` learns bounded per-coordinate bandwidths for a
//! Matérn-3/2 RFF basis anchored at a cross-validated bandwidth.

use serde::{Deserialize, Serialize};

use crate::eigsolve::{gauge_fix, sign_anchor, solve_nonconstant, EigenSolution, GevpSolution};
use crate::error::{KdmError, Result};
use crate::kernels::{laplacian_kernel_gaussian, KernelFamily, KernelSpec, MixtureWeights, SOFTMAX_FLOOR};
use crate::linalg::{row, Mat};
use crate::operators::{aggregate_mixture, build_nystrom, operator_pair_nystrom, NystromMatrices, NystromParts, OperatorPair, EPS_W};
use crate::problems::{apply_generator, rayleigh_eigenvalues, ExpansionEval, Problem};
use crate::rff::{rescale_anisotropic, sample_basis, RffBasis};

pub fn loss_eig(mu: &[f64]) -> f64 {
    -mu.iter().sum::<f64>()
}

/// Centering, normalization and η-weighted pairwise orthogonality penalties.
pub fn loss_sub(phi_raw: &Mat, eta: f64) -> f64 {
    let (n, r) = phi_raw.shape();
    let nf = n as f64;
    let mut loss = 0.0;
    for k in 0..r {
        let c = phi_raw.column(k);
        loss += (c.sum() / nf).powi(2);
        loss += (c.norm_squared() / nf - 1.0).powi(2);
        for j in k + 1..r {
            loss += eta * (c.dot(&phi_raw.column(j)) / nf).powi(2);
        }
    }
    loss
}

/// `Σ_k a_kᵀ W a_k`.
pub fn loss_rkhs(a: &Mat, w: &Mat) -> f64 {
    (0..a.ncols()).map(|k| a.column(k).dot(&(w * a.column(k)))).sum()
}

/// `(1/N) Σ_k ‖Gφ_k + λ̂_k φ_k‖²` with Rayleigh estimates `λ̂`.
pub fn loss_pde(phi: &Mat, gphi: &Mat) -> Result<(f64, Vec<f64>)> {
    if phi.shape() != gphi.shape() {
        return Err(KdmError::Shape("phi and G·phi differ in shape".into()));
    }
    let lam = rayleigh_eigenvalues(phi, gphi)?;
    let n = phi.nrows() as f64;
    let loss = (0..phi.ncols())
        .map(|k| (gphi.column(k) + phi.column(k) * lam[k]).norm_squared())
        .sum::<f64>()
        / n;
    Ok((loss, lam))
}

/// `∂μ_k/∂β_ℓ = a_kᵀ(∂_ℓΣ̂ − μ_k ∂_ℓL̂_λ)a_k` for simple eigenvalues.
pub fn grad_eig_analytic(
    parts: &[NystromParts],
    mats: &NystromMatrices,
    lambda: f64,
    mu: &[f64],
    a: &Mat,
) -> Result<Mat> {
    for w in mu.windows(2) {
        let gap = (w[0] - w[1]).abs();
        if gap <= 1e-8 * w[0].abs().max(1.0) {
            return Err(KdmError::NearDegenerate(gap));
        }
    }
    let n = mats.c.nrows() as f64;
    let r = a.ncols();
    let ca = &mats.c * a;
    let ja = &mats.j * a;
    let mut g = Mat::zeros(parts.len(), r);
    for (l, p) in parts.iter().enumerate() {
        let cla = &p.c * a;
        let jla = &p.j * a;
        let wla = &p.w * a;
        for k in 0..r {
            let ds = 2.0 * cla.column(k).dot(&ca.column(k)) / n;
            let dl = 2.0 * jla.column(k).dot(&ja.column(k)) / n + lambda * a.column(k).dot(&wla.column(k));
            g[(l, k)] = ds - mu[k] * dl;
        }
    }
    Ok(g)
}

/// Central differences; falls back to a one-sided difference when a probe
/// fails. Returns the gradient and the coordinates that needed the fallback.
pub fn grad_finite_difference<F>(mut f: F, x: &[f64], h: f64) -> (Vec<f64>, Vec<usize>)
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let f0 = f(x).ok();
    let mut g = vec![0.0; x.len()];
    let mut flagged = Vec::new();
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp).ok().filter(|v| v.is_finite());
        let fm = f(&xm).ok().filter(|v| v.is_finite());
        g[j] = match (fp, fm, f0) {
            (Some(p), Some(m), _) => (p - m) / (2.0 * h),
            (Some(p), None, Some(c)) => {
                flagged.push(j);
                (p - c) / h
            }
            (None, Some(m), Some(c)) => {
                flagged.push(j);
                (c - m) / h
            }
            _ => {
                flagged.push(j);
                0.0
            }
        };
    }
    (g, flagged)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: None, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = Some(clip);
        self
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let mut g = grad.to_vec();
        if let Some(c) = self.clip {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > c {
                g.iter_mut().for_each(|v| *v *= c / norm);
            }
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t);
        let b2t = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    SubOnly,
    EigOnly,
    Combined,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterConfig {
    pub tau_eig: f64,
    pub alpha_sub: f64,
    pub gamma_rkhs: f64,
    pub zeta_pde: f64,
    pub rho_reg: f64,
    pub eta: f64,
    pub iters: usize,
    pub lr: f64,
    pub clip: f64,
    pub fd_step: f64,
    pub r: usize,
    pub lambda: f64,
    pub floor: f64,
    pub eps_w: f64,
    pub ablation: Ablation,
}

impl OuterConfig {
    pub fn new(ablation: Ablation, r: usize, lambda: f64) -> Self {
        let (tau, alpha, gamma) = match ablation {
            Ablation::SubOnly => (0.0, 1.0, 0.0),
            Ablation::EigOnly => (1.0, 0.0, 0.0),
            Ablation::Combined | Ablation::Custom => (1.0, 1.0, 1e-3),
        };
        Self {
            tau_eig: tau,
            alpha_sub: alpha,
            gamma_rkhs: gamma,
            zeta_pde: 0.0,
            rho_reg: 0.0,
            eta: 1.0,
            iters: 200,
            lr: 0.05,
            clip: 10.0,
            fd_step: 1e-4,
            r,
            lambda,
            floor: SOFTMAX_FLOOR,
            eps_w: EPS_W,
            ablation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.tau_eig, self.alpha_sub, self.gamma_rkhs, self.zeta_pde, self.rho_reg, self.eta];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(KdmError::InvalidParameter("loss weights must be non-negative".into()));
        }
        let ok = match self.ablation {
            Ablation::SubOnly => self.tau_eig == 0.0 && self.alpha_sub > 0.0,
            Ablation::EigOnly => self.tau_eig > 0.0 && self.alpha_sub == 0.0,
            Ablation::Combined => self.tau_eig > 0.0 && self.alpha_sub > 0.0 && self.gamma_rkhs > 0.0,
            Ablation::Custom => true,
        };
        if !ok {
            return Err(KdmError::InvalidParameter(format!("weights inconsistent with {:?}", self.ablation)));
        }
        if self.r == 0 {
            return Err(KdmError::InvalidParameter("r must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub eig: f64,
    pub sub: f64,
    pub rkhs: f64,
    pub pde: f64,
    pub reg: f64,
}

impl LossComponents {
    pub fn total(&self, cfg: &OuterConfig) -> f64 {
        let mut t = cfg.tau_eig * self.eig + cfg.alpha_sub * self.sub + cfg.gamma_rkhs * self.rkhs;
        if cfg.zeta_pde > 0.0 {
            t += cfg.zeta_pde * self.pde;
        }
        if cfg.rho_reg > 0.0 {
            t += cfg.rho_reg * self.reg;
        }
        t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub components: LossComponents,
    /// β for VMKL, σ for VarRFF.
    pub params: Vec<f64>,
    pub grad_norm: f64,
    pub fd_fallback: bool,
}

/// Precomputed dictionary matrices for the VMKL loop.
pub struct VmklProblem<'a> {
    pub x: &'a Mat,
    pub z: Mat,
    pub parts: Vec<NystromParts>,
    /// Per-kernel `Δ_x k_ℓ(x_i, z_m)`, only when a generator term is active.
    lap_parts: Option<Vec<Mat>>,
    pub problem: Option<Problem>,
}

struct Inner {
    beta: MixtureWeights,
    mats: NystromMatrices,
    sol: GevpSolution,
    raw: Mat,
    comps: LossComponents,
}

impl<'a> VmklProblem<'a> {
    pub fn new(x: &'a Mat, z: Mat, dictionary: &[KernelSpec], problem: Option<Problem>, with_pde: bool) -> Result<Self> {
        if dictionary.is_empty() {
            return Err(KdmError::InvalidParameter("empty dictionary".into()));
        }
        let parts = build_nystrom(dictionary, x, &z)?;
        let lap_parts = if with_pde {
            let p = problem.as_ref().ok_or_else(|| KdmError::NoGenerator("unspecified".into()))?;
            p.grad_potential(&row(x, 0))?;
            let mut v = Vec::with_capacity(dictionary.len());
            for spec in dictionary {
                let mut m = Mat::zeros(x.nrows(), z.nrows());
                for i in 0..x.nrows() {
                    let xi = row(x, i);
                    for j in 0..z.nrows() {
                        m[(i, j)] = laplacian_kernel_gaussian(spec, &xi, &row(&z, j))?;
                    }
                }
                v.push(m);
            }
            Some(v)
        } else {
            None
        };
        Ok(Self { x, z, parts, lap_parts, problem })
    }

    fn evaluate(&self, u: &[f64], cfg: &OuterConfig) -> Result<Inner> {
        let beta = MixtureWeights::from_u(u, cfg.floor)?;
        let mats = aggregate_mixture(&self.parts, &beta, &self.z, cfg.eps_w)?;
        let pair = operator_pair_nystrom(&mats, cfg.lambda, self.x.nrows())?;
        let (sol, raw, _, _) = solve_nonconstant(&pair, &mats.c, cfg.r, 0)?;
        let mu: Vec<f64> = sol.mu.iter().copied().collect();
        let l = beta.len() as f64;
        let mut comps = LossComponents {
            eig: loss_eig(&mu),
            sub: loss_sub(&raw, cfg.eta),
            rkhs: loss_rkhs(&sol.a, &mats.w),
            pde: 0.0,
            reg: beta.beta.iter().map(|b| (b - 1.0 / l).powi(2)).sum(),
        };
        if cfg.zeta_pde > 0.0 {
            comps.pde = self.pde_loss(&beta, &mats, &sol.a, &raw)?;
        }
        if !comps.total(cfg).is_finite() {
            return Err(KdmError::NonFinite("outer objective".into()));
        }
        Ok(Inner { beta, mats, sol, raw, comps })
    }

    fn pde_loss(&self, beta: &MixtureWeights, mats: &NystromMatrices, a: &Mat, raw: &Mat) -> Result<f64> {
        let laps = self.lap_parts.as_ref().ok_or_else(|| KdmError::NoGenerator("generator term not prepared".into()))?;
        let problem = self.problem.as_ref().ok_or_else(|| KdmError::NoGenerator("unspecified".into()))?;
        let mut lap = Mat::zeros(self.x.nrows(), self.z.nrows());
        for (m, b) in laps.iter().zip(&beta.beta) {
            lap += m * *b;
        }
        // Scale each column to unit centered rms; G annihilates constants.
        let n = raw.nrows() as f64;
        let mut scale = Mat::zeros(a.ncols(), a.ncols());
        let mut centered = raw.clone();
        for k in 0..a.ncols() {
            let mean = raw.column(k).mean();
            centered.column_mut(k).add_scalar_mut(-mean);
            let rms = (centered.column(k).norm_squared() / n).sqrt();
            scale[(k, k)] = if rms > 0.0 { 1.0 / rms } else { 0.0 };
        }
        let eval = ExpansionEval { values: raw.clone(), grads: &mats.j * a, laplacians: lap * a };
        let g = apply_generator(problem, self.x, &eval)? * &scale;
        Ok(loss_pde(&(centered * &scale), &g)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct VmklResult {
    pub beta: MixtureWeights,
    pub solution: EigenSolution,
    pub trace: Vec<TraceRow>,
    pub best_iter: usize,
}

fn finish_solution(sol: &GevpSolution, raw: &Mat, anchor: Option<&Mat>) -> EigenSolution {
    let fixed = gauge_fix(raw);
    let mut phi = fixed.phi;
    if let Some(prev) = anchor {
        if prev.shape() == phi.shape() {
            phi = sign_anchor(&phi, prev).map(|(p, _)| p).unwrap_or(phi);
        }
    }
    EigenSolution {
        mu: sol.mu.iter().copied().collect(),
        a: sol.a.clone(),
        rank: fixed.kept.len(),
        phi,
        dropped: None,
        dropped_mu: None,
    }
}

/// Variational multiple kernel learning over softmax mixture weights.
pub fn run_vmkl(vp: &VmklProblem<'_>, cfg: &OuterConfig) -> Result<VmklResult> {
    cfg.validate()?;
    let l = vp.parts.len();
    let mut u = vec![0.0; l];
    let mut adam = Adam::new(l, cfg.lr).with_clip(cfg.clip);
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    let mut best: Option<(f64, usize, MixtureWeights, EigenSolution)> = None;
    let mut anchor: Option<Mat> = None;

    for it in 0..=cfg.iters {
        let inner = vp.evaluate(&u, cfg)?;
        let total = inner.comps.total(cfg);
        let sol = finish_solution(&inner.sol, &inner.raw, anchor.as_ref());
        anchor = Some(sol.phi.clone());
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, it, inner.beta.clone(), sol));
        }
        let mut row = TraceRow {
            iter: it,
            total,
            components: inner.comps,
            params: inner.beta.beta.clone(),
            grad_norm: 0.0,
            fd_fallback: false,
        };
        if it == cfg.iters || l == 1 {
            trace.push(row);
            if l == 1 {
                // A single kernel has nothing to learn; the loop is a no-op.
                continue;
            }
            break;
        }

        let mut grad = vec![0.0; l];
        let mut analytic = cfg.tau_eig > 0.0;
        if analytic {
            let mu: Vec<f64> = inner.sol.mu.iter().copied().collect();
            match grad_eig_analytic(&vp.parts, &inner.mats, cfg.lambda, &mu, &inner.sol.a) {
                Ok(dmu) => {
                    let gb: Vec<f64> = (0..l).map(|i| -cfg.tau_eig * dmu.row(i).sum()).collect();
                    grad = inner.beta.pullback(&gb);
                }
                Err(_) => {
                    analytic = false;
                    row.fd_fallback = true;
                }
            }
        }
        let rest = |uu: &[f64]| -> Result<f64> {
            let e = vp.evaluate(uu, cfg)?;
            let mut t = e.comps.total(cfg);
            if analytic {
                t -= cfg.tau_eig * e.comps.eig;
            }
            Ok(t)
        };
        let needs_fd = cfg.alpha_sub > 0.0
            || cfg.gamma_rkhs > 0.0
            || cfg.zeta_pde > 0.0
            || cfg.rho_reg > 0.0
            || !analytic;
        if needs_fd {
            let (g, flagged) = grad_finite_difference(rest, &u, cfg.fd_step);
            row.fd_fallback |= !flagged.is_empty();
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        row.grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        trace.push(row);
        adam.step(&mut u, &grad);
    }
    let (_, best_iter, beta, solution) = best.expect("at least one iterate");
    Ok(VmklResult { beta, solution, trace, best_iter })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarRffConfig {
    pub sigma_cv: f64,
    pub p_rff: usize,
    pub r: usize,
    pub lambda: f64,
    pub rkhs_weight: f64,
    pub iters: usize,
    pub lr: f64,
    pub clip: f64,
    pub fd_step: f64,
    pub basis_seed: u64,
}

impl VarRffConfig {
    pub fn new(sigma_cv: f64, r: usize, lambda: f64, basis_seed: u64) -> Self {
        Self {
            sigma_cv,
            p_rff: 300,
            r,
            lambda,
            rkhs_weight: 1e-3,
            iters: 100,
            lr: 0.05,
            clip: 10.0,
            fd_step: 1e-4,
            basis_seed,
        }
    }

    /// `σ_j = σ_CV·exp(tanh θ_j)`.
    pub fn sigma(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| self.sigma_cv * t.tanh().exp()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct VarRffResult {
    pub sigma: Vec<f64>,
    pub theta: Vec<f64>,
    pub solution: EigenSolution,
    pub basis: RffBasis,
    pub trace: Vec<TraceRow>,
    pub best_iter: usize,
}

/// Unit-bandwidth Matérn-3/2 basis drawn once for the whole VarRFF run.
pub fn varrff_unit_basis(cfg: &VarRffConfig, d: usize) -> Result<RffBasis> {
    sample_basis(&KernelSpec::iso(KernelFamily::Matern32, 1.0)?, cfg.p_rff, d, cfg.basis_seed)
}

struct VarInner {
    basis: RffBasis,
    sol: GevpSolution,
    raw: Mat,
    loss: f64,
    comps: LossComponents,
}

fn varrff_eval(x: &Mat, unit: &RffBasis, theta: &[f64], cfg: &VarRffConfig) -> Result<VarInner> {
    let basis = rescale_anisotropic(unit, &cfg.sigma(theta))?;
    let (s, d) = basis.features_and_derivatives(x)?;
    let pair: OperatorPair = crate::operators::operator_pair_rff(&s, &d, cfg.lambda, x.nrows())?;
    let (sol, raw, _, _) = solve_nonconstant(&pair, &s, cfg.r, 0)?;
    let mu: Vec<f64> = sol.mu.iter().copied().collect();
    let rkhs = sol.a.norm_squared();
    let comps = LossComponents { eig: loss_eig(&mu), rkhs, ..Default::default() };
    let loss = comps.eig + cfg.rkhs_weight * rkhs;
    if !loss.is_finite() {
        return Err(KdmError::NonFinite("VarRFF objective".into()));
    }
    Ok(VarInner { basis, sol, raw, loss, comps })
}

/// Bounded anisotropic bandwidth refinement of a Matérn-3/2 RFF basis.
pub fn run_varrff(x: &Mat, cfg: &VarRffConfig) -> Result<VarRffResult> {
    if !(cfg.sigma_cv.is_finite() && cfg.sigma_cv > 0.0) {
        return Err(KdmError::InvalidBandwidth(format!("{}", cfg.sigma_cv)));
    }
    let d = x.ncols();
    let unit = varrff_unit_basis(cfg, d)?;
    let mut theta = vec![0.0; d];
    let mut adam = Adam::new(d, cfg.lr).with_clip(cfg.clip);
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    let mut best: Option<(f64, usize, Vec<f64>, RffBasis, EigenSolution)> = None;
    let mut anchor: Option<Mat> = None;
    for it in 0..=cfg.iters {
        let inner = varrff_eval(x, &unit, &theta, cfg)?;
        let sol = finish_solution(&inner.sol, &inner.raw, anchor.as_ref());
        anchor = Some(sol.phi.clone());
        if best.as_ref().is_none_or(|b| inner.loss < b.0) {
            best = Some((inner.loss, it, theta.clone(), inner.basis.clone(), sol));
        }
        let mut row = TraceRow {
            iter: it,
            total: inner.loss,
            components: inner.comps,
            params: cfg.sigma(&theta),
            grad_norm: 0.0,
            fd_fallback: false,
        };
        if it == cfg.iters {
            trace.push(row);
            break;
        }
        let (g, flagged) = grad_finite_difference(|t| varrff_eval(x, &unit, t, cfg).map(|v| v.loss), &theta, cfg.fd_step);
        row.grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.fd_fallback = !flagged.is_empty();
        trace.push(row);
        adam.step(&mut theta, &g);
    }
    let (_, best_iter, theta, basis, solution) = best.expect("at least one iterate");
    Ok(VarRffResult { sigma: cfg.sigma(&theta), theta, solution, basis, trace, best_iter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::kmeans_landmarks;
    use crate::problems::BenchmarkDataset;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn eig_loss_examples() {
        assert_eq!(loss_eig(&[1.0, 1.0]), -2.0);
        assert_eq!(loss_eig(&[0.0, 0.0]), 0.0);
        assert_eq!(loss_eig(&[3.0, 2.0, 1.0][..2]), -5.0);
    }

    #[test]
    fn sub_loss_examples() {
        let mut rng = crate::seed::rng(1);
        let x = Mat::from_fn(100, 3, |_, _| rng.random_range(-1.0..1.0));
        let fixed = gauge_fix(&x).phi;
        assert!(loss_sub(&fixed, 1.0) < 1e-20);
        let doubled = Mat::from_fn(100, 1, |i, _| 2.0 * fixed[(i, 0)]);
        assert_relative_eq!(loss_sub(&doubled, 1.0), 9.0, epsilon = 1e-10);
        let ones = Mat::from_element(10, 1, 1.0);
        assert_relative_eq!(loss_sub(&ones, 1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rkhs_loss_examples() {
        assert_eq!(loss_rkhs(&Mat::zeros(3, 2), &Mat::identity(3, 3)), 0.0);
        let a = Mat::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        assert_relative_eq!(loss_rkhs(&a, &Mat::identity(3, 3)), a.norm_squared());
        let w = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let a = Mat::from_row_slice(2, 1, &[1.0, -1.0]);
        assert_eq!(loss_rkhs(&a, &w), 2.0 - 2.0 + 3.0);
    }

    #[test]
    fn pde_loss_examples() {
        let phi = Mat::from_fn(20, 1, |i, _| (i as f64).sin());
        let (l, lam) = loss_pde(&phi, &(&phi * -3.0)).unwrap();
        assert!(l < 1e-24);
        assert_relative_eq!(lam[0], 3.0, epsilon = 1e-14);
        let (l, lam) = loss_pde(&phi, &Mat::zeros(20, 1)).unwrap();
        assert_eq!((l, lam[0]), (0.0, 0.0));
        assert!(loss_pde(&Mat::zeros(20, 1), &Mat::zeros(20, 1)).is_err());
    }

    #[test]
    fn pde_loss_on_ou1d_grid() {
        let g = crate::problems::GridGenerator::ou1d(1.0, 1401);
        let nodes = Mat::from_column_slice(g.len(), 1, &g.nodes);
        let he1: Vec<f64> = g.nodes.clone();
        let gphi = Mat::from_column_slice(g.len(), 1, &g.apply(&he1));
        // Weight by the stationary density so the boundary has no influence.
        let w: Vec<f64> = g.weights.iter().map(|v| v.sqrt()).collect();
        let phi_w = Mat::from_fn(g.len(), 1, |i, _| nodes[(i, 0)] * w[i]);
        let gphi_w = Mat::from_fn(g.len(), 1, |i, _| gphi[(i, 0)] * w[i]);
        let (l, lam) = loss_pde(&phi_w, &gphi_w).unwrap();
        assert!(l < 1e-3, "{l}");
        assert!((lam[0] - 1.0).abs() < 1e-3, "{}", lam[0]);
    }

    #[test]
    fn finite_differences() {
        let (g, f) = grad_finite_difference(|x| Ok(x[0] * x[0]), &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-7);
        assert!(f.is_empty());
        let (g, _) = grad_finite_difference(|_| Ok(4.0), &[1.0, 2.0], 1e-5);
        assert_eq!(g, vec![0.0, 0.0]);
        let (g, f) = grad_finite_difference(
            |x| if x[0] < 1.0 { Err(KdmError::NonFinite("x".into())) } else { Ok(2.0 * x[0]) },
            &[1.0],
            1e-3,
        );
        assert_eq!(f, vec![0]);
        assert!((g[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn adam_examples() {
        let mut p = vec![1.0, -2.0];
        let mut a = Adam::new(2, 0.1);
        a.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, -2.0]);
        let mut a = Adam::new(2, 0.1);
        a.step(&mut p, &[3.0, -0.5]);
        assert_relative_eq!(p[0], 0.9, epsilon = 1e-8);
        assert_relative_eq!(p[1], -1.9, epsilon = 1e-8);
        let mut x = vec![2.0];
        let mut a = Adam::new(1, 0.05);
        for _ in 0..500 {
            let g = [2.0 * x[0]];
            a.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-3, "{}", x[0]);
        let mut x = vec![0.0, 0.0];
        let mut a = Adam::new(2, 1.0).with_clip(1.0);
        a.step(&mut x, &[300.0, 400.0]);
        assert_relative_eq!(x[0], -1.0, epsilon = 1e-6);
    }

    fn dictionary(med: f64) -> Vec<KernelSpec> {
        crate::cv::sigma_ladder(med, 3, -0.5, 0.5).into_iter().map(|s| KernelSpec::gaussian(s).unwrap()).collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let ds = BenchmarkDataset::generate(&crate::problems::Problem::ou2d(4.0), 80, 3).unwrap();
        let z = kmeans_landmarks(&ds.x, 8, 1).unwrap();
        let vp = VmklProblem::new(&ds.x, z, &dictionary(1.0), None, false).unwrap();
        let cfg = OuterConfig::new(Ablation::EigOnly, 2, 0.01);
        let u = [0.2, -0.4, 0.1];
        let inner = vp.evaluate(&u, &cfg).unwrap();
        let mu: Vec<f64> = inner.sol.mu.iter().copied().collect();
        let dmu = grad_eig_analytic(&vp.parts, &inner.mats, cfg.lambda, &mu, &inner.sol.a).unwrap();
        for k in 0..2 {
            let gb: Vec<f64> = (0..3).map(|l| dmu[(l, k)]).collect();
            let gu = inner.beta.pullback(&gb);
            let (fd, _) = grad_finite_difference(|uu| Ok(vp.evaluate(uu, &cfg)?.sol.mu[k]), &u, 1e-5);
            for m in 0..3 {
                let rel = (gu[m] - fd[m]).abs() / fd[m].abs().max(1e-8);
                assert!(rel < 1e-4, "mode {k} coord {m}: {} vs {}", gu[m], fd[m]);
            }
        }
    }

    #[test]
    fn ablation_wiring() {
        let comps = LossComponents { eig: -3.0, sub: 0.5, rkhs: 2.0, pde: 7.0, reg: 1.0 };
        let sub = OuterConfig::new(Ablation::SubOnly, 2, 0.01);
        let eig = OuterConfig::new(Ablation::EigOnly, 2, 0.01);
        let moved_mu = LossComponents { eig: -30.0, ..comps };
        let moved_phi = LossComponents { sub: 50.0, ..comps };
        assert_eq!(comps.total(&sub), moved_mu.total(&sub));
        assert_eq!(comps.total(&eig), moved_phi.total(&eig));
        assert!(sub.validate().is_ok() && eig.validate().is_ok());
        let mut bad = OuterConfig::new(Ablation::EigOnly, 2, 0.01);
        bad.alpha_sub = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_kernel_vmkl_runs() {
        let ds = BenchmarkDataset::generate(&crate::problems::Problem::ou2d(4.0), 60, 4).unwrap();
        let z = kmeans_landmarks(&ds.x, 10, 1).unwrap();
        let vp = VmklProblem::new(&ds.x, z, &[KernelSpec::gaussian(1.0).unwrap()], None, false).unwrap();
        let mut cfg = OuterConfig::new(Ablation::Combined, 2, 0.01);
        cfg.iters = 3;
        let res = run_vmkl(&vp, &cfg).unwrap();
        assert_eq!(res.beta.beta, vec![1.0]);
        assert_eq!(res.trace.len(), 4);
    }

    #[test]
    fn vmkl_returns_best_iterate() {
        let ds = BenchmarkDataset::generate(&crate::problems::Problem::ou2d(4.0), 80, 5).unwrap();
        let z = kmeans_landmarks(&ds.x, 12, 2).unwrap();
        let vp = VmklProblem::new(&ds.x, z, &dictionary(1.2), None, false).unwrap();
        let mut cfg = OuterConfig::new(Ablation::Combined, 2, 0.01);
        cfg.iters = 10;
        let res = run_vmkl(&vp, &cfg).unwrap();
        let min = res.trace.iter().map(|t| t.total).fold(f64::INFINITY, f64::min);
        assert_eq!(res.trace[res.best_iter].total, min);
        assert!(crate::eigsolve::orthonormality_error(&res.solution.phi) < 1e-8);
    }

    #[test]
    fn vmkl_with_generator_term() {
        let problem = crate::problems::Problem::ou2d(4.0);
        let ds = BenchmarkDataset::generate(&problem, 60, 6).unwrap();
        let z = kmeans_landmarks(&ds.x, 10, 2).unwrap();
        let vp = VmklProblem::new(&ds.x, z, &dictionary(1.0), Some(problem), true).unwrap();
        let mut cfg = OuterConfig::new(Ablation::Custom, 2, 0.01);
        cfg.zeta_pde = 0.1;
        cfg.iters = 2;
        let res = run_vmkl(&vp, &cfg).unwrap();
        assert!(res.trace.iter().all(|t| t.components.pde.is_finite() && t.components.pde > 0.0));
        let circle = crate::problems::Problem::Circle { noise: 0.0 };
        assert!(VmklProblem::new(&ds.x, Mat::zeros(2, 2), &dictionary(1.0), Some(circle), true).is_err());
    }

    #[test]
    fn varrff_bounds_and_frozen_start() {
        let ds = BenchmarkDataset::generate(&crate::problems::Problem::ou2d(4.0), 90, 7).unwrap();
        let mut cfg = VarRffConfig::new(1.5, 2, 0.01, 11);
        cfg.p_rff = 40;
        cfg.iters = 0;
        let frozen = run_varrff(&ds.x, &cfg).unwrap();
        assert_eq!(frozen.sigma, vec![1.5, 1.5]);
        let iso = sample_basis(&KernelSpec::iso(KernelFamily::Matern32, 1.5).unwrap(), 40, 2, 11).unwrap();
        let (s, d) = iso.features_and_derivatives(&ds.x).unwrap();
        let pair = crate::operators::operator_pair_rff(&s, &d, 0.01, 90).unwrap();
        let direct = crate::eigsolve::solve_and_fix(&pair, &s, 2).unwrap();
        assert_eq!(frozen.solution.mu, direct.mu);
        cfg.iters = 15;
        cfg.lr = 0.5;
        let res = run_varrff(&ds.x, &cfg).unwrap();
        let e = std::f64::consts::E;
        for row in &res.trace {
            for s in &row.params {
                assert!(*s >= 1.5 / e && *s <= 1.5 * e);
            }
        }
        let min = res.trace.iter().map(|t| t.total).fold(f64::INFINITY, f64::min);
        assert_eq!(res.trace[res.best_iter].total, min);
    }
}
