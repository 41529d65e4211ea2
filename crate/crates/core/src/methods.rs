//! End-to-end fitting methods on a sample matrix.

use serde::{Deserialize, Serialize};

use crate::cv::{median_pairwise_distance, run_cv, sigma_ladder, CvConfig, CvResult, ScoreRule};
use crate::eigsolve::{solve_and_fix, EigenSolution};
use crate::error::{KdmError, Result};
use crate::kernels::{KernelFamily, KernelSpec, MixtureWeights};
use crate::linalg::Mat;
use crate::operators::{
    aggregate_mixture, build_nystrom, kmeans_landmarks, operator_pair_nystrom, operator_pair_rff, DEFAULT_LANDMARKS,
    EPS_W,
};
use crate::outer::{run_varrff, run_vmkl, Ablation, OuterConfig, TraceRow, VarRffConfig, VmklProblem};
use crate::problems::Problem;
use crate::rff::sample_basis;
use crate::seed::stream_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodTag {
    CvRff,
    UniformNystrom,
    UniformRff,
    Vmkl,
    Varrff,
}

impl MethodTag {
    pub const ALL: [MethodTag; 5] =
        [MethodTag::CvRff, MethodTag::UniformNystrom, MethodTag::UniformRff, MethodTag::Vmkl, MethodTag::Varrff];

    pub fn name(self) -> &'static str {
        match self {
            MethodTag::CvRff => "cv-rff",
            MethodTag::UniformNystrom => "uniform-nystrom",
            MethodTag::UniformRff => "uniform-rff",
            MethodTag::Vmkl => "vmkl",
            MethodTag::Varrff => "varrff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings shared by every method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub r: usize,
    pub lambda: f64,
    pub p_rff: usize,
    pub landmarks: usize,
    pub seed: u64,
    /// Number of Gaussian bandwidths in the uniform baselines.
    pub n_uniform: usize,
    /// Number of Gaussians in the VMKL dictionary.
    pub n_vmkl: usize,
    pub lo_exp: f64,
    pub hi_exp: f64,
}

impl FitConfig {
    pub fn new(r: usize, lambda: f64, seed: u64) -> Self {
        Self {
            r,
            lambda,
            p_rff: 300,
            landmarks: DEFAULT_LANDMARKS,
            seed,
            n_uniform: 10,
            n_vmkl: 5,
            lo_exp: -1.0,
            hi_exp: 2.0,
        }
    }

    pub fn for_problem(problem: &Problem, seed: u64) -> Self {
        Self::new(problem.rank(), problem.lambda(), seed)
    }

    pub fn cv_config(&self) -> CvConfig {
        let mut c = CvConfig::new(self.r, self.lambda, self.seed);
        c.p_rff = self.p_rff;
        c.lo_exp = self.lo_exp;
        c.hi_exp = self.hi_exp;
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutput {
    pub method: MethodTag,
    pub solution: EigenSolution,
    /// Selected or anchoring kernel.
    pub spec: Option<KernelSpec>,
    /// Dictionary bandwidths (mixtures) or learned per-coordinate bandwidths (VarRFF).
    pub sigma: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Seed of the RFF basis used for a single-kernel fit of `family`.
pub fn fit_basis_seed(master: u64, family: KernelFamily) -> u64 {
    stream_seed(master, "fit-rff", &[family.index() as u64])
}

/// Fit with one kernel on `p_rff` random features.
pub fn fit_rff(x: &Mat, spec: &KernelSpec, cfg: &FitConfig) -> Result<EigenSolution> {
    let basis = sample_basis(spec, cfg.p_rff, x.ncols(), fit_basis_seed(cfg.seed, spec.family))?;
    let (s, d) = basis.features_and_derivatives(x)?;
    let pair = operator_pair_rff(&s, &d, cfg.lambda, x.nrows())?;
    solve_and_fix(&pair, &s, cfg.r)
}

/// Run CV, then refit the selected kernel on all samples.
pub fn fit_cv_rff(x: &Mat, rule: ScoreRule, cfg: &FitConfig) -> Result<(FitOutput, CvResult)> {
    let cv = run_cv(x, &cfg.cv_config())?;
    let out = fit_from_cv(x, &cv, rule, cfg)?;
    Ok((out, cv))
}

pub fn fit_from_cv(x: &Mat, cv: &CvResult, rule: ScoreRule, cfg: &FitConfig) -> Result<FitOutput> {
    let spec = cv.select(rule)?.spec.clone();
    let solution = fit_rff(x, &spec, cfg)?;
    Ok(FitOutput {
        method: MethodTag::CvRff,
        solution,
        sigma: vec![spec.sigma.scale()],
        spec: Some(spec),
        beta: None,
        trace: Vec::new(),
    })
}

fn gaussian_ladder(x: &Mat, n: usize, cfg: &FitConfig) -> Result<Vec<KernelSpec>> {
    let med = median_pairwise_distance(x, cfg.seed)?;
    sigma_ladder(med, n, cfg.lo_exp, cfg.hi_exp).into_iter().map(KernelSpec::gaussian).collect()
}

fn landmarks(x: &Mat, cfg: &FitConfig) -> Result<Mat> {
    kmeans_landmarks(x, cfg.landmarks.min(x.nrows()), stream_seed(cfg.seed, "landmarks", &[]))
}

/// Equal-weight Gaussian mixture on k-means landmarks.
pub fn fit_uniform_nystrom(x: &Mat, cfg: &FitConfig) -> Result<FitOutput> {
    let dict = gaussian_ladder(x, cfg.n_uniform, cfg)?;
    let z = landmarks(x, cfg)?;
    let parts = build_nystrom(&dict, x, &z)?;
    let beta = MixtureWeights::uniform(dict.len(), 0.0)?;
    let mats = aggregate_mixture(&parts, &beta, &z, EPS_W)?;
    let pair = operator_pair_nystrom(&mats, cfg.lambda, x.nrows())?;
    let solution = solve_and_fix(&pair, &mats.c, cfg.r)?;
    Ok(FitOutput {
        method: MethodTag::UniformNystrom,
        solution,
        spec: None,
        sigma: dict.iter().map(|s| s.sigma.scale()).collect(),
        beta: Some(beta.beta),
        trace: Vec::new(),
    })
}

/// Equal-weight Gaussian mixture on random features: `p_rff / L` features per
/// kernel, each block scaled by `√β_ℓ`.
pub fn fit_uniform_rff(x: &Mat, cfg: &FitConfig) -> Result<FitOutput> {
    let dict = gaussian_ladder(x, cfg.n_uniform, cfg)?;
    let l = dict.len();
    let per = cfg.p_rff / l;
    if per == 0 {
        return Err(KdmError::InvalidParameter(format!("p_rff {} < {l} kernels", cfg.p_rff)));
    }
    let (n, d) = x.shape();
    let mut s = Mat::zeros(n, per * l);
    let mut dm = Mat::zeros(n * d, per * l);
    let w = (1.0 / l as f64).sqrt();
    for (k, spec) in dict.iter().enumerate() {
        let basis = sample_basis(spec, per, d, stream_seed(cfg.seed, "uniform-rff", &[k as u64]))?;
        let (sk, dk) = basis.features_and_derivatives(x)?;
        s.columns_mut(k * per, per).copy_from(&(sk * w));
        dm.columns_mut(k * per, per).copy_from(&(dk * w));
    }
    let pair = operator_pair_rff(&s, &dm, cfg.lambda, n)?;
    let solution = solve_and_fix(&pair, &s, cfg.r)?;
    Ok(FitOutput {
        method: MethodTag::UniformRff,
        solution,
        spec: None,
        sigma: dict.iter().map(|s| s.sigma.scale()).collect(),
        beta: Some(vec![1.0 / l as f64; l]),
        trace: Vec::new(),
    })
}

/// Learned Gaussian mixture weights on k-means landmarks.
///
/// A generator term is only used when `outer.zeta_pde > 0`, which requires `problem`.
pub fn fit_vmkl(x: &Mat, outer: &OuterConfig, problem: Option<&Problem>, cfg: &FitConfig) -> Result<FitOutput> {
    let dict = gaussian_ladder(x, cfg.n_vmkl, cfg)?;
    let z = landmarks(x, cfg)?;
    let vp = VmklProblem::new(x, z, &dict, problem.cloned(), outer.zeta_pde > 0.0)?;
    let res = run_vmkl(&vp, outer)?;
    Ok(FitOutput {
        method: MethodTag::Vmkl,
        solution: res.solution,
        spec: None,
        sigma: dict.iter().map(|s| s.sigma.scale()).collect(),
        beta: Some(res.beta.beta),
        trace: res.trace,
    })
}

pub fn vmkl_config(ablation: Ablation, cfg: &FitConfig) -> OuterConfig {
    OuterConfig::new(ablation, cfg.r, cfg.lambda)
}

/// Bounded per-coordinate bandwidth refinement around `sigma_cv`.
///
/// With zero iterations this reproduces `fit_rff` with a Matérn-3/2 kernel at `sigma_cv`.
pub fn varrff_config(sigma_cv: f64, cfg: &FitConfig) -> VarRffConfig {
    let mut v = VarRffConfig::new(sigma_cv, cfg.r, cfg.lambda, fit_basis_seed(cfg.seed, KernelFamily::Matern32));
    v.p_rff = cfg.p_rff;
    v
}

pub fn fit_varrff(x: &Mat, var: &VarRffConfig) -> Result<FitOutput> {
    let res = run_varrff(x, var)?;
    Ok(FitOutput {
        method: MethodTag::Varrff,
        solution: res.solution,
        spec: Some(KernelSpec::iso(KernelFamily::Matern32, var.sigma_cv)?),
        sigma: res.sigma,
        beta: None,
        trace: res.trace,
    })
}

/// Best Matérn-3/2 bandwidth under `rule`; the VarRFF anchor.
pub fn matern32_anchor(cv: &CvResult, rule: ScoreRule) -> Result<f64> {
    let rows: Vec<_> = cv.scores.iter().filter(|s| s.candidate.spec.family == KernelFamily::Matern32).cloned().collect();
    let i = crate::cv::select(&rows, rule)?;
    Ok(rows[i].candidate.sigma())
}
