//! K-fold kernel/bandwidth selection over a finite dictionary.
//!
//! Three scores are computed from the same per-fold RFF bases: the sum of the
//! top-r eigenvalues on each fold, a held-out Rayleigh quotient (train on the
//! other folds, evaluate on fold f), and the spectral gap `μ_r / μ_{r+1}`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigsolve::{rayleigh_quotient, solve_nonconstant};
use crate::error::{KdmError, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::linalg::Mat;
use crate::operators::operator_pair_rff;
use crate::rff::sample_basis;
use crate::seed::stream_seed;

/// Cap applied when `μ_{r+1}` vanishes.
pub const GAP_CAP: f64 = 1e12;
const GAP_FLOOR: f64 = 1e-14;
const MEDIAN_SUBSAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    Eigsum,
    Rayleigh,
    Gap,
}

impl ScoreRule {
    pub const ALL: [ScoreRule; 3] = [ScoreRule::Eigsum, ScoreRule::Rayleigh, ScoreRule::Gap];

    pub fn name(self) -> &'static str {
        match self {
            ScoreRule::Eigsum => "eigsum",
            ScoreRule::Rayleigh => "rayleigh",
            ScoreRule::Gap => "gap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub r: usize,
    pub lambda: f64,
    pub p_rff: usize,
    pub seed: u64,
    pub n_sigma: usize,
    pub lo_exp: f64,
    pub hi_exp: f64,
    pub families: Vec<KernelFamily>,
    /// The held-out Rayleigh score needs a second solve per fold; skip it when unused.
    pub rayleigh: bool,
}

impl CvConfig {
    pub fn new(r: usize, lambda: f64, seed: u64) -> Self {
        Self {
            folds: 3,
            r,
            lambda,
            p_rff: 300,
            seed,
            n_sigma: 10,
            lo_exp: -1.0,
            hi_exp: 2.0,
            families: KernelFamily::ALL.to_vec(),
            rayleigh: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCandidate {
    pub spec: KernelSpec,
    pub index: usize,
    pub sigma_index: usize,
}

impl CvCandidate {
    pub fn sigma(&self) -> f64 {
        self.spec.sigma.scale()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateScores {
    pub candidate: CvCandidate,
    /// Per-fold non-constant eigenvalues (top r+1).
    pub fold_mu: Vec<Vec<f64>>,
    pub fold_eigsum: Vec<f64>,
    pub fold_rayleigh: Vec<f64>,
    pub fold_gap: Vec<f64>,
    pub eigsum: f64,
    pub rayleigh: f64,
    pub gap: f64,
    /// Some fold failed to solve.
    pub failed: bool,
    /// Some fold hit the gap cap.
    pub gap_capped: bool,
}

impl CandidateScores {
    pub fn score(&self, rule: ScoreRule) -> f64 {
        match rule {
            ScoreRule::Eigsum => self.eigsum,
            ScoreRule::Rayleigh => self.rayleigh,
            ScoreRule::Gap => self.gap,
        }
    }

    pub fn fold_scores(&self, rule: ScoreRule) -> &[f64] {
        match rule {
            ScoreRule::Eigsum => &self.fold_eigsum,
            ScoreRule::Rayleigh => &self.fold_rayleigh,
            ScoreRule::Gap => &self.fold_gap,
        }
    }

    pub fn flagged(&self, rule: ScoreRule) -> bool {
        self.failed || (rule == ScoreRule::Gap && self.gap_capped) || !self.score(rule).is_finite()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub median_distance: f64,
    pub config: CvConfig,
    pub scores: Vec<CandidateScores>,
}

impl CvResult {
    pub fn select(&self, rule: ScoreRule) -> Result<&CvCandidate> {
        select(&self.scores, rule).map(|i| &self.scores[i].candidate)
    }
}

/// Median Euclidean distance over all pairs of a seeded subsample of at most 1000 rows.
pub fn median_pairwise_distance(x: &Mat, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(KdmError::DegenerateData("need at least two points".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if n > MEDIAN_SUBSAMPLE {
        let mut rng = crate::seed::rng(stream_seed(seed, "median", &[]));
        idx.shuffle(&mut rng);
        idx.truncate(MEDIAN_SUBSAMPLE);
        idx.sort_unstable();
    }
    let mut dist = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dist.push((x.row(i) - x.row(j)).norm());
        }
    }
    dist.sort_by(f64::total_cmp);
    let m = dist.len();
    let med = if m % 2 == 1 { dist[m / 2] } else { 0.5 * (dist[m / 2 - 1] + dist[m / 2]) };
    if !(med > 0.0) {
        return Err(KdmError::DegenerateData("median pairwise distance is zero".into()));
    }
    Ok(med)
}

/// `σ = median · 10^{linspace(lo, hi, n)}`, family-major order.
pub fn make_grid(
    x: &Mat,
    families: &[KernelFamily],
    n_sigma: usize,
    lo_exp: f64,
    hi_exp: f64,
    seed: u64,
) -> Result<(f64, Vec<CvCandidate>)> {
    if n_sigma == 0 || families.is_empty() {
        return Err(KdmError::InvalidParameter("empty grid".into()));
    }
    let med = median_pairwise_distance(x, seed)?;
    let sigmas = sigma_ladder(med, n_sigma, lo_exp, hi_exp);
    let mut out = Vec::with_capacity(families.len() * n_sigma);
    for &f in families {
        for (si, &s) in sigmas.iter().enumerate() {
            out.push(CvCandidate { spec: KernelSpec::iso(f, s)?, index: out.len(), sigma_index: si });
        }
    }
    Ok((med, out))
}

pub fn sigma_ladder(base: f64, n: usize, lo_exp: f64, hi_exp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = if n == 1 { lo_exp } else { lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64 };
            base * 10f64.powf(t)
        })
        .collect()
}

/// Disjoint folds from a seeded permutation, contiguous blocks, sizes within one.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(KdmError::InvalidParameter(format!("cannot split {n} points into {folds} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut crate::seed::rng(stream_seed(seed, "folds", &[])));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Seed of the RFF draw for one (family, fold); shared across bandwidths.
pub fn basis_seed(master: u64, family: KernelFamily, fold: usize) -> u64 {
    stream_seed(master, "cv-rff", &[family.index() as u64, fold as u64])
}

fn gap_ratio(num: f64, den: f64) -> (f64, bool) {
    if den <= GAP_FLOOR {
        (GAP_CAP, true)
    } else {
        ((num / den).min(GAP_CAP), false)
    }
}

struct FoldOutcome {
    mu: Vec<f64>,
    eigsum: f64,
    gap: f64,
    capped: bool,
    rayleigh: f64,
}

fn score_fold(
    spec: &KernelSpec,
    x: &Mat,
    test: &[usize],
    train: &[usize],
    fold: usize,
    cfg: &CvConfig,
) -> Result<FoldOutcome> {
    let d = x.ncols();
    let basis = sample_basis(spec, cfg.p_rff, d, basis_seed(cfg.seed, spec.family, fold))?;
    let r = cfg.r;

    let xt = x.select_rows(test);
    let (s, dm) = basis.features_and_derivatives(&xt)?;
    let pair = operator_pair_rff(&s, &dm, cfg.lambda, xt.nrows())?;
    let (sol, _, _, _) = solve_nonconstant(&pair, &s, r, 1)?;
    let mu: Vec<f64> = sol.mu.iter().copied().collect();
    let eigsum: f64 = mu[..r].iter().sum();
    let (gap, capped) = gap_ratio(mu[r - 1], mu[r]);

    let rayleigh = if cfg.rayleigh {
        let xr = x.select_rows(train);
        let (s_tr, d_tr) = basis.features_and_derivatives(&xr)?;
        let pair_tr = operator_pair_rff(&s_tr, &d_tr, cfg.lambda, xr.nrows())?;
        let (tr, _, _, _) = solve_nonconstant(&pair_tr, &s_tr, r, 0)?;
        (0..r).map(|k| rayleigh_quotient(&pair, &tr.a.column(k).into_owned())).sum::<f64>() / r as f64
    } else {
        f64::NAN
    };
    Ok(FoldOutcome { mu, eigsum, gap, capped, rayleigh })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Score one candidate on all folds.
pub fn score_candidate(candidate: &CvCandidate, x: &Mat, folds: &[Vec<usize>], cfg: &CvConfig) -> CandidateScores {
    let mut out = CandidateScores {
        candidate: candidate.clone(),
        fold_mu: Vec::new(),
        fold_eigsum: Vec::new(),
        fold_rayleigh: Vec::new(),
        fold_gap: Vec::new(),
        eigsum: f64::NEG_INFINITY,
        rayleigh: f64::NEG_INFINITY,
        gap: f64::NEG_INFINITY,
        failed: false,
        gap_capped: false,
    };
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.clone()).collect();
        match score_fold(&candidate.spec, x, test, &train, f, cfg) {
            Ok(o) => {
                out.fold_mu.push(o.mu);
                out.fold_eigsum.push(o.eigsum);
                out.fold_gap.push(o.gap);
                out.fold_rayleigh.push(o.rayleigh);
                out.gap_capped |= o.capped;
            }
            Err(_) => {
                out.failed = true;
                return out;
            }
        }
    }
    out.eigsum = mean(&out.fold_eigsum);
    out.gap = mean(&out.fold_gap);
    out.rayleigh = if cfg.rayleigh { mean(&out.fold_rayleigh) } else { f64::NEG_INFINITY };
    out
}

/// Score every grid candidate; results are ordered by candidate index.
pub fn run_cv(x: &Mat, cfg: &CvConfig) -> Result<CvResult> {
    if cfg.r == 0 || cfg.p_rff < cfg.r + 2 {
        return Err(KdmError::InvalidParameter("need r >= 1 and p_rff >= r + 2".into()));
    }
    let (med, grid) = make_grid(x, &cfg.families, cfg.n_sigma, cfg.lo_exp, cfg.hi_exp, cfg.seed)?;
    let folds = make_folds(x.nrows(), cfg.folds, cfg.seed)?;
    if folds.iter().any(|f| f.len() < cfg.r + 2) {
        return Err(KdmError::InvalidParameter("folds too small for the requested rank".into()));
    }
    let scores: Vec<CandidateScores> = grid.par_iter().map(|c| score_candidate(c, x, &folds, cfg)).collect();
    Ok(CvResult { median_distance: med, config: cfg.clone(), scores })
}

/// Index of the argmax under `rule`, skipping flagged candidates.
///
/// Ties go to the smaller bandwidth, then to the earlier family.
pub fn select(scores: &[CandidateScores], rule: ScoreRule) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.flagged(rule) {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (sb, si) = (scores[b].score(rule), s.score(rule));
                let key = |c: &CandidateScores| (c.candidate.sigma(), c.candidate.spec.family.index());
                let better = si > sb || (si == sb && key(s) < key(&scores[b]));
                Some(if better { i } else { b })
            }
        };
    }
    best.ok_or(KdmError::AllCandidatesFlagged)
}
