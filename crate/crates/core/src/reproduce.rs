//! Benchmark suites: datasets × methods × seeds, summarized per cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{run_cv, ScoreRule};
use crate::error::{KdmError, Result};
use crate::methods::{
    fit_from_cv, fit_uniform_nystrom, fit_uniform_rff, fit_varrff, fit_vmkl, matern32_anchor, varrff_config,
    vmkl_config, FitConfig, FitOutput,
};
use crate::metrics::evaluate;
use crate::outer::Ablation;
use crate::problems::{BenchmarkDataset, Problem};

pub const SEEDS: [u64; 3] = [42, 43, 44];
pub const DEFAULT_N: usize = 500;
pub const SCALING_N: [usize; 5] = [100, 250, 500, 1000, 2000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Table1,
    Table3,
    Table5,
    Table7,
    Scaling,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Table1, Suite::Table3, Suite::Table5, Suite::Table7, Suite::Scaling];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Table1 => "table1",
            Suite::Table3 => "table3",
            Suite::Table5 => "table5",
            Suite::Table7 => "table7",
            Suite::Scaling => "scaling",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn problems(self) -> Vec<Problem> {
        match self {
            Suite::Table1 => vec![
                Problem::ou2d(4.0),
                Problem::ou2d(16.0),
                Problem::ou3d(),
                Problem::DoubleWell { asymmetric: false },
                Problem::DoubleWell { asymmetric: true },
                Problem::Circle { noise: 0.05 },
            ],
            Suite::Table3 => vec![
                Problem::DoubleWell { asymmetric: false },
                Problem::ou2d(16.0),
                Problem::Circle { noise: 0.05 },
            ],
            Suite::Table5 => vec![Problem::ou2d(4.0), Problem::ou2d(16.0), Problem::ou3d()],
            Suite::Table7 => [4, 8, 18].map(|f| Problem::MdLike { d_slow: 2, d_fast: f }).to_vec(),
            Suite::Scaling => vec![Problem::ou2d(4.0)],
        }
    }

    pub fn sample_sizes(self) -> Vec<usize> {
        match self {
            Suite::Scaling => SCALING_N.to_vec(),
            _ => vec![DEFAULT_N],
        }
    }

    /// Method labels emitted per cell, in output order.
    pub fn methods(self) -> &'static [&'static str] {
        match self {
            Suite::Table1 => &["cv-rff", "uniform-rff", "uniform-nystrom"],
            Suite::Table3 => &["uniform-nystrom", "vmkl-subonly", "vmkl-eigonly", "vmkl-combined", "cv-rff"],
            Suite::Table5 => &["cv-rff", "varrff"],
            Suite::Table7 => &["cv-rff-eigsum", "cv-rff-gap", "uniform-rff"],
            Suite::Scaling => &["cv-rff", "uniform-nystrom"],
        }
    }
}

/// One (problem, N, seed, method) outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub suite: Suite,
    pub problem: String,
    pub method: String,
    pub seed: u64,
    pub n: usize,
    pub subr2: f64,
    pub avg_abs_corr: f64,
    pub cosines: Vec<f64>,
    /// Selected kernel, learned bandwidths or mixture weights.
    pub detail: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub suite: Suite,
    pub problem: String,
    pub method: String,
    pub n: usize,
    pub count: usize,
    pub failures: usize,
    pub mean_subr2: f64,
    pub std_subr2: f64,
    pub mean_avg_abs_corr: f64,
    /// Detail of the first seed.
    pub detail: String,
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(" "))
}

fn describe(out: &FitOutput) -> String {
    match (&out.spec, &out.beta) {
        (Some(spec), None) if out.sigma.len() > 1 => format!("{} sigma={}", spec.family.name(), fmt_list(&out.sigma)),
        (Some(spec), None) => format!("{} sigma={:.4}", spec.family.name(), spec.sigma.scale()),
        (_, Some(beta)) => format!("beta={}", fmt_list(beta)),
        (None, None) => String::new(),
    }
}

struct Job {
    problem: Problem,
    n: usize,
    seed: u64,
}

fn fits_for(suite: Suite, ds: &BenchmarkDataset, cfg: &FitConfig) -> Vec<(&'static str, Result<FitOutput>)> {
    let x = &ds.x;
    let needs_cv = suite.methods().iter().any(|m| m.starts_with("cv-rff") || *m == "varrff");
    let cv = if needs_cv { Some(run_cv(x, &cfg.cv_config())) } else { None };
    let from_cv = |rule: ScoreRule| -> Result<FitOutput> {
        match cv.as_ref().expect("cv computed") {
            Ok(c) => fit_from_cv(x, c, rule, cfg),
            Err(e) => Err(e.clone()),
        }
    };
    suite
        .methods()
        .iter()
        .map(|&m| {
            let res = match m {
                "cv-rff" | "cv-rff-eigsum" => from_cv(ScoreRule::Eigsum),
                "cv-rff-gap" => from_cv(ScoreRule::Gap),
                "uniform-rff" => fit_uniform_rff(x, cfg),
                "uniform-nystrom" => fit_uniform_nystrom(x, cfg),
                "vmkl-subonly" => fit_vmkl(x, &vmkl_config(Ablation::SubOnly, cfg), None, cfg),
                "vmkl-eigonly" => fit_vmkl(x, &vmkl_config(Ablation::EigOnly, cfg), None, cfg),
                "vmkl-combined" => fit_vmkl(x, &vmkl_config(Ablation::Combined, cfg), None, cfg),
                "varrff" => match cv.as_ref().expect("cv computed") {
                    Ok(c) => matern32_anchor(c, ScoreRule::Eigsum).and_then(|s| fit_varrff(x, &varrff_config(s, cfg))),
                    Err(e) => Err(e.clone()),
                },
                other => Err(KdmError::InvalidParameter(format!("unknown method {other}"))),
            };
            (m, res)
        })
        .collect()
}

fn run_job(suite: Suite, job: &Job) -> Vec<CellResult> {
    let label = job.problem.label();
    let cell = |method: &str, res: Result<(f64, f64, Vec<f64>, String)>| {
        let (subr2, avg, cosines, detail, error) = match res {
            Ok((s, a, c, d)) => (s, a, c, d, None),
            Err(e) => (f64::NAN, f64::NAN, Vec::new(), String::new(), Some(e.to_string())),
        };
        CellResult {
            suite,
            problem: label.clone(),
            method: method.to_string(),
            seed: job.seed,
            n: job.n,
            subr2,
            avg_abs_corr: avg,
            cosines,
            detail,
            error,
        }
    };
    let ds = match BenchmarkDataset::generate(&job.problem, job.n, job.seed) {
        Ok(ds) => ds,
        Err(e) => return suite.methods().iter().map(|m| cell(m, Err(e.clone()))).collect(),
    };
    let cfg = FitConfig::for_problem(&job.problem, job.seed);
    fits_for(suite, &ds, &cfg)
        .into_iter()
        .map(|(m, res)| {
            let scored = res.and_then(|out| {
                let rep = evaluate(&out.solution.phi, &ds.phi_star)?;
                Ok((rep.subr2, rep.avg_abs_corr, rep.cosines, describe(&out)))
            });
            cell(m, scored)
        })
        .collect()
}

/// Run a suite over `seeds`. Failures are recorded per cell.
///
/// `sizes` overrides the suite's sample sizes when given.
pub fn run_suite(suite: Suite, seeds: &[u64], sizes: Option<&[usize]>) -> Vec<CellResult> {
    let sizes = sizes.map(<[usize]>::to_vec).unwrap_or_else(|| suite.sample_sizes());
    let mut jobs = Vec::new();
    for problem in suite.problems() {
        for &n in &sizes {
            for &seed in seeds {
                jobs.push(Job { problem: problem.clone(), n, seed });
            }
        }
    }
    jobs.par_iter().map(|j| run_job(suite, j)).collect::<Vec<_>>().into_iter().flatten().collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Mean and sample standard deviation over seeds for each (problem, N, method).
pub fn summarize(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Suite, String, usize, String)> = Vec::new();
    for c in cells {
        let k = (c.suite, c.problem.clone(), c.n, c.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(suite, problem, n, method)| {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.suite == suite && c.problem == problem && c.n == n && c.method == method)
                .collect();
            let ok: Vec<&&CellResult> = group.iter().filter(|c| c.error.is_none()).collect();
            let (mean_subr2, std_subr2) = mean_std(&ok.iter().map(|c| c.subr2).collect::<Vec<_>>());
            let (mean_avg_abs_corr, _) = mean_std(&ok.iter().map(|c| c.avg_abs_corr).collect::<Vec<_>>());
            SummaryRow {
                suite,
                problem,
                method,
                n,
                count: ok.len(),
                failures: group.len() - ok.len(),
                mean_subr2,
                std_subr2,
                mean_avg_abs_corr,
                detail: group.first().map(|c| c.detail.clone()).unwrap_or_default(),
            }
        })
        .collect()
}
