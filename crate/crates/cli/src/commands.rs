use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use kdm::cv::{run_cv, ScoreRule};
use kdm::methods::{
    fit_from_cv, fit_rff, fit_uniform_nystrom, fit_uniform_rff, fit_varrff, fit_vmkl, matern32_anchor,
    varrff_config, vmkl_config, FitConfig, FitOutput, MethodTag,
};
use kdm::metrics::evaluate;
use kdm::outer::{Ablation, TraceRow};
use kdm::problems::{BenchmarkDataset, DatasetMeta, Problem};
use kdm::reproduce::{run_suite, summarize, Suite, SEEDS};
use kdm::{KernelSpec, Mat};
use serde::{Deserialize, Serialize};

use crate::io::{append_rows, ensure_dir, fingerprint, fmt_f64, read_json, read_matrix, write_json, write_matrix, write_rows};
use crate::manifest::ManifestBuilder;
use crate::UsageError;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemName {
    Ou1d,
    Ou2d,
    Ou3d,
    Ou,
    Dw1d,
    AsymDw,
    Circle,
    Mdlike,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub problem: ProblemName,
    /// Rate of the second coordinate for ou2d.
    #[arg(long, default_value_t = 4.0)]
    pub alpha_y: f64,
    /// Rate for ou1d.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Comma-separated rates for `ou`.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub d_slow: usize,
    #[arg(long, default_value_t = 4)]
    pub d_fast: usize,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl GenArgs {
    fn problem(&self) -> Result<Problem> {
        Ok(match self.problem {
            ProblemName::Ou1d => Problem::Ou { alphas: vec![self.alpha] },
            ProblemName::Ou2d => Problem::ou2d(self.alpha_y),
            ProblemName::Ou3d => Problem::ou3d(),
            ProblemName::Ou => {
                if self.alphas.is_empty() {
                    return Err(UsageError("--alphas is required for --problem ou".into()).into());
                }
                Problem::Ou { alphas: self.alphas.clone() }
            }
            ProblemName::Dw1d => Problem::DoubleWell { asymmetric: false },
            ProblemName::AsymDw => Problem::DoubleWell { asymmetric: true },
            ProblemName::Circle => Problem::Circle { noise: self.noise },
            ProblemName::Mdlike => Problem::MdLike { d_slow: self.d_slow, d_fast: self.d_fast },
        })
    }
}

pub fn gen(args: &GenArgs) -> Result<String> {
    let problem = args.problem()?;
    let ds = BenchmarkDataset::generate(&problem, args.n, args.seed)?;
    let dir = ensure_dir(&args.out)?;
    let mut m = ManifestBuilder::new("gen", args, Some(args.seed));
    write_matrix(&m.output(dir.join("x.csv")), "x", &ds.x)?;
    write_matrix(&m.output(dir.join("phi_star.csv")), "phi_star_", &ds.phi_star)?;
    write_json(&m.output(dir.join("dataset.json")), &ds.meta())?;
    m.finish(&dir)
}

/// A dataset directory written by `gen`.
pub struct LoadedData {
    pub meta: DatasetMeta,
    pub x: Mat,
    pub phi_star: Mat,
}

pub fn load_data(dir: &Path) -> Result<LoadedData> {
    let meta: DatasetMeta = read_json(&dir.join("dataset.json"))?;
    let x = read_matrix(&dir.join("x.csv"))?;
    let phi_star = read_matrix(&dir.join("phi_star.csv"))?;
    if x.shape() != (meta.n, meta.d) || phi_star.nrows() != meta.n {
        bail!(UsageError(format!("{}: files disagree with dataset.json", dir.display())));
    }
    Ok(LoadedData { meta, x, phi_star })
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RuleArg {
    Eigsum,
    Rayleigh,
    Gap,
}

impl From<RuleArg> for ScoreRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Eigsum => ScoreRule::Eigsum,
            RuleArg::Rayleigh => ScoreRule::Rayleigh,
            RuleArg::Gap => ScoreRule::Gap,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "eigsum")]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// Defaults to the problem's rank.
    #[arg(long)]
    pub r: Option<usize>,
    /// Defaults to the problem's regularization.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 300)]
    pub p_rff: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of `cv_selected.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CvSelection {
    pub rule: RuleArg,
    pub selected: KernelSpec,
    pub median_distance: f64,
    pub per_rule: BTreeMap<String, Option<KernelSpec>>,
    /// Best Matérn-3/2 bandwidth per rule.
    pub matern32_anchor: BTreeMap<String, Option<f64>>,
    pub config: kdm::CvConfig,
}

fn fit_config(meta: &DatasetMeta, r: Option<usize>, lambda: Option<f64>, p_rff: usize, seed: u64) -> FitConfig {
    let mut c = FitConfig::for_problem(&meta.params, seed);
    if let Some(r) = r {
        c.r = r;
    }
    if let Some(l) = lambda {
        c.lambda = l;
    }
    c.p_rff = p_rff;
    c
}

pub fn cv(args: &CvArgs) -> Result<String> {
    let data = load_data(&args.data)?;
    let fc = fit_config(&data.meta, args.r, args.lambda, args.p_rff, args.seed);
    let mut cfg = fc.cv_config();
    cfg.folds = args.folds;
    let res = run_cv(&data.x, &cfg)?;
    let rule: ScoreRule = args.rule.into();
    let selected = res.select(rule)?.spec.clone();

    let dir = ensure_dir(&args.out)?;
    let mut m = ManifestBuilder::new("cv", args, Some(args.seed));
    let mut header: Vec<String> = ["family", "sigma", "sigma_index", "rule", "score", "flagged"].map(String::from).to_vec();
    header.extend((1..=cfg.folds).map(|f| format!("eigsum_fold_{f}")));
    let mut rows = Vec::new();
    for s in &res.scores {
        for rr in ScoreRule::ALL {
            let mut row = vec![
                s.candidate.spec.family.name().to_string(),
                fmt_f64(s.candidate.sigma()),
                s.candidate.sigma_index.to_string(),
                rr.name().to_string(),
                fmt_f64(s.score(rr)),
                s.flagged(rr).to_string(),
            ];
            for f in 0..cfg.folds {
                row.push(s.fold_eigsum.get(f).map(|v| fmt_f64(*v)).unwrap_or_default());
            }
            rows.push(row);
        }
    }
    write_rows(&m.output(dir.join("cv_scores.csv")), &header, &rows)?;
    let per_rule = ScoreRule::ALL.iter().map(|r| (r.name().to_string(), res.select(*r).ok().map(|c| c.spec.clone()))).collect();
    let matern32_anchor = ScoreRule::ALL.iter().map(|r| (r.name().to_string(), matern32_anchor(&res, *r).ok())).collect();
    let sel = CvSelection {
        rule: args.rule,
        selected,
        median_distance: res.median_distance,
        per_rule,
        matern32_anchor,
        config: cfg,
    };
    write_json(&m.output(dir.join("cv_selected.json")), &sel)?;
    m.finish(&dir)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    CvRff,
    UniformNystrom,
    UniformRff,
    Vmkl,
    Varrff,
}

impl From<MethodArg> for MethodTag {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::CvRff => MethodTag::CvRff,
            MethodArg::UniformNystrom => MethodTag::UniformNystrom,
            MethodArg::UniformRff => MethodTag::UniformRff,
            MethodArg::Vmkl => MethodTag::Vmkl,
            MethodArg::Varrff => MethodTag::Varrff,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationArg {
    Subonly,
    Eigonly,
    Combined,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Output directory of a previous `cv` run (cv-rff, varrff).
    #[arg(long)]
    pub cv: Option<PathBuf>,
    /// Selection rule when CV runs inline or when reading a CV output.
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    /// VarRFF anchor bandwidth; overrides the CV output.
    #[arg(long)]
    pub sigma_cv: Option<f64>,
    #[arg(long, value_enum, default_value = "combined")]
    pub ablation: AblationArg,
    /// Generator-residual weight for vmkl.
    #[arg(long, default_value_t = 0.0)]
    pub zeta: f64,
    /// Outer-loop iterations (vmkl, varrff).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 300)]
    pub p_rff: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of `fit.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitRecord {
    pub method: MethodTag,
    pub problem: String,
    pub seed: u64,
    pub spec: Option<KernelSpec>,
    pub sigma: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    pub mu: Vec<f64>,
    pub rank: usize,
    /// Fingerprint of the sample matrix the fit was computed on.
    pub data_fingerprint: String,
    /// Fingerprint of the written `phi.csv`.
    pub phi_fingerprint: String,
}

fn cv_selection(args: &FitArgs) -> Result<Option<CvSelection>> {
    args.cv.as_ref().map(|d| read_json::<CvSelection>(&d.join("cv_selected.json"))).transpose()
}

fn run_fit(args: &FitArgs, data: &LoadedData, fc: &FitConfig) -> Result<FitOutput> {
    let x = &data.x;
    let sel = cv_selection(args)?;
    Ok(match args.method {
        MethodArg::CvRff => match sel {
            Some(sel) => {
                let spec = match args.rule {
                    Some(r) => sel.per_rule.get(ScoreRule::from(r).name()).cloned().flatten().ok_or_else(|| {
                        UsageError(format!("CV output has no selection for {}", ScoreRule::from(r).name()))
                    })?,
                    None => sel.selected,
                };
                let solution = fit_rff(x, &spec, fc)?;
                FitOutput {
                    method: MethodTag::CvRff,
                    solution,
                    sigma: vec![spec.sigma.scale()],
                    spec: Some(spec),
                    beta: None,
                    trace: Vec::new(),
                }
            }
            None => {
                let rule = args.rule.unwrap_or(RuleArg::Eigsum).into();
                let res = run_cv(x, &fc.cv_config())?;
                fit_from_cv(x, &res, rule, fc)?
            }
        },
        MethodArg::UniformNystrom => fit_uniform_nystrom(x, fc)?,
        MethodArg::UniformRff => fit_uniform_rff(x, fc)?,
        MethodArg::Vmkl => {
            let ablation = match args.ablation {
                AblationArg::Subonly => Ablation::SubOnly,
                AblationArg::Eigonly => Ablation::EigOnly,
                AblationArg::Combined => Ablation::Combined,
            };
            let mut oc = vmkl_config(ablation, fc);
            if args.zeta > 0.0 {
                oc.zeta_pde = args.zeta;
            }
            if let Some(t) = args.iters {
                oc.iters = t;
            }
            fit_vmkl(x, &oc, Some(&data.meta.params), fc)?
        }
        MethodArg::Varrff => {
            let sigma_cv = match (args.sigma_cv, sel) {
                (Some(s), _) => s,
                (None, Some(sel)) => {
                    let rule = ScoreRule::from(args.rule.unwrap_or(sel.rule));
                    sel.matern32_anchor.get(rule.name()).copied().flatten().ok_or_else(|| {
                        UsageError(format!("CV output has no Matérn-3/2 anchor for {}", rule.name()))
                    })?
                }
                (None, None) => bail!(UsageError("varrff needs --cv or --sigma-cv".into())),
            };
            let mut vc = varrff_config(sigma_cv, fc);
            if let Some(t) = args.iters {
                vc.iters = t;
            }
            fit_varrff(x, &vc)?
        }
    })
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let np = trace.first().map(|t| t.params.len()).unwrap_or(0);
    let mut header: Vec<String> =
        ["iter", "total", "eig", "sub", "rkhs", "pde", "reg", "grad_norm", "fd_fallback"].map(String::from).to_vec();
    header.extend((1..=np).map(|j| format!("param_{j}")));
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|t| {
            let c = &t.components;
            let mut row = vec![t.iter.to_string()];
            row.extend([t.total, c.eig, c.sub, c.rkhs, c.pde, c.reg, t.grad_norm].map(fmt_f64));
            row.push(t.fd_fallback.to_string());
            row.extend(t.params.iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn fit(args: &FitArgs) -> Result<String> {
    let data = load_data(&args.data)?;
    let fc = fit_config(&data.meta, args.r, args.lambda, args.p_rff, args.seed);
    let out = run_fit(args, &data, &fc)?;
    let dir = ensure_dir(&args.out)?;
    let mut m = ManifestBuilder::new("fit", args, Some(args.seed));
    let mu_rows: Vec<Vec<String>> =
        out.solution.mu.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), fmt_f64(*v)]).collect();
    write_rows(&m.output(dir.join("mu.csv")), &["k".into(), "mu".into()], &mu_rows)?;
    write_matrix(&m.output(dir.join("phi.csv")), "phi_", &out.solution.phi)?;
    if !out.trace.is_empty() {
        write_trace(&m.output(dir.join("trace.csv")), &out.trace)?;
    }
    let rec = FitRecord {
        method: out.method,
        problem: data.meta.problem.clone(),
        seed: args.seed,
        spec: out.spec.clone(),
        sigma: out.sigma.clone(),
        beta: out.beta.clone(),
        mu: out.solution.mu.clone(),
        rank: out.solution.rank,
        data_fingerprint: fingerprint(&data.x),
        phi_fingerprint: fingerprint(&out.solution.phi),
    };
    write_json(&m.output(dir.join("fit.json")), &rec)?;
    m.finish(&dir)
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics CSV; rows are appended.
    #[arg(long)]
    pub out: PathBuf,
    /// Method label written to the CSV instead of the fitted method name.
    #[arg(long)]
    pub label: Option<String>,
}

pub fn metric_header(r: usize) -> Vec<String> {
    let mut h: Vec<String> = ["problem", "method", "seed", "subr2", "avg_abs_corr"].map(String::from).to_vec();
    h.extend((1..=r).map(|k| format!("cos_{k}")));
    h
}

pub fn eval(args: &EvalArgs) -> Result<String> {
    let data = load_data(&args.data)?;
    let rec: FitRecord = read_json(&args.fit.join("fit.json"))?;
    let phi = read_matrix(&args.fit.join("phi.csv"))?;
    if phi.nrows() != data.x.nrows() {
        bail!(UsageError(format!("fit has {} rows, dataset has {}", phi.nrows(), data.x.nrows())));
    }
    if rec.data_fingerprint != fingerprint(&data.x) {
        bail!(UsageError("fit was computed on a different sample matrix".into()));
    }
    if rec.phi_fingerprint != fingerprint(&phi) {
        bail!(UsageError("phi.csv does not match fit.json (rows edited or reordered)".into()));
    }
    if phi.ncols() != data.phi_star.ncols() {
        bail!(UsageError(format!("fit has rank {}, reference has {}", phi.ncols(), data.phi_star.ncols())));
    }
    let rep = evaluate(&phi, &data.phi_star)?;
    let mut row = vec![
        data.meta.problem.clone(),
        args.label.clone().unwrap_or_else(|| rec.method.name().to_string()),
        rec.seed.to_string(),
        fmt_f64(rep.subr2),
        fmt_f64(rep.avg_abs_corr),
    ];
    row.extend(rep.cosines.iter().map(|c| fmt_f64(*c)));
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    append_rows(&args.out, &metric_header(rep.cosines.len()), &[row])?;
    let mut m = ManifestBuilder::new("eval", args, Some(rec.seed));
    m.output(args.out.clone());
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    m.finish(dir)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TableArg {
    Table1,
    Table3,
    Table5,
    Table7,
    Scaling,
}

impl From<TableArg> for Suite {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::Table1 => Suite::Table1,
            TableArg::Table3 => Suite::Table3,
            TableArg::Table5 => Suite::Table5,
            TableArg::Table7 => Suite::Table7,
            TableArg::Scaling => Suite::Scaling,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub table: TableArg,
    #[arg(long, value_delimiter = ',', default_values_t = SEEDS)]
    pub seeds: Vec<u64>,
    /// Comma-separated sample sizes replacing the suite's defaults.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn reproduce(args: &ReproduceArgs) -> Result<String> {
    if args.seeds.is_empty() {
        bail!(UsageError("at least one seed is required".into()));
    }
    let suite: Suite = args.table.into();
    let sizes = (!args.n.is_empty()).then_some(args.n.as_slice());
    let cells = run_suite(suite, &args.seeds, sizes);
    let summary = summarize(&cells);
    let dir = ensure_dir(&args.out)?;
    let mut m = ManifestBuilder::new("reproduce", args, args.seeds.first().copied());

    let rmax = cells.iter().map(|c| c.cosines.len()).max().unwrap_or(0);
    let mut header: Vec<String> = ["suite", "problem", "method", "seed", "n", "subr2", "avg_abs_corr"].map(String::from).to_vec();
    header.extend((1..=rmax).map(|k| format!("cos_{k}")));
    header.extend(["detail", "error"].map(String::from));
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut row = vec![
                suite.name().to_string(),
                c.problem.clone(),
                c.method.clone(),
                c.seed.to_string(),
                c.n.to_string(),
                fmt_f64(c.subr2),
                fmt_f64(c.avg_abs_corr),
            ];
            row.extend((0..rmax).map(|k| c.cosines.get(k).map(|v| fmt_f64(*v)).unwrap_or_default()));
            row.push(c.detail.clone());
            row.push(c.error.clone().unwrap_or_default());
            row
        })
        .collect();
    write_rows(&m.output(dir.join(format!("{}_cells.csv", suite.name()))), &header, &rows)?;

    let header: Vec<String> = [
        "suite",
        "problem",
        "method",
        "n",
        "count",
        "failures",
        "mean_subr2",
        "std_subr2",
        "mean_avg_abs_corr",
        "detail",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                suite.name().to_string(),
                s.problem.clone(),
                s.method.clone(),
                s.n.to_string(),
                s.count.to_string(),
                s.failures.to_string(),
                fmt_f64(s.mean_subr2),
                fmt_f64(s.std_subr2),
                fmt_f64(s.mean_avg_abs_corr),
                s.detail.clone(),
            ]
        })
        .collect();
    write_rows(&m.output(dir.join(format!("{}_summary.csv", suite.name()))), &header, &rows)?;
    m.finish(&dir)
}
