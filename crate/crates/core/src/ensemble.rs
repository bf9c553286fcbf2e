//! Batch runs over random instances and sizes, aggregation and scaling fits.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ep::{find_wc, WcOptions};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::format::{provenance_line, sci};
use crate::model::{Model, ModelTag};
use crate::sat::{filter_by_solution_count, generate_planted, HidingScheme, PlantedParams, DEFAULT_MAX_ATTEMPTS, DEFAULT_P0, SAT_THRESHOLD_RATIO};
use crate::spectral::{analyze_point, OverlapReport, PointMeta, SolveMode, SolveOptions};

/// Size caps for ensemble runs.
pub const MAX_CLASSICAL_N: usize = 14;
pub const MAX_QUANTUM_N: usize = 7;
pub const MAX_AKLT_N: usize = 5;

fn default_instances() -> usize {
    1
}
fn default_w_list() -> Vec<f64> {
    vec![1.0]
}
fn default_p0() -> f64 {
    DEFAULT_P0
}
fn default_ratio() -> f64 {
    SAT_THRESHOLD_RATIO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Per-instance rows.
    pub csv: Option<PathBuf>,
    /// Per-size summary.
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelTag,
    pub n_list: Vec<usize>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    /// Keep only instances with exactly this many solutions (1 or 2).
    #[serde(default)]
    pub solutions: Option<u64>,
    #[serde(default = "default_w_list")]
    pub w_list: Vec<f64>,
    #[serde(default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub scheme: HidingScheme,
    #[serde(default)]
    pub seed_base: u64,
    /// Field strength of `sat3-hx`.
    #[serde(default)]
    pub h: Option<f64>,
    /// Also locate `W_c` for every instance.
    #[serde(default)]
    pub compute_wc: bool,
    #[serde(default)]
    pub fit: Option<FitKind>,
    #[serde(default)]
    pub mode: SolveMode,
    #[serde(default)]
    pub output: Option<OutputPaths>,
}

impl RunConfig {
    pub fn new(model: ModelTag, n_list: Vec<usize>, instances: usize) -> Self {
        RunConfig {
            model,
            n_list,
            instances,
            solutions: None,
            w_list: default_w_list(),
            p0: DEFAULT_P0,
            ratio: SAT_THRESHOLD_RATIO,
            scheme: HidingScheme::default(),
            seed_base: 0,
            h: None,
            compute_wc: false,
            fit: None,
            mode: SolveMode::default(),
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.instances == 0 {
            return bad("instances must be at least 1".into());
        }
        if self.n_list.is_empty() || self.w_list.is_empty() {
            return bad("n_list and w_list must be nonempty".into());
        }
        if self.w_list.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("W values must be finite and non-negative".into());
        }
        if self.model == ModelTag::Sat3Hx && self.h.is_none() {
            return bad("sat3-hx needs h".into());
        }
        let cap = match self.model {
            ModelTag::Sat3Classical | ModelTag::FerroChain => MAX_CLASSICAL_N,
            ModelTag::Sat3Quantum | ModelTag::Sat3Hx => MAX_QUANTUM_N,
            ModelTag::Aklt => MAX_AKLT_N,
            ModelTag::XxDephasing => crate::quantum::MAX_XX_SPINS,
        };
        if let Some(&n) = self.n_list.iter().find(|&&n| n > cap) {
            return Err(Error::DimensionOverflow { n, max: cap });
        }
        Ok(())
    }

    /// Comment line carrying every parameter of the run.
    pub fn provenance(&self) -> Result<String> {
        Ok(provenance_line(&[("config", serde_json::to_string(self)?)]))
    }

    /// Instances per size; deterministic models have a single one.
    fn instances_for_model(&self) -> usize {
        if self.model.needs_instance() {
            self.instances
        } else {
            1
        }
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of instance `k` at size `n`; independent of the other sizes in a run.
pub fn instance_seed(base: u64, n: usize, k: usize) -> u64 {
    base ^ splitmix64(splitmix64(n as u64) ^ k as u64)
}

/// Outcome of one `(N, k)` task.
#[derive(Debug, Clone)]
pub struct InstanceResult {
    pub n: usize,
    pub k: usize,
    /// Seed of the accepted instance.
    pub seed: Option<u64>,
    pub reports: Vec<OverlapReport>,
    pub w_c: Option<f64>,
    pub error: Option<String>,
}

fn build_model(cfg: &RunConfig, n: usize, k: usize) -> Result<Model> {
    if !cfg.model.needs_instance() {
        return Model::from_tag(cfg.model, n, None, None, None);
    }
    let params = PlantedParams {
        n_vars: n,
        ratio: cfg.ratio,
        p0: cfg.p0,
        scheme: cfg.scheme,
    };
    let first = instance_seed(cfg.seed_base, n, k);
    let (inst, seed) = match cfg.solutions {
        Some(target) => {
            let f = filter_by_solution_count(&params, target, first, DEFAULT_MAX_ATTEMPTS)?;
            (f.instance, f.seed)
        }
        None => (generate_planted(&params, first)?, first),
    };
    Model::from_tag(cfg.model, n, Some(&inst), cfg.h, Some(seed))
}

fn run_task(cfg: &RunConfig, n: usize, k: usize) -> InstanceResult {
    let mut out = InstanceResult {
        n,
        k,
        seed: None,
        reports: Vec::new(),
        w_c: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let model = build_model(cfg, n, k)?;
        out.seed = model.seed;
        let meta = PointMeta {
            model: cfg.model.to_string(),
            n,
            seed: model.seed,
        };
        let opts = SolveOptions::with_mode(cfg.mode);
        for &w in &cfg.w_list {
            let g = model.generator(w)?;
            out.reports.push(analyze_point(&g, &opts, &meta)?.0);
        }
        if cfg.compute_wc {
            out.w_c = Some(find_wc(&model, &WcOptions::default())?.w_c);
        }
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("{} N={n} k={k}: {e}", cfg.model);
        out.error = Some(e.to_string());
    }
    out
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub w: f64,
    pub count: usize,
    pub failures: usize,
    pub mean_delta: f64,
    pub std_delta: f64,
    pub mean_one_minus_nu2: f64,
    pub std_one_minus_nu2: f64,
    pub mean_wc: f64,
    pub std_wc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub rows: Vec<SummaryRow>,
}

impl EnsembleSummary {
    pub const CSV_HEADER: &'static str =
        "N,W,count,failures,mean_delta,std_delta,mean_one_minus_nu2,std_one_minus_nu2,mean_wc,std_wc";

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.n,
                    sci(r.w),
                    r.count,
                    r.failures,
                    sci(r.mean_delta),
                    sci(r.std_delta),
                    sci(r.mean_one_minus_nu2),
                    sci(r.std_one_minus_nu2),
                    sci(r.mean_wc),
                    sci(r.std_wc)
                )
            })
            .collect()
    }

    /// `(N, column)` pairs at jump strength `w`.
    pub fn series(&self, w: f64, column: SummaryColumn) -> (Vec<f64>, Vec<f64>) {
        self.rows
            .iter()
            .filter(|r| r.w == w)
            .map(|r| {
                let y = match column {
                    SummaryColumn::Delta => r.mean_delta,
                    SummaryColumn::OneMinusNu2 => r.mean_one_minus_nu2,
                    SummaryColumn::Wc => r.mean_wc,
                };
                (r.n as f64, y)
            })
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryColumn {
    Delta,
    OneMinusNu2,
    Wc,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub results: Vec<InstanceResult>,
    pub summary: EnsembleSummary,
    pub provenance: String,
}

impl EnsembleRun {
    /// Per-instance CSV, sorted by `(N, k, W)`.
    pub fn instance_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.provenance);
        s.push('\n');
        s.push_str(OverlapReport::CSV_HEADER);
        s.push('\n');
        for r in &self.results {
            for rep in &r.reports {
                s.push_str(&rep.csv_row());
                s.push('\n');
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.provenance);
        s.push('\n');
        s.push_str(EnsembleSummary::CSV_HEADER);
        s.push('\n');
        for row in self.summary.csv_rows() {
            s.push_str(&row);
            s.push('\n');
        }
        s
    }

    /// Writes the CSV files named in the config.
    pub fn write_outputs(&self, paths: &OutputPaths) -> Result<()> {
        if let Some(p) = &paths.csv {
            std::fs::File::create(p)?.write_all(self.instance_csv().as_bytes())?;
        }
        if let Some(p) = &paths.summary {
            std::fs::File::create(p)?.write_all(self.summary_csv().as_bytes())?;
        }
        Ok(())
    }
}

pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleRun> {
    run_ensemble_with(Execution::default(), cfg)
}

pub fn run_ensemble_with(exec: Execution, cfg: &RunConfig) -> Result<EnsembleRun> {
    cfg.validate()?;
    let per_n = cfg.instances_for_model();
    let tasks: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..per_n).map(move |k| (n, k)))
        .collect();
    let mut results = exec::map(exec, &tasks, |&(n, k)| run_task(cfg, n, k));
    results.sort_by_key(|r| (r.n, r.k));

    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let group: Vec<&InstanceResult> = results.iter().filter(|r| r.n == n).collect();
        let failures = group.iter().filter(|r| r.error.is_some()).count();
        if 2 * failures > group.len() {
            return Err(Error::EnsembleAborted {
                n,
                failures,
                total: group.len(),
            });
        }
        let ok: Vec<&&InstanceResult> = group.iter().filter(|r| r.error.is_none()).collect();
        let wcs: Vec<f64> = ok.iter().filter_map(|r| r.w_c).collect();
        let (mean_wc, std_wc) = mean_std(&wcs);
        for (wi, &w) in cfg.w_list.iter().enumerate() {
            let deltas: Vec<f64> = ok.iter().map(|r| r.reports[wi].delta).collect();
            let gaps: Vec<f64> = ok.iter().map(|r| 1.0 - r.reports[wi].nu2).collect();
            let (mean_delta, std_delta) = mean_std(&deltas);
            let (mean_gap, std_gap) = mean_std(&gaps);
            rows.push(SummaryRow {
                n,
                w,
                count: ok.len(),
                failures,
                mean_delta,
                std_delta,
                mean_one_minus_nu2: mean_gap,
                std_one_minus_nu2: std_gap,
                mean_wc,
                std_wc,
            });
        }
    }
    Ok(EnsembleRun {
        results,
        summary: EnsembleSummary { rows },
        provenance: cfg.provenance()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    /// `a e^{-b N}`.
    Exponential,
    /// `a N^{-b}`.
    Power,
    /// `a N^{-b} + c`.
    ShiftedPower,
}

impl FromStr for FitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(FitKind::Exponential),
            "power" => Ok(FitKind::Power),
            "shifted-power" => Ok(FitKind::ShiftedPower),
            _ => Err(Error::InvalidParams(format!("unknown fit kind {s:?}"))),
        }
    }
}

impl fmt::Display for FitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitKind::Exponential => "exponential",
            FitKind::Power => "power",
            FitKind::ShiftedPower => "shifted-power",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: FitKind,
    /// `[a, b]` or `[a, b, c]`.
    pub params: Vec<f64>,
    /// Euclidean norm of the residuals in the space the fit minimizes.
    pub residual_norm: f64,
    /// Coefficient of determination in that same space.
    pub r2: f64,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            FitKind::Exponential => p[0] * (-p[1] * x).exp(),
            FitKind::Power => p[0] * x.powf(-p[1]),
            FitKind::ShiftedPower => p[0] * x.powf(-p[1]) + p[2],
        }
    }

    /// Slope of `log y` in the linearizing variable (`N` or `log N`).
    pub fn log_slope(&self) -> f64 {
        -self.params[1]
    }
}

/// Ordinary least squares `y = p + q x`; returns `(p, q, residual norm, R^2)`.
fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let q = crate::ep::linear_slope(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let p = my - q * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - p - q * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some((p, q, ss_res.sqrt(), r2))
}

/// For fixed `b`, the best `(a, c)` of `a x^{-b} + c` and the residual norm.
fn shifted_power_inner(x: &[f64], y: &[f64], b: f64) -> Option<(f64, f64, f64)> {
    let u: Vec<f64> = x.iter().map(|v| v.powf(-b)).collect();
    let (c, a, res, _) = linear_fit(&u, y)?;
    Some((a, c, res))
}

const GOLDEN: f64 = 0.618_033_988_749_895;

pub fn fit_scaling(x: &[f64], y: &[f64], kind: FitKind) -> Result<FitResult> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(Error::FitFailure(format!("need at least 4 points, got {}", x.len().min(y.len()))));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::FitFailure("non-finite data".into()));
    }
    match kind {
        FitKind::Exponential | FitKind::Power => {
            if y.iter().any(|v| *v <= 0.0) || (kind == FitKind::Power && x.iter().any(|v| *v <= 0.0)) {
                return Err(Error::FitFailure("log-space fit needs positive data".into()));
            }
            let lx: Vec<f64> = match kind {
                FitKind::Power => x.iter().map(|v| v.ln()).collect(),
                _ => x.to_vec(),
            };
            let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
            let (p, q, res, r2) = linear_fit(&lx, &ly).ok_or_else(|| Error::FitFailure("degenerate abscissae".into()))?;
            Ok(FitResult {
                kind,
                params: vec![p.exp(), -q],
                residual_norm: res,
                r2,
            })
        }
        FitKind::ShiftedPower => {
            if x.iter().any(|v| *v <= 0.0) {
                return Err(Error::FitFailure("power law needs positive abscissae".into()));
            }
            let cost = |b: f64| shifted_power_inner(x, y, b).map_or(f64::INFINITY, |t| t.2);
            // Coarse scan, then golden-section refinement around the best node.
            let grid: Vec<f64> = (1..=400).map(|k| 0.025 * k as f64).collect();
            let best = grid
                .iter()
                .copied()
                .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
                .expect("nonempty grid");
            let (mut lo, mut hi) = ((best - 0.025).max(1e-6), best + 0.025);
            let mut iter = 0;
            while hi - lo > 1e-10 {
                let m1 = hi - GOLDEN * (hi - lo);
                let m2 = lo + GOLDEN * (hi - lo);
                if cost(m1) < cost(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
                iter += 1;
                if iter > 200 {
                    return Err(Error::FitFailure("golden-section search did not converge".into()));
                }
            }
            let b = 0.5 * (lo + hi);
            let (a, c, res) = shifted_power_inner(x, y, b).ok_or_else(|| Error::FitFailure("degenerate abscissae".into()))?;
            let my = y.iter().sum::<f64>() / y.len() as f64;
            let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
            Ok(FitResult {
                kind,
                params: vec![a, b, c],
                residual_norm: res,
                r2: if ss_tot > 0.0 { 1.0 - res * res / ss_tot } else { 1.0 },
            })
        }
    }
}
