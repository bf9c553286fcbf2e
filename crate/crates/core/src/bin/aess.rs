use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aess::dynamics::{self, Observables};
use aess::ensemble::{fit_scaling, run_ensemble, FitKind, RunConfig};
use aess::ep::{self, find_wc, pt_scan, scan_w, PerturbationKind, PtScanResult, WcOptions};
use aess::exec::init_thread_pool_from_env;
use aess::format::{provenance_line, sci};
use aess::model::{Model, ModelTag};
use aess::sat::{self, filter_by_solution_count, generate_planted, HidingScheme, PlantedParams};
use aess::spectral::eigen::DEFAULT_SIGMA;
use aess::spectral::{analyze_point, decompose, OverlapReport, PointMeta, SolveMode, SolveOptions};
use aess::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "aess", version, about = "Steady and metastable structure of dissipative state preparation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted 3SAT instance in DIMACS format.
    Gen(GenArgs),
    /// Overlap report of one generator.
    Spectrum(SpectrumArgs),
    /// Gap and overlap along a W grid.
    Scanw(ScanArgs),
    /// Locate the critical jump strength.
    Wc(WcArgs),
    /// Perturbed eigenvalue pair around W_c.
    Ptscan(PtArgs),
    /// Time evolution from the maximally mixed state.
    Evolve(EvolveArgs),
    /// Batch run from a JSON config.
    Ensemble(EnsembleArgs),
    /// Fit a scaling law to two CSV columns.
    Fit(FitArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep drawing until the instance has exactly one solution.
    #[arg(long, conflicts_with = "solutions")]
    unique: bool,
    /// Keep drawing until the instance has exactly this many solutions.
    #[arg(long)]
    solutions: Option<u64>,
    #[arg(long, default_value_t = sat::SAT_THRESHOLD_RATIO)]
    ratio: f64,
    #[arg(long, default_value_t = sat::DEFAULT_P0)]
    p0: f64,
    #[arg(long, default_value = "balanced")]
    scheme: HidingScheme,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    model: ModelTag,
    /// DIMACS instance for the SAT models.
    #[arg(short, long)]
    instance: Option<PathBuf>,
    /// Chain length for the instance-free models.
    #[arg(long)]
    n: Option<usize>,
    /// Transverse field of `sat3-hx`.
    #[arg(long)]
    h: Option<f64>,
    /// dense, auto or shift-invert.
    #[arg(long, default_value = "auto")]
    solver: String,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
}

impl ModelArgs {
    fn mode(&self) -> Result<SolveMode> {
        match self.solver.as_str() {
            "dense" => Ok(SolveMode::Dense),
            "auto" => Ok(SolveMode::Auto { k: self.k }),
            "shift-invert" => Ok(SolveMode::ShiftInvert {
                k: self.k,
                sigma: self.sigma,
            }),
            s => Err(Error::InvalidParams(format!("unknown solver {s:?}"))),
        }
    }

    fn load(&self) -> Result<Model> {
        if self.model.needs_instance() {
            let path = self
                .instance
                .as_ref()
                .ok_or_else(|| Error::InvalidParams(format!("model {} needs --instance", self.model)))?;
            let inst = sat::parse_dimacs(&fs::read_to_string(path)?)?;
            Model::from_tag(self.model, inst.num_vars(), Some(&inst), self.h, None)
        } else {
            let n = self
                .n
                .ok_or_else(|| Error::InvalidParams(format!("model {} needs --n", self.model)))?;
            Model::from_tag(self.model, n, None, None, None)
        }
    }

    fn provenance(&self, extra: &[(&str, String)]) -> String {
        let mut fields = vec![("model", self.model.to_string())];
        if let Some(p) = &self.instance {
            fields.push(("instance", p.display().to_string()));
        }
        if let Some(n) = self.n {
            fields.push(("N", n.to_string()));
        }
        if let Some(h) = self.h {
            fields.push(("h", sci(h)));
        }
        fields.push(("solver", self.solver.clone()));
        fields.extend(extra.iter().cloned());
        provenance_line(&fields)
    }
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    /// CSV output (stdout if absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also export the generator in Matrix Market format.
    #[arg(long)]
    mtx: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScanArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    w_min: f64,
    #[arg(long, default_value_t = 1.5)]
    w_max: f64,
    #[arg(long, default_value_t = 31)]
    steps: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WcArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = ep::DEFAULT_BRACKET[0])]
    lo: f64,
    #[arg(long, default_value_t = ep::DEFAULT_BRACKET[1])]
    hi: f64,
    #[arg(long, default_value_t = ep::DEFAULT_WC_TOL)]
    tol: f64,
    /// JSON output (stdout if absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PtArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "lowering")]
    kind: PerturbationKind,
    /// Critical strength; located with the default bracket if absent.
    #[arg(long)]
    wc: Option<f64>,
    /// Comma-separated perturbation strengths (default: +-1e-4..1e-2).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    deltas: Option<Vec<f64>>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    #[arg(long, default_value_t = 20.0)]
    t_max: f64,
    #[arg(long, default_value_t = 101)]
    samples: usize,
    /// spectral or rk4.
    #[arg(long, default_value = "spectral")]
    method: String,
    /// RK4 step (default: the stability bound).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the per-instance CSV path of the config.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides the summary CSV path of the config.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value = "N")]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(long)]
    kind: FitKind,
    /// Keep only rows whose `W` column equals this value.
    #[arg(long)]
    w: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn csv_text(provenance: &str, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{provenance}\n{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// One-line human summary on stderr; stdout carries only data.
fn summary(line: String) {
    eprintln!("{line}");
}

fn meta(model: &Model) -> PointMeta {
    PointMeta {
        model: model.tag.to_string(),
        n: model.n,
        seed: model.seed,
    }
}

fn gen(a: &GenArgs) -> Result<()> {
    let params = PlantedParams {
        n_vars: a.n,
        ratio: a.ratio,
        p0: a.p0,
        scheme: a.scheme,
    };
    let target = if a.unique { Some(1) } else { a.solutions };
    let (inst, seed) = match target {
        Some(t) => {
            let f = filter_by_solution_count(&params, t, a.seed, sat::DEFAULT_MAX_ATTEMPTS)?;
            (f.instance, f.seed)
        }
        None => (generate_planted(&params, a.seed)?, a.seed),
    };
    write_out(a.output.as_deref(), &sat::serialize_dimacs(&inst))?;
    summary(format!("generated N={} M={} seed={seed}", inst.num_vars(), inst.clauses().len()),
    );
    Ok(())
}

fn spectrum(a: &SpectrumArgs) -> Result<()> {
    let model = a.model.load()?;
    let g = model.generator(a.w)?;
    if let Some(p) = &a.mtx {
        let mut f = std::io::BufWriter::new(fs::File::create(p)?);
        g.write_matrix_market(&mut f)?;
        f.flush()?;
    }
    let (rep, _) = analyze_point(&g, &SolveOptions::with_mode(a.model.mode()?), &meta(&model))?;
    let text = csv_text(
        &a.model.provenance(&[("W", sci(a.w))]),
        OverlapReport::CSV_HEADER,
        [rep.csv_row()],
    );
    write_out(a.output.as_deref(), &text)?;
    summary(format!("{} N={} W={}: delta={} nu2={}", rep.model, rep.n, sci(rep.w), sci(rep.delta), sci(rep.nu2)),
    );
    Ok(())
}

fn scanw(a: &ScanArgs) -> Result<()> {
    if a.steps < 1 || a.w_max < a.w_min {
        return Err(Error::InvalidParams("need steps >= 1 and w_max >= w_min".into()));
    }
    let model = a.model.load()?;
    let grid: Vec<f64> = if a.steps == 1 {
        vec![a.w_min]
    } else {
        (0..a.steps)
            .map(|i| a.w_min + (a.w_max - a.w_min) * i as f64 / (a.steps - 1) as f64)
            .collect()
    };
    let reports = scan_w(&model, &grid, &SolveOptions::with_mode(a.model.mode()?))?;
    let text = csv_text(
        &a.model.provenance(&[("w_min", sci(a.w_min)), ("w_max", sci(a.w_max)), ("steps", a.steps.to_string())]),
        ep::SCAN_CSV_HEADER,
        reports.iter().map(ep::scan_csv_row),
    );
    write_out(a.output.as_deref(), &text)?;
    summary(format!("{} W points of {}", reports.len(), model.tag));
    Ok(())
}

fn wc(a: &WcArgs) -> Result<()> {
    let model = a.model.load()?;
    let opts = WcOptions {
        bracket: [a.lo, a.hi],
        tol: a.tol,
        mode: a.model.mode()?,
        ..Default::default()
    };
    let report = find_wc(&model, &opts)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_out(a.output.as_deref(), &json)?;
    summary(format!("{} N={}: W_c = {} ({} bisection steps)", model.tag, model.n, sci(report.w_c), report.iterations),
    );
    Ok(())
}

fn ptscan(a: &PtArgs) -> Result<()> {
    let model = a.model.load()?;
    let mode = a.model.mode()?;
    let w_c = match a.wc {
        Some(w) => w,
        None => {
            find_wc(
                &model,
                &WcOptions {
                    mode,
                    ..Default::default()
                },
            )?
            .w_c
        }
    };
    let deltas = a.deltas.clone().unwrap_or_else(ep::default_delta_grid);
    let scan = pt_scan(&model, w_c, a.kind, &deltas, mode)?;
    let text = csv_text(
        &a.model.provenance(&[("W_c", sci(w_c)), ("kind", format!("{:?}", a.kind).to_lowercase())]),
        PtScanResult::CSV_HEADER,
        scan.csv_rows(),
    );
    write_out(a.output.as_deref(), &text)?;
    let slope = scan.splitting_exponent(|d| d < 0.0).unwrap_or(f64::NAN);
    summary(format!("{} points at W_c = {}; splitting exponent {slope:.4}", scan.points.len(), sci(w_c)),
    );
    Ok(())
}

fn evolve(a: &EvolveArgs) -> Result<()> {
    let model = a.model.load()?;
    let g = model.generator(a.w)?;
    let obs = Observables::for_model(&model)?;
    let rho0 = model.basis.maximally_mixed();
    let samples = a.samples.max(2);
    let times: Vec<f64> = (0..samples).map(|i| a.t_max * i as f64 / (samples - 1) as f64).collect();
    let traj = match a.method.as_str() {
        "spectral" => {
            let dec = decompose(&g, &SolveOptions::with_mode(SolveMode::Dense))?;
            dynamics::evolve_spectral(&dec, &obs, &rho0, &times)?
        }
        "rk4" => {
            let dt = a.dt.unwrap_or_else(|| dynamics::max_stable_step(&g));
            dynamics::evolve_rk4_at(&g, &obs, &rho0, dt, &times)?
        }
        m => return Err(Error::InvalidParams(format!("unknown method {m:?}"))),
    };
    let text = csv_text(
        &a.model.provenance(&[("W", sci(a.w)), ("method", a.method.clone()), ("t_max", sci(a.t_max))]),
        dynamics::Trajectory::CSV_HEADER,
        traj.csv_rows(),
    );
    write_out(a.output.as_deref(), &text)?;
    summary(format!("{} samples to t = {}; final fidelity {}", traj.len(), sci(a.t_max), sci(*traj.fidelity.last().unwrap())),
    );
    Ok(())
}

fn ensemble(a: &EnsembleArgs) -> Result<()> {
    let mut cfg: RunConfig = serde_json::from_str(&fs::read_to_string(&a.config)?)?;
    if a.csv.is_some() || a.summary.is_some() {
        let out = cfg.output.get_or_insert(aess::ensemble::OutputPaths { csv: None, summary: None });
        if a.csv.is_some() {
            out.csv = a.csv.clone();
        }
        if a.summary.is_some() {
            out.summary = a.summary.clone();
        }
    }
    let run = run_ensemble(&cfg)?;
    match &cfg.output {
        Some(paths) if paths.csv.is_some() || paths.summary.is_some() => run.write_outputs(paths)?,
        _ => print!("{}", run.summary_csv()),
    }
    let failures: usize = run.summary.rows.iter().map(|r| r.failures).sum::<usize>() / cfg.w_list.len();
    eprintln!("{} tasks, {failures} failed", run.results.len());
    if let Some(kind) = cfg.fit {
        for &w in &cfg.w_list {
            let (x, y) = run.summary.series(w, aess::ensemble::SummaryColumn::Delta);
            match fit_scaling(&x, &y, kind) {
                Ok(f) => eprintln!("W={}: mean delta fit {kind} params {:?} R2 {:.4}", sci(w), f.params, f.r2),
                Err(e) => eprintln!("W={}: {e}", sci(w)),
            }
        }
    }
    Ok(())
}

fn fit(a: &FitArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::InvalidParams("empty CSV".into()))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::InvalidParams(format!("no column {name:?}")))
    };
    let (ix, iy) = (col(&a.x)?, col(&a.y)?);
    let iw = match a.w {
        Some(_) => Some(col("W")?),
        None => None,
    };
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidParams(format!("not a number: {s:?}")))
    };
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if let (Some(iw), Some(w)) = (iw, a.w) {
            if parse(f[iw])? != w {
                continue;
            }
        }
        x.push(parse(f.get(ix).copied().unwrap_or(""))?);
        y.push(parse(f.get(iy).copied().unwrap_or(""))?);
    }
    let result = fit_scaling(&x, &y, a.kind)?;
    write_out(a.output.as_deref(), &(serde_json::to_string_pretty(&result)? + "\n"))?;
    summary(format!("{} fit of {} points: params {:?}, R2 {:.6}", a.kind, x.len(), result.params, result.r2),
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Scanw(a) => scanw(a),
        Command::Wc(a) => wc(a),
        Command::Ptscan(a) => ptscan(a),
        Command::Evolve(a) => evolve(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Fit(a) => fit(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_thread_pool_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
