//! End-to-end acceptance suite. Runs every criterion, prints one
//! `PASS`/`FAIL` line each and exits nonzero if any failed.
//!
//! `cargo test --test acceptance -- 5 7` runs only criteria 5 and 7.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64 as c64;

use aess::basis::norm;
use aess::classical::build_classical_generator;
use aess::dynamics::{evolve_rk4_at, evolve_spectral, max_stable_step, Observables};
use aess::ensemble::{fit_scaling, run_ensemble, FitKind, RunConfig, SummaryColumn};
use aess::ep::{default_delta_grid, find_wc, pt_scan, PerturbationKind, WcOptions};
use aess::model::{Model, ModelTag};
use aess::quantum::{self, aklt_mps_state, build_aklt_model, lindblad_apply, JumpSet};
use aess::sat::{
    filter_by_solution_count, generate_planted, Clause, Literal, PlantedParams, SatInstance,
};
use aess::sparse::{CscMatrix, GenMatrix, SparseGenerator};
use aess::spectral::diagnostics::{l1_definiteness, zero_mode_residual};
use aess::spectral::eigen::DEFAULT_SIGMA;
use aess::spectral::{analyze_point, decompose, full_spectrum, PointMeta, SolveMode, SolveOptions};
use aess::{basis::OperatorBasis, Error};

type Outcome = std::result::Result<String, String>;

/// Identity errors seen by every criterion that analyzes an instance.
#[derive(Default)]
struct Shared {
    identity_errors: Vec<f64>,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn planted(n: usize, seed: u64) -> SatInstance {
    generate_planted(&PlantedParams::new(n), seed).unwrap()
}

fn unique(n: usize, seed: u64) -> Model {
    let f = filter_by_solution_count(&PlantedParams::new(n), 1, seed, 100_000).unwrap();
    Model::sat3_classical(&f.instance, Some(f.seed)).unwrap()
}

fn meta(m: &Model) -> PointMeta {
    PointMeta {
        model: m.tag.to_string(),
        n: m.n,
        seed: m.seed,
    }
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn strictly_decreasing(y: &[f64]) -> bool {
    y.windows(2).all(|w| w[1] < w[0])
}

fn c1_stochasticity(_: &mut Shared) -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..50 {
        let g = build_classical_generator(&planted(10, k), 1.0).map_err(err)?;
        let GenMatrix::Real(m) = &g.matrix else {
            return Err("classical generator is not real".into());
        };
        worst = m.column_sums().iter().fold(worst, |a, s| a.max(s.abs()));
    }
    check(worst <= 1e-12, format!("max |column sum| = {worst:.2e} over 50 instances"))
}

fn c2_single_clause(_: &mut Shared) -> Outcome {
    let lit = |v, neg| Literal::new(v, neg).unwrap();
    let clause = Clause::new([lit(1, false), lit(2, true), lit(3, false)]).map_err(err)?;
    let inst = SatInstance::new(3, vec![clause], None).map_err(err)?;
    let g = build_classical_generator(&inst, 1.0).map_err(err)?;
    let mut eigs: Vec<c64> = full_spectrum(&g, SolveMode::Dense).map_err(err)?.eigenvalues;
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re));
    // One violating state, leaving at rate 3 to its three neighbours; every
    // other state is absorbing.
    let mut expected = vec![c64::new(0.0, 0.0); 7];
    expected.push(c64::new(-3.0, 0.0));
    let dev = eigs.iter().zip(&expected).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    check(eigs.len() == 8 && dev <= 1e-10, format!("max deviation from {{0 x7, -3}} = {dev:.2e}"))
}

fn c3_persistent_zero_mode(_: &mut Shared) -> Outcome {
    let ws = [0.0, 0.5, 1.0, 1.2];
    let mut worst_c = 0.0f64;
    let mut worst_q = 0.0f64;
    for k in 0..20u64 {
        let n = [6, 7, 8, 9, 10][k as usize % 5];
        let f = filter_by_solution_count(&PlantedParams::new(n), 1, 500 + 37 * k, 100_000).map_err(err)?;
        let model = Model::sat3_classical(&f.instance, f.seed.into()).map_err(err)?;
        let r0 = model.target_operator().map_err(err)?.ok_or("no classical target")?;
        for &w in &ws {
            worst_c = worst_c.max(zero_mode_residual(&model.generator(w).map_err(err)?, &r0).map_err(err)?);
        }
        // Dense operators get slow beyond this; the classical check covers the rest.
        if n > 8 {
            continue;
        }
        let jumps = quantum::build_3sat_jumps(&f.instance).map_err(err)?;
        let d = 1usize << n;
        let h = CscMatrix::zeros(d, d);
        let sol = f.instance.planted().ok_or("no planted assignment")?.bits() as usize;
        let rho = faer::Mat::from_fn(d, d, |r, c| {
            if r == sol && c == sol {
                c64::new(1.0, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        for &w in &ws {
            let out = lindblad_apply(&h, &jumps, w, &rho).map_err(err)?;
            worst_q = worst_q.max(out.norm_l2());
        }
    }
    let aklt = Model::aklt(4).map_err(err)?;
    let r0 = aklt.target_operator().map_err(err)?.ok_or("no AKLT target")?;
    let mut worst_a = 0.0f64;
    for &w in &ws {
        worst_a = worst_a.max(zero_mode_residual(&aklt.generator(w).map_err(err)?, &r0).map_err(err)?);
    }
    let worst = worst_c.max(worst_q).max(worst_a);
    check(
        worst <= 1e-10,
        format!("||L_W[r0]||: classical {worst_c:.1e}, quantum {worst_q:.1e}, AKLT N=4 {worst_a:.1e}"),
    )
}

fn c4_orthogonal_at_zero(sh: &mut Shared) -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..20 {
        let m = unique(8 + k % 3, 900 + 13 * k as u64);
        let (rep, _) = analyze_point(&m.generator(0.0).map_err(err)?, &SolveOptions::default(), &meta(&m)).map_err(err)?;
        worst = worst.max(rep.nu2);
        if rep.identity_error.is_finite() {
            sh.identity_errors.push(rep.identity_error);
        }
    }
    check(worst <= 1e-10, format!("max |nu|^2 at W = 0 is {worst:.2e} over 20 instances"))
}

fn c5_scaling(sh: &mut Shared) -> Outcome {
    let mut cfg = RunConfig::new(ModelTag::Sat3Classical, (8..=12).collect(), 100);
    cfg.solutions = Some(1);
    cfg.w_list = vec![1.0];
    cfg.seed_base = 2024;
    cfg.mode = SolveMode::ShiftInvert {
        k: 8,
        sigma: DEFAULT_SIGMA,
    };
    let run = run_ensemble(&cfg).map_err(err)?;
    sh.identity_errors
        .extend(run.results.iter().flat_map(|r| r.reports.iter().map(|p| p.identity_error)));
    let mut lines = Vec::new();
    let mut ok = run.summary.rows.iter().all(|r| r.count >= 100 && r.failures == 0);
    for (name, col) in [("delta", SummaryColumn::Delta), ("1-nu2", SummaryColumn::OneMinusNu2)] {
        let (x, y) = run.summary.series(1.0, col);
        let fit = fit_scaling(&x, &y, FitKind::Exponential).map_err(err)?;
        let mono = strictly_decreasing(&y);
        ok &= mono && fit.log_slope() < 0.0 && fit.r2 >= 0.9;
        let means: Vec<String> = y.iter().map(|v| format!("{v:.4e}")).collect();
        lines.push(format!(
            "{name} means [{}] decreasing={mono} slope {:.4} R2 {:.3}",
            means.join(", "),
            fit.log_slope(),
            fit.r2
        ));
    }
    check(ok, lines.join("; "))
}

fn c6_ferro(_: &mut Shared) -> Outcome {
    let ns = [6usize, 8, 10, 12, 14];
    let mut wc = Vec::new();
    for &n in &ns {
        wc.push(find_wc(&Model::ferro_chain(n).map_err(err)?, &WcOptions::default()).map_err(err)?.w_c);
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let fit = fit_scaling(&x, &wc, FitKind::ShiftedPower).map_err(err)?;
    let c = fit.params[2];
    let at14 = wc[4];
    check(
        (at14 - 1.10167).abs() <= 1e-3 && (1.05..=1.15).contains(&c),
        format!("W_c(14) = {at14:.6}; a N^-b + c fit gives c = {c:.4}"),
    )
}

fn c7_pt_scan(_: &mut Shared) -> Outcome {
    let m = unique(10, 77);
    let w_c = find_wc(&m, &WcOptions::default()).map_err(err)?.w_c;
    let scan = pt_scan(&m, w_c, PerturbationKind::Lowering, &default_delta_grid(), SolveMode::default()).map_err(err)?;
    let real_side = scan
        .points
        .iter()
        .filter(|p| p.delta > 0.0)
        .map(|p| p.max_abs_imag())
        .fold(0.0, f64::max);
    let complex_side = scan
        .points
        .iter()
        .filter(|p| p.delta < 0.0)
        .map(|p| p.max_abs_imag())
        .fold(f64::INFINITY, f64::min);
    let exponent = scan.splitting_exponent(|d| d < 0.0).ok_or("no splitting on the negative branch")?;
    check(
        real_side <= 1e-8 && complex_side > 0.0 && (exponent - 0.5).abs() <= 0.1,
        format!(
            "W_c = {w_c:.6}; max |Im| for delta > 0: {real_side:.1e}; min |Im| for delta < 0: {complex_side:.2e}; exponent {exponent:.4}"
        ),
    )
}

fn c8_xx(_: &mut Shared) -> Outcome {
    let mut deltas = Vec::new();
    let mut worst = 0.0f64;
    let mut no_sign_change = true;
    for n in [4usize, 6, 8] {
        let m = Model::xx_dephasing(n).map_err(err)?;
        let (rep, _) = analyze_point(&m.generator(1.0).map_err(err)?, &SolveOptions::default(), &meta(&m)).map_err(err)?;
        worst = worst.max(rep.nu2);
        deltas.push(rep.delta);
        no_sign_change &= matches!(find_wc(&m, &WcOptions::default()), Err(Error::NoSignChange { .. }));
    }
    check(
        worst <= 1e-10 && strictly_decreasing(&deltas) && no_sign_change,
        format!("max |nu|^2 = {worst:.1e}; delta at N = 4, 6, 8: {deltas:.4?}; NoSignChange = {no_sign_change}"),
    )
}

fn c9_left_structure(sh: &mut Shared) -> Outcome {
    let mut kappas = Vec::new();
    let mut bad = 0;
    let mut min_fid = 1.0f64;
    for k in 0..50 {
        let m = unique(10, 3000 + 101 * k);
        let g = m.generator(1.0).map_err(err)?;
        let (rep, dec) = analyze_point(&g, &SolveOptions::with_mode(SolveMode::Dense), &meta(&m)).map_err(err)?;
        sh.identity_errors.push(rep.identity_error);
        let def = l1_definiteness(&dec, &m.basis, Some(&m.targets[0])).map_err(err)?;
        let fid = def.zero_mode_fidelity.unwrap_or(0.0);
        min_fid = min_fid.min(fid);
        if def.negative_count != 0 || def.near_zero_count != 1 || fid <= 0.99 {
            bad += 1;
        }
        kappas.push(rep.kappa);
    }
    let mean = kappas.iter().sum::<f64>() / kappas.len() as f64;
    check(
        bad == 0 && (-1.3..=-0.7).contains(&mean),
        format!("{bad} of 50 violate the sign structure; min zero-mode fidelity {min_fid:.4}; mean kappa {mean:.4}"),
    )
}

fn c10_identity(sh: &mut Shared) -> Outcome {
    // Quantum points on top of whatever the other criteria analyzed.
    for k in 0..5 {
        let f = filter_by_solution_count(&PlantedParams::new(4), 1, 40 + k, 100_000).map_err(err)?;
        let m = Model::sat3_quantum(&f.instance, Some(f.seed)).map_err(err)?;
        let (rep, _) = analyze_point(&m.generator(1.0).map_err(err)?, &SolveOptions::default(), &meta(&m)).map_err(err)?;
        sh.identity_errors.push(rep.identity_error);
    }
    let finite: Vec<f64> = sh.identity_errors.iter().copied().filter(|e| e.is_finite()).collect();
    let worst = finite.iter().copied().fold(0.0, f64::max);
    check(
        finite.len() == sh.identity_errors.len() && worst <= 1e-8,
        format!(
            "max | ||delta_r||^2 - (|nu|^-2 - 1) | = {worst:.2e} over {} points ({} non-finite)",
            sh.identity_errors.len(),
            sh.identity_errors.len() - finite.len()
        ),
    )
}

fn c11_dynamics(_: &mut Shared) -> Outcome {
    let times: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
    let mut worst = 0.0f64;
    for k in 0..10 {
        let m = unique(6 + k % 3, 7000 + k as u64);
        let g = m.generator(1.0).map_err(err)?;
        let obs = Observables::for_model(&m).map_err(err)?;
        let rho = m.basis.maximally_mixed();
        let dec = decompose(&g, &SolveOptions::with_mode(SolveMode::Dense)).map_err(err)?;
        let spectral = evolve_spectral(&dec, &obs, &rho, &times).map_err(err)?;
        let dt = 0.25 * max_stable_step(&g);
        let rk = evolve_rk4_at(&g, &obs, &rho, dt, &times).map_err(err)?;
        worst = worst.max(rk.max_deviation(&spectral).map_err(err)?);
    }
    // Single qubit under sigma^- alone: the excited population is e^{-t}.
    let basis = OperatorBasis::Full { d: 2 };
    let l = quantum::build_liouvillian(
        &CscMatrix::zeros(2, 2),
        &JumpSet::new(vec![quantum::qubit::sigma_minus()]),
        1.0,
    )
    .map_err(err)?;
    let g = SparseGenerator::new(GenMatrix::Complex(l), "qubit", 1.0, basis.clone()).map_err(err)?;
    let dec = decompose(&g, &SolveOptions::with_mode(SolveMode::Dense)).map_err(err)?;
    let excited = basis.basis_state(1).map_err(err)?;
    let obs = Observables {
        basis,
        targets: vec![excited.clone()],
    };
    let traj = evolve_spectral(&dec, &obs, &excited, &times).map_err(err)?;
    let decay = traj
        .times
        .iter()
        .zip(&traj.fidelity)
        .map(|(t, p)| (p - (-t).exp()).abs())
        .fold(0.0, f64::max);
    check(
        worst <= 1e-6 && decay <= 1e-8,
        format!("modal vs RK4 max deviation {worst:.2e} over 10 instances; single-qubit decay error {decay:.1e}"),
    )
}

fn c12_aklt(_: &mut Shared) -> Outcome {
    let ns = [3usize, 4, 5];
    let mut worst = 0.0f64;
    let mut gaps = Vec::new();
    for &n in &ns {
        let psi = aklt_mps_state(n).map_err(err)?;
        let jumps = build_aklt_model(n).map_err(err)?;
        if jumps.len() != 4 * n {
            return Err(format!("{} jumps at N = {n}", jumps.len()));
        }
        for l in &jumps.ops {
            worst = worst.max(norm(&l.apply(&psi)));
        }
        let m = Model::aklt(n).map_err(err)?;
        let (rep, _) = analyze_point(&m.generator(1.0).map_err(err)?, &SolveOptions::default(), &meta(&m)).map_err(err)?;
        gaps.push(1.0 - rep.nu2);
    }
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let s = slope(&lx, &ly);
    check(
        worst <= 1e-10 && strictly_decreasing(&gaps) && s < 0.0,
        format!("max ||L psi|| = {worst:.1e}; 1-|nu|^2 at N = 3, 4, 5: {gaps:.4?}; log-log slope {s:.3}"),
    )
}

fn c13_determinism(_: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = RunConfig::new(ModelTag::Sat3Classical, vec![6, 7], 4);
    cfg.compute_wc = true;
    let mut bytes = Vec::new();
    for run in 0..2 {
        let paths = aess::ensemble::OutputPaths {
            csv: Some(dir.path().join(format!("run{run}.csv"))),
            summary: Some(dir.path().join(format!("summary{run}.csv"))),
        };
        run_ensemble(&cfg).map_err(err)?.write_outputs(&paths).map_err(err)?;
        bytes.push((
            std::fs::read(paths.csv.unwrap()).map_err(err)?,
            std::fs::read(paths.summary.unwrap()).map_err(err)?,
        ));
    }
    check(
        bytes[0] == bytes[1] && !bytes[0].0.is_empty(),
        format!("{} + {} bytes, identical = {}", bytes[0].0.len(), bytes[0].1.len(), bytes[0] == bytes[1]),
    )
}

type Criterion = (usize, &'static str, Duration, fn(&mut Shared) -> Outcome);

fn main() -> ExitCode {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 13] = [
        (1, "stochasticity", Duration::from_secs(10), c1_stochasticity),
        (2, "single-clause spectrum", Duration::from_secs(1), c2_single_clause),
        (3, "persistent zero mode", minutes(2), c3_persistent_zero_mode),
        (4, "W = 0 orthogonality", minutes(10), c4_orthogonal_at_zero),
        (5, "metastable scaling", minutes(120), c5_scaling),
        (6, "ferro-chain EP", minutes(30), c6_ferro),
        (7, "PT scan", minutes(10), c7_pt_scan),
        (8, "XX dephasing", minutes(10), c8_xx),
        (9, "left eigenoperator", minutes(20), c9_left_structure),
        (10, "overlap identity", minutes(1), c10_identity),
        (11, "dynamics", minutes(5), c11_dynamics),
        (12, "AKLT", minutes(30), c12_aklt),
        (13, "determinism", minutes(10), c13_determinism),
    ];
    // Positional arguments select criteria; libtest flags are ignored.
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut shared)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let (verdict, detail) = match outcome {
            Ok(d) if took <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {}s budget", budget.as_secs())),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} criterion {id:2} ({name}, {:.1}s): {detail}", took.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
