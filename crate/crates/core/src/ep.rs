//! Critical jump strength, perturbation scans and W sweeps.

use std::str::FromStr;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::basis::{inner, norm, OperatorBasis};
use crate::classical::{classical_channel, orbit_quotient};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::format::sci;
use crate::model::Model;
use crate::quantum::{self, embed, sector_restrict, JumpSet, OperatorMatrix};
use crate::sparse::{CscMatrix, GenMatrix};
use crate::spectral::eigen::{decompose_matrix, SolveMode, SolveOptions, DEFAULT_SIGMA};
use crate::spectral::{analyze_point, OverlapReport, PointMeta, SpectralDecomposition};

pub const DEFAULT_BRACKET: [f64; 2] = [1.0, 1.5];
pub const DEFAULT_WC_TOL: f64 = 1e-6;
/// Residual bound for the persistent zero mode.
pub const ZERO_MODE_TOL: f64 = 1e-10;
/// Overlap a tracked eigenvector must keep with its predecessor.
pub const TRACKING_FIDELITY: f64 = 0.5;

/// `+-{1e-4, ..., 1e-2}`, five points per decade on each side.
pub fn default_delta_grid() -> Vec<f64> {
    let pos: Vec<f64> = (0..=10).map(|k| 10f64.powf(-4.0 + 0.2 * k as f64)).collect();
    pos.iter().rev().map(|d| -d).chain(pos.iter().copied()).collect()
}

/// One evaluation of the relative metastable rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpSample {
    pub w: f64,
    /// Largest real part among untracked modes, relative to the tracked mode.
    pub rate: f64,
    pub lambda1: [f64; 2],
    pub nu2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpReport {
    pub model: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub w_c: f64,
    pub bracket: [f64; 2],
    pub final_bracket: [f64; 2],
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether `||L_W[r0]|| <= 1e-10` held at both bracket ends.
    pub persistent_zero_mode: bool,
    pub samples: Vec<EpSample>,
}

#[derive(Debug, Clone, Copy)]
pub struct WcOptions {
    pub bracket: [f64; 2],
    pub tol: f64,
    pub max_iter: usize,
    pub mode: SolveMode,
}

impl Default for WcOptions {
    fn default() -> Self {
        WcOptions {
            bracket: DEFAULT_BRACKET,
            tol: DEFAULT_WC_TOL,
            max_iter: 200,
            mode: SolveMode::Auto { k: 6 },
        }
    }
}

/// Basis states whose column vanishes for every `W`: the generator is block
/// upper-triangular with a zero block on them.
fn absorbing_states(model: &Model) -> Option<Vec<usize>> {
    if !model.basis.is_classical() || model.targets.is_empty() {
        return None;
    }
    let (l0, j) = model.parts();
    let (GenMatrix::Real(a), GenMatrix::Real(b)) = (l0, j) else {
        return None;
    };
    let absorbing: Vec<usize> = (0..a.ncols())
        .filter(|&c| a.column(c).next().is_none() && b.column(c).next().is_none())
        .collect();
    let r0 = model.target_operator().ok()??;
    let on_absorbing = absorbing.iter().map(|&i| r0[i].norm_sqr()).sum::<f64>();
    (on_absorbing >= 1.0 - 1e-12 * norm(&r0)).then_some(absorbing)
}

fn solve_options(mode: SolveMode, dim: usize, sigma: f64) -> SolveOptions {
    let mode = match mode.resolve(dim) {
        SolveMode::ShiftInvert { k, sigma: s } if s == DEFAULT_SIGMA => SolveMode::ShiftInvert { k, sigma },
        m => m,
    };
    SolveOptions {
        mode,
        want_left: false,
        ..Default::default()
    }
}

/// Tracks the persistent mode and reports the rate of the leading other mode.
struct RateProbe<'a> {
    model: &'a Model,
    mode: SolveMode,
    absorbing: Option<Vec<usize>>,
    /// Reference operator for fidelity tracking.
    r0: Vec<c64>,
}

impl<'a> RateProbe<'a> {
    fn new(model: &'a Model, mode: SolveMode) -> Result<Self> {
        let absorbing = absorbing_states(model);
        let r0 = match model.target_operator()? {
            Some(r) => r,
            None => steady_reference(model, mode)?,
        };
        Ok(RateProbe {
            model,
            mode,
            absorbing,
            r0,
        })
    }

    fn sample(&self, w: f64) -> Result<EpSample> {
        match &self.absorbing {
            Some(abs) => self.sample_deflated(w, abs),
            None => self.sample_tracked(w),
        }
    }

    fn sample_deflated(&self, w: f64, absorbing: &[usize]) -> Result<EpSample> {
        let g = self.model.generator(w)?;
        let dim = g.dim();
        let keep: Vec<usize> = (0..dim).filter(|i| absorbing.binary_search(i).is_err()).collect();
        let (sub, _) = g.matrix.restrict(&keep)?;
        let dec = decompose_matrix(&sub, &solve_options(self.mode, keep.len(), DEFAULT_SIGMA))?;
        let mu = dec.eigenvalues[0];
        let y = &dec.right[0];
        // Full eigenvector (x, y) with x = B y / mu on the absorbing block.
        let mut full = vec![c64::new(0.0, 0.0); dim];
        for (k, &i) in keep.iter().enumerate() {
            full[i] = y[k];
        }
        let image = g.apply(&full)?;
        let x2: f64 = absorbing.iter().map(|&i| image[i].norm_sqr()).sum();
        let y2: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        let nu2 = if mu.norm() == 0.0 { 1.0 } else { (x2 / mu.norm_sqr()) / (x2 / mu.norm_sqr() + y2) };
        Ok(EpSample {
            w,
            rate: mu.re,
            lambda1: [mu.re, mu.im],
            nu2,
        })
    }

    fn sample_tracked(&self, w: f64) -> Result<EpSample> {
        let g = self.model.generator(w)?;
        let image = g.apply(&self.r0)?;
        let rq = inner(&self.r0, &image) / inner(&self.r0, &self.r0);
        let dec = decompose_matrix(&g.matrix, &solve_options(self.mode, g.dim(), rq.re + DEFAULT_SIGMA))?;
        let t = tracked_index(&dec, &self.r0, rq)?;
        let lam_t = dec.eigenvalues[t];
        let (m, lam) = dec
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .max_by(|a, b| a.1.re.total_cmp(&b.1.re))
            .ok_or_else(|| Error::ConvergenceFailure("only the tracked mode was computed".into()))?;
        let nu2 = fidelity(&self.r0, &dec.right[m]);
        Ok(EpSample {
            w,
            rate: lam.re - lam_t.re,
            lambda1: [lam.re - lam_t.re, lam.im - lam_t.im],
            nu2,
        })
    }

    fn zero_mode_residual(&self, w: f64) -> Result<f64> {
        let g = self.model.generator(w)?;
        Ok(norm(&g.apply(&self.r0)?) / norm(&self.r0))
    }
}

/// Steady state of `L_1`, used as the tracking reference when the model
/// declares no target.
fn steady_reference(model: &Model, mode: SolveMode) -> Result<Vec<c64>> {
    let g = model.generator(1.0)?;
    let dec = decompose_matrix(&g.matrix, &solve_options(mode, g.dim(), DEFAULT_SIGMA))?;
    let i = (0..dec.len())
        .min_by(|&a, &b| dec.eigenvalues[a].norm().total_cmp(&dec.eigenvalues[b].norm()))
        .ok_or(Error::NoSteadyState)?;
    Ok(dec.right[i].clone())
}

/// `|<a, b>|^2 / (|a|^2 |b|^2)`.
pub fn fidelity(a: &[c64], b: &[c64]) -> f64 {
    inner(a, b).norm_sqr() / (inner(a, a).re * inner(b, b).re)
}

/// Mode following `r0`: among eigenvectors with fidelity above the threshold,
/// the one whose eigenvalue is closest to the Rayleigh quotient of `r0`.
fn tracked_index(dec: &SpectralDecomposition, r0: &[c64], rq: c64) -> Result<usize> {
    (0..dec.len())
        .filter(|&i| fidelity(r0, &dec.right[i]) > TRACKING_FIDELITY)
        .min_by(|&a, &b| (dec.eigenvalues[a] - rq).norm().total_cmp(&(dec.eigenvalues[b] - rq).norm()))
        .ok_or_else(|| Error::TrackingLost("no eigenvector overlaps the persistent mode".into()))
}

/// Bisection for the `W` at which the leading untracked mode crosses the
/// tracked one.
pub fn find_wc(model: &Model, opts: &WcOptions) -> Result<EpReport> {
    let [lo0, hi0] = opts.bracket;
    if !(lo0 < hi0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidParams(format!("bad bracket [{lo0}, {hi0}] or tolerance {}", opts.tol)));
    }
    let probe = RateProbe::new(model, opts.mode)?;
    let persistent = !model.targets.is_empty()
        && probe.zero_mode_residual(lo0)? <= ZERO_MODE_TOL
        && probe.zero_mode_residual(hi0)? <= ZERO_MODE_TOL;
    let mut samples = Vec::new();
    let s_lo = probe.sample(lo0)?;
    let s_hi = probe.sample(hi0)?;
    samples.extend([s_lo, s_hi]);
    if !(s_lo.rate < 0.0 && s_hi.rate > 0.0) {
        return Err(Error::NoSignChange {
            f_lo: s_lo.rate,
            f_hi: s_hi.rate,
        });
    }
    let (mut lo, mut hi) = (lo0, hi0);
    let mut iterations = 0;
    while hi - lo > opts.tol && iterations < opts.max_iter {
        let mid = 0.5 * (lo + hi);
        let s = probe.sample(mid)?;
        samples.push(s);
        if s.rate > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    log::debug!("find_wc {} N={}: [{lo}, {hi}] after {iterations} steps", model.tag, model.n);
    Ok(EpReport {
        model: model.tag.to_string(),
        n: model.n,
        seed: model.seed,
        w_c: 0.5 * (lo + hi),
        bracket: opts.bracket,
        final_bracket: [lo, hi],
        tol: opts.tol,
        iterations,
        converged: hi - lo <= opts.tol,
        persistent_zero_mode: persistent,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    /// `sigma^-` on every qubit.
    Lowering,
    /// `sigma^x` on every qubit.
    Flip,
    /// `S^z` on every spin-1.
    Sz,
}

impl FromStr for PerturbationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowering" => Ok(PerturbationKind::Lowering),
            "flip" => Ok(PerturbationKind::Flip),
            "sz" => Ok(PerturbationKind::Sz),
            _ => Err(Error::InvalidParams(format!("unknown perturbation kind {s:?}"))),
        }
    }
}

impl PerturbationKind {
    fn local_operator(self, d: usize) -> Result<OperatorMatrix> {
        match (self, d) {
            (PerturbationKind::Lowering, 2) => Ok(quantum::qubit::sigma_minus()),
            (PerturbationKind::Flip, 2) => Ok(quantum::qubit::sigma_x()),
            (PerturbationKind::Sz, 3) => Ok(quantum::spin1::s_z()),
            _ => Err(Error::KindMismatch(format!("{self:?} on local dimension {d}"))),
        }
    }
}

/// `delta sum_n (W L_n rho L_n^dagger - {L_n^dagger L_n, rho} / 2)` in the
/// model's basis.
pub fn build_perturbation(model: &Model, kind: PerturbationKind, delta: f64, w: f64) -> Result<GenMatrix> {
    let sites = &model.sites;
    let local = kind.local_operator(sites.local_dim)?;
    let mut ops: Vec<OperatorMatrix> = (0..sites.n_sites)
        .map(|n| embed(&local, &[n], sites.n_sites, sites.local_dim))
        .collect::<Result<_>>()?;
    if let Some(sector) = &sites.hilbert_sector {
        ops = ops.iter().map(|op| sector_restrict(op, sector)).collect::<Result<_>>()?;
    }
    let dim = ops.first().map_or(0, |o| o.nrows());
    let m = match &model.basis {
        OperatorBasis::Diagonal { .. } => GenMatrix::Real(classical_channel(dim, &ops, w)?),
        OperatorBasis::Orbits { orbits, .. } => {
            GenMatrix::Real(orbit_quotient(&classical_channel(dim, &ops, w)?, orbits)?)
        }
        OperatorBasis::Full { .. } | OperatorBasis::Sector { .. } => {
            let keep = match &model.basis {
                OperatorBasis::Sector { indices, .. } => Some(indices.as_slice()),
                _ => None,
            };
            let zero = CscMatrix::zeros(dim, dim);
            let (anti, jump) = quantum::liouvillian_parts(&zero, &JumpSet::new(ops), keep)?;
            GenMatrix::Complex(anti.add_scaled(&jump, c64::new(w, 0.0))?)
        }
    };
    Ok(m.scale(delta))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PtPoint {
    pub delta: f64,
    /// Ordered by descending real part, then descending imaginary part.
    pub pair: [[f64; 2]; 2],
}

impl PtPoint {
    pub fn splitting(&self) -> f64 {
        let [a, b] = self.pair;
        (c64::new(a[0], a[1]) - c64::new(b[0], b[1])).norm()
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.pair[0][1].abs().max(self.pair[1][1].abs())
    }

    /// `|lambda_a - conj(lambda_b)|`.
    pub fn conjugation_defect(&self) -> f64 {
        let [a, b] = self.pair;
        (c64::new(a[0], a[1]) - c64::new(b[0], -b[1])).norm()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PtScanResult {
    pub w_c: f64,
    pub kind: PerturbationKind,
    /// Sorted by `delta`.
    pub points: Vec<PtPoint>,
}

impl PtScanResult {
    pub const CSV_HEADER: &'static str = "delta,re1,im1,re2,im2";

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{}",
                    sci(p.delta),
                    sci(p.pair[0][0]),
                    sci(p.pair[0][1]),
                    sci(p.pair[1][0]),
                    sci(p.pair[1][1])
                )
            })
            .collect()
    }

    /// Least-squares slope of `log |lambda_+ - lambda_-|` against
    /// `log |delta|` over the points selected by `branch`.
    pub fn splitting_exponent(&self, branch: impl Fn(f64) -> bool) -> Option<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .points
            .iter()
            .filter(|p| branch(p.delta) && p.splitting() > 0.0)
            .map(|p| (p.delta.abs().ln(), p.splitting().ln()))
            .unzip();
        linear_slope(&x, &y)
    }
}

pub(crate) fn linear_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// The two eigenpairs most faithful to either reference vector.
fn pick_pair(dec: &SpectralDecomposition, refs: &[Vec<c64>]) -> Result<[usize; 2]> {
    let mut scored: Vec<(usize, f64)> = (0..dec.len())
        .map(|i| {
            let f = refs.iter().map(|r| fidelity(r, &dec.right[i])).fold(0.0, f64::max);
            (i, f)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    if scored.len() < 2 || scored[1].1 <= TRACKING_FIDELITY {
        return Err(Error::TrackingLost(format!(
            "second-best fidelity {:.3} below {TRACKING_FIDELITY}",
            scored.get(1).map_or(0.0, |s| s.1)
        )));
    }
    Ok([scored[0].0, scored[1].0])
}

/// Perturbed spectra of `L_{W_c} + L^pert_{W_c}` along `deltas`, following
/// the coalescing pair outward from `delta = 0` on each side.
pub fn pt_scan(model: &Model, w_c: f64, kind: PerturbationKind, deltas: &[f64], mode: SolveMode) -> Result<PtScanResult> {
    pt_scan_with(Execution::default(), model, w_c, kind, deltas, mode)
}

pub fn pt_scan_with(
    exec: Execution,
    model: &Model,
    w_c: f64,
    kind: PerturbationKind,
    deltas: &[f64],
    mode: SolveMode,
) -> Result<PtScanResult> {
    let base = model.generator(w_c)?;
    let unit = build_perturbation(model, kind, 1.0, w_c)?;
    let r0 = match model.target_operator()? {
        Some(r) => r,
        None => steady_reference(model, mode)?,
    };
    let mut pos: Vec<f64> = deltas.iter().copied().filter(|d| *d > 0.0).collect();
    let mut neg: Vec<f64> = deltas.iter().copied().filter(|d| *d < 0.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(|a, b| b.total_cmp(a));
    let branches = [pos, neg];
    let results: Vec<Result<Vec<PtPoint>>> = exec::map(exec, &branches, |branch| {
        let mut refs = vec![r0.clone()];
        let mut out = Vec::with_capacity(branch.len());
        for &delta in branch {
            let m = base.matrix.add_scaled(&unit, delta)?;
            let dec = decompose_matrix(&m, &solve_options(mode, m.dim(), DEFAULT_SIGMA))?;
            let [a, b] = pick_pair(&dec, &refs)?;
            let mut pair = [dec.eigenvalues[a], dec.eigenvalues[b]];
            pair.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
            out.push(PtPoint {
                delta,
                pair: pair.map(|z| [z.re, z.im]),
            });
            refs = vec![dec.right[a].clone(), dec.right[b].clone()];
        }
        Ok(out)
    });
    let mut points = Vec::new();
    for r in results {
        points.extend(r?);
    }
    points.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    Ok(PtScanResult { w_c, kind, points })
}

/// One [`OverlapReport`] per grid point.
pub fn scan_w(model: &Model, w_grid: &[f64], opts: &SolveOptions) -> Result<Vec<OverlapReport>> {
    scan_w_with(Execution::default(), model, w_grid, opts)
}

pub fn scan_w_with(exec: Execution, model: &Model, w_grid: &[f64], opts: &SolveOptions) -> Result<Vec<OverlapReport>> {
    if let Some(w) = w_grid.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidParams(format!("W = {w} outside [0, inf)")));
    }
    let meta = PointMeta {
        model: model.tag.to_string(),
        n: model.n,
        seed: model.seed,
    };
    exec::map(exec, w_grid, |&w| {
        let g = model.generator(w)?;
        Ok(analyze_point(&g, opts, &meta)?.0)
    })
    .into_iter()
    .collect()
}

pub const SCAN_CSV_HEADER: &str = "W,delta_gap,nu2";

pub fn scan_csv_row(r: &OverlapReport) -> String {
    format!("{},{},{}", sci(r.w), sci(r.delta), sci(r.nu2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sat::{filter_by_solution_count, PlantedParams};
    use crate::spectral::eigen::decompose_matrix;

    fn unique_instance(n: usize, seed: u64) -> Model {
        let f = filter_by_solution_count(&PlantedParams::new(n), 1, seed, 100_000).unwrap();
        Model::sat3_classical(&f.instance, Some(f.seed)).unwrap()
    }

    #[test]
    fn delta_grid_is_symmetric() {
        let g = default_delta_grid();
        assert_eq!(g.len(), 22);
        for k in 0..11 {
            assert_eq!(g[k], -g[21 - k]);
        }
        assert!((g[11] - 1e-4).abs() < 1e-18 && (g[21] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn jordan_block_splitting() {
        // [[0, 1], [0, 0]] + delta [[0, 0], [1, 0]]: eigenvalues +-sqrt(delta).
        let j = CscMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap();
        let p = CscMatrix::from_triplets(2, 2, vec![(1, 0, 1.0)]).unwrap();
        let mut points = Vec::new();
        for &delta in &default_delta_grid() {
            let m = GenMatrix::Real(j.add_scaled(&p, delta).unwrap());
            let dec = decompose_matrix(&m, &SolveOptions::with_mode(SolveMode::Dense)).unwrap();
            let pair = [dec.eigenvalues[0], dec.eigenvalues[1]];
            let expect = delta.abs().sqrt();
            if delta > 0.0 {
                assert!(pair.iter().all(|z| z.im == 0.0));
                assert!((pair[0].re - expect).abs() < 1e-12);
            } else {
                assert!((pair[0].im.abs() - expect).abs() < 1e-12);
                assert!((pair[0] - pair[1].conj()).norm() < 1e-12);
            }
            points.push(PtPoint {
                delta,
                pair: pair.map(|z| [z.re, z.im]),
            });
        }
        let scan = PtScanResult {
            w_c: 0.0,
            kind: PerturbationKind::Lowering,
            points,
        };
        let slope = scan.splitting_exponent(|d| d < 0.0).unwrap();
        assert!((slope - 0.5).abs() < 1e-6, "{slope}");
    }

    #[test]
    fn zero_delta_gives_zero_matrix() {
        let model = Model::sat3_classical(&crate::sat::generate_planted_instance(5, 4.267, 0.08, 2).unwrap(), None).unwrap();
        let p = build_perturbation(&model, PerturbationKind::Lowering, 0.0, 1.0).unwrap();
        assert_eq!(p.nnz(), 0);
    }

    #[test]
    fn perturbation_is_trace_preserving_at_w1() {
        let inst = crate::sat::generate_planted_instance(4, 4.267, 0.08, 5).unwrap();
        let classical = Model::sat3_classical(&inst, None).unwrap();
        let quantum = Model::sat3_quantum(&inst, None).unwrap();
        let aklt = Model::aklt(3).unwrap();
        for (model, kind) in [
            (&classical, PerturbationKind::Lowering),
            (&classical, PerturbationKind::Flip),
            (&quantum, PerturbationKind::Lowering),
            (&quantum, PerturbationKind::Flip),
            (&aklt, PerturbationKind::Sz),
        ] {
            let p = build_perturbation(model, kind, 0.3, 1.0).unwrap();
            let leak = p.apply_adjoint(&model.basis.identity());
            assert!(norm(&leak) < 1e-12, "{} {kind:?}", model.tag);
        }
    }

    #[test]
    fn perturbation_moves_the_solution() {
        let model = unique_instance(6, 11);
        let p = build_perturbation(&model, PerturbationKind::Lowering, 1e-3, 1.0).unwrap();
        let r0 = model.target_operator().unwrap().unwrap();
        let sol_has_ones = model.targets[0].iter().position(|x| x.norm() > 0.5).unwrap() != 0;
        assert_eq!(norm(&p.apply(&r0)) > 0.0, sol_has_ones);
    }

    #[test]
    fn kind_mismatch() {
        let aklt = Model::aklt(3).unwrap();
        assert!(matches!(
            build_perturbation(&aklt, PerturbationKind::Lowering, 0.1, 1.0),
            Err(Error::KindMismatch(_))
        ));
        let ferro = Model::ferro_chain(5).unwrap();
        assert!(matches!(
            build_perturbation(&ferro, PerturbationKind::Sz, 0.1, 1.0),
            Err(Error::KindMismatch(_))
        ));
    }

    #[test]
    fn orbit_perturbation_matches_full_space() {
        let sector = Model::ferro_chain(6).unwrap();
        let full = Model::ferro_chain_full(6).unwrap();
        let ps = build_perturbation(&sector, PerturbationKind::Lowering, 0.01, 1.1).unwrap();
        let pf = build_perturbation(&full, PerturbationKind::Lowering, 0.01, 1.1).unwrap();
        // Symmetric vectors are mapped consistently.
        let OperatorBasis::Orbits { orbits, .. } = &sector.basis else { panic!() };
        let v: Vec<c64> = (0..orbits.len()).map(|k| c64::new(1.0 + k as f64, 0.0)).collect();
        let mut lifted = vec![c64::new(0.0, 0.0); 64];
        for (k, o) in orbits.iter().enumerate() {
            for &i in o {
                lifted[i] = v[k] / (o.len() as f64).sqrt();
            }
        }
        let a = ps.apply(&v);
        let b = pf.apply(&lifted);
        for (k, o) in orbits.iter().enumerate() {
            for &i in o {
                assert!((b[i] - a[k] / (o.len() as f64).sqrt()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn ferro_wc_sector_matches_full_space() {
        let opts = WcOptions {
            tol: 1e-7,
            ..Default::default()
        };
        let a = find_wc(&Model::ferro_chain(6).unwrap(), &opts).unwrap();
        let b = find_wc(&Model::ferro_chain_full(6).unwrap(), &opts).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.persistent_zero_mode);
        assert!((a.w_c - b.w_c).abs() < 2e-7, "{} vs {}", a.w_c, b.w_c);
        assert!(a.w_c > 1.0 && a.w_c < 1.5);
    }

    #[test]
    fn deflated_rate_matches_tracked_rate() {
        let model = unique_instance(6, 3);
        let probe = RateProbe::new(&model, SolveMode::Dense).unwrap();
        assert!(probe.absorbing.is_some());
        let generic = RateProbe {
            absorbing: None,
            ..RateProbe::new(&model, SolveMode::Dense).unwrap()
        };
        for w in [0.5, 1.0, 1.3] {
            let a = probe.sample(w).unwrap();
            let b = generic.sample(w).unwrap();
            assert!((a.rate - b.rate).abs() < 1e-9, "W = {w}: {} vs {}", a.rate, b.rate);
            assert!((a.nu2 - b.nu2).abs() < 1e-8, "W = {w}: {} vs {}", a.nu2, b.nu2);
        }
    }

    #[test]
    fn bisection_is_stable_under_tolerance_halving() {
        let model = unique_instance(7, 21);
        let coarse = find_wc(&model, &WcOptions { tol: 1e-5, ..Default::default() }).unwrap();
        let fine = find_wc(&model, &WcOptions { tol: 5e-6, ..Default::default() }).unwrap();
        assert!((coarse.w_c - fine.w_c).abs() < 1e-5);
        let last = fine.samples.iter().min_by(|a, b| a.rate.abs().total_cmp(&b.rate.abs())).unwrap();
        assert!(last.nu2 > 0.9, "{}", last.nu2);
    }

    #[test]
    fn xx_has_no_crossing() {
        let model = Model::xx_dephasing(4).unwrap();
        let err = find_wc(&model, &WcOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }), "{err}");
    }

    #[test]
    fn scan_single_point_matches_pipeline() {
        let model = unique_instance(6, 8);
        let opts = SolveOptions::default();
        let scan = scan_w(&model, &[0.0, 1.0], &opts).unwrap();
        assert!(scan[0].nu2 <= 1e-10);
        let g = model.generator(1.0).unwrap();
        let meta = PointMeta {
            model: model.tag.to_string(),
            n: model.n,
            seed: model.seed,
        };
        let (single, _) = analyze_point(&g, &opts, &meta).unwrap();
        assert_eq!(scan_csv_row(&scan[1]), scan_csv_row(&single));
        assert_eq!(scan[1].csv_row(), single.csv_row());
    }

    #[test]
    fn pt_scan_on_small_instance() {
        let model = unique_instance(7, 4);
        let wc = find_wc(&model, &WcOptions::default()).unwrap();
        let scan = pt_scan(&model, wc.w_c, PerturbationKind::Lowering, &default_delta_grid(), SolveMode::Dense).unwrap();
        for p in &scan.points {
            if p.delta > 0.0 {
                assert!(p.max_abs_imag() <= 1e-8, "{p:?}");
            } else {
                assert!(p.max_abs_imag() > 0.0 && p.conjugation_defect() < 1e-8, "{p:?}");
            }
        }
        let slope = scan.splitting_exponent(|d| d < 0.0).unwrap();
        assert!((slope - 0.5).abs() < 0.1, "{slope}");
    }
}
