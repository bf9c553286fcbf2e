//! Time evolution under a generator and the metastable-plateau analysis.

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::basis::{inner, norm, OperatorBasis};
use crate::error::{Error, Result};
use crate::format::sci;
use crate::model::Model;
use crate::sparse::SparseGenerator;
use crate::spectral::{classify_modes, SpectralDecomposition};

pub use crate::spectral::c1_coefficient;

/// Largest admissible `dt * ||L||_inf`.
pub const RK4_STABILITY: f64 = 0.1;
/// Allowed trace drift for trace-preserving generators.
pub const CONSERVATION_TOL: f64 = 1e-8;
/// Required ratio `|Re lambda_2| / |Re lambda_1|` for a plateau.
pub const MIN_SEPARATION: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<c64>>,
    /// Overlap with the target subspace, NaN without targets.
    pub fidelity: Vec<f64>,
    pub trace: Vec<f64>,
    /// `|c_1 e^{lambda_1 t}|`, NaN when no decomposition is available.
    pub c1_contrib: Vec<f64>,
}

impl Trajectory {
    pub const CSV_HEADER: &'static str = "t,fidelity,trace,c1_contrib";

    fn with_capacity(n: usize) -> Self {
        Trajectory {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            fidelity: Vec::with_capacity(n),
            trace: Vec::with_capacity(n),
            c1_contrib: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.len())
            .map(|k| {
                format!(
                    "{},{},{},{}",
                    sci(self.times[k]),
                    sci(self.fidelity[k]),
                    sci(self.trace[k]),
                    sci(self.c1_contrib[k])
                )
            })
            .collect()
    }

    /// Largest entrywise deviation between two trajectories sampled at the
    /// same times.
    pub fn max_deviation(&self, other: &Trajectory) -> Result<f64> {
        if self.times.len() != other.times.len() {
            return Err(Error::ShapeMismatch {
                expected: self.times.len(),
                found: other.times.len(),
            });
        }
        let mut dev = 0.0f64;
        for (a, b) in self.states.iter().zip(&other.states) {
            for (x, y) in a.iter().zip(b) {
                dev = dev.max((x - y).norm());
            }
        }
        Ok(dev)
    }

    /// Recomputes `c1_contrib` from a decomposition of the same generator.
    pub fn attach_c1(&mut self, dec: &SpectralDecomposition) -> Result<()> {
        let (lam1, c1) = metastable_amplitude(dec, &self.states[0])?;
        for (k, &t) in self.times.iter().enumerate() {
            self.c1_contrib[k] = (c1 * (lam1 * t).exp()).norm();
        }
        Ok(())
    }
}

/// What the observables of a trajectory are measured against.
#[derive(Debug, Clone)]
pub struct Observables {
    pub basis: OperatorBasis,
    /// Coordinates of the target projectors `|psi><psi|`.
    pub targets: Vec<Vec<c64>>,
}

impl Observables {
    pub fn for_model(model: &Model) -> Result<Self> {
        Ok(Observables {
            basis: model.basis.clone(),
            targets: model.target_operators()?,
        })
    }

    fn fidelity(&self, rho: &[c64]) -> f64 {
        if self.targets.is_empty() {
            return f64::NAN;
        }
        self.targets.iter().map(|p| inner(p, rho).re).sum()
    }

    fn trace(&self, rho: &[c64]) -> f64 {
        self.basis.trace(rho).re
    }
}

fn metastable_amplitude(dec: &SpectralDecomposition, rho: &[c64]) -> Result<(c64, c64)> {
    let classes = classify_modes(dec)?;
    let m = classes
        .metastable
        .ok_or_else(|| Error::ConvergenceFailure("no decaying mode".into()))?;
    Ok((dec.eigenvalues[m], c1_coefficient(dec, rho)?))
}

/// `rho(t) = sum_i e^{lambda_i t} c_i r_i` with `c_i = Tr[l_i^dagger rho_ini]`.
pub fn evolve_spectral(dec: &SpectralDecomposition, obs: &Observables, rho_ini: &[c64], times: &[f64]) -> Result<Trajectory> {
    dec.require_biorthonormal()?;
    if !dec.complete {
        return Err(Error::InvalidParams("modal synthesis needs the full spectrum".into()));
    }
    let coeffs: Vec<c64> = dec.left.iter().map(|l| inner(l, rho_ini)).collect();
    let (lam1, c1) = metastable_amplitude(dec, rho_ini)?;
    let dim = rho_ini.len();
    let mut traj = Trajectory::with_capacity(times.len());
    for &t in times {
        let mut rho = vec![c64::new(0.0, 0.0); dim];
        for ((lam, c), r) in dec.eigenvalues.iter().zip(&coeffs).zip(&dec.right) {
            let a = c * (lam * t).exp();
            rho.iter_mut().zip(r).for_each(|(x, y)| *x += a * y);
        }
        traj.times.push(t);
        traj.fidelity.push(obs.fidelity(&rho));
        traj.trace.push(obs.trace(&rho));
        traj.c1_contrib.push((c1 * (lam1 * t).exp()).norm());
        traj.states.push(rho);
    }
    Ok(traj)
}

/// Largest admissible RK4 step for `g`.
pub fn max_stable_step(g: &SparseGenerator) -> f64 {
    RK4_STABILITY / g.matrix.norm_inf().max(f64::MIN_POSITIVE)
}

fn rk4_step(g: &SparseGenerator, rho: &mut [c64], h: f64, tmp: &mut [c64]) -> Result<()> {
    let k1 = g.apply(rho)?;
    tmp.iter_mut().zip(rho.iter()).zip(&k1).for_each(|((t, r), k)| *t = r + k * (0.5 * h));
    let k2 = g.apply(tmp)?;
    tmp.iter_mut().zip(rho.iter()).zip(&k2).for_each(|((t, r), k)| *t = r + k * (0.5 * h));
    let k3 = g.apply(tmp)?;
    tmp.iter_mut().zip(rho.iter()).zip(&k3).for_each(|((t, r), k)| *t = r + k * h);
    let k4 = g.apply(tmp)?;
    for i in 0..rho.len() {
        rho[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
    }
    Ok(())
}

/// Classical fourth-order Runge–Kutta, recorded at every `times` entry.
/// Between records the step is the largest `h <= dt` that lands exactly on
/// the next record time.
pub fn evolve_rk4_at(g: &SparseGenerator, obs: &Observables, rho_ini: &[c64], dt: f64, times: &[f64]) -> Result<Trajectory> {
    let max = max_stable_step(g);
    if !(dt > 0.0) || dt > max {
        return Err(Error::StepTooLarge { dt, max });
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidParams("record times must be non-negative and sorted".into()));
    }
    let conserving = g.w == 1.0 && g.stochasticity_check() <= 1e-10;
    let mut rho = rho_ini.to_vec();
    let mut tmp = vec![c64::new(0.0, 0.0); rho.len()];
    let trace0 = obs.trace(&rho);
    let mut t = 0.0;
    let mut traj = Trajectory::with_capacity(times.len());
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / dt).ceil() as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                rk4_step(g, &mut rho, h, &mut tmp)?;
            }
        }
        t = target;
        let tr = obs.trace(&rho);
        if conserving && (tr - trace0).abs() > CONSERVATION_TOL {
            return Err(Error::ConservationViolated { drift: (tr - trace0).abs() });
        }
        traj.times.push(t);
        traj.fidelity.push(obs.fidelity(&rho));
        traj.trace.push(tr);
        traj.c1_contrib.push(f64::NAN);
        traj.states.push(rho.clone());
    }
    Ok(traj)
}

/// RK4 from `0` to `t_max` with step `dt`, recording every step.
pub fn evolve_rk4(g: &SparseGenerator, obs: &Observables, rho_ini: &[c64], dt: f64, t_max: f64) -> Result<Trajectory> {
    let n = (t_max / dt).round().max(0.0) as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    evolve_rk4_at(g, obs, rho_ini, dt, &times)
}

/// Metastable window and how well the two-mode truncation describes it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauReport {
    /// `[5 / |Re lambda_2|, 0.2 / |Re lambda_1|]`.
    pub t_window: [f64; 2],
    pub lambda1: [f64; 2],
    pub lambda2: [f64; 2],
    pub separation: f64,
    /// Mean fidelity over the samples inside the window.
    pub plateau_fidelity: f64,
    /// Samples inside the window.
    pub samples: usize,
    /// Largest `||rho(t) - rho_ss - e^{lambda_1 t} c_1 r_1||` in the window.
    pub max_residual: f64,
    /// Largest ratio of that residual to `e^{Re lambda_2 t}`.
    pub max_residual_ratio: f64,
}

/// `(lambda_1, lambda_2)`: the metastable eigenvalue and the next decay rate
/// strictly faster than it.
pub fn leading_rates(dec: &SpectralDecomposition) -> Result<(c64, Option<c64>)> {
    let classes = classify_modes(dec)?;
    let m = classes
        .metastable
        .ok_or_else(|| Error::ConvergenceFailure("no decaying mode".into()))?;
    let lam1 = dec.eigenvalues[m];
    let tol = dec.cluster_tol();
    let lam2 = dec.eigenvalues[m + 1..]
        .iter()
        .find(|l| l.re < lam1.re - tol && l.re.abs() > crate::spectral::STEADY_TOL)
        .copied();
    Ok((lam1, lam2))
}

/// Window where only the steady and metastable modes survive.
pub fn plateau_window(dec: &SpectralDecomposition) -> Result<[f64; 2]> {
    let (lam1, lam2) = leading_rates(dec)?;
    let ratio = lam2.map_or(1.0, |l2| l2.re.abs() / lam1.re.abs());
    match lam2 {
        Some(l2) if ratio > MIN_SEPARATION => Ok([5.0 / l2.re.abs(), 0.2 / lam1.re.abs()]),
        _ => Err(Error::NoSeparation { ratio }),
    }
}

pub fn plateau_report(traj: &Trajectory, dec: &SpectralDecomposition) -> Result<PlateauReport> {
    let window = plateau_window(dec)?;
    let (lam1, lam2) = leading_rates(dec)?;
    let lam2 = lam2.expect("window implies a second rate");
    dec.require_biorthonormal()?;
    let classes = classify_modes(dec)?;
    let m = classes.metastable.expect("rates imply a metastable mode");
    let rho0 = &traj.states[0];
    let dim = rho0.len();
    let mut steady = vec![c64::new(0.0, 0.0); dim];
    for &i in &classes.steady {
        let c = inner(&dec.left[i], rho0);
        steady.iter_mut().zip(&dec.right[i]).for_each(|(x, y)| *x += c * y);
    }
    let c1 = inner(&dec.left[m], rho0);
    let r1 = &dec.right[m];
    let mut fid_sum = 0.0;
    let mut samples = 0;
    let mut max_residual = 0.0f64;
    let mut max_ratio = 0.0f64;
    for (k, &t) in traj.times.iter().enumerate() {
        if t < window[0] || t > window[1] {
            continue;
        }
        let a = c1 * (lam1 * t).exp();
        let diff: Vec<c64> = traj.states[k]
            .iter()
            .zip(&steady)
            .zip(r1)
            .map(|((x, s), r)| x - s - a * r)
            .collect();
        let res = norm(&diff);
        max_residual = max_residual.max(res);
        max_ratio = max_ratio.max(res / (lam2.re * t).exp());
        fid_sum += traj.fidelity[k];
        samples += 1;
    }
    Ok(PlateauReport {
        t_window: window,
        lambda1: [lam1.re, lam1.im],
        lambda2: [lam2.re, lam2.im],
        separation: lam2.re.abs() / lam1.re.abs(),
        plateau_fidelity: if samples > 0 { fid_sum / samples as f64 } else { f64::NAN },
        samples,
        max_residual,
        max_residual_ratio: max_ratio,
    })
}

/// Rate `b` of `1 - F(t) ~ a e^{-b t}` fitted on samples with `t >= t_from`.
/// Recovers `-Re lambda_1` once faster modes have died out.
pub fn fidelity_decay_rate(traj: &Trajectory, t_from: f64) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = traj
        .times
        .iter()
        .zip(&traj.fidelity)
        .filter(|(t, f)| **t >= t_from && **f < 1.0)
        .map(|(t, f)| (*t, (1.0 - f).ln()))
        .unzip();
    crate::ep::linear_slope(&x, &y).map(|s| -s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{build_liouvillian, qubit, JumpSet};
    use crate::sat::{filter_by_solution_count, parse_dimacs, PlantedParams};
    use crate::sparse::{CscMatrix, GenMatrix};
    use crate::spectral::{decompose, SolveMode, SolveOptions};

    fn dense() -> SolveOptions {
        SolveOptions::with_mode(SolveMode::Dense)
    }

    fn unique(n: usize, seed: u64) -> Model {
        let f = filter_by_solution_count(&PlantedParams::new(n), 1, seed, 100_000).unwrap();
        Model::sat3_classical(&f.instance, Some(f.seed)).unwrap()
    }

    fn obs(model: &Model) -> Observables {
        Observables::for_model(model).unwrap()
    }

    #[test]
    fn single_qubit_decay() {
        let h = CscMatrix::zeros(2, 2);
        let l = build_liouvillian(&h, &JumpSet::new(vec![qubit::sigma_minus()]), 1.0).unwrap();
        let basis = OperatorBasis::Full { d: 2 };
        let g = SparseGenerator::new(GenMatrix::Complex(l), "qubit", 1.0, basis.clone()).unwrap();
        let dec = decompose(&g, &dense()).unwrap();
        let excited = basis.basis_state(1).unwrap();
        let o = &Observables {
            basis: basis.clone(),
            targets: vec![excited.clone()],
        };
        let times: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
        let traj = evolve_spectral(&dec, o, &excited, &times).unwrap();
        for (t, p) in traj.times.iter().zip(&traj.fidelity) {
            assert!((p - (-t).exp()).abs() < 1e-8, "t = {t}: {p}");
        }
        let rk = evolve_rk4_at(&g, o, &excited, 0.01, &times).unwrap();
        assert!(rk.max_deviation(&traj).unwrap() < 1e-8);
    }

    #[test]
    fn steady_start_is_constant() {
        let model = unique(6, 1);
        let g = model.generator(1.0).unwrap();
        let dec = decompose(&g, &dense()).unwrap();
        let r0 = model.target_operator().unwrap().unwrap();
        let traj = evolve_spectral(&dec, &obs(&model), &r0, &[0.0, 1.0, 10.0]).unwrap();
        for s in &traj.states {
            assert!(s.iter().zip(&r0).all(|(a, b)| (a - b).norm() < 1e-10));
        }
        assert!(c1_coefficient(&dec, &r0).unwrap().norm() < 1e-10);
    }

    #[test]
    fn c1_is_linear_and_nonzero() {
        let model = unique(7, 2);
        let g = model.generator(1.0).unwrap();
        let dec = decompose(&g, &dense()).unwrap();
        let mixed = model.basis.maximally_mixed();
        let c = c1_coefficient(&dec, &mixed).unwrap();
        assert!(c.norm() > 1e-6);
        let doubled: Vec<c64> = mixed.iter().map(|x| x * 2.0).collect();
        assert!((c1_coefficient(&dec, &doubled).unwrap() - 2.0 * c).norm() < 1e-12);
    }

    #[test]
    fn rk4_matches_modal_synthesis_and_is_monotone() {
        let model = unique(7, 5);
        let g = model.generator(1.0).unwrap();
        let dec = decompose(&g, &dense()).unwrap();
        let mixed = model.basis.maximally_mixed();
        let times: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
        let a = evolve_spectral(&dec, &obs(&model), &mixed, &times).unwrap();
        let b = evolve_rk4_at(&g, &obs(&model), &mixed, max_stable_step(&g), &times).unwrap();
        assert!(a.max_deviation(&b).unwrap() <= 1e-6);
        assert!(b.fidelity.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        assert!(b.trace.iter().all(|t| (t - 1.0).abs() <= 1e-8));
    }

    #[test]
    fn conservation_over_long_times() {
        let model = unique(6, 9);
        let g = model.generator(1.0).unwrap();
        let mixed = model.basis.maximally_mixed();
        let dt = max_stable_step(&g);
        let times: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        let traj = evolve_rk4_at(&g, &obs(&model), &mixed, dt, &times).unwrap();
        assert!(traj.trace.iter().all(|t| (t - 1.0).abs() <= 1e-8));
    }

    #[test]
    fn quantum_hermiticity_preserved() {
        let inst = crate::sat::generate_planted_instance(3, 4.267, 0.08, 4).unwrap();
        let model = Model::sat3_hx(&inst, 0.7, None).unwrap();
        let g = model.generator(1.0).unwrap();
        let mixed = model.basis.maximally_mixed();
        let traj = evolve_rk4(&g, &obs(&model), &mixed, max_stable_step(&g), 5.0).unwrap();
        for s in &traj.states {
            let m = model.basis.to_operator(s);
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    assert!((m[(i, j)] - m[(j, i)].conj()).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn step_too_large() {
        let model = unique(5, 1);
        let g = model.generator(1.0).unwrap();
        let err = evolve_rk4(&g, &obs(&model), &model.basis.maximally_mixed(), 1.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
    }

    #[test]
    fn single_clause_has_no_separation() {
        let inst = parse_dimacs("p cnf 3 1\n1 2 3 0\n").unwrap();
        let model = Model::sat3_classical(&inst, None).unwrap();
        let dec = decompose(&model.generator(1.0).unwrap(), &dense()).unwrap();
        assert!(matches!(plateau_window(&dec), Err(Error::NoSeparation { .. })));
    }

    #[test]
    fn late_fidelity_deficit_recovers_lambda1() {
        let model = unique(8, 3);
        let g = model.generator(1.0).unwrap();
        let dec = decompose(&g, &dense()).unwrap();
        let (lam1, lam2) = leading_rates(&dec).unwrap();
        let t0 = 20.0 / lam2.unwrap().re.abs();
        let times: Vec<f64> = (0..=20).map(|k| t0 + k as f64 * 0.1 / lam1.re.abs()).collect();
        let traj = evolve_spectral(&dec, &obs(&model), &model.basis.maximally_mixed(), &times).unwrap();
        let rate = fidelity_decay_rate(&traj, t0).unwrap();
        assert!((rate / lam1.re.abs() - 1.0).abs() < 0.02, "{rate} vs {}", lam1.re);
    }
}
