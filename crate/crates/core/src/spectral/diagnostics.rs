//! Gap, overlap and metastable-structure diagnostics of a decomposition.

use faer::{Mat, Side};
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use super::eigen::SpectralDecomposition;
use crate::basis::{inner, norm, OperatorBasis};
use crate::error::{Error, Result};
use crate::sparse::SparseGenerator;

/// Eigenvalues with `|lambda|` at or below this are steady.
pub const STEADY_TOL: f64 = 1e-9;

/// Indices of steady modes, the metastable mode and any purely imaginary
/// nonzero modes (excluded from the gap bookkeeping).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeClasses {
    pub steady: Vec<usize>,
    /// First decaying mode in sort order; `None` if every returned mode is
    /// steady.
    pub metastable: Option<usize>,
    pub purely_imaginary: Vec<usize>,
}

pub fn classify_modes(dec: &SpectralDecomposition) -> Result<ModeClasses> {
    let mut steady = Vec::new();
    let mut metastable = None;
    let mut purely_imaginary = Vec::new();
    for (i, lam) in dec.eigenvalues.iter().enumerate() {
        if lam.norm() <= STEADY_TOL {
            steady.push(i);
        } else if lam.re.abs() <= STEADY_TOL {
            purely_imaginary.push(i);
        } else if metastable.is_none() {
            metastable = Some(i);
        }
    }
    if steady.is_empty() {
        return Err(Error::NoSteadyState);
    }
    Ok(ModeClasses {
        steady,
        metastable,
        purely_imaginary,
    })
}

/// Steady-state degeneracy `d`.
pub fn steady_degeneracy(dec: &SpectralDecomposition) -> Result<usize> {
    Ok(classify_modes(dec)?.steady.len())
}

fn metastable_index(classes: &ModeClasses) -> Result<usize> {
    classes
        .metastable
        .ok_or_else(|| Error::ConvergenceFailure("no decaying mode among the computed eigenpairs".into()))
}

/// `Delta = |Re lambda_d|` for the first non-steady mode.
pub fn liouvillian_gap(dec: &SpectralDecomposition) -> Result<f64> {
    let classes = classify_modes(dec)?;
    Ok(dec.eigenvalues[metastable_index(&classes)?].re.abs())
}

/// `nu = Tr[r0^dagger r1]` of the normalized steady and metastable right
/// eigenoperators.
pub fn eigen_overlap(dec: &SpectralDecomposition) -> Result<c64> {
    let classes = classify_modes(dec)?;
    if classes.steady.len() != 1 {
        return Err(Error::DegenerateCase {
            d: classes.steady.len(),
        });
    }
    let m = metastable_index(&classes)?;
    Ok(inner(&dec.right[classes.steady[0]], &dec.right[m]) / (norm(&dec.right[classes.steady[0]]) * norm(&dec.right[m])))
}

/// Orthonormal basis of the steady subspace.
pub fn steady_basis(dec: &SpectralDecomposition) -> Result<Vec<Vec<c64>>> {
    let classes = classify_modes(dec)?;
    let mut basis: Vec<Vec<c64>> = Vec::new();
    for &i in &classes.steady {
        let mut v = dec.right[i].clone();
        for _ in 0..2 {
            for b in &basis {
                let p = inner(b, &v);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        if n < 1e-8 {
            return Err(Error::NearDefective { condition: 1.0 / n });
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Ok(basis)
}

/// `|nu|^2 = sum_k |Tr[r_d^dagger q_k]|^2` over an orthonormal basis `q_k`
/// of the steady subspace.
pub fn degenerate_overlap(dec: &SpectralDecomposition) -> Result<f64> {
    let classes = classify_modes(dec)?;
    let m = metastable_index(&classes)?;
    let rd = &dec.right[m];
    let nrd = norm(rd);
    Ok(steady_basis(dec)?
        .iter()
        .map(|q| (inner(q, rd) / nrd).norm_sqr())
        .sum())
}

/// The generator restricted to `{r0, (r1 - nu r0)/sqrt(1 - |nu|^2)}`:
/// `[[0, lambda1 nu / sqrt(1 - |nu|^2)], [0, lambda1]]`.
pub fn effective_two_level(dec: &SpectralDecomposition) -> Result<[[c64; 2]; 2]> {
    let classes = classify_modes(dec)?;
    let m = metastable_index(&classes)?;
    let nu = eigen_overlap(dec)?;
    let nu2 = nu.norm_sqr();
    if nu2 >= 1.0 - 1e-12 {
        return Err(Error::OverlapSaturated { nu2 });
    }
    let lam = dec.eigenvalues[m];
    let zero = c64::new(0.0, 0.0);
    Ok([[zero, lam * nu / (1.0 - nu2).sqrt()], [zero, lam]])
}

/// `P^dagger A P` for the same two-dimensional basis, computed from the
/// generator itself.
pub fn project_two_level(g: &SparseGenerator, dec: &SpectralDecomposition) -> Result<[[c64; 2]; 2]> {
    let classes = classify_modes(dec)?;
    let m = metastable_index(&classes)?;
    let nu = eigen_overlap(dec)?;
    let nu2 = nu.norm_sqr();
    if nu2 >= 1.0 - 1e-12 {
        return Err(Error::OverlapSaturated { nu2 });
    }
    let e0: Vec<c64> = crate::basis::normalized(&dec.right[classes.steady[0]]);
    let r1: Vec<c64> = crate::basis::normalized(&dec.right[m]);
    let s = (1.0 - nu2).sqrt();
    let e1: Vec<c64> = r1.iter().zip(&e0).map(|(a, b)| (a - nu * b) / s).collect();
    let basis = [e0, e1];
    let images = [g.apply(&basis[0])?, g.apply(&basis[1])?];
    let mut out = [[c64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = inner(&basis[i], &images[j]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigStructureReport {
    pub kappa: f64,
    pub kappa_imag: f64,
    /// `||delta_r|| / ||r1||` with `Tr[r0^dagger r1] = 1`.
    pub rel_dr: f64,
    /// `||delta_l|| / ||l1||` with `Tr[l1^dagger r1] = 1`.
    pub rel_dl: f64,
    pub delta_r_norm2: f64,
    /// `|nu|^{-2} - 1`.
    pub delta_r_norm2_expected: f64,
}

impl EigStructureReport {
    pub fn identity_error(&self) -> f64 {
        (self.delta_r_norm2 - self.delta_r_norm2_expected).abs()
    }
}

/// Scaled metastable pair: `r1 / s` and `l1 conj(s)` with `s = Tr[r0^dagger r1]`.
fn scaled_pair(dec: &SpectralDecomposition) -> Result<(Vec<c64>, Vec<c64>, Vec<c64>, c64)> {
    dec.require_biorthonormal()?;
    let classes = classify_modes(dec)?;
    if classes.steady.len() != 1 {
        return Err(Error::DegenerateCase {
            d: classes.steady.len(),
        });
    }
    let m = metastable_index(&classes)?;
    let r0 = crate::basis::normalized(&dec.right[classes.steady[0]]);
    let s = inner(&r0, &dec.right[m]);
    if s.norm() == 0.0 {
        return Err(Error::InvalidParams("metastable mode is orthogonal to the steady state".into()));
    }
    let r1: Vec<c64> = dec.right[m].iter().map(|x| x / s).collect();
    let l1: Vec<c64> = dec.left[m].iter().map(|x| x * s.conj()).collect();
    Ok((r0, r1, l1, dec.eigenvalues[m]))
}

/// `r1 = r0 + delta_r` and `l1 = kappa (I - r0) + delta_l` with
/// `kappa = Tr[l1] / (Tr I - 1)`.
pub fn metastable_structure(dec: &SpectralDecomposition, basis: &OperatorBasis) -> Result<EigStructureReport> {
    let (r0, r1, l1, _) = scaled_pair(dec)?;
    let id = basis.identity();
    let tr_id = basis.trace(&id).re;
    let kappa = basis.trace(&l1) / (tr_id - 1.0);
    let tr_r0 = basis.trace(&r0);
    // r0 at unit trace when it has one, i.e. the steady density matrix.
    let rho0: Vec<c64> = if tr_r0.norm() > 1e-12 {
        r0.iter().map(|x| x / tr_r0).collect()
    } else {
        r0.clone()
    };
    let dr: Vec<c64> = r1.iter().zip(&r0).map(|(a, b)| a - b).collect();
    let dl: Vec<c64> = l1
        .iter()
        .zip(id.iter().zip(&rho0))
        .map(|(l, (i, p))| l - kappa * (i - p))
        .collect();
    let nu2 = eigen_overlap(dec)?.norm_sqr();
    let dr2 = norm(&dr).powi(2);
    Ok(EigStructureReport {
        kappa: kappa.re,
        kappa_imag: kappa.im,
        rel_dr: norm(&dr) / norm(&r1),
        rel_dl: norm(&dl) / norm(&l1),
        delta_r_norm2: dr2,
        delta_r_norm2_expected: 1.0 / nu2 - 1.0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefinitenessReport {
    /// Eigenvalues of the Hermitian part of `kappa^{-1} l1`, ascending.
    pub eigenvalues: Vec<f64>,
    pub negative_count: usize,
    pub near_zero_count: usize,
    /// Index of the smallest eigenvalue.
    pub zero_mode: usize,
    /// `|<psi|v_0>|^2` for the zero mode `v_0`, if a target was given.
    pub zero_mode_fidelity: Option<f64>,
    /// Fraction of eigenvalues in `[0.5, 1.5]`.
    pub fraction_near_one: f64,
}

/// Spectrum of `kappa^{-1} l1` as a Hermitian operator on the Hilbert space.
pub fn l1_definiteness(
    dec: &SpectralDecomposition,
    basis: &OperatorBasis,
    target: Option<&[c64]>,
) -> Result<DefinitenessReport> {
    let (_, _, l1, lam1) = scaled_pair(dec)?;
    if lam1.im.abs() > STEADY_TOL {
        return Err(Error::ComplexLambda1 { im: lam1.im });
    }
    let s = metastable_structure(dec, basis)?;
    let kappa = s.kappa;
    let op = basis.to_operator(&l1);
    let d = op.nrows();
    let (values, vectors): (Vec<f64>, Option<Mat<c64>>) = if basis.is_classical() {
        let mut vals: Vec<(f64, usize)> = (0..d).map(|i| (op[(i, i)].re / kappa, i)).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let v = Mat::from_fn(d, d, |r, c| {
            if r == vals[c].1 {
                c64::new(1.0, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        (vals.into_iter().map(|x| x.0).collect(), Some(v))
    } else {
        let herm = Mat::from_fn(d, d, |r, c| (op[(r, c)] + op[(c, r)].conj()) * (0.5 / kappa));
        let evd = herm
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::ConvergenceFailure(format!("Hermitian eigendecomposition: {e:?}")))?;
        let vals: Vec<f64> = evd.S().column_vector().iter().map(|x| x.re).collect();
        (vals, Some(evd.U().to_owned()))
    };
    let negative_count = values.iter().filter(|&&x| x < -1e-8).count();
    let near_zero_count = values.iter().filter(|&&x| x <= 1e-8).count();
    let zero_mode = 0;
    let zero_mode_fidelity = match (target, &vectors) {
        (Some(psi), Some(v)) => {
            let ov: c64 = (0..d).map(|i| psi[i].conj() * v[(i, zero_mode)]).sum();
            Some(ov.norm_sqr() / norm(psi).powi(2))
        }
        _ => None,
    };
    let fraction_near_one =
        values.iter().filter(|&&x| (0.5..=1.5).contains(&x)).count() as f64 / values.len().max(1) as f64;
    Ok(DefinitenessReport {
        eigenvalues: values,
        negative_count,
        near_zero_count,
        zero_mode,
        zero_mode_fidelity,
        fraction_near_one,
    })
}

/// `||A r0|| / ||r0||` for a candidate steady operator.
pub fn zero_mode_residual(g: &SparseGenerator, r0: &[c64]) -> Result<f64> {
    Ok(norm(&g.apply(r0)?) / norm(r0))
}

/// Metastable amplitude `c_i = Tr[l_i^dagger rho]`.
pub fn c1_coefficient(dec: &SpectralDecomposition, rho: &[c64]) -> Result<c64> {
    dec.require_biorthonormal()?;
    let classes = classify_modes(dec)?;
    let m = metastable_index(&classes)?;
    Ok(inner(&dec.left[m], rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{CscMatrix, GenMatrix};
    use crate::spectral::eigen::{decompose_matrix, SolveMode, SolveOptions};

    fn two_state(lam: f64, off: f64) -> (SparseGenerator, SpectralDecomposition) {
        // Upper-triangular: steady e0, metastable with eigenvalue lam.
        let m = CscMatrix::from_triplets(2, 2, vec![(0, 1, off), (1, 1, lam)]).unwrap();
        let g = SparseGenerator::new(GenMatrix::Real(m), "toy", 1.0, OperatorBasis::Diagonal { dim: 2 }).unwrap();
        let dec = decompose_matrix(&g.matrix, &SolveOptions::with_mode(SolveMode::Dense)).unwrap();
        (g, dec)
    }

    #[test]
    fn effective_matrix_matches_projection() {
        let (g, dec) = two_state(-0.5, 0.3);
        let a = effective_two_level(&dec).unwrap();
        let b = project_two_level(&g, &dec).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[i][j] - b[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_modes_have_zero_overlap() {
        let (_, dec) = two_state(-0.5, 0.0);
        assert!(eigen_overlap(&dec).unwrap().norm() < 1e-14);
        let a = effective_two_level(&dec).unwrap();
        assert_eq!(a[0][1], c64::new(0.0, 0.0));
        assert!((a[1][1].re + 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_for_delta_r() {
        let (_, dec) = two_state(-0.5, 0.3);
        let s = metastable_structure(&dec, &OperatorBasis::Diagonal { dim: 2 }).unwrap();
        assert!(s.identity_error() < 1e-12);
    }

    #[test]
    fn no_steady_state() {
        let m = CscMatrix::from_triplets(1, 1, vec![(0, 0, -1.0)]).unwrap();
        let dec = decompose_matrix(&GenMatrix::Real(m), &SolveOptions::with_mode(SolveMode::Dense)).unwrap();
        assert!(matches!(liouvillian_gap(&dec), Err(Error::NoSteadyState)));
    }
}
