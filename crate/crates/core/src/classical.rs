//! Classical Markov generators acting on probability vectors.
//!
//! Column `i` of a generator holds the rates out of state `i`; a generator
//! conserves probability iff every column sums to zero.

use num_complex::Complex64 as c64;

use crate::basis::OperatorBasis;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::sat::SatInstance;
use crate::sparse::{CscMatrix, GenMatrix, SparseGenerator};

/// Largest variable count for classical generators.
pub const MAX_CLASSICAL_VARS: usize = 26;

fn check_size(n: usize) -> Result<usize> {
    if n > MAX_CLASSICAL_VARS {
        return Err(Error::DimensionOverflow {
            n,
            max: MAX_CLASSICAL_VARS,
        });
    }
    Ok(1usize << n)
}

/// `M_W = sum_m sum_alpha (W X_{m_alpha} - 1) P_m` restricted to diagonal
/// density matrices: every state violating clause `m` leaks at rate 3 and
/// feeds each of its three single-flip neighbours at rate `W`.
pub fn build_classical_generator(inst: &SatInstance, w: f64) -> Result<SparseGenerator> {
    build_classical_generator_with(Execution::default(), inst, w)
}

pub fn build_classical_generator_with(exec: Execution, inst: &SatInstance, w: f64) -> Result<SparseGenerator> {
    let dim = check_size(inst.num_vars())?;
    let masks: Vec<(u64, u64, [usize; 3])> = inst
        .clauses()
        .iter()
        .map(|c| {
            let (m, p) = c.violation_mask();
            (m, p, c.qubits())
        })
        .collect();
    let m = CscMatrix::from_columns(exec, dim, dim, |i, out| {
        let s = i as u64;
        for &(mask, pattern, qubits) in &masks {
            if s & mask == pattern {
                out.push((i, -3.0));
                for q in qubits {
                    out.push((i ^ (1 << q), w));
                }
            }
        }
    })?;
    SparseGenerator::new(
        GenMatrix::Real(m),
        "sat3-classical",
        w,
        OperatorBasis::Diagonal { dim },
    )
}

/// Periodic chain where every bond that is not `↓↓` leaks at rate 2 and
/// flips either of its spins at rate `W`. `↓` is bit value 0, so the
/// absorbing ferromagnet is state 0.
pub fn build_ferro_chain_generator(n_spins: usize, w: f64) -> Result<SparseGenerator> {
    let m = ferro_chain_matrix(Execution::default(), n_spins, w)?;
    let dim = m.nrows();
    SparseGenerator::new(GenMatrix::Real(m), "ferro-chain", w, OperatorBasis::Diagonal { dim })
}

pub fn ferro_chain_matrix(exec: Execution, n_spins: usize, w: f64) -> Result<CscMatrix<f64>> {
    if n_spins < 3 {
        return Err(Error::InvalidParams(format!(
            "ferro chain needs at least 3 spins, got {n_spins}"
        )));
    }
    let dim = check_size(n_spins)?;
    CscMatrix::from_columns(exec, dim, dim, |i, out| {
        for a in 0..n_spins {
            let b = (a + 1) % n_spins;
            if (i >> a) & 1 == 0 && (i >> b) & 1 == 0 {
                continue;
            }
            out.push((i, -2.0));
            out.push((i ^ (1 << a), w));
            out.push((i ^ (1 << b), w));
        }
    })
}

/// Orbits of `0..2^n` under cyclic translation, each sorted, ordered by
/// their smallest member. The all-down state forms the first orbit.
pub fn translation_orbits(n: usize) -> Result<Vec<Vec<usize>>> {
    let dim = check_size(n)?;
    let mask = dim - 1;
    let rot = |i: usize| ((i << 1) | (i >> (n - 1))) & mask;
    let mut seen = vec![false; dim];
    let mut orbits = Vec::new();
    for i in 0..dim {
        if seen[i] {
            continue;
        }
        let mut orbit = vec![i];
        seen[i] = true;
        let mut j = rot(i);
        while j != i {
            seen[j] = true;
            orbit.push(j);
            j = rot(j);
        }
        orbit.sort_unstable();
        orbits.push(orbit);
    }
    Ok(orbits)
}

/// Action of a symmetric generator on orbit-uniform vectors, in the
/// normalized orbit basis. Fails with `Leakage` if the generator does not
/// commute with the symmetry.
pub fn orbit_quotient(m: &CscMatrix<f64>, orbits: &[Vec<usize>]) -> Result<CscMatrix<f64>> {
    let dim = m.nrows();
    let mut orbit_of = vec![usize::MAX; dim];
    for (k, o) in orbits.iter().enumerate() {
        for &i in o {
            orbit_of[i] = k;
        }
    }
    if orbit_of.contains(&usize::MAX) {
        return Err(Error::InvalidParams("orbits do not cover the state space".into()));
    }
    let flows = |i: usize| {
        let mut acc: Vec<(usize, f64)> = m.column(i).map(|(r, v)| (orbit_of[r], v)).collect();
        acc.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (k, v) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => merged.push((k, v)),
            }
        }
        merged
    };
    let mut triplets = Vec::new();
    let mut worst = 0.0f64;
    for (k, o) in orbits.iter().enumerate() {
        let rep = flows(o[0]);
        for &other in &o[1..] {
            let mut diff: Vec<(usize, f64)> = rep.clone();
            diff.extend(flows(other).into_iter().map(|(k, v)| (k, -v)));
            diff.sort_unstable_by_key(|e| e.0);
            let mut i = 0;
            while i < diff.len() {
                let mut d = 0.0;
                let k0 = diff[i].0;
                while i < diff.len() && diff[i].0 == k0 {
                    d += diff[i].1;
                    i += 1;
                }
                worst = worst.max(d.abs());
            }
        }
        for (k2, s) in rep {
            let scale = (o.len() as f64 / orbits[k2].len() as f64).sqrt();
            triplets.push((k2, k, s * scale));
        }
    }
    if worst > 1e-12 {
        return Err(Error::Leakage { max_element: worst });
    }
    CscMatrix::from_triplets(orbits.len(), orbits.len(), triplets)
}

/// Ferro chain restricted to translation-invariant distributions.
pub fn build_ferro_chain_sector(n_spins: usize, w: f64) -> Result<SparseGenerator> {
    let full = ferro_chain_matrix(Execution::default(), n_spins, w)?;
    let orbits = translation_orbits(n_spins)?;
    let q = orbit_quotient(&full, &orbits)?;
    SparseGenerator::new(
        GenMatrix::Real(q),
        "ferro-chain",
        w,
        OperatorBasis::Orbits {
            dim: full.nrows(),
            orbits,
        },
    )
}

/// Dissipator `sum_k (W L_k rho L_k^dagger - {L_k^dagger L_k, rho} / 2)` on
/// diagonal states. Each `L_k` must have at most one nonzero per column so
/// that diagonal states stay diagonal.
pub fn classical_channel(dim: usize, ops: &[CscMatrix<c64>], w: f64) -> Result<CscMatrix<f64>> {
    let mut triplets = Vec::new();
    for (k, op) in ops.iter().enumerate() {
        if op.nrows() != dim || op.ncols() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                found: op.nrows(),
            });
        }
        for c in 0..dim {
            let mut entries = op.column(c);
            if let Some((r, a)) = entries.next() {
                if entries.next().is_some() {
                    return Err(Error::KindMismatch(format!(
                        "jump {k} mixes basis states and has no classical restriction"
                    )));
                }
                let rate = a.norm_sqr();
                triplets.push((r, c, w * rate));
                triplets.push((c, c, -rate));
            }
        }
    }
    CscMatrix::from_triplets(dim, dim, triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sat::parse_dimacs;

    #[test]
    fn single_clause_matrix() {
        let inst = parse_dimacs("p cnf 3 1\n1 2 3 0\n").unwrap();
        let g = build_classical_generator(&inst, 1.0).unwrap();
        let GenMatrix::Real(m) = &g.matrix else { panic!() };
        assert_eq!(m.get(0, 0), -3.0);
        for r in [1, 2, 4] {
            assert_eq!(m.get(r, 0), 1.0);
        }
        assert_eq!(m.nnz(), 4);
        assert!(g.stochasticity_check() <= 1e-12);
    }

    #[test]
    fn column_sum_above_one() {
        let inst = parse_dimacs("p cnf 4 2\n1 2 3 0\n1 2 4 0\n").unwrap();
        let g = build_classical_generator(&inst, 1.1).unwrap();
        // State 0 violates both clauses: 2 * 3 * (W - 1).
        assert!((g.stochasticity_check() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ferro_absorbing_state() {
        let g = build_ferro_chain_generator(4, 1.3).unwrap();
        let GenMatrix::Real(m) = &g.matrix else { panic!() };
        assert_eq!(m.column(0).count(), 0);
        let g1 = build_ferro_chain_generator(3, 1.0).unwrap();
        assert!(g1.stochasticity_check() <= 1e-12);
    }

    #[test]
    fn orbit_counts() {
        // Binary necklaces of length 6.
        assert_eq!(translation_orbits(6).unwrap().len(), 14);
        assert_eq!(translation_orbits(5).unwrap()[0], vec![0]);
    }

    #[test]
    fn quotient_preserves_trace() {
        let s = build_ferro_chain_sector(6, 1.0).unwrap();
        assert!(s.stochasticity_check() < 1e-12);
        assert_eq!(s.dim(), 14);
    }

    #[test]
    fn quotient_rejects_asymmetric_generator() {
        let inst = parse_dimacs("p cnf 3 1\n1 2 3 0\n").unwrap();
        let g = build_classical_generator(&inst, 1.0).unwrap();
        let GenMatrix::Real(m) = &g.matrix else { panic!() };
        let mut shifted = m.clone();
        shifted = shifted
            .add_scaled(&CscMatrix::diagonal(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 1.0)
            .unwrap();
        assert!(matches!(
            orbit_quotient(&shifted, &translation_orbits(3).unwrap()),
            Err(Error::Leakage { .. })
        ));
    }

    #[test]
    fn nonmonomial_channel_rejected() {
        let op = CscMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, c64::new(1.0, 0.0)), (1, 0, c64::new(1.0, 0.0))],
        )
        .unwrap();
        assert!(matches!(classical_channel(2, &[op], 1.0), Err(Error::KindMismatch(_))));
    }
}
