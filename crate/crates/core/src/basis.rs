//! Coordinates in which generators act.
//!
//! Every basis is orthonormal with respect to the Hilbert–Schmidt inner
//! product, so overlaps and norms are plain vector dot products.

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OperatorBasis {
    /// Diagonal density matrices over `dim` classical states.
    Diagonal { dim: usize },
    /// Column-stacked `d x d` operators: entry `(r, c)` sits at `c * d + r`.
    Full { d: usize },
    /// The column-stacked entries listed in `indices` (sorted ascending).
    Sector { d: usize, indices: Vec<usize> },
    /// Diagonal density matrices that are uniform on each orbit, in the basis
    /// `sum_{i in O} |i><i| / sqrt(|O|)`.
    Orbits { dim: usize, orbits: Vec<Vec<usize>> },
}

impl OperatorBasis {
    pub fn len(&self) -> usize {
        match self {
            OperatorBasis::Diagonal { dim } => *dim,
            OperatorBasis::Full { d } => d * d,
            OperatorBasis::Sector { indices, .. } => indices.len(),
            OperatorBasis::Orbits { orbits, .. } => orbits.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dimension of the underlying Hilbert space (or classical state space).
    pub fn hilbert_dim(&self) -> usize {
        match self {
            OperatorBasis::Diagonal { dim } | OperatorBasis::Orbits { dim, .. } => *dim,
            OperatorBasis::Full { d } | OperatorBasis::Sector { d, .. } => *d,
        }
    }

    pub fn is_classical(&self) -> bool {
        matches!(self, OperatorBasis::Diagonal { .. } | OperatorBasis::Orbits { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            OperatorBasis::Diagonal { dim } => format!("diagonal({dim})"),
            OperatorBasis::Full { d } => format!("column-stacked({d}x{d})"),
            OperatorBasis::Sector { d, indices } => {
                format!("sector({} of {d}x{d})", indices.len())
            }
            OperatorBasis::Orbits { dim, orbits } => format!("orbits({} of {dim})", orbits.len()),
        }
    }

    /// Coordinates of the identity operator. Also the trace functional:
    /// `Tr[v] = sum_k identity[k] * v[k]`.
    pub fn identity(&self) -> Vec<c64> {
        let one = c64::new(1.0, 0.0);
        match self {
            OperatorBasis::Diagonal { dim } => vec![one; *dim],
            OperatorBasis::Full { d } => {
                let mut v = vec![c64::new(0.0, 0.0); d * d];
                for i in 0..*d {
                    v[i * d + i] = one;
                }
                v
            }
            OperatorBasis::Sector { d, indices } => indices
                .iter()
                .map(|&k| if k / d == k % d { one } else { c64::new(0.0, 0.0) })
                .collect(),
            OperatorBasis::Orbits { orbits, .. } => orbits
                .iter()
                .map(|o| c64::new((o.len() as f64).sqrt(), 0.0))
                .collect(),
        }
    }

    pub fn trace(&self, v: &[c64]) -> c64 {
        match self {
            OperatorBasis::Diagonal { .. } => v.iter().sum(),
            OperatorBasis::Full { d } => (0..*d).map(|i| v[i * d + i]).sum(),
            _ => self.identity().iter().zip(v).map(|(a, b)| a * b).sum(),
        }
    }

    /// Matrix elements of the operator `v` as a dense `d x d` matrix.
    pub fn to_operator(&self, v: &[c64]) -> Mat<c64> {
        let d = self.hilbert_dim();
        let mut m = Mat::<c64>::zeros(d, d);
        match self {
            OperatorBasis::Diagonal { .. } => {
                for (i, x) in v.iter().enumerate() {
                    m[(i, i)] = *x;
                }
            }
            OperatorBasis::Full { .. } => {
                for (k, x) in v.iter().enumerate() {
                    m[(k % d, k / d)] = *x;
                }
            }
            OperatorBasis::Sector { indices, .. } => {
                for (k, x) in indices.iter().zip(v) {
                    m[(k % d, k / d)] = *x;
                }
            }
            OperatorBasis::Orbits { orbits, .. } => {
                for (o, x) in orbits.iter().zip(v) {
                    let s = *x / (o.len() as f64).sqrt();
                    for &i in o {
                        m[(i, i)] = s;
                    }
                }
            }
        }
        m
    }

    /// Orthogonal projection of a dense operator onto this basis.
    pub fn from_operator(&self, m: &Mat<c64>) -> Result<Vec<c64>> {
        let d = self.hilbert_dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                found: m.nrows(),
            });
        }
        Ok(match self {
            OperatorBasis::Diagonal { .. } => (0..d).map(|i| m[(i, i)]).collect(),
            OperatorBasis::Full { .. } => (0..d * d).map(|k| m[(k % d, k / d)]).collect(),
            OperatorBasis::Sector { indices, .. } => {
                indices.iter().map(|&k| m[(k % d, k / d)]).collect()
            }
            OperatorBasis::Orbits { orbits, .. } => orbits
                .iter()
                .map(|o| o.iter().map(|&i| m[(i, i)]).sum::<c64>() / (o.len() as f64).sqrt())
                .collect(),
        })
    }

    /// Coordinates of `|i><i|` (projected, for orbit bases).
    pub fn basis_state(&self, i: usize) -> Result<Vec<c64>> {
        let d = self.hilbert_dim();
        if i >= d {
            return Err(Error::ShapeMismatch { expected: d, found: i });
        }
        let one = c64::new(1.0, 0.0);
        let mut v = vec![c64::new(0.0, 0.0); self.len()];
        match self {
            OperatorBasis::Diagonal { .. } => v[i] = one,
            OperatorBasis::Full { d } => v[i * d + i] = one,
            OperatorBasis::Sector { d, indices } => {
                if let Ok(k) = indices.binary_search(&(i * d + i)) {
                    v[k] = one;
                }
            }
            OperatorBasis::Orbits { orbits, .. } => {
                if let Some(k) = orbits.iter().position(|o| o.contains(&i)) {
                    v[k] = c64::new(1.0 / (orbits[k].len() as f64).sqrt(), 0.0);
                }
            }
        }
        Ok(v)
    }

    /// Coordinates of `|psi><psi|`.
    pub fn pure_state(&self, psi: &[c64]) -> Result<Vec<c64>> {
        let d = self.hilbert_dim();
        if psi.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                found: psi.len(),
            });
        }
        let elem = |k: usize| psi[k % d] * psi[k / d].conj();
        Ok(match self {
            OperatorBasis::Diagonal { .. } => psi.iter().map(|a| c64::new(a.norm_sqr(), 0.0)).collect(),
            OperatorBasis::Full { .. } => (0..d * d).map(elem).collect(),
            OperatorBasis::Sector { indices, .. } => indices.iter().map(|&k| elem(k)).collect(),
            OperatorBasis::Orbits { orbits, .. } => orbits
                .iter()
                .map(|o| {
                    let s: f64 = o.iter().map(|&i| psi[i].norm_sqr()).sum();
                    c64::new(s / (o.len() as f64).sqrt(), 0.0)
                })
                .collect(),
        })
    }

    /// Coordinates of the maximally mixed state `I / Tr I`.
    pub fn maximally_mixed(&self) -> Vec<c64> {
        let id = self.identity();
        let tr: c64 = id.iter().map(|x| x * x).sum();
        id.iter().map(|x| x / tr).collect()
    }
}

/// Hilbert–Schmidt inner product `Tr[a^dagger b]`.
pub fn inner(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn normalized(a: &[c64]) -> Vec<c64> {
    let n = norm(a);
    a.iter().map(|x| x / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_trace() {
        let full = OperatorBasis::Full { d: 2 };
        let id = full.identity();
        assert_eq!(id, [1.0, 0.0, 0.0, 1.0].map(|x| c64::new(x, 0.0)));
        assert_eq!(full.trace(&id), c64::new(2.0, 0.0));

        let orbits = OperatorBasis::Orbits {
            dim: 4,
            orbits: vec![vec![0], vec![1, 2], vec![3]],
        };
        assert!((orbits.trace(&orbits.identity()).re - 4.0).abs() < 1e-12);
        let mixed = orbits.maximally_mixed();
        assert!((orbits.trace(&mixed).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn operator_roundtrip() {
        let full = OperatorBasis::Full { d: 3 };
        let v: Vec<c64> = (0..9).map(|k| c64::new(k as f64, -(k as f64) / 2.0)).collect();
        let m = full.to_operator(&v);
        assert_eq!(m[(1, 2)], v[2 * 3 + 1]);
        assert_eq!(full.from_operator(&m).unwrap(), v);
    }

    #[test]
    fn pure_state_is_rank_one() {
        let full = OperatorBasis::Full { d: 2 };
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = [c64::new(s, 0.0), c64::new(0.0, s)];
        let rho = full.pure_state(&psi).unwrap();
        assert!((full.trace(&rho).re - 1.0).abs() < 1e-12);
        assert!((norm(&rho) - 1.0).abs() < 1e-12);
        // rho(1, 0) = psi_1 conj(psi_0)
        assert!((rho[1] - c64::new(0.0, 0.5)).norm() < 1e-12);
    }
}
