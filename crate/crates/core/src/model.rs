//! Named models: each is an affine family `L_W = L_0 + W J` in a fixed basis
//! together with the state it is meant to prepare.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::basis::OperatorBasis;
use crate::classical;
use crate::error::{Error, Result};
use crate::quantum::{self, JumpSet, OperatorMatrix, SectorSpec};
use crate::sat::{count_solutions, SatInstance};
use crate::sparse::{CscMatrix, GenMatrix, SparseGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelTag {
    #[serde(rename = "sat3-classical")]
    Sat3Classical,
    #[serde(rename = "sat3-quantum")]
    Sat3Quantum,
    #[serde(rename = "sat3-hx")]
    Sat3Hx,
    #[serde(rename = "aklt")]
    Aklt,
    #[serde(rename = "xx-dephasing")]
    XxDephasing,
    #[serde(rename = "ferro-chain")]
    FerroChain,
}

impl ModelTag {
    pub const ALL: [ModelTag; 6] = [
        ModelTag::Sat3Classical,
        ModelTag::Sat3Quantum,
        ModelTag::Sat3Hx,
        ModelTag::Aklt,
        ModelTag::XxDephasing,
        ModelTag::FerroChain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Sat3Classical => "sat3-classical",
            ModelTag::Sat3Quantum => "sat3-quantum",
            ModelTag::Sat3Hx => "sat3-hx",
            ModelTag::Aklt => "aklt",
            ModelTag::XxDephasing => "xx-dephasing",
            ModelTag::FerroChain => "ferro-chain",
        }
    }

    pub fn needs_instance(self) -> bool {
        matches!(self, ModelTag::Sat3Classical | ModelTag::Sat3Quantum | ModelTag::Sat3Hx)
    }

    pub fn is_classical(self) -> bool {
        matches!(self, ModelTag::Sat3Classical | ModelTag::FerroChain)
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown model {s:?}")))
    }
}

/// Local structure needed to place single-site perturbations.
#[derive(Debug, Clone)]
pub struct SiteStructure {
    pub n_sites: usize,
    pub local_dim: usize,
    /// Hilbert-space sector the model lives in, if restricted.
    pub hilbert_sector: Option<SectorSpec>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub tag: ModelTag,
    /// Number of variables or spins.
    pub n: usize,
    pub seed: Option<u64>,
    pub basis: OperatorBasis,
    pub sites: SiteStructure,
    l0: GenMatrix,
    j: GenMatrix,
    /// Hilbert-space vectors of the designed pure steady states (solutions,
    /// the ferromagnet, the AKLT state). Empty for mixed steady states.
    pub targets: Vec<Vec<c64>>,
}

fn basis_vector(dim: usize, i: usize) -> Vec<c64> {
    let mut v = vec![c64::new(0.0, 0.0); dim];
    v[i] = c64::new(1.0, 0.0);
    v
}

fn affine_split(at0: GenMatrix, at1: GenMatrix) -> Result<(GenMatrix, GenMatrix)> {
    let j = at1.add_scaled(&at0, -1.0)?;
    Ok((at0, j))
}

fn solution_targets(inst: &SatInstance) -> Result<Vec<Vec<c64>>> {
    let dim = 1usize << inst.num_vars();
    let sols = count_solutions(inst, 16)?;
    Ok(sols
        .solutions
        .iter()
        .map(|a| basis_vector(dim, a.bits() as usize))
        .collect())
}

impl Model {
    pub fn sat3_classical(inst: &SatInstance, seed: Option<u64>) -> Result<Self> {
        let g0 = classical::build_classical_generator(inst, 0.0)?;
        let g1 = classical::build_classical_generator(inst, 1.0)?;
        let (l0, j) = affine_split(g0.matrix, g1.matrix)?;
        Ok(Model {
            tag: ModelTag::Sat3Classical,
            n: inst.num_vars(),
            seed,
            basis: g0.basis,
            sites: SiteStructure {
                n_sites: inst.num_vars(),
                local_dim: 2,
                hilbert_sector: None,
            },
            l0,
            j,
            targets: solution_targets(inst)?,
        })
    }

    fn from_operators(
        tag: ModelTag,
        n: usize,
        seed: Option<u64>,
        h: &OperatorMatrix,
        jumps: &JumpSet,
        keep: Option<Vec<usize>>,
        sites: SiteStructure,
        targets: Vec<Vec<c64>>,
    ) -> Result<Self> {
        let d = h.nrows();
        let (l0, j) = quantum::liouvillian_parts(h, jumps, keep.as_deref())?;
        let basis = match keep {
            Some(indices) => OperatorBasis::Sector { d, indices },
            None => OperatorBasis::Full { d },
        };
        Ok(Model {
            tag,
            n,
            seed,
            basis,
            sites,
            l0: GenMatrix::Complex(l0),
            j: GenMatrix::Complex(j),
            targets,
        })
    }

    /// Quantum 3SAT solver with `H = 0`.
    pub fn sat3_quantum(inst: &SatInstance, seed: Option<u64>) -> Result<Self> {
        let dim = 1usize << inst.num_vars();
        let h = CscMatrix::zeros(dim, dim);
        Self::sat3_with_hamiltonian(ModelTag::Sat3Quantum, inst, seed, &h)
    }

    /// Quantum 3SAT solver with the modified transverse field of strength `h`.
    pub fn sat3_hx(inst: &SatInstance, h: f64, seed: Option<u64>) -> Result<Self> {
        let hx = quantum::build_hx(inst, h)?;
        Self::sat3_with_hamiltonian(ModelTag::Sat3Hx, inst, seed, &hx)
    }

    fn sat3_with_hamiltonian(tag: ModelTag, inst: &SatInstance, seed: Option<u64>, h: &OperatorMatrix) -> Result<Self> {
        let n = inst.num_vars();
        if 2 * n > 16 {
            return Err(Error::DimensionOverflow { n, max: 8 });
        }
        let jumps = quantum::build_3sat_jumps(inst)?;
        let sites = SiteStructure {
            n_sites: n,
            local_dim: 2,
            hilbert_sector: None,
        };
        Self::from_operators(tag, n, seed, h, &jumps, None, sites, solution_targets(inst)?)
    }

    /// AKLT preparation, restricted to operators whose bra and ket carry
    /// the same magnetization (the steady and metastable modes live there).
    pub fn aklt(n_spins: usize) -> Result<Self> {
        let jumps = quantum::build_aklt_model(n_spins)?;
        let dim = 3usize.pow(n_spins as u32);
        let h = CscMatrix::zeros(dim, dim);
        let keep = quantum::weak_u1_indices(n_spins, 3);
        let sites = SiteStructure {
            n_sites: n_spins,
            local_dim: 3,
            hilbert_sector: None,
        };
        let target = quantum::aklt_mps_state(n_spins)?;
        Self::from_operators(ModelTag::Aklt, n_spins, None, &h, &jumps, Some(keep), sites, vec![target])
    }

    /// AKLT preparation on the full operator space.
    pub fn aklt_full(n_spins: usize) -> Result<Self> {
        let jumps = quantum::build_aklt_model(n_spins)?;
        let dim = 3usize.pow(n_spins as u32);
        let h = CscMatrix::zeros(dim, dim);
        let sites = SiteStructure {
            n_sites: n_spins,
            local_dim: 3,
            hilbert_sector: None,
        };
        let target = quantum::aklt_mps_state(n_spins)?;
        Self::from_operators(ModelTag::Aklt, n_spins, None, &h, &jumps, None, sites, vec![target])
    }

    /// Dephasing XX chain in its magnetization sector.
    pub fn xx_dephasing(n_spins: usize) -> Result<Self> {
        let (h, jumps, sector) = quantum::build_xx_dephasing(n_spins)?;
        let sites = SiteStructure {
            n_sites: n_spins,
            local_dim: 2,
            hilbert_sector: Some(sector),
        };
        Self::from_operators(ModelTag::XxDephasing, n_spins, None, &h, &jumps, None, sites, Vec::new())
    }

    /// Ferromagnetic chain restricted to translation-invariant distributions,
    /// which contain the steady state and the slowest mode.
    pub fn ferro_chain(n_spins: usize) -> Result<Self> {
        let g0 = classical::build_ferro_chain_sector(n_spins, 0.0)?;
        let g1 = classical::build_ferro_chain_sector(n_spins, 1.0)?;
        let (l0, j) = affine_split(g0.matrix, g1.matrix)?;
        Ok(Model {
            tag: ModelTag::FerroChain,
            n: n_spins,
            seed: None,
            basis: g0.basis,
            sites: SiteStructure {
                n_sites: n_spins,
                local_dim: 2,
                hilbert_sector: None,
            },
            l0,
            j,
            targets: vec![basis_vector(1 << n_spins, 0)],
        })
    }

    /// Ferromagnetic chain on all `2^N` configurations.
    pub fn ferro_chain_full(n_spins: usize) -> Result<Self> {
        let g0 = classical::build_ferro_chain_generator(n_spins, 0.0)?;
        let g1 = classical::build_ferro_chain_generator(n_spins, 1.0)?;
        let (l0, j) = affine_split(g0.matrix, g1.matrix)?;
        Ok(Model {
            tag: ModelTag::FerroChain,
            n: n_spins,
            seed: None,
            basis: g0.basis,
            sites: SiteStructure {
                n_sites: n_spins,
                local_dim: 2,
                hilbert_sector: None,
            },
            l0,
            j,
            targets: vec![basis_vector(1 << n_spins, 0)],
        })
    }

    /// Builds a model from its tag. SAT models need `instance`; `sat3-hx`
    /// also needs `h`.
    pub fn from_tag(tag: ModelTag, n: usize, instance: Option<&SatInstance>, h: Option<f64>, seed: Option<u64>) -> Result<Self> {
        let need_inst = || {
            instance.ok_or_else(|| Error::InvalidParams(format!("model {tag} needs a SAT instance")))
        };
        match tag {
            ModelTag::Sat3Classical => Model::sat3_classical(need_inst()?, seed),
            ModelTag::Sat3Quantum => Model::sat3_quantum(need_inst()?, seed),
            ModelTag::Sat3Hx => {
                let h = h.ok_or_else(|| Error::InvalidParams("sat3-hx needs the field strength h".into()))?;
                Model::sat3_hx(need_inst()?, h, seed)
            }
            ModelTag::Aklt => Model::aklt(n),
            ModelTag::XxDephasing => Model::xx_dephasing(n),
            ModelTag::FerroChain => Model::ferro_chain(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `L_0 + W J`.
    pub fn generator(&self, w: f64) -> Result<SparseGenerator> {
        let m = self.l0.add_scaled(&self.j, w)?;
        SparseGenerator::new(m, self.tag.as_str(), w, self.basis.clone())
    }

    pub fn parts(&self) -> (&GenMatrix, &GenMatrix) {
        (&self.l0, &self.j)
    }

    /// Coordinates of every designed steady state `|psi><psi|`.
    pub fn target_operators(&self) -> Result<Vec<Vec<c64>>> {
        self.targets.iter().map(|psi| self.basis.pure_state(psi)).collect()
    }

    /// Coordinates of the first designed steady state `|psi><psi|`.
    pub fn target_operator(&self) -> Result<Option<Vec<c64>>> {
        self.targets.first().map(|psi| self.basis.pure_state(psi)).transpose()
    }
}
