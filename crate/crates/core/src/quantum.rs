//! Hilbert-space operators and Lindblad superoperators.
//!
//! Vectorization stacks columns: `rho(r, c)` sits at index `c * D + r`, so
//! `vec(A rho B) = (B^T ⊗ A) vec(rho)` and
//! `L_W = -i (I ⊗ H_nH - H_nH^* ⊗ I) + W sum_mu L_mu^* ⊗ L_mu`
//! with `H_nH = H - (i/2) sum_mu L_mu^dagger L_mu`.

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::basis::OperatorBasis;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::sat::SatInstance;
use crate::sparse::{CscMatrix, GenMatrix, SparseGenerator};

pub type OperatorMatrix = CscMatrix<c64>;

/// Largest variable count for quantum 3SAT operators.
pub const MAX_QUANTUM_VARS: usize = 10;
/// Largest superoperator dimension assembled explicitly.
pub const MAX_SUPER_DIM: usize = 1 << 17;

const ONE: c64 = c64::new(1.0, 0.0);
const I: c64 = c64::new(0.0, 1.0);

/// Jump operators, all with unit rate.
#[derive(Debug, Clone, Default)]
pub struct JumpSet {
    pub ops: Vec<OperatorMatrix>,
}

impl JumpSet {
    pub fn new(ops: Vec<OperatorMatrix>) -> Self {
        JumpSet { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

fn op(d: usize, entries: &[(usize, usize, c64)]) -> OperatorMatrix {
    CscMatrix::from_triplets(d, d, entries.to_vec()).expect("local operator indices in range")
}

fn re(x: f64) -> c64 {
    c64::new(x, 0.0)
}

/// Qubit operators; `|1>` is spin up (`sigma_z = +1`, TRUE).
pub mod qubit {
    use super::*;

    pub fn sigma_x() -> OperatorMatrix {
        op(2, &[(0, 1, ONE), (1, 0, ONE)])
    }
    pub fn sigma_z() -> OperatorMatrix {
        op(2, &[(0, 0, -ONE), (1, 1, ONE)])
    }
    /// `sigma^+ = |1><0|`.
    pub fn sigma_plus() -> OperatorMatrix {
        op(2, &[(1, 0, ONE)])
    }
    /// `sigma^- = |0><1|`.
    pub fn sigma_minus() -> OperatorMatrix {
        op(2, &[(0, 1, ONE)])
    }
}

/// Spin-1 operators in the basis `s = 0, 1, 2` with `m = s - 1`.
pub mod spin1 {
    use super::*;

    pub fn s_plus() -> OperatorMatrix {
        let r2 = re(std::f64::consts::SQRT_2);
        op(3, &[(1, 0, r2), (2, 1, r2)])
    }
    pub fn s_minus() -> OperatorMatrix {
        s_plus().adjoint()
    }
    pub fn s_z() -> OperatorMatrix {
        op(3, &[(0, 0, -ONE), (2, 2, ONE)])
    }
    pub fn s_x() -> OperatorMatrix {
        s_plus().add_scaled(&s_minus(), ONE).unwrap().scale(re(0.5))
    }
    pub fn s_y() -> OperatorMatrix {
        s_plus().add_scaled(&s_minus(), -ONE).unwrap().scale(c64::new(0.0, -0.5))
    }
}

/// Places `local` on `sites` of an `n`-site chain with local dimension `d`.
/// `local` is indexed by `sum_k s_{sites[k]} d^k`; site `j` of the chain has
/// place value `d^j`.
pub fn embed(local: &OperatorMatrix, sites: &[usize], n: usize, d: usize) -> Result<OperatorMatrix> {
    let k = sites.len();
    if local.nrows() != d.pow(k as u32) || sites.iter().any(|&s| s >= n) {
        return Err(Error::ShapeMismatch {
            expected: d.pow(k as u32),
            found: local.nrows(),
        });
    }
    let dim = d.pow(n as u32);
    let place: Vec<usize> = sites.iter().map(|&s| d.pow(s as u32)).collect();
    CscMatrix::from_columns(Execution::Sequential, dim, dim, |c, out| {
        let mut lc = 0;
        let mut base = c;
        let mut scale = 1;
        for &p in &place {
            let digit = (c / p) % d;
            lc += digit * scale;
            base -= digit * p;
            scale *= d;
        }
        for (lr, v) in local.column(lc) {
            let mut r = base;
            let mut rest = lr;
            for &p in &place {
                r += (rest % d) * p;
                rest /= d;
            }
            out.push((r, v));
        }
    })
}

pub fn vectorize(m: &Mat<c64>) -> Result<Vec<c64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let d = m.nrows();
    Ok((0..d * d).map(|k| m[(k % d, k / d)]).collect())
}

pub fn devectorize(v: &[c64]) -> Result<Mat<c64>> {
    let d = (v.len() as f64).sqrt().round() as usize;
    if d * d != v.len() {
        return Err(Error::ShapeMismatch {
            expected: d * d,
            found: v.len(),
        });
    }
    Ok(Mat::from_fn(d, d, |r, c| v[c * d + r]))
}

/// `H - (i/2) sum L^dagger L`.
pub fn non_hermitian_hamiltonian(h: &OperatorMatrix, jumps: &JumpSet) -> Result<OperatorMatrix> {
    let mut hnh = h.clone();
    for l in &jumps.ops {
        let ldl = l.adjoint().matmul(l)?;
        hnh = hnh.add_scaled(&ldl, c64::new(0.0, -0.5))?;
    }
    Ok(hnh)
}

fn check_shapes(h: &OperatorMatrix, jumps: &JumpSet) -> Result<usize> {
    let d = h.nrows();
    for l in std::iter::once(h).chain(&jumps.ops) {
        if l.nrows() != d || l.ncols() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                found: l.nrows(),
            });
        }
    }
    Ok(d)
}

/// `-i (I ⊗ hnh - hnh^* ⊗ I) + w sum L^* ⊗ L` on the vectorized entries
/// listed in `keep` (all entries if `None`), assembled column by column.
/// Also returns the largest entry mapping a kept entry outside the set.
fn superoperator(
    exec: Execution,
    d: usize,
    hnh: Option<&OperatorMatrix>,
    jumps: &[OperatorMatrix],
    w: f64,
    keep: Option<&[usize]>,
) -> Result<(CscMatrix<c64>, f64)> {
    let n = keep.map_or(d * d, |k| k.len());
    if n > MAX_SUPER_DIM {
        return Err(Error::DimensionOverflow {
            n,
            max: MAX_SUPER_DIM,
        });
    }
    let pos: Option<Vec<usize>> = keep.map(|k| {
        let mut pos = vec![usize::MAX; d * d];
        for (j, &i) in k.iter().enumerate() {
            pos[i] = j;
        }
        pos
    });
    let col_of = |j: usize| keep.map_or(j, |k| k[j]);
    let leaks = std::sync::Mutex::new(0.0f64);
    let m = CscMatrix::from_columns(exec, n, n, |j, out| {
        let k = col_of(j);
        let (r, c) = (k % d, k / d);
        // Full-space column first; individual jumps may leave the kept set
        // even when their sum does not.
        let mut col: Vec<(usize, c64)> = Vec::new();
        if let Some(h) = hnh {
            for (r2, v) in h.column(r) {
                col.push((c * d + r2, -I * v));
            }
            for (c2, v) in h.column(c) {
                col.push((c2 * d + r, I * v.conj()));
            }
        }
        if w != 0.0 {
            for l in jumps {
                for (c2, b) in l.column(c) {
                    let bw = b.conj() * w;
                    for (r2, a) in l.column(r) {
                        col.push((c2 * d + r2, a * bw));
                    }
                }
            }
        }
        col.sort_unstable_by_key(|e| e.0);
        let mut leak = 0.0f64;
        let mut i = 0;
        while i < col.len() {
            let row = col[i].0;
            let mut v = c64::new(0.0, 0.0);
            while i < col.len() && col[i].0 == row {
                v += col[i].1;
                i += 1;
            }
            match &pos {
                None => out.push((row, v)),
                Some(p) if p[row] != usize::MAX => out.push((p[row], v)),
                Some(_) => leak = leak.max(v.norm()),
            }
        }
        if leak > 0.0 {
            let mut g = leaks.lock().unwrap();
            *g = g.max(leak);
        }
    })?;
    let leak = leaks.into_inner().unwrap();
    Ok((m, leak))
}

/// Lindblad superoperator at jump strength `w` in the column-stacked basis.
pub fn build_liouvillian(h: &OperatorMatrix, jumps: &JumpSet, w: f64) -> Result<CscMatrix<c64>> {
    let d = check_shapes(h, jumps)?;
    let hnh = non_hermitian_hamiltonian(h, jumps)?;
    Ok(superoperator(Execution::default(), d, Some(&hnh), &jumps.ops, w, None)?.0)
}

/// `(L_0, J)` with `L_W = L_0 + W J`, restricted to `keep` if given. Fails
/// with `Leakage` if the kept entries are not invariant.
pub fn liouvillian_parts(
    h: &OperatorMatrix,
    jumps: &JumpSet,
    keep: Option<&[usize]>,
) -> Result<(CscMatrix<c64>, CscMatrix<c64>)> {
    let d = check_shapes(h, jumps)?;
    let hnh = non_hermitian_hamiltonian(h, jumps)?;
    let exec = Execution::default();
    let (l0, leak0) = superoperator(exec, d, Some(&hnh), &[], 0.0, keep)?;
    let (j, leak1) = superoperator(exec, d, None, &jumps.ops, 1.0, keep)?;
    let leak = leak0.max(leak1);
    if leak > 1e-12 {
        return Err(Error::Leakage { max_element: leak });
    }
    Ok((l0, j))
}

/// `L_W[rho]` evaluated directly on the operator, without assembling the
/// superoperator.
pub fn lindblad_apply(h: &OperatorMatrix, jumps: &JumpSet, w: f64, rho: &Mat<c64>) -> Result<Mat<c64>> {
    let d = check_shapes(h, jumps)?;
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::ShapeMismatch {
            expected: d,
            found: rho.nrows(),
        });
    }
    let hnh = non_hermitian_hamiltonian(h, jumps)?;
    let hr = sp_mul_dense(&hnh, rho);
    let rh = dense_mul_sp_adjoint(rho, &hnh);
    let mut out = Mat::from_fn(d, d, |r, c| -I * hr[(r, c)] + I * rh[(r, c)]);
    for l in &jumps.ops {
        let lr = sp_mul_dense(l, rho);
        let lrl = dense_mul_sp_adjoint(&lr, l);
        for r in 0..d {
            for c in 0..d {
                out[(r, c)] += lrl[(r, c)] * w;
            }
        }
    }
    Ok(out)
}

/// `A * M` for sparse `A` and dense `M`.
pub fn sp_mul_dense(a: &OperatorMatrix, m: &Mat<c64>) -> Mat<c64> {
    let mut out = Mat::<c64>::zeros(a.nrows(), m.ncols());
    for k in 0..a.ncols() {
        for (r, v) in a.column(k) {
            for c in 0..m.ncols() {
                out[(r, c)] += v * m[(k, c)];
            }
        }
    }
    out
}

/// `M * A^dagger` for dense `M` and sparse `A`.
pub fn dense_mul_sp_adjoint(m: &Mat<c64>, a: &OperatorMatrix) -> Mat<c64> {
    // (M A^dagger)(r, c) = sum_k M(r, k) conj(A(c, k)).
    let mut out = Mat::<c64>::zeros(m.nrows(), a.nrows());
    for k in 0..a.ncols() {
        for (c, v) in a.column(k) {
            let vc = v.conj();
            for r in 0..m.nrows() {
                out[(r, c)] += m[(r, k)] * vc;
            }
        }
    }
    out
}

/// Diagonal projector onto the states violating clause `m`.
fn clause_violation_indicator(inst: &SatInstance) -> Vec<Vec<bool>> {
    let dim = 1usize << inst.num_vars();
    inst.clauses()
        .iter()
        .map(|c| (0..dim).map(|s| c.is_violated_by(s as u64)).collect())
        .collect()
}

fn check_quantum_size(n: usize) -> Result<usize> {
    if n > MAX_QUANTUM_VARS {
        return Err(Error::DimensionOverflow {
            n,
            max: MAX_QUANTUM_VARS,
        });
    }
    Ok(1usize << n)
}

/// Clause-penalty Hamiltonian: diagonal with the violation count.
pub fn build_h3sat(inst: &SatInstance) -> Result<OperatorMatrix> {
    check_quantum_size(inst.num_vars())?;
    let table = inst.violation_table()?;
    Ok(CscMatrix::diagonal(&table.iter().map(|&v| re(v as f64)).collect::<Vec<_>>()))
}

/// `L_{m,alpha} = sigma^x_{m_alpha} P_m`, three per clause.
pub fn build_3sat_jumps(inst: &SatInstance) -> Result<JumpSet> {
    let dim = check_quantum_size(inst.num_vars())?;
    let viol = clause_violation_indicator(inst);
    let mut ops = Vec::with_capacity(3 * inst.clauses().len());
    for (c, v) in inst.clauses().iter().zip(&viol) {
        for q in c.qubits() {
            let t: Vec<_> = (0..dim).filter(|&s| v[s]).map(|s| (s ^ (1 << q), s, ONE)).collect();
            ops.push(CscMatrix::from_triplets(dim, dim, t)?);
        }
    }
    Ok(JumpSet::new(ops))
}

/// `H_X = h sum_{m != m'} sum_{n in Ind(m, m')} P_{mm'} sigma^x_n P_{mm'}`
/// over ordered clause pairs, with `P_{mm'} = I - (I - P_m)(I - P_{m'})`.
pub fn build_hx(inst: &SatInstance, h: f64) -> Result<OperatorMatrix> {
    let dim = check_quantum_size(inst.num_vars())?;
    if h == 0.0 {
        return Ok(CscMatrix::zeros(dim, dim));
    }
    let viol = clause_violation_indicator(inst);
    let clauses = inst.clauses();
    let pairs: Vec<(usize, usize)> = (0..clauses.len())
        .flat_map(|a| (0..clauses.len()).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let parts = exec::map(Execution::default(), &pairs, |&(a, b)| {
        let mut qubits: Vec<usize> = clauses[a].qubits().into_iter().chain(clauses[b].qubits()).collect();
        qubits.sort_unstable();
        qubits.dedup();
        let inside = |s: usize| viol[a][s] || viol[b][s];
        let mut t = Vec::new();
        for s in (0..dim).filter(|&s| inside(s)) {
            for &q in &qubits {
                let s2 = s ^ (1 << q);
                if inside(s2) {
                    t.push((s2, s, re(h)));
                }
            }
        }
        t
    });
    CscMatrix::from_triplets(dim, dim, parts.into_iter().flatten().collect())
}

/// Projector of two spin-1 sites onto total spin 2, from the Casimir
/// polynomial `prod_{s in {0,1}} (S^2 - s(s+1)) / (6 - s(s+1))`.
pub fn aklt_projector() -> OperatorMatrix {
    let id = CscMatrix::<c64>::identity(3);
    let dot = [spin1::s_x(), spin1::s_y(), spin1::s_z()]
        .iter()
        .map(|s| s.kron(s))
        .reduce(|a, b| a.add_scaled(&b, ONE).unwrap())
        .unwrap();
    let id9 = id.kron(&id);
    // S^2 = S_a^2 + S_b^2 + 2 S_a.S_b = 4 + 2 S_a.S_b.
    let s2 = id9.scale(re(4.0)).add_scaled(&dot, re(2.0)).unwrap();
    let mut p = id9.clone();
    for s in [0.0f64, 1.0] {
        let c = s * (s + 1.0);
        let factor = s2.add_scaled(&id9, re(-c)).unwrap().scale(re(1.0 / (6.0 - c)));
        p = p.matmul(&factor).unwrap();
    }
    // Drop roundoff-level entries.
    let t: Vec<_> = p.triplets().filter(|(_, _, v)| v.norm() > 1e-14).collect();
    CscMatrix::from_triplets(9, 9, t).unwrap()
}

pub const MIN_AKLT_SPINS: usize = 3;
pub const MAX_AKLT_SPINS: usize = 6;

/// `L_{n,a} = S^a_n P2_{n,n+1}` and `L'_{n,a} = S^a_{n+1} P2_{n,n+1}` for
/// `a = x, y` on a periodic chain: `4N` jumps, `H = 0`.
pub fn build_aklt_model(n_spins: usize) -> Result<JumpSet> {
    if !(MIN_AKLT_SPINS..=MAX_AKLT_SPINS).contains(&n_spins) {
        return Err(Error::DimensionOverflow {
            n: n_spins,
            max: MAX_AKLT_SPINS,
        });
    }
    let p2 = aklt_projector();
    let id = CscMatrix::<c64>::identity(3);
    let sx = spin1::s_x();
    let sy = spin1::s_y();
    // Two-site operators indexed s_first + 3 s_second, i.e. kron(second, first).
    let on_first = |s: &OperatorMatrix| id.kron(s).matmul(&p2).unwrap();
    let on_second = |s: &OperatorMatrix| s.kron(&id).matmul(&p2).unwrap();
    let locals = [on_first(&sx), on_first(&sy), on_second(&sx), on_second(&sy)];
    let mut ops = Vec::with_capacity(4 * n_spins);
    for n in 0..n_spins {
        let sites = [n, (n + 1) % n_spins];
        for l in &locals {
            ops.push(embed(l, &sites, n_spins, 3)?);
        }
    }
    Ok(JumpSet::new(ops))
}

/// Periodic AKLT state from its bond-dimension-2 matrix product form,
/// normalized.
pub fn aklt_mps_state(n_spins: usize) -> Result<Vec<c64>> {
    if !(MIN_AKLT_SPINS..=MAX_AKLT_SPINS + 2).contains(&n_spins) {
        return Err(Error::DimensionOverflow {
            n: n_spins,
            max: MAX_AKLT_SPINS + 2,
        });
    }
    let a = (2.0f64 / 3.0).sqrt();
    let b = (1.0f64 / 3.0).sqrt();
    // Indexed by s = m + 1: A_- = -sqrt(2/3) sigma^-, A_0 = -sqrt(1/3) sigma^z,
    // A_+ = sqrt(2/3) sigma^+.
    let mats: [[[f64; 2]; 2]; 3] = [
        [[0.0, -a], [0.0, 0.0]],
        [[-b, 0.0], [0.0, b]],
        [[0.0, 0.0], [a, 0.0]],
    ];
    let dim = 3usize.pow(n_spins as u32);
    let mut psi = Vec::with_capacity(dim);
    for idx in 0..dim {
        let mut m = [[1.0, 0.0], [0.0, 1.0]];
        let mut rest = idx;
        for _ in 0..n_spins {
            let s = rest % 3;
            rest /= 3;
            let x = mats[s];
            let mut p = [[0.0; 2]; 2];
            for (i, row) in p.iter_mut().enumerate() {
                for (j, e) in row.iter_mut().enumerate() {
                    *e = m[i][0] * x[0][j] + m[i][1] * x[1][j];
                }
            }
            m = p;
        }
        psi.push(re(m[0][0] + m[1][1]));
    }
    let norm = psi.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    Ok(psi.into_iter().map(|x| x / norm).collect())
}

/// Total magnetization of each basis state of an `n`-site chain, in units
/// where spin-1 sites contribute `s - 1` and qubits `+-1/2`.
pub fn magnetizations(n: usize, d: usize) -> Vec<f64> {
    let dim = d.pow(n as u32);
    (0..dim)
        .map(|mut i| {
            let mut m = 0.0;
            for _ in 0..n {
                let s = i % d;
                i /= d;
                m += s as f64 - (d as f64 - 1.0) / 2.0;
            }
            m
        })
        .collect()
}

/// Basis states sharing a conserved magnetization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSpec {
    pub magnetization: f64,
    pub indices: Vec<usize>,
}

impl SectorSpec {
    pub fn from_magnetization(n: usize, d: usize, m: f64) -> Self {
        let indices = magnetizations(n, d)
            .iter()
            .enumerate()
            .filter(|(_, &x)| (x - m).abs() < 1e-9)
            .map(|(i, _)| i)
            .collect();
        SectorSpec {
            magnetization: m,
            indices,
        }
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }
}

/// Block of `op` on the sector. Fails with `Leakage` if `op` couples the
/// sector to its complement.
pub fn sector_restrict(op: &OperatorMatrix, sector: &SectorSpec) -> Result<OperatorMatrix> {
    let (sub, leak) = op.restrict(&sector.indices)?;
    if leak > 1e-12 {
        return Err(Error::Leakage { max_element: leak });
    }
    Ok(sub)
}

pub const MIN_XX_SPINS: usize = 4;
pub const MAX_XX_SPINS: usize = 10;

/// Open XX chain `sum_n s^x_n s^x_{n+1} + s^y_n s^y_{n+1}` with dephasing
/// `L_n = s^z_n`, both restricted to total `S^z = 0` (even `N`) or `-1/2`
/// (odd `N`).
pub fn build_xx_dephasing(n_spins: usize) -> Result<(OperatorMatrix, JumpSet, SectorSpec)> {
    if !(MIN_XX_SPINS..=MAX_XX_SPINS).contains(&n_spins) {
        return Err(Error::DimensionOverflow {
            n: n_spins,
            max: MAX_XX_SPINS,
        });
    }
    let (h, jumps) = xx_dephasing_full(n_spins)?;
    let m = if n_spins % 2 == 0 { 0.0 } else { -0.5 };
    let sector = SectorSpec::from_magnetization(n_spins, 2, m);
    let h = sector_restrict(&h, &sector)?;
    let ops = jumps
        .ops
        .iter()
        .map(|l| sector_restrict(l, &sector))
        .collect::<Result<Vec<_>>>()?;
    Ok((h, JumpSet::new(ops), sector))
}

/// The XX chain and its dephasing jumps on the full `2^N` space.
pub fn xx_dephasing_full(n_spins: usize) -> Result<(OperatorMatrix, JumpSet)> {
    let hop = qubit::sigma_plus()
        .kron(&qubit::sigma_minus())
        .add_scaled(&qubit::sigma_minus().kron(&qubit::sigma_plus()), ONE)?
        .scale(re(0.5));
    let dim = 1usize << n_spins;
    let mut h = CscMatrix::zeros(dim, dim);
    for n in 0..n_spins - 1 {
        h = h.add_scaled(&embed(&hop, &[n, n + 1], n_spins, 2)?, ONE)?;
    }
    let sz = qubit::sigma_z().scale(re(0.5));
    let ops = (0..n_spins)
        .map(|n| embed(&sz, &[n], n_spins, 2))
        .collect::<Result<Vec<_>>>()?;
    Ok((h, JumpSet::new(ops)))
}

/// Vectorized entries `(r, c)` whose bra and ket magnetizations agree; this
/// set is invariant under any Liouvillian whose Hamiltonian and jumps each
/// shift the magnetization by a fixed amount.
pub fn weak_u1_indices(n: usize, d: usize) -> Vec<usize> {
    let mags = magnetizations(n, d);
    let dim = mags.len();
    (0..dim * dim)
        .filter(|&k| (mags[k % dim] - mags[k / dim]).abs() < 1e-9)
        .collect()
}

/// Liouvillian generator in the column-stacked basis.
pub fn liouvillian_generator(
    h: &OperatorMatrix,
    jumps: &JumpSet,
    w: f64,
    model: &str,
) -> Result<SparseGenerator> {
    let d = h.nrows();
    let l = build_liouvillian(h, jumps, w)?;
    SparseGenerator::new(GenMatrix::Complex(l), model, w, OperatorBasis::Full { d })
}
