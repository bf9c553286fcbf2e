//! Compressed-column sparse matrices and the [`SparseGenerator`] wrapper that
//! tags a matrix with its model, jump strength and basis.

use std::fmt::Debug;
use std::io::Write;
use std::ops::{Add, AddAssign, Mul, Neg};

use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::Complex64 as c64;

use crate::basis::OperatorBasis;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::format::sci;

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Default
    + Add<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const IS_COMPLEX: bool;
    fn to_c64(self) -> c64;
    fn abs(self) -> f64;
    fn conj(self) -> Self;
    fn from_f64(x: f64) -> Self;
    fn is_zero(self) -> bool {
        self == Self::default()
    }
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;
    #[inline]
    fn to_c64(self) -> c64 {
        c64::new(self, 0.0)
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
}

impl Scalar for c64 {
    const IS_COMPLEX: bool = true;
    #[inline]
    fn to_c64(self) -> c64 {
        self
    }
    #[inline]
    fn abs(self) -> f64 {
        self.norm()
    }
    #[inline]
    fn conj(self) -> Self {
        c64::conj(&self)
    }
    #[inline]
    fn from_f64(x: f64) -> Self {
        c64::new(x, 0.0)
    }
}

/// Compressed sparse column matrix with sorted row indices and no stored
/// zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix<T> {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CscMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![T::from_f64(1.0); n])
    }

    pub fn diagonal(d: &[T]) -> Self {
        let n = d.len();
        let mut out = Self::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            if !v.is_zero() {
                out.row_idx.push(i);
                out.values.push(v);
            }
            out.col_ptr[i + 1] = out.row_idx.len();
        }
        out
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= nrows || *c >= ncols) {
            return Err(Error::ShapeMismatch {
                expected: nrows.max(ncols),
                found: r.max(c),
            });
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut out = Self::zeros(nrows, ncols);
        let mut col_counts = vec![0usize; ncols];
        let mut k = 0;
        while k < triplets.len() {
            let (r, c, mut v) = triplets[k];
            k += 1;
            while k < triplets.len() && triplets[k].0 == r && triplets[k].1 == c {
                v += triplets[k].2;
                k += 1;
            }
            if !v.is_zero() {
                out.row_idx.push(r);
                out.values.push(v);
                col_counts[c] += 1;
            }
        }
        for c in 0..ncols {
            out.col_ptr[c + 1] = out.col_ptr[c] + col_counts[c];
        }
        Ok(out)
    }

    /// Builds column by column: `fill(col, entries)` pushes `(row, value)`
    /// pairs in any order, duplicates allowed. Columns are filled in parallel.
    pub fn from_columns<F>(exec: Execution, nrows: usize, ncols: usize, fill: F) -> Result<Self>
    where
        F: Fn(usize, &mut Vec<(usize, T)>) + Sync + Send,
    {
        const CHUNK: usize = 256;
        let chunks = ncols.div_ceil(CHUNK);
        let parts = exec::map_range(exec, chunks, |ch| {
            let mut lens = Vec::with_capacity(CHUNK);
            let mut rows = Vec::new();
            let mut vals = Vec::new();
            let mut buf = Vec::new();
            for c in ch * CHUNK..((ch + 1) * CHUNK).min(ncols) {
                buf.clear();
                fill(c, &mut buf);
                buf.sort_unstable_by_key(|e| e.0);
                let before = rows.len();
                let mut k = 0;
                while k < buf.len() {
                    let (r, mut v) = buf[k];
                    k += 1;
                    while k < buf.len() && buf[k].0 == r {
                        v += buf[k].1;
                        k += 1;
                    }
                    if !v.is_zero() {
                        rows.push(r);
                        vals.push(v);
                    }
                }
                lens.push(rows.len() - before);
            }
            (lens, rows, vals)
        });
        let mut out = Self::zeros(nrows, ncols);
        let mut c = 0;
        for (lens, rows, vals) in parts {
            if let Some(&r) = rows.iter().find(|&&r| r >= nrows) {
                return Err(Error::ShapeMismatch {
                    expected: nrows,
                    found: r,
                });
            }
            for len in lens {
                out.col_ptr[c + 1] = out.col_ptr[c] + len;
                c += 1;
            }
            out.row_idx.extend(rows);
            out.values.extend(vals);
        }
        Ok(out)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Stored entries of column `c` as `(row, value)` pairs.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        match self.row_idx[range.clone()].binary_search(&r) {
            Ok(k) => self.values[range.start + k],
            Err(_) => T::default(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.ncols).flat_map(move |c| self.column(c).map(move |(r, v)| (r, c, v)))
    }

    /// `y = A x`.
    pub fn apply_into(&self, x: &[c64], y: &mut [c64]) {
        y.iter_mut().for_each(|v| *v = c64::new(0.0, 0.0));
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == c64::new(0.0, 0.0) {
                continue;
            }
            for (r, v) in self.column(c) {
                y[r] += v.to_c64() * xc;
            }
        }
    }

    pub fn apply(&self, x: &[c64]) -> Vec<c64> {
        let mut y = vec![c64::new(0.0, 0.0); self.nrows];
        self.apply_into(x, &mut y);
        y
    }

    /// `A^dagger x`; each output entry is an independent column reduction.
    pub fn apply_adjoint_with(&self, exec: Execution, x: &[c64]) -> Vec<c64> {
        exec::map_range(exec, self.ncols, |c| {
            self.column(c).map(|(r, v)| v.conj().to_c64() * x[r]).sum()
        })
    }

    pub fn apply_adjoint(&self, x: &[c64]) -> Vec<c64> {
        self.apply_adjoint_with(Execution::Sequential, x)
    }

    pub fn column_sums(&self) -> Vec<T> {
        (0..self.ncols)
            .map(|c| {
                let mut s = T::default();
                for (_, v) in self.column(c) {
                    s += v;
                }
                s
            })
            .collect()
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.ncols)
            .map(|c| self.column(c).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.nrows];
        for (r, _, v) in self.triplets() {
            rows[r] += v.abs();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, t).expect("indices in range")
    }

    pub fn adjoint(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(self.ncols, self.nrows, t).expect("indices in range")
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    pub fn scale(&self, s: T) -> Self {
        if s.is_zero() {
            return Self::zeros(self.nrows, self.ncols);
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = *v * s);
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: T) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::ShapeMismatch {
                expected: self.nrows,
                found: other.nrows,
            });
        }
        let mut out = Self::zeros(self.nrows, self.ncols);
        for c in 0..self.ncols {
            let mut a = self.column(c).peekable();
            let mut b = other.column(c).map(|(r, v)| (r, v * s)).peekable();
            loop {
                let next = match (a.peek(), b.peek()) {
                    (None, None) => break,
                    (Some(_), None) => a.next().unwrap(),
                    (None, Some(_)) => b.next().unwrap(),
                    (Some(&(ra, va)), Some(&(rb, vb))) => {
                        if ra < rb {
                            a.next().unwrap()
                        } else if rb < ra {
                            b.next().unwrap()
                        } else {
                            a.next();
                            b.next();
                            (ra, va + vb)
                        }
                    }
                };
                if !next.1.is_zero() {
                    out.row_idx.push(next.0);
                    out.values.push(next.1);
                }
            }
            out.col_ptr[c + 1] = out.row_idx.len();
        }
        Ok(out)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ncols != other.nrows {
            return Err(Error::ShapeMismatch {
                expected: self.ncols,
                found: other.nrows,
            });
        }
        let mut out = Self::zeros(self.nrows, other.ncols);
        let mut acc = vec![T::default(); self.nrows];
        let mut touched = vec![false; self.nrows];
        let mut rows = Vec::new();
        for c in 0..other.ncols {
            rows.clear();
            for (k, bv) in other.column(c) {
                for (r, av) in self.column(k) {
                    if !touched[r] {
                        touched[r] = true;
                        rows.push(r);
                    }
                    acc[r] += av * bv;
                }
            }
            rows.sort_unstable();
            for &r in &rows {
                if !acc[r].is_zero() {
                    out.row_idx.push(r);
                    out.values.push(acc[r]);
                }
                acc[r] = T::default();
                touched[r] = false;
            }
            out.col_ptr[c + 1] = out.row_idx.len();
        }
        Ok(out)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (nr, nc) = (self.nrows * other.nrows, self.ncols * other.ncols);
        let mut out = Self::zeros(nr, nc);
        for ac in 0..self.ncols {
            for bc in 0..other.ncols {
                for (ar, av) in self.column(ac) {
                    for (br, bv) in other.column(bc) {
                        let v = av * bv;
                        if !v.is_zero() {
                            out.row_idx.push(ar * other.nrows + br);
                            out.values.push(v);
                        }
                    }
                }
                let c = ac * other.ncols + bc;
                out.col_ptr[c + 1] = out.row_idx.len();
            }
        }
        out
    }

    /// Submatrix on the sorted index set `keep` (rows and columns), together
    /// with the largest entry that couples `keep` to its complement.
    pub fn restrict(&self, keep: &[usize]) -> Result<(Self, f64)> {
        if self.nrows != self.ncols {
            return Err(Error::ShapeMismatch {
                expected: self.nrows,
                found: self.ncols,
            });
        }
        let mut pos = vec![usize::MAX; self.nrows];
        for (k, &i) in keep.iter().enumerate() {
            if i >= self.nrows {
                return Err(Error::ShapeMismatch {
                    expected: self.nrows,
                    found: i,
                });
            }
            pos[i] = k;
        }
        let mut leak = 0.0f64;
        let mut out = Self::zeros(keep.len(), keep.len());
        for c in 0..self.ncols {
            let inside = pos[c] != usize::MAX;
            for (r, v) in self.column(c) {
                if inside != (pos[r] != usize::MAX) {
                    leak = leak.max(v.abs());
                }
            }
        }
        for (k, &c) in keep.iter().enumerate() {
            for (r, v) in self.column(c) {
                if pos[r] != usize::MAX {
                    out.row_idx.push(pos[r]);
                    out.values.push(v);
                }
            }
            out.col_ptr[k + 1] = out.row_idx.len();
        }
        Ok((out, leak))
    }

    pub fn to_dense(&self) -> Mat<T>
    where
        T: faer::traits::ComplexField,
    {
        let mut m = Mat::<T>::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn to_complex(&self) -> CscMatrix<c64> {
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values: self.values.iter().map(|v| v.to_c64()).collect(),
        }
    }

    /// Copy in faer's sparse format, optionally shifted by `-shift * I`.
    pub fn to_faer_shifted(&self, shift: T) -> Result<SparseColMat<usize, T>>
    where
        T: faer::traits::ComplexField,
    {
        let mut t: Vec<Triplet<usize, usize, T>> =
            self.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        if !shift.is_zero() {
            for i in 0..self.nrows.min(self.ncols) {
                t.push(Triplet::new(i, i, -shift));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| Error::InvalidParams(format!("sparse conversion failed: {e:?}")))
    }
}

impl CscMatrix<c64> {
    /// Drops the imaginary parts if all of them vanish.
    pub fn try_real(&self) -> Option<CscMatrix<f64>> {
        if self.values.iter().any(|v| v.im != 0.0) {
            return None;
        }
        Some(CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values: self.values.iter().map(|v| v.re).collect(),
        })
    }
}

/// Matrix storage of a generator; classical generators stay real.
#[derive(Debug, Clone, PartialEq)]
pub enum GenMatrix {
    Real(CscMatrix<f64>),
    Complex(CscMatrix<c64>),
}

macro_rules! dispatch {
    ($m:expr, $a:ident => $body:expr) => {
        match $m {
            GenMatrix::Real($a) => $body,
            GenMatrix::Complex($a) => $body,
        }
    };
}

impl GenMatrix {
    pub fn dim(&self) -> usize {
        dispatch!(self, m => m.nrows())
    }

    pub fn nnz(&self) -> usize {
        dispatch!(self, m => m.nnz())
    }

    pub fn is_real(&self) -> bool {
        matches!(self, GenMatrix::Real(_))
    }

    pub fn to_complex(&self) -> CscMatrix<c64> {
        match self {
            GenMatrix::Real(m) => m.to_complex(),
            GenMatrix::Complex(m) => m.clone(),
        }
    }

    pub fn apply(&self, x: &[c64]) -> Vec<c64> {
        dispatch!(self, m => m.apply(x))
    }

    pub fn apply_adjoint(&self, x: &[c64]) -> Vec<c64> {
        dispatch!(self, m => m.apply_adjoint(x))
    }

    pub fn norm_1(&self) -> f64 {
        dispatch!(self, m => m.norm_1())
    }

    pub fn norm_inf(&self) -> f64 {
        dispatch!(self, m => m.norm_inf())
    }

    pub fn triplets_c64(&self) -> Vec<(usize, usize, c64)> {
        dispatch!(self, m => m.triplets().map(|(r, c, v)| (r, c, v.to_c64())).collect())
    }

    pub fn to_dense_c64(&self) -> Mat<c64> {
        match self {
            GenMatrix::Real(m) => m.to_complex().to_dense(),
            GenMatrix::Complex(m) => m.to_dense(),
        }
    }

    /// `self + s * other`, staying real when both are real.
    pub fn add_scaled(&self, other: &GenMatrix, s: f64) -> Result<GenMatrix> {
        Ok(match (self, other) {
            (GenMatrix::Real(a), GenMatrix::Real(b)) => GenMatrix::Real(a.add_scaled(b, s)?),
            _ => GenMatrix::Complex(self.to_complex().add_scaled(&other.to_complex(), c64::new(s, 0.0))?),
        })
    }

    pub fn scale(&self, s: f64) -> GenMatrix {
        match self {
            GenMatrix::Real(m) => GenMatrix::Real(m.scale(s)),
            GenMatrix::Complex(m) => GenMatrix::Complex(m.scale(c64::new(s, 0.0))),
        }
    }

    pub fn restrict(&self, keep: &[usize]) -> Result<(GenMatrix, f64)> {
        Ok(match self {
            GenMatrix::Real(m) => {
                let (r, l) = m.restrict(keep)?;
                (GenMatrix::Real(r), l)
            }
            GenMatrix::Complex(m) => {
                let (r, l) = m.restrict(keep)?;
                (GenMatrix::Complex(r), l)
            }
        })
    }
}

/// A generator matrix together with what it represents.
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    pub matrix: GenMatrix,
    pub model: String,
    pub w: f64,
    pub basis: OperatorBasis,
}

impl SparseGenerator {
    pub fn new(matrix: GenMatrix, model: impl Into<String>, w: f64, basis: OperatorBasis) -> Result<Self> {
        if matrix.dim() != basis.len() {
            return Err(Error::ShapeMismatch {
                expected: basis.len(),
                found: matrix.dim(),
            });
        }
        Ok(SparseGenerator {
            matrix,
            model: model.into(),
            w,
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn apply(&self, v: &[c64]) -> Result<Vec<c64>> {
        self.check_len(v.len())?;
        Ok(self.matrix.apply(v))
    }

    pub fn apply_adjoint(&self, v: &[c64]) -> Result<Vec<c64>> {
        self.check_len(v.len())?;
        Ok(self.matrix.apply_adjoint(v))
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }

    /// Largest violation of trace preservation, `max_j |Tr[A(e_j)]|`. For
    /// classical generators this is the maximum absolute column sum.
    pub fn stochasticity_check(&self) -> f64 {
        let id = self.basis.identity();
        self.matrix
            .apply_adjoint(&id)
            .iter()
            .map(|x| x.norm())
            .fold(0.0, f64::max)
    }

    pub fn norm_1(&self) -> f64 {
        self.matrix.norm_1()
    }

    /// Matrix Market coordinate export with 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, out: &mut W) -> Result<()> {
        let field = if self.matrix.is_real() { "real" } else { "complex" };
        writeln!(out, "%%MatrixMarket matrix coordinate {field} general")?;
        writeln!(
            out,
            "% model={} W={} basis={}",
            self.model,
            sci(self.w),
            self.basis.describe()
        )?;
        writeln!(out, "{} {} {}", self.dim(), self.dim(), self.nnz())?;
        match &self.matrix {
            GenMatrix::Real(m) => {
                for (r, c, v) in m.triplets() {
                    writeln!(out, "{} {} {}", r + 1, c + 1, sci(v))?;
                }
            }
            GenMatrix::Complex(m) => {
                for (r, c, v) in m.triplets() {
                    writeln!(out, "{} {} {} {}", r + 1, c + 1, sci(v.re), sci(v.im))?;
                }
            }
        }
        Ok(())
    }
}
