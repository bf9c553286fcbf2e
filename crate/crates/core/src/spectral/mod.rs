//! Eigendecomposition and the steady/metastable diagnostics built on it.

pub mod diagnostics;
pub mod eigen;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

pub use diagnostics::{
    c1_coefficient, classify_modes, degenerate_overlap, effective_two_level, eigen_overlap, l1_definiteness,
    liouvillian_gap, metastable_structure, project_two_level, steady_basis, steady_degeneracy,
    zero_mode_residual, DefinitenessReport, EigStructureReport, ModeClasses, STEADY_TOL,
};
pub use eigen::{decompose, full_spectrum, SolveMode, SolveOptions, SpectralDecomposition};

use crate::error::Result;
use crate::format::sci;
use crate::sparse::SparseGenerator;

/// Diagnostics of one `(model, W)` point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    pub model: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub w: f64,
    /// Steady-state degeneracy.
    pub d: usize,
    pub delta: f64,
    pub lambda1: [f64; 2],
    /// `nu`; NaN when `d > 1`.
    pub nu: [f64; 2],
    pub nu2: f64,
    pub kappa: f64,
    pub rel_dr: f64,
    pub rel_dl: f64,
    /// `|‖delta_r‖^2 - (|nu|^-2 - 1)|`.
    pub identity_error: f64,
    /// `L_eff` as `[[re, im]; 4]` in row-major order, if `|nu|^2 < 1`.
    pub l_eff: Option<[[f64; 2]; 4]>,
    /// Largest deviation between `L_eff` and the direct projection.
    pub l_eff_projection_error: Option<f64>,
    pub purely_imaginary_modes: usize,
}

impl OverlapReport {
    pub const CSV_HEADER: &'static str = "model,N,seed,W,d,delta,re_nu,im_nu,nu2,kappa,rel_dr,rel_dl";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.model,
            self.n,
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            sci(self.w),
            self.d,
            sci(self.delta),
            sci(self.nu[0]),
            sci(self.nu[1]),
            sci(self.nu2),
            sci(self.kappa),
            sci(self.rel_dr),
            sci(self.rel_dl),
        )
    }

    pub fn lambda1(&self) -> c64 {
        c64::new(self.lambda1[0], self.lambda1[1])
    }
}

/// Identifies a point for reporting.
#[derive(Debug, Clone, Default)]
pub struct PointMeta {
    pub model: String,
    pub n: usize,
    pub seed: Option<u64>,
}

/// Runs every diagnostic that applies to the decomposition. Quantities that
/// do not apply (left-vector based ones near an EP, `nu` for degenerate
/// steady states) are NaN.
pub fn analyze(g: &SparseGenerator, dec: &SpectralDecomposition, meta: &PointMeta) -> Result<OverlapReport> {
    let classes = classify_modes(dec)?;
    let d = classes.steady.len();
    let delta = liouvillian_gap(dec)?;
    let m = classes.metastable.expect("gap implies a metastable mode");
    let lam1 = dec.eigenvalues[m];
    let nan = f64::NAN;
    let mut report = OverlapReport {
        model: meta.model.clone(),
        n: meta.n,
        seed: meta.seed,
        w: g.w,
        d,
        delta,
        lambda1: [lam1.re, lam1.im],
        nu: [nan, nan],
        nu2: nan,
        kappa: nan,
        rel_dr: nan,
        rel_dl: nan,
        identity_error: nan,
        l_eff: None,
        l_eff_projection_error: None,
        purely_imaginary_modes: classes.purely_imaginary.len(),
    };
    if d > 1 {
        report.nu2 = degenerate_overlap(dec)?;
        return Ok(report);
    }
    let nu = eigen_overlap(dec)?;
    report.nu = [nu.re, nu.im];
    report.nu2 = nu.norm_sqr();
    if let Ok(a) = effective_two_level(dec) {
        let b = project_two_level(g, dec)?;
        let mut err = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                err = err.max((a[i][j] - b[i][j]).norm());
            }
        }
        report.l_eff = Some([
            [a[0][0].re, a[0][0].im],
            [a[0][1].re, a[0][1].im],
            [a[1][0].re, a[1][0].im],
            [a[1][1].re, a[1][1].im],
        ]);
        report.l_eff_projection_error = Some(err);
    }
    // The scaled pair needs a nonzero overlap.
    if dec.biorthonormal && nu.norm() > 0.0 {
        let s = metastable_structure(dec, &g.basis)?;
        report.kappa = s.kappa;
        report.rel_dr = s.rel_dr;
        report.rel_dl = s.rel_dl;
        report.identity_error = s.identity_error();
    }
    Ok(report)
}

/// Decomposes `g` and analyzes it.
pub fn analyze_point(g: &SparseGenerator, opts: &SolveOptions, meta: &PointMeta) -> Result<(OverlapReport, SpectralDecomposition)> {
    let dec = decompose(g, opts)?;
    Ok((analyze(g, &dec, meta)?, dec))
}
