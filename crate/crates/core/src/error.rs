use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error on line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("clause {clause} is not a 3-literal clause over distinct variables")]
    NotThreeSat { clause: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{n} variables exceed the enumeration bound of {max}")]
    TooLarge { n: usize, max: usize },

    #[error("no instance with the requested solution count after {attempts} attempts")]
    Exhausted { attempts: u64 },

    #[error("system size {n} exceeds the configured cap {max}")]
    DimensionOverflow { n: usize, max: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("operator leaks out of the sector (largest off-sector element {max_element:.3e})")]
    Leakage { max_element: f64 },

    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("eigenpair residual {residual:.3e} exceeds bound {bound:.3e}")]
    ResidualTooLarge { residual: f64, bound: f64 },

    #[error("eigenbasis is near-defective (cross-Gram condition {condition:.3e})")]
    NearDefective { condition: f64 },

    #[error("no eigenvalue within the steady-state threshold of zero")]
    NoSteadyState,

    #[error("|nu|^2 = {nu2} is too close to 1 for a stable two-level basis")]
    OverlapSaturated { nu2: f64 },

    #[error("steady state is {d}-fold degenerate")]
    DegenerateCase { d: usize },

    #[error("metastable eigenvalue is not real (Im = {im:.3e})")]
    ComplexLambda1 { im: f64 },

    #[error("no sign change of the relative metastable rate on the bracket (f(lo) = {f_lo:.3e}, f(hi) = {f_hi:.3e})")]
    NoSignChange { f_lo: f64, f_hi: f64 },

    #[error("mode tracking lost: {0}")]
    TrackingLost(String),

    #[error("perturbation kind does not fit the model: {0}")]
    KindMismatch(String),

    #[error("time step {dt} exceeds the stability bound {max}")]
    StepTooLarge { dt: f64, max: f64 },

    #[error("trace drifted by {drift:.3e} under a trace-preserving generator")]
    ConservationViolated { drift: f64 },

    #[error("decay timescales are not separated (|Re l2| / |Re l1| = {ratio:.3})")]
    NoSeparation { ratio: f64 },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("ensemble aborted at N = {n}: {failures} of {total} instances failed")]
    EnsembleAborted { n: usize, failures: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad input rather than by numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Syntax { .. }
                | Error::NotThreeSat { .. }
                | Error::InvalidParams(_)
                | Error::TooLarge { .. }
                | Error::DimensionOverflow { .. }
                | Error::KindMismatch(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
