use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system `{0}` (expected one of lorenz3d, lorenz4d, henon2d, lozi, anosov_linear, anosov_perturbed, henon3d)")]
    UnknownSystem(String),

    #[error("unknown parameter `{name}` for system `{system}`")]
    UnknownParameter { system: String, name: String },

    #[error("parameter `{name}` is not finite")]
    NonFiniteParameter { name: String },

    #[error("trajectory escaped: |x| = {norm:.3e} exceeds bound {bound:.3e} at t = {t:.6}")]
    Escape { t: f64, norm: f64, bound: f64 },

    #[error("step size underflow at t = {t:.6} (h = {h:.3e}); the problem looks stiff here")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite state encountered at t = {t:.6}")]
    NonFiniteState { t: f64 },

    #[error("singular Jacobian at trajectory index {index} (condition estimate {cond:.3e})")]
    SingularJacobian { index: usize, cond: f64 },

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigensolver failed to converge for the equilibrium Jacobian")]
    EigensolveFailed,

    #[error("point is not an equilibrium: |F(x)| = {residual:.3e} > 1e-8")]
    NotAnEquilibrium { residual: f64 },

    #[error("leading eigenvalue is not real and simple; no unstable separatrix direction")]
    NoUnstableDirection,

    #[error("model declares no symmetry")]
    NoSymmetry,

    #[error("{context}: need at least {needed}, got {got}")]
    NotEnoughData {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("no section crossing within time budget {budget} (found {found} of {wanted})")]
    NoCrossing {
        budget: f64,
        found: usize,
        wanted: usize,
    },

    #[error("only {found} maxima of |x| within the time budget; need {needed}")]
    NotEnoughMaxima { found: usize, needed: usize },

    #[error("ambiguous kneading symbol at maximum {index}: x^2 = {value:.3e} below the noise floor")]
    AmbiguousSymbol { index: usize, value: f64 },

    #[error("journal config checksum mismatch: journal {journal}, job {job}")]
    JournalMismatch { journal: String, job: String },

    #[error("invalid cache file: {0}")]
    Cache(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding failed: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
