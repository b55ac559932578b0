use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("control set is empty")]
    EmptyControlSet,

    #[error("constraint gradient vanishes in the band at t={t}, x={x:?} (psi={psi}, |grad|={grad_norm:e})")]
    VanishingGradient {
        t: f64,
        x: Vec<f64>,
        psi: f64,
        grad_norm: f64,
    },

    #[error("state lies outside the moving set at t={t}: psi={psi:e}")]
    OutsideSet { t: f64, psi: f64 },

    #[error("penalty exponent overflow at t={t}: gamma*(psi-sigma)={exponent:e}")]
    PenaltyOverflow { t: f64, exponent: f64 },

    #[error("no admissible gamma up to 2^64 * gamma_start for sigma={sigma}, mu={mu}, eta={eta}")]
    IllPosedSchedule { sigma: f64, mu: f64, eta: f64 },

    #[error("initial state outside the inflated set: psi-sigma={excess:e} exceeds mu(gamma)={mu_k:e}")]
    InitialStateOutside { excess: f64, mu_k: f64 },

    #[error("step size underflow at t={t} (h={h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("step budget of {max_steps} exhausted at t={t}")]
    StepBudget { t: f64, max_steps: usize },

    #[error("projection did not converge at t={t}, y={y:?}")]
    ProjectionDiverged { t: f64, y: Vec<f64> },

    #[error("constraint gradient too small during projection at t={t}: |grad|={grad_norm:e}")]
    ProjectionDegenerate { t: f64, grad_norm: f64 },

    #[error("normalization violated: lambda + |p(T)| = {0}")]
    Normalization(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{what} is not in its set (distance {distance:e})")]
    NotInSet { what: &'static str, distance: f64 },

    #[error("bisection bracket failure on [{a}, {b}]: g(a)={ga}, g(b)={gb}")]
    Bracket { a: f64, b: f64, ga: f64, gb: f64 },

    #[error("invalid example parameters: {0}")]
    ExampleParams(String),

    #[error("no admissible switching time on the search grid")]
    NoAdmissibleSwitch,

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("unknown parameter '{key}' for problem '{problem}'")]
    UnknownParameter { problem: String, key: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
