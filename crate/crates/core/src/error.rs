use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {t} is outside the domain [{start}, {end}]")]
    Domain { t: f64, start: f64, end: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solution blew up (non-finite values) at t = {time}")]
    Overflow { time: f64 },

    #[error("step size underflow at t = {time} (h = {step:e}); problem looks stiff")]
    Stiffness { time: f64, step: f64 },

    #[error("ill-conditioned matrix (condition number {condition:e} exceeds cap {cap:e}) {context}")]
    Conditioning { condition: f64, cap: f64, context: String },

    #[error("orthogonal flow lost orthogonality at t = {time}: re-orthonormalization moved Q by {change:e}")]
    Flow { time: f64, change: f64 },

    #[error("no exponential gap: state {state} has window averages in [{low}, {high}] with gap {gap}")]
    NoGap { state: usize, low: f64, high: f64, gap: f64 },

    #[error("dichotomy certification failed for k = {k}: {reason} (worst pair t0 = {t0}, t = {t})")]
    Certification { k: usize, reason: String, t0: f64, t: f64 },

    #[error("quadrature grid error: {0}")]
    Grid(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("truncation of the improper integral is not converged: doubling the horizon changed S by {change:e}")]
    Truncation { change: f64 },

    #[error("block-diagonal reduction inconsistent at t = {time}: {what} = {value:e}")]
    Reduction { time: f64, what: String, value: f64 },

    #[error("Riccati solution diverged at t = {time} (largest eigenvalue {lambda_max:e})")]
    Divergence { time: f64, lambda_max: f64 },

    #[error("system is not in the expected block form: {0}")]
    Form(String),

    #[error("system file: {0}")]
    Parse(String),
}
