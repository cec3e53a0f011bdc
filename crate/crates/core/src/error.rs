use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("riccati iteration did not converge after {iterations} iterations (spectral radius of closed loop {spectral_radius:.6})")]
    RiccatiDivergence { iterations: usize, spectral_radius: f64 },

    #[error("jacobian is rank deficient (smallest singular value {sigma_min:.3e})")]
    RankDeficient { sigma_min: f64 },

    #[error("u_sec is not in the null space of the task jacobian (|J u_sec| = {residual:.3e})")]
    NotInNullSpace { residual: f64 },

    #[error("residual covariance at step {0} is singular or unavailable")]
    SingularResidualCovariance(usize),

    #[error("qcqp is infeasible (minimum constraint value {min_constraint:.3e})")]
    Infeasible { min_constraint: f64 },

    #[error("qcqp dual bisection failed: bracket [{lo:.3e}, {hi:.3e}], constraint {constraint:.3e}")]
    NoConvergence { lo: f64, hi: f64, constraint: f64 },

    #[error("control command outside actuator limits at joint {joint}: {value}")]
    HeadroomViolation { joint: usize, value: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}
