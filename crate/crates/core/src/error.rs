use thiserror::Error;

use crate::rng::SampleSeed;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("sigma = {sigma} outside the admissible window ({lower}, {upper}) for lambda = {lambda}")]
    SigmaOutsideWindow {
        sigma: f64,
        lambda: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid selection criterion: {0}")]
    InvalidSelection(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry mismatch: field is {field}x{field}, solution is {solution}x{solution}")]
    GeometryMismatch { field: usize, solution: usize },

    #[error("corrector solve did not converge after {iterations} iterations (relative residual {})", residual_history.last().copied().unwrap_or(f64::NAN))]
    NotConverged {
        iterations: usize,
        residual_history: Vec<f64>,
    },

    #[error("singular covariance of statistical quantities (component `{component}`): {detail}")]
    SingularCovariance { component: String, detail: String },

    #[error("sample (master_seed {}, index {}) failed: {source}", seed.master_seed, seed.sample_index)]
    SampleFailed {
        seed: SampleSeed,
        #[source]
        source: Box<Error>,
    },

    #[error("acceptance rate {accepted}/{candidates} is below 1e-4; loosen delta or check calibration")]
    AcceptanceTooLow { candidates: u64, accepted: u64 },

    #[error("covariance has the same sign at kappa = 0 ({cov_at_zero:.3e}) and kappa = 1 ({cov_at_one:.3e}); adjust sigma or lambda")]
    SameSignEndpoints { cov_at_zero: f64, cov_at_one: f64 },

    #[error("monotonicity hypothesis violated: {0}")]
    NotMonotone(String),
}
