use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("outcome {value} is not valid for the {family} family")]
    InvalidOutcome { value: f64, family: &'static str },

    #[error("reduced model did not converge after {iterations} iterations (max |mean score| = {score_norm:.3e}); last iterate {last:?}")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        last: Vec<f64>,
    },

    #[error("rank-deficient design: columns {columns:?} are collinear with earlier columns")]
    RankDeficient { columns: Vec<String> },

    #[error("separation detected after {iterations} iterations: linear predictor diverges (max |eta| = {max_eta:.1})")]
    Separation { iterations: usize, max_eta: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("covariate `{0}` is constant in the reference sample")]
    ConstantCovariate(String),

    #[error("copula fit failed: {0}")]
    CopulaFit(String),

    #[error("quadrature did not reach tolerance {tol:e} (last change {change:e})")]
    Quadrature { tol: f64, change: f64 },

    #[error("GMM minimization exceeded {iterations} iterations (objective {objective:.6e}); best iterate {best:?}")]
    GmmMaxIterations {
        iterations: usize,
        objective: f64,
        best: Vec<f64>,
    },

    #[error("moment Jacobian A has rank {rank} < {p}; the coefficients are not identified by the stacked moments")]
    JacobianRank { rank: usize, p: usize },

    #[error("stratum {stratum} has {count} reference points, at least {min} are required to identify its density")]
    SmallStratum {
        stratum: String,
        count: usize,
        min: usize,
    },

    #[error("model unidentified: {0}")]
    Unidentified(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u64 },

    #[error("unresolved covariate names: {0:?}")]
    UnresolvedNames(Vec<String>),

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("non-finite value in `{0}`; payloads must be finite")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
