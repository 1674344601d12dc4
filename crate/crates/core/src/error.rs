use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Design matrix does not have full column rank.
    #[error("singular design: {columns} columns but numerical rank {rank}")]
    SingularDesign { columns: usize, rank: usize },

    #[error("insufficient data: {n} observations, need at least {required}")]
    InsufficientData { n: usize, required: usize },

    #[error("malformed sample: {0}")]
    InvalidSample(String),

    /// One or more observable-moment restrictions failed.
    #[error("assumption violation: {}", failures.join("; "))]
    AssumptionViolation { failures: Vec<String> },

    #[error("sign violation: lower-bound components have mixed signs {components:?}")]
    SignViolation { components: [f64; 3] },

    #[error("degenerate refinement: proxy variances are equal, ratio undefined")]
    DegenerateRefinement,

    #[error("refinement requires the baseline regime")]
    RefinementRegime,

    #[error("degenerate proxy {proxy}: zero variance")]
    DegenerateProxy { proxy: usize },

    #[error("degenerate combination: Var(Z(delta)) = 0 at delta = {delta}")]
    DegenerateCombination { delta: f64 },

    #[error("collinear proxies: proxy Gram matrix is singular (det = {det:e})")]
    CollinearProxies { det: f64 },

    #[error("invalid latent spec: {0}")]
    InvalidSpec(String),

    #[error("latent covariance is not PSD: eigenvalue {eigenvalue:e}")]
    NonPsdSpec { eigenvalue: f64 },

    #[error("beta {beta} is outside the identified set: {reason}")]
    OutOfSet { beta: f64, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate bootstrap: {0}")]
    DegenerateBootstrap(String),

    #[error("inference failure: {0}")]
    Inference(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config parse error: {0}")]
    Parse(String),
}
