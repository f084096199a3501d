use thiserror::Error;

pub type Result<T> = std::result::Result<T, GbdError>;

#[derive(Debug, Error)]
pub enum GbdError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("point {point:?} lies on jump facet {facet}; query one side explicitly")]
    OnFacet { point: [f64; 3], facet: usize },

    #[error("invalid facet: {0}")]
    Facet(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("slice does not meet the domain with positive length")]
    EmptySlice,

    #[error("no admissible simplex after {budget} candidates (best F ratio {best_f_ratio:.3e}, best |omega| ratio {best_omega_ratio:.3e})")]
    SelectionFailure { budget: usize, best_f_ratio: f64, best_omega_ratio: f64 },

    #[error("clustering ambiguity between cubes {a} and {b}: D(k) = {profile:?}")]
    Ambiguity { a: usize, b: usize, profile: Vec<f64> },

    #[error("nesting violation: cube {fine} at level {level} is not in the class of its parent {coarse}")]
    Nesting { level: usize, coarse: usize, fine: usize },

    #[error("sequence spec error at k = {k}: {reason}")]
    Spec { k: usize, reason: String },

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
