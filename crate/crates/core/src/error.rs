use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh request: {0}")]
    InvalidMesh(String),

    #[error("interface meshes disagree: {0}")]
    InterfaceMismatch(String),

    #[error("unsupported element: {0}")]
    UnsupportedElement(String),

    #[error("unsupported quadrature: dim {dim}, degree {degree}")]
    UnsupportedQuadrature { dim: usize, degree: usize },

    #[error("singular facet block on interface facet {facet}: {reason}")]
    SingularFacetBlock { facet: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("factorization failed in the {block} block: {reason}")]
    SingularSystem { block: String, reason: String },

    #[error("inf-sup estimate requested for {size} pressure unknowns (cap {cap})")]
    SizeCapExceeded { size: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid study configuration: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
