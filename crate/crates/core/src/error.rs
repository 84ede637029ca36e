use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("integration produced a non-finite state at step {step}, t = {time}")]
    NonFiniteState { step: usize, time: f64 },

    #[error("too few samples: {available} available, {required} required")]
    TooFewSamples { available: usize, required: usize },

    #[error("regression matrix is rank deficient in regressor {dimension}")]
    RankDeficient { dimension: String },

    #[error("torus resonant with sampling: invariance operator is singular")]
    TorusResonant,

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("spectral circles unresolved: {0}")]
    SpectralCirclesUnresolved(String),

    #[error("bundle rejected: eigenvector is not realizable (imaginary residual {residual:.3e})")]
    NotRealizable { residual: f64 },

    #[error("unsupported cluster multiplicity: {size} eigenvalues with 2l+1 = {nodes}")]
    UnsupportedMultiplicity { size: usize, nodes: usize },

    #[error("singular frame transformation at node {node}")]
    SingularFrame { node: usize },

    #[error("Newton iteration diverged at node {node} (residual {residual:.3e})")]
    NewtonDivergence { node: usize, residual: f64 },

    #[error("optimisation failed in block {block}: {reason}")]
    Optimizer { block: String, reason: String },

    #[error("encoder frames tangent: recovery matrix singular at node {node}")]
    EncoderFramesTangent { node: usize },

    #[error("parametric resonance, autonomous normal form impossible (harmonic {harmonic}, divisor {divisor:.3e})")]
    ParametricResonance { harmonic: i64, divisor: f64 },

    #[error("non-resonant term leaked into the polar map (beta dependence {deviation:.3e})")]
    NonResonantLeak { deviation: f64 },

    #[error("amplitude function is not increasing on [{lo}, {hi}]")]
    NonMonotone { lo: f64, hi: f64 },

    #[error("vanishing denominator at r = {r}")]
    VanishingDenominator { r: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Errors caused by bad input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension(_) | Error::Parse(_) | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }
}
