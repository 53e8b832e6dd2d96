//! Crate-wide error types.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology must have at least one agent")]
    NoAgents,
    #[error("edge ({}, {}) has an endpoint outside [0, {agent_count})", edge.0, edge.1)]
    EndpointOutOfRange {
        edge: (usize, usize),
        agent_count: usize,
    },
    #[error("self-loop on agent {0} is not allowed")]
    SelfLoop(usize),
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}`: {reason}")]
    BadField { field: &'static str, reason: String },
    #[error("unknown channel `{0}` (expected comm|mem|tool|exec)")]
    UnknownChannel(String),
    #[error("unknown agent `{0}` (not in trace roster)")]
    UnknownAgent(String),
    #[error("missing trace header line")]
    MissingHeader,
}

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("non-finite input vector while scoring edge ({src}, {tgt}) channel {channel}")]
    NonFiniteInput {
        src: usize,
        tgt: usize,
        channel: &'static str,
    },
    #[error("negative influence score {score} for edge ({src}, {tgt})")]
    NegativeScore { src: usize, tgt: usize, score: f64 },
    #[error("score for infeasible edge ({src}, {tgt})")]
    InfeasibleEdge { src: usize, tgt: usize },
}

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("influence cache is missing turns {missing:?} of interval [{t_w}, {t0}]")]
    IncompleteCache {
        t_w: u64,
        t0: u64,
        missing: Vec<u64>,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("line {line}: turn {turn} arrived after turn {current} (turns must be non-decreasing)")]
    TurnRegression { line: usize, turn: u64, current: u64 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(String),
}
