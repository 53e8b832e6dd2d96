//! Streaming detection and attribution of cascade attacks in multi-agent
//! interaction traces.
//!
//! The pipeline ingests line-delimited channel events, estimates a
//! cross-channel causal influence tensor online, monitors its spectral
//! dynamics per turn, raises cascade alerts through a two-mode state
//! machine (instant and adaptive-window multi-turn), and recovers the
//! origin / amplifier / bridge agents plus the dominant propagation
//! spines from the cached influence interval at confirmation time.
//!
//! A synthetic trace simulator and an evaluation harness (AUROC,
//! TPR@5%FPR, EDR@5, attribution accuracy, bootstrap CIs) are bundled for
//! desk-scale verification.

pub mod attribution;
pub mod config;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod estimator;
pub mod mat;
pub mod metrics;
pub mod pipeline;
pub mod simulator;
pub mod spectral;
pub mod topology;
pub mod trace;

pub use attribution::{attribute, AttributionReport};
pub use config::RunConfig;
pub use detector::{watch, weak_link, CascadeKind, DetectorEvent, DetectorState, WeakLinkResult};
pub use encoder::{Encoder, EncoderConfig, FeatureVector};
pub use estimator::{EstimatorConfig, InfluenceEstimator, InfluenceTensor};
pub use pipeline::Monitor;
pub use simulator::{generate_trace, AttackKind, GroundTruth, ScenarioConfig};
pub use spectral::{leading_spectrum, SpectralSignals};
pub use topology::{Channel, SystemTopology};
pub use trace::{parse_event_line, parse_header_line, ChannelEvent, TraceHeader, TurnBatch};
