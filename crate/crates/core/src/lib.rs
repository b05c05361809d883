//! Anomaly-detection based power saving for predictive maintenance.
//!
//! An ensemble of small extreme learning machines is trained online on a
//! machine's healthy early life. During monitoring a controller keeps as few
//! base learners powered as the verdicts allow, escalating on alarms and
//! declaring a fault only when the full ensemble agrees.

pub mod adepos;
pub mod calibration;
pub mod config;
pub mod elm;
pub mod energy;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod fixedpoint;
pub mod ingest;
pub mod pipeline;
pub mod seeds;

pub use adepos::{ControllerConfig, ControllerState, MonitorLog, SampleRecord, Verdict};
pub use calibration::{threshold, BearingOutcome, LooReport, ThresholdCalib};
pub use config::{RunConfig, SweepGrid};
pub use elm::{ElmModel, Mode, QuantizedElm};
pub use energy::{EnergyModel, EnergyReport};
pub use ensemble::{Detector, Ensemble, EnsembleConfig, TrainingReport, VoteResult};
pub use error::{Error, Result};
pub use features::{FeatureVector, Normalizer, FEATURE_DIM};
pub use fixedpoint::{FixedFormat, FixedValue};
pub use ingest::{BearingManifest, SampleWindow, SynthSpec};
pub use pipeline::{Inference, PipelineConfig, TrainedBearing};
