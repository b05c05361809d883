//! Per-bearing plumbing: snapshot stream to normalized features, early-life
//! training, and the monitoring remainder.

use rayon::prelude::*;

use crate::elm::opium::OpiumConfig;
use crate::elm::Mode;
use crate::ensemble::{train_ensemble, Detector, Ensemble, EnsembleConfig, TrainingReport};
use crate::adepos::ControllerConfig;
use crate::error::{Error, Result};
use crate::features::{extract, FeatureVector, Normalizer, FEATURE_DIM};
use crate::fixedpoint::FixedFormat;
use crate::ingest::{stream_bearing, BearingManifest};

/// Arithmetic used for monitoring inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inference {
    Float,
    Fixed(FixedFormat),
}

impl Inference {
    pub fn bits(&self) -> Option<u32> {
        match self {
            Inference::Float => None,
            Inference::Fixed(f) => Some(f.bits()),
        }
    }
}

/// Builds the monitoring detector for `ensemble` with threshold `thr`.
pub fn detector(ensemble: &Ensemble, inference: Inference, thr: Option<f64>) -> Result<Box<dyn Detector + Send>> {
    let mut e = ensemble.clone();
    if let Some(t) = thr {
        e.set_threshold(t);
    }
    Ok(match inference {
        Inference::Float => Box::new(e),
        Inference::Fixed(fmt) => Box::new(e.quantized(fmt)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Hidden neurons per base learner.
    pub hidden: usize,
    /// Ensemble size, also the controller's ceiling.
    pub n_max: usize,
    pub n_min: usize,
    /// Threshold spread multiplier.
    pub k: f64,
    pub mode: Mode,
    pub target: f64,
    pub opium: OpiumConfig,
    /// Training sample cap per bearing.
    pub max_train: usize,
    /// Windows at the start of life used to fit the normalizer.
    pub fit_windows: usize,
    pub inference: Inference,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hidden: 20,
            n_max: 9,
            n_min: 1,
            k: 1.0,
            mode: Mode::Boundary,
            target: 1.0,
            opium: OpiumConfig::default(),
            max_train: 6000,
            fit_windows: 200,
            inference: Inference::Fixed(FixedFormat::with_default_split(16).expect("16 bits is valid")),
        }
    }
}

impl PipelineConfig {
    pub fn ensemble_config(&self, base_seed: u16) -> EnsembleConfig {
        EnsembleConfig {
            members: self.n_max,
            hidden: self.hidden,
            input_dim: FEATURE_DIM,
            mode: self.mode,
            target: self.target,
            base_seed,
            opium: self.opium,
            max_samples: self.max_train,
        }
    }

    pub fn controller(&self) -> Result<ControllerConfig> {
        ControllerConfig::new(self.n_min, self.n_max)
    }
}

/// Raw (unnormalized) features of one bearing's whole life.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingFeatures {
    pub id: String,
    pub label: u8,
    pub features: Vec<FeatureVector>,
}

pub fn extract_bearing(manifest: &BearingManifest, id: &str) -> Result<BearingFeatures> {
    let entry = manifest.entry(id)?;
    let windows: Vec<_> = stream_bearing(manifest, id)?.collect::<Result<_>>()?;
    let features = windows.par_iter().map(extract).collect::<Result<_>>()?;
    Ok(BearingFeatures {
        id: id.to_owned(),
        label: entry.label,
        features,
    })
}

/// Features of every bearing, in manifest order.
pub fn extract_manifest(manifest: &BearingManifest) -> Result<Vec<BearingFeatures>> {
    manifest
        .bearings
        .par_iter()
        .map(|b| extract_bearing(manifest, &b.id))
        .collect()
}

/// A bearing whose ensemble was trained on its own early life.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedBearing {
    pub id: String,
    pub label: u8,
    /// Carries the fitted normalizer.
    pub ensemble: Ensemble,
    pub report: TrainingReport,
    /// First window index after training.
    pub monitor_start: usize,
    /// Normalized features from `monitor_start` on, with timestamps.
    pub monitor: Vec<(u64, [f64; FEATURE_DIM])>,
}

/// Fits the normalizer on the first `fit_windows` windows, trains until
/// every learner has converged, and keeps the rest of life for monitoring.
pub fn train_bearing(bearing: &BearingFeatures, config: &PipelineConfig, base_seed: u16) -> Result<TrainedBearing> {
    let f = &bearing.features;
    let fit = config.fit_windows.min(f.len());
    let normalizer = Normalizer::fit(&f[..fit])?;
    let normalized: Vec<FeatureVector> = f.iter().map(|v| normalizer.apply(v)).collect::<Result<_>>()?;
    let values: Vec<[f64; FEATURE_DIM]> = normalized.iter().map(|v| v.values).collect();
    let (mut ensemble, report) = train_ensemble(&values, &config.ensemble_config(base_seed))?;
    ensemble.set_normalizer(normalizer);
    let monitor_start = report.samples_used.max(fit);
    if monitor_start >= f.len() {
        return Err(Error::InsufficientSamples {
            needed: monitor_start + 1,
            got: f.len(),
        });
    }
    let monitor = normalized[monitor_start..].iter().map(|v| (v.timestamp, v.values)).collect();
    Ok(TrainedBearing {
        id: bearing.id.clone(),
        label: bearing.label,
        ensemble,
        report,
        monitor_start,
        monitor,
    })
}

/// Trains every bearing with the same base seed, in input order.
pub fn train_all(bearings: &[BearingFeatures], config: &PipelineConfig, base_seed: u16) -> Result<Vec<TrainedBearing>> {
    bearings
        .par_iter()
        .map(|b| {
            train_bearing(b, config, base_seed).map_err(|e| match e {
                Error::NotConverged { cap } => Error::Config(format!("bearing {}: no convergence within {cap} samples", b.id)),
                other => other,
            })
        })
        .collect()
}

/// Normalizes raw features of a stream with an ensemble's stored normalizer.
pub fn normalize_with(ensemble: &Ensemble, features: &[FeatureVector]) -> Result<Vec<(u64, [f64; FEATURE_DIM])>> {
    let n = ensemble.normalizer().ok_or(Error::UnfittedNormalizer)?;
    features
        .iter()
        .map(|f| n.apply(f).map(|v| (v.timestamp, v.values)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic_manifest;

    fn small() -> PipelineConfig {
        PipelineConfig {
            n_max: 3,
            ..Default::default()
        }
    }

    #[test]
    fn training_window_precedes_monitoring() {
        let m = synthetic_manifest(1, 0, 6500, 1.0, 11).unwrap();
        let b = extract_bearing(&m, "good-00").unwrap();
        assert_eq!(b.features.len(), 6500);
        let t = train_bearing(&b, &small(), 0xACE1).unwrap();
        assert_eq!(t.monitor_start, t.report.samples_used);
        assert_eq!(t.monitor.len(), 6500 - t.monitor_start);
        assert_eq!(t.monitor[0].0, t.monitor_start as u64);
        assert_eq!(t.ensemble.normalizer().unwrap().count, 200);
    }

    #[test]
    fn short_life_is_an_error() {
        let m = synthetic_manifest(1, 0, 300, 1.0, 11).unwrap();
        let b = extract_bearing(&m, "good-00").unwrap();
        assert!(train_bearing(&b, &small(), 0xACE1).is_err());
    }

    #[test]
    fn quantized_detector_follows_format() {
        let m = synthetic_manifest(1, 0, 6500, 1.0, 12).unwrap();
        let b = extract_bearing(&m, "good-00").unwrap();
        let t = train_bearing(&b, &small(), 0xACE1).unwrap();
        let fmt = FixedFormat::with_default_split(12).unwrap();
        let d = detector(&t.ensemble, Inference::Fixed(fmt), Some(0.5)).unwrap();
        let x = t.monitor[0].1;
        let e = d.learner_errors(&x, 3).unwrap();
        // Errors of the 12-bit datapath sit on its grid.
        for v in e {
            let steps = v / fmt.ulp();
            assert!((steps - steps.round()).abs() < 1e-9);
        }
        assert_eq!(d.threshold(), Some(0.5));
    }
}
