//! Alarm threshold from good bearings' lifetime errors, and leave-one-out
//! classification of a bearing set.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::adepos::{run, ControllerConfig, MonitorLog};
use crate::ensemble::Detector;
use crate::error::{Error, Result};
use crate::ingest::BearingManifest;
use crate::pipeline::{detector, extract_manifest, train_all, BearingFeatures, PipelineConfig, TrainedBearing};
use crate::seeds::ensemble_base_seed;

/// Largest full-ensemble median error over `stream`.
pub fn lifetime_max_error<D, X>(detector: &D, stream: &[X]) -> Result<f64>
where
    D: Detector + ?Sized,
    X: AsRef<[f64]>,
{
    if stream.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let n = detector.members();
    stream
        .iter()
        .map(|x| detector.median_error(x.as_ref(), n))
        .try_fold(f64::NEG_INFINITY, |m, e| Ok(m.max(e?)))
}

/// `max(T) + 0.5 k s(T)` with `s` the sample standard deviation.
pub fn threshold(t_values: &[f64], k: f64) -> Result<f64> {
    ThresholdCalib::new(t_values.to_vec(), k).map(|c| c.thr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCalib {
    pub t_values: Vec<f64>,
    pub max: f64,
    pub sigma: f64,
    pub k: f64,
    pub thr: f64,
}

impl ThresholdCalib {
    pub fn new(t_values: Vec<f64>, k: f64) -> Result<Self> {
        let n = t_values.len();
        if n < 2 {
            return Err(Error::TooFewGoodBearings(n));
        }
        if t_values.iter().any(|t| !t.is_finite()) || !k.is_finite() {
            return Err(Error::NonFinite("threshold input"));
        }
        let max = t_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Shifted by the first value so identical inputs give exactly zero.
        let d: Vec<f64> = t_values.iter().map(|t| t - t_values[0]).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sigma = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        Ok(ThresholdCalib {
            thr: max + 0.5 * k * sigma,
            t_values,
            max,
            sigma,
            k,
        })
    }
}

/// Result of monitoring one held-out bearing.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingOutcome {
    pub id: String,
    pub label: u8,
    pub fault_declared: bool,
    /// Timestamp of the window that raised the fault.
    pub fault_sample: Option<u64>,
    pub thr: f64,
    pub avg_l_eff: f64,
    pub monitored: usize,
}

impl BearingOutcome {
    pub fn correct(&self) -> bool {
        self.fault_declared == (self.label == 1)
    }
}

/// One leave-one-out pass over a trained bearing set.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSet {
    pub base_seed: u16,
    /// Lifetime max error of each good bearing, `None` for failed ones.
    pub t_x: Vec<Option<f64>>,
    /// Threshold calibration of each fold, indexed by held-out bearing.
    pub folds: Vec<ThresholdCalib>,
    pub outcomes: Vec<BearingOutcome>,
    pub logs: Vec<MonitorLog>,
}

impl FoldSet {
    pub fn accuracy(&self) -> f64 {
        self.outcomes.iter().filter(|o| o.correct()).count() as f64 / self.outcomes.len() as f64
    }
}

/// `T_X` of every good bearing on its own monitoring stream.
pub fn good_bearing_errors(trained: &[TrainedBearing], config: &PipelineConfig) -> Result<Vec<Option<f64>>> {
    trained
        .par_iter()
        .map(|b| {
            if b.label != 0 {
                return Ok(None);
            }
            let d = detector(&b.ensemble, config.inference, None)?;
            let xs: Vec<&[f64]> = b.monitor.iter().map(|(_, v)| &v[..]).collect();
            lifetime_max_error(d.as_ref(), &xs).map(Some)
        })
        .collect()
}

/// Threshold for the fold holding out bearing `test`.
pub fn fold_threshold(t_x: &[Option<f64>], test: usize, k: f64) -> Result<ThresholdCalib> {
    let t: Vec<f64> = t_x
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != test)
        .filter_map(|(_, t)| *t)
        .collect();
    ThresholdCalib::new(t, k)
}

/// Monitors `bearing` at threshold `thr` and summarizes the verdict.
pub fn monitor_bearing(
    bearing: &TrainedBearing,
    config: &PipelineConfig,
    controller: ControllerConfig,
    thr: f64,
) -> Result<(BearingOutcome, MonitorLog)> {
    let d = detector(&bearing.ensemble, config.inference, Some(thr))?;
    let log = run(d.as_ref(), &bearing.monitor, controller)?;
    let fault = log.fault().map(|r| r.timestamp);
    let outcome = BearingOutcome {
        id: bearing.id.clone(),
        label: bearing.label,
        fault_declared: fault.is_some(),
        fault_sample: fault,
        thr,
        avg_l_eff: log.avg_l_eff(),
        monitored: log.records.len(),
    };
    Ok((outcome, log))
}

/// Leave-one-out over bearings already trained with one base seed.
pub fn loo_trained(trained: &[TrainedBearing], config: &PipelineConfig, base_seed: u16) -> Result<FoldSet> {
    if trained.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: trained.len(),
        });
    }
    let controller = config.controller()?;
    let t_x = good_bearing_errors(trained, config)?;
    let folds: Vec<ThresholdCalib> = (0..trained.len())
        .map(|i| {
            fold_threshold(&t_x, i, config.k).map_err(|e| match e {
                Error::TooFewGoodBearings(n) => Error::Config(format!(
                    "fold holding out {} has {n} good bearing(s); at least 2 are needed",
                    trained[i].id
                )),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let results: Vec<(BearingOutcome, MonitorLog)> = trained
        .par_iter()
        .zip(&folds)
        .map(|(b, f)| monitor_bearing(b, config, controller, f.thr))
        .collect::<Result<_>>()?;
    let (outcomes, logs) = results.into_iter().unzip();
    Ok(FoldSet {
        base_seed,
        t_x,
        folds,
        outcomes,
        logs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooReport {
    pub replicas: Vec<FoldSet>,
}

impl LooReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.replicas.iter().map(FoldSet::accuracy).sum::<f64>() / self.replicas.len() as f64
    }

    pub const CSV_HEADER: &'static str = "replica,base_seed,bearing_id,label,fault_declared,fault_sample_index,thr_used,avg_l_eff";

    /// Per-bearing outcomes of every replica.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::CSV_HEADER);
        for (r, set) in self.replicas.iter().enumerate() {
            for o in &set.outcomes {
                let _ = writeln!(
                    out,
                    "{r},{},{},{},{},{},{},{}",
                    set.base_seed,
                    o.id,
                    o.label,
                    u8::from(o.fault_declared),
                    o.fault_sample.map(|s| s.to_string()).unwrap_or_default(),
                    o.thr,
                    o.avg_l_eff
                );
            }
        }
        out
    }
}

/// Leave-one-out classification of already extracted bearings, repeated
/// with `replicas` ensemble seeds drawn from `master_seed`.
pub fn loo_features(
    bearings: &[BearingFeatures],
    config: &PipelineConfig,
    master_seed: u64,
    replicas: usize,
) -> Result<LooReport> {
    if replicas == 0 {
        return Err(Error::Config("at least one replica is required".into()));
    }
    let replicas = (0..replicas as u64)
        .map(|r| {
            let seed = ensemble_base_seed(master_seed, r, config.n_max);
            let trained = train_all(bearings, config, seed)?;
            loo_trained(&trained, config, seed)
        })
        .collect::<Result<_>>()?;
    Ok(LooReport { replicas })
}

pub fn loo_evaluate(manifest: &BearingManifest, config: &PipelineConfig, master_seed: u64, replicas: usize) -> Result<LooReport> {
    loo_features(&extract_manifest(manifest)?, config, master_seed, replicas)
}
