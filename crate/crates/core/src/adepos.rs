//! The power-saving controller.
//!
//! Monitoring starts with every base learner active. A healthy verdict
//! powers two learners down; an alarm powers two more up and re-evaluates the
//! same sample. Only an alarm raised with the whole ensemble active is a
//! fault.

use std::fmt::Write as _;

use crate::ensemble::{check_active, Detector, VoteResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Healthy,
    Fault,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Healthy => "healthy",
            Verdict::Fault => "fault",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerConfig {
    pub n_min: usize,
    pub n_max: usize,
}

impl ControllerConfig {
    pub fn new(n_min: usize, n_max: usize) -> Result<Self> {
        check_active(n_max, n_max)?;
        check_active(n_min, n_max)?;
        Ok(ControllerConfig { n_min, n_max })
    }

    /// Longest escalation chain of a single sample.
    pub fn max_chain(&self) -> usize {
        (self.n_max - self.n_min) / 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerState {
    n_bl: usize,
    config: ControllerConfig,
    fault_declared: bool,
    evaluations: u64,
}

/// One ensemble evaluation performed by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub n_bl: usize,
    pub majority: bool,
    pub max_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub verdict: Verdict,
    pub evaluations: Vec<Evaluation>,
}

impl ControllerState {
    /// Starts at the full ensemble.
    pub fn new(config: ControllerConfig) -> Self {
        ControllerState {
            n_bl: config.n_max,
            config,
            fault_declared: false,
            evaluations: 0,
        }
    }

    pub fn n_bl(&self) -> usize {
        self.n_bl
    }
    pub fn config(&self) -> ControllerConfig {
        self.config
    }
    pub fn fault_declared(&self) -> bool {
        self.fault_declared
    }
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Processes one sample. `evaluate(n)` must vote with the first `n`
    /// learners on that sample; it is called once per escalation level.
    pub fn step<F>(&mut self, mut evaluate: F) -> Result<StepOutcome>
    where
        F: FnMut(usize) -> Result<VoteResult>,
    {
        if self.fault_declared {
            return Err(Error::FaultAlreadyDeclared);
        }
        let mut evaluations = Vec::with_capacity(1);
        loop {
            let vote = evaluate(self.n_bl)?;
            if vote.active_count != self.n_bl {
                return Err(Error::InvalidActiveCount {
                    active: vote.active_count,
                    total: self.n_bl,
                });
            }
            self.evaluations += 1;
            evaluations.push(Evaluation {
                n_bl: self.n_bl,
                majority: vote.majority,
                max_error: vote.max_error(),
            });
            if !vote.majority {
                self.n_bl = self.n_bl.saturating_sub(2).max(self.config.n_min);
                return Ok(StepOutcome {
                    verdict: Verdict::Healthy,
                    evaluations,
                });
            }
            if self.n_bl >= self.config.n_max {
                self.fault_declared = true;
                return Ok(StepOutcome {
                    verdict: Verdict::Fault,
                    evaluations,
                });
            }
            self.n_bl += 2;
        }
    }

    pub fn step_detector<D: Detector + ?Sized>(&mut self, detector: &D, x: &[f64]) -> Result<StepOutcome> {
        self.step(|n| detector.evaluate(x, n))
    }
}

/// Per-sample monitoring record.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Position in the monitored stream.
    pub sample_index: usize,
    /// Timestamp of the underlying window.
    pub timestamp: u64,
    /// Active learners at the evaluation that decided the verdict.
    pub n_bl_final: usize,
    /// Active learners of every evaluation, escalations included.
    pub evaluated: Vec<usize>,
    pub verdict: Verdict,
    pub max_error: f64,
}

impl SampleRecord {
    pub fn l_eff_sum(&self, hidden: usize) -> usize {
        hidden * self.evaluated.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorLog {
    pub hidden: usize,
    pub n_max: usize,
    pub records: Vec<SampleRecord>,
}

impl MonitorLog {
    pub fn fault(&self) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.verdict == Verdict::Fault)
    }

    pub fn evaluations(&self) -> usize {
        self.records.iter().map(|r| r.evaluated.len()).sum()
    }

    pub fn total_l_eff(&self) -> usize {
        self.records.iter().map(|r| r.l_eff_sum(self.hidden)).sum()
    }

    /// Mean effective hidden neurons per evaluation.
    pub fn avg_l_eff_per_evaluation(&self) -> f64 {
        self.total_l_eff() as f64 / self.evaluations().max(1) as f64
    }

    /// Mean effective hidden neurons spent per monitored sample, escalation
    /// re-evaluations included.
    pub fn avg_l_eff(&self) -> f64 {
        self.total_l_eff() as f64 / self.records.len().max(1) as f64
    }

    /// CSV with header
    /// `sample_index,n_bl_final,n_evaluations,l_eff_sum,verdict,max_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_index,n_bl_final,n_evaluations,l_eff_sum,verdict,max_err\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.timestamp,
                r.n_bl_final,
                r.evaluated.len(),
                r.l_eff_sum(self.hidden),
                r.verdict.as_str(),
                r.max_error
            );
        }
        out
    }
}

/// Monitors `stream` until a fault or the end of the stream. Items pair a
/// timestamp with the normalized feature vector.
pub fn run<D, X>(detector: &D, stream: &[(u64, X)], config: ControllerConfig) -> Result<MonitorLog>
where
    D: Detector + ?Sized,
    X: AsRef<[f64]>,
{
    if stream.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if config.n_max > detector.members() {
        return Err(Error::InvalidActiveCount {
            active: config.n_max,
            total: detector.members(),
        });
    }
    let mut state = ControllerState::new(config);
    let mut records = Vec::with_capacity(stream.len());
    for (i, (timestamp, x)) in stream.iter().enumerate() {
        let outcome = state.step_detector(detector, x.as_ref())?;
        let max_error = outcome
            .evaluations
            .iter()
            .filter_map(|e| e.max_error)
            .fold(f64::NEG_INFINITY, f64::max);
        records.push(SampleRecord {
            sample_index: i,
            timestamp: *timestamp,
            n_bl_final: outcome.evaluations.last().map_or(0, |e| e.n_bl),
            evaluated: outcome.evaluations.iter().map(|e| e.n_bl).collect(),
            verdict: outcome.verdict,
            max_error,
        });
        if state.fault_declared() {
            break;
        }
    }
    Ok(MonitorLog {
        hidden: detector.hidden(),
        n_max: config.n_max,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(n: usize, alarm: bool) -> Result<VoteResult> {
        Ok(VoteResult::from_flags(vec![alarm; n]))
    }

    fn cfg() -> ControllerConfig {
        ControllerConfig::new(1, 9).unwrap()
    }

    #[test]
    fn alarm_at_full_capacity_is_fault() {
        let mut s = ControllerState::new(cfg());
        let out = s.step(|n| vote(n, true)).unwrap();
        assert_eq!(out.verdict, Verdict::Fault);
        assert_eq!(out.evaluations.len(), 1);
        assert!(s.fault_declared());
        assert!(matches!(s.step(|n| vote(n, false)), Err(Error::FaultAlreadyDeclared)));
    }

    #[test]
    fn healthy_sample_powers_down() {
        let mut s = ControllerState::new(cfg());
        s.n_bl = 5;
        let out = s.step(|n| vote(n, false)).unwrap();
        assert_eq!(out.verdict, Verdict::Healthy);
        assert_eq!(s.n_bl(), 3);
    }

    #[test]
    fn false_alarm_escalates_then_clears() {
        let mut s = ControllerState::new(cfg());
        s.n_bl = 1;
        let out = s.step(|n| vote(n, n == 1)).unwrap();
        assert_eq!(out.verdict, Verdict::Healthy);
        assert_eq!(out.evaluations.iter().map(|e| e.n_bl).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(s.n_bl(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::new(2, 9).is_err());
        assert!(ControllerConfig::new(1, 8).is_err());
        assert!(ControllerConfig::new(11, 9).is_err());
        assert_eq!(cfg().max_chain(), 5);
    }

    struct Fixed(Vec<bool>);

    impl Detector for Fixed {
        fn members(&self) -> usize {
            9
        }
        fn hidden(&self) -> usize {
            20
        }
        fn threshold(&self) -> Option<f64> {
            Some(0.5)
        }
        fn learner_errors(&self, _x: &[f64], active: usize) -> Result<Vec<f64>> {
            Ok(self.0[..active].iter().map(|&a| if a { 1.0 } else { 0.0 }).collect())
        }
    }

    #[test]
    fn all_healthy_stream_trace() {
        let stream: Vec<(u64, Vec<f64>)> = (0..100).map(|i| (i, vec![0.0])).collect();
        let log = run(&Fixed(vec![false; 9]), &stream, cfg()).unwrap();
        let trace: Vec<usize> = log.records.iter().map(|r| r.n_bl_final).collect();
        assert_eq!(&trace[..7], &[9, 7, 5, 3, 1, 1, 1]);
        assert!(trace[4..].iter().all(|&n| n == 1));
        // (9+7+5+3+96*1)*20/100
        assert!((log.avg_l_eff() - 24.0).abs() < 1e-12);
        assert!(log.fault().is_none());
    }

    #[test]
    fn immediate_fault_single_evaluation() {
        let stream: Vec<(u64, Vec<f64>)> = (0..10).map(|i| (i, vec![0.0])).collect();
        let log = run(&Fixed(vec![true; 9]), &stream, cfg()).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].evaluated, vec![9]);
        assert_eq!(log.fault().unwrap().n_bl_final, 9);
        let csv = log.to_csv();
        assert_eq!(csv.lines().nth(1).unwrap(), "0,9,1,180,fault,1");
    }

    #[test]
    fn empty_stream_rejected() {
        let stream: Vec<(u64, Vec<f64>)> = Vec::new();
        assert!(run(&Fixed(vec![false; 9]), &stream, cfg()).is_err());
    }
}
