//! Ensembles of base learners trained on one stream, voting by majority over
//! an active prefix of the learner list.

use std::fmt::Write as _;

use crate::elm::opium::{opium_init, opium_step, OpiumConfig};
use crate::elm::{parse_num, ElmModel, Mode, QuantizedElm};
use crate::error::{Error, Result};
use crate::features::{Normalizer, FEATURE_DIM};
use crate::fixedpoint::FixedFormat;

/// Multiplier spreading learner seeds over the 16-bit seed space.
pub const SEED_STRIDE: u32 = 0x9E37;

/// `base_seed XOR (index + 1) * SEED_STRIDE`, truncated to 16 bits. The
/// stride is odd, so seeds of distinct learners never collide.
pub fn learner_seed(base_seed: u16, index: usize) -> Result<u16> {
    let offset = ((index as u32 + 1).wrapping_mul(SEED_STRIDE) & 0xFFFF) as u16;
    match base_seed ^ offset {
        0 => Err(Error::ZeroSeed),
        s => Ok(s),
    }
}

/// Whether `base_seed` yields nonzero seeds for all of `members` learners.
pub fn base_seed_valid(base_seed: u16, members: usize) -> bool {
    (0..members).all(|i| learner_seed(base_seed, i).is_ok())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    /// Number of base learners (odd).
    pub members: usize,
    /// Hidden neurons per learner.
    pub hidden: usize,
    pub input_dim: usize,
    pub mode: Mode,
    /// Boundary-mode target.
    pub target: f64,
    pub base_seed: u16,
    pub opium: OpiumConfig,
    /// Training gives up if not every learner has converged after this many
    /// samples (bootstrap included).
    pub max_samples: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 9,
            hidden: 20,
            input_dim: FEATURE_DIM,
            mode: Mode::Boundary,
            target: 1.0,
            base_seed: 0xACE1,
            opium: OpiumConfig::default(),
            max_samples: 6000,
        }
    }
}

/// Per-learner convergence bookkeeping from [`train_ensemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub seeds: Vec<u16>,
    /// Samples consumed (bootstrap included) when each learner first
    /// reported convergence.
    pub converged_at: Vec<Option<usize>>,
    /// Samples consumed when every learner had converged.
    pub samples_used: usize,
    pub bootstrap: usize,
}

/// A trained, frozen ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    models: Vec<ElmModel>,
    base_seed: u16,
    c: f64,
    threshold: Option<f64>,
    normalizer: Option<Normalizer>,
}

/// Trains every learner on the identical sample sequence: `N_0` bootstrap
/// samples, then OPIUM updates until all learners have converged at once.
pub fn train_ensemble<X: AsRef<[f64]>>(stream: &[X], config: &EnsembleConfig) -> Result<(Ensemble, TrainingReport)> {
    if config.members == 0 || config.members.is_multiple_of(2) {
        return Err(Error::Config(format!("ensemble size must be odd, got {}", config.members)));
    }
    let bootstrap = config.opium.bootstrap_size(config.hidden);
    if bootstrap < config.hidden {
        return Err(Error::Config(format!(
            "bootstrap size {bootstrap} below hidden size {}",
            config.hidden
        )));
    }
    if stream.len() < bootstrap {
        return Err(Error::InsufficientSamples {
            needed: bootstrap,
            got: stream.len(),
        });
    }
    let mut models = Vec::with_capacity(config.members);
    let mut states = Vec::with_capacity(config.members);
    let mut seeds = Vec::with_capacity(config.members);
    for i in 0..config.members {
        let seed = learner_seed(config.base_seed, i)?;
        let mut model = ElmModel::new(seed, config.hidden, config.input_dim, config.mode)?.with_target(config.target);
        states.push(opium_init(&stream[..bootstrap], &mut model, &config.opium)?);
        models.push(model);
        seeds.push(seed);
    }
    let mut converged_at = vec![None; config.members];
    let cap = config.max_samples.min(stream.len());
    let mut used = bootstrap;
    let mut done = false;
    for x in &stream[bootstrap..cap] {
        for ((model, state), first) in models.iter_mut().zip(&mut states).zip(&mut converged_at) {
            opium_step(state, model, x.as_ref())?;
            if first.is_none() && state.converged() {
                *first = Some(state.samples_seen());
            }
        }
        used += 1;
        if states.iter().all(|s| s.converged()) {
            done = true;
            break;
        }
    }
    if !done {
        return Err(Error::NotConverged { cap });
    }
    let ensemble = Ensemble {
        models,
        base_seed: config.base_seed,
        c: config.opium.c,
        threshold: None,
        normalizer: None,
    };
    let report = TrainingReport {
        seeds,
        converged_at,
        samples_used: used,
        bootstrap,
    };
    Ok((ensemble, report))
}

/// Outcome of one majority vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    /// `true` = learner flags an anomaly.
    pub flags: Vec<bool>,
    /// Per-learner one-class errors; empty when built from flags alone.
    pub errors: Vec<f64>,
    pub active_count: usize,
    pub majority: bool,
}

impl VoteResult {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        let active_count = flags.len();
        let alarms = flags.iter().filter(|&&f| f).count();
        VoteResult {
            flags,
            errors: Vec::new(),
            active_count,
            majority: 2 * alarms > active_count,
        }
    }

    /// A learner flags when its error strictly exceeds the threshold.
    pub fn from_errors(errors: Vec<f64>, threshold: f64) -> Self {
        let flags = errors.iter().map(|&e| e > threshold).collect();
        VoteResult {
            errors,
            ..Self::from_flags(flags)
        }
    }

    pub fn max_error(&self) -> Option<f64> {
        self.errors.iter().copied().reduce(f64::max)
    }
}

/// Median of an odd-length slice (upper median otherwise).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn check_active(active: usize, total: usize) -> Result<()> {
    if active == 0 || active > total || active.is_multiple_of(2) {
        return Err(Error::InvalidActiveCount { active, total });
    }
    Ok(())
}

/// Anything that scores an input with an ordered list of base learners.
pub trait Detector: Sync {
    fn members(&self) -> usize;
    fn hidden(&self) -> usize;
    fn threshold(&self) -> Option<f64>;

    /// Errors of learners `0..active`; learners beyond the prefix are not
    /// evaluated.
    fn learner_errors(&self, x: &[f64], active: usize) -> Result<Vec<f64>>;

    fn evaluate(&self, x: &[f64], active: usize) -> Result<VoteResult> {
        check_active(active, self.members())?;
        let thr = self
            .threshold()
            .ok_or_else(|| Error::Config("ensemble threshold not calibrated".into()))?;
        Ok(VoteResult::from_errors(self.learner_errors(x, active)?, thr))
    }

    /// Median learner error over the active prefix. A majority of the prefix
    /// flags exactly when this exceeds the threshold.
    fn median_error(&self, x: &[f64], active: usize) -> Result<f64> {
        check_active(active, self.members())?;
        Ok(median(&self.learner_errors(x, active)?))
    }
}

impl Ensemble {
    pub fn from_models(models: Vec<ElmModel>, base_seed: u16, c: f64) -> Result<Self> {
        check_active(models.len(), models.len())?;
        let first = &models[0];
        if models.iter().any(|m| {
            m.hidden() != first.hidden() || m.input_dim() != first.input_dim() || m.mode() != first.mode()
        }) {
            return Err(Error::Config("learners must share L, d and mode".into()));
        }
        if models.iter().any(|m| m.beta().is_none()) {
            return Err(Error::UninitializedBeta);
        }
        Ok(Ensemble {
            models,
            base_seed,
            c,
            threshold: None,
            normalizer: None,
        })
    }

    pub fn models(&self) -> &[ElmModel] {
        &self.models
    }
    pub fn base_seed(&self) -> u16 {
        self.base_seed
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn mode(&self) -> Mode {
        self.models[0].mode()
    }
    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_threshold(&mut self, thr: f64) {
        self.threshold = Some(thr);
    }

    pub fn with_threshold(mut self, thr: f64) -> Self {
        self.threshold = Some(thr);
        self
    }

    pub fn set_normalizer(&mut self, n: Normalizer) {
        self.normalizer = Some(n);
    }

    /// The first `members` learners as an ensemble of their own.
    pub fn prefix(&self, members: usize) -> Result<Ensemble> {
        check_active(members, self.models.len())?;
        Ok(Ensemble {
            models: self.models[..members].to_vec(),
            ..self.clone()
        })
    }

    pub fn quantized(&self, fmt: FixedFormat) -> Result<QuantizedEnsemble> {
        Ok(QuantizedEnsemble {
            learners: self.models.iter().map(|m| QuantizedElm::new(m, fmt)).collect::<Result<_>>()?,
            hidden: self.hidden(),
            threshold: self.threshold,
        })
    }

    /// Versioned text container of the learner records.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "{ENSEMBLE_MAGIC} {ENSEMBLE_VERSION}");
        let _ = writeln!(out, "members {}", self.models.len());
        let _ = writeln!(out, "hidden {}", self.hidden());
        let _ = writeln!(out, "base_seed {}", self.base_seed);
        match self.threshold {
            Some(t) => writeln!(out, "threshold {t:?}"),
            None => writeln!(out, "threshold none"),
        }
        .ok();
        if let Some(n) = &self.normalizer {
            let _ = writeln!(out, "normalizer_count {}", n.count);
            let _ = writeln!(out, "normalizer_mean {}", join_floats(&n.mean));
            let _ = writeln!(out, "normalizer_std {}", join_floats(&n.std));
        }
        for (i, m) in self.models.iter().enumerate() {
            let _ = writeln!(out, "learner {i}");
            out.push_str(&m.to_record(self.c)?);
            let _ = writeln!(out, "end");
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != format!("{ENSEMBLE_MAGIC} {ENSEMBLE_VERSION}") {
            return Err(Error::Parse(format!("bad ensemble header `{header}`")));
        }
        let mut members = None;
        let mut base_seed = None;
        let mut hidden = None;
        let mut threshold = None;
        let (mut n_count, mut n_mean, mut n_std) = (None, None, None);
        let mut models = Vec::new();
        let mut c = None;
        while let Some(line) = lines.next() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "members" => members = Some(parse_num::<usize>(rest)?),
                "hidden" => hidden = Some(parse_num::<usize>(rest)?),
                "base_seed" => base_seed = Some(parse_num::<u16>(rest)?),
                "threshold" => {
                    threshold = match rest {
                        "none" => None,
                        v => Some(parse_num::<f64>(v)?),
                    }
                }
                "normalizer_count" => n_count = Some(parse_num::<usize>(rest)?),
                "normalizer_mean" => n_mean = Some(parse_floats(rest)?),
                "normalizer_std" => n_std = Some(parse_floats(rest)?),
                "learner" => {
                    let mut record = String::new();
                    for l in lines.by_ref() {
                        if l == "end" {
                            break;
                        }
                        record.push_str(l);
                        record.push('\n');
                    }
                    let (model, mc) = ElmModel::from_record(&record)?;
                    c = Some(mc);
                    models.push(model);
                }
                "" => {}
                other => return Err(Error::Parse(format!("unknown ensemble field `{other}`"))),
            }
        }
        let members = members.ok_or_else(|| Error::Parse("missing `members`".into()))?;
        if models.len() != members {
            return Err(Error::Parse(format!("expected {members} learners, found {}", models.len())));
        }
        let mut e = Ensemble::from_models(
            models,
            base_seed.ok_or_else(|| Error::Parse("missing `base_seed`".into()))?,
            c.unwrap_or(OpiumConfig::default().c),
        )?;
        if hidden.is_some_and(|h| h != e.hidden()) {
            return Err(Error::Parse("hidden size disagrees with learner records".into()));
        }
        e.threshold = threshold;
        if let (Some(count), Some(mean), Some(std)) = (n_count, n_mean, n_std) {
            e.normalizer = Some(Normalizer { mean, std, count });
        }
        Ok(e)
    }
}

const ENSEMBLE_MAGIC: &str = "adepos-ensemble";
const ENSEMBLE_VERSION: u32 = 1;

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(s: &str) -> Result<[f64; FEATURE_DIM]> {
    let v: Vec<f64> = s.split_whitespace().map(parse_num).collect::<Result<_>>()?;
    v.try_into()
        .map_err(|_| Error::Parse(format!("expected {FEATURE_DIM} normalizer values")))
}

impl Detector for Ensemble {
    fn members(&self) -> usize {
        self.models.len()
    }
    fn hidden(&self) -> usize {
        self.models[0].hidden()
    }
    fn threshold(&self) -> Option<f64> {
        self.threshold
    }
    fn learner_errors(&self, x: &[f64], active: usize) -> Result<Vec<f64>> {
        self.models[..active].iter().map(|m| m.score(x)).collect()
    }
}

/// An ensemble running on the fixed-point datapath.
#[derive(Debug, Clone)]
pub struct QuantizedEnsemble {
    learners: Vec<QuantizedElm>,
    hidden: usize,
    threshold: Option<f64>,
}

impl QuantizedEnsemble {
    pub fn set_threshold(&mut self, thr: f64) {
        self.threshold = Some(thr);
    }
}

impl Detector for QuantizedEnsemble {
    fn members(&self) -> usize {
        self.learners.len()
    }
    fn hidden(&self) -> usize {
        self.hidden
    }
    fn threshold(&self) -> Option<f64> {
        self.threshold
    }
    fn learner_errors(&self, x: &[f64], active: usize) -> Result<Vec<f64>> {
        self.learners[..active].iter().map(|m| m.score(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn healthy_stream(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn learner_seeds_distinct_and_nonzero() {
        for base in [1u16, 0xACE1, 0xFFFF] {
            let seeds: Vec<u16> = (0..64).map(|i| learner_seed(base, i).unwrap()).collect();
            let mut sorted = seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 64);
        }
        // A base seed equal to an offset would zero that learner.
        assert!(learner_seed(0x9E37, 0).is_err());
        assert!(!base_seed_valid(0x9E37, 9));
    }

    #[test]
    fn vote_counting() {
        assert!(VoteResult::from_flags(vec![true, true, true, false, false]).majority);
        assert!(!VoteResult::from_flags(vec![false; 3]).majority);
        let v = VoteResult::from_errors(vec![0.5, 0.5, 0.7], 0.5);
        assert_eq!(v.flags, vec![false, false, true]);
        assert!(!v.majority);
    }

    #[test]
    fn single_learner_ensemble_matches_elm() {
        let stream = healthy_stream(6000, 1);
        let cfg = EnsembleConfig {
            members: 1,
            ..Default::default()
        };
        let (e, report) = train_ensemble(&stream, &cfg).unwrap();
        let mut m = ElmModel::new(report.seeds[0], 20, 5, Mode::Boundary).unwrap();
        let mut s = opium_init(&stream[..20], &mut m, &cfg.opium).unwrap();
        for x in &stream[20..report.samples_used] {
            opium_step(&mut s, &mut m, x).unwrap();
        }
        assert_eq!(&e.models()[0], &m);
        let e = e.with_threshold(0.1);
        let x = &stream[5999];
        let v = e.evaluate(x, 1).unwrap();
        assert_eq!(v.errors, vec![m.score(x).unwrap()]);
    }

    #[test]
    fn nine_learners_converge_on_healthy_stream() {
        let stream = healthy_stream(6000, 2);
        let (e, report) = train_ensemble(&stream, &EnsembleConfig::default()).unwrap();
        assert_eq!(e.members(), 9);
        assert!(report.converged_at.iter().all(Option::is_some));
        assert!(report.samples_used <= 6000);
    }

    #[test]
    fn training_errors() {
        let stream = healthy_stream(15, 3);
        assert!(matches!(
            train_ensemble(&stream, &EnsembleConfig::default()),
            Err(Error::InsufficientSamples { .. })
        ));
        let stream = healthy_stream(40, 3);
        assert!(matches!(
            train_ensemble(&stream, &EnsembleConfig::default()),
            Err(Error::NotConverged { .. })
        ));
        let even = EnsembleConfig {
            members: 4,
            ..Default::default()
        };
        assert!(train_ensemble(&stream, &even).is_err());
    }

    #[test]
    fn deterministic_serialization() {
        let stream = healthy_stream(6000, 4);
        let a = train_ensemble(&stream, &EnsembleConfig::default()).unwrap().0;
        let b = train_ensemble(&stream, &EnsembleConfig::default()).unwrap().0;
        assert_eq!(a.to_text().unwrap(), b.to_text().unwrap());
    }

    #[test]
    fn text_roundtrip() {
        let stream = healthy_stream(6000, 5);
        let (mut e, _) = train_ensemble(&stream, &EnsembleConfig::default()).unwrap();
        e.set_threshold(0.123);
        e.set_normalizer(Normalizer {
            mean: [1.0, 2.0, 3.0, 4.0, 5.0],
            std: [0.1, 0.2, 0.3, 0.4, 0.5],
            count: 100,
        });
        let back = Ensemble::from_text(&e.to_text().unwrap()).unwrap();
        assert_eq!(back, e);
        assert!(Ensemble::from_text("adepos-ensemble 9\n").is_err());
    }

    #[test]
    fn evaluate_rejects_bad_active_counts() {
        let stream = healthy_stream(6000, 6);
        let e = train_ensemble(&stream, &EnsembleConfig::default()).unwrap().0.with_threshold(0.1);
        for bad in [0, 4, 10, 11] {
            assert!(matches!(e.evaluate(&stream[0], bad), Err(Error::InvalidActiveCount { .. })));
        }
        let uncalibrated = e.prefix(3).unwrap();
        let mut no_thr = uncalibrated.clone();
        no_thr.threshold = None;
        assert!(no_thr.evaluate(&stream[0], 3).is_err());
    }

    #[test]
    fn activation_prefix_is_nested() {
        let stream = healthy_stream(6000, 7);
        let e = train_ensemble(&stream, &EnsembleConfig::default()).unwrap().0.with_threshold(0.05);
        let x = &stream[700];
        let mut prev: Option<VoteResult> = None;
        for k in (1..=9).step_by(2) {
            let v = e.evaluate(x, k).unwrap();
            assert_eq!(v.errors.len(), k);
            if let Some(p) = prev {
                assert_eq!(&v.errors[..p.active_count], &p.errors[..]);
            }
            // Pure function of its arguments.
            assert_eq!(e.evaluate(x, k).unwrap(), v);
            // Majority agrees with median > threshold.
            assert_eq!(v.majority, e.median_error(x, k).unwrap() > 0.05);
            prev = Some(v);
        }
    }

    proptest! {
        #[test]
        fn unanimity_and_single_flip(flags in prop::collection::vec(any::<bool>(), 1..=4usize).prop_map(|mut v| { if v.len() % 2 == 0 { v.push(false); } v }), idx in any::<prop::sample::Index>()) {
            let n = flags.len();
            prop_assert!(VoteResult::from_flags(vec![true; n]).majority);
            prop_assert!(!VoteResult::from_flags(vec![false; n]).majority);
            let before = VoteResult::from_flags(flags.clone());
            let alarms = flags.iter().filter(|&&f| f).count() as i64;
            let margin = (2 * alarms - n as i64).abs();
            let mut flipped = flags.clone();
            let i = idx.index(n);
            flipped[i] = !flipped[i];
            let after = VoteResult::from_flags(flipped);
            if before.majority != after.majority {
                prop_assert_eq!(margin, 1);
            }
        }
    }
}
