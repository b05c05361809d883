//! Per-inference energy model calibrated to published post-layout numbers.
//!
//! Energy is affine in the number of effective hidden neurons,
//! `E = (alpha * L_eff * mode_factor + gamma) * s(bits) + rho * inactive`,
//! where `s(16) = 1` and `inactive` counts powered-down base learners held at
//! retention voltage.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adepos::MonitorLog;
use crate::elm::Mode;
use crate::error::{Error, Result};
use crate::fixedpoint::{MAX_BITS, MIN_BITS};

/// One measured operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub l_eff: f64,
    pub bits: u32,
    pub mode: Mode,
    pub nj: f64,
}

/// Published anchors: ELM-B and ELM-AE at 180 neurons, and the adaptive
/// controller whose lifetime average was 20.42 neurons, all 16-bit.
pub fn default_anchors() -> Vec<Anchor> {
    vec![
        Anchor {
            l_eff: 180.0,
            bits: 16,
            mode: Mode::Boundary,
            nj: 178.56,
        },
        Anchor {
            l_eff: 20.42,
            bits: 16,
            mode: Mode::Boundary,
            nj: 44.77,
        },
        Anchor {
            l_eff: 180.0,
            bits: 16,
            mode: Mode::Reconstruction,
            nj: 297.61,
        },
    ]
}

/// Energy multiplier as a function of datapath width.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BitScale {
    /// `bits / 16`.
    #[default]
    Linear,
    /// Explicit factors; widths between entries interpolate linearly.
    Table(BTreeMap<u32, f64>),
}

impl BitScale {
    pub fn factor(&self, bits: u32) -> Result<f64> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::BitsOutOfRange(bits));
        }
        match self {
            BitScale::Linear => Ok(bits as f64 / 16.0),
            BitScale::Table(t) => {
                if let Some(&v) = t.get(&bits) {
                    return Ok(v);
                }
                let lo = t.range(..bits).next_back();
                let hi = t.range(bits..).next();
                match (lo, hi) {
                    (Some((&b0, &v0)), Some((&b1, &v1))) => {
                        Ok(v0 + (v1 - v0) * (bits - b0) as f64 / (b1 - b0) as f64)
                    }
                    _ => Err(Error::Anchors(format!("bit scale table does not cover {bits} bits"))),
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let BitScale::Table(t) = self {
            if t.get(&16) != Some(&1.0) {
                return Err(Error::Anchors("bit scale table must map 16 bits to 1".into()));
            }
            let mut prev = 0.0;
            for (&b, &v) in t {
                if !(MIN_BITS..=MAX_BITS).contains(&b) || !(v > 0.0) || v < prev {
                    return Err(Error::Anchors("bit scale must be positive and nondecreasing".into()));
                }
                prev = v;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    /// nJ per effective hidden neuron per inference.
    pub alpha: f64,
    /// Fixed nJ per inference.
    pub gamma: f64,
    /// Output-layer multiplier for reconstruction mode; boundary is 1.
    pub reconstruction_factor: Option<f64>,
    pub bit_scale: BitScale,
    /// nJ per inactive base learner per inference.
    pub rho: f64,
}

/// Least-squares fit of `alpha`, `gamma` from the boundary-mode anchors
/// (which must share one bit width), and of the reconstruction factor from
/// any reconstruction anchors.
pub fn calibrate(anchors: &[Anchor], bit_scale: BitScale) -> Result<EnergyModel> {
    bit_scale.validate()?;
    let boundary: Vec<&Anchor> = anchors.iter().filter(|a| a.mode == Mode::Boundary).collect();
    if boundary.len() < 2 {
        return Err(Error::Anchors("need at least 2 boundary-mode anchors".into()));
    }
    let bits = boundary[0].bits;
    if boundary.iter().any(|a| a.bits != bits) {
        return Err(Error::Anchors("boundary anchors must share one bit width".into()));
    }
    if anchors.iter().any(|a| !(a.l_eff > 0.0 && a.nj > 0.0)) {
        return Err(Error::Anchors("anchor L_eff and energy must be positive".into()));
    }
    let s = bit_scale.factor(bits)?;
    let n = boundary.len() as f64;
    let mx = boundary.iter().map(|a| a.l_eff).sum::<f64>() / n;
    let my = boundary.iter().map(|a| a.nj / s).sum::<f64>() / n;
    let sxx: f64 = boundary.iter().map(|a| (a.l_eff - mx).powi(2)).sum();
    if sxx <= 1e-12 * mx * mx {
        return Err(Error::Anchors("boundary anchors need distinct L_eff".into()));
    }
    let sxy: f64 = boundary.iter().map(|a| (a.l_eff - mx) * (a.nj / s - my)).sum();
    let alpha = sxy / sxx;
    let gamma = my - alpha * mx;
    if !(alpha > 0.0) || gamma < 0.0 {
        return Err(Error::Anchors(format!("fit gives alpha {alpha}, gamma {gamma}")));
    }
    let recon: Vec<f64> = anchors
        .iter()
        .filter(|a| a.mode == Mode::Reconstruction)
        .map(|a| Ok((a.nj / bit_scale.factor(a.bits)? - gamma) / (alpha * a.l_eff)))
        .collect::<Result<_>>()?;
    let reconstruction_factor = (!recon.is_empty()).then(|| recon.iter().sum::<f64>() / recon.len() as f64);
    Ok(EnergyModel {
        alpha,
        gamma,
        reconstruction_factor,
        bit_scale,
        rho: 0.0,
    })
}

impl EnergyModel {
    pub fn calibrated_default() -> Self {
        calibrate(&default_anchors(), BitScale::Linear).expect("published anchors are consistent")
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    fn mode_factor(&self, mode: Mode) -> Result<f64> {
        match mode {
            Mode::Boundary => Ok(1.0),
            Mode::Reconstruction => self
                .reconstruction_factor
                .ok_or_else(|| Error::Anchors("no reconstruction-mode anchor".into())),
        }
    }

    /// nJ for one inference with `l_eff` active neurons.
    pub fn estimate(&self, l_eff: f64, bits: u32, mode: Mode) -> Result<f64> {
        self.estimate_with_inactive(l_eff, bits, mode, 0)
    }

    pub fn estimate_with_inactive(&self, l_eff: f64, bits: u32, mode: Mode, inactive: usize) -> Result<f64> {
        if !(l_eff > 0.0) {
            return Err(Error::Config(format!("L_eff must be > 0, got {l_eff}")));
        }
        let s = self.bit_scale.factor(bits)?;
        Ok((self.alpha * l_eff * self.mode_factor(mode)? + self.gamma) * s + self.rho * inactive as f64)
    }

    /// Energy of every evaluation in `log`, compared with running the full
    /// ensemble once per sample.
    pub fn trace_energy(&self, log: &MonitorLog, bits: u32, mode: Mode) -> Result<EnergyReport> {
        if log.records.is_empty() {
            return Err(Error::EmptyLog);
        }
        let mut total = 0.0;
        for r in &log.records {
            for &n in &r.evaluated {
                let inactive = log.n_max.saturating_sub(n);
                total += self.estimate_with_inactive((log.hidden * n) as f64, bits, mode, inactive)?;
            }
        }
        let samples = log.records.len() as f64;
        let full = (log.hidden * log.n_max) as f64;
        let baseline = self.estimate(full, bits, mode)?;
        let avg = total / samples;
        let ae_baseline = match self.reconstruction_factor {
            Some(_) => Some(self.estimate(full, bits, Mode::Reconstruction)?),
            None => None,
        };
        Ok(EnergyReport {
            total_nj: total,
            avg_nj_per_sample: avg,
            baseline_nj: baseline,
            savings_ratio: baseline / avg,
            ae_baseline_nj: ae_baseline,
            ae_savings_ratio: ae_baseline.map(|b| b / avg),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub total_nj: f64,
    pub avg_nj_per_sample: f64,
    /// Per-sample energy of the full ensemble at the same width and mode.
    pub baseline_nj: f64,
    pub savings_ratio: f64,
    /// Per-sample energy of a full reconstruction-mode network.
    pub ae_baseline_nj: Option<f64>,
    pub ae_savings_ratio: Option<f64>,
}

impl EnergyReport {
    pub const CSV_HEADER: &'static str =
        "total_nj,avg_nj_per_sample,baseline_nj,savings_ratio,ae_baseline_nj,ae_savings_ratio";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.total_nj,
            self.avg_nj_per_sample,
            self.baseline_nj,
            self.savings_ratio,
            opt(self.ae_baseline_nj),
            opt(self.ae_savings_ratio)
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::CSV_HEADER);
        let _ = writeln!(out, "{}", self.csv_row());
        out
    }
}

/// On-disk anchor set:
///
/// ```toml
/// rho = 0.0
/// [bit_scale]          # optional; default is bits/16
/// 8 = 0.4
/// 12 = 0.7
/// 16 = 1.0
/// [[anchor]]
/// l_eff = 180.0
/// bits = 16
/// mode = "boundary"
/// nj = 178.56
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorFile {
    #[serde(default)]
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_scale: Option<BTreeMap<String, f64>>,
    #[serde(rename = "anchor")]
    pub anchors: Vec<Anchor>,
}

impl AnchorFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Anchors(e.to_string()))
    }

    pub fn model(&self) -> Result<EnergyModel> {
        let scale = match &self.bit_scale {
            None => BitScale::Linear,
            Some(t) => BitScale::Table(
                t.iter()
                    .map(|(k, &v)| {
                        k.parse::<u32>()
                            .map(|b| (b, v))
                            .map_err(|_| Error::Anchors(format!("bad bit width `{k}`")))
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(calibrate(&self.anchors, scale)?.with_rho(self.rho))
    }
}
