//! Run configuration file.
//!
//! ```toml
//! manifest = "bearings.toml"
//! out = "out"
//! seed = 42
//! hidden = 20
//! n_max = 9
//! bits = 16
//!
//! [sweep]
//! hidden = [20, 30, 40]
//! n_bl = [9, 7, 5]
//! bits = [8, 12, 16]
//! ```
//!
//! Every key is optional except where a command needs it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elm::opium::OpiumConfig;
use crate::elm::Mode;
use crate::error::{Error, Result};
use crate::fixedpoint::{FixedFormat, MAX_BITS, MIN_BITS};
use crate::pipeline::{Inference, PipelineConfig};

/// Narrowest datapath accepted for monitoring; narrower widths are only
/// explored by sweeps.
pub const MIN_MONITOR_BITS: u32 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    /// Master seed.
    pub seed: u64,
    /// Ensemble seed replicas for accuracy runs.
    pub replicas: usize,
    pub hidden: usize,
    pub n_max: usize,
    pub n_min: usize,
    pub k: f64,
    pub c: f64,
    /// Bootstrap samples; defaults to `hidden`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    pub bits: u32,
    /// Fraction bits; defaults to `bits - 4`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frac: Option<u32>,
    /// Monitor in floating point instead of the fixed-point datapath.
    pub float_inference: bool,
    pub mode: Mode,
    pub target: f64,
    pub epsilon: f64,
    pub window: usize,
    pub max_train: usize,
    pub fit_windows: usize,
    /// Energy anchor file; the published anchors are used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<PathBuf>,
    pub sweep: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            manifest: None,
            out: PathBuf::from("out"),
            seed: 42,
            replicas: 1,
            hidden: p.hidden,
            n_max: p.n_max,
            n_min: p.n_min,
            k: p.k,
            c: p.opium.c,
            n0: None,
            bits: 16,
            frac: None,
            float_inference: false,
            mode: p.mode,
            target: p.target,
            epsilon: p.opium.epsilon,
            window: p.opium.window,
            max_train: p.max_train,
            fit_windows: p.fit_windows,
            anchors: None,
            sweep: SweepGrid::default(),
        }
    }
}

/// Sweep cells: for each hidden size `hidden[i]`, ensembles of
/// 1, 3, .., `n_bl[i]` learners, each at every width in `bits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub hidden: Vec<usize>,
    pub n_bl: Vec<usize>,
    pub bits: Vec<u32>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            hidden: vec![20, 30, 40],
            n_bl: vec![9, 7, 5],
            bits: vec![8, 12, 16],
        }
    }
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepCell {
    pub hidden: usize,
    pub n_bl: usize,
}

impl SweepCell {
    pub fn l_eff(&self) -> usize {
        self.hidden * self.n_bl
    }
}

impl SweepGrid {
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        if self.hidden.is_empty() || self.bits.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.hidden.len() != self.n_bl.len() {
            return Err(Error::Config("sweep `hidden` and `n_bl` must have equal length".into()));
        }
        for &b in &self.bits {
            if !(MIN_BITS..=MAX_BITS).contains(&b) {
                return Err(Error::BitsOutOfRange(b));
            }
        }
        let mut cells = Vec::new();
        for (&hidden, &max) in self.hidden.iter().zip(&self.n_bl) {
            if hidden == 0 || max == 0 || max % 2 == 0 {
                return Err(Error::Config(format!("sweep entry L={hidden}, N_BL={max} is invalid")));
            }
            cells.extend((1..=max).step_by(2).map(|n_bl| SweepCell { hidden, n_bl }));
        }
        Ok(cells)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = c.manifest.as_mut() {
            fix(m);
        }
        if let Some(a) = c.anchors.as_mut() {
            fix(a);
        }
        fix(&mut c.out);
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn format(&self) -> Result<FixedFormat> {
        match self.frac {
            Some(f) => FixedFormat::new(self.bits, f),
            None => FixedFormat::with_default_split(self.bits),
        }
    }

    pub fn opium(&self) -> OpiumConfig {
        OpiumConfig {
            c: self.c,
            bootstrap: self.n0,
            window: self.window,
            epsilon: self.epsilon,
        }
    }

    /// Pipeline settings for monitoring; widths below
    /// [`MIN_MONITOR_BITS`] are rejected.
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        if !self.float_inference && self.bits < MIN_MONITOR_BITS {
            return Err(Error::Config(format!(
                "monitoring needs at least {MIN_MONITOR_BITS} bits, got {}",
                self.bits
            )));
        }
        self.pipeline_any_width()
    }

    /// Like [`RunConfig::pipeline`] but accepts any supported width.
    pub fn pipeline_any_width(&self) -> Result<PipelineConfig> {
        let fmt = self.format()?;
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("k must be >= 0, got {}", self.k)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if self.fit_windows < 2 {
            return Err(Error::Config("fit_windows must be at least 2".into()));
        }
        let p = PipelineConfig {
            hidden: self.hidden,
            n_max: self.n_max,
            n_min: self.n_min,
            k: self.k,
            mode: self.mode,
            target: self.target,
            opium: self.opium(),
            max_train: self.max_train,
            fit_windows: self.fit_windows,
            inference: if self.float_inference {
                Inference::Float
            } else {
                Inference::Fixed(fmt)
            },
        };
        p.controller()?;
        Ok(p)
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest given".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_default_and_custom() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_toml()).unwrap(), d);
        let c = RunConfig {
            manifest: Some("m.toml".into()),
            n0: Some(30),
            frac: Some(10),
            k: 0.5,
            epsilon: 2.5e-3,
            mode: Mode::Reconstruction,
            anchors: Some("a.toml".into()),
            sweep: SweepGrid {
                hidden: vec![20],
                n_bl: vec![3],
                bits: vec![12],
            },
            ..d
        };
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("hiden = 3").is_err());
    }

    #[test]
    fn monitoring_width_floor() {
        let c = RunConfig {
            bits: 8,
            ..Default::default()
        };
        assert!(c.pipeline().is_err());
        assert!(c.pipeline_any_width().is_ok());
        let f = RunConfig {
            float_inference: true,
            ..c
        };
        assert!(f.pipeline().is_ok());
    }

    #[test]
    fn default_grid_cells() {
        let cells = SweepGrid::default().cells().unwrap();
        assert_eq!(cells.len(), 5 + 4 + 3);
        assert_eq!(cells[4], SweepCell { hidden: 20, n_bl: 9 });
        assert_eq!(cells.last().unwrap().l_eff(), 200);
        let empty = SweepGrid {
            hidden: vec![],
            ..Default::default()
        };
        assert!(empty.cells().is_err());
    }
}
