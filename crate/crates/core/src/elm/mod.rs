//! Single extreme learning machine base learner.
//!
//! The input layer is fixed and regenerated from a PRBS seed; hidden units
//! are ReLU; the output layer is linear. Only the output weights are
//! learned, either online ([`opium`]) or in one batch solve.

pub mod opium;
pub mod prbs;
pub mod quantized;

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use opium::{batch_solve, opium_init, opium_update, BatchDesign, OpiumConfig, OpiumState};
pub use prbs::{prbs_weights, Prbs16};
pub use quantized::QuantizedElm;

/// One-class training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single output trained to a constant target.
    #[default]
    Boundary,
    /// Output reproduces the input.
    Reconstruction,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Boundary => "boundary",
            Mode::Reconstruction => "reconstruction",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary" => Ok(Mode::Boundary),
            "reconstruction" => Ok(Mode::Reconstruction),
            other => Err(Error::Parse(format!("unknown mode `{other}`"))),
        }
    }
}

/// Default boundary-mode target.
pub const BOUNDARY_TARGET: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    hidden: usize,
    input_dim: usize,
    mode: Mode,
    seed: u16,
    /// Boundary-mode target value.
    target: f64,
    weights: DMatrix<f64>,
    bias: DVector<f64>,
    /// `out_dim x hidden`; `None` until bootstrapped.
    beta: Option<DMatrix<f64>>,
}

impl ElmModel {
    /// Builds the random input layer from `seed`. Output weights start unset.
    pub fn new(seed: u16, hidden: usize, input_dim: usize, mode: Mode) -> Result<Self> {
        if hidden == 0 || input_dim == 0 {
            return Err(Error::Config("hidden and input dimensions must be positive".into()));
        }
        let (weights, bias) = prbs_weights(seed, hidden, input_dim)?;
        Ok(ElmModel {
            hidden,
            input_dim,
            mode,
            seed,
            target: BOUNDARY_TARGET,
            weights,
            bias,
            beta: None,
        })
    }

    /// Model with an explicit input layer, bypassing the PRBS. Used for hand
    /// calculations and tests; such a model cannot be serialized faithfully.
    pub fn with_layer(weights: DMatrix<f64>, bias: DVector<f64>, mode: Mode) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.nrows(),
                got: bias.len(),
            });
        }
        Ok(ElmModel {
            hidden: weights.nrows(),
            input_dim: weights.ncols(),
            mode,
            seed: 0,
            target: BOUNDARY_TARGET,
            weights,
            bias,
            beta: None,
        })
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target = target;
        self
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn seed(&self) -> u16 {
        self.seed
    }
    pub fn target(&self) -> f64 {
        self.target
    }
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }
    pub fn beta(&self) -> Option<&DMatrix<f64>> {
        self.beta.as_ref()
    }

    pub fn out_dim(&self) -> usize {
        match self.mode {
            Mode::Boundary => 1,
            Mode::Reconstruction => self.input_dim,
        }
    }

    pub fn set_beta(&mut self, beta: DMatrix<f64>) -> Result<()> {
        if beta.shape() != (self.out_dim(), self.hidden) {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim() * self.hidden,
                got: beta.len(),
            });
        }
        self.beta = Some(beta);
        Ok(())
    }

    pub(crate) fn beta_mut(&mut self) -> Result<&mut DMatrix<f64>> {
        self.beta.as_mut().ok_or(Error::UninitializedBeta)
    }

    /// Training target for input `x`.
    pub fn target_for(&self, x: &[f64]) -> DVector<f64> {
        match self.mode {
            Mode::Boundary => DVector::from_element(1, self.target),
            Mode::Reconstruction => DVector::from_column_slice(x),
        }
    }

    /// `h_j = relu(sum_i W_ji x_i + b_j)`.
    pub fn hidden_forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        let mut h = &self.weights * x + &self.bias;
        h.apply(|v| *v = v.max(0.0));
        Ok(h)
    }

    /// Linear readout `beta * h`.
    pub fn output_forward(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        let beta = self.beta.as_ref().ok_or(Error::UninitializedBeta)?;
        if h.len() != self.hidden {
            return Err(Error::DimensionMismatch {
                expected: self.hidden,
                got: h.len(),
            });
        }
        Ok(beta * h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.output_forward(&self.hidden_forward(x)?)
    }

    /// One-class error of an output: distance from the target in boundary
    /// mode, RMS reconstruction error otherwise.
    pub fn occ_error(&self, x: &[f64], output: &[f64]) -> f64 {
        occ_error(self.mode, self.target, x, output)
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let y = self.forward(x)?;
        Ok(self.occ_error(x, y.as_slice()))
    }

    /// Versioned text record. The input layer is not stored: it is
    /// regenerated from the seed on load.
    pub fn to_record(&self, c: f64) -> Result<String> {
        let beta = self.beta.as_ref().ok_or(Error::UninitializedBeta)?;
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "hidden {}", self.hidden);
        let _ = writeln!(out, "input_dim {}", self.input_dim);
        let _ = writeln!(out, "mode {}", self.mode.as_str());
        let _ = writeln!(out, "target {:?}", self.target);
        let _ = writeln!(out, "c {c:?}");
        let _ = writeln!(out, "beta {} {}", beta.nrows(), beta.ncols());
        for r in 0..beta.nrows() {
            let row: Vec<String> = (0..beta.ncols()).map(|c| format!("{:?}", beta[(r, c)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        Ok(out)
    }

    /// Parses a record produced by [`ElmModel::to_record`], returning the
    /// model and its OPIUM constant.
    pub fn from_record(text: &str) -> Result<(Self, f64)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty model record".into()))?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [MODEL_MAGIC, v] if *v == MODEL_VERSION.to_string() => {}
            _ => return Err(Error::Parse(format!("bad model header `{header}`"))),
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{name}`")))?;
            let rest = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::Parse(format!("expected `{name}`, got `{line}`")))?;
            Ok(rest.trim().to_owned())
        };
        let seed: u16 = parse_num(&field("seed")?)?;
        let hidden: usize = parse_num(&field("hidden")?)?;
        let input_dim: usize = parse_num(&field("input_dim")?)?;
        let mode: Mode = field("mode")?.parse()?;
        let target: f64 = parse_num(&field("target")?)?;
        let c: f64 = parse_num(&field("c")?)?;
        let shape = field("beta")?;
        let dims: Vec<usize> = shape.split_whitespace().map(parse_num).collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Parse(format!("bad beta shape `{shape}`")));
        };
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated beta".into()))?;
            let row: Vec<f64> = line.split_whitespace().map(parse_num).collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(Error::Parse(format!("beta row has {} values, expected {cols}", row.len())));
            }
            values.extend(row);
        }
        let mut model = ElmModel::new(seed, hidden, input_dim, mode)?.with_target(target);
        model.set_beta(DMatrix::from_row_slice(rows, cols, &values))?;
        Ok((model, c))
    }
}

const MODEL_MAGIC: &str = "adepos-model";
const MODEL_VERSION: u32 = 1;

pub(crate) fn parse_num<T: FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

pub fn occ_error(mode: Mode, target: f64, x: &[f64], output: &[f64]) -> f64 {
    match mode {
        Mode::Boundary => (output[0] - target).abs(),
        Mode::Reconstruction => {
            let sq: f64 = output.iter().zip(x).map(|(y, x)| (y - x).powi(2)).sum();
            (sq / x.len() as f64).sqrt()
        }
    }
}
