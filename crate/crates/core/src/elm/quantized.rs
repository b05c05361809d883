//! Inference through the fixed-point datapath: every weight, input and
//! activation is a datapath word and every neuron is a chain of MACs.

use super::{occ_error, ElmModel, Mode};
use crate::error::{Error, Result};
use crate::fixedpoint::{mac, quantize, relu_fixed, FixedFormat, FixedValue};

#[derive(Debug, Clone)]
pub struct QuantizedElm {
    fmt: FixedFormat,
    mode: Mode,
    target: f64,
    input_dim: usize,
    /// Row-major `hidden x input_dim`.
    weights: Vec<FixedValue>,
    bias: Vec<FixedValue>,
    /// Row-major `out_dim x hidden`.
    beta: Vec<FixedValue>,
    hidden: usize,
    out_dim: usize,
}

impl QuantizedElm {
    pub fn new(model: &ElmModel, fmt: FixedFormat) -> Result<Self> {
        let beta = model.beta().ok_or(Error::UninitializedBeta)?;
        let (hidden, input_dim) = (model.hidden(), model.input_dim());
        let q = |v: f64| quantize(v, fmt);
        let mut weights = Vec::with_capacity(hidden * input_dim);
        for j in 0..hidden {
            for i in 0..input_dim {
                weights.push(q(model.weights()[(j, i)])?);
            }
        }
        let bias = model.bias().iter().map(|&b| q(b)).collect::<Result<_>>()?;
        let mut qbeta = Vec::with_capacity(beta.len());
        for k in 0..beta.nrows() {
            for j in 0..hidden {
                qbeta.push(q(beta[(k, j)])?);
            }
        }
        Ok(QuantizedElm {
            fmt,
            mode: model.mode(),
            target: model.target(),
            input_dim,
            weights,
            bias,
            beta: qbeta,
            hidden,
            out_dim: beta.nrows(),
        })
    }

    pub fn format(&self) -> FixedFormat {
        self.fmt
    }

    pub fn quantize_input(&self, x: &[f64]) -> Result<Vec<FixedValue>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        x.iter().map(|&v| quantize(v, self.fmt)).collect()
    }

    /// Hidden layer: the accumulator starts at the bias word.
    pub fn hidden_forward(&self, x: &[FixedValue]) -> Result<Vec<FixedValue>> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.weights[j * self.input_dim..(j + 1) * self.input_dim];
                let acc = row.iter().zip(x).try_fold(self.bias[j], |acc, (&w, &xi)| mac(acc, w, xi))?;
                Ok(relu_fixed(acc))
            })
            .collect()
    }

    pub fn output_forward(&self, h: &[FixedValue]) -> Result<Vec<FixedValue>> {
        (0..self.out_dim)
            .map(|k| {
                let row = &self.beta[k * self.hidden..(k + 1) * self.hidden];
                row.iter()
                    .zip(h)
                    .try_fold(FixedValue::zero(self.fmt), |acc, (&b, &hj)| mac(acc, b, hj))
            })
            .collect()
    }

    /// Dequantized network output.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let qx = self.quantize_input(x)?;
        let y = self.output_forward(&self.hidden_forward(&qx)?)?;
        Ok(y.into_iter().map(FixedValue::to_f64).collect())
    }

    /// Error of the datapath output against the quantized input, as the
    /// hardware would see it.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let qx: Vec<f64> = self.quantize_input(x)?.into_iter().map(FixedValue::to_f64).collect();
        let y = self.forward(x)?;
        Ok(occ_error(self.mode, self.target, &qx, &y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elm::opium::{opium_init, opium_step, OpiumConfig};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn hand_example_matches_float() {
        let mut m = ElmModel::with_layer(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_element(1, 0.5),
            Mode::Boundary,
        )
        .unwrap();
        m.set_beta(DMatrix::from_element(1, 1, 0.5)).unwrap();
        let q = QuantizedElm::new(&m, FixedFormat::with_default_split(16).unwrap()).unwrap();
        assert_eq!(q.forward(&[2.0, 1.0]).unwrap(), vec![0.75]);
        assert_eq!(q.score(&[2.0, 1.0]).unwrap(), 0.25);
    }

    #[test]
    fn sixteen_bit_tracks_float() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Vec<f64>> = (0..600)
            .map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut m = ElmModel::new(0x7A11, 20, 5, Mode::Boundary).unwrap();
        let mut s = opium_init(&inputs[..20], &mut m, &OpiumConfig::default()).unwrap();
        for x in &inputs[20..400] {
            opium_step(&mut s, &mut m, x).unwrap();
        }
        let q16 = QuantizedElm::new(&m, FixedFormat::with_default_split(16).unwrap()).unwrap();
        let q8 = QuantizedElm::new(&m, FixedFormat::with_default_split(8).unwrap()).unwrap();
        let (mut e16, mut e8) = (0.0, 0.0);
        for x in &inputs[400..] {
            let f = m.score(x).unwrap();
            e16 += (q16.score(x).unwrap() - f).abs();
            e8 += (q8.score(x).unwrap() - f).abs();
        }
        assert!(e16 < e8);
        assert!(e16 / 200.0 < 0.02, "mean 16-bit deviation {}", e16 / 200.0);
    }
}
