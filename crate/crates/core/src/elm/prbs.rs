//! 16-bit Fibonacci LFSR used to regenerate the random input layer from a
//! seed instead of storing it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Feedback taps of x^16 + x^15 + x^13 + x^4 + 1 (1-based bit positions).
pub const TAPS: [u32; 4] = [16, 15, 13, 4];

/// Period of a maximal-length 16-bit register.
pub const PERIOD: u32 = (1 << 16) - 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prbs16 {
    state: u16,
    words: u64,
}

impl Prbs16 {
    pub fn new(seed: u16) -> Result<Self> {
        if seed == 0 {
            return Err(Error::ZeroSeed);
        }
        Ok(Prbs16 { state: seed, words: 0 })
    }

    pub fn state(&self) -> u16 {
        self.state
    }

    pub fn words_emitted(&self) -> u64 {
        self.words
    }

    /// Clocks the register once and returns the new low bit.
    pub fn clock(&mut self) -> u16 {
        let s = self.state;
        let fb = TAPS.iter().fold(0, |acc, &t| acc ^ (s >> (t - 1))) & 1;
        self.state = (s << 1) | fb;
        fb
    }

    /// Clocks sixteen times so each word is made of fresh bits.
    pub fn next_word(&mut self) -> u16 {
        for _ in 0..16 {
            self.clock();
        }
        self.words += 1;
        self.state
    }

    /// Next word mapped to `[-1, 1)` as a signed Q15 value.
    pub fn next_weight(&mut self) -> f64 {
        self.next_word() as i16 as f64 / 32768.0
    }
}

/// Input weights (`hidden x input_dim`, row-major draw order) followed by
/// the `hidden` biases, all from one register.
pub fn prbs_weights(seed: u16, hidden: usize, input_dim: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut prbs = Prbs16::new(seed)?;
    let mut w = DMatrix::zeros(hidden, input_dim);
    for j in 0..hidden {
        for i in 0..input_dim {
            w[(j, i)] = prbs.next_weight();
        }
    }
    let b = DVector::from_fn(hidden, |_, _| prbs.next_weight());
    Ok((w, b))
}
