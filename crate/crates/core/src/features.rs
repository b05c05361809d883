//! Time-domain features of a vibration window and their z-score scaling.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ingest::SampleWindow;

/// Number of features per window.
pub const FEATURE_DIM: usize = 5;

/// Column names, in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = ["rms", "kurtosis", "peak_to_peak", "crest", "skewness"];

/// `[RMS, kurtosis, peak-to-peak, crest factor, skewness]` of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
    pub timestamp: u64,
}

impl FeatureVector {
    pub fn new(values: [f64; FEATURE_DIM], timestamp: u64) -> Self {
        FeatureVector { values, timestamp }
    }

    pub fn rms(&self) -> f64 {
        self.values[0]
    }
    pub fn kurtosis(&self) -> f64 {
        self.values[1]
    }
    pub fn peak_to_peak(&self) -> f64 {
        self.values[2]
    }
    pub fn crest(&self) -> f64 {
        self.values[3]
    }
    pub fn skewness(&self) -> f64 {
        self.values[4]
    }
}

/// Computes the five features of a raw window. Moments use the population
/// convention and kurtosis is non-excess (Gaussian noise gives 3).
pub fn extract(window: &SampleWindow) -> Result<FeatureVector> {
    extract_samples(&window.samples).map(|values| FeatureVector::new(values, window.timestamp))
}

pub fn extract_samples(x: &[f64]) -> Result<[f64; FEATURE_DIM]> {
    let n = x.len();
    if n < 4 {
        return Err(Error::TooFewSamples(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("window samples"));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4, mut sq) = (0.0, 0.0, 0.0, 0.0);
    let (mut lo, mut hi, mut peak) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &v in x {
        let c = v - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
        sq += v * v;
        lo = lo.min(v);
        hi = hi.max(v);
        peak = peak.max(v.abs());
    }
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    // A constant window leaves only rounding noise in m2.
    if m2 <= 1e-24 * (sq / nf) || m2 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let rms = (sq / nf).sqrt();
    Ok([
        rms,
        m4 / (m2 * m2),
        hi - lo,
        peak / rms,
        m3 / m2.powf(1.5),
    ])
}

/// Per-feature z-score statistics fitted on the training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
    pub count: usize,
}

impl Normalizer {
    /// Fits mean and sample standard deviation (n-1 denominator).
    pub fn fit(features: &[FeatureVector]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: n });
        }
        let mut mean = [0.0; FEATURE_DIM];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut std = [0.0; FEATURE_DIM];
        for f in features {
            for i in 0..FEATURE_DIM {
                std[i] += (f.values[i] - mean[i]).powi(2);
            }
        }
        for (i, s) in std.iter_mut().enumerate() {
            *s = (*s / (n - 1) as f64).sqrt();
            if !(*s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateVariance(i));
            }
        }
        Ok(Normalizer { mean, std, count: n })
    }

    pub fn apply(&self, f: &FeatureVector) -> Result<FeatureVector> {
        if self.count == 0 {
            return Err(Error::UnfittedNormalizer);
        }
        let mut values = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            values[i] = (f.values[i] - self.mean[i]) / self.std[i];
        }
        Ok(FeatureVector::new(values, f.timestamp))
    }

    pub fn invert(&self, f: &FeatureVector) -> Result<FeatureVector> {
        if self.count == 0 {
            return Err(Error::UnfittedNormalizer);
        }
        let mut values = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            values[i] = f.values[i] * self.std[i] + self.mean[i];
        }
        Ok(FeatureVector::new(values, f.timestamp))
    }
}

pub fn fit_normalizer(features: &[FeatureVector]) -> Result<Normalizer> {
    Normalizer::fit(features)
}

pub fn apply_normalizer(n: &Normalizer, f: &FeatureVector) -> Result<FeatureVector> {
    n.apply(f)
}

/// Feature dump: header plus one row per window.
pub fn features_csv(bearing_id: &str, features: &[FeatureVector]) -> String {
    let mut out = String::from("timestamp,bearing_id");
    for name in FEATURE_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for f in features {
        let _ = write!(out, "{},{}", f.timestamp, bearing_id);
        for v in f.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alternating_square_wave() {
        let f = extract_samples(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(f, [1.0, 1.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn hand_computed_asymmetric_window() {
        // x = [0, 0, 0, 4]: mean 1, central moments m2 = 3, m3 = 6, m4 = 21.
        let f = extract_samples(&[0.0, 0.0, 0.0, 4.0]).unwrap();
        assert!((f[0] - 2.0).abs() < 1e-15);
        assert!((f[1] - 21.0 / 9.0).abs() < 1e-12);
        assert_eq!(f[2], 4.0);
        assert!((f[3] - 2.0).abs() < 1e-15);
        assert!((f[4] - 6.0 / 3.0f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_windows() {
        assert!(matches!(extract_samples(&[2.5; 4]), Err(Error::ZeroVariance)));
        assert!(matches!(extract_samples(&[0.1; 1000]), Err(Error::ZeroVariance)));
        assert!(matches!(extract_samples(&[1.0, 2.0, 3.0]), Err(Error::TooFewSamples(3))));
    }

    #[test]
    fn normalizer_fit_values() {
        let a = FeatureVector::new([0.0, 1.0, 2.0, 3.0, 4.0], 0);
        let b = FeatureVector::new([2.0, 3.0, 4.0, 5.0, 6.0], 1);
        let n = Normalizer::fit(&[a, b]).unwrap();
        assert_eq!(n.mean[0], 1.0);
        assert!((n.std[0] - 2f64.sqrt()).abs() < 1e-15);
        let z = n.apply(&FeatureVector::new(n.mean, 0)).unwrap();
        assert_eq!(z.values, [0.0; 5]);
        let mut plus = n.mean;
        for i in 0..5 {
            plus[i] += n.std[i];
        }
        let z = n.apply(&FeatureVector::new(plus, 0)).unwrap();
        for v in z.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_degenerate_and_unfitted() {
        let a = FeatureVector::new([1.0; 5], 0);
        assert!(matches!(Normalizer::fit(&[a, a, a]), Err(Error::DegenerateVariance(0))));
        assert!(Normalizer::fit(&[a]).is_err());
        let empty = Normalizer {
            mean: [0.0; 5],
            std: [1.0; 5],
            count: 0,
        };
        assert!(matches!(empty.apply(&a), Err(Error::UnfittedNormalizer)));
    }

    #[test]
    fn normalized_training_set_is_standard() {
        let feats: Vec<_> = (0..50)
            .map(|i| {
                let t = i as f64;
                FeatureVector::new([t.sin(), t.cos() * 3.0, t * 0.1, (t * 0.7).sin() + 2.0, t.sqrt()], i)
            })
            .collect();
        let n = Normalizer::fit(&feats).unwrap();
        let z: Vec<_> = feats.iter().map(|f| n.apply(f).unwrap()).collect();
        let refit = Normalizer::fit(&z).unwrap();
        for i in 0..5 {
            assert!(refit.mean[i].abs() < 1e-12);
            assert!((refit.std[i] - 1.0).abs() < 1e-12);
        }
        for (f, zf) in feats.iter().zip(&z) {
            let back = n.invert(zf).unwrap();
            for i in 0..5 {
                assert!((back.values[i] - f.values[i]).abs() < 1e-12);
            }
        }
    }

    fn window() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 8..64)
            .prop_filter("non-degenerate", |v| extract_samples(v).is_ok())
    }

    fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
    }

    proptest! {
        #[test]
        fn mirror_symmetry(x in window()) {
            let f = extract_samples(&x).unwrap();
            let m: Vec<f64> = x.iter().map(|v| -v).collect();
            let g = extract_samples(&m).unwrap();
            for i in 0..4 {
                prop_assert!(rel_eq(f[i], g[i], 1e-9));
            }
            prop_assert!((f[4] + g[4]).abs() <= 1e-9 * f[4].abs().max(1.0));
        }

        #[test]
        fn scale_equivariance(x in window(), k in 0.01f64..100.0) {
            let f = extract_samples(&x).unwrap();
            let s: Vec<f64> = x.iter().map(|v| v * k).collect();
            let g = extract_samples(&s).unwrap();
            prop_assert!(rel_eq(g[0], k * f[0], 1e-9));
            prop_assert!(rel_eq(g[2], k * f[2], 1e-9));
            prop_assert!(rel_eq(g[1], f[1], 1e-9));
            prop_assert!(rel_eq(g[3], f[3], 1e-9));
            prop_assert!((g[4] - f[4]).abs() <= 1e-9 * f[4].abs().max(1.0));
        }

        #[test]
        fn shift_invariance(x in window(), c in -5.0f64..5.0) {
            let f = extract_samples(&x).unwrap();
            let s: Vec<f64> = x.iter().map(|v| v + c).collect();
            let g = extract_samples(&s).unwrap();
            prop_assert!((g[1] - f[1]).abs() <= 1e-6 * f[1].abs().max(1.0));
            prop_assert!((g[2] - f[2]).abs() <= 1e-9 * f[2].max(1.0));
            prop_assert!((g[4] - f[4]).abs() <= 1e-6 * f[4].abs().max(1.0));
        }

        #[test]
        fn crest_at_least_one(x in window()) {
            let f = extract_samples(&x).unwrap();
            prop_assert!(f[3] >= 1.0 - 1e-12);
            prop_assert!(f[0] >= 0.0 && f[2] >= 0.0);
        }
    }
}
