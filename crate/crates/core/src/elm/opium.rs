//! Online pseudo-inverse update (OPIUM) of the output weights, and the
//! batch ridge solve it converges to.
//!
//! Starting from `theta = c I`, each sample `(h, t)` applies
//!
//! ```text
//! eta   = theta h / (1 + h' theta h)
//! beta  = beta + (t - beta h) eta'
//! theta = theta - eta (theta h)'
//! ```
//!
//! which is recursive least squares: after any sample sequence `beta` equals
//! the ridge solution `(H'H + I/c)^-1 H'T` over every sample seen.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::ElmModel;
use crate::error::{Error, Result};

/// Hidden-layer outputs and targets of a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDesign {
    /// `N x L`.
    pub h: DMatrix<f64>,
    /// `N x out_dim`.
    pub t: DMatrix<f64>,
}

impl BatchDesign {
    pub fn new(h: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        if h.nrows() != t.nrows() {
            return Err(Error::DimensionMismatch {
                expected: h.nrows(),
                got: t.nrows(),
            });
        }
        Ok(BatchDesign { h, t })
    }

    /// Runs `inputs` through the model's hidden layer.
    pub fn from_inputs<X: AsRef<[f64]>>(model: &ElmModel, inputs: &[X]) -> Result<Self> {
        let n = inputs.len();
        let mut h = DMatrix::zeros(n, model.hidden());
        let mut t = DMatrix::zeros(n, model.out_dim());
        for (r, x) in inputs.iter().enumerate() {
            let x = x.as_ref();
            h.set_row(r, &model.hidden_forward(x)?.transpose());
            t.set_row(r, &model.target_for(x).transpose());
        }
        Ok(BatchDesign { h, t })
    }

    pub fn samples(&self) -> usize {
        self.h.nrows()
    }

    /// `H'H + lambda I`.
    fn normal_matrix(&self, lambda: f64) -> DMatrix<f64> {
        let mut a = self.h.tr_mul(&self.h);
        for i in 0..a.nrows() {
            a[(i, i)] += lambda;
        }
        a
    }
}

/// Ridge least squares `beta' = (H'H + lambda I)^-1 H'T`, returned as
/// `out_dim x L`. With `lambda = 0` and full column rank this is the
/// pseudo-inverse solution `H^+ T`.
pub fn batch_solve(design: &BatchDesign, lambda: f64) -> Result<DMatrix<f64>> {
    if design.samples() == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let chol = design.normal_matrix(lambda).cholesky().ok_or(Error::Singular)?;
    let rhs = design.h.tr_mul(&design.t);
    Ok(chol.solve(&rhs).transpose())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpiumConfig {
    /// `theta_0 = c I`; the implied ridge penalty is `1/c`.
    pub c: f64,
    /// Bootstrap sample count; `None` uses the hidden size.
    pub bootstrap: Option<usize>,
    /// Number of recent steps averaged by [`OpiumState::converged`].
    pub window: usize,
    /// Mean relative weight change below which training has converged.
    pub epsilon: f64,
}

impl Default for OpiumConfig {
    fn default() -> Self {
        OpiumConfig {
            c: 100.0,
            bootstrap: None,
            window: 50,
            epsilon: 1e-3,
        }
    }
}

impl OpiumConfig {
    pub fn bootstrap_size(&self, hidden: usize) -> usize {
        self.bootstrap.unwrap_or(hidden)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpiumState {
    theta: DMatrix<f64>,
    c: f64,
    bootstrap: usize,
    samples_seen: usize,
    window: usize,
    epsilon: f64,
    /// Relative Frobenius change of beta for the last `window` updates.
    history: VecDeque<f64>,
}

impl OpiumState {
    /// `theta_0 = c I` before any sample has been seen.
    pub fn prior(hidden: usize, config: &OpiumConfig) -> Result<Self> {
        if !(config.c > 0.0 && config.c.is_finite()) {
            return Err(Error::Config(format!("c must be > 0, got {}", config.c)));
        }
        if config.window == 0 {
            return Err(Error::Config("convergence window must be positive".into()));
        }
        Ok(OpiumState {
            theta: DMatrix::from_diagonal_element(hidden, hidden, config.c),
            c: config.c,
            bootstrap: 0,
            samples_seen: 0,
            window: config.window,
            epsilon: config.epsilon,
            history: VecDeque::with_capacity(config.window),
        })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn lambda(&self) -> f64 {
        1.0 / self.c
    }
    pub fn bootstrap_size(&self) -> usize {
        self.bootstrap
    }
    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }
    pub fn updates(&self) -> usize {
        self.samples_seen - self.bootstrap
    }

    /// Mean relative weight change over the last `window` updates, or `None`
    /// while fewer updates have been recorded.
    pub fn recent_change(&self) -> Option<f64> {
        (self.history.len() >= self.window)
            .then(|| self.history.iter().sum::<f64>() / self.history.len() as f64)
    }

    pub fn converged(&self) -> bool {
        self.recent_change().is_some_and(|m| m < self.epsilon)
    }
}

/// Bootstraps the learner from `inputs` (`N_0 >= L` samples).
///
/// The initial weights come from the ridge solve with `lambda = 1/c`, and
/// `theta` becomes `(H_0'H_0 + I/c)^-1`: exactly the state the recursion
/// reaches after feeding the bootstrap samples one by one from
/// `theta_0 = c I`, so later updates keep the ridge equivalence over the
/// whole history.
pub fn opium_init<X: AsRef<[f64]>>(
    inputs: &[X],
    model: &mut ElmModel,
    config: &OpiumConfig,
) -> Result<OpiumState> {
    let hidden = model.hidden();
    if inputs.len() < hidden {
        return Err(Error::InsufficientSamples {
            needed: hidden,
            got: inputs.len(),
        });
    }
    let mut state = OpiumState::prior(hidden, config)?;
    let design = BatchDesign::from_inputs(model, inputs)?;
    let normal = design.normal_matrix(state.lambda());
    let chol = normal.cholesky().ok_or(Error::Singular)?;
    let beta = chol.solve(&design.h.tr_mul(&design.t)).transpose();
    let mut theta = chol.inverse();
    symmetrize(&mut theta);
    if beta.iter().chain(theta.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Diverged);
    }
    model.set_beta(beta)?;
    state.theta = theta;
    state.bootstrap = inputs.len();
    state.samples_seen = inputs.len();
    Ok(state)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// One recursive update with hidden vector `h` and target `target`.
pub fn opium_update(
    state: &mut OpiumState,
    model: &mut ElmModel,
    h: &DVector<f64>,
    target: &DVector<f64>,
) -> Result<()> {
    if h.len() != state.theta.nrows() {
        return Err(Error::DimensionMismatch {
            expected: state.theta.nrows(),
            got: h.len(),
        });
    }
    let beta = model.beta_mut()?;
    if target.len() != beta.nrows() {
        return Err(Error::DimensionMismatch {
            expected: beta.nrows(),
            got: target.len(),
        });
    }
    let theta_h = &state.theta * h;
    let denom = 1.0 + h.dot(&theta_h);
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::Diverged);
    }
    let eta = &theta_h / denom;
    let residual = target - &*beta * h;
    let delta = &residual * eta.transpose();
    // theta_h theta_h' is exactly symmetric, so theta stays symmetric.
    let correction = (&theta_h * theta_h.transpose()) / denom;
    if delta.iter().chain(correction.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Diverged);
    }
    *beta += &delta;
    let norm = beta.norm();
    let rel = if norm > 0.0 { delta.norm() / norm } else { delta.norm() };
    state.theta -= correction;
    state.samples_seen += 1;
    if state.history.len() == state.window {
        state.history.pop_front();
    }
    state.history.push_back(rel);
    Ok(())
}

/// Feeds one input through the hidden layer and updates.
pub fn opium_step(state: &mut OpiumState, model: &mut ElmModel, x: &[f64]) -> Result<()> {
    let h = model.hidden_forward(x)?;
    let t = model.target_for(x);
    opium_update(state, model, &h, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elm::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain Gaussian elimination with partial pivoting; independent of
    /// nalgebra's factorizations.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let n = a.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in (col + 1)..n {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                for k in 0..b[r].len() {
                    b[r][k] -= f * b[col][k];
                }
            }
        }
        let m = b[0].len();
        let mut x = vec![vec![0.0; m]; n];
        for r in (0..n).rev() {
            for k in 0..m {
                let s: f64 = ((r + 1)..n).map(|j| a[r][j] * x[j][k]).sum();
                x[r][k] = (b[r][k] - s) / a[r][r];
            }
        }
        x
    }

    /// Dense ridge solution `out_dim x L` via normal equations.
    fn ridge_oracle(h: &[Vec<f64>], t: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
        let l = h[0].len();
        let m = t[0].len();
        let mut a = vec![vec![0.0; l]; l];
        let mut b = vec![vec![0.0; m]; l];
        for (hr, tr) in h.iter().zip(t) {
            for i in 0..l {
                for j in 0..l {
                    a[i][j] += hr[i] * hr[j];
                }
                for k in 0..m {
                    b[i][k] += hr[i] * tr[k];
                }
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += lambda;
        }
        let x = gauss_solve(a, b);
        (0..m).map(|k| (0..l).map(|i| x[i][k]).collect()).collect()
    }

    fn random_inputs(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    fn rel_frobenius(a: &DMatrix<f64>, b: &[Vec<f64>]) -> f64 {
        let mut diff = 0.0;
        let mut norm = 0.0;
        for (r, row) in b.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                diff += (a[(r, c)] - v).powi(2);
                norm += v * v;
            }
        }
        (diff / norm).sqrt()
    }

    #[test]
    fn batch_identity_design() {
        let t = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = BatchDesign::new(DMatrix::identity(3, 3), t.clone()).unwrap();
        assert_eq!(batch_solve(&d, 0.0).unwrap(), t.transpose());
    }

    #[test]
    fn batch_zero_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = DMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
        let d = BatchDesign::new(h, DMatrix::zeros(8, 2)).unwrap();
        for lambda in [0.0, 0.1, 10.0] {
            assert_eq!(batch_solve(&d, lambda).unwrap(), DMatrix::zeros(2, 4));
        }
    }

    #[test]
    fn batch_singular_at_zero_lambda() {
        let d = BatchDesign::new(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)).unwrap();
        assert!(matches!(batch_solve(&d, 0.0), Err(Error::Singular)));
        assert!(batch_solve(&d, 0.5).is_ok());
        assert!(BatchDesign::new(DMatrix::zeros(3, 2), DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn batch_normal_equation_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = DMatrix::from_fn(20, 5, |_, _| rng.random_range(-1.0..1.0));
        let t = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let d = BatchDesign::new(h.clone(), t.clone()).unwrap();
        let beta = batch_solve(&d, 0.0).unwrap();
        let residual = h.tr_mul(&t) - h.tr_mul(&h) * beta.transpose();
        assert!(residual.norm() < 1e-9);
    }

    #[test]
    fn prior_is_scaled_identity() {
        for c in [0.5, 1.0, 100.0] {
            let cfg = OpiumConfig { c, ..Default::default() };
            let s = OpiumState::prior(4, &cfg).unwrap();
            assert_eq!(s.theta(), &DMatrix::from_diagonal_element(4, 4, c));
        }
        let bad = OpiumConfig { c: 0.0, ..Default::default() };
        assert!(OpiumState::prior(4, &bad).is_err());
    }

    #[test]
    fn init_identity_design_gives_ones() {
        // x_i = e_i with W = I, b = 0 makes H = I; a huge c approaches the
        // unregularized solution beta = 1.
        let mut m = ElmModel::with_layer(DMatrix::identity(3, 3), DVector::zeros(3), Mode::Boundary).unwrap();
        let inputs: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let cfg = OpiumConfig { c: 1e12, ..Default::default() };
        opium_init(&inputs, &mut m, &cfg).unwrap();
        for v in m.beta().unwrap().iter() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn init_requires_enough_samples() {
        let mut m = ElmModel::new(3, 10, 5, Mode::Boundary).unwrap();
        let inputs = random_inputs(3, 9, 5);
        assert!(matches!(
            opium_init(&inputs, &mut m, &OpiumConfig::default()),
            Err(Error::InsufficientSamples { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn init_matches_dense_ridge() {
        let mut m = ElmModel::new(0x51ED, 10, 5, Mode::Boundary).unwrap();
        let inputs = random_inputs(4, 10, 5);
        let cfg = OpiumConfig::default();
        opium_init(&inputs, &mut m, &cfg).unwrap();
        let h: Vec<Vec<f64>> = inputs.iter().map(|x| m.hidden_forward(x).unwrap().as_slice().to_vec()).collect();
        let t = vec![vec![1.0]; 10];
        let oracle = ridge_oracle(&h, &t, 1.0 / cfg.c);
        assert!(rel_frobenius(m.beta().unwrap(), &oracle) < 1e-9);
    }

    #[test]
    fn init_theta_matches_recursion_from_prior() {
        let inputs = random_inputs(5, 12, 5);
        let cfg = OpiumConfig { c: 10.0, ..Default::default() };
        let mut a = ElmModel::new(0x0F0F, 6, 5, Mode::Reconstruction).unwrap();
        let state = opium_init(&inputs, &mut a, &cfg).unwrap();

        let mut b = a.clone();
        b.set_beta(DMatrix::zeros(5, 6)).unwrap();
        let mut rec = OpiumState::prior(6, &cfg).unwrap();
        for x in &inputs {
            opium_step(&mut rec, &mut b, x).unwrap();
        }
        assert!((state.theta() - rec.theta()).norm() < 1e-9 * state.theta().norm());
        assert!((a.beta().unwrap() - b.beta().unwrap()).norm() < 1e-9 * a.beta().unwrap().norm());
    }

    #[test]
    fn zero_hidden_leaves_state_unchanged() {
        let mut m = ElmModel::new(9, 4, 5, Mode::Boundary).unwrap();
        let mut s = opium_init(&random_inputs(6, 4, 5), &mut m, &OpiumConfig::default()).unwrap();
        let (beta, theta) = (m.beta().unwrap().clone(), s.theta().clone());
        opium_update(&mut s, &mut m, &DVector::zeros(4), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(m.beta().unwrap(), &beta);
        assert_eq!(s.theta(), &theta);
    }

    #[test]
    fn scalar_recursion_by_hand() {
        let mut m = ElmModel::with_layer(DMatrix::identity(1, 1), DVector::zeros(1), Mode::Boundary).unwrap();
        m.set_beta(DMatrix::zeros(1, 1)).unwrap();
        let cfg = OpiumConfig { c: 1.0, ..Default::default() };
        let mut s = OpiumState::prior(1, &cfg).unwrap();
        opium_update(&mut s, &mut m, &DVector::from_element(1, 1.0), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(m.beta().unwrap()[(0, 0)], 0.5);
        assert_eq!(s.theta()[(0, 0)], 0.5);
    }

    #[test]
    fn update_requires_beta() {
        let mut m = ElmModel::new(9, 2, 5, Mode::Boundary).unwrap();
        let mut s = OpiumState::prior(2, &OpiumConfig::default()).unwrap();
        assert!(matches!(
            opium_update(&mut s, &mut m, &DVector::zeros(2), &DVector::zeros(1)),
            Err(Error::UninitializedBeta)
        ));
    }

    #[test]
    fn streaming_matches_ridge_and_keeps_theta_spd() {
        let cfg = OpiumConfig::default();
        let inputs = random_inputs(7, 500, 5);
        let mut m = ElmModel::new(0x2468, 10, 5, Mode::Boundary).unwrap();
        let (boot, rest) = inputs.split_at(10);
        let mut s = opium_init(boot, &mut m, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for x in rest {
            opium_step(&mut s, &mut m, x).unwrap();
            let th = s.theta();
            assert!((th - th.transpose()).amax() < 1e-9);
            let probe = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
            assert!(probe.dot(&(th * &probe)) > 0.0);
        }
        let h: Vec<Vec<f64>> = inputs.iter().map(|x| m.hidden_forward(x).unwrap().as_slice().to_vec()).collect();
        let oracle = ridge_oracle(&h, &vec![vec![1.0]; 500], 1.0 / cfg.c);
        assert!(rel_frobenius(m.beta().unwrap(), &oracle) < 1e-6);
    }

    #[test]
    fn convergence_gate() {
        let cfg = OpiumConfig::default();
        let mut m = ElmModel::new(0x1357, 30, 5, Mode::Boundary).unwrap();
        let x = vec![0.3, -0.2, 0.5, 0.1, -0.4];
        let inputs = vec![x.clone(); 30];
        let mut s = opium_init(&inputs, &mut m, &cfg).unwrap();
        assert!(!s.converged());
        let mut at = None;
        for step in 1..=60 {
            opium_step(&mut s, &mut m, &x).unwrap();
            if step < cfg.window {
                assert!(!s.converged());
            }
            if s.converged() && at.is_none() {
                at = Some(step);
            }
        }
        assert!(at.is_some_and(|n| n <= 60), "not converged within 2L steps");
    }
}
