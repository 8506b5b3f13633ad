//! State-space model interface and the two bundled systems.
//!
//! A model supplies its transition / measurement / initial densities, exact
//! samplers, and analytic first and second derivatives of the log-densities
//! with respect to the state arguments. The iterative smoothing schemes
//! need those derivatives at every inner iteration, so they are exposed
//! analytically here; finite differences exist only in the oracle tests.
//!
//! Time indexing: steps run `k = 0..=n` with a measurement at every step
//! including `k = 0`; the transition density `f(x_k | x_{k-1})` is defined
//! for `k = 1..=n`, and `f(x_0)` is the initial prior.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_logpdf_prefactored, spd_cholesky};
use crate::rng::{purpose, substream};

/// Evaluable state-space model with analytic state derivatives.
///
/// `d_*` operations are gradients of the corresponding log-density and
/// `h_*` operations are the (negative, except for the mixed block) second
/// derivatives:
///
/// * `d_meas`        - `d/dx  log f(y_k | x_k)`
/// * `d_trans_out`   - `d/dx' log f(x' | x_{k-1})` in its first argument
/// * `d_trans_in`    - `d/dx  log f(x_k | x)` in its conditioning argument
/// * `d_init`        - `d/dx0 log f(x_0)`
/// * `h_meas`        - `-d2/dx dx^T  log f(y_k | x_k)`
/// * `h_trans_out`   - `-d2/dx' dx'^T log f(x' | x)`
/// * `h_trans_cross` - `d2/dx' dx^T log f(x' | x)`, the mixed block; for a
///   Gaussian transition with mean `m(x)` this is `Q^-1 dm/dx^T` and does
///   not depend on the realized next state
/// * `h_trans_in`    - `-d2/dx dx^T  log f(x' | x)`
/// * `h_init`        - `-d2/dx0 dx0^T log f(x_0)`
pub trait StateSpaceModel {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Largest valid step index `n`.
    fn horizon(&self) -> usize;

    fn initial_logpdf(&self, x0: &DVector<f64>) -> f64;
    /// `log f(x_next | x_prev)` for `1 <= k <= n`.
    fn transition_logpdf(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> f64;
    /// `log f(y | x)` for `0 <= k <= n`.
    fn measurement_logpdf(&self, k: usize, y: &DVector<f64>, x: &DVector<f64>) -> f64;

    fn sample_initial(&self, rng: &mut dyn RngCore) -> DVector<f64>;
    fn sample_transition(
        &self,
        k: usize,
        x_prev: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> DVector<f64>;
    fn sample_measurement(
        &self,
        k: usize,
        x: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> DVector<f64>;

    fn d_meas(&self, k: usize, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64>;
    fn d_trans_out(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> DVector<f64>;
    fn d_trans_in(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> DVector<f64>;
    fn d_init(&self, x0: &DVector<f64>) -> DVector<f64>;

    fn h_meas(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64>;
    fn h_trans_out(&self, k: usize) -> DMatrix<f64>;
    fn h_trans_cross(&self, k: usize, x_prev: &DVector<f64>) -> DMatrix<f64>;
    fn h_trans_in(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> DMatrix<f64>;
    fn h_init(&self) -> DMatrix<f64>;
}

fn check_transition_step(k: usize, n: usize) {
    assert!(k >= 1 && k <= n, "transition step {k} outside 1..={n}");
}

fn check_measurement_step(k: usize, n: usize) {
    assert!(k <= n, "measurement step {k} outside 0..={n}");
}

fn sample_mvn(mean: &DVector<f64>, chol_l: &DMatrix<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + chol_l * z
}

// ---------------------------------------------------------------------------
// Linear-Gaussian model
// ---------------------------------------------------------------------------

/// Linear system `x_k = F x_{k-1} + G u_k + v_k`, `y_k = H x_k + w_k` with
/// `v_k ~ N(0, Q)`, `w_k ~ N(0, R)` and `x_0 ~ N(mu, P_0)`.
///
/// Parameters are stored once and served through step-indexed accessors, so
/// a genuinely time-varying system can replace the accessors without
/// touching any consumer.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    horizon: usize,
    f: DMatrix<f64>,
    g: Option<DMatrix<f64>>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    mu: DVector<f64>,
    p0: DMatrix<f64>,
    /// Controls `u_k` for `k = 1..=n`, entry `k-1`; `None` means no control.
    controls: Option<Vec<DVector<f64>>>,
    q_inv: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    p0_inv: DMatrix<f64>,
    chol_q: Cholesky<f64, Dyn>,
    chol_r: Cholesky<f64, Dyn>,
    chol_p0: Cholesky<f64, Dyn>,
    hrh: DMatrix<f64>,
}

impl LinearGaussianModel {
    /// Validates shapes and positive definiteness, then precomputes the
    /// factorizations used by density evaluation and sampling.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        f: DMatrix<f64>,
        g: Option<DMatrix<f64>>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        mu: DVector<f64>,
        p0: DMatrix<f64>,
        controls: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        let p = f.nrows();
        if p == 0 || f.ncols() != p {
            return Err(Error::DimensionMismatch("F must be square and non-empty".into()));
        }
        let q_dim = h.nrows();
        if q_dim == 0 || h.ncols() != p {
            return Err(Error::DimensionMismatch("H must be q x p with q >= 1".into()));
        }
        if q.nrows() != p || q.ncols() != p {
            return Err(Error::DimensionMismatch("Q must be p x p".into()));
        }
        if r.nrows() != q_dim || r.ncols() != q_dim {
            return Err(Error::DimensionMismatch("R must be q x q".into()));
        }
        if mu.len() != p || p0.nrows() != p || p0.ncols() != p {
            return Err(Error::DimensionMismatch("mu/P0 must match the state dimension".into()));
        }
        if let Some(g) = &g {
            if g.nrows() != p {
                return Err(Error::DimensionMismatch("G must have p rows".into()));
            }
            let m = g.ncols();
            match &controls {
                None => {
                    return Err(Error::InvalidConfig(
                        "control matrix G given without a control sequence".into(),
                    ))
                }
                Some(us) => {
                    if us.len() != horizon {
                        return Err(Error::InvalidConfig(format!(
                            "control sequence has {} entries, expected horizon {}",
                            us.len(),
                            horizon
                        )));
                    }
                    if us.iter().any(|u| u.len() != m) {
                        return Err(Error::DimensionMismatch(
                            "control vectors must match the columns of G".into(),
                        ));
                    }
                }
            }
        } else if controls.is_some() {
            return Err(Error::InvalidConfig(
                "control sequence given without a control matrix G".into(),
            ));
        }
        let all_finite = f.iter().all(|v| v.is_finite())
            && h.iter().all(|v| v.is_finite())
            && q.iter().all(|v| v.is_finite())
            && r.iter().all(|v| v.is_finite())
            && mu.iter().all(|v| v.is_finite())
            && p0.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("model parameters must be finite".into()));
        }
        let sym_ok = |m: &DMatrix<f64>| (m - m.transpose()).abs().max() <= 1e-9 * (1.0 + m.abs().max());
        if !sym_ok(&q) || !sym_ok(&r) || !sym_ok(&p0) {
            return Err(Error::InvalidConfig("Q, R and P0 must be symmetric".into()));
        }

        let chol_q = spd_cholesky(&q, "Q")?;
        let chol_r = spd_cholesky(&r, "R")?;
        let chol_p0 = spd_cholesky(&p0, "P0")?;
        let q_inv = chol_q.inverse();
        let r_inv = chol_r.inverse();
        let p0_inv = chol_p0.inverse();
        let hrh = h.transpose() * &r_inv * &h;
        Ok(Self {
            horizon,
            f,
            g,
            h,
            q,
            r,
            mu,
            p0,
            controls,
            q_inv,
            r_inv,
            p0_inv,
            chol_q,
            chol_r,
            chol_p0,
            hrh,
        })
    }

    /// Three-state reference system used by the bundled linear study:
    /// weakly coupled damped dynamics observed through the noisy sum of the
    /// last two state components.
    pub fn benchmark_3d(horizon: usize) -> Self {
        let f = DMatrix::from_row_slice(
            3,
            3,
            &[0.66, -1.31, -1.11, 0.07, 0.73, -0.06, 0.00, 0.08, 0.80],
        );
        let h = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 1.0]);
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.2, 0.3, 0.5]));
        let r = DMatrix::from_row_slice(1, 1, &[0.1]);
        let mu = DVector::zeros(3);
        let p0 = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.3, 0.3, 0.3]));
        Self::new(horizon, f, None, h, q, r, mu, p0, None)
            .expect("reference parameters are well-formed")
    }

    /// Scalar system with all unit parameters; convenient for hand checks.
    pub fn scalar_unit(horizon: usize) -> Self {
        let one = DMatrix::from_row_slice(1, 1, &[1.0]);
        Self::new(
            horizon,
            one.clone(),
            None,
            one.clone(),
            one.clone(),
            one.clone(),
            DVector::zeros(1),
            one,
            None,
        )
        .expect("unit parameters are well-formed")
    }

    pub fn f_mat(&self, k: usize) -> &DMatrix<f64> {
        check_transition_step(k, self.horizon);
        &self.f
    }

    pub fn h_mat(&self, k: usize) -> &DMatrix<f64> {
        check_measurement_step(k, self.horizon);
        &self.h
    }

    pub fn q_mat(&self, k: usize) -> &DMatrix<f64> {
        check_transition_step(k, self.horizon);
        &self.q
    }

    pub fn q_inv(&self, k: usize) -> &DMatrix<f64> {
        check_transition_step(k, self.horizon);
        &self.q_inv
    }

    pub fn r_mat(&self, k: usize) -> &DMatrix<f64> {
        check_measurement_step(k, self.horizon);
        &self.r
    }

    pub fn r_inv(&self, k: usize) -> &DMatrix<f64> {
        check_measurement_step(k, self.horizon);
        &self.r_inv
    }

    pub fn initial_mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn initial_cov(&self) -> &DMatrix<f64> {
        &self.p0
    }

    pub fn initial_cov_inv(&self) -> &DMatrix<f64> {
        &self.p0_inv
    }

    /// `H^T R^-1 H`, the measurement information.
    pub fn meas_info(&self) -> &DMatrix<f64> {
        &self.hrh
    }

    /// `G u_k`, or zero when the system is uncontrolled.
    pub fn control_effect(&self, k: usize) -> DVector<f64> {
        check_transition_step(k, self.horizon);
        match (&self.g, &self.controls) {
            (Some(g), Some(us)) => g * &us[k - 1],
            _ => DVector::zeros(self.f.nrows()),
        }
    }

    /// Transition mean `F x_prev + G u_k`.
    pub fn transition_mean(&self, k: usize, x_prev: &DVector<f64>) -> DVector<f64> {
        &self.f * x_prev + self.control_effect(k)
    }
}

impl StateSpaceModel for LinearGaussianModel {
    fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_logpdf(&self, x0: &DVector<f64>) -> f64 {
        gaussian_logpdf_prefactored(x0, &self.mu, &self.chol_p0)
    }

    fn transition_logpdf(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> f64 {
        check_transition_step(k, self.horizon);
        let mean = self.transition_mean(k, x_prev);
        gaussian_logpdf_prefactored(x_next, &mean, &self.chol_q)
    }

    fn measurement_logpdf(&self, k: usize, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
        check_measurement_step(k, self.horizon);
        let mean = &self.h * x;
        gaussian_logpdf_prefactored(y, &mean, &self.chol_r)
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        sample_mvn(&self.mu, self.chol_p0.l_dirty(), rng)
    }

    fn sample_transition(
        &self,
        k: usize,
        x_prev: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> DVector<f64> {
        check_transition_step(k, self.horizon);
        let mean = self.transition_mean(k, x_prev);
        sample_mvn(&mean, self.chol_q.l_dirty(), rng)
    }

    fn sample_measurement(
        &self,
        k: usize,
        x: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> DVector<f64> {
        check_measurement_step(k, self.horizon);
        let mean = &self.h * x;
        sample_mvn(&mean, self.chol_r.l_dirty(), rng)
    }

    fn d_meas(&self, k: usize, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        check_measurement_step(k, self.horizon);
        self.h.transpose() * (&self.r_inv * (y - &self.h * x))
    }

    fn d_trans_out(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> DVector<f64> {
        check_transition_step(k, self.horizon);
        -(&self.q_inv * (x_next - self.transition_mean(k, x_prev)))
    }

    fn d_trans_in(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> DVector<f64> {
        check_transition_step(k, self.horizon);
        self.f.transpose() * (&self.q_inv * (x_next - self.transition_mean(k, x_prev)))
    }

    fn d_init(&self, x0: &DVector<f64>) -> DVector<f64> {
        -(&self.p0_inv * (x0 - &self.mu))
    }

    fn h_meas(&self, k: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        check_measurement_step(k, self.horizon);
        self.hrh.clone()
    }

    fn h_trans_out(&self, k: usize) -> DMatrix<f64> {
        check_transition_step(k, self.horizon);
        self.q_inv.clone()
    }

    fn h_trans_cross(&self, k: usize, _x_prev: &DVector<f64>) -> DMatrix<f64> {
        check_transition_step(k, self.horizon);
        &self.q_inv * &self.f
    }

    fn h_trans_in(&self, k: usize, _x_next: &DVector<f64>, _x_prev: &DVector<f64>) -> DMatrix<f64> {
        check_transition_step(k, self.horizon);
        self.f.transpose() * &self.q_inv * &self.f
    }

    fn h_init(&self) -> DMatrix<f64> {
        self.p0_inv.clone()
    }
}

// ---------------------------------------------------------------------------
// Nonlinear tanh model
// ---------------------------------------------------------------------------

/// Scalar nonlinear system
/// `x_k = f_k tanh(pi x_{k-1}) + v_k`, `y_k = x_k / 2 + w_k` with
/// `f_k = 1 + sin(2 pi k / 20) / 2`, `v_k ~ N(0, 0.2)`, `w_k ~ N(0, 1)` and
/// `x_0 ~ N(0, 1)`. The saturating transition produces bimodal, skewed
/// filtering distributions, which is what makes it a useful stress case.
#[derive(Debug, Clone)]
pub struct NonlinearTanhModel {
    horizon: usize,
    trans_var: f64,
    meas_var: f64,
    meas_coef: f64,
    init_var: f64,
}

impl NonlinearTanhModel {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            trans_var: 0.2,
            meas_var: 1.0,
            meas_coef: 0.5,
            init_var: 1.0,
        }
    }

    /// Seasonal gain `f_k = 1 + sin(2 pi k / 20) / 2`.
    pub fn gain(&self, k: usize) -> f64 {
        1.0 + 0.5 * (2.0 * std::f64::consts::PI * k as f64 / 20.0).sin()
    }

    /// Transition mean `f_k tanh(pi x)`.
    pub fn transition_mean(&self, k: usize, x_prev: f64) -> f64 {
        self.gain(k) * (std::f64::consts::PI * x_prev).tanh()
    }

    /// First derivative of the transition mean, `f_k pi sech^2(pi x)`.
    pub fn transition_mean_d1(&self, k: usize, x_prev: f64) -> f64 {
        let c = (std::f64::consts::PI * x_prev).cosh();
        self.gain(k) * std::f64::consts::PI / (c * c)
    }

    /// Second derivative of the transition mean,
    /// `-2 f_k pi^2 sech^2(pi x) tanh(pi x)`.
    pub fn transition_mean_d2(&self, k: usize, x_prev: f64) -> f64 {
        let pi = std::f64::consts::PI;
        let c = (pi * x_prev).cosh();
        -2.0 * self.gain(k) * pi * pi * (pi * x_prev).tanh() / (c * c)
    }

    pub fn trans_var(&self) -> f64 {
        self.trans_var
    }

    pub fn meas_var(&self) -> f64 {
        self.meas_var
    }

    fn scalar_gauss_logpdf(x: f64, mean: f64, var: f64) -> f64 {
        let d = x - mean;
        -0.5 * (d * d / var + (2.0 * std::f64::consts::PI * var).ln())
    }
}

impl StateSpaceModel for NonlinearTanhModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_logpdf(&self, x0: &DVector<f64>) -> f64 {
        Self::scalar_gauss_logpdf(x0[0], 0.0, self.init_var)
    }

    fn transition_logpdf(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> f64 {
        check_transition_step(k, self.horizon);
        Self::scalar_gauss_logpdf(x_next[0], self.transition_mean(k, x_prev[0]), self.trans_var)
    }

    fn measurement_logpdf(&self, k: usize, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
        check_measurement_step(k, self.horizon);
        Self::scalar_gauss_logpdf(y[0], self.meas_coef * x[0], self.meas_var)
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let z: f64 = StandardNormal.sample(rng);
        DVector::from_row_slice(&[self.init_var.sqrt() * z])
    }

    fn sample_transition(
        &self,
        k: usize,
        x_prev: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> DVector<f64> {
        check_transition_step(k, self.horizon);
        let z: f64 = StandardNormal.sample(rng);
        DVector::from_row_slice(&[self.transition_mean(k, x_prev[0]) + self.trans_var.sqrt() * z])
    }

    fn sample_measurement(
        &self,
        k: usize,
        x: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> DVector<f64> {
        check_measurement_step(k, self.horizon);
        let z: f64 = StandardNormal.sample(rng);
        DVector::from_row_slice(&[self.meas_coef * x[0] + self.meas_var.sqrt() * z])
    }

    fn d_meas(&self, k: usize, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        check_measurement_step(k, self.horizon);
        let residual = y[0] - self.meas_coef * x[0];
        DVector::from_row_slice(&[self.meas_coef * residual / self.meas_var])
    }

    fn d_trans_out(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> DVector<f64> {
        check_transition_step(k, self.horizon);
        let residual = x_next[0] - self.transition_mean(k, x_prev[0]);
        DVector::from_row_slice(&[-residual / self.trans_var])
    }

    fn d_trans_in(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> DVector<f64> {
        check_transition_step(k, self.horizon);
        let residual = x_next[0] - self.transition_mean(k, x_prev[0]);
        DVector::from_row_slice(&[
            self.transition_mean_d1(k, x_prev[0]) * residual / self.trans_var
        ])
    }

    fn d_init(&self, x0: &DVector<f64>) -> DVector<f64> {
        DVector::from_row_slice(&[-x0[0] / self.init_var])
    }

    fn h_meas(&self, k: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        check_measurement_step(k, self.horizon);
        DMatrix::from_row_slice(1, 1, &[self.meas_coef * self.meas_coef / self.meas_var])
    }

    fn h_trans_out(&self, k: usize) -> DMatrix<f64> {
        check_transition_step(k, self.horizon);
        DMatrix::from_row_slice(1, 1, &[1.0 / self.trans_var])
    }

    fn h_trans_cross(&self, k: usize, x_prev: &DVector<f64>) -> DMatrix<f64> {
        check_transition_step(k, self.horizon);
        DMatrix::from_row_slice(1, 1, &[self.transition_mean_d1(k, x_prev[0]) / self.trans_var])
    }

    fn h_trans_in(&self, k: usize, x_next: &DVector<f64>, x_prev: &DVector<f64>) -> DMatrix<f64> {
        check_transition_step(k, self.horizon);
        // Gauss-Newton term plus the curvature correction from the second
        // derivative of the transition mean against the residual.
        let d1 = self.transition_mean_d1(k, x_prev[0]);
        let d2 = self.transition_mean_d2(k, x_prev[0]);
        let residual = x_next[0] - self.transition_mean(k, x_prev[0]);
        DMatrix::from_row_slice(1, 1, &[(d1 * d1 - d2 * residual) / self.trans_var])
    }

    fn h_init(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 1, &[1.0 / self.init_var])
    }
}

// ---------------------------------------------------------------------------
// Trajectory simulation
// ---------------------------------------------------------------------------

/// A simulated state/observation record `(x_{0:n}, y_{0:n})`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Ancestral sampling of `n + 1` paired states and measurements.
///
/// Deterministic in `seed`: every step draws from its own substream, so the
/// result does not depend on evaluation order.
pub fn simulate<M: StateSpaceModel + ?Sized>(model: &M, n: usize, seed: u64) -> Trajectory {
    assert!(
        n <= model.horizon(),
        "simulation horizon {n} exceeds model horizon {}",
        model.horizon()
    );
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n + 1);
    let mut rng = substream(seed, &[purpose::SIM_INITIAL]);
    states.push(model.sample_initial(&mut rng));
    for k in 1..=n {
        let mut rng = substream(seed, &[purpose::SIM_TRANSITION, k as u64]);
        let next = model.sample_transition(k, &states[k - 1], &mut rng);
        states.push(next);
    }
    for k in 0..=n {
        let mut rng = substream(seed, &[purpose::SIM_MEASUREMENT, k as u64]);
        observations.push(model.sample_measurement(k, &states[k], &mut rng));
    }
    Trajectory {
        states,
        observations,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, finite_diff_hess};

    const LN_2PI: f64 = 1.8378770664093453;

    fn vec1(v: f64) -> DVector<f64> {
        DVector::from_row_slice(&[v])
    }

    #[test]
    fn linear_scalar_transition_at_mode() {
        let m = LinearGaussianModel::scalar_unit(4);
        let lp = m.transition_logpdf(1, &vec1(0.0), &vec1(0.0));
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn tanh_transition_at_origin() {
        let m = NonlinearTanhModel::new(10);
        // tanh(0) = 0, so the mode sits at zero with variance 0.2
        let lp = m.transition_logpdf(1, &vec1(0.0), &vec1(0.0));
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 0.2).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn tanh_gain_saturation() {
        let m = NonlinearTanhModel::new(10);
        assert!((m.gain(5) - 1.5).abs() < 1e-12);
        // the mean saturates to f_k for large previous states
        assert!((m.transition_mean(5, 50.0) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn tanh_mean_is_odd() {
        let m = NonlinearTanhModel::new(10);
        for x in [0.0, 0.3, 1.7, 4.0] {
            assert_eq!(m.transition_mean(3, -x), -m.transition_mean(3, x));
        }
    }

    #[test]
    fn measurement_identity_at_mean() {
        let m = LinearGaussianModel::scalar_unit(4);
        let lp = m.measurement_logpdf(0, &vec1(2.0), &vec1(2.0));
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-12);

        let t = NonlinearTanhModel::new(4);
        let lp = t.measurement_logpdf(0, &vec1(1.0), &vec1(2.0));
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn benchmark_measurement_maps_sum_of_last_two() {
        let m = LinearGaussianModel::benchmark_3d(4);
        let x = DVector::from_row_slice(&[5.0, 1.0, 2.0]);
        let d = m.d_meas(0, &DVector::from_row_slice(&[3.0]), &x);
        // y - Hx = 3 - (1 + 2) = 0 regardless of the first component
        assert_eq!(d, DVector::zeros(3));
    }

    #[test]
    fn d_meas_values() {
        let m = LinearGaussianModel::scalar_unit(4);
        assert_eq!(m.d_meas(0, &vec1(1.0), &vec1(1.0)), vec1(0.0));
        assert_eq!(m.d_meas(0, &vec1(1.0), &vec1(0.0)), vec1(1.0));

        let t = NonlinearTanhModel::new(4);
        let d = t.d_meas(0, &vec1(2.0), &vec1(2.0));
        assert!((d[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn d_trans_out_values() {
        let t = NonlinearTanhModel::new(4);
        // residual 0.1 against variance 0.2 gives -0.5
        let x_next = vec1(t.transition_mean(2, 0.4) + 0.1);
        let d = t.d_trans_out(2, &x_next, &vec1(0.4));
        assert!((d[0] + 0.5).abs() < 1e-12);

        let m = LinearGaussianModel::scalar_unit(4);
        assert_eq!(m.d_trans_out(1, &vec1(0.7), &vec1(0.7)), vec1(0.0));
    }

    #[test]
    fn d_trans_in_slope_at_origin() {
        let t = NonlinearTanhModel::new(4);
        // sech^2(0) = 1, so the mean derivative at zero is f_k pi
        let d = t.d_trans_in(2, &vec1(1.0), &vec1(0.0));
        let expected = t.gain(2) * std::f64::consts::PI * (1.0 - 0.0) / 0.2;
        assert!((d[0] - expected).abs() < 1e-12);
        assert_eq!(
            t.d_trans_in(2, &vec1(t.transition_mean(2, 0.3)), &vec1(0.3)),
            vec1(0.0)
        );
    }

    #[test]
    fn linear_h_trans_in_is_gauss_newton_only() {
        let m = LinearGaussianModel::benchmark_3d(4);
        let f = m.f_mat(1).clone();
        let expected = f.transpose() * m.q_inv(1) * &f;
        let got = m.h_trans_in(1, &DVector::zeros(3), &DVector::zeros(3));
        assert!((got - expected).abs().max() < 1e-14);
    }

    #[test]
    fn tanh_h_trans_in_zero_residual() {
        let t = NonlinearTanhModel::new(10);
        let x_prev = 0.4;
        let x_next = t.transition_mean(6, x_prev);
        let got = t.h_trans_in(6, &vec1(x_next), &vec1(x_prev));
        let d1 = t.transition_mean_d1(6, x_prev);
        assert!((got[(0, 0)] - d1 * d1 / 0.2).abs() < 1e-12);
    }

    fn grid() -> Vec<f64> {
        vec![-1.3, -0.5, 0.0, 0.4, 1.1]
    }

    #[test]
    fn linear_derivatives_match_finite_differences() {
        let m = LinearGaussianModel::benchmark_3d(4);
        let k = 2;
        let x_next = DVector::from_row_slice(&[0.3, -0.8, 0.5]);
        let x_prev = DVector::from_row_slice(&[-0.2, 0.9, -1.1]);
        let y = DVector::from_row_slice(&[0.7]);

        let g = finite_diff_grad(|x| m.measurement_logpdf(k, &y, x), &x_prev, 1e-6).unwrap();
        assert!((g - m.d_meas(k, &y, &x_prev)).abs().max() < 1e-6);

        let g = finite_diff_grad(|x| m.transition_logpdf(k, x, &x_prev), &x_next, 1e-6).unwrap();
        assert!((g - m.d_trans_out(k, &x_next, &x_prev)).abs().max() < 1e-6);

        let g = finite_diff_grad(|x| m.transition_logpdf(k, &x_next, x), &x_prev, 1e-6).unwrap();
        assert!((g - m.d_trans_in(k, &x_next, &x_prev)).abs().max() < 1e-6);
    }

    #[test]
    fn tanh_derivatives_match_finite_differences_on_grid() {
        let t = NonlinearTanhModel::new(10);
        for k in [1usize, 5, 9] {
            for &a in &grid() {
                for &b in &grid() {
                    let x_next = vec1(a);
                    let x_prev = vec1(b);
                    let g =
                        finite_diff_grad(|x| t.transition_logpdf(k, &x_next, x), &x_prev, 1e-6)
                            .unwrap();
                    let exact = t.d_trans_in(k, &x_next, &x_prev);
                    assert!(
                        (g[0] - exact[0]).abs() / exact[0].abs().max(1.0) < 1e-4,
                        "k={k} a={a} b={b}: {} vs {}",
                        g[0],
                        exact[0]
                    );

                    let h =
                        finite_diff_hess(|x| t.transition_logpdf(k, &x_next, x), &x_prev, 1e-4)
                            .unwrap();
                    let exact = t.h_trans_in(k, &x_next, &x_prev);
                    assert!(
                        (h[(0, 0)] + exact[(0, 0)]).abs() / exact[(0, 0)].abs().max(1.0) < 1e-4,
                        "h_trans_in k={k} a={a} b={b}: {} vs {}",
                        -h[(0, 0)],
                        exact[(0, 0)]
                    );
                }
            }
        }
    }

    #[test]
    fn hessian_blocks_match_finite_differences() {
        let m = LinearGaussianModel::benchmark_3d(4);
        let k = 1;
        let x_next = DVector::from_row_slice(&[0.2, 0.1, -0.4]);
        let x_prev = DVector::from_row_slice(&[0.6, -0.3, 0.0]);
        let y = DVector::from_row_slice(&[-0.5]);

        let h = finite_diff_hess(|x| m.measurement_logpdf(k, &y, x), &x_prev, 1e-4).unwrap();
        assert!((h + m.h_meas(k, &x_prev)).abs().max() < 1e-4);

        let h = finite_diff_hess(|x| m.transition_logpdf(k, x, &x_prev), &x_next, 1e-4).unwrap();
        assert!((h + m.h_trans_out(k)).abs().max() < 1e-4);

        let h = finite_diff_hess(|x| m.transition_logpdf(k, &x_next, x), &x_prev, 1e-4).unwrap();
        assert!((h + m.h_trans_in(k, &x_next, &x_prev)).abs().max() < 1e-4);

        // Mixed block d2 log f / dx' dx^T entry (i, j) by differencing the
        // conditioning-argument gradient in the next-state direction.
        let step = 1e-4;
        let p = 3;
        let mut mixed = DMatrix::zeros(p, p);
        for i in 0..p {
            let mut xp = x_next.clone();
            xp[i] += step;
            let mut xm = x_next.clone();
            xm[i] -= step;
            let dp = finite_diff_grad(|x| m.transition_logpdf(k, &xp, x), &x_prev, 1e-5).unwrap();
            let dm = finite_diff_grad(|x| m.transition_logpdf(k, &xm, x), &x_prev, 1e-5).unwrap();
            for j in 0..p {
                mixed[(i, j)] = (dp[j] - dm[j]) / (2.0 * step);
            }
        }
        assert!((mixed - m.h_trans_cross(k, &x_prev)).abs().max() < 1e-4);
    }

    #[test]
    fn tanh_cross_block_matches_finite_differences() {
        let t = NonlinearTanhModel::new(10);
        let step = 1e-5;
        for &b in &grid() {
            let x_prev = vec1(b);
            let dp = finite_diff_grad(|x| t.transition_logpdf(3, &vec1(0.4 + step), x), &x_prev, 1e-5)
                .unwrap();
            let dm = finite_diff_grad(|x| t.transition_logpdf(3, &vec1(0.4 - step), x), &x_prev, 1e-5)
                .unwrap();
            let mixed = (dp[0] - dm[0]) / (2.0 * step);
            let exact = t.h_trans_cross(3, &x_prev)[(0, 0)];
            assert!(
                (mixed - exact).abs() / exact.abs().max(1.0) < 1e-4,
                "b={b}: {mixed} vs {exact}"
            );
        }
    }

    #[test]
    fn transition_normalization_scalar() {
        // trapezoid integral of exp(logpdf) over +/- 8 sigma
        let t = NonlinearTanhModel::new(10);
        let mean = t.transition_mean(3, 0.7);
        let sigma = 0.2f64.sqrt();
        let (lo, hi) = (mean - 8.0 * sigma, mean + 8.0 * sigma);
        let n = 40_000;
        let dx = (hi - lo) / n as f64;
        let x_prev = vec1(0.7);
        let mut acc = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * dx;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * t.transition_logpdf(3, &vec1(x), &x_prev).exp();
        }
        let integral = acc * dx;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn degenerate_initial_covariance_rejected() {
        let one = DMatrix::from_row_slice(1, 1, &[1.0]);
        let err = LinearGaussianModel::new(
            4,
            one.clone(),
            None,
            one.clone(),
            one.clone(),
            one.clone(),
            DVector::zeros(1),
            DMatrix::from_row_slice(1, 1, &[0.0]),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn asymmetric_q_rejected() {
        let m = LinearGaussianModel::new(
            4,
            DMatrix::identity(2, 2),
            None,
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.1, 1.0]),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            None,
        );
        assert!(matches!(m, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sampler_moments() {
        use crate::rng::{purpose, substream};
        let m = LinearGaussianModel::benchmark_3d(4);
        let mut rng = substream(7, &[purpose::MONTE_CARLO]);
        let n = 100_000;
        let mut mean = DVector::zeros(3);
        for _ in 0..n {
            mean += m.sample_initial(&mut rng);
        }
        mean /= n as f64;
        // 3 sigma / sqrt(n) with sigma^2 = 0.3
        let tol = 3.0 * (0.3f64).sqrt() / (n as f64).sqrt();
        for i in 0..3 {
            assert!(mean[i].abs() < tol, "component {i}: {}", mean[i]);
        }

        let t = NonlinearTanhModel::new(4);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let x = t.sample_initial(&mut rng)[0];
            acc += x;
            acc2 += x * x;
        }
        let var = acc2 / n as f64 - (acc / n as f64).powi(2);
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn simulate_is_deterministic_and_sized() {
        let m = LinearGaussianModel::benchmark_3d(100);
        let a = simulate(&m, 100, 99);
        let b = simulate(&m, 100, 99);
        assert_eq!(a.len(), 101);
        assert_eq!(a.observations.len(), 101);
        for k in 0..=100 {
            assert_eq!(a.states[k], b.states[k]);
            assert_eq!(a.observations[k], b.observations[k]);
        }
        let c = simulate(&m, 100, 100);
        assert_ne!(a.states[0], c.states[0]);
    }

    #[test]
    #[should_panic(expected = "transition step")]
    fn transition_index_out_of_range_panics() {
        let m = LinearGaussianModel::scalar_unit(3);
        m.transition_logpdf(4, &vec1(0.0), &vec1(0.0));
    }
}
