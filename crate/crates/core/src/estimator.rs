//! Online gradient estimation of the transfer and disturbance phasors.
//!
//! Each harmonic mode carries a single 4-vector `x = (re G, im G,
//! theta_p_s, theta_p_c)`: the transfer and the disturbance are estimated
//! jointly from the scalar measurement. The update is normalized gradient
//! descent on the squared prediction error with per-block learning rates,
//! plus two practical safeguards: an interruption-style singularity guard on
//! the transfer components and a freeze on non-finite measurements.
//!
//! The delta variant estimates only the deviation from an externally
//! supplied feedforward vector and leaks toward zero (sigma-modification),
//! so the adaptive part restarts near zero at every operating point.

use crate::linalg::Vec4;
use crate::phasor::{HarmonicMode, PhasorPair, TransferPhasor, DEFAULT_EPS_SING};
use crate::real::{lit, Real};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("non-finite measurement y = {0}; estimator state left unchanged")]
    NonFiniteMeasurement(f64),
    #[error("mode count mismatch: estimator holds {have}, caller passed {got}")]
    ModeCountMismatch { have: usize, got: usize },
}

/// Result of one adaptation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptStep<S> {
    /// Normalized error `eta * (y - y_hat)`.
    pub epsilon: S,
    /// Prediction `y_hat` before the update.
    pub prediction: S,
    /// Number of modes whose transfer update was blocked by the
    /// singularity guard this step.
    pub guard_interventions: u32,
}

/// Regressor for one mode: `w = [th_s*sin + th_c*cos, th_s*cos - th_c*sin,
/// sin, cos]` at the mode's current phase.
///
/// `theta_u` must be the controller output that was active while the
/// measurement being processed was produced (one-sample-old in a dynamic
/// loop); the phase is the mode's phase at the measurement instant.
pub fn build_regressor<S: Real>(mode: &HarmonicMode<S>, theta_u: &PhasorPair<S>) -> Vec4<S> {
    let (s, c) = mode.basis();
    [
        theta_u.s * s + theta_u.c * c,
        theta_u.s * c - theta_u.c * s,
        s,
        c,
    ]
}

/// Normalization factor `eta = 1 / (1 + sum_i ||theta_u_i||^2)`.
///
/// Guarantees `eta <= 1` and `eta * sum ||theta_u_i||^2 <= 1`, which is what
/// bounds the quadratic term of the Lyapunov difference.
pub fn normalization<S: Real>(theta_u_all: &[PhasorPair<S>]) -> S {
    let sum: S = theta_u_all.iter().map(|t| t.norm_sq()).sum();
    S::one() / (S::one() + sum)
}

/// Singularity guard, interruption variant.
///
/// Returns the transfer-component update to actually apply: unchanged when
/// the current magnitude is safely above `eps_sing`, otherwise only if the
/// step would increase `x1^2 + x2^2` (outward steps may leave the singular
/// region; inward steps are dropped).
pub fn singularity_guard<S: Real>(x12: (S, S), dx12: (S, S), eps_sing: S) -> (S, S) {
    let r2 = x12.0 * x12.0 + x12.1 * x12.1;
    if r2 > eps_sing {
        return dx12;
    }
    let n0 = x12.0 + dx12.0;
    let n1 = x12.1 + dx12.1;
    if n0 * n0 + n1 * n1 > r2 {
        dx12
    } else {
        (S::zero(), S::zero())
    }
}


/// One fused per-mode update `x += diag(gamma) .* w * eps`, with the guard
/// applied to the transfer components around `base12` (the magnitude the
/// guard must protect, which differs from `x` in the delta variant).
#[inline]
fn mac4_guarded<S: Real>(
    x: &mut Vec4<S>,
    w: &Vec4<S>,
    gamma_g: S,
    gamma_p: S,
    eps: S,
    base12: (S, S),
    eps_sing: S,
) -> bool {
    #[cfg(test)]
    opcount::bump();
    let d = [
        gamma_g * w[0] * eps,
        gamma_g * w[1] * eps,
        gamma_p * w[2] * eps,
        gamma_p * w[3] * eps,
    ];
    let (d0, d1) = singularity_guard(base12, (d[0], d[1]), eps_sing);
    let guarded = d0 != d[0] || d1 != d[1];
    x[0] += d0;
    x[1] += d1;
    x[2] += d[2];
    x[3] += d[3];
    guarded
}

/// Joint estimator state: one 4-vector per harmonic mode plus shared gains.
#[derive(Clone, Debug)]
pub struct Estimator<S> {
    x: Vec<Vec4<S>>,
    pub gamma_g: S,
    pub gamma_p: S,
    pub eps_sing: S,
}

impl<S: Real> Estimator<S> {
    pub fn new(modes: usize, gamma_g: S, gamma_p: S) -> Self {
        Estimator {
            x: vec![[S::zero(); 4]; modes],
            gamma_g,
            gamma_p,
            eps_sing: lit(DEFAULT_EPS_SING),
        }
    }

    pub fn with_initial(init: Vec<Vec4<S>>, gamma_g: S, gamma_p: S) -> Self {
        Estimator {
            x: init,
            gamma_g,
            gamma_p,
            eps_sing: lit(DEFAULT_EPS_SING),
        }
    }

    pub fn mode_count(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[Vec4<S>] {
        &self.x
    }

    pub fn set_mode(&mut self, i: usize, x: Vec4<S>) {
        self.x[i] = x;
    }

    pub fn transfer(&self, i: usize) -> TransferPhasor<S> {
        TransferPhasor::new(self.x[i][0], self.x[i][1])
    }

    pub fn theta_p(&self, i: usize) -> PhasorPair<S> {
        PhasorPair::new(self.x[i][2], self.x[i][3])
    }

    /// `y_hat = sum_i w_i^T x_i`.
    pub fn predict(&self, regressors: &[Vec4<S>]) -> S {
        predict_with(&self.x, regressors)
    }

    /// One gradient step: `eps = eta*(y - y_hat)`, `x_i += Gamma w_i eps`.
    ///
    /// `eta` must come from [`normalization`] of the same buffered
    /// controller outputs the regressors were built from. A non-finite
    /// measurement freezes the state and reports a fault.
    pub fn adapt(
        &mut self,
        y: S,
        regressors: &[Vec4<S>],
        eta: S,
    ) -> Result<AdaptStep<S>, EstimatorError> {
        if regressors.len() != self.x.len() {
            return Err(EstimatorError::ModeCountMismatch {
                have: self.x.len(),
                got: regressors.len(),
            });
        }
        if !y.is_finite() {
            return Err(EstimatorError::NonFiniteMeasurement(
                y.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let prediction = self.predict(regressors);
        let epsilon = eta * (y - prediction);
        let mut guard_interventions = 0;
        for (x, w) in self.x.iter_mut().zip(regressors) {
            let base = (x[0], x[1]);
            if mac4_guarded(x, w, self.gamma_g, self.gamma_p, epsilon, base, self.eps_sing) {
                guard_interventions += 1;
            }
        }
        Ok(AdaptStep {
            epsilon,
            prediction,
            guard_interventions,
        })
    }
}

fn predict_with<S: Real>(x: &[Vec4<S>], regressors: &[Vec4<S>]) -> S {
    x.iter()
        .zip(regressors)
        .map(|(xi, wi)| {
            xi[0] * wi[0] + xi[1] * wi[1] + xi[2] * wi[2] + xi[3] * wi[3]
        })
        .sum()
}

/// Deviation estimator with sigma-leakage.
///
/// Prediction and control use `x_ff + dx`; only `dx` adapts, decaying by
/// `(1 - sigma)` each step so the correction stays bounded and fades once
/// the feedforward source absorbs it.
#[derive(Clone, Debug)]
pub struct DeltaEstimator<S> {
    dx: Vec<Vec4<S>>,
    pub sigma: S,
    pub gamma_g: S,
    pub gamma_p: S,
    pub eps_sing: S,
}

impl<S: Real> DeltaEstimator<S> {
    pub fn new(modes: usize, sigma: S, gamma_g: S, gamma_p: S) -> Self {
        DeltaEstimator {
            dx: vec![[S::zero(); 4]; modes],
            sigma,
            gamma_g,
            gamma_p,
            eps_sing: lit(DEFAULT_EPS_SING),
        }
    }

    pub fn mode_count(&self) -> usize {
        self.dx.len()
    }

    pub fn dx(&self) -> &[Vec4<S>] {
        &self.dx
    }

    pub fn set_mode(&mut self, i: usize, dx: Vec4<S>) {
        self.dx[i] = dx;
    }

    /// `||dx_i||`, the gate signal for LUT adaptation and excitation.
    pub fn delta_norm(&self, i: usize) -> S {
        self.dx[i].iter().map(|v| *v * *v).sum::<S>().sqrt()
    }

    /// Effective parameter vector `x_ff_i + dx_i` for one mode.
    pub fn effective(&self, x_ff: &[Vec4<S>], i: usize) -> Vec4<S> {
        let mut e = x_ff[i];
        for j in 0..4 {
            e[j] += self.dx[i][j];
        }
        e
    }

    /// One leaky gradient step against the shifted prediction
    /// `y_hat = sum_i w_i^T (x_ff_i + dx_i)`:
    /// `dx_i <- (1 - sigma) dx_i + Gamma w_i eps`.
    ///
    /// The singularity guard watches the effective transfer components
    /// `x_ff + dx`; while it intervenes, the affected components are held
    /// entirely (no leak either), mirroring the interruption semantics.
    pub fn adapt(
        &mut self,
        x_ff: &[Vec4<S>],
        y: S,
        regressors: &[Vec4<S>],
        eta: S,
    ) -> Result<AdaptStep<S>, EstimatorError> {
        if regressors.len() != self.dx.len() || x_ff.len() != self.dx.len() {
            return Err(EstimatorError::ModeCountMismatch {
                have: self.dx.len(),
                got: regressors.len().max(x_ff.len()),
            });
        }
        if !y.is_finite() {
            return Err(EstimatorError::NonFiniteMeasurement(
                y.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let effective: Vec<Vec4<S>> = (0..self.dx.len()).map(|i| self.effective(x_ff, i)).collect();
        let prediction = predict_with(&effective, regressors);
        let epsilon = eta * (y - prediction);
        let one_minus_sigma = S::one() - self.sigma;
        let mut guard_interventions = 0;
        for (i, (dx, w)) in self.dx.iter_mut().zip(regressors).enumerate() {
            let leaked = [
                one_minus_sigma * dx[0],
                one_minus_sigma * dx[1],
                one_minus_sigma * dx[2],
                one_minus_sigma * dx[3],
            ];
            let proposed = [
                leaked[0] + self.gamma_g * w[0] * epsilon,
                leaked[1] + self.gamma_g * w[1] * epsilon,
                leaked[2] + self.gamma_p * w[2] * epsilon,
                leaked[3] + self.gamma_p * w[3] * epsilon,
            ];
            #[cfg(test)]
            opcount::bump();
            // Guard decision on effective transfer components.
            let base12 = (effective[i][0], effective[i][1]);
            let d12 = (proposed[0] - dx[0], proposed[1] - dx[1]);
            let (g0, g1) = singularity_guard(base12, d12, self.eps_sing);
            if g0 != d12.0 || g1 != d12.1 {
                guard_interventions += 1;
            } else {
                dx[0] = proposed[0];
                dx[1] = proposed[1];
            }
            dx[2] = proposed[2];
            dx[3] = proposed[3];
        }
        Ok(AdaptStep {
            epsilon,
            prediction,
            guard_interventions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::HarmonicMode;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    fn mode_at(phase: f64) -> HarmonicMode<f64> {
        HarmonicMode::with_phase(1, phase)
    }

    #[test]
    fn regressor_at_zero_phase() {
        let w = build_regressor(&mode_at(0.0), &PhasorPair::new(2.0, 3.0));
        assert_eq!(w, [3.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn regressor_at_quarter_turn() {
        let w = build_regressor(&mode_at(FRAC_PI_2), &PhasorPair::new(2.0, 3.0));
        assert!((w[0] - 2.0).abs() < 1e-15);
        assert!((w[1] + 3.0).abs() < 1e-15);
        assert!((w[2] - 1.0).abs() < 1e-15);
        assert!(w[3].abs() < 1e-15);
    }

    #[test]
    fn regressor_at_pi_quarter() {
        let w = build_regressor(&mode_at(FRAC_PI_4), &PhasorPair::new(1.0, 1.0));
        assert!((w[0] - SQRT_2).abs() < 1e-15);
        assert!(w[1].abs() < 1e-15);
        assert!((w[2] - SQRT_2 / 2.0).abs() < 1e-15);
        assert!((w[3] - SQRT_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn normalization_limits() {
        assert_eq!(normalization::<f64>(&[]), 1.0);
        assert_eq!(normalization(&[PhasorPair::new(0.0, 0.0)]), 1.0);
        assert_eq!(normalization(&[PhasorPair::new(1.0, 0.0)]), 0.5);
        assert_eq!(
            normalization(&[PhasorPair::new(1.0, 1.0), PhasorPair::new(1.0, 1.0)]),
            0.2
        );
    }

    #[test]
    fn predict_single_term() {
        let est = Estimator::with_initial(vec![[1.0, 0.0, 0.0, 0.0]], 0.1, 0.1);
        assert_eq!(est.predict(&[[2.0, 0.0, 0.0, 0.0]]), 2.0);
    }

    #[test]
    fn predict_zero_state() {
        let est = Estimator::<f64>::new(3, 0.1, 0.1);
        let w = [[1.0, 2.0, 3.0, 4.0]; 3];
        assert_eq!(est.predict(&w), 0.0);
    }

    #[test]
    fn predict_two_modes_hand_sum() {
        let est = Estimator::<f64>::with_initial(
            vec![[1.0, -2.0, 0.5, 0.0], [0.0, 1.0, 1.0, -1.0]],
            0.1,
            0.1,
        );
        let w = [[0.5, 1.0, 2.0, 0.0], [1.0, 1.0, 0.0, 3.0]];
        // (0.5 - 2 + 1 + 0) + (0 + 1 + 0 - 3) = -0.5 - 2 = -2.5
        assert!((est.predict(&w) + 2.5).abs() < 1e-15);
    }

    #[test]
    fn adapt_no_error_no_change() {
        let mut est = Estimator::with_initial(vec![[1.0, 0.0, 0.3, -0.2]], 0.1, 0.1);
        let w = [[0.0, 0.0, 1.0, 0.0]];
        let y = est.predict(&w);
        let before = est.x().to_vec();
        let step = est.adapt(y, &w, 1.0).unwrap();
        assert_eq!(step.epsilon, 0.0);
        assert_eq!(est.x(), before.as_slice());
    }

    #[test]
    fn adapt_single_step_hand_computation() {
        let mut est = Estimator::with_initial(vec![[1.0, 0.0, 0.0, 0.0]], 0.1, 0.1);
        let w = [[0.0, 0.0, 0.0, 1.0]];
        let step = est.adapt(1.0, &w, 1.0).unwrap();
        assert_eq!(step.prediction, 0.0);
        assert_eq!(step.epsilon, 1.0);
        assert_eq!(est.x()[0], [1.0, 0.0, 0.0, 0.1]);
    }

    #[test]
    fn adapt_zero_gains_freeze_state() {
        let mut est = Estimator::with_initial(vec![[0.4, -0.6, 0.1, 0.9]], 0.0, 0.0);
        let before = est.x().to_vec();
        est.adapt(123.0, &[[1.0, 1.0, 1.0, 1.0]], 0.7).unwrap();
        assert_eq!(est.x(), before.as_slice());
    }

    #[test]
    fn adapt_rejects_nan_and_freezes() {
        let mut est = Estimator::with_initial(vec![[1.0, 0.0, 0.0, 0.0]], 0.1, 0.1);
        let before = est.x().to_vec();
        let err = est.adapt(f64::NAN, &[[1.0, 0.0, 0.0, 0.0]], 1.0).unwrap_err();
        assert!(matches!(err, EstimatorError::NonFiniteMeasurement(_)));
        assert_eq!(est.x(), before.as_slice());
    }

    #[test]
    fn guard_passes_above_threshold() {
        let d = singularity_guard((2e-3, 0.0), (-1.0, 0.0), 1e-6);
        assert_eq!(d, (-1.0, 0.0));
    }

    #[test]
    fn guard_blocks_zero_update_at_origin() {
        let d = singularity_guard((0.0, 0.0), (0.0, 0.0), 1e-6);
        assert_eq!(d, (0.0, 0.0));
    }

    #[test]
    fn guard_lets_outward_updates_through() {
        // Inside the singular region, a step that grows the magnitude passes.
        let d = singularity_guard((1e-4, 0.0), (5e-4, 0.0), 1e-6);
        assert_eq!(d, (5e-4, 0.0));
        // An inward step is interrupted.
        let d = singularity_guard((1e-4, 0.0), (-5e-5, 0.0), 1e-6);
        assert_eq!(d, (0.0, 0.0));
        // A step through the origin that lands farther out still counts as
        // outward: the magnitude grows, so it may leave the region.
        let d = singularity_guard((1e-4, 0.0), (-5e-4, 0.0), 1e-6);
        assert_eq!(d, (-5e-4, 0.0));
    }

    #[test]
    fn delta_pure_leakage() {
        let mut est = DeltaEstimator::new(1, 0.01, 0.1, 0.1);
        est.set_mode(0, [1.0, 0.0, 0.0, 0.0]);
        let x_ff = [[1.0, 0.0, 0.0, 0.0]];
        // w = 0 makes eps irrelevant to the update; y equals prediction.
        let step = est.adapt(&x_ff, 0.0, &[[0.0; 4]], 1.0).unwrap();
        assert_eq!(step.epsilon, 0.0);
        assert_eq!(est.dx()[0], [0.99, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn delta_with_zero_sigma_and_zero_ff_matches_adapt() {
        let init = [0.8, -0.1, 0.2, 0.4];
        let mut plain = Estimator::<f64>::with_initial(vec![init], 0.05, 0.02);
        let mut delta = DeltaEstimator::new(1, 0.0, 0.05, 0.02);
        delta.set_mode(0, init);
        let x_ff = [[0.0; 4]];
        let w = [[0.3, -0.7, 0.6, 0.8]];
        for k in 0..50 {
            let y = (k as f64 * 0.37).sin();
            let a = plain.adapt(y, &w, 0.6).unwrap();
            let b = delta.adapt(&x_ff, y, &w, 0.6).unwrap();
            assert_eq!(a.epsilon, b.epsilon);
        }
        for j in 0..4 {
            assert!((plain.x()[0][j] - delta.dx()[0][j]).abs() < 1e-14);
        }
    }

    #[test]
    fn delta_single_step_hand_computation() {
        let mut est = DeltaEstimator::<f64>::new(1, 0.1, 0.1, 0.1);
        est.set_mode(0, [0.0, 0.0, 0.2, 0.0]);
        // x_ff transfer kept away from the singularity so the guard is idle;
        // choose y so that eps = eta*(y - y_hat) = 0.5 with y_hat = 0.2.
        let x_ff = [[1.0, 0.0, 0.0, 0.0]];
        let w = [[0.0, 0.0, 1.0, 0.0]];
        let step = est.adapt(&x_ff, 0.7, &w, 1.0).unwrap();
        assert!((step.epsilon - 0.5).abs() < 1e-15);
        let dx = est.dx()[0];
        assert!((dx[2] - 0.23).abs() < 1e-15, "got {dx:?}");
        assert_eq!((dx[0], dx[1], dx[3]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn one_mac_per_mode_per_step() {
        let mut est = Estimator::<f64>::new(3, 0.1, 0.1);
        let w = [[0.1, 0.2, 0.3, 0.4]; 3];
        opcount::reset();
        for _ in 0..10 {
            est.adapt(0.5, &w, 0.9).unwrap();
        }
        assert_eq!(opcount::count(), 30, "exactly one 4-element MAC per mode per step");
    }

    #[test]
    fn gradient_matches_central_differences() {
        // J(x) = eta/2 * (y - sum w^T x)^2. The adaptive step is -Gamma grad J,
        // so grad J = -w * eps must match finite differences of J.
        let mut lcg: u64 = 0x2545F4914F6CDD1D;
        let mut next = move || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((lcg >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _case in 0..20 {
            let q = 2;
            let x: Vec<Vec4<f64>> = (0..q)
                .map(|_| [next(), next(), next(), next()])
                .collect();
            let w: Vec<Vec4<f64>> = (0..q)
                .map(|_| [next(), next(), next(), next()])
                .collect();
            let y = 2.0 * next();
            let eta = 0.3 + 0.5 * next().abs();
            let j = |xs: &[Vec4<f64>]| {
                let e = y - predict_with(xs, &w);
                0.5 * eta * e * e
            };
            let eps = eta * (y - predict_with(&x, &w));
            let h = 1e-6;
            for i in 0..q {
                for comp in 0..4 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i][comp] += h;
                    xm[i][comp] -= h;
                    let fd = (j(&xp) - j(&xm)) / (2.0 * h);
                    let analytic = -w[i][comp] * eps;
                    let scale = fd.abs().max(analytic.abs()).max(1e-3);
                    assert!(
                        (fd - analytic).abs() / scale < 1e-6,
                        "component ({i},{comp}): fd {fd} vs analytic {analytic}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn leakage_keeps_delta_bounded(
            sigma in 0.01f64..0.5,
            gamma in 1e-4f64..0.5,
            seed in 0u64..1000,
        ) {
            let mut est = DeltaEstimator::new(1, sigma, gamma, gamma);
            est.set_mode(0, [0.5, 0.5, -0.5, 0.5]);
            let x_ff = [[1.0, 0.0, 0.0, 0.0]];
            let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
            let mut rand = move || {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            };
            let init_norm = est.delta_norm(0);
            let mut sup_drive = 0.0f64;
            for _ in 0..300 {
                let w = [[rand(), rand(), rand(), rand()]];
                let y = rand();
                let eta = 1.0 / (1.0 + w[0][0].abs());
                // Drive magnitude gamma*||w||*|eps| for this step.
                let pred = est.effective(&x_ff, 0).iter().zip(&w[0]).map(|(a,b)| a*b).sum::<f64>();
                let eps = eta * (y - pred);
                let wn = w[0].iter().map(|v| v*v).sum::<f64>().sqrt();
                sup_drive = sup_drive.max(gamma * wn * eps.abs());
                est.adapt(&x_ff, y, &w, eta).unwrap();
                let bound = init_norm.max(sup_drive / sigma);
                prop_assert!(est.delta_norm(0) <= bound * (1.0 + 1e-9),
                    "norm {} exceeds leaky-integrator bound {}", est.delta_norm(0), bound);
            }
        }
    }
}
