//! Phasor algebra for harmonic steady-state signals.
//!
//! A sinusoid at one harmonic order is represented by its sine/cosine
//! coefficient pair. A stable LTI path acts on such a pair as a 2x2
//! rotation-scaling matrix built from the real and imaginary part of its
//! frequency response, which makes disturbance cancellation a small linear
//! solve per harmonic. This module holds those value types, the cancellation
//! control law and the two-tone excitation law used for active learning.

use crate::real::{lit, Real};
use thiserror::Error;

/// Default singularity threshold on `x1^2 + x2^2` (normalized units).
pub const DEFAULT_EPS_SING: f64 = 1e-6;

/// Default active-learning excitation frequencies, rad/s.
pub const DEFAULT_OMEGA_AL1: f64 = 2.0 * std::f64::consts::PI * 5.0;
pub const DEFAULT_OMEGA_AL2: f64 = 2.0 * std::f64::consts::PI * 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhasorError {
    #[error("mode list has {modes} entries but coefficient list has {coeffs}")]
    LengthMismatch { modes: usize, coeffs: usize },
    #[error("transfer phasor magnitude^2 {mag_sq:e} is at or below the singularity threshold {eps:e}")]
    SingularTransfer { mag_sq: f64, eps: f64 },
    #[error("active-learning excitation frequencies must be distinct")]
    EqualExcitationFrequencies,
    #[error("active-learning tuning factor and threshold must be positive")]
    NonPositiveExcitationTuning,
}

/// Sine/cosine coefficients of one harmonic. Units follow the housed signal.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhasorPair<S> {
    pub s: S,
    pub c: S,
}

impl<S: Real> PhasorPair<S> {
    pub fn new(s: S, c: S) -> Self {
        PhasorPair { s, c }
    }

    pub fn zero() -> Self {
        PhasorPair {
            s: S::zero(),
            c: S::zero(),
        }
    }

    pub fn norm_sq(&self) -> S {
        self.s * self.s + self.c * self.c
    }

    pub fn norm(&self) -> S {
        self.norm_sq().sqrt()
    }

    pub fn add(&self, o: &Self) -> Self {
        PhasorPair::new(self.s + o.s, self.c + o.c)
    }

    pub fn sub(&self, o: &Self) -> Self {
        PhasorPair::new(self.s - o.s, self.c - o.c)
    }

    pub fn scale(&self, k: S) -> Self {
        PhasorPair::new(self.s * k, self.c * k)
    }

    /// Amplitude and phase of `s*sin(phi) + c*cos(phi)` as `A*sin(phi + angle)`.
    pub fn amplitude(&self) -> S {
        self.norm()
    }

    pub fn angle(&self) -> S {
        self.c.atan2(self.s)
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.c.is_finite()
    }
}

/// Real/imaginary part of a transfer function at one frequency.
///
/// Induces the block matrix `G = [[x1, -x2], [x2, x1]]` acting on phasor
/// pairs; `G G^T = (x1^2 + x2^2) I`, so the smallest singular value is
/// `sqrt(x1^2 + x2^2)` and invertibility reduces to a magnitude check.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TransferPhasor<S> {
    pub x1: S,
    pub x2: S,
}

impl<S: Real> TransferPhasor<S> {
    pub fn new(x1: S, x2: S) -> Self {
        TransferPhasor { x1, x2 }
    }

    pub fn mag_sq(&self) -> S {
        self.x1 * self.x1 + self.x2 * self.x2
    }

    /// Phase of the underlying frequency-response value, radians.
    pub fn phase(&self) -> S {
        self.x2.atan2(self.x1)
    }

    /// `G * theta`.
    pub fn apply(&self, theta: &PhasorPair<S>) -> PhasorPair<S> {
        PhasorPair::new(
            self.x1 * theta.s - self.x2 * theta.c,
            self.x2 * theta.s + self.x1 * theta.c,
        )
    }

    /// `G^{-1} * theta`, with `G^{-1} = [[x1, x2], [-x2, x1]] / (x1^2+x2^2)`.
    pub fn solve(&self, theta: &PhasorPair<S>, eps_sing: S) -> Result<PhasorPair<S>, PhasorError> {
        let m = self.mag_sq();
        if !(m > eps_sing) {
            return Err(PhasorError::SingularTransfer {
                mag_sq: m.to_f64().unwrap_or(f64::NAN),
                eps: eps_sing.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(PhasorPair::new(
            (self.x1 * theta.s + self.x2 * theta.c) / m,
            (-self.x2 * theta.s + self.x1 * theta.c) / m,
        ))
    }

    /// Transfer estimate from an output change over an input change,
    /// i.e. the complex ratio `dy / du`. Used by finite-difference
    /// identification.
    pub fn from_ratio(
        dy: &PhasorPair<S>,
        du: &PhasorPair<S>,
        eps_sing: S,
    ) -> Result<Self, PhasorError> {
        let m = du.norm_sq();
        if !(m > eps_sing) {
            return Err(PhasorError::SingularTransfer {
                mag_sq: m.to_f64().unwrap_or(f64::NAN),
                eps: eps_sing.to_f64().unwrap_or(f64::NAN),
            });
        }
        // Phasor pairs compose like complex numbers s + j c under the block
        // matrices; the ratio follows the complex division rule.
        Ok(TransferPhasor::new(
            (dy.s * du.s + dy.c * du.c) / m,
            (dy.c * du.s - dy.s * du.c) / m,
        ))
    }

    /// Rotate the transfer phase by `angle` radians (magnitude preserved).
    pub fn rotated(&self, angle: S) -> Self {
        let (sa, ca) = angle.sin_cos();
        TransferPhasor::new(self.x1 * ca - self.x2 * sa, self.x1 * sa + self.x2 * ca)
    }
}

/// One controlled harmonic: order, instantaneous phase and the applied
/// controller output.
///
/// The phase is the discrete integral of `order * omega_el * ts`, wrapped to
/// `[0, 2*pi)`. Accumulating the measured electrical angle instead of using
/// `omega * k * ts` keeps the basis coherent through speed ramps.
#[derive(Clone, Copy, Debug)]
pub struct HarmonicMode<S> {
    pub order: u32,
    pub phase: S,
    pub theta_u: PhasorPair<S>,
}

impl<S: Real> HarmonicMode<S> {
    pub fn new(order: u32) -> Self {
        HarmonicMode {
            order,
            phase: S::zero(),
            theta_u: PhasorPair::zero(),
        }
    }

    pub fn with_phase(order: u32, phase: S) -> Self {
        HarmonicMode {
            order,
            phase: phase.rem_euclid(&S::TAU()),
            theta_u: PhasorPair::zero(),
        }
    }

    /// Advance by one sample of electrical-angle increment.
    pub fn advance(&mut self, d_theta_el: S) {
        let m = S::from_u32(self.order).expect("order fits scalar");
        self.phase = (self.phase + m * d_theta_el).rem_euclid(&S::TAU());
    }

    /// Basis vector `f = [sin(phase), cos(phase)]`; unit norm by construction.
    pub fn basis(&self) -> (S, S) {
        self.phase.sin_cos()
    }
}

/// `sum_i f_i^T theta_i` over the given modes: the harmonic steady-state
/// value of the coefficient set at the modes' current phases.
pub fn hss_eval<S: Real>(
    modes: &[HarmonicMode<S>],
    coeffs: &[PhasorPair<S>],
) -> Result<S, PhasorError> {
    if modes.len() != coeffs.len() {
        return Err(PhasorError::LengthMismatch {
            modes: modes.len(),
            coeffs: coeffs.len(),
        });
    }
    let mut y = S::zero();
    for (m, th) in modes.iter().zip(coeffs) {
        let (s, c) = m.basis();
        y += s * th.s + c * th.c;
    }
    Ok(y)
}

/// Cancellation law `theta_u = -G^{-1} theta_p`.
///
/// The caller is responsible for keeping the transfer estimate away from the
/// singularity (see the estimator's guard); at or below `eps_sing` this
/// returns an error instead of amplifying noise through a near-singular
/// solve.
pub fn control_law<S: Real>(
    g: &TransferPhasor<S>,
    theta_p: &PhasorPair<S>,
    eps_sing: S,
) -> Result<PhasorPair<S>, PhasorError> {
    let out = g.solve(theta_p, eps_sing)?;
    Ok(out.scale(-S::one()))
}

/// Excitation law `theta_u = G^{-1} (y_des - theta_p)`; with `y_des = 0`
/// it reduces to the cancellation law.
pub fn excitation_law<S: Real>(
    g: &TransferPhasor<S>,
    theta_p: &PhasorPair<S>,
    y_des: &PhasorPair<S>,
    eps_sing: S,
) -> Result<PhasorPair<S>, PhasorError> {
    g.solve(&y_des.sub(theta_p), eps_sing)
}

/// Active-learning excitation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveLearningConfig<S> {
    /// First excitation frequency, rad/s.
    pub omega1: S,
    /// Second excitation frequency, rad/s; must differ from `omega1`.
    pub omega2: S,
    /// Amplitude tuning factor, > 0.
    pub delta: S,
    /// Excitation-sufficiency threshold on `1 - rho`, > 0.
    pub eps_thr: S,
    /// Sample time, s.
    pub ts: S,
}

impl<S: Real> ActiveLearningConfig<S> {
    pub fn new(omega1: S, omega2: S, delta: S, eps_thr: S, ts: S) -> Result<Self, PhasorError> {
        if omega1 == omega2 {
            return Err(PhasorError::EqualExcitationFrequencies);
        }
        if !(delta > S::zero()) || !(eps_thr > S::zero()) {
            return Err(PhasorError::NonPositiveExcitationTuning);
        }
        Ok(ActiveLearningConfig {
            omega1,
            omega2,
            delta,
            eps_thr,
            ts,
        })
    }

    pub fn default_with_ts(ts: S) -> Self {
        ActiveLearningConfig {
            omega1: lit(DEFAULT_OMEGA_AL1),
            omega2: lit(DEFAULT_OMEGA_AL2),
            delta: S::one(),
            eps_thr: lit(0.1),
            ts,
        }
    }
}

/// Desired-output excitation signal for step `k`.
///
/// Two slow cosine tones with shared amplitude
/// `A = max(0, (eps_thr - (1-rho)) / eps_thr) * delta * delta_norm`:
/// the excitation fades out as the data become informative (`1-rho`
/// approaches the threshold) or as the learned correction `delta_norm`
/// vanishes.
pub fn excitation_signal<S: Real>(
    k: u64,
    cfg: &ActiveLearningConfig<S>,
    rho: S,
    delta_norm: S,
) -> PhasorPair<S> {
    let short = (cfg.eps_thr - (S::one() - rho)) / cfg.eps_thr;
    let a = short.max(S::zero()) * cfg.delta * delta_norm;
    if a == S::zero() {
        return PhasorPair::zero();
    }
    let t = S::from_u64(k).expect("step index fits scalar") * cfg.ts;
    PhasorPair::new((cfg.omega1 * t).cos() * a, (cfg.omega2 * t).cos() * a)
}
