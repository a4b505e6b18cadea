//! Frequency-domain benchmark controller.
//!
//! The classic scheme against which the time-domain adaptive loop is
//! measured: harmonic phasors of the acceleration signal are extracted once
//! per update window (an integer number of electrical periods), the transfer
//! estimate is refreshed by finite differences between consecutive windows,
//! and the command phasors move one Newton-like step
//! `theta_u <- theta_u - mu * G_hat^{-1} Y`. Between updates the command is
//! held, so actuation is piecewise constant at period cadence rather than
//! sample cadence.

use crate::phasor::{PhasorPair, TransferPhasor};
use crate::real::Real;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdError {
    #[error("frequency-domain controller needs at least one mode")]
    EmptyModes,
    #[error("expected {have} mode phasors, got {got}")]
    ModeCountMismatch { have: usize, got: usize },
    #[error("invalid frequency-domain gain configuration: {0}")]
    BadConfig(&'static str),
}

/// Gains and cadence of the benchmark law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig<S> {
    /// Newton-step size on the command phasor, in (0, 1].
    pub mu: S,
    /// Relaxation gain of the finite-difference transfer refresh, in [0, 1].
    pub mu_g: S,
    /// Electrical periods per update window.
    pub update_periods: u32,
    /// Minimum squared transfer magnitude accepted by the inversion.
    pub eps_sing: S,
    /// Minimum command change accepted as a finite-difference probe.
    pub min_probe_norm: S,
}

impl<S: Real> FdConfig<S> {
    pub fn validate(&self) -> Result<(), FdError> {
        if !(self.mu > S::zero()) || self.mu > S::one() {
            return Err(FdError::BadConfig("mu must lie in (0, 1]"));
        }
        if !(self.mu_g >= S::zero()) || self.mu_g > S::one() {
            return Err(FdError::BadConfig("mu_g must lie in [0, 1]"));
        }
        if self.update_periods < 1 {
            return Err(FdError::BadConfig("update window must span >= 1 period"));
        }
        if !(self.eps_sing > S::zero()) || !(self.min_probe_norm > S::zero()) {
            return Err(FdError::BadConfig("thresholds must be strictly positive"));
        }
        Ok(())
    }
}

impl<S: Real> Default for FdConfig<S> {
    fn default() -> Self {
        FdConfig {
            mu: crate::real::lit(0.8),
            mu_g: crate::real::lit(0.5),
            update_periods: 1,
            eps_sing: crate::real::lit(1e-6),
            min_probe_norm: crate::real::lit(1e-4),
        }
    }
}

/// What a period hand-off did.
#[derive(Clone, Debug, PartialEq)]
pub struct FdStep<S> {
    /// True when this period closed an update window and the law ran.
    pub updated: bool,
    /// Window-mean measurement phasors, present when `updated`.
    pub window_y: Option<Vec<PhasorPair<S>>>,
    /// True when the inversion was skipped for at least one mode.
    pub held_singular: bool,
}

#[derive(Clone, Debug)]
pub struct FdController<S> {
    cfg: FdConfig<S>,
    g_hat: Vec<TransferPhasor<S>>,
    theta_u: Vec<PhasorPair<S>>,
    /// Command and measurement of the last completed window, pairing the
    /// response with the command that produced it.
    prev: Option<(Vec<PhasorPair<S>>, Vec<PhasorPair<S>>)>,
    acc: Vec<PhasorPair<S>>,
    periods_in_window: u32,
    singular_holds: u64,
    updates: u64,
}

impl<S: Real> FdController<S> {
    pub fn new(initial_g: Vec<TransferPhasor<S>>, cfg: FdConfig<S>) -> Result<Self, FdError> {
        cfg.validate()?;
        if initial_g.is_empty() {
            return Err(FdError::EmptyModes);
        }
        let n = initial_g.len();
        Ok(FdController {
            cfg,
            g_hat: initial_g,
            theta_u: vec![PhasorPair::zero(); n],
            prev: None,
            acc: vec![PhasorPair::zero(); n],
            periods_in_window: 0,
            singular_holds: 0,
            updates: 0,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.g_hat.len()
    }

    /// Command phasors currently held; constant between window closes.
    pub fn theta_u(&self) -> &[PhasorPair<S>] {
        &self.theta_u
    }

    pub fn g_hat(&self) -> &[TransferPhasor<S>] {
        &self.g_hat
    }

    pub fn singular_holds(&self) -> u64 {
        self.singular_holds
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Hand over the phasors extracted from one completed electrical period.
    pub fn on_period(&mut self, phasors: &[PhasorPair<S>]) -> Result<FdStep<S>, FdError> {
        if phasors.len() != self.g_hat.len() {
            return Err(FdError::ModeCountMismatch {
                have: self.g_hat.len(),
                got: phasors.len(),
            });
        }
        for (a, p) in self.acc.iter_mut().zip(phasors) {
            *a = a.add(p);
        }
        self.periods_in_window += 1;
        if self.periods_in_window < self.cfg.update_periods {
            return Ok(FdStep {
                updated: false,
                window_y: None,
                held_singular: false,
            });
        }
        let inv_n = S::one() / S::from_u32(self.periods_in_window).expect("small int");
        let y: Vec<PhasorPair<S>> = self.acc.iter().map(|a| a.scale(inv_n)).collect();
        for a in self.acc.iter_mut() {
            *a = PhasorPair::zero();
        }
        self.periods_in_window = 0;
        let held = self.apply_update(y.clone());
        self.updates += 1;
        Ok(FdStep {
            updated: true,
            window_y: Some(y),
            held_singular: held,
        })
    }

    fn apply_update(&mut self, y: Vec<PhasorPair<S>>) -> bool {
        let active = self.theta_u.clone();
        if let Some((th_prev, y_prev)) = &self.prev {
            for i in 0..self.g_hat.len() {
                let dth = active[i].sub(&th_prev[i]);
                if dth.norm() <= self.cfg.min_probe_norm {
                    continue;
                }
                let dy = y[i].sub(&y_prev[i]);
                if let Ok(ratio) = TransferPhasor::from_ratio(&dy, &dth, self.cfg.eps_sing) {
                    let g = &mut self.g_hat[i];
                    g.x1 += self.cfg.mu_g * (ratio.x1 - g.x1);
                    g.x2 += self.cfg.mu_g * (ratio.x2 - g.x2);
                }
            }
        }
        let mut held = false;
        for i in 0..self.g_hat.len() {
            match self.g_hat[i].solve(&y[i], self.cfg.eps_sing) {
                Ok(correction) => {
                    self.theta_u[i] = self.theta_u[i].sub(&correction.scale(self.cfg.mu));
                }
                Err(_) => {
                    self.singular_holds += 1;
                    held = true;
                }
            }
        }
        self.prev = Some((active, y));
        held
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::period_dft;
    use crate::phasor::HarmonicMode;
    use crate::plant::algebraic_hss_step;
    use std::f64::consts::TAU;

    fn cfg() -> FdConfig<f64> {
        FdConfig::default()
    }

    #[test]
    fn config_rejects_bad_gains() {
        let mut c = cfg();
        c.mu = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.mu = 1.5;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.mu_g = -0.1;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.update_periods = 0;
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
        assert!(FdController::<f64>::new(vec![], cfg()).is_err());
    }

    #[test]
    fn zero_measurement_leaves_command_unchanged() {
        let mut fd = FdController::new(vec![TransferPhasor::new(0.8, 0.3)], cfg()).unwrap();
        for _ in 0..5 {
            let step = fd.on_period(&[PhasorPair::zero()]).unwrap();
            assert!(step.updated);
            assert!(!step.held_singular);
            assert_eq!(fd.theta_u()[0], PhasorPair::zero());
        }
        assert_eq!(fd.g_hat()[0], TransferPhasor::new(0.8, 0.3));
    }

    #[test]
    fn mode_count_is_enforced() {
        let mut fd = FdController::new(vec![TransferPhasor::new(1.0, 0.0)], cfg()).unwrap();
        let err = fd
            .on_period(&[PhasorPair::zero(), PhasorPair::zero()])
            .unwrap_err();
        assert_eq!(err, FdError::ModeCountMismatch { have: 1, got: 2 });
    }

    #[test]
    fn window_of_three_periods_updates_on_the_third() {
        let mut c = cfg();
        c.update_periods = 3;
        let mut fd = FdController::new(vec![TransferPhasor::new(1.0, 0.0)], c).unwrap();
        let y = PhasorPair::new(0.3, 0.0);
        assert!(!fd.on_period(&[y]).unwrap().updated);
        assert!(!fd.on_period(&[y]).unwrap().updated);
        let before = fd.theta_u()[0];
        assert_eq!(before, PhasorPair::zero());
        let step = fd.on_period(&[y]).unwrap();
        assert!(step.updated);
        // the window mean of a constant is that constant, to rounding
        assert!(step.window_y.unwrap()[0].sub(&y).norm() < 1e-15);
        assert!(fd.theta_u()[0].sub(&before).norm() > 0.1);
    }

    #[test]
    fn exact_transfer_and_full_step_cancel_in_one_update() {
        // Algebraic steady-state plant, exact transfer estimate, mu = 1: the
        // first update lands on the exact cancellation point, so the next
        // window measures nothing.
        let g = TransferPhasor::new(0.8, 0.3);
        let p = PhasorPair::new(0.25, -0.15);
        let mut c = cfg();
        c.mu = 1.0;
        let mut fd = FdController::new(vec![g], c).unwrap();
        let n = 180usize;
        let run_window = |fd: &mut FdController<f64>| -> PhasorPair<f64> {
            let mut mode = [HarmonicMode::new(12)];
            let mut thetas = Vec::new();
            let mut ys = Vec::new();
            for k in 0..n {
                let theta_el = TAU * k as f64 / n as f64;
                mode[0].advance(if k == 0 { 0.0 } else { TAU / n as f64 });
                let y =
                    algebraic_hss_step(&[g], &[p], &[fd.theta_u()[0]], &mode).unwrap();
                thetas.push(theta_el);
                ys.push(y);
            }
            let phasors = period_dft(&thetas, &ys, &[12]).unwrap();
            let step = fd.on_period(&phasors).unwrap();
            step.window_y.unwrap()[0]
        };
        let y1 = run_window(&mut fd);
        assert!((y1.norm() - p.norm()).abs() < 1e-9, "open loop sees p");
        let expected = g.solve(&p, 1e-9).unwrap().scale(-1.0);
        assert!(fd.theta_u()[0].sub(&expected).norm() < 1e-9);
        let y2 = run_window(&mut fd);
        assert!(y2.norm() < 1e-9, "second window must be silent: {}", y2.norm());
    }

    #[test]
    fn sinusoid_amplitude_is_extracted_through_the_period_chain() {
        let amp = 0.37;
        let phase = 1.1;
        let n = 240usize;
        let mut thetas = Vec::new();
        let mut ys = Vec::new();
        for k in 0..n {
            let theta_el = TAU * k as f64 / n as f64;
            thetas.push(theta_el);
            ys.push(amp * (12.0 * theta_el + phase).sin());
        }
        let phasors = period_dft(&thetas, &ys, &[12]).unwrap();
        let mut fd = FdController::new(vec![TransferPhasor::new(1.0, 0.0)], cfg()).unwrap();
        let step = fd.on_period(&phasors).unwrap();
        let y = step.window_y.unwrap()[0];
        assert!((y.norm() - amp).abs() < 1e-9);
    }

    #[test]
    fn singular_estimate_holds_command_and_counts() {
        let mut fd =
            FdController::new(vec![TransferPhasor::new(1e-9, 0.0)], cfg()).unwrap();
        let y = PhasorPair::new(0.2, 0.1);
        let step = fd.on_period(&[y]).unwrap();
        assert!(step.updated);
        assert!(step.held_singular);
        assert_eq!(fd.singular_holds(), 1);
        assert_eq!(fd.theta_u()[0], PhasorPair::zero());
    }

    #[test]
    fn finite_difference_refresh_repairs_a_rotated_estimate() {
        // True transfer rotated 120 degrees away from the initial estimate:
        // the damped law still probes, the finite-difference refresh turns
        // the estimate toward truth, and the loop converges.
        let g_true = TransferPhasor::new(0.8, 0.3);
        let p = PhasorPair::new(0.25, -0.15);
        let g0 = g_true.rotated(120f64.to_radians());
        let mut c = cfg();
        c.mu = 0.4;
        c.mu_g = 0.7;
        let mut fd = FdController::new(vec![g0], c).unwrap();
        let n = 180usize;
        let mut last_norm = f64::INFINITY;
        for window in 0..40 {
            let mut mode = [HarmonicMode::new(12)];
            let mut thetas = Vec::new();
            let mut ys = Vec::new();
            for k in 0..n {
                let theta_el = TAU * k as f64 / n as f64;
                mode[0].advance(if k == 0 { 0.0 } else { TAU / n as f64 });
                let y =
                    algebraic_hss_step(&[g_true], &[p], &[fd.theta_u()[0]], &mode).unwrap();
                thetas.push(theta_el);
                ys.push(y);
            }
            let phasors = period_dft(&thetas, &ys, &[12]).unwrap();
            let step = fd.on_period(&phasors).unwrap();
            last_norm = step.window_y.unwrap()[0].norm();
            if window > 2 {
                // after the first probe windows the estimate should be close
                // enough that the Newton direction is a descent direction
                let err = fd.g_hat()[0];
                let dot = err.x1 * g_true.x1 + err.x2 * g_true.x2;
                assert!(dot > 0.0, "estimate should land in the true half-plane");
            }
        }
        assert!(last_norm < 1e-6, "closed loop must converge: {last_norm}");
        let gerr = (fd.g_hat()[0].x1 - g_true.x1).hypot(fd.g_hat()[0].x2 - g_true.x2);
        assert!(gerr < 0.05, "transfer estimate must be repaired: {gerr}");
    }
}
