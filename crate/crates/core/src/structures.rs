//! The three architectures wiring the harmonic controller into the current
//! loop.
//!
//! S1 injects a voltage after the current controller and hides the resulting
//! current response from it with a parallel model, so the nominal loop is
//! preserved exactly when the model is exact. S2 commands a current and
//! converts it to a voltage through a causal inverse machine model (one
//! sample of delay makes the differentiation realizable), subtracting the
//! commanded current from the controller's feedback. S3 simply adds the
//! harmonic current to the reference and needs no model at all.

use crate::plant::{psm_step, DqCurrents, DqVoltages, PsmParams};
use crate::real::Real;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error("inverse-model delay must be >= 1 sample to stay causal")]
    AcausalDelay,
    #[error("model mismatch factors must be strictly positive")]
    BadMismatchFactors,
}

/// Which architecture carries the harmonic actuation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureVariant {
    /// Voltage injection with parallel-model decoupling.
    S1Voltage,
    /// Current command through the inverse model, subtracted from feedback.
    S2MeasuredCurrent,
    /// Current command added to the reference.
    S3ReferenceCurrent,
}

/// Structure selection plus the model-fidelity knobs for robustness studies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureConfig<S> {
    pub variant: StructureVariant,
    /// Multiplicative error on the model resistance.
    pub r_hat_factor: S,
    /// Multiplicative error on the model inductances.
    pub l_hat_factor: S,
    /// Inverse-model input delay in samples (S2 only).
    pub delay_samples: usize,
}

impl<S: Real> StructureConfig<S> {
    pub fn exact(variant: StructureVariant) -> Self {
        StructureConfig {
            variant,
            r_hat_factor: S::one(),
            l_hat_factor: S::one(),
            delay_samples: 1,
        }
    }

    pub fn validate(&self) -> Result<(), StructureError> {
        if self.delay_samples < 1 {
            return Err(StructureError::AcausalDelay);
        }
        if !(self.r_hat_factor > S::zero()) || !(self.l_hat_factor > S::zero()) {
            return Err(StructureError::BadMismatchFactors);
        }
        Ok(())
    }
}

fn mismatch_model<S: Real>(plant: &PsmParams<S>, cfg: &StructureConfig<S>) -> PsmParams<S> {
    PsmParams {
        r: plant.r * cfg.r_hat_factor,
        l_d: plant.l_d * cfg.l_hat_factor,
        l_q: plant.l_q * cfg.l_hat_factor,
        psi_pm: plant.psi_pm,
        pole_pairs: plant.pole_pairs,
    }
}

/// Parallel machine-model copy predicting the current response to the
/// injected voltage alone (S1).
///
/// The model integrates the same explicit-Euler recursion as the plant but
/// without the magnet term: the injected-voltage response obeys the linear
/// part of the dynamics by superposition, so with exact parameters the
/// prediction equals the true deviation bit for bit.
#[derive(Clone, Debug)]
pub struct S1Decoupler<S> {
    model: PsmParams<S>,
    state: DqCurrents<S>,
}

impl<S: Real> S1Decoupler<S> {
    pub fn new(plant: &PsmParams<S>, cfg: &StructureConfig<S>) -> Self {
        let mut model = mismatch_model(plant, cfg);
        model.psi_pm = S::zero();
        S1Decoupler {
            model,
            state: DqCurrents::default(),
        }
    }

    /// Predicted current deviation caused by the injected voltage, aligned
    /// with the plant state of the current step. Add it back to the
    /// controller's feedback (equivalently subtract from the measurement).
    pub fn correction(&self) -> DqCurrents<S> {
        self.state
    }

    /// Advance the model with the voltage injected this step; call after the
    /// controller has consumed [`Self::correction`], with the same electrical
    /// speed the plant step uses.
    pub fn advance(&mut self, u_hc: DqVoltages<S>, omega_el: S, ts: S) {
        self.state = psm_step(&self.model, self.state, u_hc, omega_el, ts);
    }
}

/// Voltages computed by the causal inverse model for this step, plus the
/// current that physically enters the plant and must be hidden from the
/// feedback.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct S2Wire<S> {
    pub u_hc: DqVoltages<S>,
    /// Delayed harmonic current; subtract from the controller's q-axis
    /// feedback.
    pub i_hc_delayed: S,
}

/// Causal inverse machine model (S2).
///
/// The commanded harmonic current is delayed by `d >= 1` samples; the inverse
/// then knows the next target value and can realize the exact discrete
/// derivative the plant's Euler recursion expects:
/// `u_q = R_hat tau_k + L_hat (tau_{k+1} - tau_k) / ts`, with
/// `u_d = -omega_el L_hat tau_k` cancelling the rotational cross-coupling so
/// the d axis stays untouched.
#[derive(Clone, Debug)]
pub struct S2Inverse<S> {
    model: PsmParams<S>,
    pending: VecDeque<S>,
    tau: S,
}

impl<S: Real> S2Inverse<S> {
    pub fn new(plant: &PsmParams<S>, cfg: &StructureConfig<S>) -> Result<Self, StructureError> {
        cfg.validate()?;
        Ok(S2Inverse {
            model: mismatch_model(plant, cfg),
            // d-1 zeros in flight puts the first commanded sample into the
            // plant exactly d steps after it was commanded
            pending: std::iter::repeat(S::zero())
                .take(cfg.delay_samples - 1)
                .collect(),
            tau: S::zero(),
        })
    }

    /// Convert the harmonic current commanded this step into injection
    /// voltages.
    pub fn wire(&mut self, i_hc: S, omega_el: S, ts: S) -> S2Wire<S> {
        self.pending.push_back(i_hc);
        let tau_next = self.pending.pop_front().expect("queue never empty after push");
        let tau = self.tau;
        let u_hc = DqVoltages {
            d: -omega_el * self.model.l_q * tau,
            q: self.model.r * tau + self.model.l_q * (tau_next - tau) / ts,
        };
        self.tau = tau_next;
        S2Wire {
            u_hc,
            i_hc_delayed: tau,
        }
    }
}

/// Reference-current injection (S3): the harmonic current simply adds to the
/// q-axis reference.
pub fn s3_wire<S: Real>(i_ref_q: S, i_hc: S) -> S {
    i_ref_q + i_hc
}
