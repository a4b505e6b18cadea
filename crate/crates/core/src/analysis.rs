//! Post-processing and certification: per-period harmonic extraction,
//! scalar performance indicators, and a numerical descent monitor for the
//! adaptive law.
//!
//! Harmonic amplitudes are extracted once per electrical period by a
//! single-bin Fourier projection. Samples are resampled to a uniform angle
//! grid first, because during speed ramps a uniform-in-time window smears
//! energy across neighboring orders. The descent monitor evaluates the
//! parameter-error Lyapunov function against its per-step decrease bound and
//! flags any step that violates it; running it over the exact
//! harmonic-steady-state plant turns the global-convergence claim into a
//! checkable numerical certificate.

use crate::estimator::{build_regressor, normalization, Estimator};
use crate::linalg::Vec4;
use crate::phasor::{control_law, HarmonicMode, PhasorPair, TransferPhasor};
use crate::plant::algebraic_hss_step;
use crate::real::{lit, Real};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("period window has {have} samples but needs at least {need} for order {order}")]
    TooFewSamples { have: usize, need: usize, order: u32 },
    #[error("electrical angle must increase strictly within the period window")]
    NonMonotonicAngle,
    #[error("period window must span one electrical period (got {got_rad} rad)")]
    BadSpan { got_rad: f64 },
    #[error("record carries {got} phasors for {have} orders")]
    PhasorCountMismatch { have: usize, got: usize },
    #[error("period timestamps must increase strictly")]
    NonMonotonicTime,
    #[error("amplitude series is empty")]
    EmptySeries,
    #[error("mode index {index} out of range for {have} orders")]
    BadModeIndex { index: usize, have: usize },
    #[error("indicator intervals must satisfy lo < hi")]
    BadInterval,
    #[error("descent scaling alpha = {alpha} must exceed gamma_g/2 + q*gamma_p = {minimum}")]
    AlphaTooSmall { alpha: f64, minimum: f64 },
    #[error("state vector count {got} does not match monitored mode count {have}")]
    StateCountMismatch { have: usize, got: usize },
    #[error("monitor must be started with the initial state before recording")]
    MonitorNotStarted,
}

/// Single-bin Fourier projection of one electrical period.
///
/// `theta_el` must increase strictly and span one period; the samples are
/// linearly resampled onto a uniform angle grid, then each requested order
/// `m` is projected onto `sin(m*theta)` and `cos(m*theta)`. The returned
/// pair `(s, c)` satisfies amplitude `= sqrt(s^2 + c^2) = 2|bin|/N`.
pub fn period_dft<S: Real>(
    theta_el: &[S],
    y: &[S],
    orders: &[u32],
) -> Result<Vec<PhasorPair<S>>, AnalysisError> {
    let n = theta_el.len();
    assert_eq!(n, y.len(), "angle and sample slices must pair up");
    for &order in orders {
        let need = 2 * order as usize;
        if n < need {
            return Err(AnalysisError::TooFewSamples {
                have: n,
                need,
                order,
            });
        }
    }
    if theta_el.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(AnalysisError::NonMonotonicAngle);
    }
    let span = theta_el[n - 1] - theta_el[0];
    if !(span > S::TAU() / lit::<S>(2.0)) || !(span < S::TAU()) {
        return Err(AnalysisError::BadSpan {
            got_rad: span.to_f64().unwrap_or(f64::NAN),
        });
    }

    let theta0 = theta_el[0];
    let nf = lit::<S>(n as f64);
    let mut acc: Vec<PhasorPair<S>> = vec![PhasorPair::zero(); orders.len()];
    let mut seg = 0usize;
    for i in 0..n {
        let target = theta0 + S::TAU() * lit::<S>(i as f64) / nf;
        // walk to the segment containing the target; the wrap segment closes
        // the period back to the first sample
        while seg + 1 < n && theta_el[seg + 1] <= target {
            seg += 1;
        }
        let yi = if seg + 1 < n {
            let t = (target - theta_el[seg]) / (theta_el[seg + 1] - theta_el[seg]);
            y[seg] + (y[seg + 1] - y[seg]) * t
        } else {
            let t = (target - theta_el[n - 1]) / (theta0 + S::TAU() - theta_el[n - 1]);
            y[n - 1] + (y[0] - y[n - 1]) * t
        };
        for (k, &order) in orders.iter().enumerate() {
            let (s, c) = (lit::<S>(order as f64) * target).sin_cos();
            acc[k].s += yi * s;
            acc[k].c += yi * c;
        }
    }
    let scale = lit::<S>(2.0) / nf;
    for a in &mut acc {
        *a = a.scale(scale);
    }
    Ok(acc)
}

/// One completed electrical period: end timestamp plus one phasor per order.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodRecord<S> {
    pub t: S,
    pub phasors: Vec<PhasorPair<S>>,
}

/// The per-period harmonic amplitude history of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HarmonicAmplitudeSeries<S> {
    orders: Vec<u32>,
    records: Vec<PeriodRecord<S>>,
}

impl<S: Real> HarmonicAmplitudeSeries<S> {
    pub fn new(orders: Vec<u32>) -> Self {
        HarmonicAmplitudeSeries {
            orders,
            records: Vec::new(),
        }
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn records(&self) -> &[PeriodRecord<S>] {
        &self.records
    }

    pub fn mode_index(&self, order: u32) -> Option<usize> {
        self.orders.iter().position(|&m| m == order)
    }

    pub fn push(&mut self, t: S, phasors: Vec<PhasorPair<S>>) -> Result<(), AnalysisError> {
        if phasors.len() != self.orders.len() {
            return Err(AnalysisError::PhasorCountMismatch {
                have: self.orders.len(),
                got: phasors.len(),
            });
        }
        if let Some(last) = self.records.last() {
            if !(t > last.t) {
                return Err(AnalysisError::NonMonotonicTime);
            }
        }
        self.records.push(PeriodRecord { t, phasors });
        Ok(())
    }

    /// `(t, amplitude)` pairs of one mode.
    pub fn amplitudes(&self, mode: usize) -> impl Iterator<Item = (S, S)> + '_ {
        self.records
            .iter()
            .map(move |r| (r.t, r.phasors[mode].amplitude()))
    }
}

/// Thresholds and windows for the scalar indicators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorConfig<S> {
    /// Amplitude threshold for the time-to-threshold indicator.
    pub threshold: S,
    /// Start of the "late maximum" window (s).
    pub after: S,
    /// First averaging interval (s).
    pub interval1: (S, S),
    /// Second averaging interval (s).
    pub interval2: (S, S),
}

impl<S: Real> Default for IndicatorConfig<S> {
    fn default() -> Self {
        IndicatorConfig {
            threshold: lit(0.05),
            after: lit(0.5),
            interval1: (lit(0.2), lit(0.5)),
            interval2: (lit(0.7), lit(1.0)),
        }
    }
}

/// The five scalar indicators of one mode's amplitude history.
///
/// `time_to_threshold` is `+inf` when the threshold is never reached;
/// windowed values are NaN when their window contains no completed period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorRecord<S> {
    pub time_to_threshold: S,
    pub mean: S,
    pub max_after: S,
    pub mean_interval1: S,
    pub mean_interval2: S,
}

pub fn indicators<S: Real>(
    series: &HarmonicAmplitudeSeries<S>,
    mode: usize,
    cfg: &IndicatorConfig<S>,
) -> Result<IndicatorRecord<S>, AnalysisError> {
    if series.records.is_empty() {
        return Err(AnalysisError::EmptySeries);
    }
    if mode >= series.orders.len() {
        return Err(AnalysisError::BadModeIndex {
            index: mode,
            have: series.orders.len(),
        });
    }
    if !(cfg.interval1.0 < cfg.interval1.1) || !(cfg.interval2.0 < cfg.interval2.1) {
        return Err(AnalysisError::BadInterval);
    }

    let mut time_to_threshold = S::infinity();
    let mut sum = S::zero();
    let mut max_after = S::nan();
    let mut windows = [
        (cfg.interval1, S::zero(), 0usize),
        (cfg.interval2, S::zero(), 0usize),
    ];
    for (t, amp) in series.amplitudes(mode) {
        if time_to_threshold.is_infinite() && amp <= cfg.threshold {
            time_to_threshold = t;
        }
        sum += amp;
        if t >= cfg.after && !(amp <= max_after) {
            max_after = amp;
        }
        for (window, acc, count) in &mut windows {
            if t >= window.0 && t <= window.1 {
                *acc += amp;
                *count += 1;
            }
        }
    }
    let window_mean = |(_, acc, count): (_, S, usize)| {
        if count == 0 {
            S::nan()
        } else {
            acc / lit::<S>(count as f64)
        }
    };
    Ok(IndicatorRecord {
        time_to_threshold,
        mean: sum / lit::<S>(series.records.len() as f64),
        max_after,
        mean_interval1: window_mean(windows[0]),
        mean_interval2: window_mean(windows[1]),
    })
}

/// The smallest scaling that doubles the descent condition's margin:
/// `2 * (gamma_g/2 + q*gamma_p)`.
pub fn default_alpha<S: Real>(gamma_g: S, gamma_p: S, q: usize) -> S {
    lit::<S>(2.0) * (gamma_g / lit::<S>(2.0) + lit::<S>(q as f64) * gamma_p)
}

/// One monitored adaptation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovRow<S> {
    /// Lyapunov value after the step.
    pub v: S,
    /// Change over the step.
    pub dv: S,
    /// Required decrease `-4*eta*(alpha - q*gamma_p - gamma_g/2)*y^2`.
    pub bound: S,
    pub violation: bool,
}

/// Evaluates the parameter-error Lyapunov function
/// `V = (2/gamma_p) sum ||theta_p_err||^2 + (1/gamma_g) sum ||G_err||_F^2`
/// around the scaled target `alpha * x_true` and checks the per-step
/// decrease bound with tolerance `1e-9 * max(1, V)`.
pub struct LyapunovMonitor<S> {
    target: Vec<Vec4<S>>,
    gamma_g: S,
    gamma_p: S,
    margin: S,
    prev_v: Option<S>,
    rows: Vec<LyapunovRow<S>>,
    violations: usize,
    max_excess: S,
}

impl<S: Real> LyapunovMonitor<S> {
    pub fn new(
        true_x: &[Vec4<S>],
        gamma_g: S,
        gamma_p: S,
        alpha: S,
    ) -> Result<Self, AnalysisError> {
        let q = lit::<S>(true_x.len() as f64);
        let minimum = gamma_g / lit::<S>(2.0) + q * gamma_p;
        if !(alpha > minimum) {
            return Err(AnalysisError::AlphaTooSmall {
                alpha: alpha.to_f64().unwrap_or(f64::NAN),
                minimum: minimum.to_f64().unwrap_or(f64::NAN),
            });
        }
        let target = true_x
            .iter()
            .map(|x| [alpha * x[0], alpha * x[1], alpha * x[2], alpha * x[3]])
            .collect();
        Ok(LyapunovMonitor {
            target,
            gamma_g,
            gamma_p,
            margin: alpha - q * gamma_p - gamma_g / lit::<S>(2.0),
            prev_v: None,
            rows: Vec::new(),
            violations: 0,
            max_excess: S::zero(),
        })
    }

    pub fn v_of(&self, x: &[Vec4<S>]) -> Result<S, AnalysisError> {
        if x.len() != self.target.len() {
            return Err(AnalysisError::StateCountMismatch {
                have: self.target.len(),
                got: x.len(),
            });
        }
        let two = lit::<S>(2.0);
        let mut v = S::zero();
        for (xi, ti) in x.iter().zip(&self.target) {
            let e = [xi[0] - ti[0], xi[1] - ti[1], xi[2] - ti[2], xi[3] - ti[3]];
            v += two / self.gamma_g * (e[0] * e[0] + e[1] * e[1]);
            v += two / self.gamma_p * (e[2] * e[2] + e[3] * e[3]);
        }
        Ok(v)
    }

    /// Register the state before the first adaptation step.
    pub fn start(&mut self, x0: &[Vec4<S>]) -> Result<(), AnalysisError> {
        self.prev_v = Some(self.v_of(x0)?);
        Ok(())
    }

    /// Record the state after one adaptation step driven by measurement `y`
    /// with normalization `eta`.
    pub fn record(
        &mut self,
        x_after: &[Vec4<S>],
        eta: S,
        y: S,
    ) -> Result<LyapunovRow<S>, AnalysisError> {
        let prev = self.prev_v.ok_or(AnalysisError::MonitorNotStarted)?;
        let v = self.v_of(x_after)?;
        let dv = v - prev;
        let bound = -lit::<S>(4.0) * eta * self.margin * y * y;
        let tol = lit::<S>(1.0e-9) * prev.max(S::one());
        let excess = dv - bound;
        let violation = excess > tol;
        if violation {
            self.violations += 1;
        }
        if excess > self.max_excess {
            self.max_excess = excess;
        }
        self.prev_v = Some(v);
        let row = LyapunovRow {
            v,
            dv,
            bound,
            violation,
        };
        self.rows.push(row);
        Ok(row)
    }

    pub fn rows(&self) -> &[LyapunovRow<S>] {
        &self.rows
    }

    pub fn violations(&self) -> usize {
        self.violations
    }

    pub fn max_excess(&self) -> S {
        self.max_excess
    }
}

/// Configuration of a certification run on the exact algebraic plant.
#[derive(Clone, Copy, Debug)]
pub struct CertificateConfig<S> {
    pub gamma_g: S,
    pub gamma_p: S,
    pub eps_sing: S,
    /// Descent scaling; `None` selects [`default_alpha`].
    pub alpha: Option<S>,
    pub steps: usize,
    /// Electrical angular speed (rad/s), held constant.
    pub omega_el: S,
    pub ts: S,
}

/// Summary of one certification run.
#[derive(Clone, Copy, Debug)]
pub struct CertificateOutcome<S> {
    pub violations: usize,
    pub max_excess: S,
    /// Peak |y| over the first electrical period.
    pub initial_envelope: S,
    /// Peak |y| over the last electrical period.
    pub tail_envelope: S,
    pub max_param_norm: S,
    pub max_theta_u_norm: S,
    pub guard_interventions: u64,
    /// Steps where a singular transfer estimate forced holding the previous
    /// controller output.
    pub singular_holds: u64,
    pub final_v: S,
}

/// Drive the adaptive law against the exact harmonic-steady-state plant and
/// monitor the Lyapunov descent bound at every step.
///
/// The controller applies the cancellation law from the current estimate, the
/// plant responds with zero transient, and the estimator adapts on the pair;
/// this is the regime in which the global-convergence statement is exact, so
/// any bound violation beyond rounding tolerance indicates a defect.
pub fn run_certificate<S: Real>(
    true_g: &[TransferPhasor<S>],
    true_theta_p: &[PhasorPair<S>],
    orders: &[u32],
    x0: &[Vec4<S>],
    cfg: &CertificateConfig<S>,
) -> Result<CertificateOutcome<S>, AnalysisError> {
    let q = orders.len();
    assert!(
        true_g.len() == q && true_theta_p.len() == q && x0.len() == q,
        "per-mode inputs must pair up with orders"
    );
    let true_x: Vec<Vec4<S>> = (0..q)
        .map(|i| {
            [
                true_g[i].x1,
                true_g[i].x2,
                true_theta_p[i].s,
                true_theta_p[i].c,
            ]
        })
        .collect();
    let alpha = cfg
        .alpha
        .unwrap_or_else(|| default_alpha(cfg.gamma_g, cfg.gamma_p, q));
    let mut monitor = LyapunovMonitor::new(&true_x, cfg.gamma_g, cfg.gamma_p, alpha)?;
    monitor.start(x0)?;

    let mut estimator = Estimator::with_initial(x0.to_vec(), cfg.gamma_g, cfg.gamma_p);
    estimator.eps_sing = cfg.eps_sing;
    let mut modes: Vec<HarmonicMode<S>> = orders.iter().map(|&m| HarmonicMode::new(m)).collect();
    let mut theta_u: Vec<PhasorPair<S>> = (0..q)
        .map(|i| {
            control_law(&estimator.transfer(i), &estimator.theta_p(i), cfg.eps_sing)
                .unwrap_or(PhasorPair::zero())
        })
        .collect();

    let d_theta = cfg.omega_el * cfg.ts;
    let period_steps = (S::TAU() / d_theta)
        .ceil()
        .to_usize()
        .unwrap_or(1)
        .max(1);
    let mut out = CertificateOutcome {
        violations: 0,
        max_excess: S::zero(),
        initial_envelope: S::zero(),
        tail_envelope: S::zero(),
        max_param_norm: S::zero(),
        max_theta_u_norm: S::zero(),
        guard_interventions: 0,
        singular_holds: 0,
        final_v: S::zero(),
    };
    let mut regressors: Vec<Vec4<S>> = vec![[S::zero(); 4]; q];

    for k in 0..cfg.steps {
        let y = algebraic_hss_step(true_g, true_theta_p, &theta_u, &modes)
            .expect("lengths verified above");
        if k < period_steps {
            out.initial_envelope = out.initial_envelope.max(y.abs());
        }
        if k + period_steps >= cfg.steps {
            out.tail_envelope = out.tail_envelope.max(y.abs());
        }

        for i in 0..q {
            regressors[i] = build_regressor(&modes[i], &theta_u[i]);
        }
        let eta = normalization(&theta_u);
        let step = estimator
            .adapt(y, &regressors, eta)
            .expect("finite algebraic response");
        out.guard_interventions += step.guard_interventions as u64;
        monitor.record(estimator.x(), eta, y)?;

        for i in 0..q {
            match control_law(&estimator.transfer(i), &estimator.theta_p(i), cfg.eps_sing) {
                Ok(tu) => theta_u[i] = tu,
                Err(_) => out.singular_holds += 1,
            }
            let norm_sq: S = estimator.x()[i].iter().map(|v| *v * *v).sum();
            out.max_param_norm = out.max_param_norm.max(norm_sq.sqrt());
            out.max_theta_u_norm = out.max_theta_u_norm.max(theta_u[i].norm());
            modes[i].advance(d_theta);
        }
    }
    out.violations = monitor.violations();
    out.max_excess = monitor.max_excess();
    out.final_v = monitor.v_of(estimator.x())?;
    Ok(out)
}
