//! Convergence-quality evaluation via dynamic regressor extension.
//!
//! The raw per-sample regression is rank one, so parameter convergence
//! cannot be judged from it. Filtering the scalar measurement and the
//! regressor through a small bank of distinct first-order low-passes yields
//! an extended regression whose Hessian has full rank exactly when the data
//! are informative. The smallest/largest Hessian eigenvalues give a per-step
//! contraction estimate `rho`; `rho < 1` gates feedforward-table adaptation
//! and active learning. The extended system is used for this diagnosis only,
//! never inside the control law.

use crate::linalg::{sym_eigenvalues, Mat4, Vec4};
use crate::real::{lit, Real};
use thiserror::Error;

/// Default filter time constants: distinct, stable, spanning about a decade
/// of bandwidth.
pub const DEFAULT_TIME_CONSTANTS: [f64; 3] = [0.90, 0.95, 0.99];

/// Relative eigenvalue floor below which the Hessian is treated as rank
/// deficient (no usable information in that direction).
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("filter time constants must be pairwise distinct and inside (0,1)")]
    BadTimeConstants,
    #[error("hessian input must be symmetric (max asymmetry {0:e})")]
    AsymmetricHessian(f64),
}

/// First-order filter bank state for one harmonic mode.
///
/// Channel 0 is the identity; channels 1..3 run
/// `out_k = T_l * out_{k-1} + (1 - T_l) * in_k`, the unit-DC-gain form of
/// `H_l(z) = (1 - T_l) z / (z - T_l)`. The scalar channel accumulates the
/// filtered measurement `psi`; the vector channel accumulates the filtered
/// regressor rows `Phi`.
#[derive(Clone, Debug)]
pub struct DreFilterBank<S> {
    t: [S; 3],
    psi: Vec4<S>,
    phi: [[S; 4]; 4],
}

impl<S: Real> DreFilterBank<S> {
    pub fn new(t: [S; 3]) -> Result<Self, QualityError> {
        let ok = t.iter().all(|x| *x > S::zero() && *x < S::one())
            && t[0] != t[1]
            && t[0] != t[2]
            && t[1] != t[2];
        if !ok {
            return Err(QualityError::BadTimeConstants);
        }
        Ok(DreFilterBank {
            t,
            psi: [S::zero(); 4],
            phi: [[S::zero(); 4]; 4],
        })
    }

    pub fn with_defaults() -> Self {
        DreFilterBank::new([
            lit(DEFAULT_TIME_CONSTANTS[0]),
            lit(DEFAULT_TIME_CONSTANTS[1]),
            lit(DEFAULT_TIME_CONSTANTS[2]),
        ])
        .expect("default time constants are valid")
    }

    pub fn reset(&mut self) {
        self.psi = [S::zero(); 4];
        self.phi = [[S::zero(); 4]; 4];
    }

    /// Advance the bank by one sample and return the extended measurement
    /// `psi` and extended regressor matrix `Phi` (row `l` = channel `l`
    /// applied to `w`).
    pub fn step(&mut self, y: S, w: &Vec4<S>) -> (Vec4<S>, Mat4<S>) {
        self.psi[0] = y;
        self.phi[0] = *w;
        for l in 0..3 {
            let t = self.t[l];
            let one_minus = S::one() - t;
            self.psi[l + 1] = t * self.psi[l + 1] + one_minus * y;
            for j in 0..4 {
                self.phi[l + 1][j] = t * self.phi[l + 1][j] + one_minus * w[j];
            }
        }
        (self.psi, Mat4 { m: self.phi })
    }

    pub fn psi(&self) -> Vec4<S> {
        self.psi
    }

    pub fn phi(&self) -> Mat4<S> {
        Mat4 { m: self.phi }
    }
}

/// Extended-cost Hessian `eta * Phi^T Phi`; symmetric PSD by construction.
pub fn hessian<S: Real>(phi: &Mat4<S>, eta: S) -> Mat4<S> {
    phi.gram().scale(eta)
}

/// Convergence-quality numbers for one mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityEntry<S> {
    /// Estimated per-step contraction factor; 1 means "no information".
    pub rho: S,
    /// Smallest Hessian eigenvalue (clamped to >= 0).
    pub mu: S,
    /// Largest Hessian eigenvalue.
    pub l_max: S,
}

impl<S: Real> QualityEntry<S> {
    pub fn no_information() -> Self {
        QualityEntry {
            rho: S::one(),
            mu: S::zero(),
            l_max: S::zero(),
        }
    }
}

/// `rho = 1 - 2 min(gamma_g, gamma_p) * mu * L / (mu + L)` from the extreme
/// Hessian eigenvalues; `rho = 1` when the Hessian carries no information
/// (`L = 0` or numerically rank deficient).
pub fn convergence_rate<S: Real>(
    h: &Mat4<S>,
    gamma_g: S,
    gamma_p: S,
) -> Result<QualityEntry<S>, QualityError> {
    let asym = h.asymmetry();
    let scale = h.max_abs().max(S::one());
    if asym > scale * lit(1.0e-9) {
        return Err(QualityError::AsymmetricHessian(
            asym.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let ev = sym_eigenvalues(h);
    let l_max = ev[3].max(S::zero());
    let mut mu = ev[0].max(S::zero());
    if mu < l_max * lit(RANK_TOL) {
        mu = S::zero();
    }
    let rho = if l_max == S::zero() || mu == S::zero() {
        S::one()
    } else {
        let min_gain = gamma_g.min(gamma_p);
        S::one() - lit::<S>(2.0) * min_gain * mu * l_max / (mu + l_max)
    };
    Ok(QualityEntry { rho, mu, l_max })
}
