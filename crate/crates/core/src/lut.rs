//! Feedforward parameter tables over operating points.
//!
//! The transfer estimate varies with rotor speed but not with torque, so it
//! lives in a one-dimensional table over speed. The disturbance phasor varies
//! with both speed and torque and lives in a two-dimensional table. Queries
//! interpolate linearly (bilinearly in 2-D) and extrapolate linearly from the
//! outermost cell, so every finite operating point has a well-defined value.
//! Online corrections are distributed to the enclosing cell's nodes with the
//! same weights the query would use, which keeps `query ∘ adapt` consistent.

use crate::linalg::{solve, Mat4, Vec4};
use crate::phasor::PhasorPair;
use crate::real::{lit, Real};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LutError {
    #[error("operating point must be finite with speed >= 0 (got speed {speed}, torque {torque})")]
    BadOperatingPoint { speed: f64, torque: f64 },
    #[error("grid must be strictly increasing with at least 2 points")]
    BadGrid,
    #[error("value count {values} does not match grid size {nodes}")]
    ValueCountMismatch { values: usize, nodes: usize },
    #[error("non-finite table value at index {0}")]
    NonFiniteValue(usize),
    #[error(
        "identification needs a full speed x torque factorial with >= 2 probes per node; \
         node (speed {speed}, torque {torque}) of order {order} has {got}"
    )]
    MissingProbes {
        order: u32,
        speed: f64,
        torque: f64,
        got: usize,
    },
    #[error(
        "rank-deficient identification data at order {order}, speed {speed}, torque {torque} \
         (probe excitations are not linearly independent)"
    )]
    RankDeficient { order: u32, speed: f64, torque: f64 },
    #[error("identification needs at least 2 distinct {axis} values, got {got}")]
    DegenerateAxis { axis: &'static str, got: usize },
    #[error("mode count mismatch: tables hold {have}, caller passed {got}")]
    ModeCountMismatch { have: usize, got: usize },
}

/// Speed/torque pair indexing the feedforward tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint<S> {
    /// Mechanical speed (rpm or p.u., as long as usage is consistent).
    pub speed: S,
    /// Torque (p.u.).
    pub torque: S,
}

impl<S: Real> OperatingPoint<S> {
    pub fn new(speed: S, torque: S) -> Result<Self, LutError> {
        if !speed.is_finite() || !torque.is_finite() || speed < S::zero() {
            return Err(LutError::BadOperatingPoint {
                speed: speed.to_f64().unwrap_or(f64::NAN),
                torque: torque.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(OperatingPoint { speed, torque })
    }
}

fn check_grid<S: Real>(grid: &[S]) -> Result<(), LutError> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|g| !g.is_finite())
    {
        return Err(LutError::BadGrid);
    }
    Ok(())
}

/// Cell index and local coordinate for 1-D interpolation on `grid`.
///
/// The index is clamped to the outermost cell; the coordinate is not, which
/// realizes linear extrapolation outside the grid.
fn cell_coord<S: Real>(grid: &[S], x: S) -> (usize, S) {
    let last_cell = grid.len() - 2;
    let mut i = 0;
    while i < last_cell && x >= grid[i + 1] {
        i += 1;
    }
    let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
    (i, t)
}

/// One mode's transfer estimate over the speed grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferLut<S> {
    speed_grid: Vec<S>,
    values: Vec<PhasorPair<S>>,
}

impl<S: Real> TransferLut<S> {
    pub fn new(speed_grid: Vec<S>, values: Vec<PhasorPair<S>>) -> Result<Self, LutError> {
        check_grid(&speed_grid)?;
        if values.len() != speed_grid.len() {
            return Err(LutError::ValueCountMismatch {
                values: values.len(),
                nodes: speed_grid.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LutError::NonFiniteValue(i));
        }
        Ok(TransferLut { speed_grid, values })
    }

    pub fn speed_grid(&self) -> &[S] {
        &self.speed_grid
    }

    pub fn values(&self) -> &[PhasorPair<S>] {
        &self.values
    }

    pub fn query(&self, speed: S) -> PhasorPair<S> {
        let (i, t) = cell_coord(&self.speed_grid, speed);
        let a = self.values[i];
        let b = self.values[i + 1];
        PhasorPair::new(
            a.s + (b.s - a.s) * t,
            a.c + (b.c - a.c) * t,
        )
    }

    /// Distribute `(1-rho)*beta*delta` onto the enclosing cell's nodes with
    /// the interpolation weights of `speed`. No-op when `rho >= 1` or the
    /// correction is zero.
    pub fn adapt(&mut self, speed: S, delta: PhasorPair<S>, rho: S, beta: S) {
        if rho >= S::one() || (delta.s == S::zero() && delta.c == S::zero()) {
            return;
        }
        let gain = (S::one() - rho) * beta;
        let (i, t) = cell_coord(&self.speed_grid, speed);
        for (node, w) in [(i, S::one() - t), (i + 1, t)] {
            self.values[node].s += gain * w * delta.s;
            self.values[node].c += gain * w * delta.c;
        }
    }
}

/// One mode's disturbance phasor over the (speed, torque) grid, row-major in
/// speed.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceLut<S> {
    speed_grid: Vec<S>,
    torque_grid: Vec<S>,
    values: Vec<PhasorPair<S>>,
}

impl<S: Real> DisturbanceLut<S> {
    pub fn new(
        speed_grid: Vec<S>,
        torque_grid: Vec<S>,
        values: Vec<PhasorPair<S>>,
    ) -> Result<Self, LutError> {
        check_grid(&speed_grid)?;
        check_grid(&torque_grid)?;
        let nodes = speed_grid.len() * torque_grid.len();
        if values.len() != nodes {
            return Err(LutError::ValueCountMismatch {
                values: values.len(),
                nodes,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LutError::NonFiniteValue(i));
        }
        Ok(DisturbanceLut {
            speed_grid,
            torque_grid,
            values,
        })
    }

    pub fn speed_grid(&self) -> &[S] {
        &self.speed_grid
    }

    pub fn torque_grid(&self) -> &[S] {
        &self.torque_grid
    }

    pub fn values(&self) -> &[PhasorPair<S>] {
        &self.values
    }

    fn at(&self, si: usize, tj: usize) -> PhasorPair<S> {
        self.values[si * self.torque_grid.len() + tj]
    }

    pub fn query(&self, op: OperatingPoint<S>) -> PhasorPair<S> {
        let (i, u) = cell_coord(&self.speed_grid, op.speed);
        let (j, v) = cell_coord(&self.torque_grid, op.torque);
        let w = [
            (S::one() - u) * (S::one() - v),
            (S::one() - u) * v,
            u * (S::one() - v),
            u * v,
        ];
        let n = [
            self.at(i, j),
            self.at(i, j + 1),
            self.at(i + 1, j),
            self.at(i + 1, j + 1),
        ];
        let mut out = PhasorPair::zero();
        for (w, n) in w.iter().zip(&n) {
            out.s += *w * n.s;
            out.c += *w * n.c;
        }
        out
    }

    pub fn adapt(&mut self, op: OperatingPoint<S>, delta: PhasorPair<S>, rho: S, beta: S) {
        if rho >= S::one() || (delta.s == S::zero() && delta.c == S::zero()) {
            return;
        }
        let gain = (S::one() - rho) * beta;
        let (i, u) = cell_coord(&self.speed_grid, op.speed);
        let (j, v) = cell_coord(&self.torque_grid, op.torque);
        let nt = self.torque_grid.len();
        let cells = [
            (i * nt + j, (S::one() - u) * (S::one() - v)),
            (i * nt + j + 1, (S::one() - u) * v),
            ((i + 1) * nt + j, u * (S::one() - v)),
            ((i + 1) * nt + j + 1, u * v),
        ];
        for (idx, w) in cells {
            self.values[idx].s += gain * w * delta.s;
            self.values[idx].c += gain * w * delta.c;
        }
    }
}

/// Both tables for one harmonic mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeTables<S> {
    pub order: u32,
    pub transfer: TransferLut<S>,
    pub disturbance: DisturbanceLut<S>,
}

/// The complete feedforward map: one table pair per controlled mode.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedforwardTables<S> {
    pub modes: Vec<ModeTables<S>>,
}

impl<S: Real> FeedforwardTables<S> {
    /// Per-mode feedforward 4-vector `(x1, x2, theta_ps, theta_pc)` at `op`.
    pub fn query(&self, op: OperatingPoint<S>) -> Vec<Vec4<S>> {
        let mut out = Vec::with_capacity(self.modes.len());
        self.query_into(op, &mut out);
        out
    }

    pub fn query_into(&self, op: OperatingPoint<S>, out: &mut Vec<Vec4<S>>) {
        out.clear();
        for mode in &self.modes {
            let g = mode.transfer.query(op.speed);
            let p = mode.disturbance.query(op);
            out.push([g.s, g.c, p.s, p.c]);
        }
    }

    /// Apply the gated correction `(1-rho)*beta*delta_x` for every mode.
    ///
    /// The transfer rows `(x1, x2)` always update along the speed axis (their
    /// table has no torque dependence); the disturbance rows update the
    /// enclosing 2-D cell.
    pub fn adapt(
        &mut self,
        op: OperatingPoint<S>,
        delta_x: &[Vec4<S>],
        rho: &[S],
        beta: S,
    ) -> Result<(), LutError> {
        if delta_x.len() != self.modes.len() || rho.len() != self.modes.len() {
            return Err(LutError::ModeCountMismatch {
                have: self.modes.len(),
                got: delta_x.len().min(rho.len()),
            });
        }
        for ((mode, dx), rho) in self.modes.iter_mut().zip(delta_x).zip(rho) {
            mode.transfer
                .adapt(op.speed, PhasorPair::new(dx[0], dx[1]), *rho, beta);
            mode.disturbance
                .adapt(op, PhasorPair::new(dx[2], dx[3]), *rho, beta);
        }
        Ok(())
    }
}

/// One recorded excitation/response pair from an identification experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRecord<S> {
    pub order: u32,
    pub op: OperatingPoint<S>,
    pub theta_u: PhasorPair<S>,
    pub response: PhasorPair<S>,
}

/// Build feedforward tables from recorded probe responses.
///
/// Per (order, speed, torque) node the steady-state response model
/// `Y = G(order) * theta_u + theta_p` is fit by least squares over all probes
/// recorded at that node; each probe contributes two equations. The
/// disturbance table takes the per-node `theta_p` directly; the transfer
/// table takes the per-speed mean of `G` over the torque nodes (the transfer
/// does not depend on torque, so averaging suppresses probe noise).
///
/// Probes must cover the full factorial of the speed and torque values
/// present in the log, with at least two linearly independent excitations per
/// node.
pub fn identify_offline<S: Real>(
    probes: &[ProbeRecord<S>],
) -> Result<FeedforwardTables<S>, LutError> {
    let mut orders: Vec<u32> = probes.iter().map(|p| p.order).collect();
    orders.sort_unstable();
    orders.dedup();

    let mut modes = Vec::with_capacity(orders.len());
    for order in orders {
        let of_order: Vec<&ProbeRecord<S>> = probes.iter().filter(|p| p.order == order).collect();
        let speed_grid = distinct_sorted(of_order.iter().map(|p| p.op.speed));
        let torque_grid = distinct_sorted(of_order.iter().map(|p| p.op.torque));
        if speed_grid.len() < 2 {
            return Err(LutError::DegenerateAxis {
                axis: "speed",
                got: speed_grid.len(),
            });
        }
        if torque_grid.len() < 2 {
            return Err(LutError::DegenerateAxis {
                axis: "torque",
                got: torque_grid.len(),
            });
        }

        let mut p_values = Vec::with_capacity(speed_grid.len() * torque_grid.len());
        let mut g_values = Vec::with_capacity(speed_grid.len());
        for &speed in &speed_grid {
            let mut g_mean: PhasorPair<S> = PhasorPair::zero();
            for &torque in &torque_grid {
                let node: Vec<&&ProbeRecord<S>> = of_order
                    .iter()
                    .filter(|p| p.op.speed == speed && p.op.torque == torque)
                    .collect();
                if node.len() < 2 {
                    return Err(LutError::MissingProbes {
                        order,
                        speed: speed.to_f64().unwrap_or(f64::NAN),
                        torque: torque.to_f64().unwrap_or(f64::NAN),
                        got: node.len(),
                    });
                }
                let z = fit_node(&node).ok_or(LutError::RankDeficient {
                    order,
                    speed: speed.to_f64().unwrap_or(f64::NAN),
                    torque: torque.to_f64().unwrap_or(f64::NAN),
                })?;
                g_mean.s += z[0];
                g_mean.c += z[1];
                p_values.push(PhasorPair::new(z[2], z[3]));
            }
            let nt = lit::<S>(torque_grid.len() as f64);
            g_values.push(PhasorPair::new(g_mean.s / nt, g_mean.c / nt));
        }

        modes.push(ModeTables {
            order,
            transfer: TransferLut::new(speed_grid.clone(), g_values)?,
            disturbance: DisturbanceLut::new(speed_grid, torque_grid, p_values)?,
        });
    }
    Ok(FeedforwardTables { modes })
}

fn distinct_sorted<S: Real>(values: impl Iterator<Item = S>) -> Vec<S> {
    let mut v: Vec<S> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite grid coordinates"));
    v.dedup();
    v
}

/// Normal-equations solve of the per-node linear model; `None` when the
/// probe excitations do not span two independent directions.
fn fit_node<S: Real>(node: &[&&ProbeRecord<S>]) -> Option<Vec4<S>> {
    let mut ata = Mat4::zero();
    let mut atb = [S::zero(); 4];
    for probe in node {
        let tu = probe.theta_u;
        let rows = [
            ([tu.s, -tu.c, S::one(), S::zero()], probe.response.s),
            ([tu.c, tu.s, S::zero(), S::one()], probe.response.c),
        ];
        for (a, b) in rows {
            for i in 0..4 {
                for j in 0..4 {
                    ata.m[i][j] += a[i] * a[j];
                }
                atb[i] += a[i] * b;
            }
        }
    }
    solve(&ata, &atb)
}
