//! CSV readers and writers for traces, per-period amplitudes, indicator
//! tables, feedforward tables and probe logs.
//!
//! All floats are written with 17 significant digits, enough to reproduce the
//! exact bit pattern when parsed back, so files written from identical runs
//! are byte-identical and table round-trips are lossless. Fields never
//! contain commas, so no quoting is used anywhere.

use crate::analysis::{HarmonicAmplitudeSeries, IndicatorRecord};
use crate::lut::{
    DisturbanceLut, FeedforwardTables, LutError, ModeTables, OperatingPoint, ProbeRecord,
    TransferLut,
};
use crate::phasor::PhasorPair;
use crate::sim::SimTrace;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    BadLayout { path: String, msg: String },
    #[error(transparent)]
    Lut(#[from] LutError),
}

/// Render one float with full round-trip precision.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64, IoError> {
    field.trim().parse::<f64>().map_err(|_| IoError::Parse {
        path: path.display().to_string(),
        line,
        msg: format!("expected a number, got {field:?}"),
    })
}

fn parse_int<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T, IoError> {
    field.trim().parse::<T>().map_err(|_| IoError::Parse {
        path: path.display().to_string(),
        line,
        msg: format!("expected an integer, got {field:?}"),
    })
}

fn expect_columns(
    path: &Path,
    line: usize,
    fields: &[&str],
    want: usize,
) -> Result<(), IoError> {
    if fields.len() != want {
        return Err(IoError::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("expected {want} columns, got {}", fields.len()),
        });
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, IoError> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn write_atomically(path: &Path, content: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

/// Write the sample trace. One row per kept sample; per-mode columns are
/// prefixed `m{order}_`.
pub fn write_trace(path: &Path, trace: &SimTrace) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("t_s,speed_rpm,torque_pu,i_d_a,i_q_a,u_d_v,u_q_v,y,eta");
    for m in &trace.modes {
        let o = m.order;
        let _ = write!(
            out,
            ",m{o}_x1,m{o}_x2,m{o}_x3,m{o}_x4,m{o}_dx1,m{o}_dx2,m{o}_dx3,m{o}_dx4,m{o}_theta_us,m{o}_theta_uc,m{o}_rho"
        );
    }
    out.push('\n');
    for row in 0..trace.len() {
        let base = [
            trace.t[row],
            trace.speed_rpm[row],
            trace.torque_pu[row],
            trace.i_d[row],
            trace.i_q[row],
            trace.u_d[row],
            trace.u_q[row],
            trace.y[row],
            trace.eta[row],
        ];
        let mut first = true;
        for v in base {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&fmt_float(v));
        }
        for m in &trace.modes {
            for j in 0..4 {
                out.push(',');
                out.push_str(&fmt_float(m.x[j][row]));
            }
            for j in 0..4 {
                out.push(',');
                out.push_str(&fmt_float(m.dx[j][row]));
            }
            out.push(',');
            out.push_str(&fmt_float(m.theta_u_s[row]));
            out.push(',');
            out.push_str(&fmt_float(m.theta_u_c[row]));
            out.push(',');
            out.push_str(&fmt_float(m.rho[row]));
        }
        out.push('\n');
    }
    write_atomically(path, &out)
}

/// Write per-period harmonic amplitudes and phasor components.
pub fn write_periods(path: &Path, series: &HarmonicAmplitudeSeries<f64>) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("t_s");
    for o in series.orders() {
        let _ = write!(out, ",m{o}_amp,m{o}_s,m{o}_c");
    }
    out.push('\n');
    for rec in series.records() {
        out.push_str(&fmt_float(rec.t));
        for p in &rec.phasors {
            let _ = write!(
                out,
                ",{},{},{}",
                fmt_float(p.amplitude()),
                fmt_float(p.s),
                fmt_float(p.c)
            );
        }
        out.push('\n');
    }
    write_atomically(path, &out)
}

/// One labelled indicator set, as stored in `indicators.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorRow {
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub order: u32,
    pub rec: IndicatorRecord<f64>,
}

pub const INDICATOR_HEADER: &str =
    "scenario,controller,seed,order,time_to_threshold_s,mean,max_after,mean_interval1,mean_interval2";

pub fn write_indicators(path: &Path, rows: &[IndicatorRow]) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str(INDICATOR_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.controller,
            r.seed,
            r.order,
            fmt_float(r.rec.time_to_threshold),
            fmt_float(r.rec.mean),
            fmt_float(r.rec.max_after),
            fmt_float(r.rec.mean_interval1),
            fmt_float(r.rec.mean_interval2),
        );
    }
    write_atomically(path, &out)
}

pub fn read_indicators(path: &Path) -> Result<Vec<IndicatorRow>, IoError> {
    let lines = read_lines(path)?;
    if lines.first().map(|l| l.trim()) != Some(INDICATOR_HEADER) {
        return Err(IoError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "unrecognized indicator header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        expect_columns(path, lineno, &f, 9)?;
        rows.push(IndicatorRow {
            scenario: f[0].to_string(),
            controller: f[1].to_string(),
            seed: parse_int(path, lineno, f[2])?,
            order: parse_int(path, lineno, f[3])?,
            rec: IndicatorRecord {
                time_to_threshold: parse_f64(path, lineno, f[4])?,
                mean: parse_f64(path, lineno, f[5])?,
                max_after: parse_f64(path, lineno, f[6])?,
                mean_interval1: parse_f64(path, lineno, f[7])?,
                mean_interval2: parse_f64(path, lineno, f[8])?,
            },
        });
    }
    Ok(rows)
}

fn transfer_file(dir: &Path, order: u32) -> PathBuf {
    dir.join(format!("transfer_m{order}.csv"))
}

fn disturbance_file(dir: &Path, order: u32) -> PathBuf {
    dir.join(format!("disturbance_m{order}.csv"))
}

/// Persist the feedforward tables: per mode one `transfer_m{order}.csv`
/// (`speed_rpm,x1,x2`) and one `disturbance_m{order}.csv`
/// (`speed_rpm,torque_pu,theta_ps,theta_pc`, nodes row-major in speed).
pub fn save_tables(dir: &Path, tables: &FeedforwardTables<f64>) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    for mode in &tables.modes {
        let mut out = String::from("speed_rpm,x1,x2\n");
        for (speed, g) in mode
            .transfer
            .speed_grid()
            .iter()
            .zip(mode.transfer.values())
        {
            let _ = writeln!(out, "{},{},{}", fmt_float(*speed), fmt_float(g.s), fmt_float(g.c));
        }
        write_atomically(&transfer_file(dir, mode.order), &out)?;

        let mut out = String::from("speed_rpm,torque_pu,theta_ps,theta_pc\n");
        let torques = mode.disturbance.torque_grid();
        for (si, speed) in mode.disturbance.speed_grid().iter().enumerate() {
            for (tj, torque) in torques.iter().enumerate() {
                let v = mode.disturbance.values()[si * torques.len() + tj];
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt_float(*speed),
                    fmt_float(*torque),
                    fmt_float(v.s),
                    fmt_float(v.c)
                );
            }
        }
        write_atomically(&disturbance_file(dir, mode.order), &out)?;
    }
    Ok(())
}

fn load_transfer(path: &Path) -> Result<TransferLut<f64>, IoError> {
    let lines = read_lines(path)?;
    if lines.first().map(|l| l.trim()) != Some("speed_rpm,x1,x2") {
        return Err(IoError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "expected header speed_rpm,x1,x2".into(),
        });
    }
    let mut grid = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        expect_columns(path, lineno, &f, 3)?;
        grid.push(parse_f64(path, lineno, f[0])?);
        values.push(PhasorPair::new(
            parse_f64(path, lineno, f[1])?,
            parse_f64(path, lineno, f[2])?,
        ));
    }
    Ok(TransferLut::new(grid, values)?)
}

fn load_disturbance(path: &Path) -> Result<DisturbanceLut<f64>, IoError> {
    let lines = read_lines(path)?;
    if lines.first().map(|l| l.trim()) != Some("speed_rpm,torque_pu,theta_ps,theta_pc") {
        return Err(IoError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "expected header speed_rpm,torque_pu,theta_ps,theta_pc".into(),
        });
    }
    let mut rows: Vec<(f64, f64, PhasorPair<f64>)> = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        expect_columns(path, lineno, &f, 4)?;
        rows.push((
            parse_f64(path, lineno, f[0])?,
            parse_f64(path, lineno, f[1])?,
            PhasorPair::new(parse_f64(path, lineno, f[2])?, parse_f64(path, lineno, f[3])?),
        ));
    }
    // row-major layout: the torque grid is the first speed block, repeated
    let mut speeds: Vec<f64> = Vec::new();
    for (s, _, _) in &rows {
        if speeds.last() != Some(s) {
            speeds.push(*s);
        }
    }
    let mut torques: Vec<f64> = Vec::new();
    for (s, t, _) in &rows {
        if *s != speeds[0] {
            break;
        }
        torques.push(*t);
    }
    if speeds.len() * torques.len() != rows.len() {
        return Err(IoError::BadLayout {
            path: path.display().to_string(),
            msg: format!(
                "{} rows do not form a {}x{} grid",
                rows.len(),
                speeds.len(),
                torques.len()
            ),
        });
    }
    let values: Vec<PhasorPair<f64>> = rows.iter().map(|(_, _, v)| *v).collect();
    Ok(DisturbanceLut::new(speeds, torques, values)?)
}

/// Load the tables previously written by [`save_tables`], discovering the
/// orders from the `transfer_m*.csv` file names.
pub fn load_tables(dir: &Path) -> Result<FeedforwardTables<f64>, IoError> {
    let mut orders = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(rest) = name.strip_prefix("transfer_m").and_then(|r| r.strip_suffix(".csv")) {
            if let Ok(order) = rest.parse::<u32>() {
                orders.push(order);
            }
        }
    }
    orders.sort_unstable();
    if orders.is_empty() {
        return Err(IoError::BadLayout {
            path: dir.display().to_string(),
            msg: "no transfer_m*.csv files found".into(),
        });
    }
    let mut modes = Vec::new();
    for order in orders {
        modes.push(ModeTables {
            order,
            transfer: load_transfer(&transfer_file(dir, order))?,
            disturbance: load_disturbance(&disturbance_file(dir, order))?,
        });
    }
    Ok(FeedforwardTables { modes })
}

pub const PROBE_HEADER: &str = "order,speed_rpm,torque_pu,theta_us,theta_uc,y_s,y_c";

/// Persist identification probes: one steady-state experiment per row.
pub fn write_probes(path: &Path, probes: &[ProbeRecord<f64>]) -> Result<(), IoError> {
    let mut out = String::from(PROBE_HEADER);
    out.push('\n');
    for p in probes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.order,
            fmt_float(p.op.speed),
            fmt_float(p.op.torque),
            fmt_float(p.theta_u.s),
            fmt_float(p.theta_u.c),
            fmt_float(p.response.s),
            fmt_float(p.response.c),
        );
    }
    write_atomically(path, &out)
}

pub fn read_probes(path: &Path) -> Result<Vec<ProbeRecord<f64>>, IoError> {
    let lines = read_lines(path)?;
    if lines.first().map(|l| l.trim()) != Some(PROBE_HEADER) {
        return Err(IoError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected header {PROBE_HEADER}"),
        });
    }
    let mut probes = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        expect_columns(path, lineno, &f, 7)?;
        let op = OperatingPoint::new(
            parse_f64(path, lineno, f[1])?,
            parse_f64(path, lineno, f[2])?,
        )?;
        probes.push(ProbeRecord {
            order: parse_int(path, lineno, f[0])?,
            op,
            theta_u: PhasorPair::new(parse_f64(path, lineno, f[3])?, parse_f64(path, lineno, f[4])?),
            response: PhasorPair::new(parse_f64(path, lineno, f[5])?, parse_f64(path, lineno, f[6])?),
        });
    }
    Ok(probes)
}
