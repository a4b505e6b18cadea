//! Scenario-driven batch runner around the simulation library: parses a
//! scenario file, executes one run per seed (in parallel when asked to),
//! and leaves traces, per-period amplitudes, indicators, and table snapshots
//! behind as CSV. Also merges indicator files across runs, builds
//! feedforward tables from probe logs, and re-emits run data for gnuplot.
//!
//! Exit codes: 0 on success, 2 for anything wrong with the inputs (malformed
//! scenario, unknown controller, missing files), 3 when a simulation left
//! the representable range (the message carries the step index).

use clap::{Parser, Subcommand};
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use hcsim_core::io::{
    load_tables, read_indicators, read_probes, save_tables, write_indicators, write_periods,
    write_trace, IndicatorRow,
};
use hcsim_core::analysis::{indicators, IndicatorConfig};
use hcsim_core::lut::identify_offline;
use hcsim_core::scenario::{ControllerName, Scenario};
use hcsim_core::sim::{run, SimError, SimOutput};

#[derive(Parser)]
#[command(
    name = "hcsim",
    version,
    about = "Adaptive harmonic-control simulator for electric-drive current loops"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write trace, period, indicator and table files.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Output directory (created if missing).
        #[arg(short, long)]
        out: PathBuf,
        /// Override the scenario's noise seed.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Run a batch, one simulation per seed (comma-separated). Outputs
        /// land in per-seed subdirectories plus one merged indicator file.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Override the scenario's controller (none, td_s1, td_s2, td_s3,
        /// fd, td_delta, td_delta_adaptive_lut).
        #[arg(long)]
        controller: Option<String>,
    },
    /// Merge the indicator files of finished runs into one table.
    Compare {
        /// Run directories, each holding an indicators.csv.
        #[arg(required = true, num_args = 1..)]
        dirs: Vec<PathBuf>,
        /// Where to write the merged CSV (default: comparison.csv).
        #[arg(short, long, default_value = "comparison.csv")]
        out: PathBuf,
    },
    /// Build feedforward tables from a probe log.
    Identify {
        /// Probe log (CSV) of recorded excitation/response pairs.
        probes: PathBuf,
        /// Directory to write the table files into.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Re-emit a run's CSV files as whitespace-separated gnuplot data.
    Plotdata {
        /// Run directory holding trace.csv / periods.csv.
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("hcsim: {msg}");
            ExitCode::from(code)
        }
    }
}

type CmdError = (u8, String);

fn input_err<E: std::fmt::Display>(e: E) -> CmdError {
    (2, e.to_string())
}

fn dispatch(cli: Cli) -> Result<(), CmdError> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            out,
            seed,
            seeds,
            controller,
        } => cmd_run(&scenario, &out, seed, &seeds, controller.as_deref()),
        Cmd::Compare { dirs, out } => cmd_compare(&dirs, &out),
        Cmd::Identify { probes, out } => cmd_identify(&probes, &out),
        Cmd::Plotdata { dir } => cmd_plotdata(&dir),
    }
}

fn parse_controller(name: &str) -> Option<ControllerName> {
    [
        ControllerName::None,
        ControllerName::TdS1,
        ControllerName::TdS2,
        ControllerName::TdS3,
        ControllerName::Fd,
        ControllerName::TdDelta,
        ControllerName::TdDeltaAdaptiveLut,
    ]
    .into_iter()
    .find(|c| c.as_str() == name)
}

/// Worker count for batch runs: `HCSIM_WORKERS` if set, otherwise the
/// machine's parallelism, never more than the number of jobs.
fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("HCSIM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    cap.min(jobs).max(1)
}

fn cmd_run(
    scenario_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    seeds: &[u64],
    controller: Option<&str>,
) -> Result<(), CmdError> {
    let mut scenario = Scenario::load(scenario_path).map_err(input_err)?;
    if let Some(name) = controller {
        scenario.sim.controller = parse_controller(name)
            .ok_or_else(|| input_err(format!("unknown controller {name:?}")))?;
    }
    let base = scenario_path.parent().unwrap_or(Path::new("."));
    let mut cfg = scenario.to_sim_config(base).map_err(input_err)?;
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }

    let label = scenario_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let controller_name = scenario.sim.controller.as_str();

    if seeds.is_empty() {
        let output = simulate(&cfg)?;
        let rows = indicator_rows(&label, controller_name, cfg.noise.seed, &output)?;
        write_outputs(out_dir, &output, &rows).map_err(input_err)?;
        return Ok(());
    }

    // Batch: one run per seed, executed by a fixed-size worker pool; the
    // merged indicator file is written in seed order so batch output does
    // not depend on scheduling.
    let jobs: VecDeque<u64> = seeds.iter().copied().collect();
    let queue = Mutex::new(jobs);
    let results: Mutex<Vec<(u64, Result<SimOutput, CmdError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..worker_count(seeds.len()) {
            scope.spawn(|| loop {
                let Some(s) = queue.lock().unwrap().pop_front() else {
                    return;
                };
                let mut cfg_s = cfg.clone();
                cfg_s.noise.seed = s;
                let res = simulate(&cfg_s);
                results.lock().unwrap().push((s, res));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(s, _)| seeds.iter().position(|x| x == s));

    let mut merged = Vec::new();
    for (s, res) in results {
        let output = res?;
        let rows = indicator_rows(&label, controller_name, s, &output)?;
        merged.extend(rows.clone());
        write_outputs(&out_dir.join(format!("seed-{s}")), &output, &rows).map_err(input_err)?;
    }
    std::fs::create_dir_all(out_dir).map_err(input_err)?;
    write_indicators(&out_dir.join("indicators.csv"), &merged).map_err(input_err)?;
    Ok(())
}

fn simulate(cfg: &hcsim_core::sim::SimConfig) -> Result<SimOutput, CmdError> {
    run(cfg).map_err(|e| match e {
        SimError::NumericBlowup { .. } => (3, e.to_string()),
        other => (2, other.to_string()),
    })
}

fn indicator_rows(
    label: &str,
    controller: &str,
    seed: u64,
    output: &SimOutput,
) -> Result<Vec<IndicatorRow>, CmdError> {
    let cfg = IndicatorConfig::default();
    let mut rows = Vec::new();
    for (mode, order) in output.series.orders().to_vec().into_iter().enumerate() {
        let rec = indicators(&output.series, mode, &cfg).map_err(input_err)?;
        rows.push(IndicatorRow {
            scenario: label.to_string(),
            controller: controller.to_string(),
            seed,
            order,
            rec,
        });
    }
    Ok(rows)
}

fn write_outputs(
    dir: &Path,
    output: &SimOutput,
    rows: &[IndicatorRow],
) -> Result<(), hcsim_core::io::IoError> {
    std::fs::create_dir_all(dir)?;
    write_trace(&dir.join("trace.csv"), &output.trace)?;
    write_periods(&dir.join("periods.csv"), &output.series)?;
    write_indicators(&dir.join("indicators.csv"), rows)?;
    if let Some(tables) = &output.lut_before {
        save_tables(&dir.join("lut_before"), tables)?;
    }
    if let Some(tables) = &output.lut_after {
        save_tables(&dir.join("lut_after"), tables)?;
    }
    Ok(())
}

fn cmd_compare(dirs: &[PathBuf], out: &Path) -> Result<(), CmdError> {
    let mut columns: Vec<(String, IndicatorRow)> = Vec::new();
    for dir in dirs {
        let path = dir.join("indicators.csv");
        let rows = read_indicators(&path)
            .map_err(|e| input_err(format!("{}: {e}", dir.display())))?;
        let dir_label = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        for row in rows {
            let label = format!("{dir_label}:{}:s{}:m{}", row.controller, row.seed, row.order);
            columns.push((label, row));
        }
    }

    // CSV and aligned text share the same layout: one row per indicator,
    // one column per run.
    let names = [
        "time_to_threshold_s",
        "mean",
        "max_after",
        "mean_interval1",
        "mean_interval2",
    ];
    let value = |row: &IndicatorRow, i: usize| -> f64 {
        match i {
            0 => row.rec.time_to_threshold,
            1 => row.rec.mean,
            2 => row.rec.max_after,
            3 => row.rec.mean_interval1,
            _ => row.rec.mean_interval2,
        }
    };

    let mut csv = String::from("indicator");
    for (label, _) in &columns {
        let _ = write!(csv, ",{label}");
    }
    csv.push('\n');
    for (i, name) in names.iter().enumerate() {
        let _ = write!(csv, "{name}");
        for (_, row) in &columns {
            let _ = write!(csv, ",{}", hcsim_core::io::fmt_float(value(row, i)));
        }
        csv.push('\n');
    }
    std::fs::write(out, &csv).map_err(input_err)?;

    let width = columns
        .iter()
        .map(|(l, _)| l.len())
        .chain(names.iter().map(|n| n.len()))
        .max()
        .unwrap_or(12)
        .max(12);
    let mut text = format!("{:>w$}", "indicator", w = width + 2);
    for (label, _) in &columns {
        let _ = write!(text, "  {label:>w$}", w = width);
    }
    text.push('\n');
    for (i, name) in names.iter().enumerate() {
        let _ = write!(text, "{name:>w$}", w = width + 2);
        for (_, row) in &columns {
            let _ = write!(text, "  {:>w$.6}", value(row, i), w = width);
        }
        text.push('\n');
    }
    print!("{text}");
    Ok(())
}

fn cmd_identify(probes_path: &Path, out_dir: &Path) -> Result<(), CmdError> {
    let probes = read_probes(probes_path).map_err(input_err)?;
    let tables = identify_offline(&probes).map_err(input_err)?;
    save_tables(out_dir, &tables).map_err(input_err)?;
    // Round-trip read-back so a write problem surfaces here, not in the
    // next run that consumes the directory.
    load_tables(out_dir).map_err(input_err)?;
    Ok(())
}

fn cmd_plotdata(dir: &Path) -> Result<(), CmdError> {
    let mut converted = 0;
    for name in ["trace", "periods", "indicators"] {
        let src = dir.join(format!("{name}.csv"));
        if !src.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&src).map_err(input_err)?;
        let mut out = String::with_capacity(text.len());
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                out.push_str("# ");
            }
            out.push_str(&line.replace(',', " "));
            out.push('\n');
        }
        std::fs::write(dir.join(format!("{name}.dat")), out).map_err(input_err)?;
        converted += 1;
    }
    if converted == 0 {
        return Err(input_err(format!(
            "{}: no trace.csv/periods.csv/indicators.csv found",
            dir.display()
        )));
    }
    Ok(())
}
