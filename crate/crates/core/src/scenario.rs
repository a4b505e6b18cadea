//! Scenario files: the TOML schema describing one simulation run, and its
//! conversion into a [`SimConfig`].
//!
//! Keys carry their unit as a suffix (`ts_us`, `f_n_hz`, `u_max_v`), so a
//! file reads unambiguously without consulting the docs. Parsing is strict:
//! unknown keys are rejected, and every parse error is reported with the file
//! name and line number.

use crate::io::{load_tables, IoError};
use crate::lut::FeedforwardTables;
use crate::phasor::DEFAULT_EPS_SING;
use crate::plant::{
    DisturbanceSpec, FocParams, HarmonicTerm, NoiseSpec, NvhKind, NvhParams, PsmParams,
};
use crate::sim::{
    AlParams, ControllerKind, HcParams, ModeInit, Profile, ProfileSegment, SimConfig,
    StructureParams,
};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Toml {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Semantic(String),
    #[error(transparent)]
    Table(#[from] IoError),
}

/// Controller selection as spelled in scenario files.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ControllerName {
    None,
    TdS1,
    TdS2,
    TdS3,
    Fd,
    TdDelta,
    TdDeltaAdaptiveLut,
}

impl ControllerName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerName::None => "none",
            ControllerName::TdS1 => "td_s1",
            ControllerName::TdS2 => "td_s2",
            ControllerName::TdS3 => "td_s3",
            ControllerName::Fd => "fd",
            ControllerName::TdDelta => "td_delta",
            ControllerName::TdDeltaAdaptiveLut => "td_delta_adaptive_lut",
        }
    }

    fn kind(&self) -> ControllerKind {
        match self {
            ControllerName::None => ControllerKind::None,
            ControllerName::TdS1 => ControllerKind::TdS1,
            ControllerName::TdS2 => ControllerKind::TdS2,
            ControllerName::TdS3 => ControllerKind::TdS3,
            ControllerName::Fd => ControllerKind::Fd,
            ControllerName::TdDelta => ControllerKind::TdDelta,
            ControllerName::TdDeltaAdaptiveLut => ControllerKind::TdDeltaAdaptiveLut,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Sample time in microseconds.
    pub ts_us: f64,
    pub duration_s: f64,
    pub controller: ControllerName,
    pub orders: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_every: Option<usize>,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpeedSegment {
    pub t_s: f64,
    pub rpm: f64,
    #[serde(default)]
    pub ramp_s: f64,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TorqueSegment {
    pub t_s: f64,
    pub pu: f64,
    #[serde(default)]
    pub ramp_s: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub speed: Vec<SpeedSegment>,
    pub torque: Vec<TorqueSegment>,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub r_ohm: f64,
    pub ld_h: f64,
    pub lq_h: f64,
    pub psi_pm_wb: f64,
    pub pole_pairs: u32,
    pub iq_per_torque_a: f64,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FocSection {
    pub kp: f64,
    pub ki: f64,
    pub u_max_v: f64,
    pub integral_max_v: f64,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NvhKindName {
    Lowpass,
    Bandpass,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NvhSection {
    pub kind: NvhKindName,
    pub f_n_hz: f64,
    pub zeta: f64,
    #[serde(default = "one")]
    pub gain: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub order: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_rad: f64,
    /// `[[torque_pu, scale], ...]`, linear between keys, flat outside.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp_per_torque: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub speed_rpm: f64,
    #[serde(default)]
    pub current_a: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            speed_rpm: 0.0,
            current_a: 0.0,
            y: 0.0,
            seed: 1,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub order: u32,
    /// Initial transfer estimate `[x1, x2]`.
    pub g: [f64; 2],
    #[serde(default)]
    pub theta_p: [f64; 2],
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AlSection {
    pub f1_hz: f64,
    pub f2_hz: f64,
    pub delta: f64,
    pub eps_thr: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HcSection {
    #[serde(default = "default_gamma")]
    pub gamma_g: f64,
    #[serde(default = "default_gamma")]
    pub gamma_p: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_eps_sing")]
    pub eps_sing: f64,
    #[serde(default = "default_quality_every")]
    pub quality_every: usize,
    #[serde(default = "default_dre_t")]
    pub dre_t: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub init: Vec<InitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_learning: Option<AlSection>,
}

fn default_gamma() -> f64 {
    0.01
}
fn default_sigma() -> f64 {
    1.0e-3
}
fn default_beta() -> f64 {
    0.5
}
fn default_eps_sing() -> f64 {
    DEFAULT_EPS_SING
}
fn default_quality_every() -> usize {
    50
}
fn default_dre_t() -> [f64; 3] {
    [0.90, 0.95, 0.99]
}

impl Default for HcSection {
    fn default() -> Self {
        HcSection {
            gamma_g: default_gamma(),
            gamma_p: default_gamma(),
            sigma: default_sigma(),
            beta: default_beta(),
            eps_sing: default_eps_sing(),
            quality_every: default_quality_every(),
            dre_t: default_dre_t(),
            init: Vec::new(),
            active_learning: None,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StructureSection {
    #[serde(default = "one")]
    pub r_hat_factor: f64,
    #[serde(default = "one")]
    pub l_hat_factor: f64,
    #[serde(default = "default_delay")]
    pub delay_samples: usize,
}

fn default_delay() -> usize {
    1
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FdSection {
    #[serde(default = "default_fd_mu")]
    pub mu: f64,
    #[serde(default = "default_fd_mu_g")]
    pub mu_g: f64,
    #[serde(default = "default_fd_periods")]
    pub update_periods: u32,
    #[serde(default = "default_eps_sing")]
    pub eps_sing: f64,
    #[serde(default = "default_min_probe")]
    pub min_probe_norm: f64,
}

fn default_fd_mu() -> f64 {
    0.8
}
fn default_fd_mu_g() -> f64 {
    0.5
}
fn default_fd_periods() -> u32 {
    1
}
fn default_min_probe() -> f64 {
    1.0e-4
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LutSection {
    /// Directory holding `transfer_m*.csv` / `disturbance_m*.csv`, resolved
    /// relative to the scenario file.
    pub dir: String,
}

/// One complete scenario file.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub sim: SimSection,
    pub profile: ProfileSection,
    pub plant: PlantSection,
    pub foc: FocSection,
    pub nvh: NvhSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbance: Vec<DisturbanceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hc: Option<HcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd: Option<FdSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lut: Option<LutSection>,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|b| *b == b'\n')
        .count()
        + 1
}

impl Scenario {
    /// Parse TOML text; `origin` labels error messages (usually the path).
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        toml::from_str::<Scenario>(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| line_of_offset(text, s.start))
                .unwrap_or(1);
            ScenarioError::Toml {
                path: origin.to_string(),
                line,
                msg: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)?;
        Scenario::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Build the runnable configuration. Relative LUT directories resolve
    /// against `base` (the scenario file's directory).
    pub fn to_sim_config(&self, base: &Path) -> Result<SimConfig, ScenarioError> {
        let lut: Option<FeedforwardTables<f64>> = match &self.lut {
            Some(section) => {
                let dir = Path::new(&section.dir);
                let dir = if dir.is_absolute() {
                    dir.to_path_buf()
                } else {
                    base.join(dir)
                };
                Some(load_tables(&dir)?)
            }
            None => None,
        };
        let kind = self.sim.controller.kind();
        if kind.needs_tables() && lut.is_none() {
            return Err(ScenarioError::Semantic(format!(
                "controller {} requires a [lut] section",
                self.sim.controller.as_str()
            )));
        }
        let hc_section = self.hc.clone().unwrap_or_default();
        let noise = self.noise.unwrap_or_default();
        Ok(SimConfig {
            ts: self.sim.ts_us * 1.0e-6,
            duration: self.sim.duration_s,
            orders: self.sim.orders.clone(),
            controller: kind,
            speed_rpm: Profile {
                segments: self
                    .profile
                    .speed
                    .iter()
                    .map(|s| ProfileSegment {
                        t: s.t_s,
                        value: s.rpm,
                        ramp: s.ramp_s,
                    })
                    .collect(),
            },
            torque_pu: Profile {
                segments: self
                    .profile
                    .torque
                    .iter()
                    .map(|s| ProfileSegment {
                        t: s.t_s,
                        value: s.pu,
                        ramp: s.ramp_s,
                    })
                    .collect(),
            },
            plant: PsmParams {
                r: self.plant.r_ohm,
                l_d: self.plant.ld_h,
                l_q: self.plant.lq_h,
                psi_pm: self.plant.psi_pm_wb,
                pole_pairs: self.plant.pole_pairs,
            },
            iq_per_torque: self.plant.iq_per_torque_a,
            foc: FocParams {
                kp: self.foc.kp,
                ki: self.foc.ki,
                u_max: self.foc.u_max_v,
                integral_max: self.foc.integral_max_v,
            },
            nvh: NvhParams {
                kind: match self.nvh.kind {
                    NvhKindName::Lowpass => NvhKind::Lowpass,
                    NvhKindName::Bandpass => NvhKind::Bandpass,
                },
                omega_n: TAU * self.nvh.f_n_hz,
                zeta: self.nvh.zeta,
                gain: self.nvh.gain,
            },
            disturbance: DisturbanceSpec {
                terms: self
                    .disturbance
                    .iter()
                    .map(|d| HarmonicTerm {
                        order: d.order,
                        amplitude: d.amplitude,
                        phase: d.phase_rad,
                        amp_per_torque: d
                            .amp_per_torque
                            .as_ref()
                            .map(|m| m.iter().map(|kv| (kv[0], kv[1])).collect()),
                    })
                    .collect(),
            },
            noise: NoiseSpec {
                sigma_speed: noise.speed_rpm,
                sigma_current: noise.current_a,
                sigma_y: noise.y,
                seed: noise.seed,
            },
            structure: match &self.structure {
                Some(s) => StructureParams {
                    r_hat_factor: s.r_hat_factor,
                    l_hat_factor: s.l_hat_factor,
                    delay_samples: s.delay_samples,
                },
                None => StructureParams::default(),
            },
            hc: HcParams {
                gamma_g: hc_section.gamma_g,
                gamma_p: hc_section.gamma_p,
                sigma: hc_section.sigma,
                beta: hc_section.beta,
                eps_sing: hc_section.eps_sing,
                quality_every: hc_section.quality_every,
                dre_t: hc_section.dre_t,
                init: hc_section
                    .init
                    .iter()
                    .map(|i| ModeInit {
                        order: i.order,
                        g: (i.g[0], i.g[1]),
                        theta_p: (i.theta_p[0], i.theta_p[1]),
                    })
                    .collect(),
                al: hc_section.active_learning.map(|al| AlParams {
                    omega1_hz: al.f1_hz,
                    omega2_hz: al.f2_hz,
                    delta: al.delta,
                    eps_thr: al.eps_thr,
                }),
            },
            fd: match &self.fd {
                Some(f) => crate::fd::FdConfig {
                    mu: f.mu,
                    mu_g: f.mu_g,
                    update_periods: f.update_periods,
                    eps_sing: f.eps_sing,
                    min_probe_norm: f.min_probe_norm,
                },
                None => crate::fd::FdConfig::default(),
            },
            lut,
            trace_every: self.sim.trace_every.unwrap_or(1),
        })
    }
}

/// A ready-to-edit scenario matching [`SimConfig::reference`].
pub const EXAMPLE_SCENARIO: &str = r#"[sim]
ts_us = 100.0
duration_s = 1.5
controller = "td_s1"
orders = [12]

[[profile.speed]]
t_s = 0.0
rpm = 1000.0

[[profile.speed]]
t_s = 0.5
rpm = 800.0

[[profile.torque]]
t_s = 0.0
pu = 0.5

[plant]
r_ohm = 0.05
ld_h = 2.0e-4
lq_h = 2.0e-4
psi_pm_wb = 0.05
pole_pairs = 4
iq_per_torque_a = 100.0

[foc]
kp = 1.0
ki = 250.0
u_max_v = 200.0
integral_max_v = 100.0

[nvh]
kind = "bandpass"
f_n_hz = 640.0
zeta = 0.2
gain = 1.0

[[disturbance]]
order = 12
amplitude = 0.3
phase_rad = 0.8

[noise]
speed_rpm = 1.0
current_a = 0.02
y = 0.01
seed = 1

[hc]
gamma_g = 0.01
gamma_p = 0.01
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_scenario_parses_and_converts() {
        let sc = Scenario::from_toml_str(EXAMPLE_SCENARIO, "example").unwrap();
        assert_eq!(sc.sim.controller, ControllerName::TdS1);
        let cfg = sc.to_sim_config(Path::new(".")).unwrap();
        assert!((cfg.ts - 1.0e-4).abs() < 1e-18);
        assert_eq!(cfg.orders, vec![12]);
        assert_eq!(cfg.controller, ControllerKind::TdS1);
        assert_eq!(cfg.speed_rpm.eval(0.0), 1000.0);
        assert_eq!(cfg.speed_rpm.eval(0.6), 800.0);
        assert!((cfg.nvh.omega_n - TAU * 640.0).abs() < 1e-9);
        assert_eq!(cfg.noise.seed, 1);
        assert_eq!(cfg.hc.quality_every, 50);
        cfg.validate().unwrap();
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        let first = Scenario::from_toml_str(EXAMPLE_SCENARIO, "example").unwrap();
        let text = first.to_toml_string();
        let second = Scenario::from_toml_str(&text, "roundtrip").unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line_number() {
        let bad = EXAMPLE_SCENARIO.replace("gamma_g = 0.01", "gamma_q = 0.01");
        match Scenario::from_toml_str(&bad, "bad.toml") {
            Err(ScenarioError::Toml { line, msg, .. }) => {
                let expected = bad
                    .lines()
                    .position(|l| l.starts_with("gamma_q"))
                    .unwrap()
                    + 1;
                assert_eq!(line, expected, "{msg}");
            }
            other => panic!("expected toml error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_values_are_located() {
        let bad = EXAMPLE_SCENARIO.replace("zeta = 0.2", "zeta = \"soft\"");
        match Scenario::from_toml_str(&bad, "bad.toml") {
            Err(ScenarioError::Toml { line, .. }) => {
                let expected = bad.lines().position(|l| l.starts_with("zeta")).unwrap() + 1;
                assert_eq!(line, expected);
            }
            other => panic!("expected toml error, got {other:?}"),
        }
    }

    #[test]
    fn bad_controller_name_is_rejected() {
        let bad = EXAMPLE_SCENARIO.replace("\"td_s1\"", "\"pid\"");
        assert!(matches!(
            Scenario::from_toml_str(&bad, "x"),
            Err(ScenarioError::Toml { .. })
        ));
    }

    #[test]
    fn delta_controller_without_tables_is_rejected() {
        let bad = EXAMPLE_SCENARIO.replace("\"td_s1\"", "\"td_delta\"");
        let sc = Scenario::from_toml_str(&bad, "x").unwrap();
        assert!(matches!(
            sc.to_sim_config(Path::new(".")),
            Err(ScenarioError::Semantic(_))
        ));
    }

    #[test]
    fn defaults_fill_optional_sections() {
        let minimal = r#"
[sim]
ts_us = 100.0
duration_s = 0.2
controller = "none"
orders = [12]

[[profile.speed]]
t_s = 0.0
rpm = 1000.0

[[profile.torque]]
t_s = 0.0
pu = 0.5

[plant]
r_ohm = 0.05
ld_h = 2.0e-4
lq_h = 2.0e-4
psi_pm_wb = 0.05
pole_pairs = 4
iq_per_torque_a = 100.0

[foc]
kp = 1.0
ki = 250.0
u_max_v = 200.0
integral_max_v = 100.0

[nvh]
kind = "bandpass"
f_n_hz = 640.0
zeta = 0.2
"#;
        let sc = Scenario::from_toml_str(minimal, "minimal").unwrap();
        let cfg = sc.to_sim_config(Path::new(".")).unwrap();
        assert_eq!(cfg.noise.sigma_y, 0.0);
        assert_eq!(cfg.hc.gamma_g, 0.01);
        assert_eq!(cfg.fd.update_periods, 1);
        assert_eq!(cfg.structure.delay_samples, 1);
        assert_eq!(cfg.nvh.gain, 1.0);
        cfg.validate().unwrap();
    }
}
