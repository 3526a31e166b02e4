//! Scenario configuration: TOML in, validated `ScenarioConfig` out.
//!
//! Unknown keys are rejected and every error names the offending field path.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alloc::AllocConfig;
use crate::error::{Error, Result};
use crate::fuse::FuseConfig;
use crate::geom::RigidTransform;
use crate::linalg::Vec3;
use crate::mot::MotConfig;
use crate::nav::NavNoiseConfig;
use crate::percept::{CameraIntrinsics, DetectorModel, RangeNoiseModel};
use crate::view::RingParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Mission length in seconds.
    pub duration: f64,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub vessel: VesselConfig,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub containers: Vec<ContainerConfig>,
    #[serde(default)]
    pub alloc: AllocConfig,
    #[serde(default)]
    pub fuse: FuseConfig,
    #[serde(default)]
    pub bus: BusConfig,
    #[serde(default)]
    pub mission: MissionConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rates {
    pub tick_hz: f64,
    pub comm_hz: f64,
    pub alloc_hz: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            tick_hz: 10.0,
            comm_hz: 2.0,
            alloc_hz: 1.0,
        }
    }
}

impl Rates {
    pub fn dt(&self) -> f64 {
        1.0 / self.tick_hz
    }

    pub fn comm_every(&self) -> u64 {
        (self.tick_hz / self.comm_hz).round() as u64
    }

    pub fn alloc_every(&self) -> u64 {
        (self.tick_hz / self.alloc_hz).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VesselConfig {
    pub position: [f64; 3],
    pub yaw_deg: f64,
    pub nav: NavNoiseConfig,
}

impl Default for VesselConfig {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            yaw_deg: 0.0,
            nav: NavNoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: u32,
    pub position: [f64; 3],
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    /// Body-to-camera rotation as yaw/pitch/roll in degrees. The default
    /// points the optical axis straight down.
    #[serde(default = "default_camera_ypr")]
    pub camera_ypr_deg: [f64; 3],
    #[serde(default)]
    pub camera_offset: [f64; 3],
    #[serde(default)]
    pub camera: CameraIntrinsics,
    #[serde(default, rename = "sensor")]
    pub detector: DetectorModel,
    #[serde(default)]
    pub range_noise: RangeNoiseModel,
    #[serde(default)]
    pub nav: NavNoiseConfig,
    #[serde(default)]
    pub mot: MotConfig,
}

fn default_v_max() -> f64 {
    3.0
}

fn default_camera_ypr() -> [f64; 3] {
    [0.0, 0.0, 180.0]
}

impl AgentConfig {
    pub fn body_from_camera(&self) -> RigidTransform {
        RigidTransform::from_ypr_deg(self.camera_ypr_deg, Vec3::from(self.camera_offset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerConfig {
    pub id: u32,
    pub position: [f64; 3],
    #[serde(default)]
    pub drift: [f64; 3],
    #[serde(default)]
    pub bob_amplitude: f64,
    #[serde(default = "default_bob_period")]
    pub bob_period: f64,
}

fn default_bob_period() -> f64 {
    8.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BusConfig {
    pub drop_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionConfig {
    pub r_h: f64,
    pub h: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub epsilon: f64,
    pub tau_logdet: f64,
    pub tau_gain: f64,
    /// Distance at which a patrol waypoint counts as reached.
    pub arrival_radius: f64,
    pub patrol: Vec<PatrolConfig>,
}

impl Default for MissionConfig {
    fn default() -> Self {
        let ring = RingParams::default();
        Self {
            r_h: ring.r_h,
            h: ring.h,
            l: ring.l,
            epsilon: ring.epsilon,
            tau_logdet: -8.0,
            tau_gain: 0.05,
            arrival_radius: 1.0,
            patrol: Vec::new(),
        }
    }
}

impl MissionConfig {
    pub fn ring(&self) -> RingParams {
        RingParams {
            r_h: self.r_h,
            h: self.h,
            l: self.l,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatrolConfig {
    pub agent: u32,
    pub waypoints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub radius: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { radius: 5.0 }
    }
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn nested(prefix: String) -> impl Fn((&'static str, String)) -> Error {
    move |(field, msg)| Error::config(format!("{prefix}.{field}"), msg)
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(s).map_err(|e| Error::config("<document>", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().message(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration", "must be > 0"));
        }
        let r = &self.rates;
        for (name, v) in [("tick_hz", r.tick_hz), ("comm_hz", r.comm_hz), ("alloc_hz", r.alloc_hz)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("rates.{name}"), "must be > 0"));
            }
        }
        for (name, v) in [("comm_hz", r.comm_hz), ("alloc_hz", r.alloc_hz)] {
            let ratio = r.tick_hz / v;
            if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
                return Err(Error::config(
                    format!("rates.{name}"),
                    "tick_hz must be an integer multiple of this rate",
                ));
            }
        }
        if !finite3(&self.vessel.position) || !self.vessel.yaw_deg.is_finite() {
            return Err(Error::config("vessel.position", "must be finite"));
        }
        self.vessel.nav.validate().map_err(nested("vessel.nav".into()))?;

        if self.agents.is_empty() {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        let mut ids = BTreeSet::new();
        for (k, a) in self.agents.iter().enumerate() {
            let p = format!("agents[{k}]");
            if !ids.insert(a.id) {
                return Err(Error::config(format!("{p}.id"), format!("duplicate agent id {}", a.id)));
            }
            if !finite3(&a.position) {
                return Err(Error::config(format!("{p}.position"), "must be finite"));
            }
            if !(a.v_max > 0.0) {
                return Err(Error::config(format!("{p}.v_max"), "must be > 0"));
            }
            if !finite3(&a.camera_ypr_deg) || !finite3(&a.camera_offset) {
                return Err(Error::config(format!("{p}.camera_ypr_deg"), "must be finite"));
            }
            a.camera.validate().map_err(nested(format!("{p}.camera")))?;
            a.detector.validate().map_err(nested(format!("{p}.sensor")))?;
            a.range_noise.validate().map_err(nested(format!("{p}.range_noise")))?;
            a.nav.validate().map_err(nested(format!("{p}.nav")))?;
            a.mot.validate().map_err(nested(format!("{p}.mot")))?;
        }

        let mut cids = BTreeSet::new();
        for (k, c) in self.containers.iter().enumerate() {
            let p = format!("containers[{k}]");
            if !cids.insert(c.id) {
                return Err(Error::config(
                    format!("{p}.id"),
                    format!("duplicate container id {}", c.id),
                ));
            }
            if !finite3(&c.position) || !finite3(&c.drift) {
                return Err(Error::config(format!("{p}.position"), "must be finite"));
            }
            if !(c.bob_amplitude >= 0.0) || !(c.bob_period > 0.0) {
                return Err(Error::config(
                    format!("{p}.bob_period"),
                    "bob needs amplitude >= 0 and period > 0",
                ));
            }
        }

        self.alloc.validate().map_err(nested("alloc".into()))?;
        if !(self.fuse.gate > 0.0) {
            return Err(Error::config("fuse.gate", "must be > 0"));
        }
        if !(self.fuse.stale_inflation >= 0.0) {
            return Err(Error::config("fuse.stale_inflation", "must be >= 0"));
        }
        if !(self.fuse.retire_after > 0.0) {
            return Err(Error::config("fuse.retire_after", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.bus.drop_probability) {
            return Err(Error::config("bus.drop_probability", "must lie in [0, 1]"));
        }

        let m = &self.mission;
        self.mission.ring().validate().map_err(nested("mission".into()))?;
        if !m.tau_logdet.is_finite() {
            return Err(Error::config("mission.tau_logdet", "must be finite"));
        }
        if !(m.tau_gain >= 0.0) {
            return Err(Error::config("mission.tau_gain", "must be >= 0"));
        }
        if !(m.arrival_radius > 0.0) {
            return Err(Error::config("mission.arrival_radius", "must be > 0"));
        }
        let mut patrolled = BTreeSet::new();
        for (k, p) in m.patrol.iter().enumerate() {
            let path = format!("mission.patrol[{k}]");
            if !ids.contains(&p.agent) {
                return Err(Error::config(
                    format!("{path}.agent"),
                    format!("unknown agent {}", p.agent),
                ));
            }
            if !patrolled.insert(p.agent) {
                return Err(Error::config(format!("{path}.agent"), "agent has two patrol plans"));
            }
            if p.waypoints.is_empty() || !p.waypoints.iter().all(finite3) {
                return Err(Error::config(
                    format!("{path}.waypoints"),
                    "need at least one finite waypoint",
                ));
            }
        }
        if !(self.eval.radius > 0.0) {
            return Err(Error::config("eval.radius", "must be > 0"));
        }
        Ok(())
    }

    pub fn patrol_for(&self, agent: u32) -> &[[f64; 3]] {
        self.mission
            .patrol
            .iter()
            .find(|p| p.agent == agent)
            .map_or(&[], |p| p.waypoints.as_slice())
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
duration = 10.0

[[agents]]
id = 1
position = [0.0, 0.0, 20.0]
"#;

    fn err_path(s: &str) -> String {
        match ScenarioConfig::from_toml_str(s) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_gets_defaults() {
        let c = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.rates, Rates::default());
        assert_eq!(c.mission.l, 8);
        assert_eq!(c.agents[0].v_max, 3.0);
        assert!(c.containers.is_empty());
    }

    #[test]
    fn negative_ring_radius_names_field() {
        let s = format!("{MINIMAL}\n[mission]\nr_h = -1.0\n");
        assert_eq!(err_path(&s), "mission.r_h");
    }

    #[test]
    fn duplicate_container() {
        let s = format!(
            "{MINIMAL}\n[[containers]]\nid = 4\nposition = [0.0, 0.0, 0.0]\n[[containers]]\nid = 4\nposition = [1.0, 0.0, 0.0]\n"
        );
        assert_eq!(err_path(&s), "containers[1].id");
    }

    #[test]
    fn unknown_key_and_type_errors_carry_paths() {
        let s = format!("{MINIMAL}\n[alloc]\netta = 1.0\n");
        assert_eq!(err_path(&s), "alloc.etta");
        let s = MINIMAL.replace("duration = 10.0", "duration = \"long\"");
        assert_eq!(err_path(&s), "duration");
        let s = MINIMAL.replace("seed = 1\n", "");
        assert_eq!(err_path(&s), "<root>");
        let s = format!("{MINIMAL}\n[[agents]]\nid = 2\nposition = [0.0, 0.0]\n");
        assert!(err_path(&s).starts_with("agents[1].position"));
    }

    #[test]
    fn rates_must_divide_tick() {
        let s = format!("{MINIMAL}\n[rates]\ncomm_hz = 3.0\n");
        assert_eq!(err_path(&s), "rates.comm_hz");
    }

    #[test]
    fn patrol_must_reference_agent() {
        let s = format!("{MINIMAL}\n[[mission.patrol]]\nagent = 9\nwaypoints = [[0.0, 0.0, 20.0]]\n");
        assert_eq!(err_path(&s), "mission.patrol[0].agent");
    }

    #[test]
    fn emit_then_parse_round_trips() {
        let s = format!(
            "{MINIMAL}\n[[containers]]\nid = 4\nposition = [1.0, 2.0, 0.0]\ndrift = [0.01, 0.0, 0.0]\n[[mission.patrol]]\nagent = 1\nwaypoints = [[0.0, 0.0, 20.0], [5.0, 0.0, 20.0]]\n"
        );
        let c = ScenarioConfig::from_toml_str(&s).unwrap();
        let again = ScenarioConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
