//! Deterministic closed-loop simulation. Every tick advances the truth and
//! runs the agents' sensing and tracking; vessel fusion and allocation run on
//! their own slower schedules.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alloc::{solve_cmcf, AssignmentSet, CostMatrix, TargetInput, UavInput};
use crate::audit::ContractionAudit;
use crate::config::{AgentConfig, BusConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::fuse::{Fuser, TrackSummary};
use crate::geom::{FrameId, FrameTree, RigidTransform};
use crate::linalg::{check_spd, symmetrize, Mat3, Vec3};
use crate::mot::{TrackCounters, TrackStatus, Tracker};
use crate::nav::{nav_init, nav_predict, nav_update, NavMeasurement, NavState};
use crate::percept::{lift, median_disparity, synth_detect};
use crate::view::{check_termination, evaluate_ring, mode_step, HoverConstraints, Mode, ModeInputs, ModeState};

pub const BUS_MESSAGE_BYTES: usize = 96;

/// Wire record for one track summary, little-endian:
/// sender u64 | track u64 | timestamp f64 | mean 3×f64 | cov xx xy xz yy yz zz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusMessage {
    pub sender: u64,
    pub track: u64,
    pub timestamp: f64,
    pub mean: [f64; 3],
    pub cov_upper: [f64; 6],
}

impl BusMessage {
    pub fn from_summary(s: &TrackSummary) -> Self {
        let c = &s.cov;
        Self {
            sender: s.agent,
            track: s.track,
            timestamp: s.timestamp,
            mean: [s.mean.x, s.mean.y, s.mean.z],
            cov_upper: [c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]],
        }
    }

    pub fn to_summary(&self) -> Result<TrackSummary> {
        let [xx, xy, xz, yy, yz, zz] = self.cov_upper;
        let cov = Mat3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
        check_spd(&cov, "bus message covariance")?;
        if !self.timestamp.is_finite() || self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bus message"));
        }
        Ok(TrackSummary {
            agent: self.sender,
            track: self.track,
            timestamp: self.timestamp,
            mean: Vec3::from(self.mean),
            cov,
        })
    }

    pub fn encode(&self) -> [u8; BUS_MESSAGE_BYTES] {
        let mut out = [0u8; BUS_MESSAGE_BYTES];
        out[0..8].copy_from_slice(&self.sender.to_le_bytes());
        out[8..16].copy_from_slice(&self.track.to_le_bytes());
        let floats = std::iter::once(self.timestamp).chain(self.mean).chain(self.cov_upper);
        for (k, v) in floats.enumerate() {
            out[16 + 8 * k..24 + 8 * k].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != BUS_MESSAGE_BYTES {
            return Err(Error::InvalidArgument(format!(
                "bus message must be {BUS_MESSAGE_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let word = |k: usize| -> [u8; 8] { bytes[8 * k..8 * k + 8].try_into().expect("8-byte slice") };
        let f = |k: usize| f64::from_le_bytes(word(k));
        Ok(Self {
            sender: u64::from_le_bytes(word(0)),
            track: u64::from_le_bytes(word(1)),
            timestamp: f(2),
            mean: [f(3), f(4), f(5)],
            cov_upper: [f(6), f(7), f(8), f(9), f(10), f(11)],
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: u64,
    pub bytes: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Keyed by sender id. Stored as `[id, stats]` pairs in the run log.
    #[serde(with = "link_pairs")]
    pub per_link: BTreeMap<u64, LinkStats>,
}

mod link_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    use super::LinkStats;

    pub fn serialize<S: Serializer>(m: &BTreeMap<u64, LinkStats>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u64, LinkStats>, D::Error> {
        Ok(Vec::<(u64, LinkStats)>::deserialize(d)?.into_iter().collect())
    }
}

impl BusStats {
    pub fn add(&mut self, other: &BusStats) {
        self.messages_sent += other.messages_sent;
        self.bytes_sent += other.bytes_sent;
        self.delivered += other.delivered;
        self.dropped += other.dropped;
        for (k, l) in &other.per_link {
            let e = self.per_link.entry(*k).or_default();
            e.sent += l.sent;
            e.bytes += l.bytes;
            e.dropped += l.dropped;
        }
    }

    pub fn bytes_per_second(&self, duration: f64) -> f64 {
        if duration > 0.0 {
            self.bytes_sent as f64 / duration
        } else {
            0.0
        }
    }
}

/// Serializes every summary to one wire record and drops each independently.
pub fn broadcast_round<R: Rng + ?Sized>(
    summaries: &[TrackSummary],
    bus: &BusConfig,
    rng: &mut R,
) -> (Vec<[u8; BUS_MESSAGE_BYTES]>, BusStats) {
    let mut stats = BusStats::default();
    let mut delivered = Vec::with_capacity(summaries.len());
    for s in summaries {
        let bytes = BusMessage::from_summary(s).encode();
        let link = stats.per_link.entry(s.agent).or_default();
        stats.messages_sent += 1;
        stats.bytes_sent += bytes.len() as u64;
        link.sent += 1;
        link.bytes += bytes.len() as u64;
        if rng.random::<f64>() < bus.drop_probability {
            stats.dropped += 1;
            link.dropped += 1;
        } else {
            stats.delivered += 1;
            delivered.push(bytes);
        }
    }
    (delivered, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerState {
    pub id: u32,
    pub position: Vec3,
    pub drift: Vec3,
    pub base_z: f64,
    pub bob_amplitude: f64,
    pub bob_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    pub command: Option<Vec3>,
    pub v_max: f64,
}

/// Ground truth of the world. Estimator state lives in [`Simulation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub tick: u64,
    pub containers: Vec<ContainerState>,
    pub uavs: Vec<UavState>,
}

impl WorldState {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            time: 0.0,
            tick: 0,
            containers: cfg
                .containers
                .iter()
                .map(|c| ContainerState {
                    id: c.id,
                    position: Vec3::from(c.position),
                    drift: Vec3::from(c.drift),
                    base_z: c.position[2],
                    bob_amplitude: c.bob_amplitude,
                    bob_period: c.bob_period,
                })
                .collect(),
            uavs: cfg
                .agents
                .iter()
                .map(|a| UavState {
                    id: a.id,
                    position: Vec3::from(a.position),
                    velocity: Vec3::zeros(),
                    command: None,
                    v_max: a.v_max,
                })
                .collect(),
        }
    }

    pub fn container_truth(&self) -> Vec<(u32, Vec3)> {
        self.containers.iter().map(|c| (c.id, c.position)).collect()
    }
}

/// Advances truth by `dt`: containers drift (and bob), UAVs fly straight to
/// their command at no more than `v_max`.
pub fn step_world(w: &mut WorldState, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    w.tick += 1;
    w.time = w.tick as f64 * dt;
    for c in &mut w.containers {
        c.position.x += c.drift.x * dt;
        c.position.y += c.drift.y * dt;
        c.base_z += c.drift.z * dt;
        c.position.z = c.base_z + c.bob_amplitude * (2.0 * PI * w.time / c.bob_period).sin();
    }
    for u in &mut w.uavs {
        let step = match u.command {
            Some(goal) => {
                let d = goal - u.position;
                let reach = u.v_max * dt;
                if d.norm() <= reach {
                    d
                } else {
                    d * (reach / d.norm())
                }
            }
            None => Vec3::zeros(),
        };
        u.velocity = step / dt;
        u.position += step;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRec {
    pub id: u64,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavRec {
    pub id: u64,
    pub position: Vec3,
    pub nav_position: Vec3,
    pub mode: Mode,
    pub active: Option<u64>,
    pub hover: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTrackRec {
    pub id: u64,
    pub status: TrackStatus,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRec {
    pub agent: u64,
    pub measurements: usize,
    pub counters: TrackCounters,
    pub tracks: Vec<LocalTrackRec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRec {
    pub id: u64,
    pub mean: Vec3,
    pub cov_upper: [f64; 6],
    pub logdet: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Done {
        target: u64,
        logdet: f64,
    },
    Handoff {
        uav: u64,
        target: u64,
        vessel_position: Vec3,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub duration: f64,
    pub ticks: u64,
    pub agents: usize,
    pub containers: usize,
    pub fused_tracks: usize,
    pub done_targets: Vec<(u64, f64)>,
    pub handoffs: usize,
    pub bus: BusStats,
    pub bytes_per_second: f64,
    pub track_audit: ContractionAudit,
    pub fusion_audit: ContractionAudit,
    pub counters: Vec<(u64, TrackCounters)>,
    pub accepted_detections: usize,
    /// Median optical depth of lifted detections (m).
    pub typical_depth: Option<f64>,
    /// Median first-order stereo depth std over lifted detections (m).
    pub injected_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stream", rename_all = "snake_case")]
pub enum Record {
    Header {
        version: String,
        config: ScenarioConfig,
    },
    Truth {
        tick: u64,
        t: f64,
        containers: Vec<EntityRec>,
        uavs: Vec<EntityRec>,
    },
    Uav {
        tick: u64,
        t: f64,
        uavs: Vec<UavRec>,
    },
    Local {
        tick: u64,
        t: f64,
        agents: Vec<LocalRec>,
    },
    Fused {
        tick: u64,
        t: f64,
        tracks: Vec<FusedRec>,
    },
    Bus {
        tick: u64,
        t: f64,
        stats: BusStats,
    },
    Assignment {
        tick: u64,
        t: f64,
        assignment: AssignmentSet,
    },
    Event {
        tick: u64,
        t: f64,
        event: Event,
    },
    Summary {
        summary: RunSummary,
    },
}

/// Ordered run records; the first is the header and the last the summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<Record>,
}

impl RunLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line).map_err(|e| Error::RunLog {
                line: k + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        let n = text.lines().count();
        if !matches!(records.first(), Some(Record::Header { .. })) {
            return Err(Error::RunLog {
                line: 1,
                message: "first record must be the header".into(),
            });
        }
        if !matches!(records.last(), Some(Record::Summary { .. })) {
            return Err(Error::RunLog {
                line: n + 1,
                message: "missing summary record (log truncated?)".into(),
            });
        }
        Ok(Self { records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn config(&self) -> Option<&ScenarioConfig> {
        self.records.iter().find_map(|r| match r {
            Record::Header { config, .. } => Some(config),
            _ => None,
        })
    }

    pub fn summary(&self) -> Option<&RunSummary> {
        self.records.iter().rev().find_map(|r| match r {
            Record::Summary { summary } => Some(summary),
            _ => None,
        })
    }
}

fn upper(c: &Mat3) -> [f64; 6] {
    [c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]]
}

fn gauss3<R: Rng + ?Sized>(rng: &mut R, std: f64) -> Vec3 {
    match Normal::new(0.0, std) {
        Ok(n) if std > 0.0 => Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)),
        _ => Vec3::zeros(),
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

struct AgentRuntime {
    cfg: AgentConfig,
    tracker: Tracker,
    nav: NavState,
    mode: ModeState,
    patrol: Vec<Vec3>,
    body_from_camera: RigidTransform,
    prev_velocity: Vec3,
    rng_detect: ChaCha8Rng,
    rng_gps: ChaCha8Rng,
    rng_imu: ChaCha8Rng,
}

impl AgentRuntime {
    fn id(&self) -> u64 {
        self.cfg.id as u64
    }
}

/// Full closed-loop state. One call to [`Simulation::step`] is one tick.
pub struct Simulation {
    cfg: ScenarioConfig,
    world: WorldState,
    agents: Vec<AgentRuntime>,
    vessel_nav: NavState,
    rng_vessel: ChaCha8Rng,
    rng_bus: ChaCha8Rng,
    tree: FrameTree,
    fuser: Fuser,
    assignment: AssignmentSet,
    bus: BusStats,
    depths: Vec<f64>,
    sigmas: Vec<f64>,
    done_targets: Vec<(u64, f64)>,
    handoffs: usize,
    records: Vec<Record>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let world = WorldState::from_config(&cfg);
        let mut agents: Vec<AgentRuntime> = Vec::new();
        let mut sorted = cfg.agents.clone();
        sorted.sort_by_key(|a| a.id);
        for a in sorted {
            let stream = 16 + 4 * a.id as u64;
            let mut rng_gps = stream_rng(cfg.seed, stream + 1);
            let z = Vec3::from(a.position) + gauss3(&mut rng_gps, a.nav.gps_std);
            agents.push(AgentRuntime {
                tracker: Tracker::new(a.id, a.mot),
                nav: nav_init(&z, &a.nav, 0.0)?,
                mode: ModeState::default(),
                patrol: cfg.patrol_for(a.id).iter().map(|w| Vec3::from(*w)).collect(),
                body_from_camera: a.body_from_camera(),
                prev_velocity: Vec3::zeros(),
                rng_detect: stream_rng(cfg.seed, stream),
                rng_gps,
                rng_imu: stream_rng(cfg.seed, stream + 2),
                cfg: a,
            });
        }
        let mut rng_vessel = stream_rng(cfg.seed, 2);
        let vz = Vec3::from(cfg.vessel.position) + gauss3(&mut rng_vessel, cfg.vessel.nav.gps_std);
        let vessel_nav = nav_init(&vz, &cfg.vessel.nav, 0.0)?;
        let tree = FrameTree::with_agents(agents.iter().map(|a| a.cfg.id));
        let header = Record::Header {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
        };
        let mut sim = Self {
            fuser: Fuser::new(cfg.fuse),
            rng_bus: stream_rng(cfg.seed, 1),
            world,
            agents,
            vessel_nav,
            rng_vessel,
            tree,
            assignment: AssignmentSet::default(),
            bus: BusStats::default(),
            depths: Vec::new(),
            sigmas: Vec::new(),
            done_targets: Vec::new(),
            handoffs: 0,
            records: vec![header],
            cfg,
        };
        sim.refresh_tree();
        sim.update_commands();
        Ok(sim)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn fuser(&self) -> &Fuser {
        &self.fuser
    }

    pub fn modes(&self) -> Vec<(u64, ModeState)> {
        self.agents.iter().map(|a| (a.id(), a.mode.clone())).collect()
    }

    pub fn total_ticks(&self) -> u64 {
        (self.cfg.duration * self.cfg.rates.tick_hz).round() as u64
    }

    fn refresh_tree(&mut self) {
        for a in &self.agents {
            self.tree.set_agent_chain(
                a.cfg.id,
                RigidTransform::identity(),
                RigidTransform::from_translation(a.nav.position()),
                a.body_from_camera,
            );
        }
        let yaw = self.cfg.vessel.yaw_deg.to_radians();
        let so = RigidTransform::rot_z(yaw);
        let so = RigidTransform::new(*so.rotation(), self.vessel_nav.position()).unwrap_or(so);
        self.tree.set(FrameId::World, FrameId::VesselOdom, so);
    }

    fn uav_truth(&self, id: u32) -> &UavState {
        self.world
            .uavs
            .iter()
            .find(|u| u.id == id)
            .expect("every agent has a UAV")
    }

    /// Runs one tick.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.cfg.rates.dt();
        step_world(&mut self.world, dt)?;
        let t = self.world.time;
        let tick = self.world.tick;

        // navigation
        for k in 0..self.agents.len() {
            let truth = self.uav_truth(self.agents[k].cfg.id).clone();
            let a = &mut self.agents[k];
            let accel = (truth.velocity - a.prev_velocity) / dt;
            let aggressive = (truth.velocity - a.prev_velocity).norm() > a.cfg.nav.aggressive_speed_change;
            a.prev_velocity = truth.velocity;
            a.nav = nav_predict(&a.nav, dt, &a.cfg.nav, aggressive)?;
            if tick.is_multiple_of(a.cfg.nav.gps_divisor as u64) {
                let z = truth.position + gauss3(&mut a.rng_gps, a.cfg.nav.gps_std);
                a.nav = nav_update(&a.nav, &NavMeasurement::Gps(z), &a.cfg.nav)?;
            }
            if tick.is_multiple_of(a.cfg.nav.imu_divisor as u64) {
                let z = accel + gauss3(&mut a.rng_imu, a.cfg.nav.imu_std);
                a.nav = nav_update(&a.nav, &NavMeasurement::Imu(z), &a.cfg.nav)?;
            }
        }
        let vcfg = self.cfg.vessel.nav;
        self.vessel_nav = nav_predict(&self.vessel_nav, dt, &vcfg, false)?;
        let vz = Vec3::from(self.cfg.vessel.position) + gauss3(&mut self.rng_vessel, vcfg.gps_std);
        self.vessel_nav = nav_update(&self.vessel_nav, &NavMeasurement::Gps(vz), &vcfg)?;
        self.refresh_tree();

        // perception and local tracking
        let truth = self.world.container_truth();
        let mut local = Vec::with_capacity(self.agents.len());
        for k in 0..self.agents.len() {
            let pos = self.uav_truth(self.agents[k].cfg.id).position;
            let a = &mut self.agents[k];
            let w_t_c = RigidTransform::from_translation(pos).compose(&a.body_from_camera);
            let dets = synth_detect(&truth, &w_t_c, &a.cfg.camera, &a.cfg.detector, &mut a.rng_detect);
            let pos_cov = a.nav.position_cov();
            let mut meas = Vec::new();
            for d in dets.iter().filter(|d| d.confidence >= a.cfg.detector.min_confidence) {
                if let Some(m) = lift(d, &a.cfg.camera, &self.tree, a.cfg.id, &a.cfg.range_noise, &pos_cov, t)? {
                    if let Some(disp) = median_disparity(d, &a.cfg.camera) {
                        let z = a.cfg.camera.fb() / disp;
                        self.depths.push(z);
                        self.sigmas
                            .push(a.cfg.camera.depth_std(z, a.cfg.detector.disparity_std));
                    }
                    meas.push(m);
                }
            }
            a.tracker.step(&meas, t)?;
            local.push(LocalRec {
                agent: a.id(),
                measurements: meas.len(),
                counters: a.tracker.counters(),
                tracks: a
                    .tracker
                    .tracks()
                    .iter()
                    .map(|tr| LocalTrackRec {
                        id: tr.id,
                        status: tr.status,
                        position: tr.position(),
                    })
                    .collect(),
            });
        }

        // communication and fusion
        if tick.is_multiple_of(self.cfg.rates.comm_every()) {
            let outgoing: Vec<TrackSummary> = self.agents.iter().flat_map(|a| a.tracker.summaries()).collect();
            let (delivered, stats) = broadcast_round(&outgoing, &self.cfg.bus, &mut self.rng_bus);
            let received = delivered
                .iter()
                .map(|b| BusMessage::decode(b)?.to_summary())
                .collect::<Result<Vec<_>>>()?;
            self.fuser.fuse_round(&received, t)?;
            self.bus.add(&stats);
            self.records.push(Record::Bus { tick, t, stats });
        }

        // allocation and viewpoints
        if tick.is_multiple_of(self.cfg.rates.alloc_every()) {
            self.allocation_cycle(tick, t)?;
        }
        self.update_commands();
        self.log_tick(tick, t, local);
        Ok(())
    }

    fn keep_out(&self, exclude: u64) -> HoverConstraints {
        let mut keep_out = Vec::new();
        for a in self.agents.iter().filter(|a| a.id() != exclude) {
            keep_out.push(a.nav.position());
            if let Some(h) = a.mode.hover {
                keep_out.push(h);
            }
        }
        HoverConstraints {
            keep_out,
            r_safe: self.cfg.alloc.r_safe,
        }
    }

    fn allocation_cycle(&mut self, tick: u64, t: f64) -> Result<()> {
        let ring = self.cfg.mission.ring();
        let noise = self.cfg.alloc.noise;

        // termination
        let open: Vec<usize> = (0..self.fuser.tracks().len())
            .filter(|&k| !self.fuser.tracks()[k].done)
            .collect();
        for k in open {
            let f = self.fuser.tracks()[k].clone();
            let mut gains = Vec::new();
            for a in &self.agents {
                let cands = evaluate_ring(
                    &a.nav.position(),
                    &f.mean,
                    &f.cov,
                    &self.keep_out(a.id()),
                    &ring,
                    &noise,
                )?;
                if let Some(best) = cands.iter().filter(|c| c.feasible).map(|c| c.gain).reduce(f64::max) {
                    gains.push(best);
                }
            }
            if check_termination(&f.cov, &gains, self.cfg.mission.tau_logdet, self.cfg.mission.tau_gain)? {
                self.fuser.tracks_mut()[k].mark_done();
                self.done_targets.push((f.id, t));
                self.records.push(Record::Event {
                    tick,
                    t,
                    event: Event::Done {
                        target: f.id,
                        logdet: f.logdet,
                    },
                });
            }
        }

        // assignment over open targets
        let uavs: Vec<UavInput> = self
            .agents
            .iter()
            .map(|a| UavInput {
                id: a.id(),
                position: a.nav.position(),
                prev_target: a.mode.active,
            })
            .collect();
        let targets: Vec<TargetInput> = self
            .fuser
            .tracks()
            .iter()
            .filter(|f| !f.done)
            .map(|f| TargetInput {
                id: f.id,
                mean: f.mean,
                cov: f.cov,
            })
            .collect();
        self.assignment = solve_cmcf(
            &CostMatrix::build(&uavs, &targets, &self.cfg.alloc)?,
            self.cfg.alloc.capacity,
        );

        // mode machines, in agent id order
        for k in 0..self.agents.len() {
            let id = self.agents[k].id();
            let constraints = self.keep_out(id);
            let inputs = ModeInputs {
                primary: self.assignment.primary_of(id),
                fused: self.fuser.tracks(),
                position: self.agents[k].nav.position(),
                constraints: &constraints,
                ring: &ring,
                noise: &noise,
            };
            let out = mode_step(&self.agents[k].mode, &inputs)?;
            assert!(out.state.invariant_holds(), "Tracking without an active target");
            if let Some(target) = out.handoff {
                let mean = self.fuser.get(target).map_or(Vec3::zeros(), |f| f.mean);
                let vessel_position = self.tree.world_to_vessel(&mean)?;
                self.handoffs += 1;
                self.records.push(Record::Event {
                    tick,
                    t,
                    event: Event::Handoff {
                        uav: id,
                        target,
                        vessel_position,
                    },
                });
            }
            self.agents[k].mode = out.state;
        }
        self.records.push(Record::Assignment {
            tick,
            t,
            assignment: self.assignment.clone(),
        });
        Ok(())
    }

    fn update_commands(&mut self) {
        let radius = self.cfg.mission.arrival_radius;
        for k in 0..self.agents.len() {
            let id = self.agents[k].cfg.id;
            let pos = self.uav_truth(id).position;
            let a = &mut self.agents[k];
            let command = match a.mode.mode {
                Mode::Tracking => a.mode.hover,
                Mode::Surveillance if a.patrol.is_empty() => None,
                Mode::Surveillance => {
                    let n = a.patrol.len();
                    let mut idx = a.mode.waypoint % n;
                    if (a.patrol[idx] - pos).norm() <= radius {
                        idx = (idx + 1) % n;
                    }
                    a.mode.waypoint = idx;
                    Some(a.patrol[idx])
                }
            };
            let u = self
                .world
                .uavs
                .iter_mut()
                .find(|u| u.id == id)
                .expect("every agent has a UAV");
            u.command = command;
        }
    }

    fn log_tick(&mut self, tick: u64, t: f64, local: Vec<LocalRec>) {
        let ent = |id: u32, p: Vec3| EntityRec {
            id: id as u64,
            position: p,
        };
        self.records.push(Record::Truth {
            tick,
            t,
            containers: self.world.containers.iter().map(|c| ent(c.id, c.position)).collect(),
            uavs: self.world.uavs.iter().map(|u| ent(u.id, u.position)).collect(),
        });
        let uavs = self
            .agents
            .iter()
            .map(|a| UavRec {
                id: a.id(),
                position: self.uav_truth(a.cfg.id).position,
                nav_position: a.nav.position(),
                mode: a.mode.mode,
                active: a.mode.active,
                hover: a.mode.hover,
            })
            .collect();
        self.records.push(Record::Uav { tick, t, uavs });
        self.records.push(Record::Local { tick, t, agents: local });
        let tracks = self
            .fuser
            .tracks()
            .iter()
            .map(|f| FusedRec {
                id: f.id,
                mean: f.mean,
                cov_upper: upper(&symmetrize(&f.cov)),
                logdet: f.logdet,
                done: f.done,
            })
            .collect();
        self.records.push(Record::Fused { tick, t, tracks });
    }

    pub fn summary(&self) -> RunSummary {
        let mut track_audit = ContractionAudit::default();
        for a in &self.agents {
            track_audit.merge(a.tracker.audit());
        }
        let duration = self.world.time;
        RunSummary {
            seed: self.cfg.seed,
            duration,
            ticks: self.world.tick,
            agents: self.agents.len(),
            containers: self.world.containers.len(),
            fused_tracks: self.fuser.tracks().len(),
            done_targets: self.done_targets.clone(),
            handoffs: self.handoffs,
            bus: self.bus.clone(),
            bytes_per_second: self.bus.bytes_per_second(duration),
            track_audit,
            fusion_audit: *self.fuser.audit(),
            counters: self.agents.iter().map(|a| (a.id(), a.tracker.counters())).collect(),
            accepted_detections: self.depths.len(),
            typical_depth: median(&self.depths),
            injected_sigma: median(&self.sigmas),
        }
    }

    pub fn finish(mut self) -> RunLog {
        let summary = self.summary();
        self.records.push(Record::Summary { summary });
        RunLog { records: self.records }
    }
}

fn median(v: &[f64]) -> Option<f64> {
    crate::eval::median(v)
}

/// Runs the full mission described by `cfg`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    let mut sim = Simulation::new(cfg.clone())?;
    for _ in 0..sim.total_ticks() {
        sim.step()?;
    }
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn summary(agent: u64, track: u64) -> TrackSummary {
        TrackSummary {
            agent,
            track,
            timestamp: 1.5,
            mean: Vec3::new(1.0, -2.0, 0.25),
            cov: Mat3::new(2.0, 0.1, 0.0, 0.1, 1.0, -0.2, 0.0, -0.2, 0.5),
        }
    }

    #[test]
    fn message_layout() {
        let m = BusMessage::from_summary(&summary(7, 9));
        let b = m.encode();
        assert_eq!(b.len(), 96);
        assert_eq!(u64::from_le_bytes(b[0..8].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 9);
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(b[88..96].try_into().unwrap()), 0.5);
        assert_eq!(BusMessage::decode(&b).unwrap(), m);
        assert_eq!(m.to_summary().unwrap(), summary(7, 9));
        assert!(BusMessage::decode(&b[..95]).is_err());
    }

    fn fifteen() -> Vec<TrackSummary> {
        (0..3).flat_map(|a| (0..5).map(move |t| summary(a, t))).collect()
    }

    #[test]
    fn broadcast_accounting() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (d, s) = broadcast_round(&fifteen(), &BusConfig { drop_probability: 0.0 }, &mut rng);
        assert_eq!(d.len(), 15);
        assert_eq!((s.messages_sent, s.bytes_sent), (15, 1440));
        assert_eq!(s.per_link[&1].bytes, 480);
        let (d, s) = broadcast_round(&fifteen(), &BusConfig { drop_probability: 1.0 }, &mut rng);
        assert!(d.is_empty());
        assert_eq!((s.messages_sent, s.dropped, s.delivered), (15, 15, 0));

        let mut total = BusStats::default();
        for _ in 0..20 {
            total.add(&broadcast_round(&fifteen(), &BusConfig::default(), &mut rng).1);
        }
        assert_eq!(total.bytes_per_second(10.0), 2880.0);
    }

    fn world() -> WorldState {
        WorldState {
            time: 0.0,
            tick: 0,
            containers: vec![ContainerState {
                id: 1,
                position: Vec3::zeros(),
                drift: Vec3::new(0.1, 0.0, 0.0),
                base_z: 0.0,
                bob_amplitude: 0.0,
                bob_period: 8.0,
            }],
            uavs: vec![UavState {
                id: 1,
                position: Vec3::new(10.0, 0.0, 0.0),
                velocity: Vec3::zeros(),
                command: Some(Vec3::zeros()),
                v_max: 2.0,
            }],
        }
    }

    #[test]
    fn world_step_examples() {
        let mut w = world();
        step_world(&mut w, 1.0).unwrap();
        assert!((w.containers[0].position.x - 0.1).abs() < 1e-15);
        assert!((w.uavs[0].position - Vec3::new(8.0, 0.0, 0.0)).amax() < 1e-12);

        let mut still = world();
        still.containers[0].drift = Vec3::zeros();
        still.uavs[0].command = None;
        let before = still.clone();
        step_world(&mut still, 0.5).unwrap();
        assert_eq!(still.containers, before.containers);
        assert_eq!(still.uavs[0].position, before.uavs[0].position);
        assert_eq!(still.time, 0.5);
        assert!(step_world(&mut still, 0.0).is_err());
    }

    #[test]
    fn runlog_rejects_truncation() {
        let cfg = crate::config::ScenarioConfig::from_toml_str(
            "seed = 3\nduration = 2.0\n[[agents]]\nid = 1\nposition = [0.0, 0.0, 20.0]\n\
             [[containers]]\nid = 1\nposition = [2.0, 1.0, 0.0]\n",
        )
        .unwrap();
        let log = run_scenario(&cfg).unwrap();
        assert!(log
            .records
            .iter()
            .any(|r| matches!(r, Record::Bus { stats, .. } if !stats.per_link.is_empty())));
        let text = log.to_jsonl().unwrap();
        assert_eq!(RunLog::from_jsonl(&text).unwrap(), log);
        let cut = &text[..text.len() - 20];
        match RunLog::from_jsonl(cut) {
            Err(Error::RunLog { line, .. }) => assert_eq!(line, text.lines().count()),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn message_round_trip(sender in any::<u64>(), track in any::<u64>(), ts in -1e6..1e6f64,
                              mean in prop::array::uniform3(-1e4..1e4f64), c in prop::array::uniform6(-1e3..1e3f64)) {
            let m = BusMessage { sender, track, timestamp: ts, mean, cov_upper: c };
            let b = m.encode();
            prop_assert_eq!(BusMessage::decode(&b).unwrap(), m);
        }
    }
}
