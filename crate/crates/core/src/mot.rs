//! Per-agent multi-object tracker. Each target gets a constant-velocity
//! Kalman filter, fed by greedy nearest-neighbour association under a
//! Mahalanobis gate. Tracks move from tentative to confirmed to pruned.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::audit::ContractionAudit;
use crate::error::{Error, Result};
use crate::fuse::TrackSummary;
use crate::linalg::{check_spd, logdet, spd_inverse, symmetrize, Mat3, Vec3};
use crate::percept::Measurement3D;

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;
type Mat3x6 = SMatrix<f64, 3, 6>;

/// chi-square(3) 0.99 quantile.
pub const CHI2_3DOF_99: f64 = 11.345;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotConfig {
    pub gate: f64,
    pub n_confirm: u32,
    /// Seconds without an update before a confirmed track is pruned.
    pub prune_timeout: f64,
    /// Same for tentative tracks.
    pub tentative_timeout: f64,
    /// Prune when `log det` of the position covariance exceeds this.
    pub prune_logdet: f64,
    /// White-acceleration PSD (m²/s³) of the constant-velocity model.
    pub accel_psd: f64,
    pub init_vel_var: f64,
}

impl Default for MotConfig {
    fn default() -> Self {
        Self {
            gate: CHI2_3DOF_99,
            n_confirm: 3,
            prune_timeout: 5.0,
            tentative_timeout: 0.5,
            prune_logdet: 9.0,
            accel_psd: 0.01,
            init_vel_var: 0.25,
        }
    }
}

impl MotConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.gate > 0.0) {
            return Err(("gate", "must be > 0".into()));
        }
        if self.n_confirm == 0 {
            return Err(("n_confirm", "must be >= 1".into()));
        }
        if !(self.prune_timeout > 0.0) || !(self.tentative_timeout > 0.0) {
            return Err(("prune_timeout", "timeouts must be > 0".into()));
        }
        if !(self.accel_psd >= 0.0) || !(self.init_vel_var > 0.0) {
            return Err(("accel_psd", "noise terms must be non-negative".into()));
        }
        if !self.prune_logdet.is_finite() {
            return Err(("prune_logdet", "must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Pruned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub mean: Vec6,
    pub cov: Mat6,
    /// Time the state refers to.
    pub time: f64,
    pub last_update: f64,
    pub hits: u32,
    pub status: TrackStatus,
}

impl Track {
    pub fn spawn(id: u64, m: &Measurement3D, init_vel_var: f64) -> Self {
        let mut mean = Vec6::zeros();
        mean.fixed_rows_mut::<3>(0).copy_from(&m.position);
        let mut cov = Mat6::identity() * init_vel_var;
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&m.cov);
        Track {
            id,
            mean,
            cov,
            time: m.timestamp,
            last_update: m.timestamp,
            hits: 1,
            status: TrackStatus::Tentative,
        }
    }

    pub fn position(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(3).into_owned()
    }

    pub fn position_cov(&self) -> Mat3 {
        self.cov.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn summary(&self, agent: u32) -> TrackSummary {
        TrackSummary {
            agent: agent as u64,
            track: self.id,
            timestamp: self.time,
            mean: self.position(),
            cov: self.position_cov(),
        }
    }
}

fn h() -> Mat3x6 {
    Mat3x6::identity()
}

pub fn cv_transition(dt: f64) -> Mat6 {
    let mut f = Mat6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

pub fn cv_process_noise(dt: f64, psd: f64) -> Mat6 {
    let mut q = Mat6::zeros();
    for i in 0..3 {
        q[(i, i)] = psd * dt.powi(3) / 3.0;
        q[(i, i + 3)] = psd * dt.powi(2) / 2.0;
        q[(i + 3, i)] = psd * dt.powi(2) / 2.0;
        q[(i + 3, i + 3)] = psd * dt;
    }
    q
}

pub fn track_predict(t: &Track, dt: f64, accel_psd: f64) -> Result<Track> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    let f = cv_transition(dt);
    Ok(Track {
        mean: f * t.mean,
        cov: symmetrize(&(f * t.cov * f.transpose() + cv_process_noise(dt, accel_psd))),
        time: t.time + dt,
        ..t.clone()
    })
}

/// Squared Mahalanobis distance of the innovation `z - Hx` under `S = HPHᵀ + R`.
pub fn mahalanobis_d2(t: &Track, m: &Measurement3D) -> Result<f64> {
    let nu = m.position - t.position();
    let s = symmetrize(&(t.position_cov() + m.cov));
    let s_inv = spd_inverse(&s, "innovation covariance")?;
    Ok((nu.transpose() * s_inv * nu)[0])
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationResult {
    /// `(track id, measurement index, d²)`
    pub matches: Vec<(u64, usize, f64)>,
    pub unmatched_measurements: Vec<usize>,
    pub unmatched_tracks: Vec<u64>,
}

/// Greedy global-minimum-first matching over gated pairs. Ties on `d²` go to
/// the lower track id, then the lower measurement index.
pub fn associate(tracks: &[Track], measurements: &[Measurement3D], gate: f64) -> AssociationResult {
    let mut pairs = Vec::new();
    for t in tracks {
        for (k, m) in measurements.iter().enumerate() {
            if let Ok(d2) = mahalanobis_d2(t, m) {
                if d2 <= gate {
                    pairs.push((d2, t.id, k));
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    greedy_from_sorted(pairs, tracks.iter().map(|t| t.id), measurements.len())
}

pub(crate) fn greedy_from_sorted(
    pairs: Vec<(f64, u64, usize)>,
    track_ids: impl Iterator<Item = u64>,
    n_meas: usize,
) -> AssociationResult {
    let mut used_meas = vec![false; n_meas];
    let mut used_tracks = std::collections::BTreeSet::new();
    let mut matches = Vec::new();
    for (d2, tid, k) in pairs {
        if used_meas[k] || used_tracks.contains(&tid) {
            continue;
        }
        used_meas[k] = true;
        used_tracks.insert(tid);
        matches.push((tid, k, d2));
    }
    AssociationResult {
        matches,
        unmatched_measurements: (0..n_meas).filter(|k| !used_meas[*k]).collect(),
        unmatched_tracks: track_ids.filter(|id| !used_tracks.contains(id)).collect(),
    }
}

/// Kalman update with `H = [I3 0]` in Joseph form.
pub fn track_update(t: &Track, m: &Measurement3D) -> Result<Track> {
    check_spd(&m.cov, "measurement covariance")?;
    let h = h();
    let ph = t.cov * h.transpose();
    let s = symmetrize(&(h * ph + m.cov));
    let k = ph * spd_inverse(&s, "innovation covariance")?;
    let ikh = Mat6::identity() - k * h;
    let cov = symmetrize(&(ikh * t.cov * ikh.transpose() + k * m.cov * k.transpose()));
    Ok(Track {
        mean: t.mean + k * (m.position - t.position()),
        cov,
        last_update: m.timestamp,
        hits: t.hits + 1,
        ..t.clone()
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackCounters {
    /// Hypotheses ever created.
    pub raw: u64,
    pub pruned: u64,
    /// Tracks currently confirmed.
    pub used: u64,
}

impl TrackCounters {
    pub fn efficiency(&self) -> f64 {
        crate::eval::pruning_efficiency(self)
    }
}

/// Spawns tentative tracks for unmatched measurements and confirms tracks
/// with enough hits. Stale or diffuse tracks are pruned and leave the set.
pub fn lifecycle_step(
    mut tracks: Vec<Track>,
    assoc: &AssociationResult,
    measurements: &[Measurement3D],
    now: f64,
    config: &MotConfig,
    next_id: &mut u64,
) -> (Vec<Track>, TrackCounters) {
    let mut delta = TrackCounters::default();
    for &k in &assoc.unmatched_measurements {
        tracks.push(Track::spawn(*next_id, &measurements[k], config.init_vel_var));
        *next_id += 1;
        delta.raw += 1;
    }
    for t in tracks.iter_mut() {
        if t.status == TrackStatus::Tentative && t.hits >= config.n_confirm {
            t.status = TrackStatus::Confirmed;
        }
        let timeout = match t.status {
            TrackStatus::Tentative => config.tentative_timeout,
            _ => config.prune_timeout,
        };
        let diffuse = logdet(&t.position_cov()).map_or(true, |ld| ld > config.prune_logdet);
        if now - t.last_update > timeout || diffuse {
            t.status = TrackStatus::Pruned;
            delta.pruned += 1;
        }
    }
    tracks.retain(|t| t.status != TrackStatus::Pruned);
    delta.used = tracks.iter().filter(|t| t.status == TrackStatus::Confirmed).count() as u64;
    (tracks, delta)
}

/// One agent's tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub agent: u32,
    pub config: MotConfig,
    tracks: Vec<Track>,
    next_id: u64,
    counters: TrackCounters,
    audit: ContractionAudit,
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub matched: usize,
    pub spawned: u64,
    pub pruned: u64,
}

impl Tracker {
    pub fn new(agent: u32, config: MotConfig) -> Self {
        Self {
            agent,
            config,
            tracks: Vec::new(),
            next_id: 1,
            counters: TrackCounters::default(),
            audit: ContractionAudit::default(),
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn counters(&self) -> TrackCounters {
        self.counters
    }

    pub fn audit(&self) -> &ContractionAudit {
        &self.audit
    }

    /// Predicts every track to `now` and updates the matched ones before the
    /// lifecycle rules run.
    pub fn step(&mut self, measurements: &[Measurement3D], now: f64) -> Result<StepReport> {
        for t in self.tracks.iter_mut() {
            let dt = now - t.time;
            if dt > 0.0 {
                *t = track_predict(t, dt, self.config.accel_psd)?;
            }
        }
        let assoc = associate(&self.tracks, measurements, self.config.gate);
        for &(tid, k, _) in &assoc.matches {
            let t = self
                .tracks
                .iter_mut()
                .find(|t| t.id == tid)
                .expect("matched track exists");
            let prior = logdet(&t.position_cov())?;
            *t = track_update(t, &measurements[k])?;
            self.audit.record(prior, logdet(&t.position_cov())?);
        }
        let tracks = std::mem::take(&mut self.tracks);
        let (tracks, delta) = lifecycle_step(tracks, &assoc, measurements, now, &self.config, &mut self.next_id);
        self.tracks = tracks;
        self.counters.raw += delta.raw;
        self.counters.pruned += delta.pruned;
        self.counters.used = delta.used;
        Ok(StepReport {
            matched: assoc.matches.len(),
            spawned: delta.raw,
            pruned: delta.pruned,
        })
    }

    /// Position marginals of confirmed tracks, ordered by local id.
    pub fn summaries(&self) -> Vec<TrackSummary> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
            .map(|t| t.summary(self.agent))
            .collect()
    }
}
