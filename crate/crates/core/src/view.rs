//! Hover-ring viewpoint selection and the per-UAV mode machine that uses it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuse::FusedTrack;
use crate::linalg::{isotropic_gain, logdet, Mat3, Vec3};
use crate::percept::RangeNoiseModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingParams {
    pub r_h: f64,
    pub h: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub epsilon: f64,
}

impl Default for RingParams {
    fn default() -> Self {
        Self {
            r_h: 4.0,
            h: 6.0,
            l: 8,
            epsilon: 0.1,
        }
    }
}

impl RingParams {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.r_h > 0.0) {
            return Err(("r_h", format!("must be > 0, got {}", self.r_h)));
        }
        if !self.h.is_finite() {
            return Err(("h", "must be finite".into()));
        }
        if self.l == 0 {
            return Err(("L", "must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(("epsilon", "must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoverCandidate {
    pub psi: f64,
    pub pose: Vec3,
    pub gain: f64,
    pub feasible: bool,
    pub travel: f64,
}

pub fn ring_candidates(p_hat: &Vec3, r_h: f64, h: f64, l: usize) -> Result<Vec<HoverCandidate>> {
    if l == 0 {
        return Err(Error::InvalidArgument("ring needs L >= 1".into()));
    }
    if !(r_h > 0.0) {
        return Err(Error::InvalidArgument(format!("ring radius must be > 0, got {r_h}")));
    }
    Ok((0..l)
        .map(|k| {
            let psi = 2.0 * PI * k as f64 / l as f64;
            HoverCandidate {
                psi,
                pose: p_hat + Vec3::new(r_h * psi.cos(), r_h * psi.sin(), h),
                gain: 0.0,
                feasible: true,
                travel: 0.0,
            }
        })
        .collect())
}

pub fn viewpoint_gain(p: &Mat3, q: &Vec3, p_hat: &Vec3, noise: &RangeNoiseModel) -> Result<f64> {
    let s = noise.sigma((q - p_hat).norm());
    isotropic_gain(p, s * s)
}

/// Positions a candidate must keep `r_safe` away from: other UAVs and their
/// selected hover poses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HoverConstraints {
    pub keep_out: Vec<Vec3>,
    pub r_safe: f64,
}

impl HoverConstraints {
    pub fn allows(&self, q: &Vec3) -> bool {
        self.keep_out.iter().all(|o| (q - o).norm() >= self.r_safe)
    }
}

/// All ring candidates, scored and checked against the keep-out set.
pub fn evaluate_ring(
    r: &Vec3,
    p_hat: &Vec3,
    p: &Mat3,
    constraints: &HoverConstraints,
    ring: &RingParams,
    noise: &RangeNoiseModel,
) -> Result<Vec<HoverCandidate>> {
    let mut cands = ring_candidates(p_hat, ring.r_h, ring.h, ring.l)?;
    for c in &mut cands {
        c.gain = viewpoint_gain(p, &c.pose, p_hat, noise)?;
        c.travel = (r - c.pose).norm();
        c.feasible = constraints.allows(&c.pose);
    }
    Ok(cands)
}

/// Feasible candidate with the best gain per travel distance; the smallest
/// ψ wins ties.
pub fn select_hover(
    r: &Vec3,
    p_hat: &Vec3,
    p: &Mat3,
    constraints: &HoverConstraints,
    ring: &RingParams,
    noise: &RangeNoiseModel,
) -> Result<Option<HoverCandidate>> {
    let cands = evaluate_ring(r, p_hat, p, constraints, ring, noise)?;
    Ok(best_candidate(&cands, ring.epsilon))
}

pub fn best_candidate(cands: &[HoverCandidate], epsilon: f64) -> Option<HoverCandidate> {
    let mut best: Option<(f64, HoverCandidate)> = None;
    for c in cands.iter().filter(|c| c.feasible) {
        let score = c.gain / (c.travel + epsilon);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, *c));
        }
    }
    best.map(|(_, c)| c)
}

/// `best_gains` holds, per UAV, its best feasible ring gain (absent UAVs with
/// nothing feasible). An empty list counts as zero achievable gain.
pub fn check_termination(p: &Mat3, best_gains: &[f64], tau_logdet: f64, tau_gain: f64) -> Result<bool> {
    if logdet(p)? <= tau_logdet {
        return Ok(true);
    }
    let max_gain = best_gains.iter().copied().fold(0.0, f64::max);
    Ok(max_gain <= tau_gain)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Surveillance,
    Tracking,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub mode: Mode,
    pub active: Option<u64>,
    pub hover: Option<Vec3>,
    pub waypoint: usize,
}

impl ModeState {
    pub fn invariant_holds(&self) -> bool {
        match self.mode {
            Mode::Tracking => self.active.is_some(),
            Mode::Surveillance => self.active.is_none() && self.hover.is_none(),
        }
    }

    fn surveillance(&self) -> Self {
        Self {
            mode: Mode::Surveillance,
            active: None,
            hover: None,
            waypoint: self.waypoint,
        }
    }
}

pub struct ModeInputs<'a> {
    pub primary: Option<u64>,
    pub fused: &'a [FusedTrack],
    pub position: Vec3,
    pub constraints: &'a HoverConstraints,
    pub ring: &'a RingParams,
    pub noise: &'a RangeNoiseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeOutcome {
    pub state: ModeState,
    /// Target handed to the vessel in this step.
    pub handoff: Option<u64>,
}

pub fn mode_step(m: &ModeState, inp: &ModeInputs<'_>) -> Result<ModeOutcome> {
    let find = |id: u64| inp.fused.iter().find(|f| f.id == id);
    if let (Mode::Tracking, Some(active)) = (m.mode, m.active) {
        if find(active).is_none_or(|f| f.done) {
            return Ok(ModeOutcome {
                state: m.surveillance(),
                handoff: Some(active),
            });
        }
    }
    let target = inp.primary.and_then(find).filter(|f| !f.done);
    let state = match target {
        Some(f) => {
            let hover = select_hover(&inp.position, &f.mean, &f.cov, inp.constraints, inp.ring, inp.noise)?;
            ModeState {
                mode: Mode::Tracking,
                active: Some(f.id),
                hover: hover.map(|c| c.pose),
                waypoint: m.waypoint,
            }
        }
        None => m.surveillance(),
    };
    debug_assert!(state.invariant_holds());
    Ok(ModeOutcome { state, handoff: None })
}
