//! Track-to-track fusion on the vessel node.
//!
//! Agents send position marginals of their confirmed tracks. Summaries are
//! gated against the fused set and clustered. Each cluster is folded with
//! Covariance Intersection, which stays consistent whatever the unknown
//! cross-correlation between agents is. Fused tracks that come to overlap
//! are merged, and stale unfinished ones retire.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::audit::ContractionAudit;
use crate::error::{Error, Result};
use crate::linalg::{check_spd, logdet, spd_inverse, symmetrize, Mat3, Vec3};
use crate::mot::CHI2_3DOF_99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub agent: u64,
    pub track: u64,
    pub timestamp: f64,
    pub mean: Vec3,
    pub cov: Mat3,
}

impl TrackSummary {
    pub fn key(&self) -> (u64, u64) {
        (self.agent, self.track)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedTrack {
    pub id: u64,
    pub mean: Vec3,
    pub cov: Mat3,
    pub contributors: BTreeSet<(u64, u64)>,
    pub last_fuse: f64,
    pub logdet: f64,
    pub logdet_history: Vec<(f64, f64)>,
    pub done: bool,
}

impl FusedTrack {
    /// Marks the track done; done never reverts.
    pub fn mark_done(&mut self) {
        self.done = true;
    }
}

fn ci_info(i1: &Mat3, i2: &Mat3, omega: f64) -> Mat3 {
    i1 * omega + i2 * (1.0 - omega)
}

/// `log det P_CI(ω)` given the two information matrices.
fn ci_objective(i1: &Mat3, i2: &Mat3, omega: f64) -> f64 {
    logdet(&ci_info(i1, i2, omega)).map_or(f64::INFINITY, |ld| -ld)
}

const PLATEAU_TOL: f64 = 1e-12;

fn minimize_omega(i1: &Mat3, i2: &Mat3) -> f64 {
    let f = |w: f64| ci_objective(i1, i2, w);
    let (f0, f1, fh) = (f(0.0), f(1.0), f(0.5));
    let scale = f0.abs().max(1.0);
    if (f0 - f1).abs() <= PLATEAU_TOL * scale && (fh - f0).abs() <= PLATEAU_TOL * scale {
        return 0.5;
    }
    // golden-section search; the objective is convex in ω
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    // endpoints are the optimum whenever the interior point is no better
    if f0 <= fm && f0 <= f1 {
        0.0
    } else if f1 <= fm {
        1.0
    } else {
        mid
    }
}

/// `argmin_ω log det P_CI(ω)` on `[0, 1]`; 0.5 when the objective is flat.
pub fn optimize_omega(p1: &Mat3, p2: &Mat3) -> Result<f64> {
    let i1 = spd_inverse(p1, "CI input covariance")?;
    let i2 = spd_inverse(p2, "CI input covariance")?;
    Ok(minimize_omega(&i1, &i2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiResult {
    pub mean: Vec3,
    pub cov: Mat3,
    pub omega: f64,
}

fn lex_key(mean: &Vec3, cov: &Mat3) -> Vec<f64> {
    cov.iter().chain(mean.iter()).copied().collect()
}

/// Covariance Intersection of two Gaussian estimates.
pub fn ci_fuse(m1: &Vec3, p1: &Mat3, m2: &Vec3, p2: &Mat3) -> Result<CiResult> {
    check_spd(p1, "CI input covariance")?;
    check_spd(p2, "CI input covariance")?;
    // solve in a canonical argument order so that fuse(a,b) == fuse(b,a)
    let swap = lex_key(m2, p2)
        .iter()
        .zip(lex_key(m1, p1).iter())
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y);
    let (ma, pa, mb, pb) = if swap { (m2, p2, m1, p1) } else { (m1, p1, m2, p2) };
    let ia = spd_inverse(pa, "CI input covariance")?;
    let ib = spd_inverse(pb, "CI input covariance")?;
    let w = minimize_omega(&ia, &ib);
    let info = symmetrize(&ci_info(&ia, &ib, w));
    let cov = spd_inverse(&info, "CI fused covariance")?;
    let mean = cov * (ia * ma * w + ib * mb * (1.0 - w));
    let omega = if swap { 1.0 - w } else { w };
    Ok(CiResult { mean, cov, omega })
}

pub fn ci_fuse_pair(a: &TrackSummary, b: &TrackSummary) -> Result<CiResult> {
    ci_fuse(&a.mean, &a.cov, &b.mean, &b.cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialFusion {
    pub mean: Vec3,
    pub cov: Mat3,
    pub omegas: Vec<f64>,
    pub audit: ContractionAudit,
}

/// Left fold of [`ci_fuse_pair`] in `(agent, track)` order.
pub fn ci_fuse_sequential(summaries: &[TrackSummary]) -> Result<SequentialFusion> {
    if summaries.is_empty() {
        return Err(Error::Empty("summary list"));
    }
    let mut order: Vec<&TrackSummary> = summaries.iter().collect();
    order.sort_by_key(|s| s.key());
    check_spd(&order[0].cov, "CI input covariance")?;
    let mut mean = order[0].mean;
    let mut cov = order[0].cov;
    let mut omegas = Vec::new();
    let mut audit = ContractionAudit::default();
    for s in &order[1..] {
        let prior = logdet(&cov)?.min(logdet(&s.cov)?);
        let r = ci_fuse(&mean, &cov, &s.mean, &s.cov)?;
        audit.record(prior, logdet(&r.cov)?);
        mean = r.mean;
        cov = r.cov;
        omegas.push(r.omega);
    }
    Ok(SequentialFusion {
        mean,
        cov,
        omegas,
        audit,
    })
}

/// Independence-assuming information fusion (baseline only; overconfident
/// under correlated errors).
pub fn naive_fuse_pair(a: &TrackSummary, b: &TrackSummary) -> Result<(Vec3, Mat3)> {
    naive_fuse(&a.mean, &a.cov, &b.mean, &b.cov)
}

pub fn naive_fuse(m1: &Vec3, p1: &Mat3, m2: &Vec3, p2: &Mat3) -> Result<(Vec3, Mat3)> {
    let i1 = spd_inverse(p1, "fusion input covariance")?;
    let i2 = spd_inverse(p2, "fusion input covariance")?;
    let cov = spd_inverse(&symmetrize(&(i1 + i2)), "fused covariance")?;
    Ok((cov * (i1 * m1 + i2 * m2), cov))
}

/// `(μa − μb)ᵀ (Pa + Pb)⁻¹ (μa − μb)`
pub fn pair_d2(ma: &Vec3, pa: &Mat3, mb: &Vec3, pb: &Mat3) -> Result<f64> {
    let d = ma - mb;
    let s = spd_inverse(&symmetrize(&(pa + pb)), "gating covariance")?;
    Ok((d.transpose() * s * d)[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuseConfig {
    pub gate: f64,
    /// Isotropic variance growth (m²/s) of a fused estimate while no summary
    /// refreshes it, used only for gating.
    pub stale_inflation: f64,
    /// Fused tracks not yet done and not refreshed for this long (s) are dropped.
    pub retire_after: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            gate: CHI2_3DOF_99,
            stale_inflation: 0.01,
            retire_after: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub fused_id: u64,
    pub is_new: bool,
    /// Indices into the summary slice, canonical order.
    pub members: Vec<usize>,
}

fn gating_cov(f: &FusedTrack, now: f64, cfg: &FuseConfig) -> Mat3 {
    let age = (now - f.last_fuse).max(0.0);
    f.cov + Mat3::identity() * (cfg.stale_inflation * age)
}

/// Maps each summary to exactly one fused id. Existing links
/// `(agent, track) → fused id` are honoured first; the rest are
/// matched greedily by ascending `d²`, then any summary still inside some gate
/// joins its nearest track. Leftovers form new clusters.
pub fn cross_agent_associate(
    summaries: &[TrackSummary],
    fused: &[FusedTrack],
    cfg: &FuseConfig,
    now: f64,
    next_id: &mut u64,
) -> Vec<Cluster> {
    let mut order: Vec<usize> = (0..summaries.len()).collect();
    order.sort_by_key(|&i| summaries[i].key());

    let mut assigned: Vec<Option<usize>> = vec![None; summaries.len()];
    let mut agents_in: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); fused.len()];
    let d2 = |i: usize, f: usize| {
        pair_d2(
            &summaries[i].mean,
            &summaries[i].cov,
            &fused[f].mean,
            &gating_cov(&fused[f], now, cfg),
        )
        .unwrap_or(f64::INFINITY)
    };

    for &i in &order {
        let s = &summaries[i];
        if let Some(f) = fused.iter().position(|f| f.contributors.contains(&s.key())) {
            assigned[i] = Some(f);
            agents_in[f].insert(s.agent);
        }
    }

    let mut pairs = Vec::new();
    for &i in order.iter().filter(|&&i| assigned[i].is_none()) {
        for (f, track) in fused.iter().enumerate() {
            let v = d2(i, f);
            if v <= cfg.gate {
                pairs.push((v, summaries[i].key(), track.id, i, f));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, _, _, i, f) in pairs {
        if assigned[i].is_none() && !agents_in[f].contains(&summaries[i].agent) {
            assigned[i] = Some(f);
            agents_in[f].insert(summaries[i].agent);
        }
    }

    // A second summary from an agent that already contributes still joins the
    // nearest gating track; CI stays consistent under the shared correlation.
    for &i in &order {
        if assigned[i].is_some() {
            continue;
        }
        let best = (0..fused.len())
            .map(|f| (d2(i, f), f))
            .filter(|(v, _)| *v <= cfg.gate)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, f)) = best {
            assigned[i] = Some(f);
        }
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    for (f, track) in fused.iter().enumerate() {
        let members: Vec<usize> = order.iter().copied().filter(|&i| assigned[i] == Some(f)).collect();
        if !members.is_empty() {
            clusters.push(Cluster {
                fused_id: track.id,
                is_new: false,
                members,
            });
        }
    }
    let n_existing = clusters.len();
    for &i in order.iter().filter(|&&i| assigned[i].is_none()) {
        let s = &summaries[i];
        let mut best: Option<(f64, usize)> = None;
        for (c, cl) in clusters.iter().enumerate().skip(n_existing) {
            let head = &summaries[cl.members[0]];
            if cl.members.iter().any(|&m| summaries[m].agent == s.agent) {
                continue;
            }
            let v = pair_d2(&s.mean, &s.cov, &head.mean, &head.cov).unwrap_or(f64::INFINITY);
            if v <= cfg.gate && best.is_none_or(|(bv, _)| v < bv) {
                best = Some((v, c));
            }
        }
        match best {
            Some((_, c)) => clusters[c].members.push(i),
            None => {
                clusters.push(Cluster {
                    fused_id: *next_id,
                    is_new: true,
                    members: vec![i],
                });
                *next_id += 1;
            }
        }
    }
    clusters
}

/// The vessel-side reducer holding the fused track set.
#[derive(Debug, Clone)]
pub struct Fuser {
    pub config: FuseConfig,
    tracks: Vec<FusedTrack>,
    next_id: u64,
    audit: ContractionAudit,
}

impl Fuser {
    pub fn new(config: FuseConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            audit: ContractionAudit::default(),
        }
    }

    pub fn tracks(&self) -> &[FusedTrack] {
        &self.tracks
    }

    pub fn tracks_mut(&mut self) -> &mut [FusedTrack] {
        &mut self.tracks
    }

    pub fn audit(&self) -> &ContractionAudit {
        &self.audit
    }

    pub fn get(&self, id: u64) -> Option<&FusedTrack> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Fuses one communication round. The result does not depend on the
    /// order in which summaries arrived.
    pub fn fuse_round(&mut self, summaries: &[TrackSummary], now: f64) -> Result<Vec<u64>> {
        let clusters = cross_agent_associate(summaries, &self.tracks, &self.config, now, &mut self.next_id);
        let mut touched = Vec::with_capacity(clusters.len());
        for cl in clusters {
            let members: Vec<TrackSummary> = cl.members.iter().map(|&i| summaries[i].clone()).collect();
            let fused = ci_fuse_sequential(&members)?;
            self.audit.merge(&fused.audit);
            let ld = logdet(&fused.cov)?;
            let keys = members.iter().map(|s| s.key());
            if cl.is_new {
                self.tracks.push(FusedTrack {
                    id: cl.fused_id,
                    mean: fused.mean,
                    cov: fused.cov,
                    contributors: keys.collect(),
                    last_fuse: now,
                    logdet: ld,
                    logdet_history: vec![(now, ld)],
                    done: false,
                });
            } else {
                let t = self
                    .tracks
                    .iter_mut()
                    .find(|t| t.id == cl.fused_id)
                    .expect("cluster refers to an existing fused track");
                t.mean = fused.mean;
                t.cov = fused.cov;
                t.contributors.extend(keys);
                t.last_fuse = now;
                t.logdet = ld;
                t.logdet_history.push((now, ld));
            }
            touched.push(cl.fused_id);
        }
        self.merge_overlapping(now)?;
        let retire = self.config.retire_after;
        self.tracks.retain(|t| t.done || now - t.last_fuse <= retire);
        touched.retain(|id| self.tracks.iter().any(|t| t.id == *id));
        Ok(touched)
    }

    /// Folds any fused track that gates with an older one into it, keeping
    /// the older id.
    fn merge_overlapping(&mut self, now: f64) -> Result<()> {
        'scan: loop {
            for a in 0..self.tracks.len() {
                for b in a + 1..self.tracks.len() {
                    let (ta, tb) = (&self.tracks[a], &self.tracks[b]);
                    let v = pair_d2(
                        &ta.mean,
                        &gating_cov(ta, now, &self.config),
                        &tb.mean,
                        &gating_cov(tb, now, &self.config),
                    )?;
                    if v > self.config.gate {
                        continue;
                    }
                    let (keep, gone) = if ta.id < tb.id { (a, b) } else { (b, a) };
                    let g = self.tracks.remove(gone);
                    let keep = if gone < keep { keep - 1 } else { keep };
                    let t = &mut self.tracks[keep];
                    let r = ci_fuse(&t.mean, &t.cov, &g.mean, &g.cov)?;
                    let ld = logdet(&r.cov)?;
                    self.audit.record(t.logdet.min(g.logdet), ld);
                    t.mean = r.mean;
                    t.cov = r.cov;
                    t.contributors.extend(g.contributors);
                    t.last_fuse = t.last_fuse.max(g.last_fuse);
                    t.done |= g.done;
                    t.logdet = ld;
                    t.logdet_history.push((now, ld));
                    continue 'scan;
                }
            }
            return Ok(());
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        Mat3::from_diagonal(&Vec3::new(a, b, c))
    }

    fn summary(agent: u64, track: u64, mean: [f64; 3], cov: Mat3) -> TrackSummary {
        TrackSummary {
            agent,
            track,
            timestamp: 0.0,
            mean: Vec3::from(mean),
            cov,
        }
    }

    fn grid_omega(p1: &Mat3, p2: &Mat3) -> f64 {
        let i1 = p1.try_inverse().unwrap();
        let i2 = p2.try_inverse().unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=10_000 {
            let w = k as f64 / 10_000.0;
            let v = -(i1 * w + i2 * (1.0 - w)).determinant().ln();
            if v < best.0 {
                best = (v, w);
            }
        }
        best.1
    }

    #[test]
    fn omega_examples() {
        let w = optimize_omega(&Mat3::identity(), &(Mat3::identity() * 4.0)).unwrap();
        assert_eq!(w, 1.0);
        assert_eq!(grid_omega(&Mat3::identity(), &(Mat3::identity() * 4.0)), 1.0);
        let p = diag(2.0, 3.0, 0.5);
        assert_eq!(optimize_omega(&p, &p).unwrap(), 0.5);
        let w = optimize_omega(&diag(1.0, 9.0, 3.0), &diag(9.0, 1.0, 3.0)).unwrap();
        assert!((w - 0.5).abs() < 1e-6);
        assert_eq!(grid_omega(&diag(1.0, 9.0, 3.0), &diag(9.0, 1.0, 3.0)), 0.5);
    }

    #[test]
    fn omega_rejects_non_spd() {
        assert!(optimize_omega(&diag(1.0, -1.0, 1.0), &Mat3::identity()).is_err());
    }

    #[test]
    fn ci_pair_examples() {
        let p = diag(2.0, 1.0, 0.5);
        let a = summary(1, 1, [1.0, 2.0, 3.0], p);
        let r = ci_fuse_pair(&a, &summary(2, 1, [1.0, 2.0, 3.0], p)).unwrap();
        assert!((r.cov - p).amax() < 1e-12);
        assert!((r.mean - a.mean).amax() < 1e-12);

        let r = ci_fuse_pair(
            &summary(1, 1, [0.0; 3], Mat3::identity()),
            &summary(2, 1, [1.0; 3], Mat3::identity() * 4.0),
        )
        .unwrap();
        assert_eq!(r.omega, 1.0);
        assert!(r.mean.amax() < 1e-12);
        assert!((r.cov - Mat3::identity()).amax() < 1e-12);

        let r = ci_fuse_pair(
            &summary(1, 1, [0.0; 3], diag(1.0, 9.0, 3.0)),
            &summary(2, 1, [0.0; 3], diag(9.0, 1.0, 3.0)),
        )
        .unwrap();
        assert!((r.cov - diag(1.8, 1.8, 3.0)).amax() < 1e-6);
    }

    #[test]
    fn sequential_examples() {
        assert!(matches!(ci_fuse_sequential(&[]), Err(Error::Empty(_))));
        let s = summary(3, 9, [1.0, -1.0, 2.0], diag(0.3, 0.4, 0.5));
        let r = ci_fuse_sequential(std::slice::from_ref(&s)).unwrap();
        assert_eq!(r.mean, s.mean);
        assert_eq!(r.cov, s.cov);
        let three = [
            s.clone(),
            summary(1, 2, [1.0, -1.0, 2.0], s.cov),
            summary(2, 5, [1.0, -1.0, 2.0], s.cov),
        ];
        let r = ci_fuse_sequential(&three).unwrap();
        assert!((r.mean - s.mean).amax() < 1e-12);
        assert!((r.cov - s.cov).amax() < 1e-12);
    }

    #[test]
    fn sequential_fold_matches_step_by_step_oracle() {
        let list = [
            summary(2, 1, [0.3, 0.0, 0.1], diag(4.0, 1.0, 2.0)),
            summary(1, 7, [0.0, 0.2, 0.0], diag(1.0, 3.0, 2.0)),
            summary(3, 4, [0.1, 0.1, -0.2], diag(2.0, 2.0, 0.5)),
        ];
        let r = ci_fuse_sequential(&list).unwrap();
        // canonical order: agent 1, 2, 3
        let s12 = ci_fuse_pair(&list[1], &list[0]).unwrap();
        let s123 = ci_fuse(&s12.mean, &s12.cov, &list[2].mean, &list[2].cov).unwrap();
        assert!((r.cov - s123.cov).amax() < 1e-12);
        assert!((r.mean - s123.mean).amax() < 1e-12);
        let prefixes = [
            logdet(&list[1].cov).unwrap(),
            logdet(&s12.cov).unwrap(),
            logdet(&list[0].cov).unwrap(),
            logdet(&list[2].cov).unwrap(),
        ];
        let min_prefix = prefixes.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(logdet(&r.cov).unwrap() <= min_prefix + 1e-9);
        assert_eq!(r.audit.violations, 0);
        assert_eq!(r.audit.checked, 2);
    }

    #[test]
    fn naive_examples() {
        let a = summary(1, 1, [0.0; 3], Mat3::identity() * 2.0);
        let b = summary(2, 1, [2.0; 3], Mat3::identity() * 2.0);
        let (m, p) = naive_fuse_pair(&a, &b).unwrap();
        assert!((p - Mat3::identity()).amax() < 1e-12);
        assert!((m - Vec3::new(1.0, 1.0, 1.0)).amax() < 1e-12);
        let a = summary(1, 1, [0.0; 3], Mat3::identity());
        let b = summary(2, 1, [5.0; 3], Mat3::identity() * 1e6);
        let (_, p) = naive_fuse_pair(&a, &b).unwrap();
        assert!((p - Mat3::identity()).amax() < 1e-3);
    }

    #[test]
    fn cross_agent_examples() {
        let mut next = 1;
        let cfg = FuseConfig::default();
        let near = [
            summary(1, 1, [0.0; 3], Mat3::identity()),
            summary(2, 1, [0.1, 0.0, 0.0], Mat3::identity()),
        ];
        // d² = 0.01 / 2 = 0.005
        let d = pair_d2(&near[0].mean, &near[0].cov, &near[1].mean, &near[1].cov).unwrap();
        assert!((d - 0.005).abs() < 1e-12);
        let c = cross_agent_associate(&near, &[], &cfg, 0.0, &mut next);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, vec![0, 1]);

        let far = [
            summary(1, 1, [0.0; 3], Mat3::identity()),
            summary(2, 1, [20.0, 0.0, 0.0], Mat3::identity()),
        ];
        assert_eq!(cross_agent_associate(&far, &[], &cfg, 0.0, &mut next).len(), 2);
        assert!(cross_agent_associate(&[], &[], &cfg, 0.0, &mut next).is_empty());
    }

    #[test]
    fn same_agent_summaries_open_separate_new_clusters() {
        let mut next = 1;
        let s = [
            summary(1, 1, [0.0; 3], Mat3::identity()),
            summary(1, 2, [0.1, 0.0, 0.0], Mat3::identity()),
        ];
        let c = cross_agent_associate(&s, &[], &FuseConfig::default(), 0.0, &mut next);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn fuser_keeps_identity_and_is_order_independent() {
        let mut a = Fuser::new(FuseConfig::default());
        let mut b = Fuser::new(FuseConfig::default());
        let round = vec![
            summary(1, 4, [0.0; 3], Mat3::identity() * 0.5),
            summary(2, 9, [0.2, 0.0, 0.0], Mat3::identity() * 0.8),
            summary(3, 1, [30.0, 0.0, 0.0], Mat3::identity() * 0.5),
        ];
        let mut rev = round.clone();
        rev.reverse();
        a.fuse_round(&round, 0.0).unwrap();
        b.fuse_round(&rev, 0.0).unwrap();
        assert_eq!(a.tracks(), b.tracks());
        assert_eq!(a.tracks().len(), 2);
        let ids: Vec<u64> = a.tracks().iter().map(|t| t.id).collect();
        let moved = vec![summary(1, 4, [0.3, 0.0, 0.0], Mat3::identity() * 0.4)];
        a.fuse_round(&moved, 0.5).unwrap();
        assert_eq!(a.tracks().iter().map(|t| t.id).collect::<Vec<_>>(), ids);
        assert!((a.tracks()[0].mean.x - 0.3).abs() < 1e-12);
        assert_eq!(a.audit().violations, 0);
    }

    #[test]
    fn overlapping_fused_tracks_merge_into_older_id() {
        let mut f = Fuser::new(FuseConfig::default());
        // same agent twice, far enough apart to open two clusters
        f.fuse_round(
            &[
                summary(1, 1, [0.0; 3], Mat3::identity() * 0.01),
                summary(1, 2, [3.0, 0.0, 0.0], Mat3::identity() * 0.01),
            ],
            0.0,
        )
        .unwrap();
        assert_eq!(f.tracks().len(), 2);
        f.fuse_round(
            &[
                summary(1, 1, [0.0; 3], Mat3::identity()),
                summary(1, 2, [0.5, 0.0, 0.0], Mat3::identity()),
            ],
            0.5,
        )
        .unwrap();
        assert_eq!(f.tracks().len(), 1);
        let t = &f.tracks()[0];
        assert_eq!(t.id, 1);
        assert!(t.contributors.contains(&(1, 1)) && t.contributors.contains(&(1, 2)));
        assert_eq!(f.audit().violations, 0);
    }

    #[test]
    fn stale_tracks_retire_unless_done() {
        let cfg = FuseConfig {
            retire_after: 2.0,
            ..Default::default()
        };
        let mut f = Fuser::new(cfg);
        f.fuse_round(
            &[
                summary(1, 1, [0.0; 3], Mat3::identity()),
                summary(1, 2, [50.0, 0.0, 0.0], Mat3::identity()),
            ],
            0.0,
        )
        .unwrap();
        f.tracks_mut()[1].mark_done();
        f.fuse_round(&[summary(2, 1, [100.0, 0.0, 0.0], Mat3::identity())], 2.0)
            .unwrap();
        assert_eq!(f.tracks().len(), 3);
        f.fuse_round(&[summary(2, 1, [100.0, 0.0, 0.0], Mat3::identity())], 2.5)
            .unwrap();
        let ids: Vec<u64> = f.tracks().iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![2, 3]);
    }

    fn arb_spd() -> impl Strategy<Value = Mat3> {
        (prop::array::uniform3(0.1..10.0f64), prop::array::uniform3(-3.2..3.2f64)).prop_map(|(ev, ang)| {
            let r = nalgebra::Rotation3::from_euler_angles(ang[0], ang[1], ang[2]).into_inner();
            symmetrize(&(r * diag(ev[0], ev[1], ev[2]) * r.transpose()))
        })
    }

    proptest! {
        #[test]
        fn ci_is_symmetric(p1 in arb_spd(), p2 in arb_spd(),
                           m1 in prop::array::uniform3(-5.0..5.0f64), m2 in prop::array::uniform3(-5.0..5.0f64)) {
            let (m1, m2) = (Vec3::from(m1), Vec3::from(m2));
            let ab = ci_fuse(&m1, &p1, &m2, &p2).unwrap();
            let ba = ci_fuse(&m2, &p2, &m1, &p1).unwrap();
            prop_assert!((ab.mean - ba.mean).amax() < 1e-9);
            prop_assert!((ab.cov - ba.cov).amax() < 1e-9);
            prop_assert!((ab.omega - (1.0 - ba.omega)).abs() < 1e-12);
        }

        #[test]
        fn ci_cov_spd_for_every_omega(p1 in arb_spd(), p2 in arb_spd(), w in 0.0..=1.0f64) {
            let i1 = p1.try_inverse().unwrap();
            let i2 = p2.try_inverse().unwrap();
            let p = spd_inverse(&symmetrize(&ci_info(&i1, &i2, w)), "p");
            prop_assert!(p.is_ok());
            prop_assert!(crate::linalg::is_spd(&p.unwrap()));
        }

        #[test]
        fn naive_is_tighter_than_ci(p1 in arb_spd(), p2 in arb_spd()) {
            let ci = ci_fuse(&Vec3::zeros(), &p1, &Vec3::zeros(), &p2).unwrap();
            let (_, naive) = naive_fuse(&Vec3::zeros(), &p1, &Vec3::zeros(), &p2).unwrap();
            prop_assert!(naive.trace() <= ci.cov.trace() + 1e-9);
        }

        #[test]
        fn ci_never_increases_logdet(p1 in arb_spd(), p2 in arb_spd()) {
            let r = ci_fuse(&Vec3::zeros(), &p1, &Vec3::zeros(), &p2).unwrap();
            let prior = logdet(&p1).unwrap().min(logdet(&p2).unwrap());
            prop_assert!(logdet(&r.cov).unwrap() <= prior + 1e-9);
        }
    }
}
