//! Post-hoc metrics over a run log.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::mot::TrackCounters;
use crate::sim::{Record, RunLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub truth: u64,
    pub track: u64,
    pub error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub matches: Vec<Match>,
    pub missed: Vec<u64>,
    pub false_tracks: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMatching {
    pub radius: f64,
    pub frames: Vec<Frame>,
}

/// Greedy one-to-one matching by ascending distance, ties by (truth, track) id.
pub fn match_frame(t: f64, truth: &[(u64, Vec3)], tracks: &[(u64, Vec3)], radius: f64) -> Frame {
    let mut pairs = Vec::new();
    for (g, pg) in truth {
        for (h, ph) in tracks {
            let d = (pg - ph).norm();
            if d <= radius {
                pairs.push((d, *g, *h));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut frame = Frame {
        t,
        ..Default::default()
    };
    let mut used_g = Vec::new();
    let mut used_h = Vec::new();
    for (d, g, h) in pairs {
        if !used_g.contains(&g) && !used_h.contains(&h) {
            used_g.push(g);
            used_h.push(h);
            frame.matches.push(Match {
                truth: g,
                track: h,
                error: d,
            });
        }
    }
    frame.matches.sort_by_key(|m| m.truth);
    frame.missed = truth.iter().map(|(g, _)| *g).filter(|g| !used_g.contains(g)).collect();
    frame.false_tracks = tracks.iter().map(|(h, _)| *h).filter(|h| !used_h.contains(h)).collect();
    frame
}

/// Matches fused tracks against container truth on every tick.
pub fn match_frames(log: &RunLog, radius: f64) -> FrameMatching {
    let mut truth: BTreeMap<u64, (f64, Vec<(u64, Vec3)>)> = BTreeMap::new();
    let mut fused: BTreeMap<u64, Vec<(u64, Vec3)>> = BTreeMap::new();
    for r in &log.records {
        match r {
            Record::Truth {
                tick, t, containers, ..
            } => {
                truth.insert(*tick, (*t, containers.iter().map(|c| (c.id, c.position)).collect()));
            }
            Record::Fused { tick, tracks, .. } => {
                fused.insert(*tick, tracks.iter().map(|f| (f.id, f.mean)).collect());
            }
            _ => {}
        }
    }
    let frames = truth
        .into_iter()
        .map(|(tick, (t, g))| {
            let h = fused.get(&tick).map_or(&[][..], Vec::as_slice);
            match_frame(t, &g, h, radius)
        })
        .collect();
    FrameMatching { radius, frames }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityMetrics {
    pub idf1: f64,
    pub idsw: u64,
    pub frag: u64,
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

const MAX_EXACT_SIDE: usize = 20;

/// Maximum-weight one-to-one assignment between rows and columns of `w` by
/// dynamic programming over subsets of the smaller side.
fn max_weight_mapping(w: &[Vec<u64>]) -> Result<u64> {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    // weights indexed [small side][large side]
    let sw: Vec<Vec<u64>> = if rows <= cols {
        w.to_vec()
    } else {
        (0..cols).map(|c| (0..rows).map(|r| w[r][c]).collect()).collect()
    };
    let small = sw.len();
    let large = rows.max(cols);
    if small > MAX_EXACT_SIDE {
        return Err(Error::InvalidArgument(format!(
            "identity mapping needs one side <= {MAX_EXACT_SIDE}, got {small}"
        )));
    }
    let mut dp = vec![0u64; 1 << small];
    for l in 0..large {
        let prev = dp.clone();
        for (mask, &base) in prev.iter().enumerate() {
            for (s, row) in sw.iter().enumerate() {
                if mask & (1 << s) == 0 {
                    let next = mask | (1 << s);
                    dp[next] = dp[next].max(base + row[l]);
                }
            }
        }
    }
    Ok(dp.into_iter().max().unwrap_or(0))
}

pub fn identity_metrics(fm: &FrameMatching) -> Result<IdentityMetrics> {
    let mut truths: Vec<u64> = Vec::new();
    let mut tracks: Vec<u64> = Vec::new();
    let mut n_gt = 0u64;
    let mut n_pred = 0u64;
    for f in &fm.frames {
        n_gt += (f.matches.len() + f.missed.len()) as u64;
        n_pred += (f.matches.len() + f.false_tracks.len()) as u64;
        for m in &f.matches {
            truths.push(m.truth);
            tracks.push(m.track);
        }
    }
    truths.sort_unstable();
    truths.dedup();
    tracks.sort_unstable();
    tracks.dedup();
    let mut w = vec![vec![0u64; tracks.len()]; truths.len()];
    for f in &fm.frames {
        for m in &f.matches {
            let g = truths.binary_search(&m.truth).expect("collected above");
            let h = tracks.binary_search(&m.track).expect("collected above");
            w[g][h] += 1;
        }
    }
    let idtp = max_weight_mapping(&w)?;
    let idf1 = if n_gt + n_pred == 0 {
        1.0
    } else {
        2.0 * idtp as f64 / (n_gt + n_pred) as f64
    };

    let mut idsw = 0;
    let mut frag = 0;
    let mut last_id: BTreeMap<u64, u64> = BTreeMap::new();
    let mut matched_before: BTreeMap<u64, bool> = BTreeMap::new();
    let mut in_gap: BTreeMap<u64, bool> = BTreeMap::new();
    for f in &fm.frames {
        for m in &f.matches {
            if let Some(&prev) = last_id.get(&m.truth) {
                if prev != m.track {
                    idsw += 1;
                }
            }
            last_id.insert(m.truth, m.track);
            if in_gap.get(&m.truth).copied().unwrap_or(false) {
                frag += 1;
            }
            matched_before.insert(m.truth, true);
            in_gap.insert(m.truth, false);
        }
        for g in &f.missed {
            if matched_before.get(g).copied().unwrap_or(false) {
                in_gap.insert(*g, true);
            }
        }
    }
    Ok(IdentityMetrics {
        idf1,
        idsw,
        frag,
        idtp,
        idfp: n_pred - idtp,
        idfn: n_gt - idtp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub median: f64,
    pub rmse: f64,
    pub p95: f64,
}

/// Median with the two middle values averaged for even lengths.
pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

/// Nearest-rank percentile, `p` in `(0, 100]`.
pub fn percentile_nearest_rank(v: &[f64], p: f64) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    Some(s[rank.min(s.len()) - 1])
}

pub fn summarize_errors(errors: &[f64]) -> Option<ErrorStats> {
    let median = median(errors)?;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    Some(ErrorStats {
        count: errors.len(),
        median,
        rmse,
        p95: percentile_nearest_rank(errors, 95.0)?,
    })
}

/// `None` is the empty-report marker (no matches at all).
pub fn error_stats(fm: &FrameMatching) -> Option<ErrorStats> {
    let errors: Vec<f64> = fm
        .frames
        .iter()
        .flat_map(|f| f.matches.iter().map(|m| m.error))
        .collect();
    summarize_errors(&errors)
}

/// Fraction of track hypotheses removed by the lifecycle rules.
pub fn pruning_efficiency(c: &TrackCounters) -> f64 {
    if c.raw == 0 {
        0.0
    } else {
        c.pruned as f64 / c.raw as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerOutcome {
    pub container: u64,
    /// Fused track matched on the last frame.
    pub track: Option<u64>,
    pub done_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub radius: f64,
    pub identity: IdentityMetrics,
    /// `None` when nothing was ever matched.
    pub errors: Option<ErrorStats>,
    pub mean_logdet: Option<f64>,
    pub pruning_efficiency: Vec<(u64, f64)>,
    pub bytes_per_second: f64,
    pub containers: Vec<ContainerOutcome>,
    pub all_containers_done: bool,
}

pub fn compute_report(log: &RunLog) -> Result<MetricsReport> {
    let radius = log.config().map_or(5.0, |c| c.eval.radius);
    let fm = match_frames(log, radius);
    let identity = identity_metrics(&fm)?;
    let errors = error_stats(&fm);

    let mut logdets = Vec::new();
    let mut done_at: BTreeMap<u64, f64> = BTreeMap::new();
    let mut last_counters: BTreeMap<u64, TrackCounters> = BTreeMap::new();
    for r in &log.records {
        match r {
            Record::Fused { t, tracks, .. } => {
                for f in tracks {
                    logdets.push(f.logdet);
                    if f.done {
                        done_at.entry(f.id).or_insert(*t);
                    }
                }
            }
            Record::Local { agents, .. } => {
                for a in agents {
                    last_counters.insert(a.agent, a.counters);
                }
            }
            _ => {}
        }
    }
    let mean_logdet = (!logdets.is_empty()).then(|| logdets.iter().sum::<f64>() / logdets.len() as f64);

    let containers: Vec<ContainerOutcome> = match fm.frames.last() {
        Some(last) => last
            .matches
            .iter()
            .map(|m| (m.truth, Some(m.track)))
            .chain(last.missed.iter().map(|g| (*g, None)))
            .map(|(g, h)| ContainerOutcome {
                container: g,
                track: h,
                done_at: h.and_then(|h| done_at.get(&h).copied()),
            })
            .collect(),
        None => Vec::new(),
    };
    let mut containers = containers;
    containers.sort_by_key(|c| c.container);
    let all_containers_done = containers.iter().all(|c| c.done_at.is_some());

    let summary = log.summary();
    Ok(MetricsReport {
        frames: fm.frames.len(),
        radius,
        identity,
        errors,
        mean_logdet,
        pruning_efficiency: last_counters.iter().map(|(a, c)| (*a, pruning_efficiency(c))).collect(),
        bytes_per_second: summary.map_or(0.0, |s| s.bytes_per_second),
        containers,
        all_containers_done,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct LogdetRow {
    t: f64,
    track: u64,
    logdet: f64,
    done: bool,
}

#[derive(Serialize)]
struct FractionRow {
    uav: u64,
    target: String,
    fraction: f64,
}

#[derive(Serialize)]
struct PruningRow {
    t: f64,
    agent: u64,
    raw: u64,
    pruned: u64,
    efficiency: f64,
}

/// Writes `logdet.csv`, `assignment_fractions.csv` and `pruning.csv` into `dir`.
pub fn write_csv_series(log: &RunLog, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut logdet = Vec::new();
    let mut pruning = Vec::new();
    // per UAV: cycles, and cycles per primary target
    let mut cycles: BTreeMap<u64, (u64, BTreeMap<Option<u64>, u64>)> = BTreeMap::new();
    for r in &log.records {
        match r {
            Record::Fused { t, tracks, .. } => logdet.extend(tracks.iter().map(|f| LogdetRow {
                t: *t,
                track: f.id,
                logdet: f.logdet,
                done: f.done,
            })),
            Record::Local { t, agents, .. } => pruning.extend(agents.iter().map(|a| PruningRow {
                t: *t,
                agent: a.agent,
                raw: a.counters.raw,
                pruned: a.counters.pruned,
                efficiency: pruning_efficiency(&a.counters),
            })),
            Record::Assignment { assignment, .. } => {
                for a in &assignment.per_uav {
                    let e = cycles.entry(a.uav).or_default();
                    e.0 += 1;
                    *e.1.entry(a.primary).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    let fractions = cycles.iter().flat_map(|(uav, (n, per))| {
        per.iter().map(move |(target, k)| FractionRow {
            uav: *uav,
            target: target.map_or("none".to_string(), |t| t.to_string()),
            fraction: *k as f64 / *n as f64,
        })
    });
    let paths = [
        dir.join("logdet.csv"),
        dir.join("assignment_fractions.csv"),
        dir.join("pruning.csv"),
    ];
    write_csv(&paths[0], logdet)?;
    write_csv(&paths[1], fractions)?;
    write_csv(&paths[2], pruning)?;
    Ok(paths.to_vec())
}

#[cfg(test)]
pub(crate) mod traces {
    use super::*;

    /// Ten frames of one truth with the given matched id per frame.
    pub fn single_truth(ids: &[Option<u64>]) -> FrameMatching {
        FrameMatching {
            radius: 5.0,
            frames: ids
                .iter()
                .enumerate()
                .map(|(k, id)| Frame {
                    t: k as f64,
                    matches: id
                        .map(|h| Match {
                            truth: 1,
                            track: h,
                            error: 0.0,
                        })
                        .into_iter()
                        .collect(),
                    missed: if id.is_none() { vec![1] } else { vec![] },
                    false_tracks: vec![],
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::traces::single_truth;
    use super::*;

    #[test]
    fn matching_examples() {
        let o = Vec3::zeros();
        let f = match_frame(0.0, &[(1, o)], &[(7, o)], 5.0);
        assert_eq!(f.matches.len(), 1);
        let f = match_frame(0.0, &[(1, o)], &[(7, Vec3::new(5.0 + 1e-9, 0.0, 0.0))], 5.0);
        assert_eq!((f.missed.clone(), f.false_tracks.clone()), (vec![1], vec![7]));
        // distance matrix [[1, 9], [9, 1]]
        let g = [(1, Vec3::zeros()), (2, Vec3::new(10.0, 0.0, 0.0))];
        let h = [(10, Vec3::new(1.0, 0.0, 0.0)), (20, Vec3::new(9.0, 0.0, 0.0))];
        let f = match_frame(0.0, &g, &h, 5.0);
        let pairs: Vec<(u64, u64)> = f.matches.iter().map(|m| (m.truth, m.track)).collect();
        assert_eq!(pairs, vec![(1, 10), (2, 20)]);
    }

    #[test]
    fn identity_examples() {
        let m = identity_metrics(&single_truth(&[Some(4); 10])).unwrap();
        assert_eq!((m.idf1, m.idsw, m.frag), (1.0, 0, 0));
        let mut split = vec![Some(1); 5];
        split.extend([Some(2); 5]);
        let m = identity_metrics(&single_truth(&split)).unwrap();
        assert_eq!((m.idf1, m.idsw, m.frag), (0.5, 1, 0));
        let gap = [Some(3), Some(3), None, Some(3), Some(3)];
        let m = identity_metrics(&single_truth(&gap)).unwrap();
        assert_eq!((m.idsw, m.frag), (0, 1));
        let late = [None, None, Some(3), Some(3)];
        assert_eq!(identity_metrics(&single_truth(&late)).unwrap().frag, 0);
    }

    #[test]
    fn error_examples() {
        let s = summarize_errors(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.median, 2.0);
        assert_eq!(s.p95, 3.0);
        assert!((s.rmse - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z = summarize_errors(&[0.0; 4]).unwrap();
        assert_eq!((z.median, z.rmse, z.p95), (0.0, 0.0, 0.0));
        let one = summarize_errors(&[2.5]).unwrap();
        assert_eq!((one.median, one.rmse, one.p95), (2.5, 2.5, 2.5));
        assert!(summarize_errors(&[]).is_none());
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn pruning_examples() {
        let c = TrackCounters {
            raw: 100,
            pruned: 38,
            used: 0,
        };
        assert_eq!(pruning_efficiency(&c), 0.38);
        assert_eq!(pruning_efficiency(&TrackCounters::default()), 0.0);
    }

    fn brute_mapping(w: &[Vec<u64>]) -> u64 {
        fn rec(g: usize, w: &[Vec<u64>], used: &mut Vec<bool>) -> u64 {
            if g == w.len() {
                return 0;
            }
            let mut best = rec(g + 1, w, used);
            for h in 0..used.len() {
                if !used[h] {
                    used[h] = true;
                    best = best.max(w[g][h] + rec(g + 1, w, used));
                    used[h] = false;
                }
            }
            best
        }
        let cols = w.first().map_or(0, Vec::len);
        rec(0, w, &mut vec![false; cols])
    }

    proptest! {
        #[test]
        fn mapping_dp_matches_enumeration(w in prop::collection::vec(prop::collection::vec(0u64..20, 0..6), 0..6)) {
            let cols = w.iter().map(Vec::len).min().unwrap_or(0);
            let w: Vec<Vec<u64>> = w.into_iter().map(|r| r[..cols].to_vec()).collect();
            prop_assert_eq!(max_weight_mapping(&w).unwrap(), brute_mapping(&w));
        }

        #[test]
        fn stats_are_ordered(e in prop::collection::vec(0.0..100.0f64, 1..50)) {
            let s = summarize_errors(&e).unwrap();
            prop_assert!(s.median <= s.p95);
            prop_assert!(s.rmse >= 0.0);
        }

        #[test]
        fn perfect_traces_have_unit_idf1(ids in prop::collection::vec(prop::option::of(1u64..4), 1..12)) {
            let m = identity_metrics(&single_truth(&ids)).unwrap();
            let matched: Vec<u64> = ids.iter().flatten().copied().collect();
            let one_id = matched.windows(2).all(|w| w[0] == w[1]);
            let full = ids.iter().all(Option::is_some);
            if full {
                prop_assert_eq!(m.idf1 == 1.0, one_id && m.idsw == 0);
            }
            prop_assert!((0.0..=1.0).contains(&m.idf1));
        }
    }
}
