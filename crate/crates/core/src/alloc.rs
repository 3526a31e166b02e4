//! Information-driven UAV-to-target assignment as a capacitated min-cost flow.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{isotropic_gain, Mat3, Vec3};
use crate::percept::RangeNoiseModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocConfig {
    pub eta: f64,
    pub beta: f64,
    pub rho: f64,
    pub gamma: f64,
    /// Kept for configuration compatibility. Out-of-range pairs are removed
    /// from the graph instead of being penalised.
    pub kappa: f64,
    pub d_max: f64,
    pub r_safe: f64,
    pub capacity: usize,
    pub noise: RangeNoiseModel,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            beta: 0.05,
            rho: 0.5,
            gamma: 1.0,
            kappa: 0.0,
            d_max: 200.0,
            r_safe: 3.0,
            capacity: 2,
            noise: RangeNoiseModel::default(),
        }
    }
}

impl AllocConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        for (name, v) in [
            ("eta", self.eta),
            ("beta", self.beta),
            ("rho", self.rho),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.d_max > 0.0) {
            return Err(("d_max", "must be > 0".into()));
        }
        if !(self.r_safe >= 0.0) {
            return Err(("r_safe", "must be >= 0".into()));
        }
        if self.capacity == 0 {
            return Err(("capacity", "must be >= 1".into()));
        }
        self.noise.validate().map_err(|(_, m)| ("noise", m))
    }
}

/// Expected logdet reduction from one isotropic measurement taken at range `d`.
pub fn info_gain_proxy(p: &Mat3, d: f64, noise: &RangeNoiseModel) -> Result<f64> {
    let s = noise.sigma(d.max(0.0));
    isotropic_gain(p, s * s)
}

pub fn separation_penalty(r: &Vec3, others: &[Vec3], r_safe: f64) -> f64 {
    if r_safe <= 0.0 {
        return 0.0;
    }
    others
        .iter()
        .map(|o| ((r_safe - (r - o).norm()) / r_safe).max(0.0))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostInputs {
    pub gain: f64,
    pub distance: f64,
    pub is_prev: bool,
    pub separation: f64,
}

pub fn assignment_cost(inputs: &CostInputs, cfg: &AllocConfig) -> (f64, bool) {
    let cost = -cfg.eta * inputs.gain + cfg.beta * inputs.distance - if inputs.is_prev { cfg.rho } else { 0.0 }
        + cfg.gamma * inputs.separation;
    (cost, inputs.distance <= cfg.d_max)
}

/// `cost[j][i]` for UAV `j` and target `i`; `None` means no edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub uav_ids: Vec<u64>,
    pub target_ids: Vec<u64>,
    pub cost: Vec<Vec<Option<f64>>>,
}

impl CostMatrix {
    pub fn from_dense(uav_ids: Vec<u64>, target_ids: Vec<u64>, cost: Vec<Vec<Option<f64>>>) -> Self {
        assert_eq!(cost.len(), uav_ids.len());
        assert!(cost.iter().all(|r| r.len() == target_ids.len()));
        Self {
            uav_ids,
            target_ids,
            cost,
        }
    }

    /// Dense matrix with ids `1..=M` and `1..=N`, all pairs feasible.
    pub fn feasible(cost: &[Vec<f64>]) -> Self {
        let n = cost.first().map_or(0, Vec::len);
        Self::from_dense(
            (1..=cost.len() as u64).collect(),
            (1..=n as u64).collect(),
            cost.iter().map(|r| r.iter().map(|&c| Some(c)).collect()).collect(),
        )
    }

    /// Builds the matrix for one allocation cycle.
    pub fn build(uavs: &[UavInput], targets: &[TargetInput], cfg: &AllocConfig) -> Result<Self> {
        let positions: Vec<Vec3> = uavs.iter().map(|u| u.position).collect();
        let mut cost = Vec::with_capacity(uavs.len());
        for (j, u) in uavs.iter().enumerate() {
            let others: Vec<Vec3> = positions
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, p)| *p)
                .collect();
            let phi = separation_penalty(&u.position, &others, cfg.r_safe);
            let mut row = Vec::with_capacity(targets.len());
            for t in targets {
                let d = (u.position - t.mean).norm();
                let gain = info_gain_proxy(&t.cov, d, &cfg.noise)?;
                let (c, ok) = assignment_cost(
                    &CostInputs {
                        gain,
                        distance: d,
                        is_prev: u.prev_target == Some(t.id),
                        separation: phi,
                    },
                    cfg,
                );
                row.push(ok.then_some(c));
            }
            cost.push(row);
        }
        Ok(Self::from_dense(
            uavs.iter().map(|u| u.id).collect(),
            targets.iter().map(|t| t.id).collect(),
            cost,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavInput {
    pub id: u64,
    pub position: Vec3,
    pub prev_target: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetInput {
    pub id: u64,
    pub mean: Vec3,
    pub cov: Mat3,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UavAssignment {
    pub uav: u64,
    /// Lowest cost first.
    pub targets: Vec<u64>,
    pub primary: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSet {
    pub per_uav: Vec<UavAssignment>,
    pub total_cost: f64,
    pub flow: usize,
}

impl AssignmentSet {
    pub fn for_uav(&self, uav: u64) -> Option<&UavAssignment> {
        self.per_uav.iter().find(|a| a.uav == uav)
    }

    pub fn primary_of(&self, uav: u64) -> Option<u64> {
        self.for_uav(uav).and_then(|a| a.primary)
    }
}

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: f64,
}

/// Residual graph with paired forward/backward arcs (`e ^ 1` is the twin).
#[derive(Debug, Clone, Default)]
struct FlowNetwork {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let e = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[from].push(e);
        self.adj[to].push(e + 1);
        e
    }

    fn bellman_ford(&self, src: usize) -> Vec<f64> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        dist[src] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if !dist[u].is_finite() {
                    continue;
                }
                for &e in &self.adj[u] {
                    let a = &self.arcs[e];
                    if a.cap > 0 && dist[u] + a.cost < dist[a.to] {
                        dist[a.to] = dist[u] + a.cost;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist
    }

    /// Dense Dijkstra on reduced costs; ties resolve to the lower node index.
    fn dijkstra(&self, src: usize, pot: &[f64]) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut done = vec![false; n];
        dist[src] = 0.0;
        loop {
            let mut u = None;
            for v in 0..n {
                if !done[v] && dist[v].is_finite() && u.is_none_or(|b: usize| dist[v] < dist[b]) {
                    u = Some(v);
                }
            }
            let Some(u) = u else { break };
            done[u] = true;
            for &e in &self.adj[u] {
                let a = &self.arcs[e];
                if a.cap <= 0 || done[a.to] {
                    continue;
                }
                let rc = (a.cost + pot[u] - pot[a.to]).max(0.0);
                if dist[u] + rc < dist[a.to] {
                    dist[a.to] = dist[u] + rc;
                    prev[a.to] = Some(e);
                }
            }
        }
        (dist, prev)
    }
}

/// Minimum-cost maximum flow by successive shortest paths.
///
/// Every UAV can take up to `capacity` targets and every target goes to at
/// most one UAV. The flow is maximal first, then cheapest.
pub fn solve_cmcf(costs: &CostMatrix, capacity: usize) -> AssignmentSet {
    let m = costs.uav_ids.len();
    let n = costs.target_ids.len();
    let src = 0;
    let sink = m + n + 1;
    let mut g = FlowNetwork::new(m + n + 2);
    for j in 0..m {
        g.add(src, 1 + j, capacity as i64, 0.0);
    }
    let mut pair_arcs = Vec::new();
    for j in 0..m {
        for i in 0..n {
            if let Some(c) = costs.cost[j][i] {
                pair_arcs.push((j, i, g.add(1 + j, 1 + m + i, 1, c)));
            }
        }
    }
    for i in 0..n {
        g.add(1 + m + i, sink, 1, 0.0);
    }

    let mut pot = g.bellman_ford(src);
    let max_finite = pot.iter().copied().filter(|p| p.is_finite()).fold(0.0, f64::max);
    for p in pot.iter_mut().filter(|p| !p.is_finite()) {
        *p = max_finite;
    }

    let mut flow = 0;
    loop {
        let (dist, prev) = g.dijkstra(src, &pot);
        if !dist[sink].is_finite() {
            break;
        }
        let reach_max = dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
        for (p, d) in pot.iter_mut().zip(&dist) {
            *p += if d.is_finite() { *d } else { reach_max };
        }
        let mut v = sink;
        while let Some(e) = prev[v] {
            g.arcs[e].cap -= 1;
            g.arcs[e ^ 1].cap += 1;
            v = g.arcs[e ^ 1].to;
        }
        flow += 1;
    }

    let mut per_uav: Vec<UavAssignment> = costs
        .uav_ids
        .iter()
        .map(|&uav| UavAssignment {
            uav,
            ..Default::default()
        })
        .collect();
    let mut chosen: Vec<Vec<(f64, u64)>> = vec![Vec::new(); m];
    let mut total = 0.0;
    let mut taken = vec![false; n];
    for &(j, i, e) in &pair_arcs {
        if g.arcs[e].cap == 0 {
            let c = g.arcs[e].cost;
            assert!(!taken[i], "target assigned twice");
            taken[i] = true;
            chosen[j].push((c, costs.target_ids[i]));
            total += c;
        }
    }
    for (a, mut list) in per_uav.iter_mut().zip(chosen) {
        assert!(list.len() <= capacity, "UAV capacity exceeded");
        list.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        a.targets = list.into_iter().map(|(_, id)| id).collect();
        a.primary = a.targets.first().copied();
    }
    AssignmentSet {
        per_uav,
        total_cost: total,
        flow,
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::CostMatrix;

    /// Exhaustive search: maximum cardinality, then minimum cost. Every
    /// target picks one UAV or none, `(m + 1)^n` combinations in all.
    pub fn brute_force(c: &CostMatrix, k: usize) -> (usize, f64) {
        let m = c.uav_ids.len();
        let n = c.target_ids.len();
        let mut best = (0usize, 0.0f64);
        'combo: for code in 0..(m + 1).pow(n as u32) {
            let (mut rest, mut load, mut flow, mut cost) = (code, vec![0usize; m], 0, 0.0);
            for i in 0..n {
                let choice = rest % (m + 1);
                rest /= m + 1;
                if choice == 0 {
                    continue;
                }
                let j = choice - 1;
                match c.cost[j][i] {
                    Some(v) if load[j] < k => {
                        load[j] += 1;
                        flow += 1;
                        cost += v;
                    }
                    _ => continue 'combo,
                }
            }
            if flow > best.0 || (flow == best.0 && cost < best.1) {
                best = (flow, cost);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::oracle::brute_force;
    use super::*;

    #[test]
    fn gain_proxy_examples() {
        // sigma0 = 1, k = 0 gives R = I at any range
        let unit = RangeNoiseModel { sigma0: 1.0, k: 0.0 };
        let g = info_gain_proxy(&(Mat3::identity() * 4.0), 10.0, &unit).unwrap();
        assert!((g - 3.0 * 5f64.ln()).abs() < 1e-12);
        assert!((g - 4.8283).abs() < 1e-4);
        let dense = (Mat3::identity() * 4.0).determinant().ln() - (Mat3::identity() * 0.8).determinant().ln();
        assert!((g - dense).abs() < 1e-12);
        let far = info_gain_proxy(&Mat3::identity(), 1e9, &RangeNoiseModel::default()).unwrap();
        assert!(far < 1e-12);
        assert!(info_gain_proxy(&(Mat3::identity() * -1.0), 1.0, &unit).is_err());
    }

    #[test]
    fn gain_proxy_decreases_with_range() {
        let p = Mat3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5);
        let noise = RangeNoiseModel::default();
        let mut last = f64::INFINITY;
        for k in 0..200 {
            let g = info_gain_proxy(&p, k as f64 * 0.5, &noise).unwrap();
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn separation_examples() {
        let r = Vec3::zeros();
        assert_eq!(separation_penalty(&r, &[Vec3::new(10.0, 0.0, 0.0)], 3.0), 0.0);
        assert_eq!(separation_penalty(&r, &[r], 3.0), 1.0);
        assert!((separation_penalty(&r, &[Vec3::new(1.5, 0.0, 0.0)], 3.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cost_examples() {
        let cfg = AllocConfig {
            eta: 1.0,
            beta: 0.1,
            rho: 0.5,
            gamma: 0.0,
            d_max: 50.0,
            ..Default::default()
        };
        let inputs = CostInputs {
            gain: 4.8283,
            distance: 10.0,
            is_prev: true,
            separation: 0.0,
        };
        let (c, ok) = assignment_cost(&inputs, &cfg);
        assert!((c + 4.3283).abs() < 1e-12);
        assert!(ok);
        let (_, ok) = assignment_cost(
            &CostInputs {
                distance: 50.0 + 1e-9,
                ..inputs
            },
            &cfg,
        );
        assert!(!ok);
        let zero = AllocConfig {
            eta: 0.0,
            beta: 0.0,
            rho: 0.0,
            gamma: 0.0,
            d_max: 50.0,
            ..Default::default()
        };
        assert_eq!(assignment_cost(&inputs, &zero), (0.0, true));
    }

    #[test]
    fn solver_examples() {
        let a = solve_cmcf(&CostMatrix::feasible(&[vec![1.0, 5.0], vec![2.0, 1.0]]), 1);
        assert_eq!(a.primary_of(1), Some(1));
        assert_eq!(a.primary_of(2), Some(2));
        assert_eq!(a.total_cost, 2.0);

        let a = solve_cmcf(&CostMatrix::feasible(&[vec![3.0, 4.0]]), 2);
        assert_eq!(a.for_uav(1).unwrap().targets, vec![1, 2]);
        assert_eq!(a.total_cost, 7.0);

        let a = solve_cmcf(&CostMatrix::feasible(&[vec![-2.0, 0.0], vec![0.0, -3.0]]), 1);
        assert_eq!(a.primary_of(1), Some(1));
        assert_eq!(a.primary_of(2), Some(2));
        assert_eq!(a.total_cost, -5.0);

        let a = solve_cmcf(&CostMatrix::feasible(&[]), 2);
        assert_eq!(a.flow, 0);
        assert!(a.per_uav.is_empty());
    }

    #[test]
    fn infeasible_edges_are_absent() {
        let c = CostMatrix::from_dense(vec![7], vec![3, 4], vec![vec![None, Some(100.0)]]);
        let a = solve_cmcf(&c, 2);
        assert_eq!(a.for_uav(7).unwrap().targets, vec![4]);
        assert_eq!(a.flow, 1);
    }

    #[test]
    fn flow_is_maximal_before_cheap() {
        // leaving target 2 unassigned would be cheaper but is not maximal
        let a = solve_cmcf(&CostMatrix::feasible(&[vec![-5.0, 9.0]]), 2);
        assert_eq!(a.flow, 2);
        assert_eq!(a.total_cost, 4.0);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (CostMatrix, usize) {
        let m = rng.random_range(0..=3);
        let n = rng.random_range(0..=5);
        let k = rng.random_range(1..=2);
        let p_inf = rng.random_range(0.0..0.5);
        let cost = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| (!rng.random_bool(p_inf)).then(|| rng.random_range(-10.0..10.0)))
                    .collect()
            })
            .collect();
        (
            CostMatrix::from_dense((1..=m as u64).collect(), (1..=n as u64).collect(), cost),
            k,
        )
    }

    #[test]
    fn solver_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let (c, k) = random_instance(&mut rng);
            let a = solve_cmcf(&c, k);
            let (flow, cost) = brute_force(&c, k);
            assert_eq!(a.flow, flow);
            assert!((a.total_cost - cost).abs() < 1e-9, "{c:?} {a:?} {cost}");
        }
    }

    #[test]
    fn repeated_solves_are_identical() {
        let c = CostMatrix::feasible(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]);
        let a = solve_cmcf(&c, 1);
        assert_eq!(a, solve_cmcf(&c, 1));
        assert_eq!(a.primary_of(1), Some(1));
        assert_eq!(a.primary_of(2), Some(2));
    }

    #[test]
    fn equal_distance_primary_has_max_gain() {
        let cfg = AllocConfig {
            beta: 0.0,
            rho: 0.0,
            gamma: 0.0,
            capacity: 1,
            ..Default::default()
        };
        let uavs = [UavInput {
            id: 1,
            position: Vec3::zeros(),
            prev_target: None,
        }];
        let targets: Vec<TargetInput> = [0.5, 3.0, 1.5]
            .iter()
            .enumerate()
            .map(|(i, &s)| TargetInput {
                id: i as u64 + 1,
                mean: Vec3::new(10.0 * (i as f64).cos(), 10.0 * (i as f64).sin(), 0.0),
                cov: Mat3::identity() * s,
            })
            .collect();
        let a = solve_cmcf(&CostMatrix::build(&uavs, &targets, &cfg).unwrap(), 1);
        assert_eq!(a.primary_of(1), Some(2));
    }

    proptest! {
        #[test]
        fn raising_stickiness_keeps_previous_pair(seed in any::<u64>(), extra in 0.0..5.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (base, k) = random_instance(&mut rng);
            let m = base.uav_ids.len();
            let n = base.target_ids.len();
            prop_assume!(m > 0 && n > 0);
            let j = rng.random_range(0..m);
            let i = rng.random_range(0..n);
            prop_assume!(base.cost[j][i].is_some());
            let a = solve_cmcf(&base, k);
            prop_assume!(a.for_uav(base.uav_ids[j]).unwrap().targets.contains(&base.target_ids[i]));
            let mut sticky = base.clone();
            sticky.cost[j][i] = sticky.cost[j][i].map(|c| c - extra);
            let (flow, best) = brute_force(&sticky, k);
            // a large bonus makes the oracle prefer maximal solutions containing (j, i)
            let mut forced = sticky.clone();
            forced.cost[j][i] = forced.cost[j][i].map(|c| c - 1000.0);
            let (fflow, fbest) = brute_force(&forced, k);
            let fbest = fbest + 1000.0;
            prop_assert_eq!(fflow, flow);
            prop_assert!((fbest - best).abs() < 1e-9);
        }
    }
}
