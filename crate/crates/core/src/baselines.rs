//! Grid-restricted team orienteering baseline solved with GRASP, used in closed
//! loop against the receding-horizon planner.
//!
//! Vehicles move between grid targets along the 4-neighborhood. A plan is a
//! list of waypoints per vehicle; the walk between consecutive waypoints goes
//! along x first, then along y. Every node on the walk counts as visited on
//! arrival.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{RewardVector, Vec2, VehicleState};

/// Cruise speed of the baseline vehicles in m/s.
pub const BASELINE_SPEED: f64 = 1.0;
/// Acceleration used by the upper-bound travel model in m/s².
pub const BASELINE_ACCEL: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridGraph {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    pub origin: Vec2,
}

impl GridGraph {
    pub fn new(width: usize, height: usize, spacing: f64, origin: Vec2) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("grid", "width and height must be >= 1"));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::param("spacing", "must be finite and > 0"));
        }
        Ok(GridGraph {
            width,
            height,
            spacing,
            origin,
        })
    }

    pub fn square(w: usize, spacing: f64, origin: Vec2) -> Result<Self> {
        GridGraph::new(w, w, spacing, origin)
    }

    pub fn node_count(&self) -> usize {
        self.width * self.height
    }

    pub fn edge_count(&self) -> usize {
        self.width * (self.height - 1) + self.height * (self.width - 1)
    }

    /// Column and row of node `i` (row-major, x fastest).
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.width, i / self.width)
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn position(&self, i: usize) -> Vec2 {
        let (c, r) = self.coords(i);
        [
            self.origin[0] + c as f64 * self.spacing,
            self.origin[1] + r as f64 * self.spacing,
        ]
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let (c, r) = self.coords(i);
        let mut out = Vec::with_capacity(4);
        if c > 0 {
            out.push(self.index(c - 1, r));
        }
        if c + 1 < self.width {
            out.push(self.index(c + 1, r));
        }
        if r > 0 {
            out.push(self.index(c, r - 1));
        }
        if r + 1 < self.height {
            out.push(self.index(c, r + 1));
        }
        out
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        let (ca, ra) = self.coords(a);
        let (cb, rb) = self.coords(b);
        ca.abs_diff(cb) + ra.abs_diff(rb) == 1
    }

    /// Number of edges on a shortest grid walk.
    pub fn hops(&self, a: usize, b: usize) -> usize {
        let (ca, ra) = self.coords(a);
        let (cb, rb) = self.coords(b);
        ca.abs_diff(cb) + ra.abs_diff(rb)
    }

    /// Nodes visited walking from `a` to `b`, x first, excluding `a`.
    pub fn walk(&self, a: usize, b: usize, out: &mut Vec<usize>) {
        let (mut c, mut r) = self.coords(a);
        let (cb, rb) = self.coords(b);
        while c != cb {
            c = if cb > c { c + 1 } else { c - 1 };
            out.push(self.index(c, r));
        }
        while r != rb {
            r = if rb > r { r + 1 } else { r - 1 };
            out.push(self.index(c, r));
        }
    }

    /// Closest node to `p`; ties go to the lowest index.
    pub fn nearest_node(&self, p: Vec2) -> usize {
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.node_count() {
            let q = self.position(i);
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TravelModel {
    /// Constant cruise speed, instantaneous turns.
    LowerBound,
    /// Rest-to-rest trapezoidal speed profile on every edge.
    UpperBound,
}

impl TravelModel {
    /// Distance covered, speed and signed acceleration along a straight move
    /// of length `d`, `t` seconds after departure.
    pub fn profile(self, d: f64, t: f64) -> (f64, f64, f64) {
        let total = travel_time(d, self);
        let t = t.clamp(0.0, total);
        match self {
            TravelModel::LowerBound => (d.min(BASELINE_SPEED * t), BASELINE_SPEED, 0.0),
            TravelModel::UpperBound => {
                let (v, a) = (BASELINE_SPEED, BASELINE_ACCEL);
                if d >= v * v / a {
                    let ramp = v / a;
                    if t < ramp {
                        (0.5 * a * t * t, a * t, a)
                    } else if t <= total - ramp {
                        (0.5 * a * ramp * ramp + v * (t - ramp), v, 0.0)
                    } else {
                        let rest = total - t;
                        (d - 0.5 * a * rest * rest, a * rest, -a)
                    }
                } else {
                    let half = 0.5 * total;
                    if t < half {
                        (0.5 * a * t * t, a * t, a)
                    } else {
                        let rest = total - t;
                        (d - 0.5 * a * rest * rest, a * rest, -a)
                    }
                }
            }
        }
    }
}

/// Time to cover `d` meters under `model`, starting and (for the upper bound)
/// ending at rest.
pub fn travel_time(d: f64, model: TravelModel) -> f64 {
    match model {
        TravelModel::LowerBound => d / BASELINE_SPEED,
        TravelModel::UpperBound => {
            let (v, a) = (BASELINE_SPEED, BASELINE_ACCEL);
            if d >= v * v / a {
                d / v + v / a
            } else {
                2.0 * (d / a).sqrt()
            }
        }
    }
}

pub fn edge_travel_time(spacing: f64, model: TravelModel) -> Result<f64> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::param("spacing", "must be finite and > 0"));
    }
    Ok(travel_time(spacing, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspConfig {
    pub iterations: usize,
    /// Fraction of the ranked candidates kept in the restricted candidate list.
    pub rcl_alpha: f64,
    /// Upper bound on local-search sweeps per iteration.
    pub max_local_passes: usize,
}

impl Default for GraspConfig {
    fn default() -> Self {
        GraspConfig {
            iterations: 5,
            rcl_alpha: 0.3,
            max_local_passes: 100,
        }
    }
}

impl GraspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be >= 1"));
        }
        if !(self.rcl_alpha > 0.0 && self.rcl_alpha <= 1.0) {
            return Err(Error::param("rcl_alpha", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub start: usize,
    pub waypoints: Vec<usize>,
    /// Expanded walk including the start node.
    pub walk: Vec<usize>,
    /// Arrival time at every node of `walk`.
    pub arrivals: Vec<f64>,
}

impl Route {
    fn build(graph: &GridGraph, start: usize, waypoints: Vec<usize>, edge_time: f64) -> Self {
        let mut walk = vec![start];
        let mut last = start;
        for &w in &waypoints {
            graph.walk(last, w, &mut walk);
            last = w;
        }
        let arrivals = (0..walk.len()).map(|i| i as f64 * edge_time).collect();
        Route {
            start,
            waypoints,
            walk,
            arrivals,
        }
    }

    pub fn duration(&self) -> f64 {
        self.arrivals.last().copied().unwrap_or(0.0)
    }

    /// First node to move to, if the route moves at all.
    pub fn next_node(&self) -> Option<usize> {
        self.walk.get(1).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamPlan {
    pub routes: Vec<Route>,
    pub objective: f64,
    pub edge_time: f64,
    pub horizon: f64,
}

/// Integral of `r(t)²` over `duration` seconds for `r(t) = a + k t`.
fn squared_ramp_integral(a: f64, k: f64, duration: f64) -> f64 {
    if k == 0.0 {
        a * a * duration
    } else {
        let b = a + k * duration;
        (b * b * b - a * a * a) / (3.0 * k)
    }
}

/// Frozen-snapshot objective: the time integral over the horizon of Σ r_i²,
/// with each reward reset to zero whenever a vehicle arrives at its node.
struct Objective<'a> {
    rewards: &'a [f64],
    k_gain: f64,
    horizon: f64,
    edge_time: f64,
    /// Cost of every node when nobody visits it.
    untouched: Vec<f64>,
    untouched_total: f64,
}

impl<'a> Objective<'a> {
    fn new(rewards: &'a RewardVector, horizon: f64, edge_time: f64) -> Self {
        let untouched: Vec<f64> = rewards
            .values
            .iter()
            .map(|&r| squared_ramp_integral(r, rewards.k_gain, horizon))
            .collect();
        let untouched_total = untouched.iter().sum();
        Objective {
            rewards: &rewards.values,
            k_gain: rewards.k_gain,
            horizon,
            edge_time,
            untouched,
            untouched_total,
        }
    }

    fn node_cost(&self, node: usize, visits: &mut [f64]) -> f64 {
        visits.sort_by(f64::total_cmp);
        let mut total = 0.0;
        let mut value = self.rewards[node];
        let mut t = 0.0;
        for &tv in visits.iter() {
            total += squared_ramp_integral(value, self.k_gain, tv - t);
            value = 0.0;
            t = tv;
        }
        total + squared_ramp_integral(value, self.k_gain, self.horizon - t)
    }

    /// Evaluates routes given as start node plus waypoints.
    fn eval(&self, graph: &GridGraph, starts: &[usize], routes: &[Vec<usize>], scratch: &mut Scratch) -> f64 {
        scratch.visits.clear();
        for (v, wps) in routes.iter().enumerate() {
            scratch.walk.clear();
            scratch.walk.push(starts[v]);
            let mut last = starts[v];
            for &w in wps {
                graph.walk(last, w, &mut scratch.walk);
                last = w;
            }
            for (i, &node) in scratch.walk.iter().enumerate() {
                scratch.visits.push((node, i as f64 * self.edge_time));
            }
        }
        scratch.visits.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut total = self.untouched_total;
        let mut i = 0;
        while i < scratch.visits.len() {
            let node = scratch.visits[i].0;
            let mut j = i;
            scratch.times.clear();
            while j < scratch.visits.len() && scratch.visits[j].0 == node {
                scratch.times.push(scratch.visits[j].1);
                j += 1;
            }
            let mut times = std::mem::take(&mut scratch.times);
            total += self.node_cost(node, &mut times) - self.untouched[node];
            scratch.times = times;
            i = j;
        }
        total
    }
}

#[derive(Default)]
struct Scratch {
    visits: Vec<(usize, f64)>,
    walk: Vec<usize>,
    times: Vec<f64>,
}

fn route_hops(graph: &GridGraph, start: usize, wps: &[usize]) -> usize {
    let mut last = start;
    let mut total = 0;
    for &w in wps {
        total += graph.hops(last, w);
        last = w;
    }
    total
}

struct Search<'a> {
    graph: &'a GridGraph,
    objective: Objective<'a>,
    starts: &'a [usize],
    max_hops: usize,
    cfg: &'a GraspConfig,
}

impl Search<'_> {
    fn construct(&self, rng: &mut ChaCha8Rng, scratch: &mut Scratch) -> (Vec<Vec<usize>>, f64) {
        let m = self.starts.len();
        let n = self.graph.node_count();
        let mut routes: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut current = self.objective.eval(self.graph, self.starts, &routes, scratch);
        loop {
            let mut candidates: Vec<(f64, usize, usize, f64)> = Vec::new();
            for v in 0..m {
                let last = routes[v].last().copied().unwrap_or(self.starts[v]);
                let used = route_hops(self.graph, self.starts[v], &routes[v]);
                for node in 0..n {
                    let extra = self.graph.hops(last, node);
                    if extra == 0 || used + extra > self.max_hops {
                        continue;
                    }
                    routes[v].push(node);
                    let value = self.objective.eval(self.graph, self.starts, &routes, scratch);
                    routes[v].pop();
                    let gain = current - value;
                    if gain > 0.0 {
                        candidates.push((gain / (extra as f64 * self.objective.edge_time), v, node, value));
                    }
                }
            }
            if candidates.is_empty() {
                break;
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let keep = ((self.cfg.rcl_alpha * candidates.len() as f64).ceil() as usize).clamp(1, candidates.len());
            let (_, v, node, value) = candidates[rng.random_range(0..keep)];
            routes[v].push(node);
            current = value;
        }
        (routes, current)
    }

    fn feasible(&self, v: usize, wps: &[usize]) -> bool {
        route_hops(self.graph, self.starts[v], wps) <= self.max_hops
    }

    /// First-improvement descent over removal, insertion and reversal moves.
    fn local_search(&self, routes: &mut [Vec<usize>], mut current: f64, scratch: &mut Scratch) -> f64 {
        let n = self.graph.node_count();
        for _ in 0..self.cfg.max_local_passes {
            let mut improved = false;
            for v in 0..routes.len() {
                // Removal.
                let mut p = 0;
                while p < routes[v].len() {
                    let removed = routes[v].remove(p);
                    let value = self.objective.eval(self.graph, self.starts, routes, scratch);
                    if value < current {
                        current = value;
                        improved = true;
                    } else {
                        routes[v].insert(p, removed);
                        p += 1;
                    }
                }
                // Insertion.
                for p in 0..=routes[v].len() {
                    for node in 0..n {
                        let prev = if p == 0 { self.starts[v] } else { routes[v][p - 1] };
                        if node == prev || routes[v].get(p) == Some(&node) {
                            continue;
                        }
                        routes[v].insert(p, node);
                        if self.feasible(v, &routes[v]) {
                            let value = self.objective.eval(self.graph, self.starts, routes, scratch);
                            if value < current {
                                current = value;
                                improved = true;
                                continue;
                            }
                        }
                        routes[v].remove(p);
                    }
                }
                // Reversal of a waypoint segment.
                let len = routes[v].len();
                for i in 0..len {
                    for j in i + 1..len {
                        routes[v][i..=j].reverse();
                        if self.feasible(v, &routes[v]) {
                            let value = self.objective.eval(self.graph, self.starts, routes, scratch);
                            if value < current {
                                current = value;
                                improved = true;
                                continue;
                            }
                        }
                        routes[v][i..=j].reverse();
                    }
                }
            }
            if !improved {
                break;
            }
        }
        current
    }
}

/// Per-iteration record, kept for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspIteration {
    pub constructed: f64,
    pub improved: f64,
}

/// Plans one GRASP step against a frozen reward snapshot. Rewards are indexed
/// by grid node. Returns the best plan over `cfg.iterations` seeded iterations
/// together with the per-iteration objectives.
pub fn grasp_plan(
    graph: &GridGraph,
    model: TravelModel,
    rewards: &RewardVector,
    starts: &[usize],
    horizon: f64,
    cfg: &GraspConfig,
    seed: u64,
) -> Result<(TeamPlan, Vec<GraspIteration>)> {
    cfg.validate()?;
    if rewards.len() != graph.node_count() {
        return Err(Error::Contract(format!(
            "{} rewards for a grid of {} nodes",
            rewards.len(),
            graph.node_count()
        )));
    }
    if let Some(&s) = starts.iter().find(|&&s| s >= graph.node_count()) {
        return Err(Error::InvalidInput(format!("start node {s} is outside the grid")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::param("horizon", "must be finite and >= 0"));
    }
    let edge_time = travel_time(graph.spacing, model);
    let max_hops = ((horizon / edge_time) + 1e-9).floor() as usize;
    let search = Search {
        graph,
        objective: Objective::new(rewards, horizon, edge_time),
        starts,
        max_hops,
        cfg,
    };
    let runs: Vec<(Vec<Vec<usize>>, GraspIteration)> = (0..cfg.iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (it as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407));
            let mut scratch = Scratch::default();
            let (mut routes, constructed) = search.construct(&mut rng, &mut scratch);
            let improved = search.local_search(&mut routes, constructed, &mut scratch);
            (routes, GraspIteration { constructed, improved })
        })
        .collect();
    let best = (0..runs.len())
        .min_by(|&a, &b| runs[a].1.improved.total_cmp(&runs[b].1.improved).then(a.cmp(&b)))
        .expect("at least one iteration");
    let history = runs.iter().map(|r| r.1).collect();
    let objective = runs[best].1.improved;
    let routes = runs
        .into_iter()
        .nth(best)
        .expect("index in range")
        .0
        .into_iter()
        .enumerate()
        .map(|(v, wps)| Route::build(graph, starts[v], wps, edge_time))
        .collect();
    Ok((
        TeamPlan {
            routes,
            objective,
            edge_time,
            horizon,
        },
        history,
    ))
}

/// Samples a straight move from `from` to `to` every `sample_time` seconds.
/// Returns `steps` states after departure; the last one is at rest on `to`
/// (or moving at cruise speed for the lower bound) unless the move is longer
/// than the window.
pub fn sample_move(from: Vec2, to: Vec2, model: TravelModel, sample_time: f64, steps: usize) -> Vec<(VehicleState, Vec2)> {
    let d = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
    let dir = if d > 0.0 {
        [(to[0] - from[0]) / d, (to[1] - from[1]) / d]
    } else {
        [0.0, 0.0]
    };
    let total = travel_time(d, model);
    (1..=steps)
        .map(|s| {
            let t = s as f64 * sample_time;
            if d == 0.0 || t >= total {
                return (VehicleState { q: to, v: [0.0, 0.0] }, [0.0, 0.0]);
            }
            let (dist, speed, acc) = model.profile(d, t);
            (
                VehicleState {
                    q: [from[0] + dir[0] * dist, from[1] + dir[1] * dist],
                    v: [dir[0] * speed, dir[1] * speed],
                },
                [dir[0] * acc, dir[1] * acc],
            )
        })
        .collect()
}

/// Number of sampling periods used to traverse one edge; vehicles wait at the
/// node for the remainder.
pub fn steps_per_edge(edge_time: f64, sample_time: f64) -> usize {
    ((edge_time / sample_time) - 1e-9).ceil().max(1.0) as usize
}

/// Sampled states of every vehicle following its full route, `sample_time`
/// apart, starting with the state at time zero. Each edge takes
/// [`steps_per_edge`] samples.
pub fn execute_team_plan(graph: &GridGraph, model: TravelModel, plan: &TeamPlan, sample_time: f64) -> Vec<Vec<VehicleState>> {
    let per_edge = steps_per_edge(plan.edge_time, sample_time);
    plan.routes
        .iter()
        .map(|route| {
            let mut states = vec![VehicleState {
                q: graph.position(route.start),
                v: [0.0, 0.0],
            }];
            for w in route.walk.windows(2) {
                let (a, b) = (graph.position(w[0]), graph.position(w[1]));
                states.extend(sample_move(a, b, model, sample_time, per_edge).into_iter().map(|s| s.0));
            }
            states
        })
        .collect()
}
