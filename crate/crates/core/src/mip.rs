//! Exact branch-and-bound selection of detectors under a cost budget.
//!
//! Maximizes `sum of the k largest selected utilities + lambda * sum of all
//! selected utilities` subject to the total cost staying within the budget,
//! each algorithm receiving at least `T / (2 |A|)` of it and each prioritized
//! subspace at least `T / (2 |F_p|)`. The top-k indicator variables are never
//! branched on: for a fixed selection the best choice is its k highest
//! utilities, so the search runs over selections only.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detectors::Algorithm;
use crate::error::{Error, Result};
use crate::subspace::CandidateDetector;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_NODE_LIMIT: u64 = 200_000;
/// Absolute tolerance on cost sums.
pub const COST_TOLERANCE: f64 = 1e-9;
const OBJECTIVE_TOLERANCE: f64 = 1e-12;

/// `(k, lambda)` used when a run does not override them.
pub fn default_parameters() -> (usize, f64) {
    (DEFAULT_K, DEFAULT_LAMBDA)
}

/// How the per-algorithm and per-prioritized-subspace lower bounds are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerBoundMode {
    /// Each group must receive its full share of the budget.
    #[default]
    Strict,
    /// Each group must receive its share, or its whole candidate pool when
    /// the pool costs less than the share, times the instance's
    /// `reserve_scale`. [`solve_adaptive`] picks that scale.
    Adaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MipInstance {
    pub candidates: Vec<CandidateDetector>,
    pub t_total: f64,
    pub k: usize,
    pub lambda: f64,
    pub algorithms: Vec<Algorithm>,
    /// Size of the prioritized family; candidate levels index into it.
    pub prioritized_count: usize,
    pub lower_bounds: LowerBoundMode,
    /// Factor in `[0, 1]` on every adaptive bound; ignored by strict bounds.
    #[serde(default = "unit_scale")]
    pub reserve_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// A lower-bound group: all candidates of one algorithm, or all candidates on
/// one prioritized subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "group", rename_all = "snake_case")]
pub enum Group {
    Algorithm { algorithm: Algorithm },
    Prioritized { level: usize },
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::Algorithm { algorithm } => write!(f, "algorithm {algorithm}"),
            Group::Prioritized { level } => write!(f, "prioritized subspace {level}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupBound {
    #[serde(flatten)]
    pub group: Group,
    /// The group's budget share.
    pub share: f64,
    /// The bound actually enforced; below `share` only under adaptive bounds.
    pub required: f64,
    /// Total cost of the group's candidates.
    pub pool: f64,
}

impl GroupBound {
    /// True when the enforced bound is below the group's share.
    pub fn relaxed(&self) -> bool {
        self.required < self.share
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Violation {
    Budget { total_cost: f64, t_total: f64 },
    LowerBound {
        #[serde(flatten)]
        group: Group,
        covered: f64,
        required: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Budget { total_cost, t_total } => {
                write!(f, "total cost {total_cost:.6} exceeds budget {t_total:.6}")
            }
            Violation::LowerBound { group, covered, required } => {
                write!(f, "{group} covered {covered:.6} of required {required:.6}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub nodes: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationPlan {
    /// Candidate indices, ascending.
    pub selected: Vec<usize>,
    /// The k highest-utility selected candidates (ties by index), ascending.
    pub top_k: Vec<usize>,
    pub objective: f64,
    pub total_cost: f64,
    pub proven_optimal: bool,
    /// The instance's `reserve_scale` (1 under strict bounds).
    #[serde(default = "unit_scale")]
    pub reserve_scale: f64,
    pub bounds: Vec<GroupBound>,
    pub solver_stats: SolverStats,
}

/// Sum of the `k` largest utilities plus `lambda` times their total.
pub fn objective_value(utilities: &[f64], k: usize, lambda: f64) -> f64 {
    let mut u = utilities.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    u.iter().take(k).sum::<f64>() + lambda * u.iter().sum::<f64>()
}

impl MipInstance {
    /// Derives the algorithm set and prioritized-family size from the candidates.
    pub fn new(candidates: Vec<CandidateDetector>, t_total: f64, k: usize, lambda: f64, lower_bounds: LowerBoundMode) -> Result<Self> {
        let algorithms = Algorithm::ALL
            .into_iter()
            .filter(|a| candidates.iter().any(|c| c.algorithm == *a))
            .collect();
        let prioritized_count = candidates
            .iter()
            .filter_map(CandidateDetector::prioritized_level)
            .max()
            .map_or(0, |l| l + 1);
        let inst = Self {
            candidates,
            t_total,
            k,
            lambda,
            algorithms,
            prioritized_count,
            lower_bounds,
            reserve_scale: 1.0,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_total.is_finite() && self.t_total > 0.0) {
            return Err(Error::Parameter(format!("budget must be positive, got {}", self.t_total)));
        }
        if self.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Parameter(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.reserve_scale) {
            return Err(Error::Parameter(format!("reserve scale must lie in [0, 1], got {}", self.reserve_scale)));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Parameter("the algorithm set is empty".into()));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if !(c.cost.is_finite() && c.cost > 0.0) {
                return Err(Error::Parameter(format!("candidate {i} has cost {}", c.cost)));
            }
            if !(c.utility.is_finite() && c.utility >= 0.0) {
                return Err(Error::Parameter(format!("candidate {i} has utility {}", c.utility)));
            }
            if !self.algorithms.contains(&c.algorithm) {
                return Err(Error::Parameter(format!("candidate {i} uses {} outside the algorithm set", c.algorithm)));
            }
            if c.prioritized_level().is_some_and(|l| l >= self.prioritized_count) {
                return Err(Error::Parameter(format!("candidate {i} has an out-of-range prioritized level")));
            }
        }
        Ok(())
    }

    fn group_index(&self, group: Group) -> Option<usize> {
        match group {
            Group::Algorithm { algorithm } => self.algorithms.iter().position(|a| *a == algorithm),
            Group::Prioritized { level } => (level < self.prioritized_count).then(|| self.algorithms.len() + level),
        }
    }

    fn groups_of(&self, i: usize) -> [Option<usize>; 2] {
        let c = &self.candidates[i];
        [
            self.group_index(Group::Algorithm { algorithm: c.algorithm }),
            c.prioritized_level()
                .and_then(|level| self.group_index(Group::Prioritized { level })),
        ]
    }

    /// Lower bounds in group order: algorithms first, then prioritized levels.
    pub fn group_bounds(&self) -> Vec<GroupBound> {
        let groups: Vec<Group> = self
            .algorithms
            .iter()
            .map(|&algorithm| Group::Algorithm { algorithm })
            .chain((0..self.prioritized_count).map(|level| Group::Prioritized { level }))
            .collect();
        let mut pool = vec![0.0; groups.len()];
        for i in 0..self.candidates.len() {
            for g in self.groups_of(i).into_iter().flatten() {
                pool[g] += self.candidates[i].cost;
            }
        }
        groups
            .into_iter()
            .zip(pool)
            .map(|(group, pool)| {
                let share = match group {
                    Group::Algorithm { .. } => self.t_total / (2.0 * self.algorithms.len() as f64),
                    Group::Prioritized { .. } => self.t_total / (2.0 * self.prioritized_count as f64),
                };
                let required = match self.lower_bounds {
                    LowerBoundMode::Strict => share,
                    LowerBoundMode::Adaptive => self.reserve_scale * share.min(pool),
                };
                GroupBound {
                    group,
                    share,
                    required,
                    pool,
                }
            })
            .collect()
    }

    fn plan_for(&self, mut selected: Vec<usize>, proven_optimal: bool, stats: SolverStats) -> ExplorationPlan {
        selected.sort_unstable();
        let mut by_utility = selected.clone();
        by_utility.sort_by(|&a, &b| {
            self.candidates[b]
                .utility
                .total_cmp(&self.candidates[a].utility)
                .then(a.cmp(&b))
        });
        by_utility.truncate(self.k);
        by_utility.sort_unstable();
        let utilities: Vec<f64> = selected.iter().map(|&i| self.candidates[i].utility).collect();
        ExplorationPlan {
            objective: objective_value(&utilities, self.k, self.lambda),
            total_cost: selected.iter().map(|&i| self.candidates[i].cost).sum(),
            selected,
            top_k: by_utility,
            proven_optimal,
            reserve_scale: match self.lower_bounds {
                LowerBoundMode::Strict => 1.0,
                LowerBoundMode::Adaptive => self.reserve_scale,
            },
            bounds: self.group_bounds(),
            solver_stats: stats,
        }
    }
}

/// Violated constraints of a selection (candidate indices), using the
/// instance's lower-bound mode. Empty when the selection is feasible.
pub fn check_feasibility(selected: &[usize], instance: &MipInstance) -> Vec<Violation> {
    let bounds = instance.group_bounds();
    let mut covered = vec![0.0; bounds.len()];
    let mut total = 0.0;
    for &i in selected {
        total += instance.candidates[i].cost;
        for g in instance.groups_of(i).into_iter().flatten() {
            covered[g] += instance.candidates[i].cost;
        }
    }
    let mut out = Vec::new();
    if total > instance.t_total + COST_TOLERANCE {
        out.push(Violation::Budget {
            total_cost: total,
            t_total: instance.t_total,
        });
    }
    for (b, c) in bounds.iter().zip(covered) {
        if c < b.required - COST_TOLERANCE {
            out.push(Violation::LowerBound {
                group: b.group,
                covered: c,
                required: b.required,
            });
        }
    }
    out
}

struct Search<'a> {
    inst: &'a MipInstance,
    order: Vec<usize>,
    cost: Vec<f64>,
    util: Vec<f64>,
    groups: Vec<[Option<usize>; 2]>,
    required: Vec<f64>,
    /// `suffix[g][p]`: cost of group `g` candidates at positions `p..`.
    suffix: Vec<Vec<f64>>,
    chosen: Vec<usize>,
    chosen_utils: Vec<f64>,
    covered: Vec<f64>,
    cur_cost: f64,
    cur_util: f64,
    best: Option<(Vec<usize>, f64)>,
    nodes: u64,
    node_limit: u64,
    hit_limit: bool,
}

impl<'a> Search<'a> {
    fn new(inst: &'a MipInstance, node_limit: u64) -> Self {
        let mut order: Vec<usize> = (0..inst.candidates.len()).collect();
        let ratio = |i: usize| inst.candidates[i].utility / inst.candidates[i].cost;
        order.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));
        let cost: Vec<f64> = order.iter().map(|&i| inst.candidates[i].cost).collect();
        let util: Vec<f64> = order.iter().map(|&i| inst.candidates[i].utility).collect();
        let groups: Vec<[Option<usize>; 2]> = order.iter().map(|&i| inst.groups_of(i)).collect();
        let required: Vec<f64> = inst.group_bounds().iter().map(|b| b.required).collect();
        let n = order.len();
        let mut suffix = vec![vec![0.0; n + 1]; required.len()];
        for p in (0..n).rev() {
            for s in suffix.iter_mut() {
                s[p] = s[p + 1];
            }
            for g in groups[p].into_iter().flatten() {
                suffix[g][p] += cost[p];
            }
        }
        Self {
            inst,
            order,
            cost,
            util,
            groups,
            covered: vec![0.0; required.len()],
            required,
            suffix,
            chosen: Vec::new(),
            chosen_utils: Vec::new(),
            cur_cost: 0.0,
            cur_util: 0.0,
            best: None,
            nodes: 0,
            node_limit,
            hit_limit: false,
        }
    }

    fn top_k_sum(&self) -> f64 {
        self.chosen_utils.iter().take(self.inst.k).sum()
    }

    fn push(&mut self, p: usize) {
        self.chosen.push(p);
        let u = self.util[p];
        let at = self.chosen_utils.partition_point(|&x| x >= u);
        self.chosen_utils.insert(at, u);
        self.cur_cost += self.cost[p];
        self.cur_util += u;
        for g in self.groups[p].into_iter().flatten() {
            self.covered[g] += self.cost[p];
        }
    }

    fn pop(&mut self) {
        let p = self.chosen.pop().expect("pop matches push");
        let u = self.util[p];
        let at = self
            .chosen_utils
            .iter()
            .position(|&x| x == u)
            .expect("utility was inserted");
        self.chosen_utils.remove(at);
        self.cur_cost -= self.cost[p];
        self.cur_util -= u;
        for g in self.groups[p].into_iter().flatten() {
            self.covered[g] -= self.cost[p];
        }
    }

    fn offer_current(&mut self) {
        if self.cur_cost > self.inst.t_total + COST_TOLERANCE {
            return;
        }
        if self
            .covered
            .iter()
            .zip(&self.required)
            .any(|(c, r)| *c < r - COST_TOLERANCE)
        {
            return;
        }
        let obj = self.top_k_sum() + self.inst.lambda * self.cur_util;
        let mut set: Vec<usize> = self.chosen.iter().map(|&p| self.order[p]).collect();
        set.sort_unstable();
        let better = match &self.best {
            None => true,
            Some((bset, bobj)) => {
                obj > bobj + OBJECTIVE_TOLERANCE || ((obj - bobj).abs() <= OBJECTIVE_TOLERANCE && set < *bset)
            }
        };
        if better {
            self.best = Some((set, obj));
        }
    }

    fn upper_bound(&self, p: usize, room: f64) -> f64 {
        let mut knap = 0.0;
        let mut left = room;
        let mut fitting = Vec::new();
        for q in p..self.order.len() {
            if self.cost[q] <= room + COST_TOLERANCE {
                fitting.push(self.util[q]);
            }
            if left > 0.0 {
                if self.cost[q] <= left {
                    knap += self.util[q];
                    left -= self.cost[q];
                } else {
                    knap += self.util[q] * left / self.cost[q];
                    left = 0.0;
                }
            }
        }
        let k = self.inst.k.min(fitting.len());
        if k > 0 && k < fitting.len() {
            fitting.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
        }
        let top_fit: f64 = fitting[..k].iter().sum();
        self.top_k_sum() + knap.min(top_fit) + self.inst.lambda * (self.cur_util + knap)
    }

    fn dfs(&mut self, p: usize) {
        if self.hit_limit {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.hit_limit = true;
            return;
        }
        self.offer_current();
        if p == self.order.len() {
            return;
        }
        let room = self.inst.t_total - self.cur_cost;
        for g in 0..self.required.len() {
            let deficit = self.required[g] - self.covered[g];
            if deficit > COST_TOLERANCE && room.min(self.suffix[g][p]) < deficit - COST_TOLERANCE {
                return;
            }
        }
        if !self.coverable(p, room) {
            return;
        }
        if let Some((_, best)) = &self.best {
            if self.upper_bound(p, room) <= best + OBJECTIVE_TOLERANCE {
                return;
            }
        }
        if self.cost[p] <= room + COST_TOLERANCE {
            self.push(p);
            self.dfs(p + 1);
            self.pop();
        }
        self.dfs(p + 1);
    }

    /// Whether the open deficits can still be closed within `room` using the
    /// candidates at positions `p..`. A group's deficit costs at least the
    /// deficit itself when its smaller candidates can reach it, and otherwise
    /// at least its cheapest candidate that closes it alone. Algorithm groups
    /// are disjoint, and so are prioritized levels, so each family's lower
    /// bounds add up.
    fn coverable(&self, p: usize, room: f64) -> bool {
        let deficit: Vec<f64> = self.required.iter().zip(&self.covered).map(|(r, c)| r - c).collect();
        if deficit.iter().all(|&d| d <= COST_TOLERANCE) {
            return true;
        }
        let mut small = vec![0.0; deficit.len()];
        let mut big = vec![f64::INFINITY; deficit.len()];
        for q in p..self.order.len() {
            let c = self.cost[q];
            if c > room + COST_TOLERANCE {
                continue;
            }
            for g in self.groups[q].into_iter().flatten() {
                if c >= deficit[g] - COST_TOLERANCE {
                    big[g] = big[g].min(c);
                } else {
                    small[g] += c;
                }
            }
        }
        let need = |g: usize| -> f64 {
            if deficit[g] <= COST_TOLERANCE {
                0.0
            } else if small[g] >= deficit[g] - COST_TOLERANCE {
                deficit[g]
            } else {
                big[g]
            }
        };
        let algos = self.inst.algorithms.len();
        let by_algorithm: f64 = (0..algos).map(need).sum();
        let by_level: f64 = (algos..deficit.len()).map(need).sum();
        by_algorithm <= room + COST_TOLERANCE && by_level <= room + COST_TOLERANCE
    }

    /// Closes the deficit of group `g`, each step taking the cheapest
    /// candidate that covers what is left, or the costliest one when none does.
    fn cover(&mut self, g: usize, taken: &mut [bool]) -> bool {
        while self.covered[g] < self.required[g] - COST_TOLERANCE {
            let deficit = self.required[g] - self.covered[g];
            let room = self.inst.t_total - self.cur_cost + COST_TOLERANCE;
            let open = (0..self.order.len()).filter(|&p| !taken[p] && self.groups[p].contains(&Some(g)) && self.cost[p] <= room);
            let (mut closing, mut largest) = (None::<usize>, None::<usize>);
            for p in open {
                if self.cost[p] >= deficit - COST_TOLERANCE {
                    if closing.is_none_or(|q| self.cost[p] < self.cost[q]) {
                        closing = Some(p);
                    }
                } else if largest.is_none_or(|q| self.cost[p] > self.cost[q]) {
                    largest = Some(p);
                }
            }
            match closing.or(largest) {
                Some(p) => {
                    taken[p] = true;
                    self.push(p);
                }
                None => return false,
            }
        }
        true
    }

    /// Feasibility heuristic for a first incumbent: close every group's
    /// deficit (prioritized levels first, then algorithms, and the reverse),
    /// then fill the remaining budget in ratio order. Returns the selection
    /// of the last attempt.
    fn greedy(&mut self) -> Vec<usize> {
        let n = self.order.len();
        let algos = self.inst.algorithms.len();
        let groups = self.required.len();
        let orders: [Vec<usize>; 2] = [(algos..groups).chain(0..algos).collect(), (0..groups).collect()];
        let mut picked = Vec::new();
        for order in orders {
            let mut taken = vec![false; n];
            for &g in &order {
                if !self.cover(g, &mut taken) {
                    break;
                }
            }
            for p in 0..n {
                if !taken[p] && self.cur_cost + self.cost[p] <= self.inst.t_total + COST_TOLERANCE {
                    taken[p] = true;
                    self.push(p);
                }
            }
            self.offer_current();
            picked = self.chosen.iter().map(|&p| self.order[p]).collect();
            while !self.chosen.is_empty() {
                self.pop();
            }
        }
        picked
    }
}

/// Exact solve. Returns the best feasible plan, marked `proven_optimal` when
/// the search finished within `node_limit` nodes; fails with
/// [`Error::Infeasible`] when no feasible selection was found.
pub fn solve(instance: &MipInstance, node_limit: u64) -> Result<ExplorationPlan> {
    instance.validate()?;
    let start = Instant::now();
    let mut search = Search::new(instance, node_limit);
    let greedy = search.greedy();
    search.dfs(0);
    let stats = SolverStats {
        nodes: search.nodes.min(node_limit),
        wall_time: start.elapsed().as_secs_f64(),
    };
    match search.best.take() {
        Some((set, _)) => Ok(instance.plan_for(set, !search.hit_limit, stats)),
        None => {
            let bounds = instance.group_bounds();
            let detail = match bounds.iter().find(|b| b.pool < b.required - COST_TOLERANCE) {
                Some(b) => format!("{} can supply at most {:.6} s of the required {:.6} s", b.group, b.pool, b.required),
                None => {
                    let v = check_feasibility(&greedy, instance);
                    let tightest = v.iter().max_by(|a, b| shortfall(a).total_cmp(&shortfall(b)));
                    match tightest {
                        Some(v) => format!("best attempt: {v}"),
                        None => "no feasible selection".into(),
                    }
                }
            };
            let reason = if search.hit_limit { "node limit reached without a feasible selection; " } else { "" };
            Err(Error::Infeasible(format!("{reason}{detail} (budget {} s)", instance.t_total)))
        }
    }
}

/// Steps of the bisection on the reserve scale.
const SCALE_STEPS: usize = 30;

/// Solves with adaptive bounds at the largest reserve scale in `[0, 1]` for
/// which the greedy cover finds a feasible selection (found by bisection, so
/// it may be below the true largest feasible scale). Strict instances are
/// solved as given.
pub fn solve_adaptive(instance: &MipInstance, node_limit: u64) -> Result<ExplorationPlan> {
    if instance.lower_bounds == LowerBoundMode::Strict {
        return solve(instance, node_limit);
    }
    instance.validate()?;
    let mut inst = instance.clone();
    let feasible_at = |inst: &mut MipInstance, scale: f64| {
        inst.reserve_scale = scale;
        let picked = Search::new(inst, 0).greedy();
        check_feasibility(&picked, inst).is_empty()
    };
    let scale = if feasible_at(&mut inst, 1.0) {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..SCALE_STEPS {
            let mid = 0.5 * (lo + hi);
            if feasible_at(&mut inst, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    inst.reserve_scale = scale;
    solve(&inst, node_limit)
}

fn shortfall(v: &Violation) -> f64 {
    match v {
        Violation::Budget { total_cost, t_total } => total_cost - t_total,
        Violation::LowerBound { covered, required, .. } => required - covered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSubspace;
    use crate::subspace::Origin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cand(algorithm: Algorithm, level: Option<usize>, cost: f64, utility: f64) -> CandidateDetector {
        let origin = match level {
            Some(level) => Origin::Prioritized { level },
            None => Origin::Random { draw: 0 },
        };
        let mut c = CandidateDetector::new(algorithm, FeatureSubspace::new(vec![0]).unwrap(), origin);
        c.cost = cost;
        c.utility = utility;
        c
    }

    /// Best objective over all 2^n subsets, ties to the lexicographically
    /// smallest index set.
    fn brute_force(inst: &MipInstance) -> Option<(Vec<usize>, f64)> {
        let n = inst.candidates.len();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for mask in 0u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            if !check_feasibility(&set, inst).is_empty() {
                continue;
            }
            let u: Vec<f64> = set.iter().map(|&i| inst.candidates[i].utility).collect();
            let obj = objective_value(&u, inst.k, inst.lambda);
            if best.as_ref().is_none_or(|(bs, bo)| obj > bo + 1e-12 || ((obj - bo).abs() <= 1e-12 && set < *bs)) {
                best = Some((set, obj));
            }
        }
        best
    }

    #[test]
    fn objective_examples() {
        assert!((objective_value(&[0.9, 0.5, 0.1], 2, 1.0) - 2.9).abs() < 1e-12);
        assert_eq!(objective_value(&[], 3, 1.0), 0.0);
        assert!((objective_value(&[0.9, 0.5, 0.1], 2, 0.0) - 1.4).abs() < 1e-12);
        assert!((objective_value(&[0.3, 0.2], 10, 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(default_parameters(), (10, 1.0));
    }

    #[test]
    fn three_candidate_example() {
        let c = vec![
            cand(Algorithm::Lof, Some(0), 0.4, 0.9),
            cand(Algorithm::Lof, Some(0), 0.4, 0.8),
            cand(Algorithm::Lof, Some(0), 0.4, 0.1),
        ];
        let inst = MipInstance::new(c, 1.0, 1, 1.0, LowerBoundMode::Strict).unwrap();
        let plan = solve(&inst, DEFAULT_NODE_LIMIT).unwrap();
        assert_eq!(plan.selected, vec![0, 1]);
        assert_eq!(plan.top_k, vec![0]);
        assert!((plan.objective - 2.6).abs() < 1e-12);
        assert!(plan.proven_optimal);
        assert_eq!(brute_force(&inst).unwrap().0, plan.selected);
    }

    #[test]
    fn too_expensive_is_infeasible() {
        let c = vec![cand(Algorithm::Md, Some(0), 2.0, 0.5), cand(Algorithm::Md, None, 3.0, 0.5)];
        let inst = MipInstance::new(c, 1.0, 1, 1.0, LowerBoundMode::Strict).unwrap();
        assert!(matches!(solve(&inst, DEFAULT_NODE_LIMIT), Err(Error::Infeasible(_))));
    }

    #[test]
    fn feasibility_boundaries() {
        let c = vec![
            cand(Algorithm::Lof, Some(0), 0.25, 0.1),
            cand(Algorithm::Md, Some(1), 0.25, 0.1),
            cand(Algorithm::Lof, None, 0.5, 0.1),
        ];
        let inst = MipInstance::new(c, 1.0, 1, 1.0, LowerBoundMode::Strict).unwrap();
        // Exactly at the budget, and each prioritized subspace at exactly T / 4.
        assert!(check_feasibility(&[0, 1, 2], &inst).is_empty());
        let v = check_feasibility(&[0, 2], &inst);
        assert!(v.iter().any(|v| matches!(v, Violation::LowerBound { group: Group::Algorithm { algorithm: Algorithm::Md }, .. })));
        let over = check_feasibility(&[0, 1, 2, 2], &inst);
        assert!(over.iter().any(|v| matches!(v, Violation::Budget { .. })));
    }

    #[test]
    fn adaptive_bounds_cap_at_pool() {
        let c = vec![
            cand(Algorithm::Lof, Some(0), 0.4, 0.5),
            cand(Algorithm::Md, Some(0), 0.001, 0.2),
        ];
        let strict = MipInstance::new(c.clone(), 1.0, 2, 1.0, LowerBoundMode::Strict).unwrap();
        assert!(solve(&strict, DEFAULT_NODE_LIMIT).is_err());
        let adaptive = MipInstance::new(c, 1.0, 2, 1.0, LowerBoundMode::Adaptive).unwrap();
        let plan = solve_adaptive(&adaptive, DEFAULT_NODE_LIMIT).unwrap();
        assert_eq!(plan.selected, vec![0, 1]);
        assert_eq!(plan.reserve_scale, 1.0);
        assert_eq!(plan.bounds.iter().filter(|b| b.relaxed()).count(), 2);
    }

    #[test]
    fn adaptive_scale_shrinks_until_coverable() {
        // Two levels, each reachable only through a 0.4 candidate, while each
        // level's share is 0.25 and the algorithm shares are 0.25 too: both
        // levels cannot be covered within the budget, one can.
        let c = vec![
            cand(Algorithm::Lof, Some(0), 0.4, 0.5),
            cand(Algorithm::Lof, Some(1), 0.4, 0.5),
            cand(Algorithm::Md, None, 0.3, 0.2),
        ];
        let strict = MipInstance::new(c.clone(), 0.5, 1, 1.0, LowerBoundMode::Strict).unwrap();
        assert!(solve_adaptive(&strict, DEFAULT_NODE_LIMIT).is_err());
        let adaptive = MipInstance::new(c, 0.5, 1, 1.0, LowerBoundMode::Adaptive).unwrap();
        let plan = solve_adaptive(&adaptive, DEFAULT_NODE_LIMIT).unwrap();
        assert!(plan.reserve_scale < 1.0);
        assert!(plan.total_cost <= 0.5 + COST_TOLERANCE);
        let mut scaled = adaptive.clone();
        scaled.reserve_scale = plan.reserve_scale;
        assert!(check_feasibility(&plan.selected, &scaled).is_empty());
        // Any item covers at most one level, so the scale cannot keep both
        // levels' bound of 0.125 * scale reachable together with MD's.
        assert!(plan.bounds.iter().all(|b| (b.required - plan.reserve_scale * b.share.min(b.pool)).abs() < 1e-15));
    }

    #[test]
    fn adaptive_keeps_full_scale_when_feasible() {
        for seed in 0..20 {
            let mut inst = random_instance(seed);
            inst.lower_bounds = LowerBoundMode::Adaptive;
            let plan = solve_adaptive(&inst, DEFAULT_NODE_LIMIT).unwrap();
            assert!(plan.reserve_scale > 0.0 || plan.selected.iter().all(|&i| inst.candidates[i].cost <= inst.t_total));
            let mut scaled = inst.clone();
            scaled.reserve_scale = plan.reserve_scale;
            assert!(check_feasibility(&plan.selected, &scaled).is_empty());
            let mut full = inst.clone();
            full.reserve_scale = 1.0;
            if plan.reserve_scale < 1.0 {
                let picked = Search::new(&full, 0).greedy();
                assert!(!check_feasibility(&picked, &full).is_empty());
            }
        }
    }

    fn random_instance(seed: u64) -> MipInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(5..=20);
        let levels = rng.random_range(1..=3);
        let c: Vec<CandidateDetector> = (0..n)
            .map(|i| {
                let a = Algorithm::ALL[i % 5];
                let level = rng.random_bool(0.5).then(|| rng.random_range(0..levels));
                cand(a, level, rng.random_range(0.01..0.3), rng.random_range(0.0..1.0))
            })
            .collect();
        let k = rng.random_range(1..=5);
        let lambda = rng.random_range(0.0..2.0);
        MipInstance::new(c, rng.random_range(0.5..2.0), k, lambda, LowerBoundMode::Strict).unwrap()
    }

    #[test]
    fn matches_brute_force() {
        let mut feasible = 0;
        for seed in 0..40 {
            let inst = random_instance(seed);
            let oracle = brute_force(&inst);
            match (solve(&inst, DEFAULT_NODE_LIMIT), oracle) {
                (Ok(plan), Some((_, obj))) => {
                    feasible += 1;
                    assert!(plan.proven_optimal);
                    assert!((plan.objective - obj).abs() < 1e-9, "seed {seed}: {} vs {obj}", plan.objective);
                    assert!(check_feasibility(&plan.selected, &inst).is_empty());
                }
                (Err(Error::Infeasible(_)), None) => {}
                (got, want) => panic!("seed {seed}: solver {got:?}, oracle {want:?}"),
            }
        }
        assert!(feasible > 10);
    }

    #[test]
    fn larger_budget_raises_shares() {
        // Shares scale with the budget, so a larger budget can turn a
        // feasible instance infeasible.
        let c = vec![
            cand(Algorithm::Lof, None, 0.3, 0.5),
            cand(Algorithm::Lof, None, 0.3, 0.4),
            cand(Algorithm::Md, None, 0.3, 0.1),
        ];
        let small = MipInstance::new(c.clone(), 1.0, 1, 1.0, LowerBoundMode::Strict).unwrap();
        assert!(solve(&small, DEFAULT_NODE_LIMIT).is_ok());
        let large = MipInstance::new(c, 2.0, 1, 1.0, LowerBoundMode::Strict).unwrap();
        assert!(solve(&large, DEFAULT_NODE_LIMIT).is_err());
    }

    #[test]
    fn larger_budget_with_fixed_bounds_never_hurts() {
        // Under adaptive bounds where every pool is below its share, the
        // bounds stay fixed as the budget grows.
        for seed in 100..140 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c: Vec<CandidateDetector> = (0..12)
                .map(|i| cand(Algorithm::ALL[i % 2], None, rng.random_range(0.05..0.4), rng.random_range(0.0..1.0)))
                .collect();
            // One cheap, always-required candidate per algorithm keeps the
            // bounds saturated while the rest are free to choose.
            c.push(cand(Algorithm::Abod, None, 0.01, 0.3));
            let mut inst = MipInstance::new(c, 1.0, 3, 1.0, LowerBoundMode::Adaptive).unwrap();
            let mut last = f64::NEG_INFINITY;
            for t in [1.0, 1.3, 1.7, 2.2] {
                inst.t_total = t;
                if let Ok(plan) = solve(&inst, DEFAULT_NODE_LIMIT) {
                    assert!(plan.objective >= last - 1e-12, "seed {seed} t {t}");
                    last = plan.objective;
                }
            }
        }
    }

    #[test]
    fn utility_scaling_keeps_selection() {
        for seed in 200..220 {
            let inst = random_instance(seed);
            let Ok(plan) = solve(&inst, DEFAULT_NODE_LIMIT) else { continue };
            let mut scaled = inst.clone();
            for c in &mut scaled.candidates {
                c.utility *= 3.5;
            }
            let again = solve(&scaled, DEFAULT_NODE_LIMIT).unwrap();
            assert!((again.objective - 3.5 * plan.objective).abs() < 1e-9);
            let u: Vec<f64> = again.selected.iter().map(|&i| inst.candidates[i].utility).collect();
            assert!((objective_value(&u, inst.k, inst.lambda) - plan.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn node_limit_marks_unproven() {
        let c: Vec<CandidateDetector> = (0..25)
            .map(|i| cand(Algorithm::ALL[i % 5], None, 0.05 + 0.001 * i as f64, 0.5 + 0.01 * (i % 7) as f64))
            .collect();
        let inst = MipInstance::new(c, 1.0, 10, 1.0, LowerBoundMode::Strict).unwrap();
        let plan = solve(&inst, 5).unwrap();
        assert!(!plan.proven_optimal);
        assert!(check_feasibility(&plan.selected, &inst).is_empty());
    }

    #[test]
    fn rejects_bad_instances() {
        let c = vec![cand(Algorithm::Lof, None, 0.1, 0.1)];
        assert!(MipInstance::new(c.clone(), 0.0, 1, 1.0, LowerBoundMode::Strict).is_err());
        assert!(MipInstance::new(c.clone(), 1.0, 0, 1.0, LowerBoundMode::Strict).is_err());
        assert!(MipInstance::new(c, 1.0, 1, -1.0, LowerBoundMode::Strict).is_err());
        let bad = vec![cand(Algorithm::Lof, None, 0.0, 0.1)];
        assert!(MipInstance::new(bad, 1.0, 1, 1.0, LowerBoundMode::Strict).is_err());
    }
}
