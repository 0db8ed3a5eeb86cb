//! Random topology generation from discrete degree and delay distributions.
//!
//! Degrees are realized with a configuration-model pairing of half-edges.
//! Self-loops and multi-edges produced by the pairing are erased, the
//! resulting degree deficits are restored by edge rewiring, and leftover
//! components are joined with one extra link each. Realized degrees can
//! therefore differ slightly from the sampled targets.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::formats::{strip_comment, FormatError};
use crate::model::{Link, MinerId, NodeSpec, Strategy, Topology, POWER_SUM_TOLERANCE};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TopologyError {
    #[error("distribution must have at least one entry")]
    EmptyDistribution,
    #[error("distribution weights must be finite, non-negative and sum to a positive value")]
    BadWeights,
    #[error("distribution value {0} appears more than once")]
    DuplicateValue(i64),
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("degree {degree} is outside [1, {max}]")]
    DegreeOutOfRange { degree: i64, max: usize },
    #[error("negative link delay {0}")]
    NegativeDelay(i64),
    #[error("power plan: {0}")]
    PowerPlan(String),
    #[error("could not connect the graph after repair ({components} components remain)")]
    Disconnected { components: usize },
}

/// Finite distribution over integer values with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    values: Vec<i64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(entries: Vec<(i64, f64)>) -> Result<Self, TopologyError> {
        if entries.is_empty() {
            return Err(TopologyError::EmptyDistribution);
        }
        let mut seen = BTreeSet::new();
        let mut cumulative = Vec::with_capacity(entries.len());
        let mut total = 0.0;
        for &(value, weight) in &entries {
            if !seen.insert(value) {
                return Err(TopologyError::DuplicateValue(value));
            }
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(TopologyError::BadWeights);
            }
            total += weight;
            cumulative.push(total);
        }
        if total <= 0.0 || !total.is_finite() {
            return Err(TopologyError::BadWeights);
        }
        let (values, weights) = entries.into_iter().unzip();
        Ok(Self {
            values,
            weights,
            cumulative,
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn total_weight(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    pub fn mean(&self) -> f64 {
        self.entries().map(|(v, w)| v as f64 * w).sum::<f64>() / self.total_weight()
    }

    pub fn min_value(&self) -> i64 {
        *self.values.iter().min().expect("non-empty")
    }

    pub fn max_value(&self) -> i64 {
        *self.values.iter().max().expect("non-empty")
    }

    /// Draws one value. Consumes exactly one `f64` from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let target = rng.random::<f64>() * self.total_weight();
        let idx = self.cumulative.partition_point(|&c| c <= target);
        // Floating-point rounding can land exactly on the total.
        let idx = idx.min(self.values.len() - 1);
        // Skip zero-weight entries sharing the same cumulative value.
        let idx = (idx..self.values.len())
            .find(|&i| self.weights[i] > 0.0)
            .unwrap_or(idx);
        self.values[idx]
    }

    /// Parses `value weight` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let bad = || FormatError::Parse {
                line: idx + 1,
                message: format!("expected `value weight`, got `{line}`"),
            };
            let mut tokens = line.split_whitespace();
            let value = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            let weight = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            if tokens.next().is_some() {
                return Err(bad());
            }
            entries.push((value, weight));
        }
        Self::new(entries).map_err(|e| FormatError::Parse {
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::parse(&text)
    }
}

/// Free-function form of [`DiscreteDistribution::sample`].
pub fn sample_discrete<R: Rng + ?Sized>(dist: &DiscreteDistribution, rng: &mut R) -> i64 {
    dist.sample(rng)
}

/// How mining power and strategies are assigned to generated nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerPlan {
    /// Every node honest with power `1/N`.
    Uniform,
    /// Listed miners get the given power and strategy; all others are honest
    /// and split the residual power equally.
    Explicit(Vec<(MinerId, f64, Strategy)>),
}

impl PowerPlan {
    pub fn assign(&self, node_count: usize) -> Result<Vec<NodeSpec>, TopologyError> {
        let mut nodes: Vec<NodeSpec> = (0..node_count)
            .map(|miner_id| NodeSpec {
                miner_id,
                mining_power: 1.0 / node_count as f64,
                strategy: Strategy::HonestRandom,
            })
            .collect();
        let PowerPlan::Explicit(list) = self else {
            return Ok(nodes);
        };

        let mut fixed = vec![false; node_count];
        let mut fixed_power = 0.0;
        for &(id, power, strategy) in list {
            if id >= node_count {
                return Err(TopologyError::PowerPlan(format!("miner {id} does not exist")));
            }
            if fixed[id] {
                return Err(TopologyError::PowerPlan(format!("miner {id} listed twice")));
            }
            if !(0.0..=1.0).contains(&power) {
                return Err(TopologyError::PowerPlan(format!("power {power} outside [0,1]")));
            }
            fixed[id] = true;
            fixed_power += power;
            nodes[id].mining_power = power;
            nodes[id].strategy = strategy;
        }
        let residual = 1.0 - fixed_power;
        if residual < -POWER_SUM_TOLERANCE {
            return Err(TopologyError::PowerPlan(format!(
                "listed power {fixed_power} exceeds 1"
            )));
        }
        let rest = fixed.iter().filter(|f| !**f).count();
        if rest == 0 {
            if residual.abs() > POWER_SUM_TOLERANCE {
                return Err(TopologyError::PowerPlan(format!(
                    "all miners listed but power sums to {fixed_power}"
                )));
            }
        } else {
            let share = residual.max(0.0) / rest as f64;
            for node in nodes.iter_mut().filter(|n| !fixed[n.miner_id]) {
                node.mining_power = share;
            }
        }
        Ok(nodes)
    }

    /// Parses `id:power,id:power,...`; every listed miner is malicious.
    pub fn parse_malicious(spec: &str) -> Result<Self, String> {
        let mut list = Vec::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (id, power) = item
                .split_once(':')
                .ok_or_else(|| format!("expected id:power, got `{item}`"))?;
            let id = id.trim().parse().map_err(|_| format!("bad miner id `{id}`"))?;
            let power = power.trim().parse().map_err(|_| format!("bad power `{power}`"))?;
            list.push((id, power, Strategy::MaliciousMaxFee));
        }
        Ok(PowerPlan::Explicit(list))
    }
}

/// Undirected simple graph under construction. Ordered containers keep the
/// construction deterministic for a given rng stream.
struct GraphBuilder {
    adj: Vec<BTreeSet<usize>>,
    edges: BTreeSet<(usize, usize)>,
}

impl GraphBuilder {
    fn new(n: usize) -> Self {
        Self {
            adj: vec![BTreeSet::new(); n],
            edges: BTreeSet::new(),
        }
    }

    fn has(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    fn add(&mut self, a: usize, b: usize) -> bool {
        if a == b || self.has(a, b) {
            return false;
        }
        self.adj[a].insert(b);
        self.adj[b].insert(a);
        self.edges.insert((a.min(b), a.max(b)));
        true
    }

    fn remove(&mut self, a: usize, b: usize) {
        self.adj[a].remove(&b);
        self.adj[b].remove(&a);
        self.edges.remove(&(a.min(b), a.max(b)));
    }

    fn degree(&self, a: usize) -> usize {
        self.adj[a].len()
    }

    fn random_edge<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, usize)> {
        if self.edges.is_empty() {
            return None;
        }
        let k = rng.random_range(0..self.edges.len());
        let (a, b) = *self.edges.iter().nth(k)?;
        Some(if rng.random::<bool>() { (a, b) } else { (b, a) })
    }

    /// Component label per node, labels in order of first appearance.
    fn components(&self) -> Vec<Vec<usize>> {
        let n = self.adj.len();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![start];
            label[start] = id;
            let mut i = 0;
            while i < members.len() {
                let u = members[i];
                i += 1;
                for &v in &self.adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = id;
                        members.push(v);
                    }
                }
            }
            comps.push(members);
        }
        comps
    }
}

/// Builds a connected topology whose node degrees follow `degree_dist` and
/// whose per-link delays (milliseconds) follow `delay_dist`.
pub fn build_topology<R: Rng + ?Sized>(
    node_count: usize,
    degree_dist: &DiscreteDistribution,
    delay_dist: &DiscreteDistribution,
    power_plan: &PowerPlan,
    rng: &mut R,
) -> Result<Topology, TopologyError> {
    if node_count < 2 {
        return Err(TopologyError::TooFewNodes(node_count));
    }
    for (degree, weight) in degree_dist.entries() {
        if weight > 0.0 && (degree < 1 || degree as usize >= node_count) {
            return Err(TopologyError::DegreeOutOfRange {
                degree,
                max: node_count - 1,
            });
        }
    }
    for (delay, weight) in delay_dist.entries() {
        if weight > 0.0 && delay < 0 {
            return Err(TopologyError::NegativeDelay(delay));
        }
    }
    let nodes = power_plan.assign(node_count)?;

    let mut target: Vec<usize> = (0..node_count)
        .map(|_| degree_dist.sample(rng) as usize)
        .collect();
    // Half-edges must pair up.
    if target.iter().sum::<usize>() % 2 == 1 {
        let candidates: Vec<usize> = (0..node_count)
            .filter(|&i| target[i] < node_count - 1)
            .collect();
        let pick = match candidates.is_empty() {
            false => candidates[rng.random_range(0..candidates.len())],
            true => rng.random_range(0..node_count),
        };
        if target[pick] < node_count - 1 {
            target[pick] += 1;
        } else {
            target[pick] -= 1;
        }
    }

    let mut stubs: Vec<usize> = target
        .iter()
        .enumerate()
        .flat_map(|(node, &d)| std::iter::repeat_n(node, d))
        .collect();
    stubs.shuffle(rng);

    let mut graph = GraphBuilder::new(node_count);
    for pair in stubs.chunks_exact(2) {
        graph.add(pair[0], pair[1]);
    }

    restore_degrees(&mut graph, &target, rng);
    connect_components(&mut graph, rng)?;

    let links = graph
        .edges
        .iter()
        .map(|&(a, b)| Link::new(a, b, delay_dist.sample(rng) as u64))
        .collect();
    Ok(Topology { nodes, links })
}

/// Re-adds edges lost to self-loop and multi-edge erasure. Each step either
/// joins two deficient nodes or splices a deficient node into an existing
/// edge, which leaves every other node's degree unchanged.
fn restore_degrees<R: Rng + ?Sized>(graph: &mut GraphBuilder, target: &[usize], rng: &mut R) {
    let n = target.len();
    let deficit: usize = (0..n).map(|i| target[i].saturating_sub(graph.degree(i))).sum();
    let max_attempts = 64 * deficit + 256;
    for _ in 0..max_attempts {
        let deficient: Vec<usize> = (0..n).filter(|&i| graph.degree(i) < target[i]).collect();
        if deficient.is_empty() {
            return;
        }
        let u = deficient[rng.random_range(0..deficient.len())];
        let need = target[u] - graph.degree(u);

        if need >= 2 || deficient.len() == 1 {
            // Splice u into an edge (x, y): drop x-y, add u-x and u-y.
            if need < 2 {
                // A lone unit deficit cannot be fixed without changing another
                // degree; accept it.
                return;
            }
            let Some((x, y)) = graph.random_edge(rng) else { return };
            if x == u || y == u || graph.has(u, x) || graph.has(u, y) {
                continue;
            }
            graph.remove(x, y);
            graph.add(u, x);
            graph.add(u, y);
        } else {
            let others: Vec<usize> = deficient.iter().copied().filter(|&v| v != u).collect();
            let v = others[rng.random_range(0..others.len())];
            if graph.add(u, v) {
                continue;
            }
            // u and v already adjacent: swap through an edge (x, y).
            let Some((x, y)) = graph.random_edge(rng) else { return };
            if x == u || x == v || y == u || y == v || graph.has(u, x) || graph.has(v, y) {
                continue;
            }
            graph.remove(x, y);
            graph.add(u, x);
            graph.add(v, y);
        }
    }
}

/// Joins every component to the one containing node 0 with a single link
/// between the lowest-degree members of each side.
fn connect_components<R: Rng + ?Sized>(graph: &mut GraphBuilder, rng: &mut R) -> Result<(), TopologyError> {
    let comps = graph.components();
    if comps.len() <= 1 {
        return Ok(());
    }
    let mut main: Vec<usize> = comps[0].clone();
    for comp in &comps[1..] {
        let pick_low = |graph: &GraphBuilder, members: &[usize], rng: &mut R| {
            let low = members.iter().map(|&m| graph.degree(m)).min().unwrap_or(0);
            let lows: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&m| graph.degree(m) == low)
                .collect();
            lows[rng.random_range(0..lows.len())]
        };
        let a = pick_low(graph, comp, rng);
        let b = pick_low(graph, &main, rng);
        graph.add(a, b);
        main.extend_from_slice(comp);
    }
    let remaining = graph.components().len();
    if remaining != 1 {
        return Err(TopologyError::Disconnected {
            components: remaining,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(entries: &[(i64, f64)]) -> DiscreteDistribution {
        DiscreteDistribution::new(entries.to_vec()).unwrap()
    }

    #[test]
    fn single_entry_always_sampled() {
        let d = dist(&[(5, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| d.sample(&mut rng) == 5));
    }

    #[test]
    fn zero_weight_values_never_sampled() {
        let d = dist(&[(1, 0.0), (2, 1.0), (3, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!((0..10_000).all(|_| d.sample(&mut rng) == 2));
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert_eq!(DiscreteDistribution::new(vec![]), Err(TopologyError::EmptyDistribution));
        assert_eq!(
            DiscreteDistribution::new(vec![(1, 1.0), (1, 2.0)]),
            Err(TopologyError::DuplicateValue(1))
        );
        assert_eq!(DiscreteDistribution::new(vec![(1, 0.0)]), Err(TopologyError::BadWeights));
        assert_eq!(DiscreteDistribution::new(vec![(1, -1.0)]), Err(TopologyError::BadWeights));
    }

    #[test]
    fn distribution_file_parses() {
        let d = DiscreteDistribution::parse("# delays\n100 0.5\n200 0.5 # slow\n").unwrap();
        assert_eq!(d.entries().collect::<Vec<_>>(), vec![(100, 0.5), (200, 0.5)]);
        assert!((d.mean() - 150.0).abs() < 1e-12);
        assert!(DiscreteDistribution::parse("100\n").is_err());
    }

    #[test]
    fn two_nodes_make_one_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let topo = build_topology(
            2,
            &dist(&[(1, 1.0)]),
            &dist(&[(100, 1.0)]),
            &PowerPlan::Uniform,
            &mut rng,
        )
        .unwrap();
        assert_eq!(topo.links, vec![Link::new(0, 1, 100)]);
        assert_eq!(topo.nodes.len(), 2);
    }

    #[test]
    fn degree_out_of_range_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = build_topology(3, &dist(&[(3, 1.0)]), &dist(&[(1, 1.0)]), &PowerPlan::Uniform, &mut rng);
        assert!(matches!(err, Err(TopologyError::DegreeOutOfRange { degree: 3, .. })));
        let err = build_topology(1, &dist(&[(1, 1.0)]), &dist(&[(1, 1.0)]), &PowerPlan::Uniform, &mut rng);
        assert_eq!(err, Err(TopologyError::TooFewNodes(1)));
    }

    #[test]
    fn explicit_plan_splits_residual() {
        let plan = PowerPlan::parse_malicious("0:0.1, 3:0.3").unwrap();
        let nodes = plan.assign(6).unwrap();
        assert_eq!(nodes[0].strategy, Strategy::MaliciousMaxFee);
        assert_eq!(nodes[3].mining_power, 0.3);
        assert!((nodes[1].mining_power - 0.15).abs() < 1e-12);
        let sum: f64 = nodes.iter().map(|n| n.mining_power).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(PowerPlan::parse_malicious("0:0.7,1:0.7").unwrap().assign(3).is_err());
        assert!(PowerPlan::parse_malicious("9:0.1").unwrap().assign(3).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let degrees = dist(&[(2, 1.0), (3, 2.0), (6, 1.0)]);
        let delays = dist(&[(10, 1.0), (500, 1.0)]);
        let build = |seed| {
            build_topology(40, &degrees, &delays, &PowerPlan::Uniform, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
        };
        assert_eq!(build(9), build(9));
        assert_ne!(build(9), build(10));
    }
}
