//! Shared domain types: transactions, miners, links, topologies, blocks and
//! the run configuration, plus configuration validation.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

/// Index of a miner in the topology. Miner ids are dense, `0..N`.
pub type MinerId = usize;

pub type TxId = u64;

pub type Fee = u64;

pub type BlockId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub tx_id: TxId,
    pub fee: Fee,
}

impl Transaction {
    pub fn new(tx_id: TxId, fee: Fee) -> Self {
        Self { tx_id, fee }
    }
}

/// Transaction selection strategy of a miner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Picks block transactions at random from the mempool.
    HonestRandom,
    /// Picks the highest-fee transactions.
    MaliciousMaxFee,
}

impl Strategy {
    pub fn is_malicious(self) -> bool {
        matches!(self, Strategy::MaliciousMaxFee)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::HonestRandom => "honest",
            Strategy::MaliciousMaxFee => "malicious",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "honest" => Ok(Strategy::HonestRandom),
            "malicious" => Ok(Strategy::MaliciousMaxFee),
            other => Err(format!("unknown strategy `{other}` (expected honest|malicious)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub miner_id: MinerId,
    /// Share of the total hash rate, in `[0, 1]`.
    pub mining_power: f64,
    pub strategy: Strategy,
}

/// Undirected peer connection with a fixed block propagation delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub node_a: MinerId,
    pub node_b: MinerId,
    pub delay_ms: u64,
}

impl Link {
    pub fn new(node_a: MinerId, node_b: MinerId, delay_ms: u64) -> Self {
        Self {
            node_a,
            node_b,
            delay_ms,
        }
    }

    /// The unordered endpoint pair, smaller id first.
    pub fn key(&self) -> (MinerId, MinerId) {
        if self.node_a <= self.node_b {
            (self.node_a, self.node_b)
        } else {
            (self.node_b, self.node_a)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<Link>,
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Per-node neighbor lists as `(neighbor, delay_ms)`, ordered by neighbor id.
    /// Links referencing unknown nodes are skipped.
    pub fn adjacency(&self) -> Vec<Vec<(MinerId, u64)>> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for link in &self.links {
            if link.node_a < n && link.node_b < n && link.node_a != link.node_b {
                adj[link.node_a].push((link.node_b, link.delay_ms));
                adj[link.node_b].push((link.node_a, link.delay_ms));
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency().iter().map(Vec::len).collect()
    }

    /// True when every node is reachable from node 0. An empty topology is
    /// not connected.
    pub fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return false;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == n
    }

    pub fn total_power(&self) -> f64 {
        self.nodes.iter().map(|n| n.mining_power).sum()
    }
}

/// A mined block. Genesis is implicit at height 0 and never materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub block_id: BlockId,
    pub height: u64,
    pub miner_id: MinerId,
    pub tx_ids: Vec<TxId>,
    pub fees: Vec<Fee>,
    /// Simulation time in seconds.
    pub mined_at: f64,
}

impl Block {
    pub fn fee_total(&self) -> u64 {
        self.fees.iter().sum()
    }
}

/// How honest miners pick a random transaction from the mempool hashtable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RandomAccessVariant {
    /// Random start bucket, alternating outward probe.
    #[default]
    Probe,
    /// Scan from bucket zero upward, miner-specific salt.
    Begin,
    /// Scan from bucket zero upward, same salt for every miner.
    EqualKey,
}

impl RandomAccessVariant {
    pub const ALL: [RandomAccessVariant; 3] = [
        RandomAccessVariant::Probe,
        RandomAccessVariant::Begin,
        RandomAccessVariant::EqualKey,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RandomAccessVariant::Probe => "probe",
            RandomAccessVariant::Begin => "begin",
            RandomAccessVariant::EqualKey => "equal_key",
        }
    }
}

impl fmt::Display for RandomAccessVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RandomAccessVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "probe" | "random" | "random_access" => Ok(RandomAccessVariant::Probe),
            "begin" => Ok(RandomAccessVariant::Begin),
            "equal_key" | "equalkey" | "equal-key" => Ok(RandomAccessVariant::EqualKey),
            other => Err(format!(
                "unknown random access variant `{other}` (expected probe|begin|equal_key)"
            )),
        }
    }
}

/// Parameters of a single simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Mean block inter-arrival time in seconds.
    pub block_interval_lambda: f64,
    pub total_blocks: u64,
    pub block_size: usize,
    pub mempool_capacity: usize,
    /// Transactions inserted into every mempool before the first event.
    pub initial_tx_count: usize,
    /// Inclusive range for the number of transactions per generation event.
    pub txgen_count_range: (u64, u64),
    /// Inclusive range, in seconds, between generation events.
    pub txgen_delay_range: (f64, f64),
    /// Inclusive fee range.
    pub fee_range: (Fee, Fee),
    pub rng_seed: u64,
    pub random_access_variant: RandomAccessVariant,
}

impl Default for SimConfig {
    /// Block timing and sizing from the variant-comparison experiment; the
    /// generation volume and fee range are our own choices.
    fn default() -> Self {
        Self {
            block_interval_lambda: 20.0,
            total_blocks: 1000,
            block_size: 100,
            mempool_capacity: 10_000,
            initial_tx_count: 10_000,
            txgen_count_range: (500, 700),
            txgen_delay_range: (60.0, 160.0),
            fee_range: (1, 1000),
            rng_seed: 1,
            random_access_variant: RandomAccessVariant::Probe,
        }
    }
}

/// One violated invariant of a configuration or topology.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveLambda(f64),
    NoBlocks,
    ZeroBlockSize,
    BlockSizeExceedsCapacity { block_size: usize, capacity: usize },
    TxCountRangeInverted(u64, u64),
    TxDelayRangeInverted(f64, f64),
    NegativeTxDelay(f64),
    FeeRangeInverted(Fee, Fee),
    EmptyTopology,
    MinerIdMismatch { position: usize, miner_id: MinerId },
    PowerOutOfRange { miner_id: MinerId, power: f64 },
    PowerSum(f64),
    SelfLoop(MinerId),
    UnknownLinkEndpoint { node_a: MinerId, node_b: MinerId },
    DuplicateLink(MinerId, MinerId),
    NotConnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveLambda(l) => {
                write!(f, "block_interval_lambda must be positive (got {l})")
            }
            Violation::NoBlocks => f.write_str("total_blocks must be at least 1"),
            Violation::ZeroBlockSize => f.write_str("block_size must be at least 1"),
            Violation::BlockSizeExceedsCapacity { .. } => {
                f.write_str("block_size exceeds mempool_capacity")
            }
            Violation::TxCountRangeInverted(n, m) => {
                write!(f, "txgen_count_range lower bound {n} exceeds upper bound {m}")
            }
            Violation::TxDelayRangeInverted(p, q) => {
                write!(f, "txgen_delay_range lower bound {p} exceeds upper bound {q}")
            }
            Violation::NegativeTxDelay(p) => {
                write!(f, "txgen_delay_range must be non-negative (got {p})")
            }
            Violation::FeeRangeInverted(lo, hi) => {
                write!(f, "fee_range lower bound {lo} exceeds upper bound {hi}")
            }
            Violation::EmptyTopology => f.write_str("topology has no nodes"),
            Violation::MinerIdMismatch { position, miner_id } => write!(
                f,
                "miner ids must be dense: node at position {position} has id {miner_id}"
            ),
            Violation::PowerOutOfRange { miner_id, power } => {
                write!(f, "mining power of miner {miner_id} outside [0,1]: {power}")
            }
            Violation::PowerSum(sum) => write!(f, "mining power sums to {sum}, expected 1"),
            Violation::SelfLoop(id) => write!(f, "link from miner {id} to itself"),
            Violation::UnknownLinkEndpoint { node_a, node_b } => {
                write!(f, "link {node_a}-{node_b} references an unknown miner")
            }
            Violation::DuplicateLink(a, b) => write!(f, "duplicate link {a}-{b}"),
            Violation::NotConnected => f.write_str("graph not connected"),
        }
    }
}

pub const POWER_SUM_TOLERANCE: f64 = 1e-9;

/// Collects every violated invariant of `config` and `topology`. An empty
/// result means the pair can be simulated.
pub fn validate_config(config: &SimConfig, topology: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();

    if !(config.block_interval_lambda > 0.0 && config.block_interval_lambda.is_finite()) {
        out.push(Violation::NonPositiveLambda(config.block_interval_lambda));
    }
    if config.total_blocks == 0 {
        out.push(Violation::NoBlocks);
    }
    if config.block_size == 0 {
        out.push(Violation::ZeroBlockSize);
    }
    if config.block_size > config.mempool_capacity {
        out.push(Violation::BlockSizeExceedsCapacity {
            block_size: config.block_size,
            capacity: config.mempool_capacity,
        });
    }
    let (n, m) = config.txgen_count_range;
    if n > m {
        out.push(Violation::TxCountRangeInverted(n, m));
    }
    let (p, q) = config.txgen_delay_range;
    if p > q {
        out.push(Violation::TxDelayRangeInverted(p, q));
    }
    if p < 0.0 {
        out.push(Violation::NegativeTxDelay(p));
    }
    let (fee_min, fee_max) = config.fee_range;
    if fee_min > fee_max {
        out.push(Violation::FeeRangeInverted(fee_min, fee_max));
    }

    if topology.nodes.is_empty() {
        out.push(Violation::EmptyTopology);
        return out;
    }
    for (position, node) in topology.nodes.iter().enumerate() {
        if node.miner_id != position {
            out.push(Violation::MinerIdMismatch {
                position,
                miner_id: node.miner_id,
            });
        }
        if !(0.0..=1.0).contains(&node.mining_power) {
            out.push(Violation::PowerOutOfRange {
                miner_id: node.miner_id,
                power: node.mining_power,
            });
        }
    }
    let sum = topology.total_power();
    if (sum - 1.0).abs() > POWER_SUM_TOLERANCE {
        out.push(Violation::PowerSum(sum));
    }

    let count = topology.nodes.len();
    let mut pairs = BTreeSet::new();
    for link in &topology.links {
        if link.node_a == link.node_b {
            out.push(Violation::SelfLoop(link.node_a));
            continue;
        }
        if link.node_a >= count || link.node_b >= count {
            out.push(Violation::UnknownLinkEndpoint {
                node_a: link.node_a,
                node_b: link.node_b,
            });
            continue;
        }
        let key = link.key();
        if !pairs.insert(key) {
            out.push(Violation::DuplicateLink(key.0, key.1));
        }
    }
    if !topology.is_connected() {
        out.push(Violation::NotConnected);
    }
    out
}
