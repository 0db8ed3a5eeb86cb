//! Discrete-event simulation loop.
//!
//! Blocks arrive on one global exponential clock with mean
//! `block_interval_lambda`; each arrival is credited to a miner drawn with
//! probability equal to its mining power. A mined block floods the peer
//! graph with per-link delays, and every recipient drops the block's
//! transactions from its mempool. Transactions are generated in batches and
//! inserted into every mempool at once.
//!
//! All randomness comes from one ChaCha stream seeded with `rng_seed` and
//! consumed in event-processing order, so a `(config, topology)` pair
//! always produces the same output.

mod event;

use std::collections::HashSet;
use std::fs::File;
use std::io;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

pub use event::{Event, EventKind, EventQueue};

use crate::mempool::{Mempool, MempoolError};
use crate::model::{
    validate_config, Block, BlockId, Fee, MinerId, SimConfig, Strategy, Topology, Transaction, TxId,
    Violation,
};
use crate::output::{
    snapshot_line, write_metadata, write_trailer, BlockRecord, DataWriter, OutputPaths,
    ProgressLog, RunMetadata, RunStatus, RunTrailer,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Violation>),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("mempool invariant violated: {0}")]
    Mempool(#[from] MempoolError),
    #[error("audit failed for miner {miner}: {message}")]
    Audit { miner: MinerId, message: String },
}

/// Knobs that do not affect simulation results.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Check every mempool's internal invariants after each event.
    pub audit: bool,
    /// Mirror progress lines to standard output.
    pub echo_progress: bool,
    /// Dump every transaction in the abort snapshot, not just summaries.
    pub full_snapshot: bool,
    /// Record every mined block and delivery in [`Simulation::trace`].
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            audit: false,
            echo_progress: true,
            full_snapshot: false,
            trace: false,
        }
    }
}

/// Grow-only set of block ids.
#[derive(Debug, Clone, Default)]
pub struct BlockSet {
    words: Vec<u64>,
}

impl BlockSet {
    pub fn contains(&self, id: BlockId) -> bool {
        let (w, b) = ((id / 64) as usize, id % 64);
        self.words.get(w).is_some_and(|word| word & (1 << b) != 0)
    }

    /// Returns false if `id` was already present.
    pub fn insert(&mut self, id: BlockId) -> bool {
        let (w, b) = ((id / 64) as usize, id % 64);
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        let had = self.words[w] & (1 << b) != 0;
        self.words[w] |= 1 << b;
        !had
    }
}

#[derive(Debug, Clone)]
pub struct MinerState {
    pub mempool: Mempool,
    /// Highest block height this miner has produced or received.
    pub tip_height: u64,
    pub seen_blocks: BlockSet,
}

/// Entry of the optional event trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceEntry {
    Mined {
        time: f64,
        block_id: BlockId,
        miner: MinerId,
    },
    Delivered {
        time: f64,
        block_id: BlockId,
        to: MinerId,
        from: MinerId,
    },
    /// Delivery of a block the recipient had already seen.
    Ignored {
        time: f64,
        block_id: BlockId,
        to: MinerId,
    },
}

/// Result of processing one event.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Continue,
    /// The configured number of blocks has been mined.
    Finished,
    /// A miner could not fill a block.
    Starved {
        miner: MinerId,
        available: usize,
        needed: usize,
    },
}

/// Receives blocks as they are mined, before propagation.
pub trait BlockSink {
    fn on_block(&mut self, block: &Block) -> io::Result<()>;
}

impl BlockSink for Vec<Block> {
    fn on_block(&mut self, block: &Block) -> io::Result<()> {
        self.push(block.clone());
        Ok(())
    }
}

impl<W: io::Write> BlockSink for DataWriter<W> {
    fn on_block(&mut self, block: &Block) -> io::Result<()> {
        for (&tx_id, &tx_fee) in block.tx_ids.iter().zip(&block.fees) {
            self.write_row(&BlockRecord {
                tx_id,
                tx_fee,
                block_id: block.block_id,
                height: block.height,
                miner_id: block.miner_id,
            });
        }
        self.finish_block()
    }
}

/// Discards blocks.
pub struct NullSink;

impl BlockSink for NullSink {
    fn on_block(&mut self, _: &Block) -> io::Result<()> {
        Ok(())
    }
}

pub struct Simulation {
    config: SimConfig,
    strategies: Vec<Strategy>,
    /// `(neighbor, delay in seconds)` per miner.
    neighbors: Vec<Vec<(MinerId, f64)>>,
    winner_dist: WeightedIndex<f64>,
    interval_dist: Exp<f64>,
    miners: Vec<MinerState>,
    queue: EventQueue,
    rng: ChaCha8Rng,
    /// Transaction ids of every mined block, indexed by block id.
    block_txs: Vec<Vec<TxId>>,
    block_heights: Vec<u64>,
    next_tx_id: TxId,
    now: f64,
    last_block_time: f64,
    options: RunOptions,
    trace: Vec<TraceEntry>,
    started: bool,
}

impl Simulation {
    pub fn new(config: &SimConfig, topology: &Topology, options: RunOptions) -> Result<Self, SimError> {
        let violations = validate_config(config, topology);
        if !violations.is_empty() {
            return Err(SimError::InvalidConfig(violations));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let miners = topology
            .nodes
            .iter()
            .map(|_| MinerState {
                mempool: Mempool::for_variant(
                    config.mempool_capacity,
                    config.random_access_variant,
                    rng.random(),
                ),
                tip_height: 0,
                seen_blocks: BlockSet::default(),
            })
            .collect();
        let neighbors = topology
            .adjacency()
            .into_iter()
            .map(|list| list.into_iter().map(|(n, ms)| (n, ms as f64 / 1000.0)).collect())
            .collect();
        let powers: Vec<f64> = topology.nodes.iter().map(|n| n.mining_power).collect();
        let winner_dist = WeightedIndex::new(&powers).map_err(|_| {
            SimError::InvalidConfig(vec![Violation::PowerSum(topology.total_power())])
        })?;
        let interval_dist = Exp::new(1.0 / config.block_interval_lambda)
            .map_err(|_| SimError::InvalidConfig(vec![Violation::NonPositiveLambda(config.block_interval_lambda)]))?;

        Ok(Self {
            config: config.clone(),
            strategies: topology.nodes.iter().map(|n| n.strategy).collect(),
            neighbors,
            winner_dist,
            interval_dist,
            miners,
            queue: EventQueue::new(),
            rng,
            block_txs: Vec::new(),
            block_heights: Vec::new(),
            next_tx_id: 0,
            now: 0.0,
            last_block_time: 0.0,
            options,
            trace: Vec::new(),
            started: false,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn miners(&self) -> &[MinerState] {
        &self.miners
    }

    pub fn miner_mut(&mut self, id: MinerId) -> &mut MinerState {
        &mut self.miners[id]
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn blocks_mined(&self) -> u64 {
        self.block_txs.len() as u64
    }

    /// Simulation time of the most recent block (0 before the first one).
    pub fn last_block_time(&self) -> f64 {
        self.last_block_time
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Next transaction id to be assigned; ids below it have been issued.
    pub fn next_tx_id(&self) -> TxId {
        self.next_tx_id
    }

    /// Draws the time until the next block and the miner who finds it.
    pub fn schedule_next_block(&mut self) -> (f64, MinerId) {
        let delta = self.interval_dist.sample(&mut self.rng);
        let winner = self.winner_dist.sample(&mut self.rng);
        (delta, winner)
    }

    fn fresh_transactions(&mut self, count: u64) -> Vec<Transaction> {
        let (fee_min, fee_max) = self.config.fee_range;
        (0..count)
            .map(|_| {
                let tx = Transaction::new(self.next_tx_id, self.rng.random_range(fee_min..=fee_max));
                self.next_tx_id += 1;
                tx
            })
            .collect()
    }

    /// Offers the same transactions to every miner. A full pool keeps the
    /// best `capacity` transactions of its old content plus the new ones.
    fn broadcast(&mut self, txs: &[Transaction]) -> Result<(), SimError> {
        // Highest first: a full pool then rejects the tail with one
        // comparison, and consecutive tree descents share cached nodes.
        let mut ordered = txs.to_vec();
        ordered.sort_unstable_by(|a, b| (b.fee, b.tx_id).cmp(&(a.fee, a.tx_id)));
        for miner in &mut self.miners {
            for &tx in &ordered {
                miner.mempool.offer(tx)?;
            }
        }
        Ok(())
    }

    /// Fills every mempool with `initial_tx_count` shared transactions and
    /// schedules the first block and the first generation event.
    pub fn start(&mut self) -> Result<(), SimError> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        let initial = self.fresh_transactions(self.config.initial_tx_count as u64);
        self.broadcast(&initial)?;
        let (delta, winner) = self.schedule_next_block();
        self.queue.schedule(delta, EventKind::BlockMined(winner));
        let gap = self.txgen_gap();
        self.queue.schedule(gap, EventKind::TxGeneration);
        Ok(())
    }

    fn txgen_gap(&mut self) -> f64 {
        let (p, q) = self.config.txgen_delay_range;
        if p >= q {
            p
        } else {
            self.rng.random_range(p..=q)
        }
    }

    /// One batch of new transactions, then the next batch is scheduled.
    pub fn handle_tx_generation(&mut self) -> Result<(), SimError> {
        let (n, m) = self.config.txgen_count_range;
        let count = if n >= m { n } else { self.rng.random_range(n..=m) };
        let txs = self.fresh_transactions(count);
        self.broadcast(&txs)?;
        let gap = self.txgen_gap();
        self.queue.schedule(self.now + gap, EventKind::TxGeneration);
        Ok(())
    }

    /// Picks `block_size` transactions for `miner` according to its strategy.
    fn select_block_transactions(&mut self, miner: MinerId) -> Result<Vec<Transaction>, SimError> {
        let size = self.config.block_size;
        let pool = &self.miners[miner].mempool;
        match self.strategies[miner] {
            Strategy::MaliciousMaxFee => Ok(pool.take_top_fee(size)?),
            Strategy::HonestRandom => {
                let variant = self.config.random_access_variant;
                let mut chosen = HashSet::with_capacity(size);
                let mut txs = Vec::with_capacity(size);
                for _ in 0..size {
                    let tx = pool.select_random_excluding(&mut self.rng, variant, |id| chosen.contains(&id))?;
                    chosen.insert(tx.tx_id);
                    txs.push(tx);
                }
                Ok(txs)
            }
        }
    }

    /// Builds a block for `miner`, hands it to `sink`, and starts its
    /// propagation. Returns `Starved` if the miner's pool is too small.
    pub fn handle_block_mined<S: BlockSink + ?Sized>(
        &mut self,
        miner: MinerId,
        sink: &mut S,
    ) -> Result<Step, SimError> {
        let available = self.miners[miner].mempool.len();
        if available < self.config.block_size {
            return Ok(Step::Starved {
                miner,
                available,
                needed: self.config.block_size,
            });
        }
        let txs = self.select_block_transactions(miner)?;
        let state = &mut self.miners[miner];
        for tx in &txs {
            let removed = state.mempool.remove(tx.tx_id);
            debug_assert!(removed);
        }
        let block_id = self.block_txs.len() as BlockId;
        let height = state.tip_height + 1;
        state.tip_height = height;
        state.seen_blocks.insert(block_id);

        let block = Block {
            block_id,
            height,
            miner_id: miner,
            tx_ids: txs.iter().map(|t| t.tx_id).collect(),
            fees: txs.iter().map(|t| t.fee).collect(),
            mined_at: self.now,
        };
        sink.on_block(&block)?;
        if self.options.trace {
            self.trace.push(TraceEntry::Mined {
                time: self.now,
                block_id,
                miner,
            });
        }
        // Kept in fee order for the same locality reason as `broadcast`.
        let mut by_fee: Vec<(Fee, TxId)> = txs.iter().map(|t| (t.fee, t.tx_id)).collect();
        by_fee.sort_unstable();
        self.block_txs.push(by_fee.into_iter().map(|(_, id)| id).collect());
        self.block_heights.push(height);
        self.last_block_time = self.now;
        self.forward(block_id, miner, None);

        if self.blocks_mined() >= self.config.total_blocks {
            return Ok(Step::Finished);
        }
        let (delta, winner) = self.schedule_next_block();
        self.queue.schedule(self.now + delta, EventKind::BlockMined(winner));
        Ok(Step::Continue)
    }

    /// Schedules delivery of `block_id` from `at` to each neighbor except
    /// `skip`. Neighbors that already hold the block are not sent it again.
    fn forward(&mut self, block_id: BlockId, at: MinerId, skip: Option<MinerId>) {
        for i in 0..self.neighbors[at].len() {
            let (to, delay) = self.neighbors[at][i];
            if Some(to) == skip || self.miners[to].seen_blocks.contains(block_id) {
                continue;
            }
            self.queue.schedule(
                self.now + delay,
                EventKind::BlockDelivery {
                    block_id,
                    to,
                    from: at,
                },
            );
        }
    }

    /// Applies a block arriving at `to` and relays it onward. Blocks already
    /// seen by `to` are ignored.
    pub fn handle_block_delivery(&mut self, block_id: BlockId, to: MinerId, from: MinerId) {
        let state = &mut self.miners[to];
        if !state.seen_blocks.insert(block_id) {
            if self.options.trace {
                self.trace.push(TraceEntry::Ignored {
                    time: self.now,
                    block_id,
                    to,
                });
            }
            return;
        }
        for &tx_id in &self.block_txs[block_id as usize] {
            state.mempool.remove(tx_id);
        }
        state.tip_height = state.tip_height.max(self.block_heights[block_id as usize]);
        if self.options.trace {
            self.trace.push(TraceEntry::Delivered {
                time: self.now,
                block_id,
                to,
                from,
            });
        }
        self.forward(block_id, to, Some(from));
    }

    /// Processes the next event.
    pub fn step<S: BlockSink + ?Sized>(&mut self, sink: &mut S) -> Result<Step, SimError> {
        self.start()?;
        let Some(event) = self.queue.pop() else {
            // The block clock always has a pending event before the run ends.
            unreachable!("event queue drained before the run finished");
        };
        debug_assert!(event.time >= self.now);
        self.now = event.time;
        let step = match event.kind {
            EventKind::BlockMined(miner) => self.handle_block_mined(miner, sink)?,
            EventKind::BlockDelivery { block_id, to, from } => {
                self.handle_block_delivery(block_id, to, from);
                Step::Continue
            }
            EventKind::TxGeneration => {
                self.handle_tx_generation()?;
                Step::Continue
            }
        };
        if self.options.audit {
            self.audit()?;
        }
        Ok(step)
    }

    /// Runs until the block target is reached or a miner starves.
    pub fn run_until_done<S: BlockSink + ?Sized>(&mut self, sink: &mut S) -> Result<Step, SimError> {
        self.run_with_progress(sink, |_, _| Ok(()))
    }

    fn run_with_progress<S, P>(&mut self, sink: &mut S, mut on_block: P) -> Result<Step, SimError>
    where
        S: BlockSink + ?Sized,
        P: FnMut(u64, f64) -> io::Result<()>,
    {
        loop {
            let before = self.blocks_mined();
            let step = self.step(sink)?;
            if self.blocks_mined() != before {
                on_block(self.blocks_mined(), self.now)?;
            }
            if step != Step::Continue {
                return Ok(step);
            }
        }
    }

    pub fn audit(&self) -> Result<(), SimError> {
        for (miner, state) in self.miners.iter().enumerate() {
            state
                .mempool
                .audit()
                .map_err(|message| SimError::Audit { miner, message })?;
        }
        Ok(())
    }

    /// Per-miner mempool summary lines, plus full contents when requested.
    pub fn snapshot(&self, full: bool) -> String {
        let mut out = String::new();
        for (id, state) in self.miners.iter().enumerate() {
            let pool = &state.mempool;
            out.push_str(&snapshot_line(
                id,
                pool.len(),
                pool.lowest().map(|t| t.fee),
                pool.highest().map(|t| t.fee),
            ));
            out.push('\n');
            if full {
                let txs: Vec<String> = pool
                    .iter_ascending()
                    .map(|t| format!("{}:{}", t.tx_id, t.fee))
                    .collect();
                out.push_str("  ");
                out.push_str(&txs.join(" "));
                out.push('\n');
            }
        }
        out
    }
}

/// Summary of a finished (or aborted) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub status: RunStatus,
    pub blocks_mined: u64,
    pub end_time: f64,
    pub abort_reason: Option<String>,
    pub paths: OutputPaths,
}

pub fn run_metadata(config: &SimConfig, topology: &Topology) -> RunMetadata {
    RunMetadata {
        simulator_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        node_count: topology.node_count(),
        link_count: topology.link_count(),
        miners: topology.nodes.clone(),
        trailer: None,
    }
}

/// Runs a full simulation and writes `<prefix>.data.csv`, `<prefix>.meta`
/// and `<prefix>.progress`.
pub fn run(
    config: &SimConfig,
    topology: &Topology,
    out_prefix: &Path,
    options: RunOptions,
) -> Result<RunReport, SimError> {
    let paths = OutputPaths::from_prefix(out_prefix);
    let mut progress = ProgressLog::create(&paths.progress, options.echo_progress)?;
    let meta = run_metadata(config, topology);
    let mut meta_file = File::create(&paths.meta)?;
    write_metadata(&mut meta_file, &meta)?;

    let malicious = topology.nodes.iter().filter(|n| n.strategy.is_malicious()).count();
    progress.write_progress(&format!(
        "dagsim {} seed={}\nnodes={} links={} malicious={}\nlambda={}s blocks={} block_size={} mempool_capacity={} variant={}",
        meta.simulator_version,
        config.rng_seed,
        topology.node_count(),
        topology.link_count(),
        malicious,
        config.block_interval_lambda,
        config.total_blocks,
        config.block_size,
        config.mempool_capacity,
        config.random_access_variant,
    ))?;

    let full_snapshot = options.full_snapshot;
    let mut sim = match Simulation::new(config, topology, options) {
        Ok(sim) => sim,
        Err(e) => {
            progress.write_progress(&format!("error: {e}"))?;
            return Err(e);
        }
    };
    let mut data = DataWriter::create(&paths.data)?;
    progress.write_progress(&format!(
        "initial transaction generation: {} per miner",
        config.initial_tx_count
    ))?;

    let total = config.total_blocks;
    let report_every = (total / 10).max(1);
    let outcome = sim.run_with_progress(&mut data, |mined, now| {
        if mined % report_every == 0 || mined == total {
            progress.write_progress(&format!("mined {mined}/{total} blocks, t={now:.3}s"))?;
        }
        Ok(())
    });
    let step = match outcome {
        Ok(step) => step,
        Err(e) => {
            progress.write_progress(&format!("error: {e}"))?;
            return Err(e);
        }
    };

    let (status, abort_reason) = match step {
        Step::Finished => (RunStatus::Complete, None),
        Step::Starved {
            miner,
            available,
            needed,
        } => {
            let reason = format!(
                "miner {miner} does not have enough transactions to generate a block ({available} < {needed}) at t={:.3}s",
                sim.now()
            );
            progress.write_progress(&format!("error: {reason}"))?;
            progress.write_progress(&format!("mempool snapshot (miner_id: count, min_fee, max_fee):\n{}", sim.snapshot(full_snapshot)))?;
            (RunStatus::Aborted, Some(reason))
        }
        Step::Continue => unreachable!(),
    };
    let trailer = RunTrailer {
        status,
        blocks_mined: sim.blocks_mined(),
        end_time: sim.last_block_time(),
    };
    write_trailer(&mut meta_file, &trailer)?;
    progress.write_progress(&format!(
        "finished: status={} blocks={} simulated_time={:.3}s",
        match status {
            RunStatus::Complete => "complete",
            RunStatus::Aborted => "aborted",
        },
        trailer.blocks_mined,
        trailer.end_time
    ))?;
    progress.write_duration()?;
    Ok(RunReport {
        status,
        blocks_mined: trailer.blocks_mined,
        end_time: trailer.end_time,
        abort_reason,
        paths,
    })
}
