#![allow(dead_code)]

use dagsim::{Link, MempoolError, NodeSpec, SimConfig, Strategy, Topology, Transaction};

pub fn honest_nodes(n: usize) -> Vec<NodeSpec> {
    (0..n)
        .map(|i| NodeSpec {
            miner_id: i,
            mining_power: 1.0 / n as f64,
            strategy: Strategy::HonestRandom,
        })
        .collect()
}

pub fn clique(n: usize, delay_ms: u64) -> Topology {
    let mut links = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            links.push(Link::new(a, b, delay_ms));
        }
    }
    Topology {
        nodes: honest_nodes(n),
        links,
    }
}

/// Node 0 in the middle, leaf `i` at `delays[i - 1]` ms.
pub fn star(delays: &[u64]) -> Topology {
    Topology {
        nodes: honest_nodes(delays.len() + 1),
        links: delays
            .iter()
            .enumerate()
            .map(|(i, &d)| Link::new(0, i + 1, d))
            .collect(),
    }
}

pub fn ring(n: usize, delay_ms: u64) -> Topology {
    Topology {
        nodes: honest_nodes(n),
        links: (0..n).map(|i| Link::new(i, (i + 1) % n, delay_ms)).collect(),
    }
}

pub fn with_powers(mut topo: Topology, powers: &[(usize, f64, Strategy)]) -> Topology {
    let fixed: f64 = powers.iter().map(|p| p.1).sum();
    let rest = topo.node_count() - powers.len();
    for node in &mut topo.nodes {
        node.mining_power = (1.0 - fixed) / rest as f64;
        node.strategy = Strategy::HonestRandom;
    }
    for &(id, power, strategy) in powers {
        topo.nodes[id].mining_power = power;
        topo.nodes[id].strategy = strategy;
    }
    topo
}

/// Small, fast configuration with generous pools.
pub fn small_config(blocks: u64, seed: u64) -> SimConfig {
    SimConfig {
        block_interval_lambda: 20.0,
        total_blocks: blocks,
        block_size: 10,
        mempool_capacity: 1000,
        initial_tx_count: 1000,
        txgen_count_range: (50, 70),
        txgen_delay_range: (60.0, 160.0),
        fee_range: (1, 1000),
        rng_seed: seed,
        ..SimConfig::default()
    }
}

/// Transactions kept in ascending `(fee, id)` order.
#[derive(Default)]
pub struct Reference {
    pub capacity: usize,
    pub txs: Vec<Transaction>,
}

impl Reference {
    fn key(t: &Transaction) -> (u64, u64) {
        (t.fee, t.tx_id)
    }

    pub fn insert(&mut self, tx: Transaction) -> Result<(), MempoolError> {
        if self.txs.len() >= self.capacity {
            return Err(MempoolError::Full(self.capacity));
        }
        if self.txs.iter().any(|t| t.tx_id == tx.tx_id) {
            return Err(MempoolError::Duplicate(tx.tx_id));
        }
        self.txs.push(tx);
        self.txs.sort_by_key(Self::key);
        Ok(())
    }

    pub fn offer(&mut self, tx: Transaction) -> Result<bool, MempoolError> {
        if self.txs.iter().any(|t| t.tx_id == tx.tx_id) {
            // Only reported as a duplicate when it would otherwise be kept.
            if self.txs.len() >= self.capacity && Self::key(&tx) < Self::key(&self.txs[0]) {
                return Ok(false);
            }
            return Err(MempoolError::Duplicate(tx.tx_id));
        }
        self.txs.push(tx);
        self.txs.sort_by_key(Self::key);
        if self.txs.len() > self.capacity {
            let dropped = self.txs.remove(0);
            return Ok(dropped.tx_id != tx.tx_id);
        }
        Ok(true)
    }

    pub fn remove(&mut self, id: u64) -> bool {
        match self.txs.iter().position(|t| t.tx_id == id) {
            Some(i) => {
                self.txs.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn evict_lowest(&mut self, k: usize) -> Result<(), MempoolError> {
        if k > self.txs.len() {
            return Err(MempoolError::NotEnough {
                requested: k,
                available: self.txs.len(),
            });
        }
        self.txs.drain(..k);
        Ok(())
    }

    pub fn take_top_fee(&self, k: usize) -> Result<Vec<Transaction>, MempoolError> {
        if k > self.txs.len() {
            return Err(MempoolError::NotEnough {
                requested: k,
                available: self.txs.len(),
            });
        }
        Ok(self.txs.iter().rev().take(k).copied().collect())
    }
}
