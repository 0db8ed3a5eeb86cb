//! Parameter sweeps over malicious power, malicious count, placement,
//! seed and random-access variant.
//!
//! A sweep spec is flat `key = value` text:
//!
//! ```text
//! config = base.conf            # SimConfig file, relative to the spec
//! topology = net.topo           # or: nodes / degree_dist / delay_dist
//! designated = 4                # miners that receive `power` each
//! power = 0.1                   # comma-separated axis
//! malicious_count = 0,1,2,3,4   # first k designated miners are malicious
//! placements = 3
//! seeds = 10
//! base_seed = 1
//! variant = probe               # comma-separated axis
//! threshold = 0.05
//! block_reward = 0
//! workers = 1
//! ```
//!
//! Every combination is run once per placement and seed. Results go to
//! `runs.csv` (one row per run) and `summary.csv` (means per
//! `(variant, power, malicious_count)`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{analyze_collisions, analyze_profits};
use crate::engine::{run, RunOptions};
use crate::formats::{read_config, read_topology, strip_comment, FormatError};
use crate::model::{MinerId, RandomAccessVariant, SimConfig, Strategy, Topology};
use crate::output::RunStatus;
use crate::topology_gen::{build_topology, DiscreteDistribution, PowerPlan};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep spec line {line}: {message}")]
    Spec { line: usize, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("topology: {0}")]
    Topology(#[from] crate::topology_gen::TopologyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySource {
    File(PathBuf),
    Generated {
        nodes: usize,
        degree_dist: PathBuf,
        delay_dist: PathBuf,
        seed: u64,
    },
    Inline(Topology),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub config: SimConfig,
    pub topology: TopologySource,
    pub designated: usize,
    pub powers: Vec<f64>,
    pub malicious_counts: Vec<usize>,
    pub placements: usize,
    pub seeds: u64,
    pub base_seed: u64,
    pub variants: Vec<RandomAccessVariant>,
    /// Profit-analysis threshold; defaults to the smallest designated power.
    pub threshold: Option<f64>,
    pub block_reward: u64,
    pub workers: usize,
}

impl SweepSpec {
    /// A spec with one value per axis; callers fill in what they need.
    pub fn new(config: SimConfig, topology: TopologySource) -> Self {
        Self {
            config,
            topology,
            designated: 1,
            powers: vec![0.1],
            malicious_counts: vec![1],
            placements: 1,
            seeds: 10,
            base_seed: 1,
            variants: vec![RandomAccessVariant::Probe],
            threshold: None,
            block_reward: 0,
            workers: 1,
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, SweepError> {
        let err = |line: usize, message: String| SweepError::Spec { line, message };
        let mut config = None;
        let mut topology_file = None;
        let mut nodes = None;
        let mut degree_dist = None;
        let mut delay_dist = None;
        let mut topology_seed = 1;
        let mut spec = SweepSpec::new(SimConfig::default(), TopologySource::Inline(Topology::default()));

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, "expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || err(line_no, format!("invalid value for {key}: `{value}`"));
            fn list<T: std::str::FromStr>(value: &str) -> Option<Vec<T>> {
                value
                    .split(',')
                    .map(|v| v.trim().parse().ok())
                    .collect::<Option<Vec<T>>>()
                    .filter(|v| !v.is_empty())
            }
            match key {
                "config" => config = Some(read_config(&base_dir.join(value))?),
                "topology" => topology_file = Some(base_dir.join(value)),
                "nodes" => nodes = Some(value.parse().map_err(|_| bad())?),
                "degree_dist" => degree_dist = Some(base_dir.join(value)),
                "delay_dist" => delay_dist = Some(base_dir.join(value)),
                "topology_seed" => topology_seed = value.parse().map_err(|_| bad())?,
                "designated" => spec.designated = value.parse().map_err(|_| bad())?,
                "power" => spec.powers = list(value).ok_or_else(bad)?,
                "malicious_count" => spec.malicious_counts = list(value).ok_or_else(bad)?,
                "placements" => spec.placements = value.parse().map_err(|_| bad())?,
                "seeds" => spec.seeds = value.parse().map_err(|_| bad())?,
                "base_seed" => spec.base_seed = value.parse().map_err(|_| bad())?,
                "variant" => spec.variants = list(value).ok_or_else(bad)?,
                "threshold" => spec.threshold = Some(value.parse().map_err(|_| bad())?),
                "block_reward" => spec.block_reward = value.parse().map_err(|_| bad())?,
                "workers" => spec.workers = value.parse().map_err(|_| bad())?,
                other => return Err(err(line_no, format!("unknown key `{other}`"))),
            }
        }
        spec.config = config.unwrap_or_default();
        spec.topology = match (topology_file, nodes, degree_dist, delay_dist) {
            (Some(path), None, None, None) => TopologySource::File(path),
            (None, Some(nodes), Some(degree_dist), Some(delay_dist)) => TopologySource::Generated {
                nodes,
                degree_dist,
                delay_dist,
                seed: topology_seed,
            },
            _ => {
                return Err(err(
                    0,
                    "give either `topology` or all of `nodes`, `degree_dist`, `delay_dist`".into(),
                ))
            }
        };
        spec.validate().map_err(|m| err(0, m))?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), String> {
        if self.designated == 0 && self.malicious_counts.iter().any(|&c| c > 0) {
            return Err("malicious_count needs designated miners".into());
        }
        if let Some(&c) = self.malicious_counts.iter().find(|&&c| c > self.designated) {
            return Err(format!("malicious_count {c} exceeds designated {}", self.designated));
        }
        if self.placements == 0 || self.seeds == 0 || self.workers == 0 {
            return Err("placements, seeds and workers must be positive".into());
        }
        if let Some(&p) = self.powers.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
            return Err(format!("power {p} outside [0,1]"));
        }
        Ok(())
    }

    pub fn run_count(&self) -> usize {
        self.variants.len()
            * self.powers.len()
            * self.malicious_counts.len()
            * self.placements
            * self.seeds as usize
    }

    fn load_topology(&self) -> Result<Topology, SweepError> {
        Ok(match &self.topology {
            TopologySource::File(path) => read_topology(path)?,
            TopologySource::Inline(t) => t.clone(),
            TopologySource::Generated {
                nodes,
                degree_dist,
                delay_dist,
                seed,
            } => build_topology(
                *nodes,
                &DiscreteDistribution::read(degree_dist)?,
                &DiscreteDistribution::read(delay_dist)?,
                &PowerPlan::Uniform,
                &mut ChaCha8Rng::seed_from_u64(*seed),
            )?,
        })
    }
}

/// Designated miners for each placement: consecutive windows of
/// `designated` nodes around the median of the degree ranking, so every
/// placement uses nodes of comparable connectivity.
pub fn placements(topology: &Topology, designated: usize, count: usize) -> Vec<Vec<MinerId>> {
    let degrees = topology.degrees();
    let mut ranked: Vec<MinerId> = (0..topology.node_count()).collect();
    ranked.sort_by_key(|&id| (degrees[id], id));
    let n = ranked.len();
    if n == 0 || designated == 0 {
        return vec![Vec::new(); count];
    }
    let start = (n / 2).saturating_sub(designated * count / 2);
    (0..count)
        .map(|p| {
            (0..designated.min(n))
                .map(|i| ranked[(start + p * designated + i) % n])
                .collect()
        })
        .collect()
}

/// One planned run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub index: usize,
    pub variant: RandomAccessVariant,
    pub power: f64,
    pub malicious_count: usize,
    pub placement: usize,
    pub seed: u64,
    pub designated_ids: Vec<MinerId>,
}

pub fn plan_runs(spec: &SweepSpec, topology: &Topology) -> Vec<RunPlan> {
    let sets = placements(topology, spec.designated, spec.placements);
    let mut plans = Vec::with_capacity(spec.run_count());
    for &variant in &spec.variants {
        for &power in &spec.powers {
            for &malicious_count in &spec.malicious_counts {
                for (placement, ids) in sets.iter().enumerate() {
                    for s in 0..spec.seeds {
                        plans.push(RunPlan {
                            index: plans.len(),
                            variant,
                            power,
                            malicious_count,
                            placement,
                            seed: spec.base_seed + s,
                            designated_ids: ids.clone(),
                        });
                    }
                }
            }
        }
    }
    plans
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub plan: RunPlan,
    pub status: String,
    pub blocks: u64,
    /// Profit share summed over malicious miners.
    pub malicious_share: Option<f64>,
    /// Mean profit share of one malicious miner.
    pub malicious_share_per_miner: Option<f64>,
    /// Mean profit share of one designated honest miner.
    pub honest_designated_share_per_miner: Option<f64>,
    pub duplication_rate: Option<f64>,
    pub unique_count: Option<u64>,
    pub distinct_count: Option<u64>,
    pub effective_throughput: Option<f64>,
    pub error: Option<String>,
}

impl RunRow {
    fn failed(plan: RunPlan, status: &str, error: String) -> Self {
        Self {
            plan,
            status: status.into(),
            blocks: 0,
            malicious_share: None,
            malicious_share_per_miner: None,
            honest_designated_share_per_miner: None,
            duplication_rate: None,
            unique_count: None,
            distinct_count: None,
            effective_throughput: None,
            error: Some(error),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

fn execute(spec: &SweepSpec, base: &Topology, plan: RunPlan, out_dir: &Path) -> RunRow {
    let fixed: Vec<(MinerId, f64, Strategy)> = plan
        .designated_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let strategy = if i < plan.malicious_count {
                Strategy::MaliciousMaxFee
            } else {
                Strategy::HonestRandom
            };
            (id, plan.power, strategy)
        })
        .collect();
    let nodes = match PowerPlan::Explicit(fixed).assign(base.node_count()) {
        Ok(nodes) => nodes,
        Err(e) => return RunRow::failed(plan, "invalid", e.to_string()),
    };
    let topology = Topology {
        nodes,
        links: base.links.clone(),
    };
    let config = SimConfig {
        rng_seed: plan.seed,
        random_access_variant: plan.variant,
        ..spec.config.clone()
    };
    let prefix = out_dir.join(format!("run_{:04}", plan.index));
    let options = RunOptions {
        echo_progress: false,
        ..RunOptions::default()
    };
    let report = match run(&config, &topology, &prefix, options) {
        Ok(r) => r,
        Err(e) => return RunRow::failed(plan, "error", e.to_string()),
    };
    let status = match report.status {
        RunStatus::Complete => "complete",
        RunStatus::Aborted => "aborted",
    };
    if report.status == RunStatus::Aborted {
        let reason = report.abort_reason.unwrap_or_default();
        let mut row = RunRow::failed(plan, status, reason);
        row.blocks = report.blocks_mined;
        return row;
    }

    let threshold = spec.threshold.unwrap_or(plan.power);
    let profits = match analyze_profits(&report.paths.data, threshold, Some(spec.block_reward)) {
        Ok(p) => p,
        Err(e) => return RunRow::failed(plan, "analysis-error", e.to_string()),
    };
    let collisions = match analyze_collisions(&report.paths.data) {
        Ok(c) => c,
        Err(e) => return RunRow::failed(plan, "analysis-error", e.to_string()),
    };
    let mut malicious = Vec::new();
    let mut honest = Vec::new();
    for (i, &id) in plan.designated_ids.iter().enumerate() {
        let Some(row) = profits.miner(id) else {
            return RunRow::failed(
                plan.clone(),
                "analysis-error",
                format!("designated miner {id} fell below the profit threshold {threshold}"),
            );
        };
        if i < plan.malicious_count {
            malicious.push(row.profit_share);
        } else {
            honest.push(row.profit_share);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    RunRow {
        status: status.into(),
        blocks: report.blocks_mined,
        malicious_share: (!malicious.is_empty()).then(|| malicious.iter().sum()),
        malicious_share_per_miner: mean(&malicious),
        honest_designated_share_per_miner: mean(&honest),
        duplication_rate: Some(collisions.duplication_rate),
        unique_count: Some(collisions.unique_count),
        distinct_count: Some(collisions.distinct_count),
        effective_throughput: collisions.effective_throughput,
        error: None,
        plan,
    }
}

/// Means over the successful runs of one `(variant, power, malicious_count)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: RandomAccessVariant,
    pub power: f64,
    pub malicious_count: usize,
    pub runs: usize,
    pub failures: usize,
    pub malicious_share: Option<f64>,
    pub malicious_share_per_miner: Option<f64>,
    pub honest_designated_share_per_miner: Option<f64>,
    pub duplication_rate: Option<f64>,
    pub unique_count: Option<f64>,
    pub effective_throughput: Option<f64>,
}

pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    // Keyed by first appearance so summary order follows plan order.
    let mut order: Vec<(RandomAccessVariant, u64, usize)> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<&RunRow>> = BTreeMap::new();
    for row in rows {
        let key = (row.plan.variant, row.plan.power.to_bits(), row.plan.malicious_count);
        let slot = match order.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                order.push(key);
                order.len() - 1
            }
        };
        groups.entry(slot).or_default().push(row);
    }
    groups
        .into_values()
        .map(|members| {
            let ok: Vec<&&RunRow> = members.iter().filter(|r| r.succeeded()).collect();
            let avg = |f: &dyn Fn(&RunRow) -> Option<f64>| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            let first = &members[0].plan;
            SummaryRow {
                variant: first.variant,
                power: first.power,
                malicious_count: first.malicious_count,
                runs: members.len(),
                failures: members.len() - ok.len(),
                malicious_share: avg(&|r| r.malicious_share),
                malicious_share_per_miner: avg(&|r| r.malicious_share_per_miner),
                honest_designated_share_per_miner: avg(&|r| r.honest_designated_share_per_miner),
                duplication_rate: avg(&|r| r.duplication_rate),
                unique_count: avg(&|r| r.unique_count.map(|u| u as f64)),
                effective_throughput: avg(&|r| r.effective_throughput),
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn runs_csv(rows: &[RunRow]) -> String {
    let mut out = String::from(
        "run,variant,power,malicious_count,placement,seed,designated,status,blocks,malicious_share,malicious_share_per_miner,honest_designated_share_per_miner,duplication_rate,unique_count,distinct_count,effective_throughput,error\n",
    );
    for r in rows {
        let designated: Vec<String> = r.plan.designated_ids.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.plan.index,
            r.plan.variant,
            r.plan.power,
            r.plan.malicious_count,
            r.plan.placement,
            r.plan.seed,
            designated.join(";"),
            r.status,
            r.blocks,
            opt(r.malicious_share),
            opt(r.malicious_share_per_miner),
            opt(r.honest_designated_share_per_miner),
            opt(r.duplication_rate),
            opt(r.unique_count),
            opt(r.distinct_count),
            opt(r.effective_throughput),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], " "),
        );
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "variant,power,malicious_count,runs,failures,malicious_share,malicious_share_per_miner,honest_designated_share_per_miner,duplication_rate,unique_count,effective_throughput\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.power,
            r.malicious_count,
            r.runs,
            r.failures,
            opt(r.malicious_share),
            opt(r.malicious_share_per_miner),
            opt(r.honest_designated_share_per_miner),
            opt(r.duplication_rate),
            opt(r.unique_count),
            opt(r.effective_throughput),
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every planned simulation on up to `spec.workers` threads and writes
/// `runs.csv` and `summary.csv` into `out_dir`. Failed runs are recorded,
/// not fatal.
pub fn run_sweep<F>(spec: &SweepSpec, out_dir: &Path, on_run: F) -> Result<SweepResult, SweepError>
where
    F: Fn(&RunRow) + Sync,
{
    std::fs::create_dir_all(out_dir)?;
    let topology = spec.load_topology()?;
    let plans = plan_runs(spec, &topology);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let runs: Vec<RunRow> = pool.install(|| {
        plans
            .into_par_iter()
            .map(|plan| {
                let row = execute(spec, &topology, plan, out_dir);
                on_run(&row);
                row
            })
            .collect()
    });
    let summary = summarize(&runs);
    std::fs::write(out_dir.join("runs.csv"), runs_csv(&runs))?;
    std::fs::write(out_dir.join("summary.csv"), summary_csv(&summary))?;
    Ok(SweepResult { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Link, NodeSpec};

    fn ring(n: usize) -> Topology {
        Topology {
            nodes: (0..n)
                .map(|i| NodeSpec {
                    miner_id: i,
                    mining_power: 1.0 / n as f64,
                    strategy: Strategy::HonestRandom,
                })
                .collect(),
            links: (0..n).map(|i| Link::new(i, (i + 1) % n, 10)).collect(),
        }
    }

    #[test]
    fn plan_counts_multiply() {
        let mut spec = SweepSpec::new(SimConfig::default(), TopologySource::Inline(ring(30)));
        spec.powers = vec![0.1, 0.2, 0.3, 0.4];
        spec.placements = 3;
        spec.seeds = 10;
        let plans = plan_runs(&spec, &ring(30));
        assert_eq!(plans.len(), 120);
        assert_eq!(spec.run_count(), 120);
        assert!(plans.iter().enumerate().all(|(i, p)| p.index == i));
    }

    #[test]
    fn placements_differ_and_have_comparable_degree() {
        let topo = ring(20);
        let sets = placements(&topo, 4, 3);
        assert_eq!(sets.len(), 3);
        let all: std::collections::BTreeSet<_> = sets.iter().flatten().collect();
        assert_eq!(all.len(), 12);
    }

    #[test]
    fn parses_spec_text() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("net.topo"), crate::formats::write_topology(&ring(5))).unwrap();
        std::fs::write(dir.path().join("base.conf"), "total_blocks=5\n").unwrap();
        let spec = SweepSpec::parse(
            "config = base.conf\ntopology = net.topo\ndesignated = 4\npower = 0.1\nmalicious_count = 0,1,2,3,4\nvariant = probe, begin\nseeds = 2\n",
            dir.path(),
        )
        .unwrap();
        assert_eq!(spec.config.total_blocks, 5);
        assert_eq!(spec.malicious_counts, vec![0, 1, 2, 3, 4]);
        assert_eq!(spec.variants.len(), 2);
        assert_eq!(spec.run_count(), 20);
        assert!(SweepSpec::parse("topology = x\nmalicious_count = 3\ndesignated = 2\n", dir.path()).is_err());
        assert!(SweepSpec::parse("power = 0.1\n", dir.path()).is_err());
    }

    #[test]
    fn summary_averages_successful_runs() {
        let plan = |i, count, seed| RunPlan {
            index: i,
            variant: RandomAccessVariant::Probe,
            power: 0.1,
            malicious_count: count,
            placement: 0,
            seed,
            designated_ids: vec![0],
        };
        let ok = |p: RunPlan, rate: f64| RunRow {
            duplication_rate: Some(rate),
            error: None,
            ..RunRow::failed(p, "complete", String::new())
        };
        let rows = vec![
            ok(plan(0, 1, 1), 0.1),
            ok(plan(1, 1, 2), 0.3),
            RunRow::failed(plan(2, 1, 3), "aborted", "starved".into()),
            ok(plan(3, 2, 1), 0.5),
        ];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 2);
        assert_eq!(summary[0].runs, 3);
        assert_eq!(summary[0].failures, 1);
        assert!((summary[0].duplication_rate.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(summary[1].malicious_count, 2);
    }
}
