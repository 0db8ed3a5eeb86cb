//! Post-processing of run outputs into collision and profit reports.
//!
//! Both analyzers take the data file path, locate the metadata file next to
//! it (`<prefix>.data.csv` → `<prefix>.meta`), and stream the rows block by
//! block. A trailing incomplete block, as left by a crashed run, is
//! dropped; every complete block before it is used.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::formats::FormatError;
use crate::model::{BlockId, Fee, MinerId, Strategy, TxId};
use crate::output::{BlockRecord, OutputPaths, RunMetadata, DATA_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("{0}: data file name must end in .data.csv")]
    BadDataPath(PathBuf),
    #[error("metadata: {0}")]
    Metadata(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("power threshold {0} outside [0,1]")]
    BadThreshold(f64),
}

/// Rows of one complete block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRows {
    pub block_id: BlockId,
    pub height: u64,
    pub miner_id: MinerId,
    pub txs: Vec<(TxId, Fee)>,
}

/// Summary of how a data file was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadSummary {
    pub blocks: u64,
    pub rows: u64,
    /// Rows dropped from an incomplete final block or a cut-off last line.
    pub dropped_rows: u64,
}

pub fn load_metadata(data_path: &Path) -> Result<RunMetadata, AnalysisError> {
    let paths = OutputPaths::from_data_path(data_path)
        .ok_or_else(|| AnalysisError::BadDataPath(data_path.to_path_buf()))?;
    Ok(RunMetadata::read(&paths.meta)?)
}

/// Streams complete blocks of `data_path` to `visit`.
pub fn read_blocks<F>(data_path: &Path, block_size: usize, mut visit: F) -> Result<ReadSummary, AnalysisError>
where
    F: FnMut(&BlockRows),
{
    let io_err = |source| AnalysisError::Io {
        path: data_path.to_path_buf(),
        source,
    };
    let corrupt = |line: usize, message: String| AnalysisError::Corrupt {
        path: data_path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(data_path).map_err(io_err)?;
    let mut lines = BufReader::new(file).lines().enumerate().peekable();

    match lines.next() {
        Some((_, Ok(header))) if header.trim_end() == DATA_HEADER => {}
        Some((_, Ok(other))) => return Err(corrupt(1, format!("unexpected header `{other}`"))),
        Some((_, Err(e))) => return Err(io_err(e)),
        None => return Err(corrupt(1, "empty data file".into())),
    }

    let mut summary = ReadSummary::default();
    let mut current: Option<BlockRows> = None;
    let mut expected_next: BlockId = 0;

    while let Some((idx, line)) = lines.next() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        let is_last = lines.peek().is_none();
        let Some(rec) = BlockRecord::parse(&line) else {
            if is_last {
                // Cut-off write at the end of a crashed run.
                summary.dropped_rows += 1;
                break;
            }
            return Err(corrupt(line_no, format!("malformed row `{line}`")));
        };
        match &mut current {
            Some(block) if block.block_id == rec.block_id => {
                if block.miner_id != rec.miner_id || block.height != rec.height {
                    return Err(corrupt(line_no, "block fields change within a block".into()));
                }
                block.txs.push((rec.tx_id, rec.tx_fee));
            }
            _ => {
                if let Some(done) = current.take() {
                    if done.txs.len() != block_size {
                        return Err(corrupt(
                            line_no,
                            format!("block {} has {} rows, expected {block_size}", done.block_id, done.txs.len()),
                        ));
                    }
                    summary.blocks += 1;
                    summary.rows += done.txs.len() as u64;
                    visit(&done);
                }
                if rec.block_id != expected_next {
                    return Err(corrupt(
                        line_no,
                        format!("block {} out of order, expected {expected_next}", rec.block_id),
                    ));
                }
                expected_next += 1;
                current = Some(BlockRows {
                    block_id: rec.block_id,
                    height: rec.height,
                    miner_id: rec.miner_id,
                    txs: vec![(rec.tx_id, rec.tx_fee)],
                });
            }
        }
    }
    if let Some(done) = current {
        if done.txs.len() == block_size {
            summary.blocks += 1;
            summary.rows += done.txs.len() as u64;
            visit(&done);
        } else {
            summary.dropped_rows += done.txs.len() as u64;
        }
    }
    Ok(summary)
}

/// Inclusion multiplicities above one are bucketed as 2, 3, 4, 5 and "5+"
/// (six or more).
pub const HISTOGRAM_LABELS: [&str; 5] = ["2", "3", "4", "5", "5+"];

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionReport {
    pub blocks: u64,
    pub total_rows: u64,
    /// Distinct transactions included at least once.
    pub distinct_count: u64,
    /// Transactions included exactly once.
    pub unique_count: u64,
    /// Distinct transactions per multiplicity bucket, see [`HISTOGRAM_LABELS`].
    pub duplicates_histogram: [u64; 5],
    /// Σ (multiplicity − 1) over duplicated transactions.
    pub weighted_duplicate_sum: u64,
    /// `weighted_duplicate_sum / total_rows`: the share of block slots spent
    /// on redundant copies.
    pub duplication_rate: f64,
    /// Simulated seconds up to the last block, when the run recorded it.
    pub duration: Option<f64>,
    /// Distinct transactions per simulated second.
    pub effective_throughput: Option<f64>,
    /// Duplicated transactions as `(tx_id, multiplicity)`, by id.
    pub duplicates: Vec<(TxId, u32)>,
    pub dropped_rows: u64,
}

/// Builds a report from per-transaction multiplicities.
pub fn collision_report_from_counts(
    counts: &HashMap<TxId, u32>,
    blocks: u64,
    duration: Option<f64>,
) -> CollisionReport {
    let mut histogram = [0u64; 5];
    let mut unique = 0;
    let mut weighted = 0u64;
    let mut total = 0u64;
    let mut duplicates = Vec::new();
    for (&tx, &m) in counts {
        total += u64::from(m);
        if m == 1 {
            unique += 1;
        } else {
            histogram[(m.min(6) - 2) as usize] += 1;
            weighted += u64::from(m - 1);
            duplicates.push((tx, m));
        }
    }
    duplicates.sort_unstable();
    let distinct = counts.len() as u64;
    let duration = duration.filter(|d| *d > 0.0);
    CollisionReport {
        blocks,
        total_rows: total,
        distinct_count: distinct,
        unique_count: unique,
        duplicates_histogram: histogram,
        weighted_duplicate_sum: weighted,
        duplication_rate: if total == 0 { 0.0 } else { weighted as f64 / total as f64 },
        duration,
        effective_throughput: duration.map(|d| distinct as f64 / d),
        duplicates,
        dropped_rows: 0,
    }
}

pub fn analyze_collisions(data_path: &Path) -> Result<CollisionReport, AnalysisError> {
    let meta = load_metadata(data_path)?;
    let mut counts: HashMap<TxId, u32> = HashMap::new();
    let summary = read_blocks(data_path, meta.config.block_size, |block| {
        for &(tx, _) in &block.txs {
            *counts.entry(tx).or_insert(0) += 1;
        }
    })?;
    // A truncated run has no trailer and therefore no trustworthy duration.
    let duration = meta
        .trailer
        .as_ref()
        .filter(|t| t.blocks_mined == summary.blocks)
        .map(|t| t.end_time);
    let mut report = collision_report_from_counts(&counts, summary.blocks, duration);
    report.dropped_rows = summary.dropped_rows;
    Ok(report)
}

impl CollisionReport {
    pub fn to_text(&self, list_duplicates: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# duplication_rate = weighted_duplicate_sum / total inclusion rows");
        let _ = writeln!(out, "blocks: {}", self.blocks);
        let _ = writeln!(out, "inclusion rows: {}", self.total_rows);
        let _ = writeln!(out, "distinct transactions: {}", self.distinct_count);
        let _ = writeln!(out, "unique transactions (included once): {}", self.unique_count);
        for (label, count) in HISTOGRAM_LABELS.iter().zip(self.duplicates_histogram) {
            let _ = writeln!(out, "included {label} times: {count}");
        }
        let _ = writeln!(out, "weighted duplicate sum: {}", self.weighted_duplicate_sum);
        let _ = writeln!(out, "duplication rate: {:.6}", self.duplication_rate);
        match (self.duration, self.effective_throughput) {
            (Some(d), Some(t)) => {
                let _ = writeln!(out, "simulated duration: {d:.3} s");
                let _ = writeln!(out, "effective throughput: {t:.4} tx/s");
            }
            _ => {
                let _ = writeln!(out, "effective throughput: n/a (run did not complete)");
            }
        }
        if self.dropped_rows > 0 {
            let _ = writeln!(out, "dropped rows from incomplete final block: {}", self.dropped_rows);
        }
        if list_duplicates {
            let _ = writeln!(out, "duplicates (tx_id: multiplicity):");
            for (tx, m) in &self.duplicates {
                let _ = writeln!(out, "  {tx}: {m}");
            }
        }
        out
    }

    pub fn csv_header() -> &'static str {
        "blocks,total_rows,distinct_count,unique_count,dup_2,dup_3,dup_4,dup_5,dup_5plus,weighted_duplicate_sum,duplication_rate,duration,effective_throughput"
    }

    pub fn csv_row(&self) -> String {
        let h = &self.duplicates_histogram;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.blocks,
            self.total_rows,
            self.distinct_count,
            self.unique_count,
            h[0],
            h[1],
            h[2],
            h[3],
            h[4],
            self.weighted_duplicate_sum,
            self.duplication_rate,
            opt(self.duration),
            opt(self.effective_throughput)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfitSubject {
    Miner(MinerId, Strategy),
    /// Every miner below the power threshold.
    Merged { miners: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfitRow {
    pub subject: ProfitSubject,
    /// Also the fair-share baseline for `profit_share`.
    pub mining_power: f64,
    pub blocks_mined: u64,
    pub fee_income: u64,
    pub block_reward_income: u64,
    pub total: u128,
    pub profit_share: f64,
}

impl ProfitRow {
    pub fn label(&self) -> String {
        match self.subject {
            ProfitSubject::Miner(id, _) => id.to_string(),
            ProfitSubject::Merged { .. } => "merged".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfitReport {
    pub threshold: f64,
    pub block_reward: u64,
    pub blocks: u64,
    pub rows: Vec<ProfitRow>,
}

#[derive(Debug, Clone, Copy, Default)]
struct MinerTally {
    blocks: u64,
    fees: u64,
}

/// Builds a profit report from per-miner tallies. Miners with power at or
/// above `threshold` get their own row; the rest share one merged row.
fn profit_report(
    powers: &[(MinerId, f64, Strategy)],
    tallies: &HashMap<MinerId, MinerTally>,
    threshold: f64,
    block_reward: u64,
    blocks: u64,
) -> ProfitReport {
    let mut rows = Vec::new();
    let mut merged = ProfitRow {
        subject: ProfitSubject::Merged { miners: 0 },
        mining_power: 0.0,
        blocks_mined: 0,
        fee_income: 0,
        block_reward_income: 0,
        total: 0,
        profit_share: 0.0,
    };
    let mut merged_count = 0;
    for &(id, power, strategy) in powers {
        let tally = tallies.get(&id).copied().unwrap_or_default();
        if power >= threshold {
            rows.push(ProfitRow {
                subject: ProfitSubject::Miner(id, strategy),
                mining_power: power,
                blocks_mined: tally.blocks,
                fee_income: tally.fees,
                block_reward_income: tally.blocks * block_reward,
                total: 0,
                profit_share: 0.0,
            });
        } else {
            merged_count += 1;
            merged.mining_power += power;
            merged.blocks_mined += tally.blocks;
            merged.fee_income += tally.fees;
            merged.block_reward_income += tally.blocks * block_reward;
        }
    }
    if merged_count > 0 {
        merged.subject = ProfitSubject::Merged {
            miners: merged_count,
        };
        rows.push(merged);
    }
    for row in &mut rows {
        row.total = u128::from(row.fee_income) + u128::from(row.block_reward_income);
    }
    let grand: u128 = rows.iter().map(|r| r.total).sum();
    if grand > 0 {
        for row in &mut rows {
            row.profit_share = row.total as f64 / grand as f64;
        }
    }
    ProfitReport {
        threshold,
        block_reward,
        blocks,
        rows,
    }
}

pub fn analyze_profits(
    data_path: &Path,
    power_threshold: f64,
    block_reward: Option<u64>,
) -> Result<ProfitReport, AnalysisError> {
    if !(0.0..=1.0).contains(&power_threshold) {
        return Err(AnalysisError::BadThreshold(power_threshold));
    }
    let meta = load_metadata(data_path)?;
    let mut tallies: HashMap<MinerId, MinerTally> = HashMap::new();
    let summary = read_blocks(data_path, meta.config.block_size, |block| {
        let tally = tallies.entry(block.miner_id).or_default();
        tally.blocks += 1;
        tally.fees += block.txs.iter().map(|&(_, fee)| fee).sum::<u64>();
    })?;
    let powers: Vec<(MinerId, f64, Strategy)> = meta
        .miners
        .iter()
        .map(|m| (m.miner_id, m.mining_power, m.strategy))
        .collect();
    if let Some(&unknown) = tallies.keys().find(|id| meta.miner(**id).is_none()) {
        return Err(AnalysisError::Corrupt {
            path: data_path.to_path_buf(),
            line: 0,
            message: format!("miner {unknown} is not listed in the metadata"),
        });
    }
    Ok(profit_report(
        &powers,
        &tallies,
        power_threshold,
        block_reward.unwrap_or(0),
        summary.blocks,
    ))
}

impl ProfitReport {
    /// The row for `id`, if reported individually.
    pub fn miner(&self, id: MinerId) -> Option<&ProfitRow> {
        self.rows
            .iter()
            .find(|r| matches!(r.subject, ProfitSubject::Miner(m, _) if m == id))
    }

    pub fn merged(&self) -> Option<&ProfitRow> {
        self.rows
            .iter()
            .find(|r| matches!(r.subject, ProfitSubject::Merged { .. }))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "blocks: {}  threshold: {}  block reward: {}",
            self.blocks, self.threshold, self.block_reward
        );
        let _ = writeln!(
            out,
            "{:>10} {:>9} {:>10} {:>8} {:>14} {:>14} {:>16} {:>10} {:>10}",
            "miner", "strategy", "power", "blocks", "fees", "rewards", "total", "share", "fair"
        );
        for row in &self.rows {
            let strategy = match row.subject {
                ProfitSubject::Miner(_, s) => s.as_str().to_string(),
                ProfitSubject::Merged { miners } => format!("{miners} miners"),
            };
            let _ = writeln!(
                out,
                "{:>10} {:>9} {:>10.6} {:>8} {:>14} {:>14} {:>16} {:>10.6} {:>10.6}",
                row.label(),
                strategy,
                row.mining_power,
                row.blocks_mined,
                row.fee_income,
                row.block_reward_income,
                row.total,
                row.profit_share,
                row.mining_power
            );
        }
        out
    }

    pub fn csv_header() -> &'static str {
        "miner,strategy,mining_power,blocks_mined,fee_income,block_reward_income,total,profit_share,fair_share"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|row| {
                let strategy = match row.subject {
                    ProfitSubject::Miner(_, s) => s.as_str(),
                    ProfitSubject::Merged { .. } => "mixed",
                };
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    row.label(),
                    strategy,
                    row.mining_power,
                    row.blocks_mined,
                    row.fee_income,
                    row.block_reward_income,
                    row.total,
                    row.profit_share,
                    row.mining_power
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(blocks: &[&[u64]]) -> HashMap<TxId, u32> {
        let mut map = HashMap::new();
        for block in blocks {
            for &tx in *block {
                *map.entry(tx).or_insert(0) += 1;
            }
        }
        map
    }

    #[test]
    fn two_block_overlap() {
        let report = collision_report_from_counts(&counts(&[&[1, 2], &[2, 3]]), 2, Some(10.0));
        assert_eq!(report.unique_count, 2);
        assert_eq!(report.distinct_count, 3);
        assert_eq!(report.duplicates_histogram, [1, 0, 0, 0, 0]);
        assert_eq!(report.weighted_duplicate_sum, 1);
        assert_eq!(report.duplication_rate, 0.25);
        assert_eq!(report.duplicates, vec![(2, 2)]);
        assert_eq!(report.effective_throughput, Some(0.3));
    }

    #[test]
    fn six_fold_inclusion_lands_in_overflow_bucket() {
        let blocks: Vec<&[u64]> = vec![&[9]; 6];
        let report = collision_report_from_counts(&counts(&blocks), 6, None);
        assert_eq!(report.duplicates_histogram, [0, 0, 0, 0, 1]);
        assert_eq!(report.weighted_duplicate_sum, 5);
        assert_eq!(report.effective_throughput, None);
    }

    #[test]
    fn no_duplicates() {
        let ids: Vec<Vec<u64>> = (0..10).map(|b| (b * 100..b * 100 + 100).collect()).collect();
        let refs: Vec<&[u64]> = ids.iter().map(Vec::as_slice).collect();
        let report = collision_report_from_counts(&counts(&refs), 10, Some(1.0));
        assert_eq!(report.unique_count, 1000);
        assert_eq!(report.duplication_rate, 0.0);
    }

    fn powers(list: &[f64]) -> Vec<(MinerId, f64, Strategy)> {
        list.iter()
            .enumerate()
            .map(|(i, &p)| (i, p, Strategy::HonestRandom))
            .collect()
    }

    #[test]
    fn single_miner_takes_everything() {
        let mut tallies = HashMap::new();
        tallies.insert(0, MinerTally { blocks: 2, fees: 150 });
        let report = profit_report(&powers(&[1.0]), &tallies, 0.0, 0, 2);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].fee_income, 150);
        assert_eq!(report.rows[0].profit_share, 1.0);
    }

    #[test]
    fn symmetric_miners_split_evenly() {
        let mut tallies = HashMap::new();
        tallies.insert(0, MinerTally { blocks: 1, fees: 70 });
        tallies.insert(1, MinerTally { blocks: 1, fees: 70 });
        let report = profit_report(&powers(&[0.5, 0.5]), &tallies, 0.1, 10, 2);
        assert_eq!(report.rows[0].total, 80);
        assert_eq!(report.rows[1].total, 80);
        assert_eq!(report.rows[0].profit_share, 0.5);
        assert_eq!(report.rows[1].profit_share, 0.5);
        assert!(report.merged().is_none());
    }

    #[test]
    fn small_miners_are_merged() {
        let mut p = vec![0.1; 4];
        p.extend(std::iter::repeat_n(0.6 / 7588.0, 7588));
        let report = profit_report(&powers(&p), &HashMap::new(), 0.05, 0, 0);
        assert_eq!(report.rows.len(), 5);
        let merged = report.merged().unwrap();
        assert_eq!(merged.subject, ProfitSubject::Merged { miners: 7588 });
        assert!((merged.mining_power - 0.6).abs() < 1e-9);
    }
}
