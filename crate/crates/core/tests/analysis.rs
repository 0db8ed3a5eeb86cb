mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use common::{ring, small_config, with_powers};
use dagsim::analysis::{analyze_collisions, analyze_profits, ProfitSubject};
use dagsim::engine::{run, RunOptions};
use dagsim::{SimConfig, Strategy};

fn quiet() -> RunOptions {
    RunOptions {
        echo_progress: false,
        ..RunOptions::default()
    }
}

/// A run with slow links and fast blocks, so parallel blocks collide.
fn colliding_run(dir: &Path) -> (PathBuf, SimConfig) {
    let config = SimConfig {
        block_interval_lambda: 2.0,
        ..small_config(300, 31)
    };
    let topo = with_powers(ring(10, 5000), &[(2, 0.2, Strategy::MaliciousMaxFee), (6, 0.15, Strategy::MaliciousMaxFee)]);
    let report = run(&config, &topo, &dir.join("collide"), quiet()).unwrap();
    (report.paths.data, config)
}

fn rows(path: &Path) -> Vec<(u64, u64, u64, usize)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<u64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1], f[2], f[4] as usize)
        })
        .collect()
}

#[test]
fn collision_report_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = colliding_run(dir.path());
    let rows = rows(&data);
    let mut multiplicity: HashMap<u64, u64> = HashMap::new();
    for &(tx, ..) in &rows {
        *multiplicity.entry(tx).or_default() += 1;
    }
    let mut histogram = [0u64; 5];
    let mut weighted = 0;
    for &m in multiplicity.values() {
        if m >= 2 {
            histogram[(m.min(6) - 2) as usize] += 1;
            weighted += m - 1;
        }
    }
    let report = analyze_collisions(&data).unwrap();
    assert!(weighted > 0, "the scenario should produce collisions");
    assert_eq!(report.total_rows, rows.len() as u64);
    assert_eq!(report.distinct_count, multiplicity.len() as u64);
    assert_eq!(report.unique_count, multiplicity.values().filter(|&&m| m == 1).count() as u64);
    assert_eq!(report.duplicates_histogram, histogram);
    assert_eq!(report.weighted_duplicate_sum, weighted);
    assert!((report.duplication_rate - weighted as f64 / rows.len() as f64).abs() < 1e-15);
    assert_eq!(report.unique_count + histogram.iter().sum::<u64>(), report.distinct_count);
    assert!(report.effective_throughput.unwrap() > 0.0);

    let again = analyze_collisions(&data).unwrap();
    assert_eq!(again.to_text(true), report.to_text(true));
}

#[test]
fn profit_report_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = colliding_run(dir.path());
    let rows = rows(&data);
    let report = analyze_profits(&data, 0.12, None).unwrap();
    let share_sum: f64 = report.rows.iter().map(|r| r.profit_share).sum();
    assert!((share_sum - 1.0).abs() < 1e-9);
    let fee_sum: u128 = report.rows.iter().map(|r| r.fee_income as u128).sum();
    assert_eq!(fee_sum, rows.iter().map(|r| r.1 as u128).sum::<u128>());
    assert!(report.miner(2).is_some() && report.miner(6).is_some());
    match &report.merged().unwrap().subject {
        ProfitSubject::Merged { miners } => assert_eq!(*miners, 8),
        other => panic!("unexpected {other:?}"),
    }
    let mut per_miner: HashMap<usize, u64> = HashMap::new();
    for &(_, fee, _, miner) in &rows {
        *per_miner.entry(miner).or_default() += fee;
    }
    assert_eq!(report.miner(2).unwrap().fee_income as u64, per_miner[&2]);
}

#[test]
fn huge_block_reward_converges_to_block_share() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = colliding_run(dir.path());
    let reward = 1_000_000_000 * config.fee_range.1;
    let report = analyze_profits(&data, 0.0, Some(reward)).unwrap();
    for row in &report.rows {
        let block_share = row.blocks_mined as f64 / report.blocks as f64;
        assert!((row.profit_share - block_share).abs() < 1e-6, "{row:?}");
    }
}

#[test]
fn truncated_data_uses_complete_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = colliding_run(dir.path());
    let text = std::fs::read_to_string(&data).unwrap();
    let full = analyze_collisions(&data).unwrap();
    // Cut in the middle of the 43rd block's fifth row.
    let keep_rows = 42 * config.block_size + 4;
    let mut cut: String = text.lines().take(1 + keep_rows).map(|l| format!("{l}\n")).collect();
    let partial_line = text.lines().nth(1 + keep_rows).unwrap();
    cut.push_str(&partial_line[..partial_line.len() / 2]);
    std::fs::write(&data, cut).unwrap();
    let report = analyze_collisions(&data).unwrap();
    assert_eq!(report.blocks, 42);
    assert_eq!(report.total_rows, 42 * config.block_size as u64);
    assert!(report.total_rows < full.total_rows);
    // The trailer no longer matches, so no duration is claimed.
    assert!(report.effective_throughput.is_none());
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(analyze_collisions(&dir.path().join("absent.data.csv")).is_err());
    assert!(analyze_collisions(&dir.path().join("wrong_name.csv")).is_err());
    let (data, _) = colliding_run(dir.path());
    std::fs::remove_file(data.with_file_name("collide.meta")).unwrap();
    assert!(analyze_profits(&data, 0.1, None).is_err());
}
