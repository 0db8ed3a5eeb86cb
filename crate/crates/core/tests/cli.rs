use std::path::Path;
use std::process::{Command, Output};

fn dagsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn dagsim")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const CONFIG: &str = "block_interval_lambda = 5\ntotal_blocks = 40\nblock_size = 10\nmempool_capacity = 500\ninitial_tx_count = 500\ntxgen_count_range = 20,40\ntxgen_delay_range = 10,20\nfee_range = 1,1000\nrng_seed = 3\n";

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "deg.dist", "# degree\n3 2\n4 1\n");
    write(d, "delay.dist", "200 1\n3000 1\n");
    write(d, "sim.conf", CONFIG);

    ok(&dagsim(
        &["gen-topology", "--nodes", "30", "--degree-dist", "deg.dist", "--delay-dist", "delay.dist", "--malicious", "4:0.2", "--seed", "5", "--out", "net.topo"],
        d,
    ));
    let topo = std::fs::read_to_string(d.join("net.topo")).unwrap();
    assert!(topo.starts_with("nodes 30 links "));
    assert!(topo.contains("node 4 0.2 malicious"));

    ok(&dagsim(
        &["simulate", "--config", "sim.conf", "--topology", "net.topo", "--out-prefix", "run", "--seed", "9", "--quiet"],
        d,
    ));
    for suffix in ["data.csv", "meta", "progress"] {
        assert!(d.join(format!("run.{suffix}")).exists(), "{suffix}");
    }
    let meta = std::fs::read_to_string(d.join("run.meta")).unwrap();
    assert!(meta.contains("rng_seed=9"));
    assert!(meta.contains("status=complete"));

    let text = ok(&dagsim(&["analyze-collisions", "run.data.csv", "--csv-out", "coll.csv"], d));
    assert!(text.contains("duplication rate"));
    let csv = std::fs::read_to_string(d.join("coll.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let text = ok(&dagsim(
        &["analyze-profits", "run.data.csv", "--threshold", "0.1", "--block-reward", "50", "--csv-out", "profit.csv"],
        d,
    ));
    assert!(text.contains("malicious"));
    let csv = std::fs::read_to_string(d.join("profit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header, miner 4, merged");
}

#[test]
fn aborted_run_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "net.topo", "nodes 2 links 1\nnode 0 0.5 honest\nnode 1 0.5 honest\nlink 0 1 10\n");
    write(
        d,
        "sim.conf",
        &CONFIG.replace("initial_tx_count = 500", "initial_tx_count = 15").replace("txgen_count_range = 20,40", "txgen_count_range = 0,0"),
    );
    let out = dagsim(&["simulate", "--config", "sim.conf", "--topology", "net.topo", "--out-prefix", "run", "--quiet"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not have enough transactions"));
    assert!(std::fs::read_to_string(d.join("run.meta")).unwrap().contains("status=aborted"));
}

#[test]
fn invalid_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "net.topo", "nodes 3 links 1\nnode 0 0.5 honest\nnode 1 0.3 honest\nnode 2 0.2 honest\nlink 0 1 10\n");
    write(d, "sim.conf", CONFIG);
    let out = dagsim(&["simulate", "--config", "sim.conf", "--topology", "net.topo", "--out-prefix", "run", "--quiet"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("graph not connected"));

    write(d, "bad.conf", "no_such_key = 1\n");
    let out = dagsim(&["simulate", "--config", "bad.conf", "--topology", "net.topo", "--out-prefix", "run"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_run_and_summary_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "deg.dist", "4 1\n");
    write(d, "delay.dist", "1000 1\n");
    write(d, "sim.conf", &CONFIG.replace("total_blocks = 40", "total_blocks = 20"));
    write(
        d,
        "exp.sweep",
        "config = sim.conf\nnodes = 20\ndegree_dist = deg.dist\ndelay_dist = delay.dist\ndesignated = 2\npower = 0.1,0.2\nmalicious_count = 1,2\nplacements = 2\nseeds = 2\nworkers = 2\n",
    );
    let stdout = ok(&dagsim(&["sweep", "exp.sweep", "--out-dir", "out"], d));
    assert!(stdout.contains("16 runs"));
    let runs = std::fs::read_to_string(d.join("out/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 16);
    assert!(runs.lines().skip(1).all(|l| l.contains(",complete,")), "{runs}");
    let summary = std::fs::read_to_string(d.join("out/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);

    // Same spec, same tables.
    ok(&dagsim(&["sweep", "exp.sweep", "--out-dir", "again", "--workers", "1"], d));
    assert_eq!(runs, std::fs::read_to_string(d.join("again/runs.csv")).unwrap());
    assert_eq!(summary, std::fs::read_to_string(d.join("again/summary.csv")).unwrap());
}
