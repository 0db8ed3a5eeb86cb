use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dagsim::analysis::{analyze_collisions, analyze_profits, CollisionReport, ProfitReport};
use dagsim::engine::{run, RunOptions};
use dagsim::formats::{read_config, read_topology, write_topology};
use dagsim::output::RunStatus;
use dagsim::sweep::{run_sweep, SweepSpec};
use dagsim::topology_gen::{build_topology, DiscreteDistribution, PowerPlan};

#[derive(Parser)]
#[command(name = "dagsim", version, about = "Discrete-event simulator for DAG-based PoW networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random network topology file.
    GenTopology {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        degree_dist: PathBuf,
        #[arg(long)]
        delay_dist: PathBuf,
        /// Malicious miners as "id:power,id:power"; other nodes share the rest.
        #[arg(long)]
        malicious: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one simulation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
        /// Overrides rng_seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Check mempool invariants after every event (slow).
        #[arg(long)]
        audit: bool,
        /// Do not echo progress to stdout.
        #[arg(long)]
        quiet: bool,
        /// List every transaction in the abort snapshot.
        #[arg(long)]
        full_snapshot: bool,
    },
    /// Count transactions included in more than one block.
    AnalyzeCollisions {
        data: PathBuf,
        #[arg(long)]
        csv_out: Option<PathBuf>,
        #[arg(long)]
        list_duplicates: bool,
    },
    /// Per-miner income and profit share.
    AnalyzeProfits {
        data: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        block_reward: Option<u64>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Run a parameter sweep described by a spec file.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides `workers` from the spec.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), Box<dyn Error>> {
    let mut text = format!("{header}\n");
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn execute(command: Command) -> Result<ExitCode, Box<dyn Error>> {
    match command {
        Command::GenTopology {
            nodes,
            degree_dist,
            delay_dist,
            malicious,
            seed,
            out,
        } => {
            let degree = DiscreteDistribution::read(&degree_dist)?;
            let delay = DiscreteDistribution::read(&delay_dist)?;
            let plan = match malicious {
                Some(spec) => PowerPlan::parse_malicious(&spec)?,
                None => PowerPlan::Uniform,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let topology = build_topology(nodes, &degree, &delay, &plan, &mut rng)?;
            std::fs::write(&out, write_topology(&topology))
                .map_err(|e| format!("{}: {e}", out.display()))?;
            println!(
                "wrote {} nodes, {} links to {}",
                topology.node_count(),
                topology.link_count(),
                out.display()
            );
        }
        Command::Simulate {
            config,
            topology,
            out_prefix,
            seed,
            audit,
            quiet,
            full_snapshot,
        } => {
            let mut config = read_config(&config)?;
            if let Some(seed) = seed {
                config.rng_seed = seed;
            }
            let topology = read_topology(&topology)?;
            let options = RunOptions {
                audit,
                echo_progress: !quiet,
                full_snapshot,
                ..RunOptions::default()
            };
            let report = run(&config, &topology, &out_prefix, options)?;
            if report.status == RunStatus::Aborted {
                eprintln!("run aborted: {}", report.abort_reason.unwrap_or_default());
                return Ok(ExitCode::from(3));
            }
        }
        Command::AnalyzeCollisions {
            data,
            csv_out,
            list_duplicates,
        } => {
            let report = analyze_collisions(&data)?;
            print!("{}", report.to_text(list_duplicates));
            if let Some(path) = csv_out {
                write_csv(&path, CollisionReport::csv_header(), &[report.csv_row()])?;
            }
        }
        Command::AnalyzeProfits {
            data,
            threshold,
            block_reward,
            csv_out,
        } => {
            let report = analyze_profits(&data, threshold, block_reward)?;
            print!("{}", report.to_text());
            if let Some(path) = csv_out {
                write_csv(&path, ProfitReport::csv_header(), &report.csv_rows())?;
            }
        }
        Command::Sweep {
            spec,
            out_dir,
            workers,
        } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| format!("{}: {e}", spec.display()))?;
            let base = spec.parent().unwrap_or(Path::new("."));
            let mut spec = SweepSpec::parse(&text, base)?;
            if let Some(w) = workers {
                spec.workers = w.max(1);
            }
            let total = spec.run_count();
            println!("sweep: {total} runs on {} workers", spec.workers);
            let result = run_sweep(&spec, &out_dir, |row| {
                match &row.error {
                    None => println!("run {:>4}/{total}: {}", row.plan.index + 1, row.status),
                    Some(e) => println!("run {:>4}/{total}: {} ({e})", row.plan.index + 1, row.status),
                }
            })?;
            let failed = result.runs.iter().filter(|r| !r.succeeded()).count();
            println!(
                "wrote {} and {} ({failed} failed runs)",
                out_dir.join("runs.csv").display(),
                out_dir.join("summary.csv").display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
