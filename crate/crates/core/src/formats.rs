//! Text formats for topology and configuration files.
//!
//! Topology files hold one record per line:
//!
//! ```text
//! # comment
//! nodes 3 links 2
//! node 0 0.5 honest
//! node 1 0.25 malicious
//! node 2 0.25 honest
//! link 0 1 120
//! link 1 2 80
//! ```
//!
//! Configuration files are flat `key=value` lines whose keys are the
//! [`SimConfig`] field names. Ranges are written as `low,high`.

use std::fmt::Write as _;
use std::path::Path;

use crate::model::{Link, NodeSpec, RandomAccessVariant, SimConfig, Strategy, Topology};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl FormatError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Strips a trailing `#` comment and surrounding whitespace.
pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

fn field<T: std::str::FromStr>(token: Option<&str>, line: usize, what: &str) -> Result<T, FormatError> {
    let token = token.ok_or_else(|| FormatError::parse(line, format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| FormatError::parse(line, format!("invalid {what} `{token}`")))
}

pub fn parse_topology(text: &str) -> Result<Topology, FormatError> {
    let mut header: Option<(usize, usize)> = None;
    let mut topo = Topology::default();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("nodes") => {
                if header.is_some() {
                    return Err(FormatError::parse(line_no, "duplicate header"));
                }
                let nodes = field(tokens.next(), line_no, "node count")?;
                if tokens.next() != Some("links") {
                    return Err(FormatError::parse(line_no, "expected `nodes <N> links <L>`"));
                }
                let links = field(tokens.next(), line_no, "link count")?;
                topo.nodes.reserve(nodes);
                topo.links.reserve(links);
                header = Some((nodes, links));
            }
            Some("node") => {
                let miner_id = field(tokens.next(), line_no, "miner id")?;
                let mining_power = field(tokens.next(), line_no, "mining power")?;
                let strategy: Strategy = tokens
                    .next()
                    .ok_or_else(|| FormatError::parse(line_no, "missing strategy"))?
                    .parse()
                    .map_err(|e: String| FormatError::parse(line_no, e))?;
                topo.nodes.push(NodeSpec {
                    miner_id,
                    mining_power,
                    strategy,
                });
            }
            Some("link") => {
                let a = field(tokens.next(), line_no, "link endpoint")?;
                let b = field(tokens.next(), line_no, "link endpoint")?;
                let delay = field(tokens.next(), line_no, "delay")?;
                topo.links.push(Link::new(a, b, delay));
            }
            Some(other) => {
                return Err(FormatError::parse(line_no, format!("unknown record `{other}`")))
            }
            None => unreachable!(),
        }
        if tokens.next().is_some() {
            return Err(FormatError::parse(line_no, "trailing tokens"));
        }
    }

    let (nodes, links) = header.ok_or_else(|| FormatError::parse(0, "missing `nodes` header"))?;
    if nodes != topo.nodes.len() || links != topo.links.len() {
        return Err(FormatError::parse(
            0,
            format!(
                "header declares {nodes} nodes and {links} links, found {} and {}",
                topo.nodes.len(),
                topo.links.len()
            ),
        ));
    }
    Ok(topo)
}

pub fn write_topology(topo: &Topology) -> String {
    let mut out = String::with_capacity(32 * (topo.nodes.len() + topo.links.len()) + 32);
    let _ = writeln!(out, "nodes {} links {}", topo.nodes.len(), topo.links.len());
    for node in &topo.nodes {
        let _ = writeln!(out, "node {} {} {}", node.miner_id, node.mining_power, node.strategy);
    }
    for link in &topo.links {
        let _ = writeln!(out, "link {} {} {}", link.node_a, link.node_b, link.delay_ms);
    }
    out
}

pub fn read_topology(path: &Path) -> Result<Topology, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_topology(&text)
}

fn parse_pair<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<(T, T), FormatError> {
    let (lo, hi) = value
        .split_once(',')
        .ok_or_else(|| FormatError::parse(line, format!("{key} expects `low,high`")))?;
    Ok((
        field(Some(lo.trim()), line, key)?,
        field(Some(hi.trim()), line, key)?,
    ))
}

/// Applies one `key=value` setting to `config`. Shared by the config file
/// parser and the metadata reader.
pub(crate) fn apply_config_key(
    config: &mut SimConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<bool, FormatError> {
    match key {
        "block_interval_lambda" => config.block_interval_lambda = field(Some(value), line, key)?,
        "total_blocks" => config.total_blocks = field(Some(value), line, key)?,
        "block_size" => config.block_size = field(Some(value), line, key)?,
        "mempool_capacity" => config.mempool_capacity = field(Some(value), line, key)?,
        "initial_tx_count" => config.initial_tx_count = field(Some(value), line, key)?,
        "txgen_count_range" => config.txgen_count_range = parse_pair(value, line, key)?,
        "txgen_delay_range" => config.txgen_delay_range = parse_pair(value, line, key)?,
        "fee_range" => config.fee_range = parse_pair(value, line, key)?,
        "rng_seed" => config.rng_seed = field(Some(value), line, key)?,
        "random_access_variant" => {
            config.random_access_variant = value
                .parse::<RandomAccessVariant>()
                .map_err(|e| FormatError::parse(line, e))?
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses a configuration file. Keys that are absent keep their default.
pub fn parse_config(text: &str) -> Result<SimConfig, FormatError> {
    let mut config = SimConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| FormatError::parse(line_no, "expected key=value"))?;
        let key = key.trim();
        if !apply_config_key(&mut config, key, value.trim(), line_no)? {
            return Err(FormatError::parse(line_no, format!("unknown key `{key}`")));
        }
    }
    Ok(config)
}

pub fn write_config(config: &SimConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "block_interval_lambda={}", config.block_interval_lambda);
    let _ = writeln!(out, "total_blocks={}", config.total_blocks);
    let _ = writeln!(out, "block_size={}", config.block_size);
    let _ = writeln!(out, "mempool_capacity={}", config.mempool_capacity);
    let _ = writeln!(out, "initial_tx_count={}", config.initial_tx_count);
    let (n, m) = config.txgen_count_range;
    let _ = writeln!(out, "txgen_count_range={n},{m}");
    let (p, q) = config.txgen_delay_range;
    let _ = writeln!(out, "txgen_delay_range={p},{q}");
    let (lo, hi) = config.fee_range;
    let _ = writeln!(out, "fee_range={lo},{hi}");
    let _ = writeln!(out, "rng_seed={}", config.rng_seed);
    let _ = writeln!(out, "random_access_variant={}", config.random_access_variant);
    out
}

pub fn read_config(path: &Path) -> Result<SimConfig, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    #[test]
    fn parses_commented_topology() {
        let text = "# tiny net\nnodes 2 links 1\nnode 0 0.5 honest\nnode 1 0.5 malicious # whale\n\nlink 0 1 250\n";
        let topo = parse_topology(text).unwrap();
        assert_eq!(topo.nodes.len(), 2);
        assert_eq!(topo.nodes[1].strategy, Strategy::MaliciousMaxFee);
        assert_eq!(topo.links, vec![Link::new(0, 1, 250)]);
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let text = "nodes 3 links 0\nnode 0 1 honest\n";
        assert!(parse_topology(text).is_err());
        assert!(parse_topology("node 0 1 honest\n").is_err());
        assert!(parse_topology("nodes 1 links 0\nnode 0 1 sneaky\n").is_err());
    }

    #[test]
    fn config_parses_ranges_and_variant() {
        let config = parse_config(
            "block_interval_lambda=600\n txgen_count_range = 10,10\nfee_range=1,1000\nrandom_access_variant=equal_key\n",
        )
        .unwrap();
        assert_eq!(config.block_interval_lambda, 600.0);
        assert_eq!(config.txgen_count_range, (10, 10));
        assert_eq!(config.random_access_variant, RandomAccessVariant::EqualKey);
        assert!(parse_config("bogus=1\n").is_err());
        assert!(parse_config("fee_range=3\n").is_err());
    }

    #[test]
    fn config_round_trips() {
        let config = SimConfig {
            block_interval_lambda: 17.25,
            txgen_delay_range: (0.5, 3.125),
            rng_seed: u64::MAX,
            random_access_variant: RandomAccessVariant::Begin,
            ..SimConfig::default()
        };
        assert_eq!(parse_config(&write_config(&config)).unwrap(), config);
    }

    fn arb_topology() -> impl proptest::strategy::Strategy<Value = Topology> {
        (1usize..12).prop_flat_map(|n| {
            let powers = prop::collection::vec(0.0f64..1.0, n);
            let malicious = prop::collection::vec(any::<bool>(), n);
            let links = prop::collection::vec((0..n, 0..n, 0u64..10_000), 0..20);
            (powers, malicious, links).prop_map(|(powers, malicious, links)| Topology {
                nodes: powers
                    .into_iter()
                    .zip(malicious)
                    .enumerate()
                    .map(|(i, (p, m))| NodeSpec {
                        miner_id: i,
                        mining_power: p,
                        strategy: if m {
                            crate::model::Strategy::MaliciousMaxFee
                        } else {
                            crate::model::Strategy::HonestRandom
                        },
                    })
                    .collect(),
                links: links.into_iter().map(|(a, b, d)| Link::new(a, b, d)).collect(),
            })
        })
    }

    proptest! {
        #[test]
        fn topology_round_trips(topo in arb_topology()) {
            prop_assert_eq!(parse_topology(&write_topology(&topo)).unwrap(), topo);
        }
    }
}
