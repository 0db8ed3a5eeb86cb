//! Run output files: `<prefix>.data.csv`, `<prefix>.meta`, `<prefix>.progress`.
//!
//! The data file has one row per included transaction:
//! `tx_id,tx_fee,block_id,height,miner_id`, preceded by a header row. Rows
//! are buffered per block and flushed when the block is complete, so a
//! crashed run leaves a file that ends on a block boundary.
//!
//! The metadata file is `key=value` text: a config echo written at run
//! start, one `miner=<id> <power> <strategy>` line per miner, and a trailer
//! (`status`, `blocks_mined`, `end_time`) appended when the run ends.

use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::formats::{apply_config_key, strip_comment, write_config, FormatError};
use crate::model::{BlockId, Fee, MinerId, NodeSpec, SimConfig, Strategy, TxId};

pub const DATA_HEADER: &str = "tx_id,tx_fee,block_id,height,miner_id";
pub const DATA_SUFFIX: &str = ".data.csv";
pub const META_SUFFIX: &str = ".meta";
pub const PROGRESS_SUFFIX: &str = ".progress";

/// The three files produced by one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub data: PathBuf,
    pub meta: PathBuf,
    pub progress: PathBuf,
}

impl OutputPaths {
    pub fn from_prefix(prefix: impl AsRef<Path>) -> Self {
        let prefix = prefix.as_ref().as_os_str().to_string_lossy().into_owned();
        Self {
            data: PathBuf::from(format!("{prefix}{DATA_SUFFIX}")),
            meta: PathBuf::from(format!("{prefix}{META_SUFFIX}")),
            progress: PathBuf::from(format!("{prefix}{PROGRESS_SUFFIX}")),
        }
    }

    /// Recovers the file set from a data file path ending in `.data.csv`.
    pub fn from_data_path(data: impl AsRef<Path>) -> Option<Self> {
        let data = data.as_ref().as_os_str().to_str()?;
        data.strip_suffix(DATA_SUFFIX).map(Self::from_prefix)
    }
}

/// One data-file row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRecord {
    pub tx_id: TxId,
    pub tx_fee: Fee,
    pub block_id: BlockId,
    pub height: u64,
    pub miner_id: MinerId,
}

impl fmt::Display for BlockRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.tx_id, self.tx_fee, self.block_id, self.height, self.miner_id
        )
    }
}

impl BlockRecord {
    pub fn parse(line: &str) -> Option<Self> {
        let mut it = line.trim_end_matches('\r').split(',');
        let rec = BlockRecord {
            tx_id: it.next()?.parse().ok()?,
            tx_fee: it.next()?.parse().ok()?,
            block_id: it.next()?.parse().ok()?,
            height: it.next()?.parse().ok()?,
            miner_id: it.next()?.parse().ok()?,
        };
        it.next().is_none().then_some(rec)
    }
}

/// Streams data rows, one flush per block.
pub struct DataWriter<W: Write> {
    sink: W,
    pending: Vec<u8>,
}

impl<W: Write> DataWriter<W> {
    pub fn new(mut sink: W) -> io::Result<Self> {
        writeln!(sink, "{DATA_HEADER}")?;
        sink.flush()?;
        Ok(Self {
            sink,
            pending: Vec::with_capacity(4096),
        })
    }

    pub fn write_row(&mut self, record: &BlockRecord) {
        // Writing into a Vec cannot fail.
        let _ = writeln!(self.pending, "{record}");
    }

    /// Writes the buffered rows of the current block and flushes the sink.
    pub fn finish_block(&mut self) -> io::Result<()> {
        self.sink.write_all(&self.pending)?;
        self.pending.clear();
        self.sink.flush()
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.finish_block()?;
        Ok(self.sink)
    }
}

impl DataWriter<File> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Self::new(File::create(path)?)
    }
}

/// Writes a single row without buffering.
pub fn write_data_row<W: Write>(sink: &mut W, record: &BlockRecord) -> io::Result<()> {
    writeln!(sink, "{record}")
}

/// Human-readable progress log, optionally mirrored to standard output.
pub struct ProgressLog {
    sink: Option<BufWriter<File>>,
    echo: bool,
    started: Instant,
}

impl ProgressLog {
    pub fn create(path: &Path, echo: bool) -> io::Result<Self> {
        Ok(Self {
            sink: Some(BufWriter::new(File::create(path)?)),
            echo,
            started: Instant::now(),
        })
    }

    /// A log that only writes to stdout (or nowhere).
    pub fn stdout_only(echo: bool) -> Self {
        Self {
            sink: None,
            echo,
            started: Instant::now(),
        }
    }

    pub fn elapsed_secs(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Writes each line of `message` with a wall-clock offset prefix.
    pub fn write_progress(&mut self, message: &str) -> io::Result<()> {
        let stamp = format!("[{:>10.3}s]", self.elapsed_secs());
        for line in message.lines() {
            if let Some(sink) = &mut self.sink {
                writeln!(sink, "{stamp} {line}")?;
            }
            if self.echo {
                println!("{stamp} {line}");
            }
        }
        if let Some(sink) = &mut self.sink {
            sink.flush()?;
        }
        Ok(())
    }

    pub fn write_duration(&mut self) -> io::Result<()> {
        let secs = self.elapsed_secs();
        self.write_progress(&format!("total duration: {secs:.3} s"))
    }
}

/// Final state of a run, appended to the metadata file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrailer {
    pub status: RunStatus,
    pub blocks_mined: u64,
    /// Simulation time of the last mined block, in seconds.
    pub end_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Complete,
    Aborted,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Complete => "complete",
            RunStatus::Aborted => "aborted",
        }
    }
}

/// Everything needed to re-run a simulation and to analyze its data file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub simulator_version: String,
    pub config: SimConfig,
    pub node_count: usize,
    pub link_count: usize,
    pub miners: Vec<NodeSpec>,
    pub trailer: Option<RunTrailer>,
}

impl RunMetadata {
    pub fn seed(&self) -> u64 {
        self.config.rng_seed
    }

    pub fn miner(&self, id: MinerId) -> Option<&NodeSpec> {
        self.miners.get(id).filter(|m| m.miner_id == id)
    }

    /// Header section, written once at run start.
    pub fn header_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "simulator_version={}", self.simulator_version);
        out.push_str(&write_config(&self.config));
        let _ = writeln!(out, "node_count={}", self.node_count);
        let _ = writeln!(out, "link_count={}", self.link_count);
        for m in &self.miners {
            let _ = writeln!(out, "miner={} {} {}", m.miner_id, m.mining_power, m.strategy);
        }
        out
    }

    pub fn trailer_text(trailer: &RunTrailer) -> String {
        format!(
            "status={}\nblocks_mined={}\nend_time={}\n",
            trailer.status.as_str(),
            trailer.blocks_mined,
            trailer.end_time
        )
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let err = |line: usize, message: String| FormatError::Parse { line, message };
        let mut config = SimConfig::default();
        let mut version = None;
        let mut node_count = None;
        let mut link_count = None;
        let mut miners = Vec::new();
        let mut status = None;
        let mut blocks_mined = None;
        let mut end_time = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, "expected key=value".into()))?;
            let value = value.trim();
            let bad = || err(line_no, format!("invalid value for {key}: `{value}`"));
            match key.trim() {
                "simulator_version" => version = Some(value.to_string()),
                "node_count" => node_count = Some(value.parse().map_err(|_| bad())?),
                "link_count" => link_count = Some(value.parse().map_err(|_| bad())?),
                "miner" => {
                    let mut t = value.split_whitespace();
                    let miner_id = t.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                    let mining_power = t.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                    let strategy: Strategy =
                        t.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                    miners.push(NodeSpec {
                        miner_id,
                        mining_power,
                        strategy,
                    });
                }
                "status" => {
                    status = Some(match value {
                        "complete" => RunStatus::Complete,
                        "aborted" => RunStatus::Aborted,
                        _ => return Err(bad()),
                    })
                }
                "blocks_mined" => blocks_mined = Some(value.parse().map_err(|_| bad())?),
                "end_time" => end_time = Some(value.parse().map_err(|_| bad())?),
                other => {
                    if !apply_config_key(&mut config, other, value, line_no)? {
                        return Err(err(line_no, format!("unknown key `{other}`")));
                    }
                }
            }
        }

        let missing = |what: &str| err(0, format!("metadata lacks `{what}`"));
        let trailer = match (status, blocks_mined, end_time) {
            (Some(status), Some(blocks_mined), Some(end_time)) => Some(RunTrailer {
                status,
                blocks_mined,
                end_time,
            }),
            (None, None, None) => None,
            _ => return Err(missing("complete trailer")),
        };
        Ok(Self {
            simulator_version: version.ok_or_else(|| missing("simulator_version"))?,
            config,
            node_count: node_count.ok_or_else(|| missing("node_count"))?,
            link_count: link_count.ok_or_else(|| missing("link_count"))?,
            miners,
            trailer,
        })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::parse(&text)
    }
}

impl fmt::Display for RunMetadata {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.header_text())?;
        if let Some(trailer) = &self.trailer {
            f.write_str(&Self::trailer_text(trailer))?;
        }
        Ok(())
    }
}

/// Writes the metadata header section.
pub fn write_metadata<W: Write>(sink: &mut W, meta: &RunMetadata) -> io::Result<()> {
    sink.write_all(meta.header_text().as_bytes())?;
    sink.flush()
}

pub fn write_trailer<W: Write>(sink: &mut W, trailer: &RunTrailer) -> io::Result<()> {
    sink.write_all(RunMetadata::trailer_text(trailer).as_bytes())?;
    sink.flush()
}

/// Per-miner summary line used in mempool snapshots:
/// `miner_id: count, min_fee, max_fee` (fees are `-` for an empty pool).
pub fn snapshot_line(miner: MinerId, count: usize, min_fee: Option<Fee>, max_fee: Option<Fee>) -> String {
    let show = |f: Option<Fee>| f.map_or_else(|| "-".to_string(), |v| v.to_string());
    format!("{miner}: {count}, {}, {}", show(min_fee), show(max_fee))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RandomAccessVariant;

    #[test]
    fn row_formatting() {
        let rec = BlockRecord {
            tx_id: 7,
            tx_fee: 42,
            block_id: 0,
            height: 1,
            miner_id: 3,
        };
        assert_eq!(rec.to_string(), "7,42,0,1,3");
        assert_eq!(BlockRecord::parse("7,42,0,1,3"), Some(rec));
        assert_eq!(BlockRecord::parse("7,42,0,1"), None);
        assert_eq!(BlockRecord::parse("7,42,0,1,3,9"), None);
        let mut buf = Vec::new();
        write_data_row(&mut buf, &rec).unwrap();
        assert_eq!(buf, b"7,42,0,1,3\n");
    }

    #[test]
    fn data_writer_buffers_until_block_end() {
        let mut writer = DataWriter::new(Vec::new()).unwrap();
        let rec = BlockRecord {
            tx_id: 1,
            tx_fee: 2,
            block_id: 0,
            height: 1,
            miner_id: 0,
        };
        writer.write_row(&rec);
        assert_eq!(writer.sink, format!("{DATA_HEADER}\n").into_bytes());
        writer.finish_block().unwrap();
        let out = String::from_utf8(writer.into_inner().unwrap()).unwrap();
        assert_eq!(out, format!("{DATA_HEADER}\n1,2,0,1,0\n"));
    }

    #[test]
    fn paths_follow_prefix_convention() {
        let paths = OutputPaths::from_prefix("/tmp/run7");
        assert_eq!(paths.data, PathBuf::from("/tmp/run7.data.csv"));
        assert_eq!(OutputPaths::from_data_path(&paths.data), Some(paths));
        assert_eq!(OutputPaths::from_data_path("/tmp/run7.csv"), None);
    }

    fn sample_meta() -> RunMetadata {
        RunMetadata {
            simulator_version: "0.1.0".into(),
            config: SimConfig {
                block_interval_lambda: 12.5,
                random_access_variant: RandomAccessVariant::EqualKey,
                ..SimConfig::default()
            },
            node_count: 3,
            link_count: 2,
            miners: vec![
                NodeSpec {
                    miner_id: 0,
                    mining_power: 0.2,
                    strategy: Strategy::MaliciousMaxFee,
                },
                NodeSpec {
                    miner_id: 1,
                    mining_power: 0.4,
                    strategy: Strategy::HonestRandom,
                },
                NodeSpec {
                    miner_id: 2,
                    mining_power: 0.4,
                    strategy: Strategy::HonestRandom,
                },
            ],
            trailer: None,
        }
    }

    #[test]
    fn metadata_round_trips() {
        let mut meta = sample_meta();
        assert_eq!(RunMetadata::parse(&meta.to_string()).unwrap(), meta);
        meta.trailer = Some(RunTrailer {
            status: RunStatus::Complete,
            blocks_mined: 1000,
            end_time: 20_123.456_789,
        });
        assert_eq!(RunMetadata::parse(&meta.to_string()).unwrap(), meta);
    }

    #[test]
    fn metadata_rejects_partial_trailer() {
        let text = format!("{}status=complete\n", sample_meta().header_text());
        assert!(RunMetadata::parse(&text).is_err());
    }

    #[test]
    fn snapshot_line_format() {
        assert_eq!(snapshot_line(4, 2, Some(1), Some(9)), "4: 2, 1, 9");
        assert_eq!(snapshot_line(0, 0, None, None), "0: 0, -, -");
    }
}
