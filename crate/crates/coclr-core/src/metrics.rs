//! Metrics stream: append-only, line-delimited records with a stable field
//! order, trivially parseable from any language.
//!
//! One observation per line:
//!
//! ```text
//! v=1 run=benchmark seed=0 stage=2 epoch=35 metric=loss1 value=4.1320182 t=2.184
//! ```
//!
//! Fields appear in exactly this order on every line. `v` is the record
//! schema version, `t` is wall-clock seconds since the start of the seed's
//! run (written as `0.000` when timestamps are normalized for byte-identical
//! reruns). Values use the shortest decimal representation that parses back
//! to the identical float, so a metrics file replays into exactly the numbers
//! the run produced.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{CoclrError, Result};

/// Version of the metrics record schema this build reads and writes.
pub const METRICS_SCHEMA_VERSION: u64 = 1;

/// One observation from one seed's run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    /// Run identifier (the experiment name).
    pub run: String,
    pub seed: u64,
    /// Stage index within the plan; final-evaluation records use the stage
    /// count (one past the last training stage).
    pub stage: usize,
    /// Global epoch the observation belongs to.
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
    /// Wall-clock seconds since the seed's run began; 0.0 when normalized.
    pub wall_clock: f64,
}

impl MetricsRecord {
    /// Render in the stable field order. Metric names must be bare tokens.
    fn to_line(&self) -> String {
        format!(
            "v={} run={} seed={} stage={} epoch={} metric={} value={} t={:.3}",
            METRICS_SCHEMA_VERSION,
            self.run,
            self.seed,
            self.stage,
            self.epoch,
            self.metric,
            self.value,
            self.wall_clock
        )
    }

    /// Parse one line. Strict about field order and count.
    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(' ').collect();
        const NAMES: [&str; 8] = ["v", "run", "seed", "stage", "epoch", "metric", "value", "t"];
        if fields.len() != NAMES.len() {
            return Err(CoclrError::InvalidArgument(format!(
                "metrics: expected {} fields, got {} in `{line}`",
                NAMES.len(),
                fields.len()
            )));
        }
        let mut values = [""; 8];
        for (i, (field, name)) in fields.iter().zip(NAMES.iter()).enumerate() {
            let Some((k, v)) = field.split_once('=') else {
                return Err(CoclrError::InvalidArgument(format!(
                    "metrics: field {i} `{field}` is not key=value in `{line}`"
                )));
            };
            if k != *name {
                return Err(CoclrError::InvalidArgument(format!(
                    "metrics: field {i} is `{k}`, expected `{name}` in `{line}`"
                )));
            }
            values[i] = v;
        }
        let version: u64 = values[0]
            .parse()
            .map_err(|_| CoclrError::InvalidArgument(format!("metrics: bad version in `{line}`")))?;
        if version != METRICS_SCHEMA_VERSION {
            return Err(CoclrError::InvalidArgument(format!(
                "metrics: record version {version}, this build reads {METRICS_SCHEMA_VERSION}"
            )));
        }
        fn parse_field<T: std::str::FromStr>(s: &str, what: &str, line: &str) -> Result<T> {
            s.parse().map_err(|_| {
                CoclrError::InvalidArgument(format!("metrics: bad {what} in `{line}`"))
            })
        }
        Ok(Self {
            run: values[1].to_string(),
            seed: parse_field(values[2], "seed", line)?,
            stage: parse_field(values[3], "stage", line)?,
            epoch: parse_field(values[4], "epoch", line)?,
            metric: values[5].to_string(),
            value: parse_field(values[6], "value", line)?,
            wall_clock: parse_field(values[7], "t", line)?,
        })
    }
}

/// Append-only writer for one seed's metrics stream. Single-owner: create it
/// in the thread that runs the seed and drop it when the run ends.
pub struct MetricsWriter {
    out: BufWriter<File>,
    run: String,
    seed: u64,
    started: std::time::Instant,
    /// When set, every record is written with `t=0.000` so reruns of the same
    /// config produce byte-identical files.
    normalize_timestamps: bool,
}

impl MetricsWriter {
    pub fn create(
        path: &Path,
        run: &str,
        seed: u64,
        normalize_timestamps: bool,
    ) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CoclrError::CorruptFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        Ok(Self {
            out: BufWriter::new(file),
            run: run.to_string(),
            seed,
            started: std::time::Instant::now(),
            normalize_timestamps,
        })
    }

    /// Append one observation.
    pub fn write(&mut self, stage: usize, epoch: usize, metric: &str, value: f64) -> Result<()> {
        let wall_clock = if self.normalize_timestamps {
            0.0
        } else {
            self.started.elapsed().as_secs_f64()
        };
        let record = MetricsRecord {
            run: self.run.clone(),
            seed: self.seed,
            stage,
            epoch,
            metric: metric.to_string(),
            value,
            wall_clock,
        };
        writeln!(self.out, "{}", record.to_line())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Read a whole metrics file back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoclrError::CorruptFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRecord::parse_line)
        .collect()
}
