//! Experiment execution: runs every seed of an [`ExperimentConfig`], streams
//! metrics, saves stage-boundary and final checkpoints, and renders summary
//! tables. Seeds execute concurrently; each owns its state, RNG streams, and
//! output subdirectory, so concurrency never changes any file's bytes.
//!
//! Output layout for a config named `bench` with seeds 0 and 1:
//!
//! ```text
//! <out>/bench/
//!   config.cfg            exact snapshot of the executed config
//!   summary.txt           per-seed finals and medians (pure function of logs)
//!   seed0/metrics.log     line-delimited metric records
//!   seed0/stage0_query1.bin, stage0_query2.bin, ...   per-stage checkpoints
//!   seed0/final_query1.bin, final_query2.bin, final_key1.bin, final_key2.bin
//!   seed0/plots/losses.svg, probes.svg              (with plots enabled)
//!   seed1/...
//! ```
//!
//! Dataset generation for seed `s` uses RNG seed `1000 + s`; the training RNG
//! master seed is `s` itself, so data and training randomness never share a
//! stream.

use std::path::{Path, PathBuf};

use crate::checkpoint::{load_params, save_params};
use crate::config::{self, ExperimentConfig};
use crate::cotrain::{
    probe_view, retrieval_view, run_plan_observed, CoTrainState, EpochRecord, RunObserver,
    ViewSide,
};
use crate::error::{CoclrError, Result};
use crate::eval::{
    linear_probe, retrieval, retrieval_from_sim, two_stream_fuse, ProbeHyper, RetrievalResult,
};
use crate::metrics::MetricsWriter;
use crate::numerics::{Matrix, Rng};
use crate::plot::{line_chart, Series};
use crate::summary::{load_run_summary, render_run_table, RunSummary};
use crate::synthdata::{generate, TwoViewDataset};

/// Offset between a run's seed and its dataset RNG seed.
pub const DATASET_SEED_OFFSET: u64 = 1000;

/// Cutoffs reported by retrieval metrics.
pub const RETRIEVAL_KS: [usize; 4] = [1, 5, 10, 20];

/// Runner toggles, mapped one-to-one onto CLI flags.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Write `t=0.000` on every metric record so identical configs produce
    /// byte-identical metrics files.
    pub normalize_timestamps: bool,
    /// Emit SVG training-curve plots per seed.
    pub plots: bool,
}

/// What a completed run leaves behind.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub summary: RunSummary,
    /// Rendered final-metrics table (also written to `summary.txt`).
    pub table: String,
}

/// The directory a config's outputs live in.
pub fn run_dir(config: &ExperimentConfig) -> PathBuf {
    config.out.join(&config.name)
}

/// Observer that streams epoch records into a metrics file and saves
/// stage-boundary checkpoints of both query encoders.
struct MetricsObserver<'a> {
    writer: &'a mut MetricsWriter,
    seed_dir: &'a Path,
}

impl RunObserver for MetricsObserver<'_> {
    fn on_epoch(&mut self, r: &EpochRecord) -> Result<()> {
        let fields: [(&str, Option<f64>); 6] = [
            ("loss1", r.loss1),
            ("loss2", r.loss2),
            ("mask_precision", r.mask_precision),
            ("probe1", r.probe1),
            ("probe2", r.probe2),
            ("retrieval1", r.retrieval1),
        ];
        for (name, value) in fields {
            if let Some(v) = value {
                self.writer.write(r.stage_idx, r.global_epoch, name, v)?;
            }
        }
        Ok(())
    }

    fn on_stage_end(&mut self, stage_idx: usize, state: &CoTrainState) -> Result<()> {
        save_params(
            &self.seed_dir.join(format!("stage{stage_idx}_query1.bin")),
            &state.pair(ViewSide::One).query,
        )?;
        save_params(
            &self.seed_dir.join(format!("stage{stage_idx}_query2.bin")),
            &state.pair(ViewSide::Two).query,
        )?;
        Ok(())
    }
}

fn push_retrieval(finals: &mut Vec<(String, f64)>, tag: &str, r: &RetrievalResult) {
    for (i, k) in RETRIEVAL_KS.iter().enumerate() {
        finals.push((format!("r{k}_{tag}"), r.recalls[i]));
    }
}

/// Final evaluation of a trained state: probe accuracy per view, R@k per view
/// and fused, and — when the run mined — mined-positive precision at the
/// start and end of the mining stages. Returns (name, value) pairs in a
/// stable order; these names are the contract consumed by summaries.
pub fn final_eval(
    state: &CoTrainState,
    data: &TwoViewDataset,
    probe: &ProbeHyper,
    history: &[EpochRecord],
) -> Result<Vec<(String, f64)>> {
    let mut finals = Vec::new();
    finals.push((
        "probe1".to_string(),
        probe_view(state, data, ViewSide::One, probe)?.accuracy,
    ));
    finals.push((
        "probe2".to_string(),
        probe_view(state, data, ViewSide::Two, probe)?.accuracy,
    ));
    let r1 = retrieval_view(state, data, ViewSide::One, &RETRIEVAL_KS)?;
    let r2 = retrieval_view(state, data, ViewSide::Two, &RETRIEVAL_KS)?;
    push_retrieval(&mut finals, "view1", &r1);
    push_retrieval(&mut finals, "view2", &r2);
    let fused = {
        let g1 = state.features(data, ViewSide::One, &data.train_idx)?;
        let q1 = state.features(data, ViewSide::One, &data.test_idx)?;
        let g2 = state.features(data, ViewSide::Two, &data.train_idx)?;
        let q2 = state.features(data, ViewSide::Two, &data.test_idx)?;
        let sim = two_stream_fuse(&q1.matmul_transposed(&g1)?, &q2.matmul_transposed(&g2)?)?;
        retrieval_from_sim(
            &sim,
            &data.gather_labels(&data.test_idx),
            &data.gather_labels(&data.train_idx),
            &RETRIEVAL_KS,
        )?
    };
    push_retrieval(&mut finals, "fused", &fused);
    let mined: Vec<f64> = history.iter().filter_map(|r| r.mask_precision).collect();
    if let (Some(first), Some(last)) = (mined.first(), mined.last()) {
        finals.push(("precision_start".to_string(), *first));
        finals.push(("precision_end".to_string(), *last));
    }
    Ok(finals)
}

fn write_plots(seed_dir: &Path, history: &[EpochRecord]) -> Result<()> {
    let plots = seed_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let curve = |pick: fn(&EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        history
            .iter()
            .filter_map(|r| pick(r).map(|v| (r.global_epoch as f64, v)))
            .collect()
    };
    let losses = vec![
        Series {
            name: "loss1".into(),
            points: curve(|r| r.loss1),
        },
        Series {
            name: "loss2".into(),
            points: curve(|r| r.loss2),
        },
    ];
    std::fs::write(
        plots.join("losses.svg"),
        line_chart("training loss", "epoch", "loss", &losses),
    )?;
    let probes = vec![
        Series {
            name: "probe1".into(),
            points: curve(|r| r.probe1),
        },
        Series {
            name: "probe2".into(),
            points: curve(|r| r.probe2),
        },
        Series {
            name: "retrieval1".into(),
            points: curve(|r| r.retrieval1),
        },
        Series {
            name: "mask_precision".into(),
            points: curve(|r| r.mask_precision),
        },
    ];
    std::fs::write(
        plots.join("probes.svg"),
        line_chart("evaluation curves", "epoch", "accuracy", &probes),
    )?;
    Ok(())
}

/// Run one seed end to end. On failure after the metrics file exists, an
/// error record is appended and partial outputs are retained.
fn run_one_seed(config: &ExperimentConfig, seed: u64, options: RunOptions) -> Result<()> {
    let seed_dir = run_dir(config).join(format!("seed{seed}"));
    std::fs::create_dir_all(&seed_dir)?;
    // The writer is append-only; a rerun starts a fresh log rather than
    // appending to a stale one.
    let log_path = seed_dir.join("metrics.log");
    if log_path.exists() {
        std::fs::remove_file(&log_path)?;
    }
    let mut writer = MetricsWriter::create(
        &log_path,
        &config.name,
        seed,
        options.normalize_timestamps,
    )?;
    let outcome = (|| -> Result<()> {
        let data = generate(&config.dataset, &mut Rng::new(DATASET_SEED_OFFSET + seed))?;
        let mut plan = config.plan.clone();
        plan.seed = seed;
        let (state, history) = {
            let mut observer = MetricsObserver {
                writer: &mut writer,
                seed_dir: &seed_dir,
            };
            run_plan_observed(&plan, &data, &mut observer)?
        };
        let total_epochs: usize = plan.stages.iter().map(|s| s.epochs).sum();
        let finals = final_eval(&state, &data, &plan.probe, &history)?;
        for (name, value) in &finals {
            writer.write(plan.stages.len(), total_epochs, name, *value)?;
        }
        save_params(
            &seed_dir.join("final_query1.bin"),
            &state.pair(ViewSide::One).query,
        )?;
        save_params(
            &seed_dir.join("final_query2.bin"),
            &state.pair(ViewSide::Two).query,
        )?;
        save_params(
            &seed_dir.join("final_key1.bin"),
            &state.pair(ViewSide::One).key,
        )?;
        save_params(
            &seed_dir.join("final_key2.bin"),
            &state.pair(ViewSide::Two).key,
        )?;
        if options.plots {
            write_plots(&seed_dir, &history)?;
        }
        Ok(())
    })();
    if outcome.is_err() {
        // Error record: partial outputs stay on disk for postmortems.
        writer.write(0, 0, "run_error", 1.0).ok();
    }
    writer.flush()?;
    outcome
}

/// Execute every seed of a config (concurrently), then fold the metrics files
/// into a summary table. The summary is recomputed from the files rather than
/// carried over from memory, so `summary.txt` is guaranteed replayable.
pub fn run_experiment(config: &ExperimentConfig, options: RunOptions) -> Result<RunReport> {
    let mut unique = config.seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != config.seeds.len() {
        return Err(CoclrError::InvalidConfig(
            "seeds: duplicate seeds would share an output directory".into(),
        ));
    }
    let dir = run_dir(config);
    std::fs::create_dir_all(&dir)?;
    config::save(&dir.join("config.cfg"), config)?;

    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_one_seed(config, seed, options)))
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(r) => r,
                Err(_) => Err(CoclrError::InvalidArgument(
                    "a seed's worker thread panicked".into(),
                )),
            })
            .collect()
    });
    for (seed, result) in config.seeds.iter().zip(results) {
        result.map_err(|e| {
            CoclrError::InvalidArgument(format!("seed {seed} failed: {e}"))
        })?;
    }

    let summary = load_run_summary(&dir)?;
    let table = render_run_table(&summary);
    std::fs::write(dir.join("summary.txt"), &table)?;
    Ok(RunReport { dir, summary, table })
}

/// Run one config per value of a swept parameter. Each run gets its own
/// name-suffixed output directory; the joint table lands next to them.
pub fn run_sweep(
    config: &ExperimentConfig,
    param: &str,
    values: &[String],
    options: RunOptions,
) -> Result<(Vec<RunReport>, String)> {
    if values.is_empty() {
        return Err(CoclrError::InvalidArgument(
            "sweep: no values given".into(),
        ));
    }
    let mut reports = Vec::new();
    for value in values {
        let mut swept = config.clone();
        config::set_field(&mut swept, param, value)?;
        swept.name = format!(
            "{}_{}_{}",
            config.name,
            param.replace('.', "-"),
            value.replace(['.', '/', ','], "-")
        );
        reports.push(run_experiment(&swept, options)?);
    }
    let mut table = format!("sweep of {param} over {} values\n\n", values.len());
    for (value, report) in values.iter().zip(&reports) {
        table.push_str(&format!("=== {param} = {value} ===\n"));
        table.push_str(&report.table);
        table.push('\n');
    }
    let joint = config
        .out
        .join(format!(
            "{}_sweep_{}.txt",
            config.name,
            param.replace('.', "-")
        ));
    std::fs::write(&joint, &table)?;
    Ok((reports, table))
}

/// Re-evaluate a saved checkpoint pair against its config's dataset.
/// `seed_dir` must be a `seed<N>` directory produced by a run; `label`
/// selects which checkpoint (`final` or `stage<I>`). Returns the same
/// (name, value) pairs as the run's final evaluation, minus the
/// mining-precision entries (those require training history).
pub fn evaluate_checkpoint(
    config: &ExperimentConfig,
    seed_dir: &Path,
    label: &str,
) -> Result<Vec<(String, f64)>> {
    let dir_name = seed_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seed: u64 = dir_name
        .strip_prefix("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            CoclrError::InvalidArgument(format!(
                "checkpoint directory `{dir_name}` is not of the form seed<N>"
            ))
        })?;
    let q1 = load_params(&seed_dir.join(format!("{label}_query1.bin")))?;
    let q2 = load_params(&seed_dir.join(format!("{label}_query2.bin")))?;
    let data = generate(&config.dataset, &mut Rng::new(DATASET_SEED_OFFSET + seed))?;
    let layers = config.plan.backbone_layers();

    let feats = |params: &crate::encoder::MlpParams, view: &Matrix, idx: &[usize]| -> Result<Matrix> {
        let x = TwoViewDataset::gather(view, idx);
        params.forward_features(&x, layers)
    };
    let mut finals = Vec::new();
    let train_labels = data.gather_labels(&data.train_idx);
    let test_labels = data.gather_labels(&data.test_idx);
    let (g1, q1f) = (
        feats(&q1, &data.view1, &data.train_idx)?,
        feats(&q1, &data.view1, &data.test_idx)?,
    );
    let (g2, q2f) = (
        feats(&q2, &data.view2, &data.train_idx)?,
        feats(&q2, &data.view2, &data.test_idx)?,
    );
    finals.push((
        "probe1".to_string(),
        linear_probe(&g1, &train_labels, &q1f, &test_labels, &config.plan.probe)?.accuracy,
    ));
    finals.push((
        "probe2".to_string(),
        linear_probe(&g2, &train_labels, &q2f, &test_labels, &config.plan.probe)?.accuracy,
    ));
    let r1 = retrieval(&q1f, &test_labels, &g1, &train_labels, &RETRIEVAL_KS)?;
    let r2 = retrieval(&q2f, &test_labels, &g2, &train_labels, &RETRIEVAL_KS)?;
    push_retrieval(&mut finals, "view1", &r1);
    push_retrieval(&mut finals, "view2", &r2);
    let sim = two_stream_fuse(&q1f.matmul_transposed(&g1)?, &q2f.matmul_transposed(&g2)?)?;
    let fused = retrieval_from_sim(&sim, &test_labels, &train_labels, &RETRIEVAL_KS)?;
    push_retrieval(&mut finals, "fused", &fused);
    Ok(finals)
}
