//! Summaries and comparisons over metrics streams.
//!
//! Everything here is a pure function of parsed [`MetricsRecord`]s, so a
//! summary can always be replayed from the metrics files alone and two
//! replays of the same files are identical.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CoclrError, Result};
use crate::metrics::{read_metrics, MetricsRecord};

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite metric value"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Final-value summary of one run: for every metric, the last value each seed
/// reported, keyed by metric name then seed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub run: String,
    /// metric name -> (seed -> final value), ordered for stable rendering.
    pub finals: BTreeMap<String, BTreeMap<u64, f64>>,
}

impl RunSummary {
    /// Fold a record stream. The last record wins per (metric, seed), so
    /// feeding epoch-ordered streams yields end-of-run values.
    pub fn from_records(run: &str, records: &[MetricsRecord]) -> Self {
        let mut finals: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
        for r in records {
            if r.run == run {
                finals
                    .entry(r.metric.clone())
                    .or_default()
                    .insert(r.seed, r.value);
            }
        }
        Self {
            run: run.to_string(),
            finals,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self
            .finals
            .values()
            .flat_map(|per_seed| per_seed.keys().copied())
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
    }

    /// Median of a metric's final values across seeds.
    pub fn median_of(&self, metric: &str) -> Option<f64> {
        let per_seed = self.finals.get(metric)?;
        if per_seed.is_empty() {
            return None;
        }
        let values: Vec<f64> = per_seed.values().copied().collect();
        Some(median(&values))
    }
}

/// Load a run directory produced by the runner: reads `seed*/metrics.log`
/// under `dir` and folds them into one summary. The run tag is the directory
/// name.
pub fn load_run_summary(dir: &Path) -> Result<RunSummary> {
    let tag = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if !dir.is_dir() {
        return Err(CoclrError::InvalidArgument(format!(
            "no run directory for tag `{tag}` at {}",
            dir.display()
        )));
    }
    let mut records = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .map(|n| n.to_string_lossy().starts_with("seed"))
                    .unwrap_or(false)
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CoclrError::InvalidArgument(format!(
            "run directory {} has no seed subdirectories",
            dir.display()
        )));
    }
    for seed_dir in entries {
        let metrics = seed_dir.join("metrics.log");
        if metrics.is_file() {
            records.extend(read_metrics(&metrics)?);
        }
    }
    let run = records
        .first()
        .map(|r| r.run.clone())
        .unwrap_or(tag);
    Ok(RunSummary::from_records(&run, &records))
}

/// Comparison of one metric between two runs on a matched seed set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricComparison {
    pub metric: String,
    pub baseline_median: f64,
    pub candidate_median: f64,
    /// candidate − baseline per seed, in ascending seed order.
    pub deltas: Vec<(u64, f64)>,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Two-sided exact binomial sign-test p-value over the non-tied seeds
    /// (1.0 when every seed ties).
    pub sign_test_p: f64,
}

/// Two-sided exact binomial sign test for `wins` successes in `n` non-tied
/// trials under p = 1/2.
fn sign_test(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    // C(n, i) / 2^n summed over the tail at least as extreme as `wins`.
    let tail = wins.min(n - wins);
    let mut p = 0.0;
    for i in 0..=tail {
        let mut c = 1.0;
        for j in 0..i {
            c = c * (n - j) as f64 / (j + 1) as f64;
        }
        p += c / (2f64).powi(n as i32);
    }
    (2.0 * p).min(1.0)
}

/// Per-metric comparison of two run summaries. Requires identical seed sets;
/// compares every metric present in both runs.
pub fn compare_runs(baseline: &RunSummary, candidate: &RunSummary) -> Result<Vec<MetricComparison>> {
    let seeds_b = baseline.seeds();
    let seeds_c = candidate.seeds();
    if seeds_b != seeds_c {
        return Err(CoclrError::InvalidArgument(format!(
            "mismatched seeds: baseline `{}` has {:?}, candidate `{}` has {:?}",
            baseline.run, seeds_b, candidate.run, seeds_c
        )));
    }
    let mut comparisons = Vec::new();
    for (metric, base_values) in &baseline.finals {
        let Some(cand_values) = candidate.finals.get(metric) else {
            continue;
        };
        let mut deltas = Vec::new();
        let (mut wins, mut losses, mut ties) = (0usize, 0usize, 0usize);
        let mut shared = true;
        for &seed in &seeds_b {
            match (base_values.get(&seed), cand_values.get(&seed)) {
                (Some(b), Some(c)) => {
                    let d = c - b;
                    deltas.push((seed, d));
                    if d > 0.0 {
                        wins += 1;
                    } else if d < 0.0 {
                        losses += 1;
                    } else {
                        ties += 1;
                    }
                }
                _ => shared = false,
            }
        }
        if !shared || deltas.is_empty() {
            continue;
        }
        let base_med: Vec<f64> = base_values.values().copied().collect();
        let cand_med: Vec<f64> = cand_values.values().copied().collect();
        comparisons.push(MetricComparison {
            metric: metric.clone(),
            baseline_median: median(&base_med),
            candidate_median: median(&cand_med),
            deltas,
            wins,
            losses,
            ties,
            sign_test_p: sign_test(wins, wins + losses),
        });
    }
    Ok(comparisons)
}

/// Render a method-vs-method table: per-metric medians for baseline and
/// candidate, median delta, win/loss/tie counts, and the sign-test p-value.
pub fn render_comparison(
    baseline_tag: &str,
    candidate_tag: &str,
    comparisons: &[MetricComparison],
) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<24} {:>12} {:>12} {:>9} {:>7} {:>8}\n",
        "metric", baseline_tag, candidate_tag, "delta", "w/l/t", "sign-p"
    ));
    for c in comparisons {
        let delta: Vec<f64> = c.deltas.iter().map(|(_, d)| *d).collect();
        s.push_str(&format!(
            "{:<24} {:>12.4} {:>12.4} {:>+9.4} {:>7} {:>8.3}\n",
            c.metric,
            c.baseline_median,
            c.candidate_median,
            median(&delta),
            format!("{}/{}/{}", c.wins, c.losses, c.ties),
            c.sign_test_p
        ));
    }
    s
}

/// Render a single run's final metrics: one row per metric, per-seed values
/// and the median. Pure function of the summary.
pub fn render_run_table(summary: &RunSummary) -> String {
    let seeds = summary.seeds();
    let mut s = String::new();
    s.push_str(&format!("{:<24}", "metric"));
    for seed in &seeds {
        s.push_str(&format!(" {:>9}", format!("seed{seed}")));
    }
    s.push_str(&format!(" {:>9}\n", "median"));
    for (metric, per_seed) in &summary.finals {
        s.push_str(&format!("{metric:<24}"));
        for seed in &seeds {
            match per_seed.get(seed) {
                Some(v) => s.push_str(&format!(" {v:>9.4}")),
                None => s.push_str(&format!(" {:>9}", "-")),
            }
        }
        let values: Vec<f64> = per_seed.values().copied().collect();
        s.push_str(&format!(" {:>9.4}\n", median(&values)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(run: &str, seed: u64, epoch: usize, metric: &str, value: f64) -> MetricsRecord {
        MetricsRecord {
            run: run.into(),
            seed,
            stage: 0,
            epoch,
            metric: metric.into(),
            value,
            wall_clock: 0.0,
        }
    }

    #[test]
    fn median_handles_odd_even_and_order() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn last_record_per_seed_wins() {
        let records = vec![
            record("r", 0, 1, "probe1", 0.2),
            record("r", 0, 9, "probe1", 0.5),
            record("r", 1, 9, "probe1", 0.3),
            record("other", 1, 9, "probe1", 0.9),
        ];
        let summary = RunSummary::from_records("r", &records);
        assert_eq!(summary.finals["probe1"][&0], 0.5);
        assert_eq!(summary.median_of("probe1"), Some(0.4));
        assert_eq!(summary.seeds(), vec![0, 1]);
    }

    #[test]
    fn identical_runs_compare_to_all_zero_deltas() {
        let records: Vec<MetricsRecord> = (0..5)
            .map(|s| record("a", s, 0, "probe1", 0.1 * s as f64))
            .collect();
        let a = RunSummary::from_records("a", &records);
        let comparisons = compare_runs(&a, &a).unwrap();
        assert_eq!(comparisons.len(), 1);
        let c = &comparisons[0];
        assert!(c.deltas.iter().all(|(_, d)| *d == 0.0));
        assert_eq!((c.wins, c.losses, c.ties), (0, 0, 5));
        assert_eq!(c.sign_test_p, 1.0);
    }

    #[test]
    fn mismatched_seed_sets_error() {
        let a = RunSummary::from_records("a", &[record("a", 0, 0, "m", 1.0)]);
        let b = RunSummary::from_records(
            "b",
            &[record("b", 0, 0, "m", 1.0), record("b", 1, 0, "m", 2.0)],
        );
        let err = compare_runs(&a, &b).unwrap_err().to_string();
        assert!(err.contains("mismatched seeds"), "{err}");
    }

    #[test]
    fn sign_test_matches_hand_binomial() {
        // 5 wins of 5: 2 * (1/32), one-sided tail only has the extreme point.
        assert!((sign_test(5, 5) - 2.0 / 32.0).abs() < 1e-12);
        // 4 of 5: 2 * (C(5,0) + C(5,1)) / 32 = 12/32.
        assert!((sign_test(4, 5) - 12.0 / 32.0).abs() < 1e-12);
        // Balanced splits saturate at 1.
        assert_eq!(sign_test(2, 4), 1.0);
        assert_eq!(sign_test(0, 0), 1.0);
    }

    #[test]
    fn comparison_counts_wins_losses_and_p() {
        let base: Vec<MetricsRecord> =
            (0..5).map(|s| record("a", s, 0, "m", 0.0)).collect();
        let cand: Vec<MetricsRecord> = (0..5)
            .map(|s| record("b", s, 0, "m", if s < 4 { 1.0 } else { -1.0 }))
            .collect();
        let a = RunSummary::from_records("a", &base);
        let b = RunSummary::from_records("b", &cand);
        let c = &compare_runs(&a, &b).unwrap()[0];
        assert_eq!((c.wins, c.losses, c.ties), (4, 1, 0));
        assert!((c.sign_test_p - 12.0 / 32.0).abs() < 1e-12);
        assert_eq!(c.candidate_median, 1.0);
    }

    #[test]
    fn rendering_is_deterministic_text() {
        let records = vec![
            record("a", 0, 0, "probe1", 0.25),
            record("a", 1, 0, "probe1", 0.35),
        ];
        let summary = RunSummary::from_records("a", &records);
        let table = render_run_table(&summary);
        assert_eq!(table, render_run_table(&summary));
        assert!(table.contains("probe1"));
        assert!(table.contains("0.3000"));
        let comparisons = compare_runs(&summary, &summary).unwrap();
        let rendered = render_comparison("a", "a", &comparisons);
        assert!(rendered.contains("sign-p"), "{rendered}");
    }
}
