//! Experiment configuration: a flat key-path text format with typed values
//! and an explicit schema version.
//!
//! One `key = value` assignment per line, `#` starts a comment, blank lines
//! are ignored. Keys are dotted paths (`plan.aug1.sigma_aug`); values are
//! integers, reals, names, or comma-separated lists. The flat layout keeps
//! configs diff-friendly: every change is a one-line change.
//!
//! ```text
//! schema_version = 1
//! name = benchmark
//! out = runs/benchmark
//! seeds = 0,1,2,3,4
//! dataset.n_classes = 10
//! plan.stages = infonce:2:30,infonce:1:5,coclr:1:30,coclr:2:20,coclr:1:30
//! plan.k = 5
//! ```
//!
//! Parsing is strict: unknown keys, duplicate keys, malformed values, and
//! missing required fields are all errors that name the offending field path
//! (and line where applicable). `parse → serialize → parse` is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cotrain::{ActiveView, Alternation, LossTag, Stage, TrainPlan};
use crate::error::{CoclrError, Result};
use crate::synthdata::TwoViewSpec;

/// Version of the config schema this build reads and writes.
pub const CONFIG_SCHEMA_VERSION: u64 = 1;

/// A full experiment: dataset recipe, training plan, seed list, output root.
///
/// The plan's `seed` field is ignored by the runner, which re-seeds one run
/// per entry of `seeds`; dataset generation for seed `s` uses RNG seed
/// `1000 + s` so dataset and training streams never collide.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Run identifier: names the output subdirectory and tags metric records.
    pub name: String,
    pub dataset: TwoViewSpec,
    pub plan: TrainPlan,
    pub seeds: Vec<u64>,
    /// Output root; the run writes into `<out>/<name>/`.
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// The calibrated benchmark experiment for a given method name
    /// (convenience used by tests and shipped example configs).
    pub fn benchmark(name: &str, plan: TrainPlan) -> Self {
        Self {
            name: name.to_string(),
            dataset: TwoViewSpec::default(),
            plan,
            seeds: (0..5).collect(),
            out: PathBuf::from("runs"),
        }
    }
}

fn tag_name(tag: LossTag) -> &'static str {
    match tag {
        LossTag::InfoNce => "infonce",
        LossTag::UberNce => "ubernce",
        LossTag::Cmc => "cmc",
        LossTag::Coclr => "coclr",
    }
}

fn parse_tag(s: &str, path: &str) -> Result<LossTag> {
    match s {
        "infonce" => Ok(LossTag::InfoNce),
        "ubernce" => Ok(LossTag::UberNce),
        "cmc" => Ok(LossTag::Cmc),
        "coclr" => Ok(LossTag::Coclr),
        other => Err(CoclrError::InvalidConfig(format!(
            "{path}: unknown loss tag `{other}` (expected infonce|ubernce|cmc|coclr)"
        ))),
    }
}

fn view_name(view: ActiveView) -> &'static str {
    match view {
        ActiveView::One => "1",
        ActiveView::Two => "2",
        ActiveView::Both => "both",
    }
}

fn parse_view(s: &str, path: &str) -> Result<ActiveView> {
    match s {
        "1" => Ok(ActiveView::One),
        "2" => Ok(ActiveView::Two),
        "both" => Ok(ActiveView::Both),
        other => Err(CoclrError::InvalidConfig(format!(
            "{path}: unknown view `{other}` (expected 1|2|both)"
        ))),
    }
}

/// `tag:view:epochs` triples joined by commas.
fn stages_to_string(stages: &[Stage]) -> String {
    let mut s = String::new();
    for (i, st) in stages.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{}:{}:{}", tag_name(st.tag), view_name(st.view), st.epochs);
    }
    s
}

fn parse_stages(s: &str, path: &str) -> Result<Vec<Stage>> {
    let mut stages = Vec::new();
    for (i, part) in s.split(',').enumerate() {
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() != 3 {
            return Err(CoclrError::InvalidConfig(format!(
                "{path}: stage {i} `{part}` is not of the form tag:view:epochs"
            )));
        }
        let tag = parse_tag(fields[0], path)?;
        let view = parse_view(fields[1], path)?;
        let epochs: usize = fields[2].parse().map_err(|_| {
            CoclrError::InvalidConfig(format!(
                "{path}: stage {i} has invalid epoch count `{}`",
                fields[2]
            ))
        })?;
        stages.push(Stage::new(tag, view, epochs));
    }
    Ok(stages)
}

fn parse_usize(v: &str, path: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| CoclrError::InvalidConfig(format!("{path}: invalid integer `{v}`")))
}

fn parse_u64(v: &str, path: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| CoclrError::InvalidConfig(format!("{path}: invalid integer `{v}`")))
}

fn parse_f64(v: &str, path: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| CoclrError::InvalidConfig(format!("{path}: invalid real `{v}`")))?;
    if !x.is_finite() {
        return Err(CoclrError::InvalidConfig(format!(
            "{path}: non-finite real `{v}`"
        )));
    }
    Ok(x)
}

fn parse_usize_list(v: &str, path: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_usize(p.trim(), path)).collect()
}

fn parse_u64_list(v: &str, path: &str) -> Result<Vec<u64>> {
    v.split(',').map(|p| parse_u64(p.trim(), path)).collect()
}

fn join_list<T: std::fmt::Display>(xs: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

/// Every key the schema knows, in serialization order. Required keys must be
/// present in a parsed config; optional ones fall back to their documented
/// defaults.
const KEYS: &[(&str, bool)] = &[
    ("schema_version", true),
    ("name", true),
    ("out", true),
    ("seeds", true),
    ("dataset.n_classes", true),
    ("dataset.per_class", true),
    ("dataset.d1", true),
    ("dataset.d1_signal", true),
    ("dataset.d2", true),
    ("dataset.sigma_sig", true),
    ("dataset.sigma_nuis", true),
    ("dataset.sigma2", true),
    ("dataset.pair_correlation", true),
    ("dataset.train_fraction", true),
    ("plan.stages", true),
    ("plan.k", true),
    ("plan.tau", true),
    ("plan.momentum", true),
    ("plan.queue_capacity", true),
    ("plan.batch_size", true),
    ("plan.lr", true),
    ("plan.weight_decay", true),
    ("plan.alternation", true),
    ("plan.hidden", true),
    ("plan.projection", true),
    ("plan.aug1.sigma_aug", true),
    ("plan.aug1.dropout", true),
    ("plan.aug2.sigma_aug", true),
    ("plan.aug2.dropout", true),
    ("plan.eval_every", false),
    ("plan.probe.lr", false),
    ("plan.probe.steps", false),
    ("plan.probe.l2", false),
];

/// Apply one `key = value` assignment to a config under construction.
/// Returns an error naming the field path for unknown keys or bad values.
fn apply(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "schema_version" => {
            let v = parse_u64(value, key)?;
            if v != CONFIG_SCHEMA_VERSION {
                return Err(CoclrError::InvalidConfig(format!(
                    "schema_version: this build reads version {CONFIG_SCHEMA_VERSION}, file says {v}"
                )));
            }
        }
        "name" => {
            if value.is_empty() {
                return Err(CoclrError::InvalidConfig("name: must be non-empty".into()));
            }
            config.name = value.to_string();
        }
        "out" => config.out = PathBuf::from(value),
        "seeds" => {
            config.seeds = parse_u64_list(value, key)?;
            if config.seeds.is_empty() {
                return Err(CoclrError::InvalidConfig("seeds: list is empty".into()));
            }
        }
        "dataset.n_classes" => config.dataset.n_classes = parse_usize(value, key)?,
        "dataset.per_class" => config.dataset.per_class = parse_usize(value, key)?,
        "dataset.d1" => config.dataset.d1 = parse_usize(value, key)?,
        "dataset.d1_signal" => config.dataset.d1_signal = parse_usize(value, key)?,
        "dataset.d2" => config.dataset.d2 = parse_usize(value, key)?,
        "dataset.sigma_sig" => config.dataset.sigma_sig = parse_f64(value, key)?,
        "dataset.sigma_nuis" => config.dataset.sigma_nuis = parse_f64(value, key)?,
        "dataset.sigma2" => config.dataset.sigma2 = parse_f64(value, key)?,
        "dataset.pair_correlation" => config.dataset.pair_correlation = parse_f64(value, key)?,
        "dataset.train_fraction" => config.dataset.train_fraction = parse_f64(value, key)?,
        "plan.stages" => config.plan.stages = parse_stages(value, key)?,
        "plan.k" => config.plan.k = parse_usize(value, key)?,
        "plan.tau" => config.plan.tau = parse_f64(value, key)?,
        "plan.momentum" => config.plan.momentum = parse_f64(value, key)?,
        "plan.queue_capacity" => config.plan.queue_capacity = parse_usize(value, key)?,
        "plan.batch_size" => config.plan.batch_size = parse_usize(value, key)?,
        "plan.lr" => config.plan.lr = parse_f64(value, key)?,
        "plan.weight_decay" => config.plan.weight_decay = parse_f64(value, key)?,
        "plan.alternation" => {
            config.plan.alternation = match value {
                "cycle" => Alternation::Cycle,
                "simultaneous" => Alternation::Simultaneous,
                other => {
                    return Err(CoclrError::InvalidConfig(format!(
                        "plan.alternation: unknown mode `{other}` (expected cycle|simultaneous)"
                    )))
                }
            }
        }
        "plan.hidden" => config.plan.hidden = parse_usize_list(value, key)?,
        "plan.projection" => config.plan.projection = parse_usize_list(value, key)?,
        "plan.aug1.sigma_aug" => config.plan.aug1.sigma_aug = parse_f64(value, key)?,
        "plan.aug1.dropout" => config.plan.aug1.dropout = parse_f64(value, key)?,
        "plan.aug2.sigma_aug" => config.plan.aug2.sigma_aug = parse_f64(value, key)?,
        "plan.aug2.dropout" => config.plan.aug2.dropout = parse_f64(value, key)?,
        "plan.eval_every" => config.plan.eval_every = parse_usize(value, key)?,
        "plan.probe.lr" => config.plan.probe.lr = parse_f64(value, key)?,
        "plan.probe.steps" => config.plan.probe.steps = parse_usize(value, key)?,
        "plan.probe.l2" => config.plan.probe.l2 = parse_f64(value, key)?,
        other => {
            return Err(CoclrError::InvalidConfig(format!(
                "unknown key `{other}`"
            )))
        }
    }
    Ok(())
}

/// Set a single field by key path on an existing config (sweep override).
/// The path must be addressable in the schema; `schema_version` cannot be
/// overridden this way.
pub fn set_field(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    if key == "schema_version" {
        return Err(CoclrError::InvalidConfig(
            "schema_version: not an overridable parameter".into(),
        ));
    }
    if !KEYS.iter().any(|(k, _)| *k == key) {
        return Err(CoclrError::InvalidConfig(format!(
            "unknown key `{key}` (not addressable)"
        )));
    }
    apply(config, key, value)
}

/// Parse a config from text. Strict: every required key present exactly once,
/// no unknown keys, all values well-formed.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    // Placeholder scaffold overwritten by the assignments below; every
    // required field must be assigned or we error before returning it.
    let mut config = ExperimentConfig {
        name: String::new(),
        dataset: TwoViewSpec::default(),
        plan: TrainPlan {
            stages: Vec::new(),
            ..TrainPlan::base(0)
        },
        seeds: Vec::new(),
        out: PathBuf::new(),
    };
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CoclrError::InvalidConfig(format!(
                "line {}: `{line}` is not a `key = value` assignment",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if let Some(first) = seen.insert(key.to_string(), lineno + 1) {
            return Err(CoclrError::InvalidConfig(format!(
                "line {}: duplicate key `{key}` (first set on line {first})",
                lineno + 1
            )));
        }
        apply(&mut config, key, value).map_err(|e| match e {
            CoclrError::InvalidConfig(msg) => {
                CoclrError::InvalidConfig(format!("line {}: {msg}", lineno + 1))
            }
            other => other,
        })?;
    }
    for (key, required) in KEYS {
        if *required && !seen.contains_key(*key) {
            return Err(CoclrError::InvalidConfig(format!(
                "missing required field `{key}`"
            )));
        }
    }
    Ok(config)
}

/// Serialize a config in canonical key order. `parse(serialize(c)) == c`.
pub fn serialize(config: &ExperimentConfig) -> String {
    let d = &config.dataset;
    let p = &config.plan;
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    line("schema_version", CONFIG_SCHEMA_VERSION.to_string());
    line("name", config.name.clone());
    line("out", config.out.display().to_string());
    line("seeds", join_list(&config.seeds));
    line("dataset.n_classes", d.n_classes.to_string());
    line("dataset.per_class", d.per_class.to_string());
    line("dataset.d1", d.d1.to_string());
    line("dataset.d1_signal", d.d1_signal.to_string());
    line("dataset.d2", d.d2.to_string());
    line("dataset.sigma_sig", d.sigma_sig.to_string());
    line("dataset.sigma_nuis", d.sigma_nuis.to_string());
    line("dataset.sigma2", d.sigma2.to_string());
    line("dataset.pair_correlation", d.pair_correlation.to_string());
    line("dataset.train_fraction", d.train_fraction.to_string());
    line("plan.stages", stages_to_string(&p.stages));
    line("plan.k", p.k.to_string());
    line("plan.tau", p.tau.to_string());
    line("plan.momentum", p.momentum.to_string());
    line("plan.queue_capacity", p.queue_capacity.to_string());
    line("plan.batch_size", p.batch_size.to_string());
    line("plan.lr", p.lr.to_string());
    line("plan.weight_decay", p.weight_decay.to_string());
    line(
        "plan.alternation",
        match p.alternation {
            Alternation::Cycle => "cycle".to_string(),
            Alternation::Simultaneous => "simultaneous".to_string(),
        },
    );
    line("plan.hidden", join_list(&p.hidden));
    line("plan.projection", join_list(&p.projection));
    line("plan.aug1.sigma_aug", p.aug1.sigma_aug.to_string());
    line("plan.aug1.dropout", p.aug1.dropout.to_string());
    line("plan.aug2.sigma_aug", p.aug2.sigma_aug.to_string());
    line("plan.aug2.dropout", p.aug2.dropout.to_string());
    line("plan.eval_every", p.eval_every.to_string());
    line("plan.probe.lr", p.probe.lr.to_string());
    line("plan.probe.steps", p.probe.steps.to_string());
    line("plan.probe.l2", p.probe.l2.to_string());
    s
}

/// Read and parse a config file.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CoclrError::CorruptFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse(&text).map_err(|e| match e {
        CoclrError::InvalidConfig(msg) => {
            CoclrError::InvalidConfig(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

/// Serialize and write a config file.
pub fn save(path: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::write(path, serialize(config))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cotrain::TrainPlan;

    fn sample() -> ExperimentConfig {
        ExperimentConfig::benchmark("bench", TrainPlan::default_coclr(0))
    }

    #[test]
    fn round_trip_is_lossless() {
        let config = sample();
        let text = serialize(&config);
        let back = parse(&text).unwrap();
        assert_eq!(back, config);
        // And a second round trip is byte-stable.
        assert_eq!(serialize(&back), text);
    }

    #[test]
    fn missing_required_field_names_the_path() {
        let text = serialize(&sample());
        let without_k: String = text
            .lines()
            .filter(|l| !l.starts_with("plan.k "))
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse(&without_k).unwrap_err().to_string();
        assert!(err.contains("plan.k"), "error should name plan.k: {err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let mut text = serialize(&sample());
        text.push_str("plan.warp_speed = 9\n");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("plan.warp_speed"), "{err}");
    }

    #[test]
    fn malformed_value_names_field_and_line() {
        let text = serialize(&sample()).replace("plan.k = 5", "plan.k = five");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("plan.k") && err.contains("five"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let mut text = serialize(&sample());
        text.push_str("plan.k = 7\n");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("plan.k"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let text = serialize(&sample()).replace("schema_version = 1", "schema_version = 99");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("schema_version") && err.contains("99"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut text = String::from("# benchmark config\n\n");
        text.push_str(&serialize(&sample()));
        text.push_str("\n# trailing comment\n");
        assert_eq!(parse(&text).unwrap(), sample());
    }

    #[test]
    fn stage_syntax_round_trips_and_rejects_garbage() {
        let stages = parse_stages("infonce:2:30,coclr:both:7", "plan.stages").unwrap();
        assert_eq!(stages.len(), 2);
        assert_eq!(stages[1].view, ActiveView::Both);
        assert_eq!(stages_to_string(&stages), "infonce:2:30,coclr:both:7");
        assert!(parse_stages("infonce:2", "plan.stages").is_err());
        assert!(parse_stages("warpnce:2:30", "plan.stages").is_err());
        assert!(parse_stages("infonce:3:30", "plan.stages").is_err());
        assert!(parse_stages("infonce:2:x", "plan.stages").is_err());
    }

    #[test]
    fn set_field_overrides_addressable_parameters_only() {
        let mut config = sample();
        set_field(&mut config, "plan.k", "50").unwrap();
        assert_eq!(config.plan.k, 50);
        set_field(&mut config, "plan.tau", "0.5").unwrap();
        assert_eq!(config.plan.tau, 0.5);
        let err = set_field(&mut config, "plan.nonsense", "1").unwrap_err().to_string();
        assert!(err.contains("plan.nonsense"), "{err}");
        assert!(set_field(&mut config, "schema_version", "2").is_err());
    }

    #[test]
    fn float_values_survive_exactly() {
        let mut config = sample();
        config.plan.tau = 0.070000000000000007;
        config.dataset.sigma_nuis = 1.0 / 3.0;
        let back = parse(&serialize(&config)).unwrap();
        assert_eq!(back.plan.tau.to_bits(), config.plan.tau.to_bits());
        assert_eq!(
            back.dataset.sigma_nuis.to_bits(),
            config.dataset.sigma_nuis.to_bits()
        );
    }
}
