//! Declarative experiment configuration and the training-ratio by
//! sequence-cap grid.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    preprocess, raw_sequence_lengths, read_raw_csv, split_students, synthesize, tukey_fence, Dataset, PreprocessReport,
    SplitSpec, SynthSpec,
};
use crate::error::{NsktError, Result};
use crate::facts::Context;
use crate::metrics::{report, Confusion, MetricsReport, Pooling, StageErrors};
use crate::model::{parallel_map, Model, ModelKind, ModelSpec, TrainSummary};
use crate::template::RuleConfig;
use crate::train::TrainConfig;

/// Sequence cap: a fixed length or the Tukey fence of the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "CapRepr", into = "CapRepr")]
pub enum Cap {
    Len(usize),
    Full,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CapRepr {
    Len(usize),
    Name(String),
}

impl TryFrom<CapRepr> for Cap {
    type Error = NsktError;

    fn try_from(r: CapRepr) -> Result<Cap> {
        match r {
            CapRepr::Len(n) => Ok(Cap::Len(n)),
            CapRepr::Name(s) => s.parse(),
        }
    }
}

impl From<Cap> for CapRepr {
    fn from(c: Cap) -> CapRepr {
        match c {
            Cap::Len(n) => CapRepr::Len(n),
            Cap::Full => CapRepr::Name("full".into()),
        }
    }
}

impl FromStr for Cap {
    type Err = NsktError;

    fn from_str(s: &str) -> Result<Cap> {
        if s == "full" {
            return Ok(Cap::Full);
        }
        s.parse()
            .map(Cap::Len)
            .map_err(|_| NsktError::Config(format!("cap must be a length or `full`, got `{s}`")))
    }
}

impl fmt::Display for Cap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cap::Len(n) => write!(f, "{n}"),
            Cap::Full => f.write_str("full"),
        }
    }
}

impl Cap {
    pub fn resolve(self, fence: usize) -> usize {
        match self {
            Cap::Len(n) => n,
            Cap::Full => fence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synth(SynthSpec),
    /// Raw log in the five-column schema.
    Csv { path: PathBuf },
    /// A dataset written by the `preprocess` step.
    Dataset { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub threshold: i64,
    pub split: SplitSpec,
    pub caps: Vec<Cap>,
    pub ratios: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub embedding_dim: usize,
    pub rnn_layers: usize,
    pub context: Context,
    pub rules: RuleConfig,
    pub train: TrainConfig,
    pub pooling: Pooling,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synth(SynthSpec::default()),
            threshold: 37,
            split: SplitSpec::default(),
            caps: vec![Cap::Len(10), Cap::Len(50), Cap::Len(100), Cap::Full],
            ratios: vec![0.1, 0.5, 1.0],
            models: ModelKind::ALL.to_vec(),
            embedding_dim: 16,
            rnn_layers: 2,
            context: Context::Quiz,
            rules: RuleConfig::default(),
            train: TrainConfig::default(),
            pooling: Pooling::Micro,
            seed: 7,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NsktError::Config(m));
        if self.caps.is_empty() || self.ratios.is_empty() || self.models.is_empty() {
            return bad("caps, ratios and models must be nonempty".into());
        }
        if let Some(c) = self.caps.iter().find(|c| matches!(c, Cap::Len(n) if *n < 2)) {
            return bad(format!("cap {c} is below 2"));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return bad(format!("training ratio {r} not in (0, 1]"));
        }
        if self.embedding_dim == 0 || self.rnn_layers == 0 || self.workers == 0 {
            return bad("embedding_dim, rnn_layers and workers must be at least 1".into());
        }
        if self.rules.k_pos == 0 || self.rules.k_neg == 0 {
            return bad("rule thresholds must be at least 1".into());
        }
        match &self.data {
            DataSource::Csv { path } | DataSource::Dataset { path } if !path.exists() => {
                return bad(format!("data file {} does not exist", path.display()))
            }
            _ => {}
        }
        self.split.sizes(3)?;
        self.train.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_spec(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            embedding_dim: self.embedding_dim,
            rnn_layers: self.rnn_layers,
            context: self.context,
            rules: self.rules,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    /// Comment lines stamped on every output file.
    pub fn stamp(&self) -> Vec<String> {
        vec![format!("config_hash={} seed={}", self.hash(), self.seed)]
    }
}

/// A dataset with its fixed split and fence.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub fence: usize,
    pub report: Option<PreprocessReport>,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (dataset, fence, report) = match &cfg.data {
        DataSource::Synth(spec) => {
            let ds = synthesize(spec)?;
            let fence = tukey_fence(&ds.sequence_lengths())?;
            (ds, fence, None)
        }
        DataSource::Csv { path } => {
            let raw = read_raw_csv(std::fs::File::open(path)?)?;
            let fence = tukey_fence(&raw_sequence_lengths(&raw))?;
            let (ds, report) = preprocess(&raw, cfg.threshold, fence)?;
            (ds, fence, Some(report))
        }
        DataSource::Dataset { path } => {
            let ds = read_dataset_json(&std::fs::read_to_string(path)?)?;
            let fence = tukey_fence(&ds.sequence_lengths())?;
            (ds, fence, None)
        }
    };
    let (train, val, test) = split_students(&dataset, &cfg.split)?;
    Ok(Prepared {
        dataset,
        fence,
        report,
        train,
        val,
        test,
    })
}

/// Reads a dataset document, bare or wrapped under a `dataset` key.
pub fn read_dataset_json(text: &str) -> Result<Dataset> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    let inner = match v.get_mut("dataset") {
        Some(d) => d.take(),
        None => v,
    };
    let ds: Dataset = serde_json::from_value(inner)?;
    Dataset::new(ds.students, ds.vocab, ds.provenance)
}

/// Looks a student up by name, then by index.
pub fn find_student(ds: &Dataset, key: &str) -> Result<u32> {
    if let Some(i) = ds.vocab.student_names.iter().position(|n| n == key) {
        return Ok(i as u32);
    }
    key.parse::<u32>()
        .ok()
        .filter(|&i| ds.student(i).is_some())
        .ok_or_else(|| NsktError::UnknownStudent(key.to_string()))
}

/// One trained grid cell.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub model: Model,
    pub summary: TrainSummary,
    pub metrics: MetricsReport,
    pub train_students: usize,
}

/// Trains `kind` on the ratio-subsampled, capped training split and
/// evaluates it on the capped test split.
pub fn run_cell(cfg: &ExperimentConfig, data: &Prepared, kind: ModelKind, cap: usize, ratio: f64, workers: usize) -> Result<CellRun> {
    let train = data.train.subsample(ratio, cfg.seed)?.truncate(cap);
    let val = data.val.truncate(cap);
    let test = data.test.truncate(cap);
    let mut model = Model::for_dataset(cfg.model_spec(kind), &data.dataset, cfg.seed);
    let summary = model.fit(&train, &val, &cfg.train_config(), workers)?;
    let traces = model.traces(&test, workers)?;
    let metrics = report(&traces, cfg.pooling)?;
    Ok(CellRun {
        model,
        summary,
        metrics,
        train_students: train.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: ModelKind,
    /// Resolved cap.
    pub seq_cap: usize,
    /// Cap as requested, `full` or a number.
    pub cap_label: String,
    pub train_ratio: f64,
    pub status: String,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub per_class: Option<Confusion>,
    pub stage_errors: Option<StageErrors>,
    pub volatility: Option<f64>,
    pub inconsistency: Option<f64>,
    pub n_queries: Option<usize>,
    pub train_students: Option<usize>,
    pub best_epoch: Option<usize>,
    pub epochs: Option<usize>,
    pub error: Option<String>,
    pub config_hash: String,
    pub seed: u64,
}

impl MetricsRow {
    fn base(cfg: &ExperimentConfig, kind: ModelKind, cap: Cap, seq_cap: usize, ratio: f64) -> MetricsRow {
        MetricsRow {
            model: kind,
            seq_cap,
            cap_label: cap.to_string(),
            train_ratio: ratio,
            status: "ok".into(),
            auc: None,
            accuracy: None,
            per_class: None,
            stage_errors: None,
            volatility: None,
            inconsistency: None,
            n_queries: None,
            train_students: None,
            best_epoch: None,
            epochs: None,
            error: None,
            config_hash: cfg.hash(),
            seed: cfg.seed,
        }
    }

    pub fn from_run(cfg: &ExperimentConfig, cap: Cap, seq_cap: usize, ratio: f64, run: &CellRun) -> MetricsRow {
        let m = &run.metrics;
        MetricsRow {
            auc: m.auc,
            accuracy: Some(m.accuracy),
            per_class: Some(m.per_class.clone()),
            stage_errors: Some(m.stage_errors),
            volatility: m.volatility,
            inconsistency: m.inconsistency,
            n_queries: Some(m.n_queries),
            train_students: Some(run.train_students),
            best_epoch: Some(run.summary.best_epoch),
            epochs: Some(run.summary.history.len()),
            ..MetricsRow::base(cfg, run.model.kind(), cap, seq_cap, ratio)
        }
    }

    fn failed(cfg: &ExperimentConfig, kind: ModelKind, cap: Cap, seq_cap: usize, ratio: f64, error: String) -> MetricsRow {
        MetricsRow {
            status: "failed".into(),
            error: Some(error),
            ..MetricsRow::base(cfg, kind, cap, seq_cap, ratio)
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "cell panicked".into())
}

/// Runs every (model, cap, ratio) cell. Cells whose resolved cap coincide
/// are trained once. A failing cell yields a `failed` row.
pub fn run_grid(cfg: &ExperimentConfig, data: &Prepared) -> Vec<MetricsRow> {
    let mut cells = Vec::new();
    for &kind in &cfg.models {
        for &cap in &cfg.caps {
            for &ratio in &cfg.ratios {
                cells.push((kind, cap, cap.resolve(data.fence), ratio));
            }
        }
    }
    let mut unique: Vec<(ModelKind, usize, f64)> = Vec::new();
    let mut slot: HashMap<(ModelKind, usize, u64), usize> = HashMap::new();
    let index: Vec<usize> = cells
        .iter()
        .map(|&(kind, _, cap, ratio)| {
            *slot.entry((kind, cap, ratio.to_bits())).or_insert_with(|| {
                unique.push((kind, cap, ratio));
                unique.len() - 1
            })
        })
        .collect();
    let runs = parallel_map(&unique, cfg.workers, |&(kind, cap, ratio)| {
        match catch_unwind(AssertUnwindSafe(|| run_cell(cfg, data, kind, cap, ratio, 1))) {
            Ok(r) => r.map_err(|e| e.to_string()),
            Err(p) => Err(panic_message(p)),
        }
    });
    cells
        .iter()
        .zip(index)
        .map(|(&(kind, cap, seq_cap, ratio), i)| match &runs[i] {
            Ok(run) => MetricsRow::from_run(cfg, cap, seq_cap, ratio, run),
            Err(e) => MetricsRow::failed(cfg, kind, cap, seq_cap, ratio, e.clone()),
        })
        .collect()
}

pub const GRID_HEADER: [&str; 22] = [
    "model",
    "seq_cap",
    "cap_label",
    "train_ratio",
    "status",
    "auc",
    "accuracy",
    "precision_low",
    "recall_low",
    "f1_low",
    "precision_high",
    "recall_high",
    "f1_high",
    "error_early",
    "error_middle",
    "error_late",
    "volatility",
    "inconsistency",
    "train_students",
    "best_epoch",
    "epochs",
    "error",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_grid_csv(rows: &[MetricsRow], comments: &[String], out: impl Write) -> Result<()> {
    let mut out = out;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GRID_HEADER)?;
    for r in rows {
        let pc = r.per_class.as_ref();
        let se = r.stage_errors.as_ref();
        w.write_record([
            r.model.to_string(),
            r.seq_cap.to_string(),
            r.cap_label.clone(),
            r.train_ratio.to_string(),
            r.status.clone(),
            opt(r.auc),
            opt(r.accuracy),
            opt(pc.map(|c| c.low.precision)),
            opt(pc.map(|c| c.low.recall)),
            opt(pc.map(|c| c.low.f1)),
            opt(pc.map(|c| c.high.precision)),
            opt(pc.map(|c| c.high.recall)),
            opt(pc.map(|c| c.high.f1)),
            opt(se.map(|s| s.early)),
            opt(se.map(|s| s.middle)),
            opt(se.map(|s| s.late)),
            opt(r.volatility),
            opt(r.inconsistency),
            opt(r.train_students),
            opt(r.best_epoch),
            opt(r.epochs),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid_jsonl(rows: &[MetricsRow], mut out: impl Write) -> Result<()> {
    for r in rows {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synth(SynthSpec {
                n_students: 12,
                n_skills: 3,
                n_quizzes: 5,
                max_len: 8,
                seed: 1,
            }),
            caps: vec![Cap::Len(8), Cap::Full],
            ratios: vec![1.0],
            models: vec![ModelKind::Classic],
            embedding_dim: 3,
            rnn_layers: 1,
            train: TrainConfig {
                learning_rate: 0.01,
                max_epochs: 2,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn cap_parsing_and_serde() {
        assert_eq!("full".parse::<Cap>().unwrap(), Cap::Full);
        assert_eq!("50".parse::<Cap>().unwrap(), Cap::Len(50));
        assert!("fifty".parse::<Cap>().is_err());
        let caps: Vec<Cap> = serde_json::from_str(r#"[10, "full"]"#).unwrap();
        assert_eq!(caps, vec![Cap::Len(10), Cap::Full]);
        assert_eq!(serde_json::to_string(&caps).unwrap(), r#"[10,"full"]"#);
        assert_eq!(Cap::Full.resolve(475), 475);
    }

    #[test]
    fn config_defaults_and_hash() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.caps.len() * cfg.ratios.len() * cfg.models.len(), 36);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back.hash(), cfg.hash());
        let other = ExperimentConfig { seed: 8, ..cfg.clone() };
        assert_ne!(other.hash(), cfg.hash());
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 3, "caps": [20, "full"]}"#).unwrap();
        assert_eq!(partial.caps, vec![Cap::Len(20), Cap::Full]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            ExperimentConfig { ratios: vec![0.0], ..tiny() },
            ExperimentConfig { caps: vec![Cap::Len(1)], ..tiny() },
            ExperimentConfig { models: vec![], ..tiny() },
            ExperimentConfig {
                data: DataSource::Csv { path: "/nonexistent/x.csv".into() },
                ..tiny()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(NsktError::Config(_))));
        }
    }

    #[test]
    fn grid_memoizes_equal_caps_and_is_deterministic() {
        let cfg = tiny();
        let data = load_data(&cfg).unwrap();
        assert_eq!(data.fence, 8);
        let rows = run_grid(&cfg, &data);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.status == "ok"));
        let strip = |r: &MetricsRow| MetricsRow { cap_label: String::new(), ..r.clone() };
        assert_eq!(strip(&rows[0]), strip(&rows[1]));
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_grid_csv(&rows, &cfg.stamp(), &mut a).unwrap();
        write_grid_csv(&run_grid(&cfg, &data), &cfg.stamp(), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let cfg = tiny();
        let mut bad = load_data(&cfg).unwrap();
        bad.val.students.clear();
        let rows = run_grid(&cfg, &bad);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.status == "failed" && r.error.is_some()));
        let mut out = Vec::new();
        write_grid_csv(&rows, &[], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }
}
