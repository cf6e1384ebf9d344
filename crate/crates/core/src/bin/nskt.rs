use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use nskt::data::{read_raw_csv, write_records, Dataset, SynthSpec};
use nskt::error::{NsktError, Result};
use nskt::experiment::{
    find_student, load_data, run_cell, run_grid, write_grid_csv, write_grid_jsonl, Cap, DataSource,
    ExperimentConfig, MetricsRow, Prepared,
};
use nskt::explain::{
    export_graph, global_importance, local_attribution, rule_importance, skill_time_heatmap, write_heatmap,
    write_rule_importance, GraphFormat, Importance, Target,
};
use nskt::facts::encode_student;
use nskt::ground::ground;
use nskt::metrics::report;
use nskt::model::{Model, ModelKind};
use nskt::train::write_history;

/// Neural-symbolic knowledge tracing.
///
/// Settings come from the JSON config given by `--config`, or the
/// defaults when absent; flags override the config.
#[derive(Parser)]
#[command(name = "nskt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    cap: Option<Cap>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, encode, cap and split a raw CSV log.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Raw CSV; overrides the config data source.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<i64>,
    },
    /// Generate the synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on one (cap, ratio) cell.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Local attribution, graph and global importance for a checkpoint.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Student name or index.
        #[arg(long)]
        student: String,
        /// Query step; defaults to the last one.
        #[arg(long)]
        step: Option<u32>,
        #[arg(long, default_value = "loss")]
        target: Target,
    },
    /// Export one student's grounded graph.
    Graph {
        #[command(flatten)]
        common: Common,
        /// Weights are printed on edges when given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        student: String,
        #[arg(long, default_value = "dot")]
        format: GraphFormat,
    },
    /// Train and evaluate every (model, cap, ratio) cell.
    Grid {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve_config(common: &Common, base: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, base) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(cfg)) => cfg,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(m) = common.model {
        cfg.models = vec![m];
    }
    if let Some(c) = common.cap {
        cfg.caps = vec![c];
    }
    if let Some(r) = common.ratio {
        cfg.ratios = vec![r];
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `body` as pretty JSON with the audit fields added.
fn write_json(dir: &Path, name: &str, cfg: &ExperimentConfig, body: impl Serialize) -> Result<()> {
    let mut v = serde_json::to_value(body)?;
    let stamp = json!({ "config_hash": cfg.hash(), "seed": cfg.seed });
    match v {
        Value::Object(ref mut map) => {
            map.insert("config_hash".into(), stamp["config_hash"].clone());
            map.insert("seed".into(), stamp["seed"].clone());
        }
        other => v = json!({ "config_hash": stamp["config_hash"], "seed": stamp["seed"], "value": other }),
    }
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, &v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_splits(out: &Path, cfg: &ExperimentConfig, data: &Prepared) -> Result<()> {
    write_json(out, "dataset.json", cfg, json!({ "dataset": data.dataset }))?;
    for (name, ds) in [("train.csv", &data.train), ("val.csv", &data.val), ("test.csv", &data.test)] {
        let mut w = create(out, name)?;
        write_records(ds, &cfg.stamp(), &mut w)?;
        w.flush()?;
    }
    write_json(
        out,
        "stats.json",
        cfg,
        json!({
            "stats": data.dataset.stats(),
            "fence": data.fence,
            "report": data.report,
            "split": { "train": data.train.len(), "val": data.val.len(), "test": data.test.len() },
        }),
    )
}

fn preprocess(common: &Common, input: Option<PathBuf>, threshold: Option<i64>) -> Result<()> {
    let mut cfg = resolve_config(common, None)?;
    if let Some(path) = input {
        cfg.data = DataSource::Csv { path };
    }
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    let DataSource::Csv { path } = &cfg.data else {
        return Err(NsktError::Config("preprocess needs a CSV data source (`--input`)".into()));
    };
    if !path.exists() {
        return Err(NsktError::Config(format!("data file {} does not exist", path.display())));
    }
    // Surface schema errors before anything else is validated.
    read_raw_csv(File::open(path)?)?;
    cfg.validate()?;
    let data = load_data(&cfg)?;
    write_splits(&common.out, &cfg, &data)
}

fn synth(common: &Common) -> Result<()> {
    let mut cfg = resolve_config(common, None)?;
    let mut spec = match cfg.data {
        DataSource::Synth(spec) => spec,
        _ => SynthSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    cfg.data = DataSource::Synth(spec);
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let mut w = create(&common.out, "records.csv")?;
    write_records(&data.dataset, &cfg.stamp(), &mut w)?;
    w.flush()?;
    write_splits(&common.out, &cfg, &data)
}

fn single<T: Copy>(items: &[T], what: &str) -> Result<T> {
    match items {
        [x] => Ok(*x),
        _ => Err(NsktError::Config(format!("exactly one {what} is required, use --{what}"))),
    }
}

fn train(common: &Common) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    cfg.validate()?;
    let kind = single(&cfg.models, "model")?;
    let cap = single(&cfg.caps, "cap")?;
    let ratio = single(&cfg.ratios, "ratio")?;
    let data = load_data(&cfg)?;
    let seq_cap = cap.resolve(data.fence);
    let run = run_cell(&cfg, &data, kind, seq_cap, ratio, cfg.workers)?;
    let meta = json!({
        "config": cfg,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "cap": cap,
        "seq_cap": seq_cap,
        "ratio": ratio,
    });
    fs::create_dir_all(&common.out)?;
    run.model.save(&common.out.join("checkpoint.json"), meta)?;
    let mut w = create(&common.out, "history.csv")?;
    write_history(&run.summary.history, &cfg.stamp(), &mut w)?;
    w.flush()?;
    write_json(&common.out, "metrics.json", &cfg, MetricsRow::from_run(&cfg, cap, seq_cap, ratio, &run))
}

struct Loaded {
    model: Model,
    cfg: ExperimentConfig,
    data: Prepared,
    seq_cap: usize,
}

fn load_checkpoint(common: &Common, path: &Path) -> Result<Loaded> {
    let (model, meta) = Model::load(path)?;
    let stored = meta
        .get("config")
        .map(|c| serde_json::from_value::<ExperimentConfig>(c.clone()))
        .transpose()?;
    let cfg = resolve_config(common, stored)?;
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let seq_cap = match common.cap {
        Some(c) => c.resolve(data.fence),
        None => meta
            .get("seq_cap")
            .and_then(Value::as_u64)
            .map_or(data.fence, |c| c as usize),
    };
    Ok(Loaded {
        model,
        cfg,
        data,
        seq_cap,
    })
}

fn eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let l = load_checkpoint(common, checkpoint)?;
    let test = l.data.test.truncate(l.seq_cap);
    let traces = l.model.traces(&test, l.cfg.workers)?;
    let metrics = report(&traces, l.cfg.pooling)?;
    write_json(
        &common.out,
        "eval.json",
        &l.cfg,
        json!({ "model": l.model.kind(), "seq_cap": l.seq_cap, "metrics": metrics }),
    )?;
    let mut w = create(&common.out, "predictions.csv")?;
    for c in l.cfg.stamp() {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "student,t,skill,quiz,prob,label")?;
    for tr in &traces {
        for s in &tr.steps {
            writeln!(w, "{},{},{},{},{},{}", tr.student, s.t, s.skill, s.quiz, s.prob, u8::from(s.label))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn student_sequence(ds: &Dataset, key: &str, cap: usize) -> Result<(u32, Vec<nskt::data::Interaction>)> {
    let idx = find_student(ds, key)?;
    let seq = ds.student(idx).ok_or_else(|| NsktError::UnknownStudent(key.to_string()))?;
    Ok((idx, seq[..seq.len().min(cap)].to_vec()))
}

fn write_importance(dir: &Path, name: &str, rows: &[Importance], comments: &[String]) -> Result<()> {
    let mut w = create(dir, name)?;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["name", "raw", "share", "normalized"])?;
    for r in rows {
        csv.write_record([r.name.clone(), r.raw.to_string(), r.share.to_string(), r.normalized.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

fn explain(common: &Common, checkpoint: &Path, student: &str, step: Option<u32>, target: Target) -> Result<()> {
    let l = load_checkpoint(common, checkpoint)?;
    let out = &common.out;
    let stamp = l.cfg.stamp();
    let (_, seq) = student_sequence(&l.data.dataset, student, l.seq_cap)?;
    let step = step.unwrap_or(seq.len().saturating_sub(1) as u32);
    let attribution = local_attribution(&l.model, &seq, step, target)?;
    write_json(out, "attribution.json", &l.cfg, &attribution)?;
    let template = l.model.template().expect("attribution succeeded on a grounded model");
    let graph = ground(&template, &encode_student(&seq, template.context())?)?;
    let dot = export_graph(&graph, GraphFormat::Dot, Some(&l.model.params))?;
    write_text(out, "graph.dot", &format!("// {}\n{dot}", stamp.join(" ")))?;

    let test = l.data.test.truncate(l.seq_cap);
    let global = global_importance(&l.model, &test, l.cfg.workers)?;
    write_importance(out, "skill_importance.csv", &global.skills, &stamp)?;
    write_importance(out, "quiz_importance.csv", &global.quizzes, &stamp)?;
    let mut w = create(out, "rule_importance.csv")?;
    write_rule_importance(&rule_importance(&l.model, &test, l.cfg.workers)?, &stamp, &mut w)?;
    w.flush()?;
    let cells = skill_time_heatmap(&l.model, &test, l.seq_cap, target, l.cfg.workers)?;
    let mut w = create(out, "skill_time_heatmap.csv")?;
    write_heatmap(&cells, &l.data.dataset.vocab.skill_names, &stamp, &mut w)?;
    w.flush()?;
    Ok(())
}

fn graph(common: &Common, checkpoint: Option<&Path>, student: &str, format: GraphFormat) -> Result<()> {
    let (model, cfg, data, seq_cap) = match checkpoint {
        Some(path) => {
            let l = load_checkpoint(common, path)?;
            (Some(l.model), l.cfg, l.data, l.seq_cap)
        }
        None => {
            let cfg = resolve_config(common, None)?;
            cfg.validate()?;
            let data = load_data(&cfg)?;
            let seq_cap = single(&cfg.caps, "cap").map_or(data.fence, |c| c.resolve(data.fence));
            (None, cfg, data, seq_cap)
        }
    };
    let template = match &model {
        Some(m) => m.template(),
        None => cfg.model_spec(single(&cfg.models, "model")?).template(),
    }
    .ok_or_else(|| NsktError::Config("the classic model has no grounded graph".into()))?;
    let (_, seq) = student_sequence(&data.dataset, student, seq_cap)?;
    let g = ground(&template, &encode_student(&seq, template.context())?)?;
    let text = export_graph(&g, format, model.as_ref().map(|m| &m.params))?;
    match format {
        GraphFormat::Dot => write_text(&common.out, "graph.dot", &format!("// {}\n{text}", cfg.stamp().join(" "))),
        GraphFormat::Json => write_json(&common.out, "graph.json", &cfg, json!({ "graph": serde_json::from_str::<Value>(&text)? })),
    }
}

fn grid(common: &Common) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let rows = run_grid(&cfg, &data);
    let mut w = create(&common.out, "grid.jsonl")?;
    write_grid_jsonl(&rows, &mut w)?;
    w.flush()?;
    let mut w = create(&common.out, "grid.csv")?;
    write_grid_csv(&rows, &cfg.stamp(), &mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { common, input, threshold } => preprocess(&common, input, threshold),
        Command::Synth { common } => synth(&common),
        Command::Train { common } => train(&common),
        Command::Eval { common, checkpoint } => eval(&common, &checkpoint),
        Command::Explain {
            common,
            checkpoint,
            student,
            step,
            target,
        } => explain(&common, &checkpoint, &student, step, target),
        Command::Graph {
            common,
            checkpoint,
            student,
            format,
        } => graph(&common, checkpoint.as_deref(), &student, format),
        Command::Grid { common } => grid(&common),
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
