//! The three trainable model families behind one interface.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff;
use crate::classic::{ClassicConfig, ClassicInput, ClassicModel};
use crate::data::{Dataset, Interaction};
use crate::error::{NsktError, Result};
use crate::facts::{encode_student, encode_with_queries, Const, Context, Query};
use crate::graph::GroundedGraph;
use crate::ground::ground;
use crate::metrics::{StudentTrace, TraceStep};
use crate::params::{Gradients, ParamStore, TableSizes};
use crate::template::{Activation, RuleConfig, Template, TemplateSpec};
use crate::train::{self, Adam, EpochRecord, Learner, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Responsible,
    Basens,
    Classic,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Responsible, ModelKind::Basens, ModelKind::Classic];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Responsible => "responsible",
            ModelKind::Basens => "basens",
            ModelKind::Classic => "classic",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = NsktError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "responsible" | "responsible-dkt" => Ok(ModelKind::Responsible),
            "basens" | "basens-dkt" => Ok(ModelKind::Basens),
            "classic" | "classic-dkt" => Ok(ModelKind::Classic),
            _ => Err(NsktError::Config(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    pub rnn_layers: usize,
    pub context: Context,
    pub rules: RuleConfig,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            embedding_dim: 16,
            rnn_layers: 2,
            context: Context::Quiz,
            rules: RuleConfig::default(),
        }
    }

    /// The template for neural-symbolic kinds.
    pub fn template(&self) -> Option<Template> {
        let rules = match self.kind {
            ModelKind::Responsible => self.rules,
            ModelKind::Basens => RuleConfig {
                rules_enabled: false,
                ..self.rules
            },
            ModelKind::Classic => return None,
        };
        Some(Template::build(TemplateSpec {
            embedding_dim: self.embedding_dim,
            rnn_layers: self.rnn_layers,
            context: self.context,
            rules,
        }))
    }

    pub fn classic(&self) -> ClassicConfig {
        ClassicConfig {
            context: self.context,
            ..ClassicConfig::new(self.embedding_dim, self.rnn_layers)
        }
    }
}

/// Trains a template by grounding each student once.
#[derive(Debug, Clone, PartialEq)]
pub struct NsLearner {
    pub template: Template,
}

impl Learner for NsLearner {
    type Prepared = GroundedGraph;

    fn student(g: &GroundedGraph) -> u32 {
        g.student
    }

    fn labels(g: &GroundedGraph) -> Vec<bool> {
        g.queries.iter().map(|(q, _)| q.label).collect()
    }

    fn loss_and_grad(&self, params: &ParamStore, g: &GroundedGraph, grads: &mut Gradients) -> Result<f64> {
        autodiff::loss_and_grad(g, params, grads).map(|(l, _)| l)
    }

    fn predict(&self, params: &ParamStore, g: &GroundedGraph) -> Result<Vec<f64>> {
        autodiff::predict(g, params)
    }
}

/// Maps `f` over `items` on up to `workers` threads, preserving order.
pub fn parallel_map<T: Sync, U: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<U>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

pub fn ground_dataset(template: &Template, ds: &Dataset, workers: usize) -> Result<Vec<GroundedGraph>> {
    parallel_map(&ds.students, workers, |seq| {
        let sample = encode_student(seq, template.context())?;
        ground(template, &sample)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// A model kind with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub sizes: TableSizes,
    pub params: ParamStore,
    /// Optimiser state of the best epoch, present after [`Model::fit`].
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    spec: ModelSpec,
    sizes: TableSizes,
    meta: serde_json::Value,
    params: serde_json::Value,
    #[serde(default)]
    optimizer: Option<Adam>,
}

const CHECKPOINT_FORMAT: &str = "nskt-checkpoint/1";

impl Model {
    pub fn new(spec: ModelSpec, sizes: TableSizes, seed: u64) -> Model {
        let specs = match spec.template() {
            Some(t) => t.params,
            None => spec.classic().param_specs(),
        };
        Model {
            spec,
            sizes,
            params: ParamStore::init(&specs, sizes, spec.embedding_dim, seed),
            optimizer: None,
        }
    }

    pub fn for_dataset(spec: ModelSpec, ds: &Dataset, seed: u64) -> Model {
        let sizes = TableSizes {
            skills: ds.vocab.n_skills(),
            quizzes: ds.vocab.n_quizzes(),
        };
        Model::new(spec, sizes, seed)
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn template(&self) -> Option<Template> {
        self.spec.template()
    }

    pub fn fit(&mut self, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig, workers: usize) -> Result<TrainSummary> {
        let outcome = match self.template() {
            Some(template) => {
                let tr = ground_dataset(&template, train_ds, workers)?;
                let va = ground_dataset(&template, val_ds, workers)?;
                train::train(&NsLearner { template }, self.params.clone(), &tr, &va, cfg)?
            }
            None => {
                let ctx = self.spec.context;
                let prep = |ds: &Dataset| -> Result<Vec<ClassicInput>> {
                    ds.students.iter().map(|s| ClassicInput::next_step(s, ctx)).collect()
                };
                let learner = ClassicModel::new(self.spec.classic());
                train::train(&learner, self.params.clone(), &prep(train_ds)?, &prep(val_ds)?, cfg)?
            }
        };
        self.params = outcome.params;
        self.optimizer = Some(outcome.optimizer);
        Ok(TrainSummary {
            history: outcome.history,
            best_epoch: outcome.best_epoch,
        })
    }

    /// Next-step probabilities for steps `1..n` of one student.
    pub fn predict_sequence(&self, seq: &[Interaction]) -> Result<Vec<f64>> {
        match self.template() {
            Some(t) => {
                let g = ground(&t, &encode_student(seq, t.context())?)?;
                autodiff::predict(&g, &self.params)
            }
            None => ClassicModel::new(self.spec.classic()).forward(&self.params, &ClassicInput::next_step(seq, self.spec.context)?),
        }
    }

    pub fn trace(&self, seq: &[Interaction]) -> Result<StudentTrace> {
        let probs = self.predict_sequence(seq)?;
        Ok(StudentTrace {
            student: seq[0].student,
            steps: seq[1..]
                .iter()
                .zip(probs)
                .map(|(it, prob)| TraceStep {
                    t: it.t,
                    skill: it.skill,
                    quiz: it.quiz,
                    label: it.correct,
                    prob,
                })
                .collect(),
        })
    }

    pub fn traces(&self, ds: &Dataset, workers: usize) -> Result<Vec<StudentTrace>> {
        parallel_map(&ds.students, workers, |s| self.trace(s)).into_iter().collect()
    }

    /// Probability of answering each skill correctly at every step `t`,
    /// given the history before `t`. Indexed `[t][skill]`.
    pub fn mastery_heatmap(&self, seq: &[Interaction]) -> Result<Vec<Vec<f64>>> {
        let n = seq.len();
        let n_skills = self.sizes.skills;
        let flat = match self.template() {
            Some(t) => {
                let t = t.with_context(Context::Skill);
                let queries: Vec<Query> = (0..n as u32)
                    .flat_map(|step| {
                        (0..n_skills as u32).map(move |s| Query {
                            t: step,
                            target: Const::Skill(s),
                            label: false,
                        })
                    })
                    .collect();
                let g = ground(&t, &encode_with_queries(seq, Context::Skill, queries))?;
                autodiff::predict(&g, &self.params)?
            }
            None => {
                let cfg = ClassicConfig {
                    context: Context::Skill,
                    ..self.spec.classic()
                };
                let input = ClassicInput {
                    student: seq.first().map_or(0, |i| i.student),
                    steps: seq.to_vec(),
                    queries: (0..n)
                        .flat_map(|step| (0..n_skills as u32).map(move |s| (step, s, false)))
                        .collect(),
                };
                ClassicModel::new(cfg).forward(&self.params, &input)?
            }
        };
        Ok(flat.chunks(n_skills.max(1)).map(<[f64]>::to_vec).collect())
    }

    pub fn to_json(&self, meta: serde_json::Value) -> serde_json::Value {
        serde_json::to_value(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            spec: self.spec,
            sizes: self.sizes,
            meta,
            params: self.params.to_json(),
            optimizer: self.optimizer.clone(),
        })
        .expect("checkpoint serialises")
    }

    pub fn from_json(value: serde_json::Value) -> Result<(Model, serde_json::Value)> {
        let ck: Checkpoint = serde_json::from_value(value)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NsktError::UnknownFormat(ck.format));
        }
        let model = Model {
            spec: ck.spec,
            sizes: ck.sizes,
            params: ParamStore::from_json(ck.params)?,
            optimizer: ck.optimizer,
        };
        let expected = Model::new(ck.spec, ck.sizes, 0);
        if let Some(adam) = &model.optimizer {
            let fits = adam.m.len() == model.params.len()
                && adam.v.len() == model.params.len()
                && model.params.iter().zip(&adam.m).zip(&adam.v).all(|((p, m), v)| m.len() == p.values.len() && v.len() == p.values.len());
            if !fits {
                return Err(NsktError::Config("optimizer state does not match the parameters".into()));
            }
        }
        for p in expected.params.iter() {
            match model.params.get(&p.name) {
                Some(q) if q.shape() == p.shape() => {}
                Some(q) => {
                    return Err(NsktError::ParamShape {
                        name: p.name.clone(),
                        expected: p.shape(),
                        actual: q.shape(),
                    })
                }
                None => return Err(NsktError::UnresolvedParam(p.name.clone())),
            }
        }
        Ok((model, ck.meta))
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(meta))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Model, serde_json::Value)> {
        let text = std::fs::read_to_string(path)?;
        Model::from_json(serde_json::from_str(&text)?)
    }

    /// Replaces the classic input activation, for aligning with templates.
    pub fn classic_with_input(&self, act: Activation) -> ClassicModel {
        ClassicModel::new(ClassicConfig {
            input_activation: act,
            ..self.spec.classic()
        })
    }
}
