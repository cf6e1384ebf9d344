//! Graph exports and gradient-based explanations of grounded models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, bce_grad_logit, forward, Backward, Seed, SeedAt, Tape};
use crate::data::{Dataset, Interaction};
use crate::error::{NsktError, Result};
use crate::facts::{encode_student, Atom, Const, Pred};
use crate::graph::{EdgeLink, GroundedGraph, NodeKind};
use crate::ground::ground;
use crate::model::{parallel_map, Model};
use crate::params::ParamStore;
use crate::template::{RuleFamily, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Dot,
    Json,
}

impl FromStr for GraphFormat {
    type Err = NsktError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            other => Err(NsktError::UnknownFormat(other.to_string())),
        }
    }
}

fn shape(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Fact | NodeKind::Embedding => "house",
        NodeKind::Rule => "ellipse",
        NodeKind::Aggregation => "diamond",
        NodeKind::Query => "box",
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn edge_label(graph: &GroundedGraph, link: EdgeLink, params: Option<&ParamStore>) -> Option<String> {
    let EdgeLink::Weighted(p) = link else {
        return None;
    };
    let name = &graph.params[p as usize].name;
    let value = params.and_then(|s| s.get(name)).map(|w| {
        if w.values.len() == 1 {
            format!("{:.2}", w.values[0])
        } else {
            format!("|{:.2}|", w.norm())
        }
    });
    Some(match value {
        Some(v) => format!("{name}={v}"),
        None => name.clone(),
    })
}

/// Serialises a grounded graph. Weighted edges carry the parameter name and,
/// when `params` is given, the scalar weight or the matrix norm.
pub fn export_graph(graph: &GroundedGraph, format: GraphFormat, params: Option<&ParamStore>) -> Result<String> {
    match format {
        GraphFormat::Json => Ok(serde_json::to_string_pretty(graph)?),
        GraphFormat::Dot => {
            let mut out = String::new();
            writeln!(out, "digraph student_{} {{", graph.student).unwrap();
            writeln!(out, "  rankdir=BT;").unwrap();
            for (i, n) in graph.nodes.iter().enumerate() {
                let mut attrs = format!("label={}, shape={}", quote(&n.atom.to_string()), shape(n.kind));
                if let Some(f) = n.family {
                    write!(attrs, ", tooltip={}", quote(f.name())).unwrap();
                }
                if n.kind == NodeKind::Fact && n.dim == 0 {
                    attrs.push_str(", style=dashed");
                }
                writeln!(out, "  n{i} [{attrs}];").unwrap();
            }
            for (i, n) in graph.nodes.iter().enumerate() {
                for e in &n.inputs {
                    let mut attrs = String::new();
                    if e.link == EdgeLink::Symbolic {
                        attrs.push_str("style=dotted");
                    }
                    if let Some(l) = edge_label(graph, e.link, params) {
                        attrs = format!("label={}", quote(&l));
                    }
                    if attrs.is_empty() {
                        writeln!(out, "  n{} -> n{i};", e.from).unwrap();
                    } else {
                        writeln!(out, "  n{} -> n{i} [{attrs}];", e.from).unwrap();
                    }
                }
            }
            out.push_str("}\n");
            Ok(out)
        }
    }
}

pub fn parse_graph_json(text: &str) -> Result<GroundedGraph> {
    Ok(serde_json::from_str(text)?)
}

/// Quantity whose gradient drives an explanation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// BCE loss of the query against its label.
    #[default]
    Loss,
    Probability,
    Logit,
}

impl FromStr for Target {
    type Err = NsktError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(Target::Loss),
            "probability" => Ok(Target::Probability),
            "logit" => Ok(Target::Logit),
            other => Err(NsktError::Config(format!("unknown explanation target `{other}`"))),
        }
    }
}

fn seed(target: Target, node: u32, prob: f64, label: bool) -> Seed {
    let (grad, at) = match target {
        Target::Loss => (bce_grad_logit(prob, label), SeedAt::PreActivation),
        Target::Probability => (1.0, SeedAt::Output),
        Target::Logit => (1.0, SeedAt::PreActivation),
    };
    Seed { node, grad, at }
}

fn time_of(atom: &Atom) -> Option<u32> {
    match atom.args[0] {
        Const::Time(t) => Some(t),
        _ => None,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient-times-input score of one leaf occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactScore {
    pub fact: String,
    pub consumer: String,
    /// Interaction step the occurrence belongs to, if any.
    pub t: Option<u32>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub t: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub student: u32,
    pub t_star: u32,
    pub query: String,
    pub target: Target,
    pub prob: f64,
    pub label: bool,
    /// One entry per step before `t_star`.
    pub contributions: Vec<Contribution>,
    pub facts: Vec<FactScore>,
}

/// The step an occurrence is charged to: the step of the fact itself for
/// correctness facts, the step of the combined embedding for skill and quiz
/// embeddings.
fn occurrence_step(graph: &GroundedGraph, leaf: u32, consumer: u32) -> Option<u32> {
    let l = &graph.nodes[leaf as usize];
    match l.atom.pred {
        Pred::CorrectInput => time_of(&l.atom),
        Pred::Skill | Pred::Quiz => {
            let c = &graph.nodes[consumer as usize];
            (c.atom.pred == Pred::CombinedEmbed).then(|| time_of(&c.atom)).flatten()
        }
        _ => None,
    }
}

fn fact_scores(graph: &GroundedGraph, tape: &Tape, back: &Backward) -> Vec<FactScore> {
    back.occurrences
        .iter()
        .rev()
        .map(|o| FactScore {
            fact: graph.nodes[o.leaf as usize].atom.to_string(),
            consumer: graph.nodes[o.consumer as usize].atom.to_string(),
            t: occurrence_step(graph, o.leaf, o.consumer),
            score: dot(&o.grad, tape.value(o.leaf)),
        })
        .collect()
}

fn per_step(facts: &[FactScore], steps: u32) -> Vec<Contribution> {
    let mut out: Vec<Contribution> = (0..steps).map(|t| Contribution { t, score: 0.0 }).collect();
    for f in facts {
        if let Some(t) = f.t.filter(|t| *t < steps) {
            out[t as usize].score += f.score;
        }
    }
    out
}

fn grounded(model: &Model) -> Result<Template> {
    model
        .template()
        .ok_or_else(|| NsktError::Config(format!("explanations need a grounded model, not {}", model.kind())))
}

struct Prepared {
    graph: GroundedGraph,
    resolved: Vec<usize>,
    tape: Tape,
}

fn prepare(template: &Template, params: &ParamStore, seq: &[Interaction]) -> Result<Prepared> {
    let graph = ground(template, &encode_student(seq, template.context())?)?;
    let resolved = params.resolve(&graph)?;
    let tape = forward(&graph, params, &resolved)?;
    Ok(Prepared { graph, resolved, tape })
}

impl Prepared {
    fn backward(&self, params: &ParamStore, seeds: &[Seed]) -> Backward {
        let mut grads = params.zero_grads();
        backward(&self.graph, params, &self.resolved, &self.tape, seeds, &mut grads, true)
    }

    fn all_seeds(&self, target: Target) -> Vec<Seed> {
        self.graph
            .queries
            .iter()
            .map(|(q, n)| seed(target, *n, self.tape.scalar(*n), q.label))
            .collect()
    }
}

/// Gradient-times-input attribution of the prediction for step `t_star`.
pub fn local_attribution(model: &Model, seq: &[Interaction], t_star: u32, target: Target) -> Result<Attribution> {
    let template = grounded(model)?;
    let invalid = || NsktError::InvalidStep {
        step: t_star as usize,
        len: seq.len(),
    };
    if seq.len() < 2 || t_star == 0 || t_star as usize >= seq.len() {
        return Err(invalid());
    }
    let prep = prepare(&template, &model.params, seq)?;
    let (query, node) = *prep.graph.queries.iter().find(|(q, _)| q.t == t_star).ok_or_else(invalid)?;
    let prob = prep.tape.scalar(node);
    let back = prep.backward(&model.params, &[seed(target, node, prob, query.label)]);
    let facts = fact_scores(&prep.graph, &prep.tape, &back);
    Ok(Attribution {
        student: prep.graph.student,
        t_star,
        query: query.atom().to_string(),
        target,
        prob,
        label: query.label,
        contributions: per_step(&facts, t_star),
        facts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub name: String,
    pub raw: f64,
    pub share: f64,
    /// Min-max scaled within its list.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub skills: Vec<Importance>,
    pub quizzes: Vec<Importance>,
}

fn rank(names: &[String], sums: &[f64], counts: &[usize]) -> Vec<Importance> {
    let raw: Vec<f64> = sums
        .iter()
        .zip(counts)
        .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
        .collect();
    let total: f64 = raw.iter().sum();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<Importance> = names
        .iter()
        .zip(&raw)
        .map(|(name, &r)| Importance {
            name: name.clone(),
            raw: r,
            share: if total > 0.0 { r / total } else { 0.0 },
            normalized: if hi > lo {
                (r - lo) / (hi - lo)
            } else if hi > 0.0 {
                1.0
            } else {
                0.0
            },
        })
        .collect();
    out.sort_by(|a, b| b.raw.total_cmp(&a.raw).then_with(|| a.name.cmp(&b.name)));
    out
}

/// Mean L2 norm of the loss gradient at every skill and quiz embedding
/// occurrence in the support of each query, over all queries.
pub fn global_importance(model: &Model, ds: &Dataset, workers: usize) -> Result<GlobalImportance> {
    let template = grounded(model)?;
    let n_skills = ds.vocab.n_skills();
    let n_quizzes = ds.vocab.n_quizzes();
    let per_student = parallel_map(&ds.students, workers, |seq| -> Result<_> {
        let prep = prepare(&template, &model.params, seq)?;
        let g = &prep.graph;
        let mut skill = (vec![0.0; n_skills], vec![0usize; n_skills]);
        let mut quiz = (vec![0.0; n_quizzes], vec![0usize; n_quizzes]);
        for (q, node) in &g.queries {
            let s = seed(Target::Loss, *node, prep.tape.scalar(*node), q.label);
            let back = prep.backward(&model.params, &[s]);
            let mut norms: BTreeMap<(u32, u32), f64> = BTreeMap::new();
            for o in &back.occurrences {
                norms.insert((o.leaf, o.consumer), o.grad.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            let inside = g.ancestors(*node);
            for (c, consumer) in g.nodes.iter().enumerate() {
                if !inside[c] {
                    continue;
                }
                for e in consumer.inputs.iter() {
                    let leaf = &g.nodes[e.from as usize];
                    let slot = match (leaf.atom.pred, leaf.atom.args[0]) {
                        (Pred::Skill, Const::Skill(i)) => (&mut skill, i as usize),
                        (Pred::Quiz, Const::Quiz(i)) => (&mut quiz, i as usize),
                        _ => continue,
                    };
                    let (sums, counts) = slot.0;
                    if slot.1 < counts.len() {
                        sums[slot.1] += norms.get(&(e.from, c as u32)).copied().unwrap_or(0.0);
                        counts[slot.1] += 1;
                    }
                }
            }
        }
        Ok((skill, quiz))
    });
    let mut skill = (vec![0.0; n_skills], vec![0usize; n_skills]);
    let mut quiz = (vec![0.0; n_quizzes], vec![0usize; n_quizzes]);
    for r in per_student {
        let (s, q) = r?;
        for (acc, part) in [(&mut skill, s), (&mut quiz, q)] {
            acc.0.iter_mut().zip(&part.0).for_each(|(a, b)| *a += b);
            acc.1.iter_mut().zip(&part.1).for_each(|(a, b)| *a += b);
        }
    }
    Ok(GlobalImportance {
        skills: rank(&ds.vocab.skill_names, &skill.0, &skill.1),
        quizzes: rank(&ds.vocab.quiz_names, &quiz.0, &quiz.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleImportance {
    pub rule: String,
    pub avg_abs_val: f64,
    pub avg_abs_grad: f64,
    pub count: usize,
}

pub const RULE_IMPORTANCE_HEADER: [&str; 4] = ["rule", "avg|val|", "avg|grad|", "count"];

const RULE_ROWS: [(Pred, RuleFamily); 3] = [
    (Pred::AvgEmbed, RuleFamily::AvgEmbed),
    (Pred::Mastered, RuleFamily::Mastered),
    (Pred::NotMastered, RuleFamily::NotMastered),
];

fn mean_abs(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
    }
}

/// Mean absolute activation and loss gradient of every grounded
/// `avg_embed`, `mastered` and `not_mastered` atom, one row per family.
pub fn rule_importance(model: &Model, ds: &Dataset, workers: usize) -> Result<Vec<RuleImportance>> {
    let template = grounded(model)?;
    let per_student = parallel_map(&ds.students, workers, |seq| -> Result<_> {
        let prep = prepare(&template, &model.params, seq)?;
        let q = prep.graph.queries.len().max(1) as f64;
        let mut seeds = prep.all_seeds(Target::Loss);
        seeds.iter_mut().for_each(|s| s.grad /= q);
        let back = prep.backward(&model.params, &seeds);
        let mut rows = [(0.0, 0.0, 0usize); 3];
        for (i, n) in prep.graph.nodes.iter().enumerate() {
            if !n.representative {
                continue;
            }
            if let Some(k) = RULE_ROWS.iter().position(|(p, _)| *p == n.atom.pred) {
                rows[k].0 += mean_abs(prep.tape.value(i as u32));
                rows[k].1 += mean_abs(back.adjoint(&prep.tape, i as u32));
                rows[k].2 += 1;
            }
        }
        Ok(rows)
    });
    let mut total = [(0.0, 0.0, 0usize); 3];
    for r in per_student {
        for (acc, part) in total.iter_mut().zip(r?) {
            acc.0 += part.0;
            acc.1 += part.1;
            acc.2 += part.2;
        }
    }
    Ok(RULE_ROWS
        .iter()
        .zip(total)
        .map(|((_, family), (val, grad, count))| {
            let c = count.max(1) as f64;
            RuleImportance {
                rule: family.name().to_string(),
                avg_abs_val: val / c,
                avg_abs_grad: grad / c,
                count,
            }
        })
        .collect())
}

pub fn write_rule_importance(rows: &[RuleImportance], comments: &[String], mut out: impl std::io::Write) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{}", RULE_IMPORTANCE_HEADER.join(","))?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.rule, r.avg_abs_val, r.avg_abs_grad, r.count)?;
    }
    Ok(())
}

/// Per-step scores of one student summed over all of its queries.
pub fn student_step_scores(model: &Model, seq: &[Interaction], target: Target) -> Result<Vec<Contribution>> {
    let template = grounded(model)?;
    let prep = prepare(&template, &model.params, seq)?;
    let back = prep.backward(&model.params, &prep.all_seeds(target));
    Ok(per_step(&fact_scores(&prep.graph, &prep.tape, &back), seq.len() as u32))
}

/// Skill-by-step matrix: cell `[s][t]` is the mean, over students whose
/// sequence reaches step `t`, of the summed attribution of step `t` when
/// that step exercises skill `s`.
pub fn skill_time_heatmap(model: &Model, ds: &Dataset, max_t: usize, target: Target, workers: usize) -> Result<Vec<Vec<f64>>> {
    let scores = parallel_map(&ds.students, workers, |seq| student_step_scores(model, seq, target));
    let mut cells = vec![vec![0.0; max_t]; ds.vocab.n_skills()];
    let mut present = vec![0usize; max_t];
    for (seq, s) in ds.students.iter().zip(scores) {
        for c in s? {
            let t = c.t as usize;
            if t < max_t {
                cells[seq[t].skill as usize][t] += c.score;
                present[t] += 1;
            }
        }
    }
    for row in &mut cells {
        for (v, n) in row.iter_mut().zip(&present) {
            if *n > 0 {
                *v /= *n as f64;
            }
        }
    }
    Ok(cells)
}

pub fn write_heatmap(cells: &[Vec<f64>], names: &[String], comments: &[String], mut out: impl std::io::Write) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let width = cells.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("skill".to_string()).chain((0..width).map(|t| t.to_string())).collect();
    writeln!(out, "{}", header.join(","))?;
    for (name, row) in names.iter().zip(cells) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{name},{}", vals.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, Vocab};
    use crate::facts::Context;
    use crate::model::{ModelKind, ModelSpec};
    use crate::params::TableSizes;
    use crate::template::{Activation, RuleConfig};

    fn seq(items: &[(u32, u32, bool)]) -> Vec<Interaction> {
        items
            .iter()
            .enumerate()
            .map(|(t, &(skill, quiz, correct))| Interaction {
                student: 0,
                t: t as u32,
                skill,
                quiz,
                correct,
            })
            .collect()
    }

    fn model(kind: ModelKind, d: usize, skills: usize, quizzes: usize, seed: u64) -> Model {
        let spec = ModelSpec {
            embedding_dim: d,
            rnn_layers: 1,
            ..ModelSpec::new(kind)
        };
        Model::new(spec, TableSizes { skills, quizzes }, seed)
    }

    fn zero(m: &mut Model, names: &[&str]) {
        for n in names {
            m.params.get_mut(n).unwrap().values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn format_names() {
        assert_eq!("dot".parse::<GraphFormat>().unwrap(), GraphFormat::Dot);
        assert!(matches!("svg".parse::<GraphFormat>(), Err(NsktError::UnknownFormat(_))));
    }

    #[test]
    fn dot_shapes_and_mastery_ellipses() {
        let s = seq(&[(0, 0, true), (0, 0, true), (0, 0, true)]);
        let rules = RuleConfig {
            k_pos: 1,
            k_neg: 1,
            ..RuleConfig::default()
        };
        let t = crate::template::build_responsible_template(1, 1, rules);
        let g = ground(&t, &encode_student(&s[..2], Context::Quiz).unwrap()).unwrap();
        let dot = export_graph(&g, GraphFormat::Dot, None).unwrap();
        let mastered = dot.lines().filter(|l| l.contains("label=\"mastered(") && l.contains("shape=ellipse")).count();
        assert_eq!(mastered, 1);
        assert!(dot.contains("shape=box") && dot.contains("shape=house"));

        let base = crate::template::build_base_template(1, 1);
        let g = ground(&base, &encode_student(&s, Context::Quiz).unwrap()).unwrap();
        let dot = export_graph(&g, GraphFormat::Dot, None).unwrap();
        assert!(!dot.contains("mastered("));
    }

    #[test]
    fn dot_prints_scalar_weights() {
        let m = model(ModelKind::Responsible, 1, 1, 1, 4);
        let g = ground(&m.template().unwrap(), &encode_student(&seq(&[(0, 0, true), (0, 0, false)]), Context::Quiz).unwrap()).unwrap();
        let dot = export_graph(&g, GraphFormat::Dot, Some(&m.params)).unwrap();
        let w = m.params.get("w_combine_quiz").unwrap().values[0];
        assert!(dot.contains(&format!("w_combine_quiz={w:.2}")));
    }

    #[test]
    fn zero_model_attributions_vanish() {
        let mut m = model(ModelKind::Responsible, 3, 2, 2, 1);
        for i in 0..m.params.len() {
            m.params.by_index_mut(i).values.iter_mut().for_each(|v| *v = 0.0);
        }
        let s = seq(&[(0, 0, true), (1, 1, false), (0, 0, true), (0, 0, false)]);
        for target in [Target::Loss, Target::Probability, Target::Logit] {
            let a = local_attribution(&m, &s, 3, target).unwrap();
            assert_eq!(a.contributions.len(), 3);
            assert!(a.contributions.iter().all(|c| c.score == 0.0));
        }
    }

    #[test]
    fn invalid_steps_are_rejected() {
        let m = model(ModelKind::Responsible, 2, 1, 1, 1);
        let s = seq(&[(0, 0, true), (0, 0, false)]);
        for t in [0, 2, 9] {
            assert!(matches!(local_attribution(&m, &s, t, Target::Loss), Err(NsktError::InvalidStep { .. })));
        }
        let c = model(ModelKind::Classic, 2, 1, 1, 1);
        assert!(local_attribution(&c, &s, 1, Target::Loss).is_err());
    }

    #[test]
    fn not_mastered_pathway_touches_only_its_window() {
        let mut m = model(ModelKind::Responsible, 4, 1, 1, 9);
        zero(&mut m, &["w_nn_head", "w_avg_head", "rule_mastered"]);
        let s = seq(&[(0, 0, true), (0, 0, true), (0, 0, false), (0, 0, false), (0, 0, false), (0, 0, true)]);
        let a = local_attribution(&m, &s, 5, Target::Loss).unwrap();
        let nonzero: Vec<u32> = a.contributions.iter().filter(|c| c.score != 0.0).map(|c| c.t).collect();
        assert_eq!(nonzero, vec![2, 3, 4]);
    }

    #[test]
    fn linear_graph_attributions_sum_to_logit() {
        let mut spec = ModelSpec {
            embedding_dim: 3,
            rnn_layers: 2,
            ..ModelSpec::new(ModelKind::Responsible)
        };
        spec.rules = RuleConfig {
            k_pos: 1,
            k_neg: 1,
            ..RuleConfig::default()
        };
        let m = Model::new(spec, TableSizes { skills: 2, quizzes: 3 }, 11);
        let mut t = m.template().unwrap();
        t.rules.iter_mut().for_each(|r| r.activation = Activation::Identity);
        let s = seq(&[(0, 0, true), (1, 2, false), (0, 0, true), (1, 1, true), (0, 0, false)]);
        let mut g = ground(&t, &encode_student(&s, Context::Quiz).unwrap()).unwrap();
        g.nodes.iter_mut().for_each(|n| n.activation = Activation::Identity);
        let resolved = m.params.resolve(&g).unwrap();
        let tape = forward(&g, &m.params, &resolved).unwrap();
        let (_, node) = g.queries[3];
        let mut grads = m.params.zero_grads();
        let seeds = [Seed {
            node,
            grad: 1.0,
            at: SeedAt::PreActivation,
        }];
        let back = backward(&g, &m.params, &resolved, &tape, &seeds, &mut grads, true);
        let total: f64 = (0..g.len() as u32)
            .filter(|&i| g.nodes[i as usize].is_leaf())
            .map(|i| dot(back.adjoint(&tape, i), tape.value(i)))
            .sum();
        let logit = tape.scalar(node);
        assert!((total - logit).abs() < 1e-10, "{total} vs {logit}");
        assert!(logit.abs() > 1e-6);
    }

    fn dataset(students: Vec<Vec<Interaction>>, skills: usize, quizzes: usize) -> Dataset {
        let n = students.len();
        let students = students
            .into_iter()
            .enumerate()
            .map(|(u, s)| s.into_iter().map(|i| Interaction { student: u as u32, ..i }).collect())
            .collect();
        Dataset::new(students, Vocab::with_counts(skills, quizzes, n), Provenance::Synthetic { seed: 0 }).unwrap()
    }

    #[test]
    fn heatmap_columns_match_local_attributions() {
        let m = model(ModelKind::Responsible, 3, 2, 3, 5);
        let ds = dataset(
            vec![
                seq(&[(0, 0, true), (1, 1, false), (0, 0, false), (1, 2, true)]),
                seq(&[(1, 2, false), (1, 2, false), (0, 1, true)]),
            ],
            2,
            3,
        );
        let max_t = 4;
        let h = skill_time_heatmap(&m, &ds, max_t, Target::Loss, 1).unwrap();
        for t in 0..max_t {
            let mut sum = 0.0;
            let mut present = 0;
            for s in &ds.students {
                if t < s.len() {
                    present += 1;
                }
                for t_star in (t + 1)..s.len() {
                    sum += local_attribution(&m, s, t_star as u32, Target::Loss).unwrap().contributions[t].score;
                }
            }
            let col: f64 = h.iter().map(|row| row[t]).sum();
            assert!((col - sum / present as f64).abs() < 1e-12, "step {t}: {col} vs {}", sum / present as f64);
        }
    }

    #[test]
    fn global_importance_edges() {
        let m = model(ModelKind::Responsible, 3, 3, 2, 2);
        let ds = dataset(vec![seq(&[(1, 0, true), (1, 1, false), (1, 0, true)])], 3, 2);
        let g = global_importance(&m, &ds, 1).unwrap();
        assert_eq!(g.skills[0].name, ds.vocab.skill_names[1]);
        assert!((g.skills[0].share - 1.0).abs() < 1e-12);
        assert!(g.skills[1..].iter().all(|s| s.raw == 0.0));
        assert_eq!(g.skills[0].normalized, 1.0);
    }

    #[test]
    fn rule_counts_follow_groundings() {
        let m = model(ModelKind::Responsible, 2, 1, 1, 3);
        let s = seq(&[(0, 0, false), (0, 0, false), (0, 0, false), (0, 0, false), (0, 0, true), (0, 0, true)]);
        let ds = dataset(vec![s.clone()], 1, 1);
        let rows = rule_importance(&m, &ds, 1).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.rule.as_str()).collect();
        assert_eq!(names, ["avg_embed", "mastered", "not_mastered"]);
        // Queries at 1..=5; not_mastered needs three prior errors (t=3,4),
        // mastered two prior successes (none before t=6).
        assert_eq!(rows[1].count, 0);
        assert_eq!(rows[2].count, 2);
        assert_eq!(rows[0].count, 5);

        let b = model(ModelKind::Basens, 2, 1, 1, 3);
        let rows = rule_importance(&b, &ds, 1).unwrap();
        assert_eq!(rows[1].count + rows[2].count, 0);
    }
}
