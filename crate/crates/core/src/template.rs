//! Lifted weighted-rule templates.
//!
//! A template is an ordered list of rules over the predicates in
//! [`crate::facts::Pred`]. Body literals say how the matched atom feeds the
//! rule neuron: through a learnable weight, as an unweighted value, as a
//! purely symbolic link, or only as a join condition that never becomes an
//! edge in the grounded graph.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::facts::{Atom, Const, Context, Pred};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Var(u8),
    Const(Const),
}

/// Upper bound on distinct variables in one rule.
pub const MAX_VARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomPattern {
    pub pred: Pred,
    pub args: [Term; 2],
}

impl AtomPattern {
    pub fn new(pred: Pred, args: &[Term]) -> Self {
        assert_eq!(args.len(), pred.arity(), "arity mismatch for {}", pred.name());
        let mut full = [Term::Const(Const::Unit); 2];
        full[..args.len()].copy_from_slice(args);
        AtomPattern { pred, args: full }
    }

    pub fn terms(&self) -> &[Term] {
        &self.args[..self.pred.arity()]
    }

    pub fn vars(&self) -> impl Iterator<Item = u8> + '_ {
        self.terms().iter().filter_map(|t| match t {
            Term::Var(v) => Some(*v),
            Term::Const(_) => None,
        })
    }

    /// Instantiates the pattern; `None` when a variable is unbound.
    pub fn ground(&self, binding: &Binding) -> Option<Atom> {
        let mut atom = Atom::new0(self.pred);
        for (slot, term) in self.terms().iter().enumerate() {
            atom.args[slot] = match term {
                Term::Const(c) => *c,
                Term::Var(v) => binding[*v as usize]?,
            };
        }
        Some(atom)
    }

    /// Unifies the pattern with a ground atom, extending `binding` in place.
    pub fn unify(&self, atom: &Atom, binding: &mut Binding) -> bool {
        if atom.pred != self.pred {
            return false;
        }
        for (slot, term) in self.terms().iter().enumerate() {
            match term {
                Term::Const(c) => {
                    if atom.args[slot] != *c {
                        return false;
                    }
                }
                Term::Var(v) => match binding[*v as usize] {
                    Some(bound) if bound != atom.args[slot] => return false,
                    Some(_) => {}
                    None => binding[*v as usize] = Some(atom.args[slot]),
                },
            }
        }
        true
    }
}

pub type Binding = [Option<Const>; MAX_VARS];

impl fmt::Display for AtomPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [&str; MAX_VARS] = ["T", "X", "I", "P"];
        f.write_str(&self.pred.name())?;
        if self.pred.arity() > 0 {
            let args: Vec<String> = self
                .terms()
                .iter()
                .map(|t| match t {
                    Term::Var(v) => NAMES[*v as usize].to_string(),
                    Term::Const(c) => c.to_string(),
                })
                .collect();
            write!(f, "({})", args.join(", "))?;
        }
        Ok(())
    }
}

/// How a body atom feeds its rule neuron.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Link {
    /// Multiplied by the named learnable parameter.
    Weighted(String),
    /// Added unchanged.
    Pass,
    /// Drawn as a dependency but contributes no value.
    Symbolic,
    /// Used only to bind variables; never an edge.
    Join,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Average,
}

/// Output width of a rule neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    Embed,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFamily {
    InputEmbed,
    Combine,
    RnnInit,
    Rnn,
    FinalNn,
    AvgEmbed,
    Mastered,
    NotMastered,
    OutputNn,
    OutputAvg,
    OutputMastered,
    OutputNotMastered,
}

impl RuleFamily {
    pub fn name(self) -> &'static str {
        match self {
            RuleFamily::InputEmbed => "input_embed",
            RuleFamily::Combine => "combine",
            RuleFamily::RnnInit => "rnn_init",
            RuleFamily::Rnn => "rnn",
            RuleFamily::FinalNn => "final_nn",
            RuleFamily::AvgEmbed => "avg_embed",
            RuleFamily::Mastered => "mastered",
            RuleFamily::NotMastered => "not_mastered",
            RuleFamily::OutputNn => "output_nn",
            RuleFamily::OutputAvg => "output_avg",
            RuleFamily::OutputMastered => "output_mastered",
            RuleFamily::OutputNotMastered => "output_not_mastered",
        }
    }

    /// The symbolic rule set the ablation removes.
    pub fn is_mastery(self) -> bool {
        matches!(
            self,
            RuleFamily::Mastered
                | RuleFamily::NotMastered
                | RuleFamily::OutputMastered
                | RuleFamily::OutputNotMastered
        )
    }
}

/// Fires for `(x, t)` when the `k` most recent attempts on concept `x`
/// strictly before `t` all carry `token`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub concept: Pred,
    pub token: Const,
    pub k: usize,
    /// Weight on each supporting `correct_input` edge.
    pub weight: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleBody {
    Conjunction(Vec<BodyLiteral>),
    Window(Window),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BodyLiteral {
    pub atom: AtomPattern,
    pub link: Link,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LiftedRule {
    pub family: RuleFamily,
    pub head: AtomPattern,
    pub body: RuleBody,
    pub activation: Activation,
    /// How several groundings of one head atom are combined.
    pub aggregation: Aggregation,
    pub out_dim: Dim,
    /// Weight on the edge from each grounding into its head atom.
    pub head_weight: Option<String>,
}

impl LiftedRule {
    /// Parameters referenced by the rule.
    pub fn params(&self) -> Vec<&str> {
        let mut out = Vec::new();
        match &self.body {
            RuleBody::Conjunction(lits) => {
                for lit in lits {
                    if let Link::Weighted(p) = &lit.link {
                        out.push(p.as_str());
                    }
                }
            }
            RuleBody::Window(w) => out.push(w.weight.as_str()),
        }
        if let Some(h) = &self.head_weight {
            out.push(h.as_str());
        }
        out
    }
}

impl fmt::Display for LiftedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} :- ", self.head)?;
        match &self.body {
            RuleBody::Conjunction(lits) => {
                let parts: Vec<String> = lits
                    .iter()
                    .map(|l| match &l.link {
                        Link::Weighted(p) => format!("{{{p}}} {}", l.atom),
                        _ => l.atom.to_string(),
                    })
                    .collect();
                f.write_str(&parts.join(", "))
            }
            RuleBody::Window(w) => write!(
                f,
                "last {} attempts on X before T are {} ({{{}}})",
                w.k, w.token, w.weight
            ),
        }
    }
}

/// Row count of a parameter: fixed or one row per vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rows {
    Fixed(usize),
    Skills,
    Quizzes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `(-1/√d, 1/√d)`.
    Uniform,
    /// Magnitude uniform in `(0, 1/√d)` with the given sign.
    Signed(f64),
    Zeros,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: Rows,
    pub cols: usize,
    pub init: Init,
    pub trainable: bool,
}

/// Where an input or embedding atom gets its value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeafSource {
    /// Row of an embedding table selected by the constant in `arg`.
    TableRow { param: String, arg: usize },
    /// A whole parameter (column vector).
    Param(String),
    /// No value; the atom only links.
    Symbolic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LeafSpec {
    pub pred: Pred,
    pub source: LeafSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RuleWeights {
    Learnable,
    Fixed { mastered: f64, not_mastered: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    /// Consecutive correct attempts that trigger `mastered`.
    pub k_pos: usize,
    /// Consecutive incorrect attempts that trigger `not_mastered`.
    pub k_neg: usize,
    pub rule_weights: RuleWeights,
    pub rules_enabled: bool,
    pub avg_enabled: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            k_pos: 2,
            k_neg: 3,
            rule_weights: RuleWeights::Learnable,
            rules_enabled: true,
            avg_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub embedding_dim: usize,
    pub rnn_layers: usize,
    pub context: Context,
    pub rules: RuleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub spec: TemplateSpec,
    pub rules: Vec<LiftedRule>,
    pub params: Vec<ParamSpec>,
    pub leaves: Vec<LeafSpec>,
}

const T: Term = Term::Var(0);
const X: Term = Term::Var(1);
const I: Term = Term::Var(2);
const P: Term = Term::Var(3);

fn lit(pred: Pred, args: &[Term], link: Link) -> BodyLiteral {
    BodyLiteral {
        atom: AtomPattern::new(pred, args),
        link,
    }
}

fn w(name: &str) -> Link {
    Link::Weighted(name.to_string())
}

impl Template {
    /// Builds the template for a spec. Thresholds and rule-weight settings
    /// are normalised away when the symbolic rules are disabled.
    pub fn build(mut spec: TemplateSpec) -> Template {
        assert!(spec.embedding_dim >= 1, "embedding dimension must be positive");
        assert!(spec.rnn_layers >= 1, "at least one recurrent layer is required");
        if !spec.rules.rules_enabled {
            let avg_enabled = spec.rules.avg_enabled;
            spec.rules = RuleConfig {
                rules_enabled: false,
                avg_enabled,
                ..RuleConfig::default()
            };
        }
        assert!(spec.rules.k_pos >= 1 && spec.rules.k_neg >= 1, "rule thresholds must be positive");

        let d = spec.embedding_dim;
        let ctx_input = spec.context.input_pred();
        let ctx_embed = spec.context.embedding_pred();
        let mut rules = Vec::new();
        let mut params = Vec::new();
        let mut param = |name: String, rows: Rows, cols: usize, init: Init, trainable: bool| {
            params.push(ParamSpec {
                name,
                rows,
                cols,
                init,
                trainable,
            });
        };

        param("emb_skill".into(), Rows::Skills, d, Init::Uniform, true);
        param("emb_quiz".into(), Rows::Quizzes, d, Init::Uniform, true);
        param("emb_correct".into(), Rows::Fixed(2), d, Init::Uniform, true);
        for name in ["w_combine_quiz", "w_combine_skill", "w_combine_correct"] {
            param(name.into(), Rows::Fixed(d), d, Init::Uniform, true);
        }

        rules.push(LiftedRule {
            family: RuleFamily::InputEmbed,
            head: AtomPattern::new(Pred::CorrectInputEmbed, &[T]),
            body: RuleBody::Conjunction(vec![lit(Pred::CorrectInput, &[T, X], Link::Pass)]),
            activation: Activation::Identity,
            aggregation: Aggregation::Sum,
            out_dim: Dim::Embed,
            head_weight: None,
        });
        rules.push(LiftedRule {
            family: RuleFamily::Combine,
            head: AtomPattern::new(Pred::CombinedEmbed, &[T]),
            body: RuleBody::Conjunction(vec![
                lit(Pred::QuizInput, &[T, X], Link::Join),
                lit(Pred::Quiz, &[X], w("w_combine_quiz")),
                lit(Pred::SkillInput, &[T, I], Link::Join),
                lit(Pred::Skill, &[I], w("w_combine_skill")),
                lit(Pred::CorrectInputEmbed, &[T], w("w_combine_correct")),
            ]),
            activation: Activation::Sigmoid,
            aggregation: Aggregation::Sum,
            out_dim: Dim::Embed,
            head_weight: None,
        });

        for l in 1..=spec.rnn_layers as u8 {
            let h0 = format!("rnn_{l}_h0");
            let init_w = format!("w_rnn_{l}_init");
            let in_w = format!("w_rnn_{l}_in");
            let hh_w = format!("w_rnn_{l}_hh");
            param(h0.clone(), Rows::Fixed(d), 1, Init::Zeros, true);
            for name in [&init_w, &in_w, &hh_w] {
                param(name.clone(), Rows::Fixed(d), d, Init::Uniform, true);
            }
            rules.push(LiftedRule {
                family: RuleFamily::RnnInit,
                head: AtomPattern::new(Pred::RnnOut(l), &[Term::Const(Const::Time(0))]),
                body: RuleBody::Conjunction(vec![lit(Pred::RnnH0(l), &[], Link::Weighted(init_w))]),
                activation: Activation::Tanh,
                aggregation: Aggregation::Sum,
                out_dim: Dim::Embed,
                head_weight: None,
            });
            // Layer 1 reads the previous step's combined embedding; deeper
            // layers read the layer below at the current step.
            let input = if l == 1 {
                lit(Pred::CombinedEmbed, &[P], Link::Weighted(in_w))
            } else {
                lit(Pred::RnnOut(l - 1), &[T], Link::Weighted(in_w))
            };
            let body = if l == 1 {
                vec![
                    lit(Pred::RnnOut(l), &[P], Link::Weighted(hh_w)),
                    input,
                    lit(Pred::Next, &[P, T], Link::Join),
                ]
            } else {
                vec![
                    lit(Pred::RnnOut(l), &[P], Link::Weighted(hh_w)),
                    lit(Pred::Next, &[P, T], Link::Join),
                    input,
                ]
            };
            rules.push(LiftedRule {
                family: RuleFamily::Rnn,
                head: AtomPattern::new(Pred::RnnOut(l), &[T]),
                body: RuleBody::Conjunction(body),
                activation: Activation::Tanh,
                aggregation: Aggregation::Sum,
                out_dim: Dim::Embed,
                head_weight: None,
            });
        }
        rules.push(LiftedRule {
            family: RuleFamily::FinalNn,
            head: AtomPattern::new(Pred::FinalNnOut, &[T]),
            body: RuleBody::Conjunction(vec![lit(Pred::RnnOut(spec.rnn_layers as u8), &[T], Link::Pass)]),
            activation: Activation::Identity,
            aggregation: Aggregation::Sum,
            out_dim: Dim::Embed,
            head_weight: None,
        });

        param("w_nn_out".into(), Rows::Fixed(d), d, Init::Uniform, true);
        param("w_nn_head".into(), Rows::Fixed(1), d, Init::Uniform, true);
        let mut outputs = vec![LiftedRule {
            family: RuleFamily::OutputNn,
            head: AtomPattern::new(Pred::Correct, &[T, X]),
            body: RuleBody::Conjunction(vec![
                lit(Pred::FinalNnOut, &[T], w("w_nn_out")),
                lit(ctx_embed, &[X], Link::Pass),
            ]),
            activation: Activation::Identity,
            aggregation: Aggregation::Sum,
            out_dim: Dim::Embed,
            head_weight: Some("w_nn_head".into()),
        }];

        if spec.rules.avg_enabled {
            param("w_avg".into(), Rows::Fixed(d), d, Init::Uniform, true);
            param("w_avg_out".into(), Rows::Fixed(d), d, Init::Uniform, true);
            param("w_avg_head".into(), Rows::Fixed(1), d, Init::Uniform, true);
            rules.push(LiftedRule {
                family: RuleFamily::AvgEmbed,
                head: AtomPattern::new(Pred::AvgEmbed, &[T, X]),
                body: RuleBody::Conjunction(vec![
                    lit(Pred::CombinedEmbed, &[I], w("w_avg")),
                    lit(ctx_input, &[I, X], Link::Symbolic),
                    lit(Pred::Less, &[I, T], Link::Join),
                ]),
                activation: Activation::Identity,
                aggregation: Aggregation::Average,
                out_dim: Dim::Embed,
                head_weight: None,
            });
            outputs.push(LiftedRule {
                family: RuleFamily::OutputAvg,
                head: AtomPattern::new(Pred::Correct, &[T, X]),
                body: RuleBody::Conjunction(vec![lit(Pred::AvgEmbed, &[T, X], w("w_avg_out"))]),
                activation: Activation::Identity,
                aggregation: Aggregation::Sum,
                out_dim: Dim::Embed,
                head_weight: Some("w_avg_head".into()),
            });
        }

        if spec.rules.rules_enabled {
            let (fix_pos, fix_neg) = match spec.rules.rule_weights {
                RuleWeights::Learnable => (None, None),
                RuleWeights::Fixed {
                    mastered,
                    not_mastered,
                } => (Some(mastered), Some(not_mastered)),
            };
            for (family, out_family, pred, token, k, fixed, sign, prefix) in [
                (
                    RuleFamily::Mastered,
                    RuleFamily::OutputMastered,
                    Pred::Mastered,
                    Const::Right,
                    spec.rules.k_pos,
                    fix_pos,
                    1.0,
                    "mastered",
                ),
                (
                    RuleFamily::NotMastered,
                    RuleFamily::OutputNotMastered,
                    Pred::NotMastered,
                    Const::Wrong,
                    spec.rules.k_neg,
                    fix_neg,
                    -1.0,
                    "not_mastered",
                ),
            ] {
                let body_w = format!("w_{prefix}");
                let out_w = format!("w_{prefix}_out");
                let rule_w = format!("rule_{prefix}");
                param(body_w.clone(), Rows::Fixed(d), d, Init::Uniform, true);
                param(out_w.clone(), Rows::Fixed(1), d, Init::Uniform, true);
                match fixed {
                    Some(v) => param(rule_w.clone(), Rows::Fixed(1), 1, Init::Constant(v), false),
                    None => param(rule_w.clone(), Rows::Fixed(1), 1, Init::Signed(sign), true),
                }
                rules.push(LiftedRule {
                    family,
                    head: AtomPattern::new(pred, &[X, T]),
                    body: RuleBody::Window(Window {
                        concept: ctx_input,
                        token,
                        k,
                        weight: body_w,
                    }),
                    activation: Activation::Tanh,
                    aggregation: Aggregation::Sum,
                    out_dim: Dim::Embed,
                    head_weight: None,
                });
                outputs.push(LiftedRule {
                    family: out_family,
                    head: AtomPattern::new(Pred::Correct, &[T, X]),
                    body: RuleBody::Conjunction(vec![lit(pred, &[X, T], Link::Weighted(out_w))]),
                    activation: Activation::Sigmoid,
                    aggregation: Aggregation::Sum,
                    out_dim: Dim::Scalar,
                    head_weight: Some(rule_w),
                });
            }
        }
        rules.extend(outputs);

        let mut leaves = vec![
            LeafSpec {
                pred: Pred::CorrectInput,
                source: LeafSource::TableRow {
                    param: "emb_correct".into(),
                    arg: 1,
                },
            },
            LeafSpec {
                pred: Pred::Skill,
                source: LeafSource::TableRow {
                    param: "emb_skill".into(),
                    arg: 0,
                },
            },
            LeafSpec {
                pred: Pred::Quiz,
                source: LeafSource::TableRow {
                    param: "emb_quiz".into(),
                    arg: 0,
                },
            },
            LeafSpec {
                pred: Pred::QuizInput,
                source: LeafSource::Symbolic,
            },
            LeafSpec {
                pred: Pred::SkillInput,
                source: LeafSource::Symbolic,
            },
        ];
        for l in 1..=spec.rnn_layers as u8 {
            leaves.push(LeafSpec {
                pred: Pred::RnnH0(l),
                source: LeafSource::Param(format!("rnn_{l}_h0")),
            });
        }

        let template = Template {
            spec,
            rules,
            params,
            leaves,
        };
        template.validate();
        template
    }

    /// Checks range restriction and that every referenced parameter is declared.
    fn validate(&self) {
        let declared: BTreeSet<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        for rule in &self.rules {
            for p in rule.params() {
                assert!(declared.contains(p), "rule `{rule}` references undeclared `{p}`");
            }
            let RuleBody::Conjunction(lits) = &rule.body else {
                continue;
            };
            let mut bound: BTreeSet<u8> = BTreeSet::new();
            if rule.head.pred == Pred::Correct {
                bound.extend(rule.head.vars());
            }
            for l in lits {
                if l.atom.pred.is_embedding() {
                    assert!(
                        l.atom.vars().all(|v| bound.contains(&v)),
                        "embedding literal {} in `{rule}` must have bound arguments",
                        l.atom
                    );
                }
                bound.extend(l.atom.vars());
            }
            for v in rule.head.vars() {
                assert!(bound.contains(&v), "head variable unbound in `{rule}`");
            }
        }
        let outputs = self
            .rules
            .iter()
            .filter(|r| r.head.pred == Pred::Correct)
            .count();
        assert!(outputs >= 1, "template must produce the correct head");
    }

    pub fn dim(&self) -> usize {
        self.spec.embedding_dim
    }

    pub fn context(&self) -> Context {
        self.spec.context
    }

    pub fn with_context(&self, context: Context) -> Template {
        Template::build(TemplateSpec {
            context,
            ..self.spec
        })
    }

    pub fn with_rules(&self, rules: RuleConfig) -> Template {
        Template::build(TemplateSpec { rules, ..self.spec })
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_names(&self) -> BTreeSet<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn leaf(&self, pred: Pred) -> Option<&LeafSpec> {
        self.leaves.iter().find(|l| l.pred == pred)
    }

    pub fn out_width(&self, dim: Dim) -> usize {
        match dim {
            Dim::Embed => self.spec.embedding_dim,
            Dim::Scalar => 1,
        }
    }
}

/// The knowledge-augmented template: recurrent backbone, history
/// aggregation and mastery rules.
pub fn build_responsible_template(d: usize, rnn_layers: usize, rule_config: RuleConfig) -> Template {
    Template::build(TemplateSpec {
        embedding_dim: d,
        rnn_layers,
        context: Context::Quiz,
        rules: rule_config,
    })
}

/// The ablation: same backbone and history aggregation, no mastery rules.
pub fn build_base_template(d: usize, rnn_layers: usize) -> Template {
    build_responsible_template(
        d,
        rnn_layers,
        RuleConfig {
            rules_enabled: false,
            ..RuleConfig::default()
        },
    )
}
