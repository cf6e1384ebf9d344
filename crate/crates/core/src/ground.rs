//! Bottom-up grounding of a template over a sample's facts, and
//! construction of the pruned computation graph for its queries.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{NsktError, Result};
use crate::facts::{Atom, Const, Pred, Query, Sample};
use crate::graph::{topo_order, Edge, EdgeLink, GroundedGraph, Node, NodeKind, NodeValue, ParamRef};
use crate::template::{
    Activation, Aggregation, Binding, BodyLiteral, LeafSource, LiftedRule, Link, Rows, RuleBody, Template,
    Window, MAX_VARS,
};

/// Interned atoms with lookup indexes. Embedding atoms are interned on
/// first use but never indexed, since rules only look them up by value.
#[derive(Debug, Default, Clone)]
pub struct AtomTable {
    atoms: Vec<Atom>,
    ids: HashMap<Atom, u32>,
    by_pred: HashMap<Pred, Vec<u32>>,
    by_arg: HashMap<(Pred, u8, Const), Vec<u32>>,
}

impl AtomTable {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn get(&self, id: u32) -> Atom {
        self.atoms[id as usize]
    }

    pub fn id(&self, atom: &Atom) -> Option<u32> {
        self.ids.get(atom).copied()
    }

    pub fn with_pred(&self, pred: Pred) -> &[u32] {
        self.by_pred.get(&pred).map_or(&[], Vec::as_slice)
    }

    fn intern(&mut self, atom: Atom) -> (u32, bool) {
        if let Some(&id) = self.ids.get(&atom) {
            return (id, false);
        }
        let id = self.atoms.len() as u32;
        self.atoms.push(atom);
        self.ids.insert(atom, id);
        (id, true)
    }

    fn index(&mut self, id: u32) {
        let atom = self.atoms[id as usize];
        self.by_pred.entry(atom.pred).or_default().push(id);
        for (slot, c) in atom.args().iter().enumerate() {
            self.by_arg.entry((atom.pred, slot as u8, *c)).or_default().push(id);
        }
    }

    fn candidates(&self, pattern_pred: Pred, bound: Option<(u8, Const)>) -> &[u32] {
        match bound {
            Some((slot, c)) => self
                .by_arg
                .get(&(pattern_pred, slot, c))
                .map_or(&[], Vec::as_slice),
            None => self.with_pred(pattern_pred),
        }
    }
}

/// One rule instance: head atom and its ground body, in body order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grounding {
    pub rule: u32,
    pub head: u32,
    pub body: Vec<u32>,
}

/// Result of the fixpoint: every derivable atom and each distinct way to
/// derive it.
#[derive(Debug, Default, Clone)]
pub struct Derivation {
    pub atoms: AtomTable,
    pub groundings: Vec<Grounding>,
    pub by_head: HashMap<u32, Vec<u32>>,
    seen: HashSet<(u32, Vec<u32>)>,
}

impl Derivation {
    fn add(&mut self, rule: u32, head: Atom, body: &[Atom]) -> Option<u32> {
        let body: Vec<u32> = body.iter().map(|a| self.atoms.intern(*a).0).collect();
        if !self.seen.insert((rule, body.clone())) {
            return None;
        }
        let (head, fresh) = self.atoms.intern(head);
        let g = self.groundings.len() as u32;
        self.groundings.push(Grounding { rule, head, body });
        self.by_head.entry(head).or_default().push(g);
        fresh.then_some(head)
    }

    /// Groundings whose head is `atom`.
    pub fn derivations_of(&self, atom: &Atom) -> impl Iterator<Item = &Grounding> {
        self.atoms
            .id(atom)
            .and_then(|id| self.by_head.get(&id))
            .into_iter()
            .flatten()
            .map(|&g| &self.groundings[g as usize])
    }

    pub fn is_derived(&self, atom: &Atom) -> bool {
        self.derivations_of(atom).next().is_some()
    }
}

/// Borrowed view of a body link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkRef<'a> {
    Weighted(&'a str),
    Pass,
    Symbolic,
    Join,
}

impl<'a> From<&'a Link> for LinkRef<'a> {
    fn from(link: &'a Link) -> Self {
        match link {
            Link::Weighted(p) => LinkRef::Weighted(p),
            Link::Pass => LinkRef::Pass,
            Link::Symbolic => LinkRef::Symbolic,
            Link::Join => LinkRef::Join,
        }
    }
}

/// How the body atom at `pos` of a grounding feeds its rule neuron.
pub fn link_at(rule: &LiftedRule, pos: usize, body_len: usize) -> LinkRef<'_> {
    match &rule.body {
        RuleBody::Conjunction(lits) => (&lits[pos].link).into(),
        // correct_input, ctx_input pairs followed by a single less atom.
        RuleBody::Window(_) if pos + 1 == body_len => LinkRef::Join,
        RuleBody::Window(w) if pos.is_multiple_of(2) => LinkRef::Weighted(&w.weight),
        RuleBody::Window(_) => LinkRef::Symbolic,
    }
}

fn embedding_valid(atom: &Atom) -> bool {
    match atom.pred {
        Pred::Skill => matches!(atom.args[0], Const::Skill(_)),
        Pred::Quiz => matches!(atom.args[0], Const::Quiz(_)),
        Pred::RnnH0(_) => true,
        _ => false,
    }
}

struct Joiner<'a> {
    table: &'a AtomTable,
    lits: &'a [BodyLiteral],
}

impl Joiner<'_> {
    /// Enumerates matches of `lits[pos..]` given `binding`. The literal at
    /// `skip` is already matched by the caller.
    fn run(
        &self,
        pos: usize,
        skip: Option<usize>,
        binding: &mut Binding,
        body: &mut Vec<Atom>,
        out: &mut dyn FnMut(&Binding, &[Atom]),
    ) {
        if pos == self.lits.len() {
            out(binding, body);
            return;
        }
        let pattern = &self.lits[pos].atom;
        if Some(pos) == skip {
            return self.run(pos + 1, skip, binding, body, out);
        }
        if pattern.pred.is_embedding() {
            let Some(atom) = pattern.ground(binding) else {
                return;
            };
            if !embedding_valid(&atom) {
                return;
            }
            body[pos] = atom;
            return self.run(pos + 1, skip, binding, body, out);
        }
        let bound = pattern.terms().iter().enumerate().find_map(|(slot, t)| match t {
            crate::template::Term::Const(c) => Some((slot as u8, *c)),
            crate::template::Term::Var(v) => binding[*v as usize].map(|c| (slot as u8, c)),
        });
        for &id in self.table.candidates(pattern.pred, bound) {
            let atom = self.table.get(id);
            let saved = *binding;
            if pattern.unify(&atom, binding) {
                body[pos] = atom;
                self.run(pos + 1, skip, binding, body, out);
            }
            *binding = saved;
        }
    }
}

type Pending = Vec<(u32, Atom, Vec<Atom>)>;

fn fire_conjunction(
    table: &AtomTable,
    rule_idx: u32,
    rule: &LiftedRule,
    lits: &[BodyLiteral],
    pivot: Option<(usize, Atom)>,
    pending: &mut Pending,
) {
    let mut binding: Binding = [None; MAX_VARS];
    let mut body = vec![Atom::new0(Pred::Next); lits.len()];
    let skip = match pivot {
        Some((pos, atom)) => {
            if !lits[pos].atom.unify(&atom, &mut binding) {
                return;
            }
            body[pos] = atom;
            Some(pos)
        }
        None => None,
    };
    let joiner = Joiner { table, lits };
    joiner.run(0, skip, &mut binding, &mut body, &mut |b, atoms| {
        let head = rule.head.ground(b).expect("head variables are range restricted");
        pending.push((rule_idx, head, atoms.to_vec()));
    });
}

fn fire_window(table: &AtomTable, rule_idx: u32, rule: &LiftedRule, w: &Window, pending: &mut Pending) {
    let mut attempts: BTreeMap<Const, Vec<u32>> = BTreeMap::new();
    let mut last_t = 0u32;
    for &id in table.with_pred(w.concept) {
        let atom = table.get(id);
        let Some(t) = atom.args[0].time() else { continue };
        attempts.entry(atom.args[1]).or_default().push(t);
        last_t = last_t.max(t);
    }
    let token_of = |t: u32| {
        [Const::Right, Const::Wrong]
            .into_iter()
            .find(|tok| table.id(&Atom::new2(Pred::CorrectInput, Const::Time(t), *tok)).is_some())
    };
    for (x, mut times) in attempts {
        times.sort_unstable();
        if times.len() < w.k {
            continue;
        }
        for j in w.k - 1..times.len() {
            let window = &times[j + 1 - w.k..=j];
            if !window.iter().all(|&t| token_of(t) == Some(w.token)) {
                continue;
            }
            let end = times.get(j + 1).copied().unwrap_or(last_t);
            for t_head in times[j] + 1..=end {
                let mut body = Vec::with_capacity(2 * w.k + 1);
                for &ti in window {
                    body.push(Atom::new2(Pred::CorrectInput, Const::Time(ti), w.token));
                    body.push(Atom::new2(w.concept, Const::Time(ti), x));
                }
                body.push(Atom::new2(Pred::Less, Const::Time(times[j]), Const::Time(t_head)));
                let mut binding: Binding = [None; MAX_VARS];
                let head_args = [x, Const::Time(t_head)];
                for (term, c) in rule.head.terms().iter().zip(head_args) {
                    if let crate::template::Term::Var(v) = term {
                        binding[*v as usize] = Some(c);
                    }
                }
                let head = rule.head.ground(&binding).expect("window head binds both variables");
                pending.push((rule_idx, head, body));
            }
        }
    }
}

fn is_output(rule: &LiftedRule) -> bool {
    rule.head.pred == Pred::Correct
}

/// Computes all atoms derivable from `facts` under the non-output rules.
pub fn fixpoint(template: &Template, facts: &[Atom]) -> Derivation {
    let mut der = Derivation::default();
    let mut delta = Vec::new();
    for f in facts {
        let (id, fresh) = der.atoms.intern(*f);
        if fresh {
            der.atoms.index(id);
            delta.push(id);
        }
    }

    let mut pending: Pending = Vec::new();
    for (ri, rule) in template.rules.iter().enumerate() {
        if is_output(rule) {
            continue;
        }
        match &rule.body {
            RuleBody::Window(w) => fire_window(&der.atoms, ri as u32, rule, w, &mut pending),
            RuleBody::Conjunction(lits) if lits.iter().all(|l| l.atom.pred.is_embedding()) => {
                fire_conjunction(&der.atoms, ri as u32, rule, lits, None, &mut pending)
            }
            RuleBody::Conjunction(_) => {}
        }
    }

    loop {
        let mut by_pred: BTreeMap<Pred, Vec<Atom>> = BTreeMap::new();
        for &id in &delta {
            let a = der.atoms.get(id);
            by_pred.entry(a.pred).or_default().push(a);
        }
        for (ri, rule) in template.rules.iter().enumerate() {
            let RuleBody::Conjunction(lits) = &rule.body else { continue };
            if is_output(rule) {
                continue;
            }
            for (pos, l) in lits.iter().enumerate() {
                if l.atom.pred.is_embedding() {
                    continue;
                }
                for atom in by_pred.get(&l.atom.pred).into_iter().flatten() {
                    fire_conjunction(&der.atoms, ri as u32, rule, lits, Some((pos, *atom)), &mut pending);
                }
            }
        }
        delta.clear();
        for (rule, head, body) in pending.drain(..) {
            if let Some(id) = der.add(rule, head, &body) {
                delta.push(id);
            }
        }
        if delta.is_empty() {
            break;
        }
        for &id in &delta {
            der.atoms.index(id);
        }
    }
    der
}

/// Instantiates the output rules for each query atom.
fn ground_outputs(template: &Template, der: &mut Derivation, queries: &[Query]) -> Result<()> {
    for q in queries {
        let atom = q.atom();
        let mut pending: Pending = Vec::new();
        for (ri, rule) in template.rules.iter().enumerate() {
            let RuleBody::Conjunction(lits) = &rule.body else { continue };
            if !is_output(rule) {
                continue;
            }
            let mut binding: Binding = [None; MAX_VARS];
            if !rule.head.unify(&atom, &mut binding) {
                continue;
            }
            let mut body = vec![Atom::new0(Pred::Next); lits.len()];
            let joiner = Joiner { table: &der.atoms, lits };
            joiner.run(0, None, &mut binding, &mut body, &mut |_, atoms| {
                pending.push((ri as u32, atom, atoms.to_vec()));
            });
        }
        for (rule, head, body) in pending {
            der.add(rule, head, &body);
        }
        if !der.is_derived(&atom) {
            return Err(NsktError::UnderivedQuery(atom.to_string()));
        }
    }
    Ok(())
}

fn const_row(c: Const) -> u32 {
    match c {
        Const::Skill(i) | Const::Quiz(i) | Const::Time(i) => i,
        Const::Right => 1,
        Const::Wrong | Const::Unit => 0,
    }
}

struct Builder<'a> {
    template: &'a Template,
    params: Vec<ParamRef>,
    param_ids: HashMap<String, u32>,
}

impl Builder<'_> {
    fn param(&mut self, name: &str) -> Result<u32> {
        if let Some(&id) = self.param_ids.get(name) {
            return Ok(id);
        }
        let spec = self
            .template
            .param(name)
            .ok_or_else(|| NsktError::UnresolvedParam(name.to_string()))?;
        let rows = match spec.rows {
            Rows::Fixed(r) => Some(r),
            Rows::Skills | Rows::Quizzes => None,
        };
        let id = self.params.len() as u32;
        self.params.push(ParamRef {
            name: name.to_string(),
            rows,
            cols: spec.cols,
        });
        self.param_ids.insert(name.to_string(), id);
        Ok(id)
    }

    fn weighted(&mut self, name: &str, out_dim: usize, in_dim: usize) -> Result<EdgeLink> {
        let id = self.param(name)?;
        let p = &self.params[id as usize];
        let actual = (p.rows.unwrap_or(0), p.cols);
        if actual != (out_dim, in_dim) {
            return Err(NsktError::ParamShape {
                name: name.to_string(),
                expected: (out_dim, in_dim),
                actual,
            });
        }
        Ok(EdgeLink::Weighted(id))
    }
}

/// Grounds `template` on `sample` and returns the computation graph that
/// answers the sample's queries.
pub fn ground(template: &Template, sample: &Sample) -> Result<GroundedGraph> {
    if sample.context != template.context() {
        return Err(NsktError::Config(format!(
            "sample context {:?} does not match template context {:?}",
            sample.context,
            template.context()
        )));
    }
    let mut der = fixpoint(template, &sample.facts);
    ground_outputs(template, &mut der, &sample.queries)?;
    build_graph(template, &der, sample)
}

fn build_graph(template: &Template, der: &Derivation, sample: &Sample) -> Result<GroundedGraph> {
    let rule_of = |g: &Grounding| &template.rules[g.rule as usize];

    // Atoms reachable backwards from the queries, in discovery order.
    let mut order: Vec<u32> = Vec::new();
    let mut seen: HashSet<u32> = HashSet::new();
    let mut stack: Vec<u32> = sample
        .queries
        .iter()
        .rev()
        .map(|q| der.atoms.id(&q.atom()).expect("queries are derived"))
        .collect();
    while let Some(a) = stack.pop() {
        if !seen.insert(a) {
            continue;
        }
        order.push(a);
        for &g in der.by_head.get(&a).into_iter().flatten() {
            let g = &der.groundings[g as usize];
            let rule = rule_of(g);
            for (pos, &b) in g.body.iter().enumerate().rev() {
                if link_at(rule, pos, g.body.len()) != LinkRef::Join && !seen.contains(&b) {
                    stack.push(b);
                }
            }
        }
    }

    let mut b = Builder {
        template,
        params: Vec::new(),
        param_ids: HashMap::new(),
    };
    let query_atoms: HashSet<Atom> = sample.queries.iter().map(Query::atom).collect();
    let mut nodes: Vec<Node> = Vec::new();
    let mut rep: HashMap<u32, u32> = HashMap::new();
    // (node, grounding) pairs whose edges are resolved once every
    // representative is known.
    let mut rule_nodes: Vec<(u32, u32)> = Vec::new();
    let mut heads: Vec<(u32, Vec<(u32, u32)>)> = Vec::new();

    for &a in &order {
        let atom = der.atoms.get(a);
        let Some(gs) = der.by_head.get(&a) else {
            let (kind, value, dim) = leaf_value(template, &mut b, &atom)?;
            rep.insert(a, nodes.len() as u32);
            nodes.push(Node {
                kind,
                atom,
                family: None,
                body: Vec::new(),
                inputs: Vec::new(),
                activation: Activation::Identity,
                aggregation: Aggregation::Sum,
                dim,
                value,
                representative: true,
            });
            continue;
        };
        let mut members = Vec::with_capacity(gs.len());
        for &g in gs {
            let ground = &der.groundings[g as usize];
            let rule = rule_of(ground);
            let id = nodes.len() as u32;
            members.push((id, ground.rule));
            rule_nodes.push((id, g));
            nodes.push(Node {
                kind: NodeKind::Rule,
                atom,
                family: Some(rule.family),
                body: ground.body.iter().map(|&x| der.atoms.get(x)).collect(),
                inputs: Vec::new(),
                activation: rule.activation,
                aggregation: Aggregation::Sum,
                dim: template.out_width(rule.out_dim),
                value: NodeValue::Computed,
                representative: false,
            });
        }
        let first_rule = rule_of(&der.groundings[gs[0] as usize]);
        let is_query = query_atoms.contains(&atom);
        if is_query || members.len() > 1 || first_rule.head_weight.is_some() {
            let id = nodes.len() as u32;
            let (kind, activation, aggregation, dim) = if is_query {
                (NodeKind::Query, Activation::Sigmoid, Aggregation::Sum, 1)
            } else {
                let dim = if first_rule.head_weight.is_some() {
                    1
                } else {
                    nodes[members[0].0 as usize].dim
                };
                (NodeKind::Aggregation, Activation::Identity, first_rule.aggregation, dim)
            };
            nodes.push(Node {
                kind,
                atom,
                family: None,
                body: Vec::new(),
                inputs: Vec::new(),
                activation,
                aggregation,
                dim,
                value: NodeValue::Computed,
                representative: true,
            });
            rep.insert(a, id);
            heads.push((id, members));
        } else {
            nodes[members[0].0 as usize].representative = true;
            rep.insert(a, members[0].0);
        }
    }

    for (node, g) in rule_nodes {
        let ground = &der.groundings[g as usize];
        let rule = rule_of(ground);
        let out_dim = nodes[node as usize].dim;
        let mut inputs = Vec::new();
        for (pos, &atom) in ground.body.iter().enumerate() {
            let from = match link_at(rule, pos, ground.body.len()) {
                LinkRef::Join => continue,
                link => (rep[&atom], link),
            };
            let in_dim = nodes[from.0 as usize].dim;
            let link = match from.1 {
                LinkRef::Weighted(p) => b.weighted(p, out_dim, in_dim)?,
                LinkRef::Pass => {
                    if in_dim != out_dim {
                        return Err(NsktError::ParamShape {
                            name: format!("identity link into {}", nodes[node as usize].atom),
                            expected: (out_dim, out_dim),
                            actual: (out_dim, in_dim),
                        });
                    }
                    EdgeLink::Pass
                }
                _ => EdgeLink::Symbolic,
            };
            inputs.push(Edge { from: from.0, link });
        }
        nodes[node as usize].inputs = inputs;
    }
    for (head, members) in heads {
        let out_dim = nodes[head as usize].dim;
        let mut inputs = Vec::with_capacity(members.len());
        for (m, rule) in members {
            let rule = &template.rules[rule as usize];
            let link = match &rule.head_weight {
                Some(p) => b.weighted(p, out_dim, nodes[m as usize].dim)?,
                None => EdgeLink::Pass,
            };
            inputs.push(Edge { from: m, link });
        }
        nodes[head as usize].inputs = inputs;
    }

    let preds: Vec<Vec<u32>> = nodes
        .iter()
        .map(|n| n.inputs.iter().map(|e| e.from).collect())
        .collect();
    let topo = topo_order(&preds).map_err(|n| NsktError::Cycle(nodes[n as usize].atom.to_string()))?;
    let mut new_id = vec![0u32; nodes.len()];
    for (pos, &old) in topo.iter().enumerate() {
        new_id[old as usize] = pos as u32;
    }
    let mut slots: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
    let nodes: Vec<Node> = topo
        .iter()
        .map(|&old| {
            let mut n = slots[old as usize].take().expect("each node placed once");
            for e in &mut n.inputs {
                e.from = new_id[e.from as usize];
            }
            n
        })
        .collect();
    let queries = sample
        .queries
        .iter()
        .map(|q| {
            let id = rep[&der.atoms.id(&q.atom()).expect("derived")];
            (*q, new_id[id as usize])
        })
        .collect();
    Ok(GroundedGraph {
        student: sample.student,
        context: sample.context,
        nodes,
        queries,
        params: b.params,
    })
}

fn leaf_value(template: &Template, b: &mut Builder<'_>, atom: &Atom) -> Result<(NodeKind, NodeValue, usize)> {
    let kind = if atom.pred.is_embedding() {
        NodeKind::Embedding
    } else {
        NodeKind::Fact
    };
    let spec = template
        .leaf(atom.pred)
        .ok_or_else(|| NsktError::UnresolvedParam(format!("no value source for {atom}")))?;
    Ok(match &spec.source {
        LeafSource::Symbolic => (kind, NodeValue::Symbolic, 0),
        LeafSource::Param(p) => {
            let id = b.param(p)?;
            let r = &b.params[id as usize];
            let dim = r.rows.unwrap_or(0) * r.cols;
            (kind, NodeValue::Param(id), dim)
        }
        LeafSource::TableRow { param, arg } => {
            let id = b.param(param)?;
            let dim = b.params[id as usize].cols;
            let row = const_row(atom.args[*arg]);
            (kind, NodeValue::TableRow { param: id, row }, dim)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use crate::facts::{encode_student, Context};
    use crate::template::{build_base_template, build_responsible_template, RuleConfig, RuleFamily};
    use proptest::prelude::*;

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

    fn one_rule_config() -> RuleConfig {
        RuleConfig {
            k_pos: 1,
            k_neg: 1,
            ..RuleConfig::default()
        }
    }

    #[test]
    fn smallest_sample_node_set() {
        let t = build_responsible_template(4, 1, one_rule_config());
        let s = encode_student(&seq(&[(3, 954, true), (3, 954, false)]), Context::Quiz).unwrap();
        let g = ground(&t, &s).unwrap();
        let mut labels: Vec<String> = g
            .nodes
            .iter()
            .filter(|n| n.kind != NodeKind::Rule || n.representative)
            .map(|n| n.atom.to_string())
            .collect();
        labels.sort();
        let mut expected = vec![
            "avg_embed(t1,q954)",
            "combined_embed(t0)",
            "correct(t1,q954)",
            "correct_input(t0,right)",
            "correct_input_embed(t0)",
            "final_nn_out(t1)",
            "mastered(q954,t1)",
            "quiz(q954)",
            "quiz_input(t0,q954)",
            "rnn_1_h0",
            "rnn_1_out(t0)",
            "rnn_1_out(t1)",
            "skill(s3)",
        ];
        expected.sort();
        assert_eq!(labels, expected);
        let outputs = g
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Rule && n.atom.pred == Pred::Correct)
            .count();
        assert_eq!(outputs, 3);
        assert_eq!(g.len(), 16);
        for (i, n) in g.nodes.iter().enumerate() {
            for e in &n.inputs {
                assert!((e.from as usize) < i);
            }
        }
    }

    #[test]
    fn base_template_never_grounds_mastery() {
        let t = build_base_template(4, 2);
        let s = encode_student(&seq(&[(0, 0, true), (0, 0, true), (0, 0, true), (0, 0, false)]), Context::Quiz)
            .unwrap();
        let g = ground(&t, &s).unwrap();
        assert!(g
            .nodes
            .iter()
            .all(|n| !matches!(n.atom.pred, Pred::Mastered | Pred::NotMastered)));
        assert!(g.nodes.iter().all(|n| n.family.is_none_or(|f| !f.is_mastery())));
    }

    #[test]
    fn hash_consed_embeddings() {
        let t = build_responsible_template(4, 1, RuleConfig::default());
        let items: Vec<_> = (0..12).map(|i| (i % 2, i % 3, i % 4 != 0)).collect();
        let s = encode_student(&seq(&items), Context::Quiz).unwrap();
        let g = ground(&t, &s).unwrap();
        let mut count: HashMap<Atom, usize> = HashMap::new();
        for n in g.nodes.iter().filter(|n| n.kind == NodeKind::Embedding) {
            *count.entry(n.atom).or_default() += 1;
        }
        assert!(count.values().all(|&c| c == 1));
        assert_eq!(count.keys().filter(|a| a.pred == Pred::Skill).count(), 2);
        assert_eq!(count.keys().filter(|a| a.pred == Pred::Quiz).count(), 3);
    }

    #[test]
    fn fixpoint_is_idempotent() {
        let t = build_responsible_template(4, 2, RuleConfig::default());
        let s = encode_student(&seq(&[(0, 0, true), (1, 1, true), (0, 0, false)]), Context::Quiz).unwrap();
        let der = fixpoint(&t, &s.facts);
        let all: Vec<Atom> = (0..der.atoms.len() as u32)
            .map(|i| der.atoms.get(i))
            .filter(|a| !a.pred.is_embedding())
            .collect();
        let again = fixpoint(&t, &all);
        let before: HashSet<Atom> = all.iter().copied().collect();
        let after: HashSet<Atom> = (0..again.atoms.len() as u32)
            .map(|i| again.atoms.get(i))
            .filter(|a| !a.pred.is_embedding())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn underived_query_is_an_error() {
        let t = build_responsible_template(4, 1, RuleConfig::default());
        let mut s = encode_student(&seq(&[(0, 0, true), (0, 0, true)]), Context::Quiz).unwrap();
        s.queries[0].t = 9;
        assert!(matches!(ground(&t, &s), Err(NsktError::UnderivedQuery(_))));
    }

    #[test]
    fn avg_embed_averages_over_prior_same_concept_steps() {
        let t = build_base_template(2, 1);
        let s = encode_student(
            &seq(&[(0, 5, true), (0, 6, false), (0, 5, false), (0, 5, true)]),
            Context::Quiz,
        )
        .unwrap();
        let g = ground(&t, &s).unwrap();
        let node = g.node_of(&"avg_embed(t3,q5)".parse().unwrap()).unwrap();
        let n = &g.nodes[node as usize];
        assert_eq!(n.kind, NodeKind::Aggregation);
        assert_eq!(n.aggregation, Aggregation::Average);
        assert_eq!(n.inputs.len(), 2);
    }

    /// Independent check of the mastery window: scan backwards.
    fn oracle(history: &[(u32, bool)], x: u32, t: usize, k: usize, want: bool) -> bool {
        let prior: Vec<bool> = history[..t]
            .iter()
            .filter(|(c, _)| *c == x)
            .map(|(_, y)| *y)
            .collect();
        prior.len() >= k && prior[prior.len() - k..].iter().all(|&y| y == want)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mastery_windows_match_oracle(
            hist in proptest::collection::vec((0u32..3, any::<bool>()), 2..9),
            k_pos in 1usize..4,
            k_neg in 1usize..4,
        ) {
            let t = build_responsible_template(2, 1, RuleConfig { k_pos, k_neg, ..RuleConfig::default() });
            let items: Vec<_> = hist.iter().map(|&(q, y)| (0, q, y)).collect();
            let s = encode_student(&seq(&items), Context::Quiz).unwrap();
            let der = fixpoint(&t, &s.facts);
            for x in 0..3u32 {
                for step in 1..hist.len() {
                    let m = Atom::new2(Pred::Mastered, Const::Quiz(x), Const::Time(step as u32));
                    let nm = Atom::new2(Pred::NotMastered, Const::Quiz(x), Const::Time(step as u32));
                    prop_assert_eq!(der.is_derived(&m), oracle(&hist, x, step, k_pos, true));
                    prop_assert_eq!(der.is_derived(&nm), oracle(&hist, x, step, k_neg, false));
                }
            }
        }

        #[test]
        fn no_label_leakage(
            hist in proptest::collection::vec((0u32..2, 0u32..3, any::<bool>()), 2..8),
        ) {
            let t = build_responsible_template(2, 2, one_rule_config());
            let s = encode_student(&seq(&hist), Context::Quiz).unwrap();
            let g = ground(&t, &s).unwrap();
            for (q, node) in &g.queries {
                for atom in g.support_atoms(*node) {
                    if atom.pred == Pred::CorrectInput {
                        prop_assert!(atom.args[0].time().unwrap() < q.t, "{} leaks into {}", atom, q.atom());
                    }
                }
            }
        }

        #[test]
        fn every_rule_node_is_a_template_family(
            hist in proptest::collection::vec((0u32..2, 0u32..3, any::<bool>()), 2..7),
        ) {
            let t = build_responsible_template(2, 1, RuleConfig::default());
            let s = encode_student(&seq(&hist), Context::Quiz).unwrap();
            let g = ground(&t, &s).unwrap();
            let families: HashSet<RuleFamily> = t.rules.iter().map(|r| r.family).collect();
            for n in &g.nodes {
                if let Some(f) = n.family {
                    prop_assert!(families.contains(&f));
                }
            }
        }
    }
}
