//! Forward evaluation and reverse-mode differentiation of grounded graphs.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{NsktError, Result};
use crate::facts::Sample;
use crate::ground::ground;
use crate::graph::{EdgeLink, GroundedGraph, NodeValue};
use crate::params::{Gradients, ParamStore};
use crate::template::{Aggregation, Template};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of [`bce`] with respect to the logit of a sigmoid output
/// `p`. Zero where the clamp is active.
pub fn bce_grad_logit(p: f64, y: bool) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    p - if y { 1.0 } else { 0.0 }
}

/// Node values of one forward pass, stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    pub offsets: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tape {
    pub fn value(&self, node: u32) -> &[f64] {
        let n = node as usize;
        &self.values[self.offsets[n]..self.offsets[n + 1]]
    }

    /// Scalar output of a query node.
    pub fn scalar(&self, node: u32) -> f64 {
        self.value(node)[0]
    }
}

fn offsets(graph: &GroundedGraph) -> Vec<usize> {
    let mut out = Vec::with_capacity(graph.nodes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for n in &graph.nodes {
        acc += n.dim;
        out.push(acc);
    }
    out
}

fn valued_count(graph: &GroundedGraph, node: usize) -> usize {
    graph.nodes[node].valued_inputs().count().max(1)
}

pub fn forward(graph: &GroundedGraph, params: &ParamStore, resolved: &[usize]) -> Result<Tape> {
    let offs = offsets(graph);
    let mut values = vec![0.0; *offs.last().unwrap()];
    let mut pre: Vec<f64> = Vec::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        let (before, rest) = values.split_at_mut(offs[i]);
        let out = &mut rest[..node.dim];
        match node.value {
            NodeValue::Symbolic => continue,
            NodeValue::Param(p) => {
                out.copy_from_slice(&params.by_index(resolved[p as usize]).values);
                continue;
            }
            NodeValue::TableRow { param, row } => {
                let p = params.by_index(resolved[param as usize]);
                if row as usize >= p.rows {
                    return Err(NsktError::UnresolvedParam(format!(
                        "{} row {row} for {} (table has {} rows)",
                        p.name, node.atom, p.rows
                    )));
                }
                out.copy_from_slice(p.row(row as usize));
                continue;
            }
            NodeValue::Computed => {}
        }
        pre.clear();
        pre.resize(node.dim, 0.0);
        for e in &node.inputs {
            let from = e.from as usize;
            let x = &before[offs[from]..offs[from + 1]];
            match e.link {
                EdgeLink::Weighted(p) => {
                    let w = params.by_index(resolved[p as usize]);
                    for (r, acc) in pre.iter_mut().enumerate() {
                        let row = w.row(r);
                        *acc += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                EdgeLink::Pass => {
                    for (acc, v) in pre.iter_mut().zip(x) {
                        *acc += v;
                    }
                }
                EdgeLink::Symbolic => {}
            }
        }
        if node.aggregation == Aggregation::Average {
            let c = valued_count(graph, i) as f64;
            pre.iter_mut().for_each(|v| *v /= c);
        }
        for (o, v) in out.iter_mut().zip(&pre) {
            *o = node.activation.apply(*v);
        }
    }
    Ok(Tape { offsets: offs, values })
}

/// Where an injected adjoint enters a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeedAt {
    /// Gradient with respect to the node's output.
    Output,
    /// Gradient with respect to the node's pre-activation.
    PreActivation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub node: u32,
    pub grad: f64,
    pub at: SeedAt,
}

/// Gradient flowing along one edge out of a leaf node.
#[derive(Debug, Clone, PartialEq)]
pub struct Occurrence {
    pub leaf: u32,
    pub consumer: u32,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    /// Adjoint of every node output, laid out like [`Tape::values`].
    pub adjoints: Vec<f64>,
    pub occurrences: Vec<Occurrence>,
}

impl Backward {
    pub fn adjoint<'a>(&'a self, tape: &Tape, node: u32) -> &'a [f64] {
        let n = node as usize;
        &self.adjoints[tape.offsets[n]..tape.offsets[n + 1]]
    }
}

/// Back-propagates scalar seeds on query nodes. Parameter gradients are
/// accumulated into `grads`; with `record` set, per-edge gradients into
/// leaf nodes are kept.
pub fn backward(
    graph: &GroundedGraph,
    params: &ParamStore,
    resolved: &[usize],
    tape: &Tape,
    seeds: &[Seed],
    grads: &mut Gradients,
    record: bool,
) -> Backward {
    let offs = &tape.offsets;
    let mut adj = vec![0.0; tape.values.len()];
    let mut pre_seed = vec![0.0; graph.nodes.len()];
    for s in seeds {
        match s.at {
            SeedAt::Output => adj[offs[s.node as usize]] += s.grad,
            SeedAt::PreActivation => pre_seed[s.node as usize] += s.grad,
        }
    }
    let mut occurrences = Vec::new();
    let mut delta: Vec<f64> = Vec::new();

    for i in (0..graph.nodes.len()).rev() {
        let node = &graph.nodes[i];
        let (adj_before, adj_rest) = adj.split_at_mut(offs[i]);
        let a = &adj_rest[..node.dim];
        match node.value {
            NodeValue::Symbolic => continue,
            NodeValue::Param(p) => {
                for (g, v) in grads.0[resolved[p as usize]].iter_mut().zip(a) {
                    *g += v;
                }
                continue;
            }
            NodeValue::TableRow { param, row } => {
                let pi = resolved[param as usize];
                let cols = params.by_index(pi).cols;
                let g = &mut grads.0[pi][row as usize * cols..(row as usize + 1) * cols];
                for (g, v) in g.iter_mut().zip(a) {
                    *g += v;
                }
                continue;
            }
            NodeValue::Computed => {}
        }
        let y = tape.value(i as u32);
        delta.clear();
        delta.extend(
            a.iter()
                .zip(y)
                .map(|(a, y)| a * node.activation.derivative_from_output(*y)),
        );
        if pre_seed[i] != 0.0 {
            delta[0] += pre_seed[i];
        }
        if delta.iter().all(|v| *v == 0.0) {
            continue;
        }
        if node.aggregation == Aggregation::Average {
            let c = valued_count(graph, i) as f64;
            delta.iter_mut().for_each(|v| *v /= c);
        }
        for e in &node.inputs {
            let from = e.from as usize;
            let x = tape.value(e.from);
            let adj_x = &mut adj_before[offs[from]..offs[from + 1]];
            let before: Option<Vec<f64>> = (record && graph.nodes[from].is_leaf() && !adj_x.is_empty())
                .then(|| adj_x.to_vec());
            match e.link {
                EdgeLink::Weighted(p) => {
                    let pi = resolved[p as usize];
                    let w = params.by_index(pi);
                    let gw = &mut grads.0[pi];
                    let cols = w.cols;
                    for (r, d) in delta.iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        let grow = &mut gw[r * cols..(r + 1) * cols];
                        for (g, xv) in grow.iter_mut().zip(x) {
                            *g += d * xv;
                        }
                        for (ax, wv) in adj_x.iter_mut().zip(w.row(r)) {
                            *ax += d * wv;
                        }
                    }
                }
                EdgeLink::Pass => {
                    for (ax, d) in adj_x.iter_mut().zip(&delta) {
                        *ax += d;
                    }
                }
                EdgeLink::Symbolic => {}
            }
            if let Some(before) = before {
                occurrences.push(Occurrence {
                    leaf: e.from,
                    consumer: i as u32,
                    grad: adj_x.iter().zip(&before).map(|(a, b)| a - b).collect(),
                });
            }
        }
    }
    Backward {
        adjoints: adj,
        occurrences,
    }
}

/// Mean BCE over a graph's queries and its gradient, accumulated into
/// `grads`. Returns the loss and the query probabilities.
pub fn loss_and_grad(
    graph: &GroundedGraph,
    params: &ParamStore,
    grads: &mut Gradients,
) -> Result<(f64, Vec<f64>)> {
    let resolved = params.resolve(graph)?;
    let tape = forward(graph, params, &resolved)?;
    let q = graph.queries.len().max(1) as f64;
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(graph.queries.len());
    let mut seeds = Vec::with_capacity(graph.queries.len());
    for (query, node) in &graph.queries {
        let p = tape.scalar(*node);
        loss += bce(p, query.label);
        probs.push(p);
        seeds.push(Seed {
            node: *node,
            grad: bce_grad_logit(p, query.label) / q,
            at: SeedAt::PreActivation,
        });
    }
    backward(graph, params, &resolved, &tape, &seeds, grads, false);
    Ok((loss / q, probs))
}

/// Query probabilities in query order.
pub fn predict(graph: &GroundedGraph, params: &ParamStore) -> Result<Vec<f64>> {
    let resolved = params.resolve(graph)?;
    let tape = forward(graph, params, &resolved)?;
    Ok(graph.queries.iter().map(|(_, n)| tape.scalar(*n)).collect())
}

fn mean_bce(graph: &GroundedGraph, params: &ParamStore) -> Result<f64> {
    let probs = predict(graph, params)?;
    let q = graph.queries.len().max(1) as f64;
    Ok(graph.queries.iter().zip(probs).map(|((query, _), p)| bce(p, query.label)).sum::<f64>() / q)
}

/// Grounds `sample` and compares the analytic loss gradient with central
/// differences of step `eps`. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|)` over every parameter entry
/// the graph reads.
pub fn grad_check(template: &Template, sample: &Sample, params: &ParamStore, eps: f64) -> Result<f64> {
    let graph = ground(template, sample)?;
    let resolved = params.resolve(&graph)?;
    let mut grads = params.zero_grads();
    loss_and_grad(&graph, params, &mut grads)?;

    // Only the table rows the graph touches can move the loss.
    let mut rows: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for node in &graph.nodes {
        if let NodeValue::TableRow { param, row } = node.value {
            rows.entry(resolved[param as usize]).or_default().insert(row as usize);
        }
    }
    let mut entries = Vec::new();
    for (slot, r) in graph.params.iter().enumerate() {
        let pi = resolved[slot];
        let cols = params.by_index(pi).cols;
        match (r.rows, rows.get(&pi)) {
            (None, Some(used)) => entries.extend(used.iter().flat_map(|row| (0..cols).map(move |c| (pi, row * cols + c)))),
            (None, None) => {}
            (Some(_), _) => entries.extend((0..params.by_index(pi).values.len()).map(|k| (pi, k))),
        }
    }
    entries.sort_unstable();
    entries.dedup();

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (pi, k) in entries {
        let orig = probe.by_index(pi).values[k];
        probe.by_index_mut(pi).values[k] = orig + eps;
        let up = mean_bce(&graph, &probe)?;
        probe.by_index_mut(pi).values[k] = orig - eps;
        let down = mean_bce(&graph, &probe)?;
        probe.by_index_mut(pi).values[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.0[pi][k];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(1.0));
    }
    Ok(worst)
}
