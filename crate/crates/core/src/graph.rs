//! Grounded computation graphs.

use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::facts::{Atom, Context, Query};
use crate::template::{Activation, Aggregation, RuleFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Fact,
    Embedding,
    Rule,
    Aggregation,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeLink {
    /// Index into [`GroundedGraph::params`].
    Weighted(u32),
    Pass,
    Symbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: u32,
    pub link: EdgeLink,
}

/// Where a leaf node reads its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeValue {
    Computed,
    TableRow { param: u32, row: u32 },
    Param(u32),
    Symbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub atom: Atom,
    pub family: Option<RuleFamily>,
    /// Ground body of a rule node, join atoms included.
    pub body: Vec<Atom>,
    pub inputs: Vec<Edge>,
    pub activation: Activation,
    pub aggregation: Aggregation,
    pub dim: usize,
    pub value: NodeValue,
    /// Whether this node carries the value of `atom` for its consumers.
    pub representative: bool,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Fact | NodeKind::Embedding)
    }

    /// Edges that contribute a value.
    pub fn valued_inputs(&self) -> impl Iterator<Item = &Edge> {
        self.inputs.iter().filter(|e| e.link != EdgeLink::Symbolic)
    }
}

/// A parameter referenced by a graph. `rows` is `None` for embedding
/// tables whose height depends on the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRef {
    pub name: String,
    pub rows: Option<usize>,
    pub cols: usize,
}

/// Nodes are stored in topological order: every edge points from a lower
/// index to a higher one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedGraph {
    pub student: u32,
    pub context: Context,
    pub nodes: Vec<Node>,
    pub queries: Vec<(Query, u32)>,
    pub params: Vec<ParamRef>,
}

impl GroundedGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_edges(&self) -> usize {
        self.nodes.iter().map(|n| n.inputs.len()).sum()
    }

    /// The node carrying the value of `atom`, if it is in the graph.
    pub fn node_of(&self, atom: &Atom) -> Option<u32> {
        self.nodes
            .iter()
            .position(|n| n.representative && n.atom == *atom)
            .map(|i| i as u32)
    }

    pub fn representatives(&self) -> HashMap<Atom, u32> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.representative)
            .map(|(i, n)| (n.atom, i as u32))
            .collect()
    }

    pub fn query_node(&self, query: &Query) -> Option<u32> {
        self.queries.iter().find(|(q, _)| q == query).map(|(_, n)| *n)
    }

    pub fn param_index(&self, name: &str) -> Option<u32> {
        self.params.iter().position(|p| p.name == name).map(|i| i as u32)
    }

    /// Marks every node `node` depends on, itself included.
    pub fn ancestors(&self, node: u32) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n as usize], true) {
                continue;
            }
            stack.extend(self.nodes[n as usize].inputs.iter().map(|e| e.from));
        }
        seen
    }

    /// All atoms the derivation of `node` touches, including the join atoms
    /// of the rule groundings it depends on.
    pub fn support_atoms(&self, node: u32) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        for (i, inside) in self.ancestors(node).into_iter().enumerate() {
            if inside {
                let n = &self.nodes[i];
                out.insert(n.atom);
                out.extend(n.body.iter().copied());
            }
        }
        out
    }
}

/// Kahn's algorithm over predecessor lists, breaking ties by smallest
/// index. Returns a node on a cycle when no order exists.
pub fn topo_order(inputs: &[Vec<u32>]) -> std::result::Result<Vec<u32>, u32> {
    let n = inputs.len();
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (to, preds) in inputs.iter().enumerate() {
        for &from in preds {
            indegree[to] += 1;
            consumers[from as usize].push(to as u32);
        }
    }
    let mut ready: BinaryHeap<Reverse<u32>> = (0..n as u32)
        .filter(|&i| indegree[i as usize] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &c in &consumers[i as usize] {
            indegree[c as usize] -= 1;
            if indegree[c as usize] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n as u32).find(|&i| indegree[i as usize] > 0).unwrap_or(0))
    }
}
