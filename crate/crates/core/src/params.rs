//! Named parameter tensors and their initialisation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NsktError, Result};
use crate::graph::GroundedGraph;
use crate::template::{Init, ParamSpec, Rows};

/// A row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub values: Vec<f64>,
}

impl Param {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Vocabulary sizes that fix the height of embedding tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSizes {
    pub skills: usize,
    pub quizzes: usize,
}

impl ParamStore {
    /// Initialises every spec in order from one seeded stream. Uniform
    /// entries are drawn from `(-1/√d, 1/√d)`.
    pub fn init(specs: &[ParamSpec], sizes: TableSizes, d: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let mut store = ParamStore::default();
        for spec in specs {
            let rows = match spec.rows {
                Rows::Fixed(r) => r,
                Rows::Skills => sizes.skills,
                Rows::Quizzes => sizes.quizzes,
            };
            let n = rows * spec.cols;
            let values = match spec.init {
                Init::Uniform => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                Init::Signed(s) => (0..n).map(|_| s * rng.random_range(0.0..bound)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Constant(v) => vec![v; n],
            };
            store.push(Param {
                name: spec.name.clone(),
                rows,
                cols: spec.cols,
                trainable: spec.trainable,
                values,
            });
        }
        store
    }

    pub fn from_params(params: Vec<Param>) -> ParamStore {
        let mut store = ParamStore::default();
        for p in params {
            store.push(p);
        }
        store
    }

    pub fn push(&mut self, p: Param) {
        assert!(!self.index.contains_key(&p.name), "duplicate parameter `{}`", p.name);
        assert_eq!(p.values.len(), p.rows * p.cols, "parameter `{}` size", p.name);
        self.index.insert(p.name.clone(), self.params.len());
        self.params.push(p);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index_of(name).map(move |i| &mut self.params[i])
    }

    pub fn by_index(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.params.iter().map(|p| vec![0.0; p.values.len()]).collect())
    }

    /// Maps a graph's parameter references onto this store, checking shapes.
    pub fn resolve(&self, graph: &GroundedGraph) -> Result<Vec<usize>> {
        graph
            .params
            .iter()
            .map(|r| {
                let i = self
                    .index_of(&r.name)
                    .ok_or_else(|| NsktError::UnresolvedParam(r.name.clone()))?;
                let p = &self.params[i];
                let expected = (r.rows.unwrap_or(p.rows), r.cols);
                if p.shape() != expected {
                    return Err(NsktError::ParamShape {
                        name: r.name.clone(),
                        expected,
                        actual: p.shape(),
                    });
                }
                Ok(i)
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.params).expect("parameters serialise")
    }

    pub fn from_json(value: serde_json::Value) -> Result<ParamStore> {
        let params: Vec<Param> = serde_json::from_value(value)?;
        for p in &params {
            if p.values.len() != p.rows * p.cols {
                return Err(NsktError::ParamShape {
                    name: p.name.clone(),
                    expected: (p.rows, p.cols),
                    actual: (p.values.len(), 1),
                });
            }
        }
        Ok(ParamStore::from_params(params))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::{build_responsible_template, RuleConfig};

    #[test]
    fn init_bounds_and_determinism() {
        let t = build_responsible_template(16, 2, RuleConfig::default());
        let sizes = TableSizes { skills: 3, quizzes: 5 };
        let a = ParamStore::init(&t.params, sizes, 16, 9);
        let b = ParamStore::init(&t.params, sizes, 16, 9);
        assert_eq!(a, b);
        assert_eq!(a.get("emb_quiz").unwrap().shape(), (5, 16));
        assert!(a.get("rnn_1_h0").unwrap().values.iter().all(|&v| v == 0.0));
        let bound = 0.25;
        for p in a.iter() {
            assert!(p.values.iter().all(|v| v.abs() < bound || p.name.starts_with("rnn_")));
        }
    }

    #[test]
    fn json_round_trip() {
        let t = build_responsible_template(3, 1, RuleConfig::default());
        let a = ParamStore::init(&t.params, TableSizes { skills: 2, quizzes: 2 }, 3, 1);
        let b = ParamStore::from_json(a.to_json()).unwrap();
        assert_eq!(a.iter().collect::<Vec<_>>(), b.iter().collect::<Vec<_>>());
        assert_eq!(b.index_of("w_nn_head"), a.index_of("w_nn_head"));
    }
}
