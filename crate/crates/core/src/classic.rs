//! Fully data-driven recurrent baseline with hand-written backpropagation
//! through time.

use serde::{Deserialize, Serialize};

use crate::autodiff::{bce, bce_grad_logit};
use crate::data::Interaction;
use crate::error::{NsktError, Result};
use crate::facts::Context;
use crate::params::{Gradients, Param, ParamStore};
use crate::template::{sigmoid, Activation, Init, ParamSpec, Rows};
use crate::train::Learner;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicConfig {
    pub embedding_dim: usize,
    pub rnn_layers: usize,
    pub context: Context,
    /// Applied to the projected input; identity gives the plain linear
    /// projection, sigmoid mirrors the template's combined embedding.
    pub input_activation: Activation,
}

impl ClassicConfig {
    pub fn new(embedding_dim: usize, rnn_layers: usize) -> Self {
        ClassicConfig {
            embedding_dim,
            rnn_layers,
            context: Context::Quiz,
            input_activation: Activation::Identity,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let d = self.embedding_dim;
        let spec = |name: String, rows: Rows, cols: usize, init: Init| ParamSpec {
            name,
            rows,
            cols,
            init,
            trainable: true,
        };
        let mut out = vec![
            spec("emb_skill".into(), Rows::Skills, d, Init::Uniform),
            spec("emb_quiz".into(), Rows::Quizzes, d, Init::Uniform),
            spec("emb_correct".into(), Rows::Fixed(2), d, Init::Uniform),
            spec("w_combine_quiz".into(), Rows::Fixed(d), d, Init::Uniform),
            spec("w_combine_skill".into(), Rows::Fixed(d), d, Init::Uniform),
            spec("w_combine_correct".into(), Rows::Fixed(d), d, Init::Uniform),
        ];
        for l in 1..=self.rnn_layers {
            out.push(spec(format!("rnn_{l}_h0"), Rows::Fixed(d), 1, Init::Zeros));
            for w in ["init", "in", "hh"] {
                out.push(spec(format!("w_rnn_{l}_{w}"), Rows::Fixed(d), d, Init::Uniform));
            }
        }
        out.push(spec("w_out".into(), Rows::Fixed(1), d, Init::Uniform));
        out.push(spec("p_target".into(), Rows::Fixed(1), d, Init::Uniform));
        out
    }
}

/// A sequence with the steps and targets to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicInput {
    pub student: u32,
    pub steps: Vec<Interaction>,
    /// `(t, target row, label)`; the prediction at `t` reads steps `< t`.
    pub queries: Vec<(usize, u32, bool)>,
}

impl ClassicInput {
    pub fn next_step(seq: &[Interaction], context: Context) -> Result<ClassicInput> {
        if seq.len() < 2 {
            return Err(NsktError::SequenceTooShort(seq.len()));
        }
        let queries = seq[1..]
            .iter()
            .map(|it| {
                let row = match context {
                    Context::Quiz => it.quiz,
                    Context::Skill => it.skill,
                };
                (it.t as usize, row, it.correct)
            })
            .collect();
        Ok(ClassicInput {
            student: seq[0].student,
            steps: seq.to_vec(),
            queries,
        })
    }
}

fn matvec_add(w: &Param, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o += w.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `gw += δ xᵀ` and `dx += Wᵀ δ`.
fn back_linear(w: &Param, gw: &mut [f64], x: &[f64], delta: &[f64], dx: Option<&mut [f64]>) {
    let cols = w.cols;
    for (r, d) in delta.iter().enumerate() {
        for (g, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *g += d * xv;
        }
    }
    if let Some(dx) = dx {
        for (r, d) in delta.iter().enumerate() {
            for (a, wv) in dx.iter_mut().zip(w.row(r)) {
                *a += d * wv;
            }
        }
    }
}

struct Idx {
    emb_skill: usize,
    emb_quiz: usize,
    emb_correct: usize,
    wq: usize,
    ws: usize,
    wa: usize,
    h0: Vec<usize>,
    w_init: Vec<usize>,
    w_in: Vec<usize>,
    w_hh: Vec<usize>,
    w_out: usize,
    p_target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicModel {
    pub config: ClassicConfig,
}

struct Cache {
    /// Projected inputs per step.
    z: Vec<Vec<f64>>,
    /// `h[l][t]`, layers 0-indexed.
    h: Vec<Vec<Vec<f64>>>,
    probs: Vec<f64>,
}

impl ClassicModel {
    pub fn new(config: ClassicConfig) -> Self {
        ClassicModel { config }
    }

    fn idx(&self, params: &ParamStore) -> Result<Idx> {
        let get = |n: &str| params.index_of(n).ok_or_else(|| NsktError::UnresolvedParam(n.to_string()));
        let layers = 1..=self.config.rnn_layers;
        Ok(Idx {
            emb_skill: get("emb_skill")?,
            emb_quiz: get("emb_quiz")?,
            emb_correct: get("emb_correct")?,
            wq: get("w_combine_quiz")?,
            ws: get("w_combine_skill")?,
            wa: get("w_combine_correct")?,
            h0: layers.clone().map(|l| get(&format!("rnn_{l}_h0"))).collect::<Result<_>>()?,
            w_init: layers.clone().map(|l| get(&format!("w_rnn_{l}_init"))).collect::<Result<_>>()?,
            w_in: layers.clone().map(|l| get(&format!("w_rnn_{l}_in"))).collect::<Result<_>>()?,
            w_hh: layers.map(|l| get(&format!("w_rnn_{l}_hh"))).collect::<Result<_>>()?,
            w_out: get("w_out")?,
            p_target: get("p_target")?,
        })
    }

    fn target_table(&self, ix: &Idx) -> usize {
        match self.config.context {
            Context::Quiz => ix.emb_quiz,
            Context::Skill => ix.emb_skill,
        }
    }

    fn run(&self, params: &ParamStore, ix: &Idx, input: &ClassicInput) -> Result<Cache> {
        let d = self.config.embedding_dim;
        let p = |i: usize| params.by_index(i);
        let horizon = input.queries.iter().map(|q| q.0).max().unwrap_or(0);
        if horizon > input.steps.len() {
            return Err(NsktError::InvalidStep {
                step: horizon,
                len: input.steps.len(),
            });
        }
        let mut z = Vec::with_capacity(horizon);
        for it in &input.steps[..horizon] {
            let mut pre = vec![0.0; d];
            matvec_add(p(ix.wq), p(ix.emb_quiz).row(it.quiz as usize), &mut pre);
            matvec_add(p(ix.ws), p(ix.emb_skill).row(it.skill as usize), &mut pre);
            matvec_add(p(ix.wa), p(ix.emb_correct).row(it.correct as usize), &mut pre);
            z.push(pre.into_iter().map(|v| self.config.input_activation.apply(v)).collect());
        }
        let layers = self.config.rnn_layers;
        let mut h: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(horizon + 1); layers];
        for l in 0..layers {
            let mut pre = vec![0.0; d];
            matvec_add(p(ix.w_init[l]), &p(ix.h0[l]).values, &mut pre);
            h[l].push(pre.into_iter().map(f64::tanh).collect());
        }
        for t in 1..=horizon {
            for l in 0..layers {
                let mut pre = vec![0.0; d];
                let input_vec = if l == 0 { &z[t - 1] } else { &h[l - 1][t] };
                matvec_add(p(ix.w_in[l]), input_vec, &mut pre);
                matvec_add(p(ix.w_hh[l]), &h[l][t - 1], &mut pre);
                h[l].push(pre.into_iter().map(f64::tanh).collect());
            }
        }
        let table = self.target_table(ix);
        let top = &h[layers - 1];
        let probs = input
            .queries
            .iter()
            .map(|&(t, row, _)| {
                let logit = dot(&p(ix.w_out).values, &top[t]) + dot(&p(ix.p_target).values, p(table).row(row as usize));
                sigmoid(logit)
            })
            .collect();
        Ok(Cache { z, h, probs })
    }

    pub fn forward(&self, params: &ParamStore, input: &ClassicInput) -> Result<Vec<f64>> {
        let ix = self.idx(params)?;
        Ok(self.run(params, &ix, input)?.probs)
    }

    pub fn backward(&self, params: &ParamStore, input: &ClassicInput, grads: &mut Gradients) -> Result<(f64, Vec<f64>)> {
        let ix = self.idx(params)?;
        let cache = self.run(params, &ix, input)?;
        let d = self.config.embedding_dim;
        let layers = self.config.rnn_layers;
        let p = |i: usize| params.by_index(i);
        let nq = input.queries.len().max(1) as f64;
        let horizon = cache.z.len();
        let table = self.target_table(&ix);

        let mut loss = 0.0;
        let mut dh: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; d]; horizon + 1]; layers];
        for (&(t, row, y), &prob) in input.queries.iter().zip(&cache.probs) {
            loss += bce(prob, y);
            let g = bce_grad_logit(prob, y) / nq;
            if g == 0.0 {
                continue;
            }
            let top = &cache.h[layers - 1][t];
            for k in 0..d {
                grads.0[ix.w_out][k] += g * top[k];
                dh[layers - 1][t][k] += g * p(ix.w_out).values[k];
                grads.0[ix.p_target][k] += g * p(table).row(row as usize)[k];
            }
            let pt = &p(ix.p_target).values;
            let trow = &mut grads.0[table][row as usize * d..(row as usize + 1) * d];
            for k in 0..d {
                trow[k] += g * pt[k];
            }
        }

        let mut dz = vec![vec![0.0; d]; horizon];
        for t in (1..=horizon).rev() {
            for l in (0..layers).rev() {
                let hv = &cache.h[l][t];
                let delta: Vec<f64> = dh[l][t].iter().zip(hv).map(|(a, y)| a * (1.0 - y * y)).collect();
                let (prev_layers, cur) = dh.split_at_mut(l);
                let (before, _) = cur[0].split_at_mut(t);
                back_linear(p(ix.w_hh[l]), &mut grads.0[ix.w_hh[l]], &cache.h[l][t - 1], &delta, Some(&mut before[t - 1]));
                if l == 0 {
                    back_linear(p(ix.w_in[0]), &mut grads.0[ix.w_in[0]], &cache.z[t - 1], &delta, Some(&mut dz[t - 1]));
                } else {
                    back_linear(
                        p(ix.w_in[l]),
                        &mut grads.0[ix.w_in[l]],
                        &cache.h[l - 1][t],
                        &delta,
                        Some(&mut prev_layers[l - 1][t]),
                    );
                }
            }
        }
        for l in 0..layers {
            let hv = &cache.h[l][0];
            let delta: Vec<f64> = dh[l][0].iter().zip(hv).map(|(a, y)| a * (1.0 - y * y)).collect();
            let mut dh0 = vec![0.0; d];
            back_linear(p(ix.w_init[l]), &mut grads.0[ix.w_init[l]], &p(ix.h0[l]).values, &delta, Some(&mut dh0));
            for (g, v) in grads.0[ix.h0[l]].iter_mut().zip(dh0) {
                *g += v;
            }
        }
        for (t, it) in input.steps[..horizon].iter().enumerate() {
            let delta: Vec<f64> = dz[t]
                .iter()
                .zip(&cache.z[t])
                .map(|(a, y)| a * self.config.input_activation.derivative_from_output(*y))
                .collect();
            if delta.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (w, table, row) in [
                (ix.wq, ix.emb_quiz, it.quiz as usize),
                (ix.ws, ix.emb_skill, it.skill as usize),
                (ix.wa, ix.emb_correct, it.correct as usize),
            ] {
                let mut de = vec![0.0; d];
                back_linear(p(w), &mut grads.0[w], p(table).row(row), &delta, Some(&mut de));
                for (g, v) in grads.0[table][row * d..(row + 1) * d].iter_mut().zip(de) {
                    *g += v;
                }
            }
        }
        Ok((loss / nq, cache.probs))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Learner for ClassicModel {
    type Prepared = ClassicInput;

    fn student(prepared: &ClassicInput) -> u32 {
        prepared.student
    }

    fn labels(prepared: &ClassicInput) -> Vec<bool> {
        prepared.queries.iter().map(|q| q.2).collect()
    }

    fn loss_and_grad(&self, params: &ParamStore, prepared: &ClassicInput, grads: &mut Gradients) -> Result<f64> {
        self.backward(params, prepared, grads).map(|(l, _)| l)
    }

    fn predict(&self, params: &ParamStore, prepared: &ClassicInput) -> Result<Vec<f64>> {
        self.forward(params, prepared)
    }
}
