//! Teacher-forced examples from mock utterances and plain gradient descent
//! on the head's NLL.

use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::advance_prefix;
use super::synth::{joint_features, MockUtterance};
use super::SimError;
use crate::encoder::TreeGraph;
use crate::params::TcpgenModel;
use crate::tcpgen::{
    ctc_phoneme_embedding, head_gradients_with, head_loss, head_step, HeadError, HeadExample,
};
use crate::tokenizer::{PieceId, SubwordVocab, BLANK_PIECE};

/// Teacher-forced steps of `utt` along its reference path: each piece frame
/// contributes the piece and the blank that follows it, each silence frame a
/// blank.
pub fn teacher_forced_examples(
    utt: &MockUtterance,
    graph_index: usize,
    graph: &TreeGraph,
    vocab: &SubwordVocab,
    model: &TcpgenModel,
    phoneme_query: bool,
) -> Result<Vec<HeadExample>, SimError> {
    let tree = &graph.tree;
    let mut out = Vec::new();
    let mut prefix: Vec<PieceId> = Vec::new();
    let mut y_prev = BLANK_PIECE;
    for t in 0..utt.num_frames() {
        let h_ctc = if phoneme_query {
            Some(ctc_phoneme_embedding(
                &utt.ctc_posteriors[t],
                &model.encoder.phoneme_table,
            )?)
        } else {
            None
        };
        let target = utt.frame_targets[t];
        let steps: &[PieceId] = if target == BLANK_PIECE {
            &[BLANK_PIECE]
        } else {
            &[target, BLANK_PIECE]
        };
        for (k, &y) in steps.iter().enumerate() {
            let p = utt.posterior(t, k);
            out.push(HeadExample {
                graph: graph_index,
                active: tree.active_set(&prefix),
                h_enc: utt.frame(t),
                h_ctc: h_ctc.clone(),
                h_joint: joint_features(p),
                y_prev,
                target: y,
                p_rnnt_target: p[y],
            });
            if y != BLANK_PIECE {
                prefix = advance_prefix(Some(tree), vocab, &prefix, y);
                y_prev = y;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `θ ← θ − lr·∇`.
    Sgd,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

impl FromStr for Optimizer {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(SimError::BadConfig(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    /// Examples per step; `None` uses the full set every step.
    pub batch_size: Option<usize>,
    pub optimizer: Optimizer,
    /// Leading steps during which `p_gen` is treated as a constant, so only
    /// the pointer distribution learns.
    pub gate_warmup: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            steps: 200,
            seed: 7,
            batch_size: None,
            optimizer: Optimizer::Adam,
            gate_warmup: 0,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Turns a raw gradient into the update direction, in place.
    fn direction(&mut self, g: &mut [f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((gi, m), v) in g.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * *gi;
            *v = Self::B2 * *v + (1.0 - Self::B2) * *gi * *gi;
            *gi = (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TcpgenModel,
    /// Loss over the training batch before every step, followed by the full
    /// loss after the last step (`steps + 1` entries).
    pub loss_trace: Vec<f64>,
}

/// Gradient descent on the mean NLL of `examples`. With `lr = 0` the model
/// is returned unchanged.
pub fn toy_train(
    model: &TcpgenModel,
    graphs: &[TreeGraph],
    examples: &[HeadExample],
    cfg: &ToyTrainConfig,
) -> Result<TrainOutcome, SimError> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(SimError::BadConfig(format!(
            "learning rate {} is invalid",
            cfg.lr
        )));
    }
    if examples.is_empty() {
        return Err(SimError::BadConfig("no training examples".into()));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut batch: Vec<HeadExample> = Vec::new();
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| Adam::new(model.num_learnable()));
    for step in 0..cfg.steps {
        let chosen: &[HeadExample] = match cfg.batch_size {
            Some(b) if b < examples.len() => {
                batch.clear();
                let mut idx = sample(&mut rng, examples.len(), b).into_vec();
                idx.sort_unstable();
                batch.extend(idx.into_iter().map(|i| examples[i].clone()));
                &batch
            }
            _ => examples,
        };
        let (loss, grad) = head_gradients_with(&model, graphs, chosen, step < cfg.gate_warmup)
            .map_err(|e| match e {
                HeadError::InfiniteLoss(_) => SimError::NumericalError { step },
                e => e.into(),
            })?;
        if !loss.is_finite() {
            return Err(SimError::NumericalError { step });
        }
        trace.push(loss);
        match &mut adam {
            None => model.axpy(-cfg.lr, &grad),
            Some(opt) => {
                let mut g = grad.flat();
                opt.direction(&mut g);
                let mut theta = model.flat();
                for (t, d) in theta.iter_mut().zip(&g) {
                    *t -= cfg.lr * d;
                }
                model.set_flat(&theta);
            }
        }
        if !model.is_finite() {
            return Err(SimError::NumericalError { step });
        }
    }
    let last = head_loss(&model, graphs, examples).map_err(|e| match e {
        HeadError::InfiniteLoss(_) => SimError::NumericalError { step: cfg.steps },
        e => e.into(),
    })?;
    if !last.is_finite() {
        return Err(SimError::NumericalError { step: cfg.steps });
    }
    trace.push(last);
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

/// Gate value at each example with a nonempty active set, paired with the
/// example's target.
pub fn gate_values(
    model: &TcpgenModel,
    graphs: &[TreeGraph],
    examples: &[HeadExample],
) -> Result<Vec<(PieceId, f64)>, SimError> {
    let mut encs = vec![None; graphs.len()];
    let mut out = Vec::new();
    for ex in examples.iter().filter(|e| !e.active.is_empty()) {
        if encs[ex.graph].is_none() {
            encs[ex.graph] = Some(graphs[ex.graph].encode(model)?);
        }
        let enc = encs[ex.graph].as_ref().unwrap();
        let q = crate::tcpgen::compute_query(
            model,
            ex.h_enc.view(),
            ex.y_prev,
            ex.h_ctc.as_ref().map(|c| c.view()),
        )?;
        let step = head_step(
            model,
            &graphs[ex.graph].tree,
            enc.output(),
            &ex.active,
            q.view(),
            ex.h_joint.view(),
        )?;
        out.push((ex.target, step.p_gen));
    }
    Ok(out)
}
