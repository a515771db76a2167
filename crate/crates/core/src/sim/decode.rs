//! Frame-synchronous greedy and beam decoding over a mock utterance with
//! optional pointer-generator biasing.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::synth::{joint_features, MockUtterance};
use super::SimError;
use crate::encoder::{NodeEncodings, TreeGraph};
use crate::params::TcpgenModel;
use crate::tcpgen::{compute_query, ctc_phoneme_embedding, head_step, interpolate};
use crate::tokenizer::{PieceId, SubwordVocab, BLANK_PIECE};
use crate::trie::PrefixTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_symbols_per_frame: usize,
    pub biasing_enabled: bool,
    pub phoneme_query_enabled: bool,
    /// Runs the whole head but interpolates with `p_gen = 0`.
    pub force_pgen_zero: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 4,
            max_symbols_per_frame: 3,
            biasing_enabled: true,
            phoneme_query_enabled: false,
            force_pgen_zero: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.beam == 0 || self.max_symbols_per_frame == 0 {
            return Err(SimError::BadConfig(
                "beam and max_symbols_per_frame must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A model with the encodings of one biasing tree.
#[derive(Debug, Clone)]
pub struct Biasing<'a> {
    pub model: &'a TcpgenModel,
    pub graph: &'a TreeGraph,
    pub encodings: NodeEncodings,
}

impl<'a> Biasing<'a> {
    pub fn new(model: &'a TcpgenModel, graph: &'a TreeGraph) -> Result<Self, SimError> {
        Ok(Self {
            model,
            graph,
            encodings: graph.encode(model)?,
        })
    }

    pub fn tree(&self) -> &PrefixTree {
        &self.graph.tree
    }
}

/// Partial-word prefix after emitting `y`: cleared on a word-final piece or
/// when the extended prefix leaves the tree.
pub fn advance_prefix(
    tree: Option<&PrefixTree>,
    vocab: &SubwordVocab,
    prefix: &[PieceId],
    y: PieceId,
) -> Vec<PieceId> {
    if y == BLANK_PIECE {
        return prefix.to_vec();
    }
    if vocab.is_word_final(y) {
        return Vec::new();
    }
    let mut next = prefix.to_vec();
    next.push(y);
    match tree {
        Some(t) if t.walk(&next).is_some() => next,
        _ => Vec::new(),
    }
}

/// Output distribution and gate at `(t, k)` for a hypothesis with previous
/// token `y_prev` and partial-word prefix `prefix`.
pub fn step_distribution(
    utt: &MockUtterance,
    t: usize,
    k: usize,
    y_prev: PieceId,
    prefix: &[PieceId],
    bias: Option<&Biasing>,
    cfg: &DecodeConfig,
) -> Result<(Vec<f64>, Option<f64>), SimError> {
    let p = utt.posterior(t, k);
    let Some(b) = bias.filter(|_| cfg.biasing_enabled) else {
        return Ok((p.to_vec(), None));
    };
    let tree = b.tree();
    let active = tree.active_set(prefix);
    if active.is_empty() {
        return Ok((p.to_vec(), None));
    }
    let h_enc = utt.frame(t);
    let h_ctc = if cfg.phoneme_query_enabled {
        Some(ctc_phoneme_embedding(
            &utt.ctc_posteriors[t],
            &b.model.encoder.phoneme_table,
        )?)
    } else {
        None
    };
    let q = compute_query(
        b.model,
        h_enc.view(),
        y_prev,
        h_ctc.as_ref().map(|c| c.view()),
    )?;
    let joint = joint_features(p);
    let step = head_step(
        b.model,
        tree,
        b.encodings.output(),
        &active,
        q.view(),
        joint.view(),
    )?;
    let g = if cfg.force_pgen_zero { 0.0 } else { step.p_gen };
    Ok((interpolate(p, &step.dist, g)?, Some(g)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub pieces: Vec<PieceId>,
    pub prefix: Vec<PieceId>,
    pub log_prob: f64,
}

impl Hypothesis {
    fn empty() -> Self {
        Self {
            pieces: Vec::new(),
            prefix: Vec::new(),
            log_prob: 0.0,
        }
    }

    fn y_prev(&self) -> PieceId {
        self.pieces.last().copied().unwrap_or(BLANK_PIECE)
    }
}

/// Higher score first, then lexicographically smaller pieces.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.pieces.cmp(&b.pieces))
}

/// Per-frame argmax decoding: at each step the symbol with the highest
/// resulting score wins, ties going to the lowest id (blank first).
pub fn greedy_decode(
    utt: &MockUtterance,
    vocab: &SubwordVocab,
    bias: Option<&Biasing>,
    cfg: &DecodeConfig,
) -> Result<Hypothesis, SimError> {
    cfg.validate()?;
    let tree = bias.map(Biasing::tree);
    let mut h = Hypothesis::empty();
    for t in 0..utt.num_frames() {
        for k in 0..=cfg.max_symbols_per_frame {
            let (p, _) = step_distribution(utt, t, k, h.y_prev(), &h.prefix, bias, cfg)?;
            let limit = if k < cfg.max_symbols_per_frame {
                p.len()
            } else {
                1
            };
            let mut best = (BLANK_PIECE, h.log_prob + p[0].ln());
            for (y, &py) in p.iter().enumerate().take(limit).skip(1) {
                let s = h.log_prob + py.ln();
                if s > best.1 {
                    best = (y, s);
                }
            }
            h.log_prob = best.1;
            if best.0 == BLANK_PIECE {
                break;
            }
            h.prefix = advance_prefix(tree, vocab, &h.prefix, best.0);
            h.pieces.push(best.0);
        }
    }
    Ok(h)
}

/// Beam search. Within a frame every live hypothesis is extended by one
/// symbol and the best `beam` extensions (pooled) survive; blank extensions
/// finish the frame. Finished hypotheses with equal piece sequences are
/// merged keeping the higher score. With `beam = 1` this is
/// [`greedy_decode`].
pub fn beam_decode(
    utt: &MockUtterance,
    vocab: &SubwordVocab,
    bias: Option<&Biasing>,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>, SimError> {
    cfg.validate()?;
    let tree = bias.map(Biasing::tree);
    let mut hyps = vec![Hypothesis::empty()];
    for t in 0..utt.num_frames() {
        let mut live = std::mem::take(&mut hyps);
        let mut finished: BTreeMap<Vec<PieceId>, Hypothesis> = BTreeMap::new();
        let mut k = 0;
        while !live.is_empty() {
            let mut cands: Vec<(Hypothesis, bool)> = Vec::new();
            for h in &live {
                let (p, _) = step_distribution(utt, t, k, h.y_prev(), &h.prefix, bias, cfg)?;
                cands.push((
                    Hypothesis {
                        log_prob: h.log_prob + p[0].ln(),
                        ..h.clone()
                    },
                    true,
                ));
                if k < cfg.max_symbols_per_frame {
                    // Only the best `beam` symbols of one hypothesis can survive.
                    let score = |y: PieceId| h.log_prob + p[y].ln();
                    let mut ys: Vec<PieceId> = (1..p.len()).filter(|&y| p[y] > 0.0).collect();
                    ys.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
                    for &y in ys.iter().take(cfg.beam) {
                        let mut pieces = h.pieces.clone();
                        pieces.push(y);
                        cands.push((
                            Hypothesis {
                                pieces,
                                prefix: advance_prefix(tree, vocab, &h.prefix, y),
                                log_prob: score(y),
                            },
                            false,
                        ));
                    }
                }
            }
            cands.sort_by(|a, b| rank(&a.0, &b.0).then(b.1.cmp(&a.1)));
            cands.truncate(cfg.beam);
            live = Vec::new();
            for (h, done) in cands {
                if done {
                    match finished.get(&h.pieces) {
                        Some(old) if old.log_prob >= h.log_prob => {}
                        _ => {
                            finished.insert(h.pieces.clone(), h);
                        }
                    }
                } else {
                    live.push(h);
                }
            }
            k += 1;
        }
        hyps = finished.into_values().collect();
        hyps.sort_by(rank);
        hyps.truncate(cfg.beam);
    }
    Ok(hyps)
}

/// Best hypothesis of [`beam_decode`].
pub fn decode(
    utt: &MockUtterance,
    vocab: &SubwordVocab,
    bias: Option<&Biasing>,
    cfg: &DecodeConfig,
) -> Result<Hypothesis, SimError> {
    let hyps = beam_decode(utt, vocab, bias, cfg)?;
    Ok(hyps
        .into_iter()
        .next()
        .expect("beam keeps at least one hypothesis"))
}
