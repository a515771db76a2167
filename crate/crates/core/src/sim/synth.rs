//! Seeded mock acoustics: transducer posteriors, CTC posteriors and
//! encoder frames for a reference piece sequence.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::lexicon::PhonemeId;
use crate::tokenizer::{PieceId, BLANK_PIECE};

/// Size of the joint-state features derived from a transducer posterior.
pub const JOINT_DIM: usize = 4;

/// One reference word: its pieces and, per piece, the phonemes the hard
/// alignment assigns to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefWord {
    pub word: String,
    pub pieces: Vec<PieceId>,
    pub piece_phonemes: Vec<Vec<PhonemeId>>,
}

/// Where each piece's noise mass goes instead of being spread uniformly.
pub type ConfusionMap = BTreeMap<PieceId, Vec<PieceId>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Vocabulary size `V`; posteriors cover blank + `V` pieces.
    pub vocab: usize,
    /// Phoneme inventory size including the CTC blank.
    pub phonemes: usize,
    pub d_enc: usize,
    /// Probability mass moved off the reference symbol.
    pub noise: f64,
    /// Noise on distributions not targeted by a confusion map.
    pub background_noise: f64,
    /// Standard deviation-like scale of per-frame encoder noise.
    pub acoustic_noise: f64,
    /// Seed of the per-phoneme acoustic vectors, shared across utterances.
    pub acoustic_seed: u64,
    pub confusion: Option<ConfusionMap>,
}

/// Per-phoneme acoustic prototypes; the blank row stays zero.
pub fn acoustic_table(phonemes: usize, d_enc: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Array2::from_shape_simple_fn((phonemes, d_enc), || rng.gen_range(-1.0..1.0));
    t.row_mut(0).fill(0.0);
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockUtterance {
    pub words: Vec<RefWord>,
    pub reference_pieces: Vec<PieceId>,
    /// Encoder output per frame.
    pub frames: Vec<Vec<f64>>,
    /// Per frame: the distribution for the first symbol of the frame and the
    /// one used for every later symbol, each over blank + `V`.
    pub rnnt_posteriors: Vec<[Vec<f64>; 2]>,
    /// Per frame distribution over the phoneme inventory (index 0 = blank).
    pub ctc_posteriors: Vec<Vec<f64>>,
    /// Reference symbol at `(frame, 0)`, blank on silence frames.
    pub frame_targets: Vec<PieceId>,
    pub noise: f64,
    pub seed: u64,
}

impl MockUtterance {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Transducer distribution after `k` symbols were emitted in frame `t`.
    pub fn posterior(&self, t: usize, k: usize) -> &[f64] {
        &self.rnnt_posteriors[t][k.min(1)]
    }

    pub fn frame(&self, t: usize) -> Array1<f64> {
        Array1::from(self.frames[t].clone())
    }

    pub fn reference_words(&self) -> Vec<String> {
        self.words.iter().map(|w| w.word.clone()).collect()
    }
}

/// `(1 - noise)` on `target`, `noise` spread uniformly over every other
/// symbol or over `confusers` when given.
fn peaked(size: usize, target: usize, noise: f64, confusers: Option<&[usize]>) -> Vec<f64> {
    let mut p = vec![0.0; size];
    match confusers {
        Some(c) if !c.is_empty() => {
            for &i in c {
                p[i] += noise / c.len() as f64;
            }
        }
        _ => {
            let share = noise / (size - 1) as f64;
            p.iter_mut().for_each(|v| *v = share);
        }
    }
    p[target] = 1.0 - noise;
    p
}

/// Floor applied before taking logs in [`joint_features`].
pub const JOINT_FLOOR: f64 = 1e-4;

/// Joint-state features of a transducer posterior: log blank probability,
/// logs of the two largest piece probabilities (floored at
/// [`JOINT_FLOOR`]), and one minus the collision probability.
pub fn joint_features(p: &[f64]) -> Array1<f64> {
    let (mut top1, mut top2) = (0.0f64, 0.0f64);
    for &v in &p[1..] {
        if v > top1 {
            top2 = top1;
            top1 = v;
        } else if v > top2 {
            top2 = v;
        }
    }
    let collision: f64 = p.iter().map(|v| v * v).sum();
    let ln = |v: f64| v.max(JOINT_FLOOR).ln();
    Array1::from(vec![ln(p[0]), ln(top1), ln(top2), 1.0 - collision])
}

/// Builds the mock utterance. Frame layout: one leading silence frame, one
/// frame per reference piece, and a silence frame after every word.
pub fn synthesize_utterance(
    words: &[RefWord],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<MockUtterance, SimError> {
    if words.is_empty() || words.iter().any(|w| w.pieces.is_empty()) {
        return Err(SimError::EmptyReference);
    }
    if !(0.0..1.0).contains(&cfg.noise) || !(0.0..1.0).contains(&cfg.background_noise) {
        return Err(SimError::BadNoise(cfg.noise));
    }
    let size = cfg.vocab + 1;
    if let Some(conf) = &cfg.confusion {
        for (&p, set) in conf {
            if set.contains(&p) {
                return Err(SimError::InvalidConfusion(p));
            }
            if set.iter().any(|&c| c == BLANK_PIECE || c >= size) {
                return Err(SimError::InvalidConfusion(p));
            }
        }
    }
    for w in words {
        if w.piece_phonemes.len() != w.pieces.len() {
            return Err(SimError::Shape(format!(
                "{:?}: phonemes per piece missing",
                w.word
            )));
        }
        if let Some(&p) = w.pieces.iter().find(|&&p| p == BLANK_PIECE || p >= size) {
            return Err(SimError::Shape(format!("piece id {p} outside vocabulary")));
        }
        if w.piece_phonemes
            .iter()
            .flatten()
            .any(|&ph| ph == 0 || ph >= cfg.phonemes)
        {
            return Err(SimError::Shape(format!(
                "{:?}: phoneme id outside inventory",
                w.word
            )));
        }
    }
    let acoustic = acoustic_table(cfg.phonemes, cfg.d_enc, cfg.acoustic_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targeted = cfg.confusion.is_some();
    let other_noise = if targeted {
        cfg.background_noise
    } else {
        cfg.noise
    };
    let silence = peaked(size, BLANK_PIECE, other_noise, None);
    let ctc_silence = peaked(cfg.phonemes, 0, cfg.noise, None);

    let mut utt = MockUtterance {
        words: words.to_vec(),
        reference_pieces: words
            .iter()
            .flat_map(|w| w.pieces.iter().copied())
            .collect(),
        frames: Vec::new(),
        rnnt_posteriors: Vec::new(),
        ctc_posteriors: Vec::new(),
        frame_targets: Vec::new(),
        noise: cfg.noise,
        seed,
    };
    let push = |utt: &mut MockUtterance,
                rng: &mut ChaCha8Rng,
                mean: Array1<f64>,
                first: Vec<f64>,
                ctc: Vec<f64>,
                target: PieceId| {
        let frame: Vec<f64> = mean
            .iter()
            .map(|m| m + cfg.acoustic_noise * rng.gen_range(-1.0..1.0))
            .collect();
        utt.frames.push(frame);
        utt.rnnt_posteriors.push([first, silence.clone()]);
        utt.ctc_posteriors.push(ctc);
        utt.frame_targets.push(target);
    };

    let zero = Array1::zeros(cfg.d_enc);
    push(
        &mut utt,
        &mut rng,
        zero.clone(),
        silence.clone(),
        ctc_silence.clone(),
        BLANK_PIECE,
    );
    for w in words {
        for (&piece, phones) in w.pieces.iter().zip(&w.piece_phonemes) {
            let confusers = cfg.confusion.as_ref().and_then(|c| c.get(&piece));
            let noise = if confusers.is_some() || !targeted {
                cfg.noise
            } else {
                cfg.background_noise
            };
            let first = peaked(size, piece, noise, confusers.map(Vec::as_slice));
            let mut mean = zero.clone();
            for &ph in phones {
                mean += &acoustic.row(ph);
            }
            let ctc = match phones.first() {
                Some(&ph) => peaked(cfg.phonemes, ph, cfg.noise, None),
                None => ctc_silence.clone(),
            };
            push(&mut utt, &mut rng, mean, first, ctc, piece);
        }
        push(
            &mut utt,
            &mut rng,
            zero.clone(),
            silence.clone(),
            ctc_silence.clone(),
            BLANK_PIECE,
        );
    }
    Ok(utt)
}
