//! WER and rare-word WER over a minimal edit alignment, and biasing-list
//! construction with sampled distractors.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Match { r: usize, h: usize },
    Substitute { r: usize, h: usize },
    Delete { r: usize },
    Insert { h: usize },
}

impl EditOp {
    /// Preference rank used to break ties between equal-cost alignments.
    pub fn rank(&self) -> u8 {
        match self {
            Self::Match { .. } => 0,
            Self::Substitute { .. } => 1,
            Self::Delete { .. } => 2,
            Self::Insert { .. } => 3,
        }
    }

    pub fn cost(&self) -> usize {
        usize::from(!matches!(self, Self::Match { .. }))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn add(&mut self, other: &Self) {
        self.matches += other.matches;
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
    }
}

/// A minimal-cost alignment, ops in left-to-right order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditAlignment {
    pub ops: Vec<EditOp>,
}

impl EditAlignment {
    pub fn counts(&self) -> EditCounts {
        let mut c = EditCounts::default();
        for op in &self.ops {
            match op {
                EditOp::Match { .. } => c.matches += 1,
                EditOp::Substitute { .. } => c.substitutions += 1,
                EditOp::Delete { .. } => c.deletions += 1,
                EditOp::Insert { .. } => c.insertions += 1,
            }
        }
        c
    }

    pub fn cost(&self) -> usize {
        self.ops.iter().map(EditOp::cost).sum()
    }
}

/// Levenshtein alignment. Among minimal-cost alignments, the backtrace from
/// the end prefers Match, then Substitute, Delete, Insert at every cell.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditAlignment {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for (j, v) in d.iter_mut().take(w).enumerate() {
        *v = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            let diag = d[(i - 1) * w + j - 1];
            if same && here == diag {
                ops.push(EditOp::Match { r: i - 1, h: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && here == diag + 1 {
                ops.push(EditOp::Substitute { r: i - 1, h: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.push(EditOp::Delete { r: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { h: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    EditAlignment { ops }
}

fn rate(errors: usize, denom: usize) -> Option<f64> {
    if denom > 0 {
        Some(errors as f64 / denom as f64)
    } else if errors == 0 {
        Some(0.0)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WerResult {
    pub counts: EditCounts,
    pub ref_len: usize,
    /// `None` when the reference is empty but the hypothesis is not.
    pub rate: Option<f64>,
    pub alignment: EditAlignment,
}

pub fn wer<S: AsRef<str>>(reference: &[S], hyp: &[S]) -> WerResult {
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let alignment = align(&r, &h);
    let counts = alignment.counts();
    WerResult {
        counts,
        ref_len: r.len(),
        rate: rate(counts.errors(), r.len()),
        alignment,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RareCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference words on the biasing list (the denominator).
    pub ref_biased: usize,
}

impl RareCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn add(&mut self, other: &Self) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_biased += other.ref_biased;
    }

    /// `None` when no reference word is on the list.
    pub fn rate(&self) -> Option<f64> {
        (self.ref_biased > 0).then(|| self.errors() as f64 / self.ref_biased as f64)
    }
}

/// Rare-word errors over `alignment`: substitutions and deletions of biasing
/// reference words, and insertions of biasing hypothesis words.
pub fn rare_counts<S: AsRef<str>>(
    reference: &[S],
    hyp: &[S],
    alignment: &EditAlignment,
    biasing: &BTreeSet<String>,
) -> RareCounts {
    let on = |w: &S| biasing.contains(w.as_ref());
    let mut c = RareCounts {
        ref_biased: reference.iter().filter(|w| on(w)).count(),
        ..Default::default()
    };
    for op in &alignment.ops {
        match *op {
            EditOp::Substitute { r, .. } if on(&reference[r]) => c.substitutions += 1,
            EditOp::Delete { r } if on(&reference[r]) => c.deletions += 1,
            EditOp::Insert { h } if on(&hyp[h]) => c.insertions += 1,
            _ => {}
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwerResult {
    pub counts: RareCounts,
    pub rate: Option<f64>,
}

pub fn rwer<S: AsRef<str>>(reference: &[S], hyp: &[S], biasing: &BTreeSet<String>) -> RwerResult {
    let w = wer(reference, hyp);
    let counts = rare_counts(reference, hyp, &w.alignment, biasing);
    RwerResult {
        counts,
        rate: counts.rate(),
    }
}

/// Corpus-level totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreTotals {
    pub words: EditCounts,
    pub ref_words: usize,
    pub rare: RareCounts,
}

impl ScoreTotals {
    pub fn add_utterance<S: AsRef<str>>(
        &mut self,
        reference: &[S],
        hyp: &[S],
        biasing: &BTreeSet<String>,
    ) {
        let w = wer(reference, hyp);
        self.words.add(&w.counts);
        self.ref_words += w.ref_len;
        self.rare
            .add(&rare_counts(reference, hyp, &w.alignment, biasing));
    }

    pub fn wer(&self) -> Option<f64> {
        rate(self.words.errors(), self.ref_words)
    }

    pub fn rwer(&self) -> Option<f64> {
        self.rare.rate()
    }
}

/// Words treated as common when building biasing lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommonWords(BTreeSet<String>);

impl CommonWords {
    /// The first `k` entries of a frequency-ranked list.
    pub fn top_k<S: AsRef<str>>(ranked: &[S], k: usize) -> Self {
        Self(
            ranked
                .iter()
                .take(k)
                .map(|w| w.as_ref().to_string())
                .collect(),
        )
    }

    /// Words seen at least `threshold` times.
    pub fn from_counts<'a>(
        counts: impl IntoIterator<Item = (&'a str, usize)>,
        threshold: usize,
    ) -> Self {
        Self(
            counts
                .into_iter()
                .filter(|&(_, c)| c >= threshold)
                .map(|(w, _)| w.to_string())
                .collect(),
        )
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiasingSelection {
    /// Rare reference words plus distractors.
    pub words: BTreeSet<String>,
    pub rare: BTreeSet<String>,
    pub distractors: BTreeSet<String>,
    /// The pool held fewer candidates than requested; all were taken.
    pub pool_exhausted: bool,
}

/// Rare reference words (not in `common`) plus `n_distractors` sampled from
/// `pool` minus those rare words.
pub fn build_biasing_list<S: AsRef<str>, P: AsRef<str>>(
    reference: &[S],
    common: &CommonWords,
    pool: &[P],
    n_distractors: usize,
    seed: u64,
) -> BiasingSelection {
    let rare: BTreeSet<String> = reference
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| !common.contains(w))
        .map(str::to_string)
        .collect();
    let candidates: Vec<&str> = pool
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| !rare.contains(*w))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pool_exhausted = candidates.len() < n_distractors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = n_distractors.min(candidates.len());
    let distractors: BTreeSet<String> = rand::seq::index::sample(&mut rng, candidates.len(), take)
        .into_iter()
        .map(|i| candidates[i].to_string())
        .collect();
    let words = rare.union(&distractors).cloned().collect();
    BiasingSelection {
        words,
        rare,
        distractors,
        pool_exhausted,
    }
}
