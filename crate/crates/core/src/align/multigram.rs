//! Joint grapheme/phoneme multigram model trained by EM over monotonic
//! segmentation lattices, with Viterbi decoding into hard alignments.
//!
//! A lattice node `(i, j)` means `i` characters and `j` phonemes have been
//! consumed. An edge consumes a grapheme chunk of length `1..=max_g` and a
//! phoneme chunk of length `0..=max_p`; empty grapheme chunks (insertions)
//! never occur, so every phoneme lands on some character.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AlignError, AlignmentKind, AlignmentMatrix};
use crate::lexicon::{Lexicon, LexiconEntry, PhonemeId, PhonemeInventory};

pub const DEFAULT_MAX_G: usize = 2;
pub const DEFAULT_MAX_P: usize = 2;

const PROB_FLOOR: f64 = 1e-12;
const PRUNE_BELOW: f64 = 1e-6;

/// A grapheme chunk paired with a (possibly empty) phoneme chunk.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkPair {
    pub graphemes: String,
    pub phonemes: Vec<PhonemeId>,
}

impl ChunkPair {
    pub fn new(graphemes: &str, phonemes: &[PhonemeId]) -> Self {
        Self {
            graphemes: graphemes.to_string(),
            phonemes: phonemes.to_vec(),
        }
    }

    fn from_entry(entry: &LexiconEntry, i: usize, a: usize, j: usize, b: usize) -> Self {
        Self {
            graphemes: entry.chars[i..i + a].iter().collect(),
            phonemes: entry.phonemes[j..j + b].to_vec(),
        }
    }

    fn grapheme_len(&self) -> usize {
        self.graphemes.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_g: usize,
    pub max_p: usize,
    /// Allow grapheme chunks that produce no phoneme (silent letters).
    pub allow_deletions: bool,
    /// Allow chunks with more than one symbol on both sides (e.g. `AB:a b`).
    /// Off by default: on small lexicons such chunks memorize letter pairs
    /// and win the likelihood over the true one-to-one mapping.
    #[serde(default)]
    pub many_to_many: bool,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_g: DEFAULT_MAX_G,
            max_p: DEFAULT_MAX_P,
            allow_deletions: true,
            many_to_many: false,
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Total log-likelihood of the lexicon under each visited model,
    /// starting with the uniform initialization.
    pub log_likelihoods: Vec<f64>,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
}

/// Joint distribution over chunk pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MultigramModel {
    pub max_g: usize,
    pub max_p: usize,
    pub allow_deletions: bool,
    probs: BTreeMap<ChunkPair, f64>,
}

/// Best monotonic chunk path for one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    /// `(grapheme_len, phoneme_len)` per chunk, in order.
    pub steps: Vec<(usize, usize)>,
    /// Sum of chunk log-probabilities, folded from the last chunk backwards.
    pub log_score: f64,
}

struct Edge {
    from: usize,
    to: usize,
    chunk: usize,
}

/// Edges on at least one complete path, sorted by source node.
struct Lattice {
    n_nodes: usize,
    edges: Vec<Edge>,
}

fn node(i: usize, j: usize, l_p: usize) -> usize {
    i * (l_p + 1) + j
}

/// Enumerates the live lattice edges of `entry`, calling `intern` for every
/// chunk pair encountered. Returns `None` when no complete path exists.
fn build_lattice(
    entry: &LexiconEntry,
    cfg: (usize, usize, bool, bool),
    mut intern: impl FnMut(ChunkPair) -> Option<usize>,
) -> Option<Lattice> {
    let (max_g, max_p, deletions, many_to_many) = cfg;
    let (l_c, l_p) = (entry.char_len(), entry.phoneme_len());
    let n_nodes = (l_c + 1) * (l_p + 1);
    let min_b = if deletions { 0 } else { 1 };
    let mut raw = Vec::new();
    for i in 0..l_c {
        for j in 0..=l_p {
            for a in 1..=max_g.min(l_c - i) {
                for b in min_b..=max_p.min(l_p - j) {
                    if a > 1 && b > 1 && !many_to_many {
                        continue;
                    }
                    raw.push((i, j, a, b));
                }
            }
        }
    }
    let mut fwd = vec![false; n_nodes];
    fwd[0] = true;
    for &(i, j, a, b) in &raw {
        if fwd[node(i, j, l_p)] {
            fwd[node(i + a, j + b, l_p)] = true;
        }
    }
    let mut bwd = vec![false; n_nodes];
    bwd[n_nodes - 1] = true;
    for &(i, j, a, b) in raw.iter().rev() {
        if bwd[node(i + a, j + b, l_p)] {
            bwd[node(i, j, l_p)] = true;
        }
    }
    if !fwd[n_nodes - 1] {
        return None;
    }
    let mut edges = Vec::new();
    for (i, j, a, b) in raw {
        let (from, to) = (node(i, j, l_p), node(i + a, j + b, l_p));
        if fwd[from] && bwd[to] {
            if let Some(chunk) = intern(ChunkPair::from_entry(entry, i, a, j, b)) {
                edges.push(Edge { from, to, chunk });
            }
        }
    }
    Some(Lattice { n_nodes, edges })
}

/// Forward/backward sums. Returns the likelihood and adds each chunk's
/// expected count into `counts`.
fn forward_backward(lat: &Lattice, probs: &[f64], counts: &mut [f64]) -> f64 {
    let mut alpha = vec![0.0; lat.n_nodes];
    alpha[0] = 1.0;
    for e in &lat.edges {
        alpha[e.to] += alpha[e.from] * probs[e.chunk];
    }
    let mut beta = vec![0.0; lat.n_nodes];
    beta[lat.n_nodes - 1] = 1.0;
    for e in lat.edges.iter().rev() {
        beta[e.from] += probs[e.chunk] * beta[e.to];
    }
    let total = alpha[lat.n_nodes - 1];
    if total > 0.0 {
        for e in &lat.edges {
            counts[e.chunk] += alpha[e.from] * probs[e.chunk] * beta[e.to] / total;
        }
    }
    total
}

/// True if the lattice still has a complete path using only `alive` chunks.
fn alignable(lat: &Lattice, alive: &[bool]) -> bool {
    let mut reach = vec![false; lat.n_nodes];
    reach[0] = true;
    for e in &lat.edges {
        if reach[e.from] && alive[e.chunk] {
            reach[e.to] = true;
        }
    }
    reach[lat.n_nodes - 1]
}

impl MultigramModel {
    /// Trains with EM from a uniform distribution over every chunk pair
    /// that appears on a complete path of some entry.
    pub fn train(lexicon: &Lexicon, cfg: &EmConfig) -> Result<(Self, TrainReport), AlignError> {
        Self::train_entries(lexicon.entries(), cfg)
    }

    pub fn train_entries<'a>(
        entries: impl IntoIterator<Item = &'a LexiconEntry>,
        cfg: &EmConfig,
    ) -> Result<(Self, TrainReport), AlignError> {
        if cfg.max_g == 0 || cfg.max_p == 0 {
            return Err(AlignError::BadChunkLimits {
                max_g: cfg.max_g,
                max_p: cfg.max_p,
            });
        }
        let mut chunks: Vec<ChunkPair> = Vec::new();
        let mut index: HashMap<ChunkPair, usize> = HashMap::new();
        let mut lattices = Vec::new();
        for entry in entries {
            let lat = build_lattice(
                entry,
                (cfg.max_g, cfg.max_p, cfg.allow_deletions, cfg.many_to_many),
                |c| {
                    let next = chunks.len();
                    Some(*index.entry(c.clone()).or_insert_with(|| {
                        chunks.push(c);
                        next
                    }))
                },
            )
            .ok_or_else(|| AlignError::UnalignableEntry(entry.word.clone()))?;
            lattices.push(lat);
        }
        if lattices.is_empty() {
            return Err(AlignError::EmptyInput);
        }

        let mut probs = vec![1.0 / chunks.len() as f64; chunks.len()];
        let mut alive = vec![true; chunks.len()];
        let mut report = TrainReport {
            log_likelihoods: Vec::new(),
            iterations: 0,
            converged: false,
        };
        loop {
            let mut counts = vec![0.0; chunks.len()];
            let mut ll = 0.0;
            for lat in &lattices {
                ll += forward_backward(lat, &probs, &mut counts)
                    .max(PROB_FLOOR)
                    .ln();
            }
            let it = report.log_likelihoods.len();
            if !ll.is_finite() {
                return Err(AlignError::NumericalError(it));
            }
            let prev = report.log_likelihoods.last().copied();
            report.log_likelihoods.push(ll);
            if prev.is_some_and(|p| ll - p < cfg.tol) {
                report.converged = true;
                break;
            }
            if report.iterations >= cfg.max_iters {
                break;
            }

            let total: f64 = counts.iter().sum();
            for (p, c) in probs.iter_mut().zip(&counts) {
                *p = c / total;
            }
            // Prune tiny chunks, but never one a word needs to stay alignable.
            let mut next_alive: Vec<bool> = alive
                .iter()
                .zip(&probs)
                .map(|(&a, &p)| a && p >= PRUNE_BELOW)
                .collect();
            for lat in &lattices {
                if !alignable(lat, &next_alive) {
                    for e in &lat.edges {
                        if alive[e.chunk] {
                            next_alive[e.chunk] = true;
                        }
                    }
                }
            }
            alive = next_alive;
            for (p, &a) in probs.iter_mut().zip(&alive) {
                if !a {
                    *p = 0.0;
                }
            }
            let kept: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= kept);
            report.iterations += 1;
        }

        let probs = chunks
            .into_iter()
            .zip(probs)
            .filter(|(_, p)| *p > 0.0)
            .collect();
        Ok((
            Self {
                max_g: cfg.max_g,
                max_p: cfg.max_p,
                allow_deletions: cfg.allow_deletions,
                probs,
            },
            report,
        ))
    }

    pub fn from_probs(
        max_g: usize,
        max_p: usize,
        allow_deletions: bool,
        probs: BTreeMap<ChunkPair, f64>,
    ) -> Self {
        Self {
            max_g,
            max_p,
            allow_deletions,
            probs,
        }
    }

    pub fn prob(&self, chunk: &ChunkPair) -> f64 {
        self.probs.get(chunk).copied().unwrap_or(0.0)
    }

    /// Floored log-probability used by Viterbi scoring.
    pub fn log_prob(&self, chunk: &ChunkPair) -> Option<f64> {
        self.probs.get(chunk).map(|p| p.max(PROB_FLOOR).ln())
    }

    /// `P(phonemes | graphemes)` derived from the joint distribution.
    pub fn conditional(&self, chunk: &ChunkPair) -> f64 {
        let marginal: f64 = self
            .probs
            .iter()
            .filter(|(c, _)| c.graphemes == chunk.graphemes)
            .map(|(_, p)| p)
            .sum();
        if marginal > 0.0 {
            self.prob(chunk) / marginal
        } else {
            0.0
        }
    }

    pub fn chunks(&self) -> impl Iterator<Item = (&ChunkPair, f64)> {
        self.probs.iter().map(|(c, &p)| (c, p))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Forward likelihood of `entry` under the model.
    pub fn likelihood(&self, entry: &LexiconEntry) -> f64 {
        let mut chunk_probs = Vec::new();
        let lat = build_lattice(
            entry,
            (self.max_g, self.max_p, self.allow_deletions, true),
            |c| {
                self.probs.get(&c).map(|&p| {
                    chunk_probs.push(p);
                    chunk_probs.len() - 1
                })
            },
        );
        match lat {
            Some(lat) => {
                let mut scratch = vec![0.0; chunk_probs.len()];
                forward_backward(&lat, &chunk_probs, &mut scratch)
            }
            None => 0.0,
        }
    }

    /// Most likely chunk path. Ties go to the path whose first differing
    /// chunk has the shorter grapheme side, then the shorter phoneme side.
    pub fn viterbi_path(&self, entry: &LexiconEntry) -> Result<ViterbiPath, AlignError> {
        let (l_c, l_p) = (entry.char_len(), entry.phoneme_len());
        let min_b = if self.allow_deletions { 0 } else { 1 };
        let n_nodes = (l_c + 1) * (l_p + 1);
        // best[n] = best score from n to the end; choice[n] = (a, b).
        let mut best = vec![f64::NEG_INFINITY; n_nodes];
        let mut choice = vec![(0usize, 0usize); n_nodes];
        best[n_nodes - 1] = 0.0;
        for i in (0..l_c).rev() {
            for j in (0..=l_p).rev() {
                let from = node(i, j, l_p);
                for a in 1..=self.max_g.min(l_c - i) {
                    for b in min_b..=self.max_p.min(l_p - j) {
                        let rest = best[node(i + a, j + b, l_p)];
                        if rest == f64::NEG_INFINITY {
                            continue;
                        }
                        let Some(lp) = self.log_prob(&ChunkPair::from_entry(entry, i, a, j, b))
                        else {
                            continue;
                        };
                        // Strict improvement only: (a, b) is visited in
                        // increasing order, so ties keep the shorter chunk.
                        let score = lp + rest;
                        if score > best[from] {
                            best[from] = score;
                            choice[from] = (a, b);
                        }
                    }
                }
            }
        }
        if best[0] == f64::NEG_INFINITY {
            return Err(AlignError::UnalignableEntry(entry.word.clone()));
        }
        let mut steps = Vec::new();
        let (mut i, mut j) = (0, 0);
        while (i, j) != (l_c, l_p) {
            let (a, b) = choice[node(i, j, l_p)];
            steps.push((a, b));
            i += a;
            j += b;
        }
        Ok(ViterbiPath {
            steps,
            log_score: best[0],
        })
    }

    /// Hard alignment from the Viterbi path. Inside an `n`-character,
    /// `m`-phoneme chunk, phoneme `k` goes to chunk character `min(k, n-1)`.
    pub fn viterbi_align(&self, entry: &LexiconEntry) -> Result<AlignmentMatrix, AlignError> {
        let path = self.viterbi_path(entry)?;
        path_to_matrix(entry.char_len(), entry.phoneme_len(), &path.steps)
    }

    pub fn to_json(&self, inv: &PhonemeInventory) -> serde_json::Value {
        let chunks: serde_json::Map<String, serde_json::Value> = self
            .probs
            .iter()
            .map(|(c, &p)| {
                let phones: Vec<&str> = c
                    .phonemes
                    .iter()
                    .map(|&id| inv.symbol(id).unwrap_or("?"))
                    .collect();
                (format!("{}|{}", c.graphemes, phones.join(" ")), p.into())
            })
            .collect();
        serde_json::json!({
            "max_g": self.max_g,
            "max_p": self.max_p,
            "allow_deletions": self.allow_deletions,
            "chunks": chunks,
        })
    }

    pub fn from_json(
        value: &serde_json::Value,
        inv: &PhonemeInventory,
    ) -> Result<Self, AlignError> {
        #[derive(Deserialize)]
        struct Raw {
            max_g: usize,
            max_p: usize,
            #[serde(default = "yes")]
            allow_deletions: bool,
            chunks: BTreeMap<String, f64>,
        }
        fn yes() -> bool {
            true
        }
        let raw: Raw =
            serde_json::from_value(value.clone()).map_err(|e| AlignError::Format(e.to_string()))?;
        let mut probs = BTreeMap::new();
        for (key, p) in raw.chunks {
            let (g, ph) = key
                .rsplit_once('|')
                .ok_or_else(|| AlignError::Format(format!("bad chunk key {key:?}")))?;
            let phonemes = ph
                .split_whitespace()
                .map(|s| {
                    inv.id(s)
                        .filter(|&id| id != PhonemeInventory::BLANK)
                        .ok_or_else(|| AlignError::Format(format!("unknown phoneme {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let chunk = ChunkPair {
                graphemes: g.to_string(),
                phonemes,
            };
            if chunk.grapheme_len() == 0
                || chunk.grapheme_len() > raw.max_g
                || chunk.phonemes.len() > raw.max_p
                || !(p > 0.0 && p <= 1.0)
            {
                return Err(AlignError::Format(format!("invalid chunk {key:?}={p}")));
            }
            probs.insert(chunk, p);
        }
        Ok(Self::from_probs(
            raw.max_g,
            raw.max_p,
            raw.allow_deletions,
            probs,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>, inv: &PhonemeInventory) -> Result<(), AlignError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json(inv))
            .map_err(|e| AlignError::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| AlignError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>, inv: &PhonemeInventory) -> Result<Self, AlignError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AlignError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| AlignError::Format(e.to_string()))?;
        Self::from_json(&value, inv)
    }

    /// Distinct grapheme chunks present in the model.
    pub fn grapheme_chunks(&self) -> HashSet<&str> {
        self.probs.keys().map(|c| c.graphemes.as_str()).collect()
    }
}

/// Expands chunk steps into a hard `l_c × l_p` matrix.
pub(crate) fn path_to_matrix(
    l_c: usize,
    l_p: usize,
    steps: &[(usize, usize)],
) -> Result<AlignmentMatrix, AlignError> {
    let mut w = Array2::zeros((l_c, l_p));
    let (mut i, mut j) = (0, 0);
    for &(a, b) in steps {
        for k in 0..b {
            w[[i + k.min(a - 1), j + k]] = 1.0;
        }
        i += a;
        j += b;
    }
    AlignmentMatrix::new(w, AlignmentKind::Hard)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn inv() -> PhonemeInventory {
        PhonemeInventory::new(["x", "y", "tS", "ae", "t", "a", "b", "c"]).unwrap()
    }

    fn entry(word: &str, phones: &[&str], inv: &PhonemeInventory) -> LexiconEntry {
        LexiconEntry::from_symbols(word, phones, inv).unwrap()
    }

    #[test]
    fn two_char_one_phoneme_lattice() {
        let inv = inv();
        let x = inv.id("x").unwrap();
        let e = entry("AB", &["x"], &inv);
        let cfg = EmConfig {
            max_g: 2,
            max_p: 1,
            ..Default::default()
        };
        // One EM step from the uniform start is enough to inspect the chunk set.
        let (model, _) = MultigramModel::train_entries(
            [&e],
            &EmConfig {
                max_iters: 0,
                ..cfg
            },
        )
        .unwrap();
        let got: Vec<ChunkPair> = model.chunks().map(|(c, _)| c.clone()).collect();
        let mut want = vec![
            ChunkPair::new("A", &[x]),
            ChunkPair::new("B", &[x]),
            ChunkPair::new("AB", &[x]),
            ChunkPair::new("A", &[]),
            ChunkPair::new("B", &[]),
        ];
        want.sort();
        assert_eq!(got, want);

        // The three complete paths: A:x B:-, A:- B:x, AB:x.
        let p = |g: &str, ph: &[usize]| model.prob(&ChunkPair::new(g, ph));
        let paths = [
            p("A", &[x]) * p("B", &[]),
            p("A", &[]) * p("B", &[x]),
            p("AB", &[x]),
        ];
        let lik = model.likelihood(&e);
        assert!((paths.iter().sum::<f64>() - lik).abs() < 1e-15);
        let posterior: f64 = paths.iter().map(|q| q / lik).sum();
        assert!((posterior - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_lexicon_is_rejected() {
        let none: Vec<&LexiconEntry> = Vec::new();
        assert!(matches!(
            MultigramModel::train_entries(none, &EmConfig::default()),
            Err(AlignError::EmptyInput)
        ));
    }

    #[test]
    fn too_many_phonemes_is_unalignable() {
        let inv = inv();
        let e = entry("A", &["x", "y", "x"], &inv);
        assert!(matches!(
            MultigramModel::train_entries([&e], &EmConfig::default()),
            Err(AlignError::UnalignableEntry(w)) if w == "A"
        ));
    }

    #[test]
    fn single_char_two_phonemes() {
        let inv = inv();
        let e = entry("A", &["x", "y"], &inv);
        let (model, _) = MultigramModel::train_entries([&e], &EmConfig::default()).unwrap();
        let a = model.viterbi_align(&e).unwrap();
        assert_eq!(a.weights(), &Array2::from_elem((1, 2), 1.0));
    }

    #[test]
    fn digraph_expansion() {
        let inv = inv();
        let e = entry("CHAT", &["tS", "ae", "t"], &inv);
        let (ts, ae, t) = (
            inv.id("tS").unwrap(),
            inv.id("ae").unwrap(),
            inv.id("t").unwrap(),
        );
        let probs = BTreeMap::from([
            (ChunkPair::new("CH", &[ts]), 0.4),
            (ChunkPair::new("A", &[ae]), 0.3),
            (ChunkPair::new("T", &[t]), 0.3),
        ]);
        let model = MultigramModel::from_probs(2, 2, true, probs);
        let path = model.viterbi_path(&e).unwrap();
        assert_eq!(path.steps, vec![(2, 1), (1, 1), (1, 1)]);
        let a = model.viterbi_align(&e).unwrap();
        assert_eq!(a.assignment().unwrap(), vec![0, 2, 3]);
        assert_eq!(a.weights().row(1).sum(), 0.0);
    }

    #[test]
    fn many_to_many_expansion_overflows_to_last_char() {
        let m = path_to_matrix(3, 4, &[(2, 3), (1, 1)]).unwrap();
        assert_eq!(m.assignment().unwrap(), vec![0, 1, 1, 2]);
        let m = path_to_matrix(2, 1, &[(2, 1)]).unwrap();
        assert_eq!(m.assignment().unwrap(), vec![0]);
    }

    #[test]
    fn tie_prefers_shorter_grapheme_chunk() {
        let inv = inv();
        let (a, b) = (inv.id("a").unwrap(), inv.id("b").unwrap());
        let e = entry("AB", &["a", "b"], &inv);
        // P(AB:ab) == P(A:a) * P(B:b) exactly (0.5 * 0.5 = 0.25).
        let probs = BTreeMap::from([
            (ChunkPair::new("A", &[a]), 0.5),
            (ChunkPair::new("B", &[b]), 0.5),
            (ChunkPair::new("AB", &[a, b]), 0.25),
        ]);
        let model = MultigramModel::from_probs(2, 2, true, probs);
        assert_eq!(model.viterbi_path(&e).unwrap().steps, vec![(1, 1), (1, 1)]);
    }

    #[test]
    fn json_round_trip() {
        let inv = inv();
        let e1 = entry("CHAT", &["tS", "ae", "t"], &inv);
        let e2 = entry("AT", &["ae", "t"], &inv);
        let (model, _) = MultigramModel::train_entries([&e1, &e2], &EmConfig::default()).unwrap();
        let back = MultigramModel::from_json(&model.to_json(&inv), &inv).unwrap();
        assert_eq!(back, model);
    }
}
