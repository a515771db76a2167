//! Node encodings of a prefix tree: subword embeddings, phoneme-aware
//! additions built from alignment matrices, and GCN propagation.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::align::{compose, AlignError, AlignmentMatrix, SubwordCharMatrix};
use crate::lexicon::{LexiconEntry, PhonemeId};
use crate::params::TcpgenModel;
use crate::tokenizer::Segmentation;
use crate::trie::{NodeId, PrefixTree, RootMode, ROOT};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("no alignment for biasing word {0:?}")]
    MissingAlignment(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("internal invariant violated: {0}")]
    InvariantBreach(String),
    #[error("non-finite value in GCN layer {0}")]
    NumericalError(usize),
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// Alignment data for one biasing word: `A_s→c · A_c→p` and its phonemes.
#[derive(Debug, Clone, PartialEq)]
pub struct WordPhonemes {
    /// `l_s × l_p`.
    pub sub_phone: Array2<f64>,
    pub phonemes: Vec<PhonemeId>,
}

impl WordPhonemes {
    pub fn new(
        sc: &SubwordCharMatrix,
        cp: &AlignmentMatrix,
        phonemes: Vec<PhonemeId>,
    ) -> Result<Self, EncodeError> {
        let sub_phone = compose(sc, cp)?;
        if sub_phone.ncols() != phonemes.len() {
            return Err(EncodeError::ShapeError(format!(
                "alignment has {} phoneme columns, word has {} phonemes",
                sub_phone.ncols(),
                phonemes.len()
            )));
        }
        Ok(Self {
            sub_phone,
            phonemes,
        })
    }

    pub fn from_entry(
        entry: &LexiconEntry,
        seg: &Segmentation,
        cp: &AlignmentMatrix,
    ) -> Result<Self, EncodeError> {
        cp.check_entry(entry)?;
        let sc = SubwordCharMatrix::from_segmentation(entry, seg)?;
        Self::new(&sc, cp, entry.phonemes.clone())
    }

    pub fn subword_len(&self) -> usize {
        self.sub_phone.nrows()
    }

    /// `A_s→c A_c→p P`, `l_s × d_p`, with `P` rows taken from `table`.
    pub fn features(&self, table: &Array2<f64>) -> Array2<f64> {
        let p = table.select(Axis(0), &self.phonemes);
        self.sub_phone.dot(&p)
    }
}

/// Builds [`WordPhonemes`] for every word of `tree` from the lexicon entries
/// and character→phoneme alignments keyed by word.
pub fn tree_word_phonemes<'a>(
    tree: &PrefixTree,
    entry_of: impl Fn(&str) -> Option<&'a LexiconEntry>,
    alignments: &BTreeMap<String, AlignmentMatrix>,
) -> Result<BTreeMap<String, WordPhonemes>, EncodeError> {
    let mut out = BTreeMap::new();
    for tw in tree.words() {
        let missing = || EncodeError::MissingAlignment(tw.word.clone());
        let entry = entry_of(&tw.word).ok_or_else(missing)?;
        let cp = alignments.get(&tw.word).ok_or_else(missing)?;
        out.insert(
            tw.word.clone(),
            WordPhonemes::from_entry(entry, &tw.segmentation, cp)?,
        );
    }
    Ok(out)
}

/// Unprojected phoneme features for every row: row `n` is the sum over
/// `w ∈ W(n)` of row `i_n` of `A_s→c A_c→p P`. Row 0 (root) is zero.
pub fn phoneme_node_features(
    tree: &PrefixTree,
    inputs: &BTreeMap<String, WordPhonemes>,
    table: &Array2<f64>,
) -> Result<Array2<f64>, EncodeError> {
    let mut feats = Vec::with_capacity(tree.words().len());
    for tw in tree.words() {
        let wp = inputs
            .get(&tw.word)
            .ok_or_else(|| EncodeError::MissingAlignment(tw.word.clone()))?;
        if wp.subword_len() != tw.segmentation.len() {
            return Err(EncodeError::ShapeError(format!(
                "{:?}: alignment has {} subword rows, segmentation has {}",
                tw.word,
                wp.subword_len(),
                tw.segmentation.len()
            )));
        }
        feats.push(wp.features(table));
    }
    let mut x = Array2::zeros((tree.len() + 1, table.ncols()));
    for (n, node) in tree.nodes().iter().enumerate().skip(1) {
        let mut row = x.row_mut(n);
        for &w in &node.words {
            let f = &feats[w];
            if node.depth == 0 || node.depth > f.nrows() {
                return Err(EncodeError::InvariantBreach(format!(
                    "node {n} at depth {} under a {}-piece word",
                    node.depth,
                    f.nrows()
                )));
            }
            row += &f.row(node.depth - 1);
        }
    }
    Ok(x)
}

/// `e(n)` for a single node, projected by `proj` (identity when `None`).
pub fn phoneme_node_encoding(
    tree: &PrefixTree,
    n: NodeId,
    inputs: &BTreeMap<String, WordPhonemes>,
    table: &Array2<f64>,
    proj: Option<&Array2<f64>>,
) -> Result<Array1<f64>, EncodeError> {
    let x = phoneme_node_features(tree, inputs, table)?;
    let row = x.row(n);
    Ok(match proj {
        Some(w) => row.dot(w),
        None => row.to_owned(),
    })
}

/// `S = D̃^{-1/2} Ã D̃^{-1/2}` stored as neighbour lists (self-loop included).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdj {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseAdj {
    /// Undirected graph over `size` vertices with the given edges plus
    /// self-loops.
    pub fn from_edges(size: usize, edges: &[(usize, usize)]) -> Self {
        let mut nbrs: Vec<Vec<usize>> = (0..size).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        let deg: Vec<f64> = nbrs.iter().map(|v| v.len() as f64).collect();
        let rows = nbrs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut r: Vec<(usize, f64)> = v
                    .iter()
                    .map(|&j| (j, 1.0 / (deg[i] * deg[j]).sqrt()))
                    .collect();
                r.sort_by_key(|e| e.0);
                r
            })
            .collect();
        Self { rows }
    }

    pub fn for_tree(tree: &PrefixTree, mode: RootMode) -> Self {
        Self::from_edges(tree.len() + 1, &tree.edges(mode))
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// `S · h`.
    pub fn apply(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.dim());
        for (i, row) in self.rows.iter().enumerate() {
            let mut o = out.row_mut(i);
            for &(j, w) in row {
                o.scaled_add(w, &h.row(j));
            }
        }
        out
    }

    pub fn dense(&self) -> Array2<f64> {
        let n = self.size();
        let mut s = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                s[[i, j]] = w;
            }
        }
        s
    }
}

/// Everything the backward pass needs from a GCN forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEncodings {
    /// `H^(0) … H^(L)`, each `(N+1) × d`.
    pub layers: Vec<Array2<f64>>,
    /// `S · H^(l)` for `l < L`.
    pub propagated: Vec<Array2<f64>>,
}

impl NodeEncodings {
    pub fn input(&self) -> &Array2<f64> {
        &self.layers[0]
    }

    pub fn output(&self) -> &Array2<f64> {
        self.layers.last().unwrap()
    }
}

/// `H^(0)`: row `n` is `Emb(s(n))`, `e(n)`, or their sum depending on the
/// encoding mode; row 0 is the root embedding. `phoneme_features` are the
/// unprojected rows from [`phoneme_node_features`].
pub fn init_node_encodings(
    tree: &PrefixTree,
    model: &TcpgenModel,
    phoneme_features: Option<&Array2<f64>>,
) -> Result<Array2<f64>, EncodeError> {
    let enc = &model.encoder;
    let mode = model.config.encoding;
    let d = model.dims().d;
    let mut h = Array2::zeros((tree.len() + 1, d));
    h.row_mut(ROOT).assign(&enc.root_embed);
    if mode.uses_grapheme() {
        for (n, node) in tree.nodes().iter().enumerate().skip(1) {
            if node.piece == 0 || node.piece > enc.piece_embed.nrows() {
                return Err(EncodeError::ShapeError(format!(
                    "piece id {} outside the embedding table",
                    node.piece
                )));
            }
            h.row_mut(n).assign(&enc.piece_embed.row(node.piece - 1));
        }
    }
    if mode.uses_phoneme() && !tree.is_empty() {
        let x = phoneme_features
            .ok_or_else(|| EncodeError::MissingAlignment(tree.words()[0].word.clone()))?;
        if x.nrows() != tree.len() + 1 {
            return Err(EncodeError::ShapeError(format!(
                "{} phoneme feature rows for {} tree rows",
                x.nrows(),
                tree.len() + 1
            )));
        }
        let e = project(x.slice(ndarray::s![1.., ..]), enc.phoneme_proj.as_ref(), d)?;
        let mut body = h.slice_mut(ndarray::s![1.., ..]);
        body += &e;
    }
    Ok(h)
}

fn project(
    x: ArrayView2<f64>,
    proj: Option<&Array2<f64>>,
    d: usize,
) -> Result<Array2<f64>, EncodeError> {
    match proj {
        Some(w) if w.nrows() == x.ncols() => Ok(x.dot(w)),
        None if x.ncols() == d => Ok(x.to_owned()),
        _ => Err(EncodeError::ShapeError(format!(
            "cannot map {}-dim phoneme features to {d}",
            x.ncols()
        ))),
    }
}

/// Applies `H^(l+1) = ReLU(S H^(l) W^(l))` for every weight matrix.
pub fn gcn_forward(
    h0: Array2<f64>,
    s: &SparseAdj,
    weights: &[Array2<f64>],
) -> Result<NodeEncodings, EncodeError> {
    if h0.nrows() != s.size() {
        return Err(EncodeError::ShapeError(format!(
            "{} encoding rows for a {}-vertex graph",
            h0.nrows(),
            s.size()
        )));
    }
    let mut layers = vec![h0];
    let mut propagated = Vec::with_capacity(weights.len());
    for (l, w) in weights.iter().enumerate() {
        let h = layers.last().unwrap();
        if w.nrows() != h.ncols() {
            return Err(EncodeError::ShapeError(format!(
                "layer {l} weight is {}x{}, input width {}",
                w.nrows(),
                w.ncols(),
                h.ncols()
            )));
        }
        let sh = s.apply(h);
        let next = sh.dot(w).mapv_into(|v| v.max(0.0));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(EncodeError::NumericalError(l));
        }
        propagated.push(sh);
        layers.push(next);
    }
    Ok(NodeEncodings { layers, propagated })
}

/// Gradients of a GCN forward pass given `dL/dH^(L)`: returns `dL/dH^(0)`
/// and adds `dL/dW^(l)` into `dweights`.
pub fn gcn_backward(
    enc: &NodeEncodings,
    s: &SparseAdj,
    weights: &[Array2<f64>],
    d_out: Array2<f64>,
    dweights: &mut [Array2<f64>],
) -> Array2<f64> {
    let mut dh = d_out;
    for l in (0..weights.len()).rev() {
        let out = &enc.layers[l + 1];
        ndarray::Zip::from(&mut dh).and(out).for_each(|g, &h| {
            if h <= 0.0 {
                *g = 0.0
            }
        });
        dweights[l] += &enc.propagated[l].t().dot(&dh);
        // S is symmetric.
        dh = s.apply(&dh.dot(&weights[l].t()));
    }
    dh
}

/// Fixed per-tree data: the tree, its normalized adjacency, and the
/// unprojected phoneme features when the model needs them.
#[derive(Debug, Clone)]
pub struct TreeGraph {
    pub tree: PrefixTree,
    pub adj: SparseAdj,
    pub phoneme_features: Option<Array2<f64>>,
}

impl TreeGraph {
    pub fn new(
        tree: PrefixTree,
        root_mode: RootMode,
        phoneme_features: Option<Array2<f64>>,
    ) -> Self {
        let adj = SparseAdj::for_tree(&tree, root_mode);
        Self {
            tree,
            adj,
            phoneme_features,
        }
    }

    /// Builds the graph for `model`, computing phoneme features from
    /// `inputs` when the encoding mode uses them.
    pub fn for_model(
        tree: PrefixTree,
        model: &TcpgenModel,
        inputs: Option<&BTreeMap<String, WordPhonemes>>,
    ) -> Result<Self, EncodeError> {
        let x = if model.config.encoding.uses_phoneme() && !tree.is_empty() {
            let inputs = inputs
                .ok_or_else(|| EncodeError::MissingAlignment(tree.words()[0].word.clone()))?;
            Some(phoneme_node_features(
                &tree,
                inputs,
                &model.encoder.phoneme_table,
            )?)
        } else {
            None
        };
        Ok(Self::new(tree, model.config.root_mode, x))
    }

    pub fn encode(&self, model: &TcpgenModel) -> Result<NodeEncodings, EncodeError> {
        let h0 = init_node_encodings(&self.tree, model, self.phoneme_features.as_ref())?;
        gcn_forward(h0, &self.adj, &model.encoder.gcn)
    }
}
