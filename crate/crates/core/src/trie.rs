//! Prefix tree over subword-segmented biasing words.
//!
//! Node 0 is a virtual root: it takes part in the graph convolution but is
//! never an active node. Real nodes `1..=N` are numbered breadth-first, with
//! siblings ordered by piece id, so layouts are reproducible.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{PieceId, Segmentation, SubwordVocab};

pub type NodeId = usize;
pub const ROOT: NodeId = 0;

#[derive(Debug, Error)]
pub enum TrieError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad tree file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub piece: PieceId,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub children: BTreeMap<PieceId, NodeId>,
    /// Indices into [`PrefixTree::words`] of words passing through the node.
    pub words: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeWord {
    pub word: String,
    pub segmentation: Segmentation,
}

/// Whether the root takes part in the GCN graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootMode {
    /// Root is linked to depth-1 nodes.
    #[default]
    Connected,
    /// Root keeps only its self-loop; depth-1 nodes are not linked to it.
    Detached,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixTree {
    pub name: String,
    nodes: Vec<TreeNode>,
    words: Vec<TreeWord>,
}

impl PrefixTree {
    /// Builds the trie. Repeated words (or repeated piece sequences) are
    /// merged, so duplicates in the input do not change the tree.
    pub fn build<'a, I>(name: impl Into<String>, words: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a Segmentation)>,
    {
        // Insertion trie with provisional ids, renumbered breadth-first below.
        let mut raw: Vec<(PieceId, BTreeMap<PieceId, usize>)> = vec![(0, BTreeMap::new())];
        let mut kept = Vec::new();
        let mut seen_words = HashSet::new();
        let mut seen_paths = HashSet::new();
        for (word, seg) in words {
            if seg.is_empty()
                || !seen_words.insert(word.to_string())
                || !seen_paths.insert(seg.piece_ids.clone())
            {
                continue;
            }
            let mut cur = 0;
            for &p in &seg.piece_ids {
                cur = match raw[cur].1.get(&p) {
                    Some(&next) => next,
                    None => {
                        raw.push((p, BTreeMap::new()));
                        let id = raw.len() - 1;
                        raw[cur].1.insert(p, id);
                        id
                    }
                };
            }
            kept.push(TreeWord {
                word: word.to_string(),
                segmentation: seg.clone(),
            });
        }

        let mut nodes = vec![TreeNode {
            piece: 0,
            depth: 0,
            parent: None,
            children: BTreeMap::new(),
            words: BTreeSet::new(),
        }];
        let mut queue = VecDeque::from([(0usize, ROOT)]);
        while let Some((raw_id, id)) = queue.pop_front() {
            for (&piece, &raw_child) in &raw[raw_id].1 {
                let child = nodes.len();
                nodes.push(TreeNode {
                    piece,
                    depth: nodes[id].depth + 1,
                    parent: Some(id),
                    children: BTreeMap::new(),
                    words: BTreeSet::new(),
                });
                nodes[id].children.insert(piece, child);
                queue.push_back((raw_child, child));
            }
        }

        let mut tree = Self {
            name: name.into(),
            nodes,
            words: kept,
        };
        for w in 0..tree.words.len() {
            let path = tree.path_nodes(&tree.words[w].segmentation.piece_ids);
            for n in path {
                tree.nodes[n].words.insert(w);
            }
        }
        tree
    }

    /// Nodes visited when walking `pieces` from the root, stopping at the
    /// first piece that leaves the tree.
    fn path_nodes(&self, pieces: &[PieceId]) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(pieces.len());
        let mut cur = ROOT;
        for p in pieces {
            match self.nodes[cur].children.get(p) {
                Some(&next) => {
                    out.push(next);
                    cur = next;
                }
                None => break,
            }
        }
        out
    }

    /// Node reached by walking all of `pieces`, if the walk stays in the tree.
    pub fn walk(&self, pieces: &[PieceId]) -> Option<NodeId> {
        let mut cur = ROOT;
        for p in pieces {
            cur = *self.nodes[cur].children.get(p)?;
        }
        Some(cur)
    }

    /// Active nodes after consuming `prefix` within the current word: the
    /// children of the node reached, or the root's children if the walk
    /// leaves the tree.
    pub fn active_set(&self, prefix: &[PieceId]) -> Vec<NodeId> {
        let at = self.walk(prefix).unwrap_or(ROOT);
        self.children(at)
    }

    pub fn children(&self, node: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.nodes[node].children.values().copied().collect();
        out.sort_unstable();
        out
    }

    pub fn child(&self, node: NodeId, piece: PieceId) -> Option<NodeId> {
        self.nodes[node].children.get(&piece).copied()
    }

    /// Number of real nodes `N` (root excluded).
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn node(&self, n: NodeId) -> &TreeNode {
        &self.nodes[n]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn words(&self) -> &[TreeWord] {
        &self.words
    }

    pub fn piece(&self, n: NodeId) -> PieceId {
        self.nodes[n].piece
    }

    pub fn depth(&self, n: NodeId) -> usize {
        self.nodes[n].depth
    }

    /// Parent/child pairs, excluding root links in [`RootMode::Detached`].
    pub fn edges(&self, mode: RootMode) -> Vec<(NodeId, NodeId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(n, node)| node.parent.map(|p| (p, n)))
            .filter(|&(p, _)| mode == RootMode::Connected || p != ROOT)
            .collect()
    }

    /// Symmetric adjacency with self-loops over root + nodes, and its
    /// degree vector (the diagonal of `D̃`).
    pub fn adjacency(&self, mode: RootMode) -> (Array2<f64>, Array1<f64>) {
        let size = self.nodes.len();
        let mut a = Array2::eye(size);
        for (p, c) in self.edges(mode) {
            a[[p, c]] = 1.0;
            a[[c, p]] = 1.0;
        }
        let deg = a.sum_axis(ndarray::Axis(1));
        (a, deg)
    }

    pub fn to_json(&self, vocab: Option<&SubwordVocab>) -> serde_json::Value {
        let piece_str = |id: PieceId| vocab.and_then(|v| v.piece(id)).map(str::to_string);
        let dump = TreeDump {
            name: self.name.clone(),
            words: self
                .words
                .iter()
                .map(|w| DumpWord {
                    word: w.word.clone(),
                    piece_ids: w.segmentation.piece_ids.clone(),
                    spans: w
                        .segmentation
                        .char_spans
                        .iter()
                        .map(|s| [s.start, s.end])
                        .collect(),
                    pieces: vocab.map(|_| {
                        w.segmentation
                            .piece_ids
                            .iter()
                            .filter_map(|&id| piece_str(id))
                            .collect()
                    }),
                })
                .collect(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .skip(1)
                .map(|(id, n)| DumpNode {
                    id,
                    piece_id: n.piece,
                    piece: piece_str(n.piece),
                    depth: n.depth,
                    parent: n.parent.unwrap_or(ROOT),
                    words: n.words.iter().copied().collect(),
                })
                .collect(),
            edges: self
                .edges(RootMode::Connected)
                .into_iter()
                .map(|(p, c)| [p, c])
                .collect(),
        };
        serde_json::to_value(dump).expect("tree dump serializes")
    }

    /// Rebuilds a tree from its dump and checks the recorded node layout.
    pub fn from_json(value: &serde_json::Value) -> Result<Self, TrieError> {
        let dump: TreeDump =
            serde_json::from_value(value.clone()).map_err(|e| TrieError::Format(e.to_string()))?;
        let segs: Vec<(String, Segmentation)> = dump
            .words
            .iter()
            .map(|w| {
                (
                    w.word.clone(),
                    Segmentation {
                        piece_ids: w.piece_ids.clone(),
                        char_spans: w.spans.iter().map(|s| s[0]..s[1]).collect(),
                    },
                )
            })
            .collect();
        let tree = Self::build(dump.name, segs.iter().map(|(w, s)| (w.as_str(), s)));
        let layout_matches = tree.len() == dump.nodes.len()
            && dump.nodes.iter().all(|d| {
                d.id <= tree.len()
                    && tree.nodes[d.id].piece == d.piece_id
                    && tree.nodes[d.id].depth == d.depth
                    && tree.nodes[d.id].parent == Some(d.parent)
            });
        if !layout_matches {
            return Err(TrieError::Format(
                "node layout does not match the word list".into(),
            ));
        }
        Ok(tree)
    }

    pub fn save(
        &self,
        path: impl AsRef<Path>,
        vocab: Option<&SubwordVocab>,
    ) -> Result<(), TrieError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json(vocab))
            .map_err(|e| TrieError::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| TrieError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrieError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TrieError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value = serde_json::from_str(&text).map_err(|e| TrieError::Format(e.to_string()))?;
        Self::from_json(&value)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeDump {
    name: String,
    words: Vec<DumpWord>,
    nodes: Vec<DumpNode>,
    edges: Vec<[NodeId; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpWord {
    word: String,
    piece_ids: Vec<PieceId>,
    spans: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pieces: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpNode {
    id: NodeId,
    piece_id: PieceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    piece: Option<String>,
    depth: usize,
    parent: NodeId,
    words: Vec<usize>,
}
