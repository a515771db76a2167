//! Character→phoneme and subword→character alignment matrices.
//!
//! `A_c→p` is `l_c × l_p` and column-stochastic: every phoneme distributes
//! its full weight over the characters. `A_s→c` is a binary `l_s × l_c`
//! block matrix derived from a segmentation. Their product selects, for each
//! subword, how much of each phoneme it owns.

mod multigram;
mod soft;

pub use multigram::{
    ChunkPair, EmConfig, MultigramModel, TrainReport, ViterbiPath, DEFAULT_MAX_G, DEFAULT_MAX_P,
};
pub use soft::{load_alignment_set, load_soft_alignment, AlignmentRecord};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::LexiconEntry;
use crate::tokenizer::Segmentation;

/// Column sums of a valid alignment must be within this of 1.
pub const COLUMN_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("empty training lexicon")]
    EmptyInput,
    #[error("chunk limits must be at least 1 (max_g={max_g}, max_p={max_p})")]
    BadChunkLimits { max_g: usize, max_p: usize },
    #[error("no monotonic chunk path aligns {0:?}")]
    UnalignableEntry(String),
    #[error("non-finite likelihood at EM iteration {0}")]
    NumericalError(usize),
    #[error("expected a {expected_rows}x{expected_cols} matrix, got {rows}x{cols}")]
    ShapeError {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("column {col} sums to {sum}")]
    NotColumnStochastic { col: usize, sum: f64 },
    #[error("alignment entry ({row},{col}) = {value} is outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
    #[error("hard alignment violates {0}")]
    NotHard(&'static str),
    #[error("subword spans do not partition the word")]
    InvalidSegmentation,
    #[error("alignment is for {found:?}, expected {expected:?}")]
    WordMismatch { expected: String, found: String },
    #[error("bad alignment or model file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentKind {
    Soft,
    Hard,
}

/// `l_c × l_p` character→phoneme weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    weights: Array2<f64>,
    kind: AlignmentKind,
}

impl AlignmentMatrix {
    /// Validates and wraps `weights`. Soft matrices must already be
    /// column-stochastic within [`COLUMN_SUM_TOL`]; hard ones must also be
    /// binary and monotonic.
    pub fn new(weights: Array2<f64>, kind: AlignmentKind) -> Result<Self, AlignError> {
        for ((r, c), &v) in weights.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(AlignError::OutOfRange {
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
        for (c, col) in weights.columns().into_iter().enumerate() {
            let sum = col.sum();
            if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(AlignError::NotColumnStochastic { col: c, sum });
            }
        }
        if kind == AlignmentKind::Hard {
            let mut last = 0;
            for col in weights.columns() {
                if col.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(AlignError::NotHard("binary entries"));
                }
                let row = col.iter().position(|&v| v == 1.0).unwrap_or(0);
                if row < last {
                    return Err(AlignError::NotHard("monotonicity"));
                }
                last = row;
            }
        }
        Ok(Self { weights, kind })
    }

    /// Hard matrix from the character index assigned to each phoneme.
    pub fn from_assignment(l_c: usize, assignment: &[usize]) -> Result<Self, AlignError> {
        let mut w = Array2::zeros((l_c, assignment.len()));
        for (j, &i) in assignment.iter().enumerate() {
            if i >= l_c {
                return Err(AlignError::ShapeError {
                    expected_rows: l_c,
                    expected_cols: assignment.len(),
                    rows: i + 1,
                    cols: assignment.len(),
                });
            }
            w[[i, j]] = 1.0;
        }
        Self::new(w, AlignmentKind::Hard)
    }

    /// Every phoneme spread evenly over all characters.
    pub fn uniform(l_c: usize, l_p: usize) -> Self {
        Self {
            weights: Array2::from_elem((l_c, l_p), 1.0 / l_c as f64),
            kind: AlignmentKind::Soft,
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn kind(&self) -> AlignmentKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.dim()
    }

    /// For hard matrices, the character each phoneme is assigned to.
    pub fn assignment(&self) -> Option<Vec<usize>> {
        (self.kind == AlignmentKind::Hard).then(|| {
            self.weights
                .columns()
                .into_iter()
                .map(|c| c.iter().position(|&v| v == 1.0).unwrap_or(0))
                .collect()
        })
    }

    pub fn check_entry(&self, entry: &LexiconEntry) -> Result<(), AlignError> {
        let (rows, cols) = self.shape();
        if rows != entry.char_len() || cols != entry.phoneme_len() {
            return Err(AlignError::ShapeError {
                expected_rows: entry.char_len(),
                expected_cols: entry.phoneme_len(),
                rows,
                cols,
            });
        }
        Ok(())
    }
}

/// Binary `l_s × l_c` matrix marking which characters each subword covers.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordCharMatrix {
    weights: Array2<f64>,
}

impl SubwordCharMatrix {
    /// Builds the block matrix from half-open character spans, which must
    /// partition `[0, l_c)` in order.
    pub fn from_spans(l_c: usize, spans: &[std::ops::Range<usize>]) -> Result<Self, AlignError> {
        let mut pos = 0;
        for s in spans {
            if s.start != pos || s.end <= s.start {
                return Err(AlignError::InvalidSegmentation);
            }
            pos = s.end;
        }
        if pos != l_c || spans.is_empty() {
            return Err(AlignError::InvalidSegmentation);
        }
        let mut w = Array2::zeros((spans.len(), l_c));
        for (i, s) in spans.iter().enumerate() {
            w.row_mut(i).slice_mut(ndarray::s![s.clone()]).fill(1.0);
        }
        Ok(Self { weights: w })
    }

    pub fn from_segmentation(entry: &LexiconEntry, seg: &Segmentation) -> Result<Self, AlignError> {
        Self::from_spans(entry.char_len(), &seg.char_spans)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.dim()
    }
}

/// `A_s→c · A_c→p`, the `l_s × l_p` subword→phoneme weights.
pub fn compose(sc: &SubwordCharMatrix, cp: &AlignmentMatrix) -> Result<Array2<f64>, AlignError> {
    let (l_s, l_c) = sc.shape();
    let (rows, cols) = cp.shape();
    if rows != l_c {
        return Err(AlignError::ShapeError {
            expected_rows: l_c,
            expected_cols: cols,
            rows,
            cols,
        });
    }
    let out = sc.weights().dot(cp.weights());
    debug_assert_eq!(out.dim(), (l_s, cols));
    Ok(out)
}
