//! Ingestion of externally computed alignments (e.g. attention weights of a
//! sequence-to-sequence G2P model).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AlignError, AlignmentKind, AlignmentMatrix};
use crate::lexicon::LexiconEntry;

/// Column sums further than this from 1 are rejected outright.
const ACCEPT_TOL: f64 = 1e-3;
/// Column sums within this of 1 are left untouched.
const EXACT_TOL: f64 = 1e-12;

/// On-disk form of one word's alignment matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub word: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AlignmentKind>,
}

impl AlignmentRecord {
    pub fn from_matrix(word: &str, m: &AlignmentMatrix) -> Self {
        let (rows, cols) = m.shape();
        Self {
            word: word.to_string(),
            rows,
            cols,
            data: m.weights().iter().copied().collect(),
            kind: Some(m.kind()),
        }
    }

    /// Validates against `entry`. Soft records have their columns
    /// renormalized when they sum to within 1e-3 of one.
    pub fn into_matrix(self, entry: &LexiconEntry) -> Result<AlignmentMatrix, AlignError> {
        if self.word != entry.word {
            return Err(AlignError::WordMismatch {
                expected: entry.word.clone(),
                found: self.word,
            });
        }
        let (l_c, l_p) = (entry.char_len(), entry.phoneme_len());
        if self.rows != l_c || self.cols != l_p || self.data.len() != l_c * l_p {
            return Err(AlignError::ShapeError {
                expected_rows: l_c,
                expected_cols: l_p,
                rows: self.rows,
                cols: self.cols,
            });
        }
        let mut w = Array2::from_shape_vec((l_c, l_p), self.data)
            .map_err(|e| AlignError::Format(e.to_string()))?;
        let kind = self.kind.unwrap_or(AlignmentKind::Soft);
        if kind == AlignmentKind::Soft {
            for (c, mut col) in w.columns_mut().into_iter().enumerate() {
                let sum = col.sum();
                if !((1.0 - ACCEPT_TOL)..=(1.0 + ACCEPT_TOL)).contains(&sum) {
                    return Err(AlignError::NotColumnStochastic { col: c, sum });
                }
                if (sum - 1.0).abs() > EXACT_TOL {
                    col.mapv_inplace(|v| v / sum);
                }
            }
        }
        AlignmentMatrix::new(w, kind)
    }
}

fn read(path: &Path) -> Result<String, AlignError> {
    std::fs::read_to_string(path).map_err(|source| AlignError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a single-word alignment file for `entry`.
pub fn load_soft_alignment(
    path: impl AsRef<Path>,
    entry: &LexiconEntry,
) -> Result<AlignmentMatrix, AlignError> {
    let record: AlignmentRecord = serde_json::from_str(&read(path.as_ref())?)
        .map_err(|e| AlignError::Format(e.to_string()))?;
    record.into_matrix(entry)
}

/// Loads a JSON array of alignment records keyed by word. Validation
/// against lexicon entries happens when the caller converts each record.
pub fn load_alignment_set(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<String, AlignmentRecord>, AlignError> {
    let records: Vec<AlignmentRecord> = serde_json::from_str(&read(path.as_ref())?)
        .map_err(|e| AlignError::Format(e.to_string()))?;
    Ok(records.into_iter().map(|r| (r.word.clone(), r)).collect())
}
