//! Greedy longest-match subword segmentation with a suffix word-boundary
//! marker (`THE_` rather than `_THE`).
//!
//! Piece ids are 1-based line numbers of the vocabulary file. Id 0 is
//! reserved: it is the transducer blank and doubles as the start-of-sequence
//! context.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::lexicon::{read_file, LexiconError};

pub type PieceId = usize;

/// Reserved id shared by the blank symbol and the start-of-sequence context.
pub const BLANK_PIECE: PieceId = 0;

pub const BOUNDARY_MARKER: char = '_';

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error(transparent)]
    Io(#[from] LexiconError),
    #[error("duplicate vocabulary piece {0:?}")]
    DuplicatePiece(String),
    #[error("empty vocabulary piece on line {0}")]
    EmptyPiece(usize),
    #[error("cannot cover character {position} of {word:?}")]
    UnknownCharacter { word: String, position: usize },
    #[error("cannot tokenize an empty word")]
    EmptyWord,
    #[error("boundary marker misplaced in piece sequence")]
    MalformedSequence,
    #[error("unknown piece id {0}")]
    UnknownPieceId(PieceId),
    #[error("unknown piece {0:?}")]
    UnknownPiece(String),
    #[error("pre-segmented line {line}: {reason}")]
    BadPresegmented { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    /// `pieces[id - 1]` is the piece for `id`.
    pieces: Vec<String>,
    index: HashMap<String, PieceId>,
    max_piece_chars: usize,
}

impl SubwordVocab {
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self, TokenizeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = Vec::new();
        let mut index = HashMap::new();
        let mut max_piece_chars = 0;
        for (i, p) in pieces.into_iter().enumerate() {
            let p = p.into();
            let body_len = p
                .strip_suffix(BOUNDARY_MARKER)
                .unwrap_or(&p)
                .chars()
                .count();
            if body_len == 0 {
                return Err(TokenizeError::EmptyPiece(i + 1));
            }
            if index.insert(p.clone(), i + 1).is_some() {
                return Err(TokenizeError::DuplicatePiece(p));
            }
            max_piece_chars = max_piece_chars.max(body_len);
            out.push(p);
        }
        Ok(Self {
            pieces: out,
            index,
            max_piece_chars,
        })
    }

    pub fn parse(text: &str) -> Result<Self, TokenizeError> {
        Self::from_pieces(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizeError> {
        Self::parse(&read_file(path.as_ref())?)
    }

    /// Vocabulary size `V` (the blank is not counted).
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<PieceId> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: PieceId) -> Option<&str> {
        id.checked_sub(1)
            .and_then(|i| self.pieces.get(i))
            .map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// True when the piece ends a word.
    pub fn is_word_final(&self, id: PieceId) -> bool {
        self.piece(id).is_some_and(|p| p.ends_with(BOUNDARY_MARKER))
    }

    pub fn to_text(&self) -> String {
        self.pieces.iter().map(|p| format!("{p}\n")).collect()
    }

    /// Greedy longest match from the left. A match consuming the final
    /// character must use the marker-suffixed form.
    pub fn tokenize(&self, word: &str) -> Result<Segmentation, TokenizeError> {
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() {
            return Err(TokenizeError::EmptyWord);
        }
        let mut piece_ids = Vec::new();
        let mut char_spans = Vec::new();
        let mut pos = 0;
        let mut key = String::new();
        while pos < chars.len() {
            let longest = self.max_piece_chars.min(chars.len() - pos);
            let found = (1..=longest).rev().find_map(|len| {
                key.clear();
                key.extend(&chars[pos..pos + len]);
                if pos + len == chars.len() {
                    key.push(BOUNDARY_MARKER);
                }
                self.id(&key).map(|id| (id, len))
            });
            let (id, len) = found.ok_or_else(|| TokenizeError::UnknownCharacter {
                word: word.to_string(),
                position: pos,
            })?;
            piece_ids.push(id);
            char_spans.push(pos..pos + len);
            pos += len;
        }
        Ok(Segmentation {
            piece_ids,
            char_spans,
        })
    }

    /// Concatenates pieces and strips the final marker.
    pub fn detokenize(&self, ids: &[PieceId]) -> Result<String, TokenizeError> {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            let piece = self.piece(id).ok_or(TokenizeError::UnknownPieceId(id))?;
            let last = i + 1 == ids.len();
            match (piece.strip_suffix(BOUNDARY_MARKER), last) {
                (Some(body), true) => out.push_str(body),
                (None, false) => out.push_str(piece),
                _ => return Err(TokenizeError::MalformedSequence),
            }
        }
        if ids.is_empty() {
            return Err(TokenizeError::MalformedSequence);
        }
        Ok(out)
    }

    /// Splits a decoded piece stream into words at marker-suffixed pieces.
    /// A trailing unterminated word is emitted as-is.
    pub fn pieces_to_words(&self, ids: &[PieceId]) -> Vec<String> {
        let mut words = Vec::new();
        let mut cur = String::new();
        for &id in ids {
            let Some(piece) = self.piece(id) else {
                continue;
            };
            match piece.strip_suffix(BOUNDARY_MARKER) {
                Some(body) => {
                    cur.push_str(body);
                    words.push(std::mem::take(&mut cur));
                }
                None => cur.push_str(piece),
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        words
    }

    /// Builds a segmentation from explicit piece strings, checking that they
    /// spell `word` and carry the marker only at the end.
    pub fn segmentation_from_pieces(
        &self,
        word: &str,
        pieces: &[&str],
    ) -> Result<Segmentation, TokenizeError> {
        let mut piece_ids = Vec::with_capacity(pieces.len());
        let mut char_spans = Vec::with_capacity(pieces.len());
        let mut pos = 0;
        for p in pieces {
            let id = self
                .id(p)
                .ok_or_else(|| TokenizeError::UnknownPiece(p.to_string()))?;
            let n = p.strip_suffix(BOUNDARY_MARKER).unwrap_or(p).chars().count();
            piece_ids.push(id);
            char_spans.push(pos..pos + n);
            pos += n;
        }
        if self.detokenize(&piece_ids)? != word {
            return Err(TokenizeError::MalformedSequence);
        }
        Ok(Segmentation {
            piece_ids,
            char_spans,
        })
    }

    /// Parses `word<TAB>piece piece piece_` lines.
    pub fn parse_presegmented(
        &self,
        text: &str,
    ) -> Result<Vec<(String, Segmentation)>, TokenizeError> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| TokenizeError::BadPresegmented {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (word, pieces) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let pieces: Vec<&str> = pieces.split_whitespace().collect();
            let seg = self
                .segmentation_from_pieces(word, &pieces)
                .map_err(|e| bad(&e.to_string()))?;
            out.push((word.to_string(), seg));
        }
        Ok(out)
    }
}

/// Piece ids of one word with the character span each piece covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub piece_ids: Vec<PieceId>,
    pub char_spans: Vec<Range<usize>>,
}

impl Segmentation {
    pub fn len(&self) -> usize {
        self.piece_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.piece_ids.is_empty()
    }

    /// Total characters covered.
    pub fn char_len(&self) -> usize {
        self.char_spans.last().map_or(0, |s| s.end)
    }
}
