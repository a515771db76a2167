//! Phoneme inventories, pronunciation lexicons and biasing lists.
//!
//! Everything here is immutable once loaded. Words are case-sensitive and
//! characters are Unicode scalar values, so a kanji is one character.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Index into a [`PhonemeInventory`]. Index 0 is always the CTC blank.
pub type PhonemeId = usize;

/// Symbol used for the reserved blank entry.
pub const BLANK_SYMBOL: &str = "<blank>";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate phoneme symbol {0:?}")]
    DuplicatePhoneme(String),
    #[error("phoneme inventory is empty")]
    EmptyInventory,
    #[error("word {word:?} uses unknown phoneme {symbol:?}")]
    UnknownPhoneme { word: String, symbol: String },
    #[error("malformed lexicon line {0}")]
    ParseError(usize),
    #[error("no pronunciation for biasing word {0:?}")]
    MissingPronunciation(String),
    #[error("invalid lexicon entry for {word:?}: {reason}")]
    InvalidEntry { word: String, reason: &'static str },
}

pub(crate) fn read_file(path: &Path) -> Result<String, LexiconError> {
    fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Ordered phoneme symbols with the blank prepended at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, PhonemeId>,
}

impl PhonemeInventory {
    pub const BLANK: PhonemeId = 0;

    /// Builds an inventory from phoneme symbols (without the blank).
    pub fn new<I, S>(phonemes: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut symbols = vec![BLANK_SYMBOL.to_string()];
        let mut index = HashMap::new();
        index.insert(BLANK_SYMBOL.to_string(), Self::BLANK);
        for sym in phonemes {
            let sym = sym.into();
            if sym.is_empty() || sym.chars().any(char::is_whitespace) {
                return Err(LexiconError::InvalidEntry {
                    word: sym,
                    reason: "phoneme symbols must be non-empty and free of whitespace",
                });
            }
            if index.contains_key(&sym) {
                return Err(LexiconError::DuplicatePhoneme(sym));
            }
            index.insert(sym.clone(), symbols.len());
            symbols.push(sym);
        }
        if symbols.len() < 2 {
            return Err(LexiconError::EmptyInventory);
        }
        Ok(Self { symbols, index })
    }

    /// Parses one symbol per line. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::parse(&read_file(path.as_ref())?)
    }

    /// Number of symbols including the blank.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, symbol: &str) -> Option<PhonemeId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: PhonemeId) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Phoneme symbols in file order, without the blank.
    pub fn phonemes(&self) -> &[String] {
        &self.symbols[1..]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for sym in self.phonemes() {
            out.push_str(sym);
            out.push('\n');
        }
        out
    }
}

/// One word with its character and phoneme sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub word: String,
    pub chars: Vec<char>,
    pub phonemes: Vec<PhonemeId>,
}

impl LexiconEntry {
    pub fn new(
        word: impl Into<String>,
        phonemes: Vec<PhonemeId>,
        inv: &PhonemeInventory,
    ) -> Result<Self, LexiconError> {
        let word = word.into();
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() {
            return Err(LexiconError::InvalidEntry {
                word,
                reason: "empty word",
            });
        }
        if phonemes.is_empty() {
            return Err(LexiconError::InvalidEntry {
                word,
                reason: "empty pronunciation",
            });
        }
        if phonemes
            .iter()
            .any(|&p| p == PhonemeInventory::BLANK || p >= inv.len())
        {
            return Err(LexiconError::InvalidEntry {
                word,
                reason: "phoneme id outside the non-blank inventory range",
            });
        }
        Ok(Self {
            word,
            chars,
            phonemes,
        })
    }

    /// Builds an entry from phoneme symbols.
    pub fn from_symbols(
        word: impl Into<String>,
        symbols: &[&str],
        inv: &PhonemeInventory,
    ) -> Result<Self, LexiconError> {
        let word = word.into();
        let mut ids = Vec::with_capacity(symbols.len());
        for sym in symbols {
            match inv.id(sym) {
                Some(id) if id != PhonemeInventory::BLANK => ids.push(id),
                _ => {
                    return Err(LexiconError::UnknownPhoneme {
                        word,
                        symbol: sym.to_string(),
                    })
                }
            }
        }
        Self::new(word, ids, inv)
    }

    pub fn char_len(&self) -> usize {
        self.chars.len()
    }

    pub fn phoneme_len(&self) -> usize {
        self.phonemes.len()
    }
}

/// Word → entry map loaded from a TSV lexicon.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexiconEntry>,
    /// Lines that replaced an earlier pronunciation of the same word.
    pub overridden: usize,
}

impl Lexicon {
    pub fn from_entries(entries: impl IntoIterator<Item = LexiconEntry>) -> Self {
        let mut lex = Self::default();
        for e in entries {
            lex.insert(e);
        }
        lex
    }

    /// Inserts an entry; a later entry for the same word wins.
    pub fn insert(&mut self, entry: LexiconEntry) {
        if self.entries.insert(entry.word.clone(), entry).is_some() {
            self.overridden += 1;
        }
    }

    /// Parses `word<TAB>ph1 ph2 ...` lines. Empty lines are ignored.
    pub fn parse(text: &str, inv: &PhonemeInventory) -> Result<Self, LexiconError> {
        let mut lex = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let (word, pron) = line
                .split_once('\t')
                .ok_or(LexiconError::ParseError(lineno))?;
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(LexiconError::ParseError(lineno));
            }
            let symbols: Vec<&str> = pron.split_whitespace().collect();
            if symbols.is_empty() {
                return Err(LexiconError::ParseError(lineno));
            }
            lex.insert(LexiconEntry::from_symbols(word, &symbols, inv)?);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>, inv: &PhonemeInventory) -> Result<Self, LexiconError> {
        Self::parse(&read_file(path.as_ref())?, inv)
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.entries.get(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in word order.
    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    /// Returns a copy with every word uppercased. Entries that collide after
    /// normalization keep the last one in word order.
    pub fn uppercased(&self) -> Self {
        Self::from_entries(self.entries().map(|e| LexiconEntry {
            word: e.word.to_uppercase(),
            chars: e.word.to_uppercase().chars().collect(),
            phonemes: e.phonemes.clone(),
        }))
    }

    pub fn to_tsv(&self, inv: &PhonemeInventory) -> String {
        let mut out = String::new();
        for e in self.entries() {
            let pron: Vec<&str> = e
                .phonemes
                .iter()
                .map(|&p| inv.symbol(p).unwrap_or("?"))
                .collect();
            let _ = writeln!(out, "{}\t{}", e.word, pron.join(" "));
        }
        out
    }
}

/// A named set of biasing words, each resolved to a lexicon entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BiasingList {
    pub name: String,
    entries: Vec<LexiconEntry>,
}

impl BiasingList {
    /// Resolves `words` against `lexicon`, keeping first occurrences only.
    pub fn from_words<I, S>(
        name: impl Into<String>,
        words: I,
        lexicon: &Lexicon,
    ) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for w in words {
            let w = w.as_ref();
            if !seen.insert(w.to_string()) {
                continue;
            }
            let entry = lexicon
                .get(w)
                .ok_or_else(|| LexiconError::MissingPronunciation(w.to_string()))?;
            entries.push(entry.clone());
        }
        Ok(Self {
            name: name.into(),
            entries,
        })
    }

    pub fn parse(
        name: impl Into<String>,
        text: &str,
        lexicon: &Lexicon,
    ) -> Result<Self, LexiconError> {
        Self::from_words(
            name,
            text.lines().map(str::trim).filter(|l| !l.is_empty()),
            lexicon,
        )
    }

    /// Loads a list file; the list is named after the file stem.
    pub fn load(path: impl AsRef<Path>, lexicon: &Lexicon) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(name, &read_file(path)?, lexicon)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.iter().any(|e| e.word == word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.word.as_str())
    }
}
