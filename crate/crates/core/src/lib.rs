//! Contextual biasing for transducer ASR with a tree-constrained pointer
//! generator whose prefix-tree node encodings can carry phoneme information.

pub mod align;
pub mod encoder;
pub mod gradcheck;
pub mod lexicon;
pub mod metrics;
pub mod params;
pub mod sim;
pub mod tcpgen;
pub mod tokenizer;
pub mod trie;
