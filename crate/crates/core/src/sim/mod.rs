//! Mock acoustics, decoding, toy training and the end-to-end demo.

pub mod decode;
pub mod synth;
pub mod train;
pub mod world;

use thiserror::Error;

use crate::align::AlignError;
use crate::encoder::EncodeError;
use crate::lexicon::LexiconError;
use crate::params::ParamsError;
use crate::tcpgen::HeadError;
use crate::tokenizer::{PieceId, TokenizeError};

pub use decode::{beam_decode, decode, greedy_decode, Biasing, DecodeConfig, Hypothesis};
pub use synth::{synthesize_utterance, ConfusionMap, MockUtterance, RefWord, SynthConfig};
pub use train::{teacher_forced_examples, toy_train, Optimizer, ToyTrainConfig, TrainOutcome};
pub use world::{run_demo, DemoConfig, DemoReport, DemoWorld, Scenario, ScenarioFile};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("noise level {0} outside [0, 1)")]
    BadNoise(f64),
    #[error("invalid confusion set for piece {0}")]
    InvalidConfusion(PieceId),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("bad scenario data: {0}")]
    Format(String),
    #[error("non-finite loss or parameters at step {step}")]
    NumericalError { step: usize },
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}
