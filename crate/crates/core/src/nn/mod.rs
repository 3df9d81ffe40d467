//! Embeddings, recurrent layers and the sentence encoder.

mod encoder;
mod layers;
pub mod vocab;

use thiserror::Error;

use crate::tensor::TensorError;

pub use encoder::{Encoder, EncoderConfig, EncoderOutput, Vocabs};
pub use layers::{BiLstm, Embedding, Linear, Lstm, LstmState};
pub use vocab::Vocab;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("cannot encode an empty sentence")]
    EmptySentence,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
