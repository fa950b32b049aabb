//! Chinese idiom cloze: BIO corpus preparation, a small transformer encoder
//! and the character-sequence, embedding and pooling answer heads.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod heads;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod training;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] tokenizer::TokenizerError),
    #[error(transparent)]
    Encoder(#[from] encoder::EncoderError),
    #[error(transparent)]
    Head(#[from] heads::HeadError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// 1 usage, 2 data or I/O, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Train(training::TrainError::DivergenceDetected { .. }) => 3,
            Error::Train(training::TrainError::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Corpus(_) => "corpus",
            Error::Tokenizer(_) => "tokenizer",
            Error::Encoder(_) => "encoder",
            Error::Head(_) => "head",
            Error::Train(training::TrainError::DivergenceDetected { .. }) => "divergence",
            Error::Train(_) => "train",
            Error::Checkpoint(_) => "checkpoint",
            Error::Usage(_) => "usage",
            Error::Data(_) => "data",
            Error::Io(_) => "io",
        }
    }
}
