//! Tokenization, vocabulary, embeddings, dataset IO and fixtures.

mod dataset;
mod embeddings;
mod subsample;
mod synthetic;
mod tokenize;
mod vocab;

pub use dataset::{load_dataset, parse_dataset, write_records, Document, Domain, Instance, LabelMap, Record, Split};
pub use embeddings::{load_embeddings, EmbeddingTable, PretrainedVectors, Provenance, RANDOM_INIT_BOUND};
pub use subsample::{subsample_train, LIMITED_DATA_FRACTIONS};
pub use synthetic::{generate_synthetic_pair, SyntheticPair, SyntheticSpec};
pub use tokenize::{tokenize, URL_TOKEN, USER_TOKEN};
pub use vocab::{Vocabulary, OOV_ID, OOV_TOKEN};
