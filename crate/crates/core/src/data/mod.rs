//! Character vocabularies, transliteration, parallel corpora and batching.

mod batch;
mod corpus;
pub mod toy;
mod translit;
mod vocab;

pub use batch::{encode_source, make_batches, Batch, TokenGrid};
pub use corpus::{mix_corpora, ParallelCorpus, Side};
pub use translit::TransliterationTable;
pub use vocab::{Vocabulary, BOS, EOS, NUM_RESERVED, PAD, UNK};
