//! Object and text encoders, tokenizer and auxiliary class heads.

mod heads;
mod object;
mod text;
mod vocab;

pub use heads::ClassHeads;
pub use object::{geometry_features, ObjectEncoder, GEOMETRY_FEATURES};
pub use text::{TextBatch, TextBlock, TextEncoder};
pub use vocab::{tokenize, TokenizedText, Vocabulary, GLO, GLO_ID, PAD, PAD_ID, UNK, UNK_ID};
