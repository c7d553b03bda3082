//! Text expansion: view-dependence classification, opposite-perspective rewriting and
//! paraphrasing into `M` texts per utterance.

mod backend;
mod dictionary;
mod expand;
mod paraphrase;
mod templates;

pub use backend::{
    cache_key, FallbackBackend, GenerationBackend, GenerationRequest, GenerationResponse,
    HttpBackend, HttpConfig, ResponseCache,
};
pub use dictionary::{PhraseDictionary, PhraseMatch, DEFAULT_DICTIONARY};
pub use expand::{read_expanded, write_expanded, ExpandedTextSet, Expander, Provenance};
pub use paraphrase::fallback_paraphrase;
pub use templates::{
    build_opposite_template, build_rephrase_template, parse_command, Command, OPPOSITE_TEMPLATE,
    REPHRASE_TEMPLATE,
};

pub(crate) use crate::scenegen::utterance::capitalize;
