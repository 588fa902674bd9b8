//! Cross-tokenizer alignment for logit distillation.
//!
//! Two models with different tokenizers produce logits over different token
//! sequences and different vocabularies. This crate aligns them in two steps:
//!
//! * sequence level: an entropy-weighted dynamic time warping over the token
//!   strings groups tokens into matching spans, and the logits of each span are
//!   mean pooled ([`seqalign`]);
//! * vocabulary level: exact matches between canonical token forms seed a
//!   mapping table that grows with fuzzy matches found among the top-k
//!   candidates at each aligned position ([`vocabmap`]).
//!
//! The aligned logits are scored with a masked, temperature-scaled KL term plus
//! the usual language-modeling cross entropy ([`loss`]). [`pipeline`] ties the
//! steps together over a corpus of logit dumps ([`tensorio`]).
//!
//! With the `parallel` feature (on by default) the per-position kernels and the
//! per-sentence preprocessing run on the rayon thread pool. Results are
//! identical with and without the feature: every reduction is collected and
//! folded in a fixed order.

pub mod error;
pub mod fixtures;
pub mod loss;
mod par;
pub mod pipeline;
pub mod seqalign;
pub mod stats;
pub mod tensorio;
pub mod vocab;
pub mod vocabmap;

pub use error::{Error, Result};
pub use loss::{LossConfig, LossReport};
pub use pipeline::{CdmConfig, CorpusOutput, MappingState, SentenceOutput};
pub use seqalign::{EntropyVector, SpanAlignment, SpanPair, WeightVector};
pub use stats::CompatReport;
pub use tensorio::{LogitsMatrix, SentenceRecord};
pub use vocab::{CanonicalToken, Vocabulary};
pub use vocabmap::{AlignedBlock, Direction, MappingTable, Provenance, Side, TopKSelection};
