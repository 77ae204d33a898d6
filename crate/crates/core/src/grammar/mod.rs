//! Token grammar: vocabulary, per-event blocks, causal windows, entity splits.
//!
//! Every event becomes a fixed-stride block
//! `[8 feature/demographic tokens][pace][weeks_since_last][weeks_to_target]`.
//! A window holds up to `max_events − 1` full context blocks followed by the
//! target event's 8 feature tokens; the model predicts the target's pace at
//! the last of those positions.

pub mod dataset;
pub mod encode;
pub mod split;
pub mod vocab;

pub use dataset::{read_dataset, write_dataset, EventRecord, RunnerHistory};
pub use encode::{ablate, encode_block, encode_window, Ablation, EncodedWindow, WindowLayout};
pub use split::{assign_split, split_entities, Split, SplitRatios};
pub use vocab::{Field, GrammarSpec, SectionKind, Vocabulary, PAD};
