//! Batch data path for external models: generate, then annotate.

mod annotate;
mod generate;

pub use annotate::{
    annotate, collect_groups, export_pseudo_labels, score, score_group, vote, AnnotatedGroup,
    CandidateGroup, PseudoLabel, ScoreRecord, VoteRecord,
};
pub use generate::{
    generate_candidates, ChatBackend, GenerationConfig, HttpChatBackend, RequestError,
    DEFAULT_PROMPT_TEMPLATE, QUESTION_PLACEHOLDER,
};
