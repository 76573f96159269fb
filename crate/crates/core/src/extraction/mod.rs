//! The two-stage extraction: natural-language proof, then formalization.

mod nl;
mod parse;
mod pipeline;
mod prompt;

pub use nl::{count_nl_steps, is_refusal, segment_steps, NlProof};
pub use parse::{last_code_block, parse_lemma_script, CandidateLemma, ParsedScript};
pub use prompt::{
    build_formalize_prompt, build_nl_proof_prompt, system_prompt, CLOSING_LINE,
    FORMALIZE_PROMPT, ROLE_LINE, TASK_LINE, TRUNCATION_MARKER,
};
pub use pipeline::{
    extract_batch, extract_for_theorem, extract_for_theorem_with, read_telemetry, BatchOptions,
    BatchSummary, ExtractConfig, ExtractError, TheoremExtraction, TheoremTelemetry,
};
