use crate::gateway::{ChatTranscript, Role, StageTag};
use crate::retrieval::ContextBundle;

pub const ROLE_LINE: &str = "You are an expert at Rocq theorem proving.";
pub const TASK_LINE: &str = "Please analyze the given theorem step by step. Below, we further provide some helper informations.";
pub const CLOSING_LINE: &str = "Finally, The given theorem is:";
pub const TRUNCATION_MARKER: &str = "(truncated)";

pub const FORMALIZE_PROMPT: &str = "Based on the analysis above, do the following tasks one by one:

[Task 1]
Summarize the proof steps mentioned in the analysis as general lemmas.

[Task 2]
Formalize each lemma in Rocq, and provide the proof for each lemma.

[Task 3]
Return a Rocq script that includes all the formalized lemmas and proofs.";

fn section(out: &mut String, label: &str, body: &str) {
    out.push_str(label);
    out.push('\n');
    if !body.is_empty() {
        out.push_str(body.trim_end());
        out.push('\n');
    }
    out.push('\n');
}

pub fn system_prompt(bundle: &ContextBundle) -> String {
    let mut out = format!("{ROLE_LINE} {TASK_LINE}\n\n");
    section(&mut out, "[Type Definitions]", &bundle.type_definitions.join("\n\n"));
    section(
        &mut out,
        "[Function Definitions]",
        &bundle.function_definitions.join("\n\n"),
    );
    let script = if bundle.truncated {
        format!("{TRUNCATION_MARKER}\n{}", bundle.script_so_far)
    } else {
        bundle.script_so_far.clone()
    };
    section(&mut out, "[Script So Far]", &script);
    out.push_str(CLOSING_LINE);
    out
}

/// The stage-1 transcript: system prompt plus the theorem statement.
pub fn build_nl_proof_prompt(bundle: &ContextBundle, statement: &str) -> ChatTranscript {
    let mut transcript = ChatTranscript::with_system(system_prompt(bundle));
    transcript.push_user(
        format!("[Theorem Statement] {}", statement.trim()),
        StageTag::NlProof,
    );
    transcript
}

/// Extends the stage-1 history with the formalization request.
pub fn build_formalize_prompt(history: &ChatTranscript) -> ChatTranscript {
    debug_assert_eq!(history.last().map(|m| m.role), Some(Role::Assistant));
    let mut transcript = history.clone();
    transcript.push_user(FORMALIZE_PROMPT, StageTag::Formalize);
    transcript
}
