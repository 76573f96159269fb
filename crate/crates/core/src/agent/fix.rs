use super::checker::CheckOutcome;
use super::classify::{missing_reference, primary_message, ErrorClass};
use crate::extraction::{parse_lemma_script, CandidateLemma};
use crate::gateway::{ChatTranscript, Gateway, GatewayError, GenerationParams, StageTag};

pub const FIX_SYSTEM: &str = "You are an expert at Rocq theorem proving. You repair Rocq lemmas and their proofs so that they are accepted by the Rocq checker.";

pub fn guidance(class: ErrorClass, error: &str) -> String {
    match class {
        ErrorClass::UndefinedReference => {
            let name = missing_reference(error).unwrap_or_else(|| "a name".into());
            format!(
                "The name {name} is not defined in the current environment. \
                 Use an existing definition instead, add the missing definition to the preamble, \
                 or restate the lemma without {name}."
            )
        }
        ErrorClass::SyntaxError => {
            "The script does not parse. Correct the syntax of the statement and the proof.".into()
        }
        ErrorClass::TacticFailure => {
            "A tactic failed on the current goal. Replace the failing step with tactics that apply to this goal.".into()
        }
        ErrorClass::UnfinishedProof => {
            "The proof leaves goals unsolved. Complete every goal; do not use admit or Admitted.".into()
        }
        ErrorClass::TypeMismatch => {
            "A term does not have the expected type. Correct the statement or the terms used in the proof.".into()
        }
        ErrorClass::CheckerTimeout => {
            "Checking the proof took too long. Give a more direct proof.".into()
        }
        ErrorClass::Other => "Correct the lemma and its proof so that the checker accepts them.".into(),
    }
}

/// A single-turn repair request for `lemma`.
pub fn build_fix_prompt(lemma: &CandidateLemma, outcome: &CheckOutcome, class: ErrorClass) -> ChatTranscript {
    let error = primary_message(outcome.error_text.as_deref().unwrap_or_default());
    let mut user = String::new();
    if !lemma.shared_preamble.trim().is_empty() {
        user.push_str("[Preamble]\n");
        user.push_str(lemma.shared_preamble.trim_end());
        user.push_str("\n\n");
    }
    user.push_str("[Lemma]\n");
    user.push_str(&lemma.text());
    user.push_str("\n\n[Error]\n");
    user.push_str(&error);
    user.push_str("\n\n[Guidance]\n");
    user.push_str(&guidance(class, &error));
    user.push_str("\n\nReturn the corrected lemma and its proof, together with any preamble it needs, as a Rocq script in a single code block.");
    let mut transcript = ChatTranscript::with_system(FIX_SYSTEM);
    transcript.push_user(user, StageTag::Fix);
    transcript
}

/// Applies a repair reply. The first parsed candidate replaces the lemma;
/// an unparsable reply leaves it unchanged.
pub fn apply_fix_reply(lemma: &CandidateLemma, reply: &str) -> CandidateLemma {
    let parsed = parse_lemma_script(reply, &lemma.source_theorem_id);
    match parsed.candidates.into_iter().next() {
        Some(fixed) => CandidateLemma {
            shared_preamble: if fixed.shared_preamble.trim().is_empty() {
                lemma.shared_preamble.clone()
            } else {
                fixed.shared_preamble
            },
            ordinal: lemma.ordinal,
            source_theorem_id: lemma.source_theorem_id.clone(),
            ..fixed
        },
        None => lemma.clone(),
    }
}

pub fn fix(
    lemma: &CandidateLemma,
    outcome: &CheckOutcome,
    class: ErrorClass,
    gateway: &Gateway,
    params: &GenerationParams,
) -> Result<CandidateLemma, GatewayError> {
    let reply = gateway.chat(&build_fix_prompt(lemma, outcome, class), params)?;
    Ok(apply_fix_reply(lemma, &reply.content))
}
