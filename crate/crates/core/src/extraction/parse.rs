use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::ident::declared_name;
use crate::corpus::sentence::{open_blocks, split_sentences, Sentence};
use crate::corpus::ProofEnd;

const LEMMA_KEYWORDS: &[&str] = &["Lemma", "Theorem", "Corollary", "Fact"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateLemma {
    pub name: String,
    pub statement: String,
    pub proof: String,
    pub shared_preamble: String,
    pub source_theorem_id: String,
    pub ordinal: usize,
}

impl CandidateLemma {
    /// Statement and proof as they appear in a script.
    pub fn text(&self) -> String {
        format!("{}\n{}", self.statement, self.proof)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedScript {
    pub candidates: Vec<CandidateLemma>,
    pub warnings: Vec<String>,
}

/// Fenced code blocks (``` or ~~~, optional info string) as
/// `(content, closed)`. An unclosed final fence runs to the end.
fn fenced_blocks(text: &str) -> Vec<(String, bool)> {
    let mut blocks = Vec::new();
    let mut open: Option<(char, usize, String)> = None;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let fence = ['`', '~'].into_iter().find_map(|c| {
            let n = trimmed.chars().take_while(|&d| d == c).count();
            (n >= 3).then_some((c, n))
        });
        match (&mut open, fence) {
            (None, Some((c, n))) => open = Some((c, n, String::new())),
            (Some((oc, on, _)), Some((c, n)))
                if c == *oc && n >= *on && trimmed[n..].trim().is_empty() =>
            {
                let (_, _, body) = open.take().expect("open fence");
                blocks.push((body, true));
            }
            (Some((_, _, body)), _) => body.push_str(line),
            (None, None) => {}
        }
    }
    if let Some((_, _, body)) = open {
        blocks.push((body, false));
    }
    blocks
}

/// The last fenced block of `response`, or the whole response when there
/// is none.
pub fn last_code_block(response: &str) -> Option<String> {
    fenced_blocks(response).pop().map(|(body, _)| body)
}

fn lemma_keyword(sentence: &str) -> bool {
    sentence
        .split(|c: char| c.is_whitespace())
        .next()
        .is_some_and(|w| LEMMA_KEYWORDS.contains(&w))
}

fn join_span(block: &str, sentences: &[Sentence]) -> String {
    match (sentences.first(), sentences.last()) {
        (Some(a), Some(b)) => block[a.range.start..b.range.end].to_string(),
        _ => String::new(),
    }
}

/// Splits a model reply into candidate lemmas.
pub fn parse_lemma_script(response: &str, source_theorem_id: &str) -> ParsedScript {
    let mut out = ParsedScript::default();
    let block = match last_code_block(response) {
        Some(b) => b,
        None => {
            out.warnings
                .push("no fenced code block; parsing the whole response".into());
            response.to_string()
        }
    };
    let sentences = match split_sentences(&block) {
        Ok(s) => s,
        Err(e) => {
            out.warnings.push(format!("script does not lex: {e}"));
            warn_all(&out.warnings, source_theorem_id);
            return out;
        }
    };

    let mut preamble: Vec<Sentence> = Vec::new();
    let mut seen_lemma = false;
    let mut current: Option<(Sentence, Vec<Sentence>)> = None;
    let mut ordinal = 0;
    let mut pending: Vec<(usize, Sentence, Vec<Sentence>)> = Vec::new();

    for sentence in sentences {
        let core = sentence.core();
        if lemma_keyword(core) {
            if let Some((stmt, _)) = current.take() {
                out.warnings
                    .push(format!("lemma without terminator dropped: {}", stmt.text));
            }
            seen_lemma = true;
            current = Some((sentence, Vec::new()));
            continue;
        }
        match &mut current {
            Some((_, proof)) => {
                let done = ProofEnd::parse(&sentence.text).is_some();
                proof.push(sentence);
                if done {
                    let (stmt, proof) = current.take().expect("current lemma");
                    pending.push((ordinal, stmt, proof));
                    ordinal += 1;
                }
            }
            None if !seen_lemma => preamble.push(sentence),
            // Closing a section the preamble opened; the checker adds these.
            None if closes_preamble_block(core, &preamble) => {}
            None => out
                .warnings
                .push(format!("sentence outside any lemma dropped: {}", sentence.text)),
        }
    }
    if let Some((stmt, _)) = current {
        out.warnings
            .push(format!("lemma without terminator dropped: {}", stmt.text));
    }

    let shared_preamble = preamble
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    for (ordinal, stmt, proof) in pending {
        let Some(name) = declared_name(stmt.core()) else {
            out.warnings
                .push(format!("lemma without a name dropped: {}", stmt.text));
            continue;
        };
        out.candidates.push(CandidateLemma {
            name,
            statement: stmt.core().to_string(),
            proof: join_span(&block, &proof),
            shared_preamble: shared_preamble.clone(),
            source_theorem_id: source_theorem_id.to_string(),
            ordinal,
        });
    }
    if out.candidates.is_empty() {
        out.warnings.push("no lemma found in the script".into());
    }
    warn_all(&out.warnings, source_theorem_id);
    out
}

fn closes_preamble_block(core: &str, preamble: &[Sentence]) -> bool {
    let Some(name) = core
        .strip_prefix("End")
        .filter(|rest| rest.starts_with(char::is_whitespace))
        .map(|rest| rest.trim().trim_end_matches('.').trim())
    else {
        return false;
    };
    let text: String = preamble.iter().map(|s| format!("{}\n", s.text)).collect();
    open_blocks(&text).iter().any(|b| b == name)
}

fn warn_all(warnings: &[String], source: &str) {
    for w in warnings {
        warn!(source, "{w}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_of_several_fences() {
        let text = "```coq\nLemma a : True.\n```\nthen\n~~~\nLemma b : True.\n~~~\n";
        assert_eq!(last_code_block(text).unwrap(), "Lemma b : True.\n");
        assert_eq!(last_code_block("no fences"), None);
        assert_eq!(last_code_block("```\nopen\n").unwrap(), "open\n");
    }

    #[test]
    fn inner_backticks_do_not_close_a_tilde_fence() {
        let text = "~~~\nx\n```\ny\n~~~";
        assert_eq!(last_code_block(text).unwrap(), "x\n```\ny\n");
    }

    #[test]
    fn unterminated_and_stray_sentences_warn() {
        let parsed = parse_lemma_script(
            "```\nLemma a : True.\nProof. trivial.\nLemma b : True. Proof. trivial. Qed.\nEnd S.\n```",
            "t",
        );
        assert_eq!(parsed.candidates.len(), 1);
        assert_eq!(parsed.candidates[0].name, "b");
        assert_eq!(parsed.candidates[0].ordinal, 0);
        assert_eq!(parsed.warnings.len(), 2);
    }
}
