use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const REFUSAL_PHRASES: &[&str] = &[
    "cannot prove",
    "can't prove",
    "cannot be proven",
    "cannot be proved",
    "unable to prove",
    "is not provable",
    "impossible to prove",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlProof {
    pub text: String,
    pub steps: Vec<String>,
    pub source_theorem_id: String,
}

impl NlProof {
    pub fn new(text: impl Into<String>, source_theorem_id: impl Into<String>) -> Self {
        let text = text.into();
        let steps = segment_steps(&text);
        Self {
            text,
            steps,
            source_theorem_id: source_theorem_id.into(),
        }
    }

    pub fn is_refusal(&self) -> bool {
        is_refusal(&self.text)
    }
}

fn item_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*\d+[.)][ \t]").expect("valid pattern"))
}

/// The reply declines to give a proof.
pub fn is_refusal(text: &str) -> bool {
    let lower = text.to_lowercase();
    REFUSAL_PHRASES.iter().any(|p| lower.contains(p))
}

/// Splits a reply into steps: enumerated items when there are any (each
/// running up to the next item), otherwise blank-line paragraphs. A refusal
/// without enumerated items has no steps.
pub fn segment_steps(text: &str) -> Vec<String> {
    let starts: Vec<usize> = item_pattern().find_iter(text).map(|m| m.start()).collect();
    if !starts.is_empty() {
        return starts
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let end = starts.get(i + 1).copied().unwrap_or(text.len());
                text[s..end].trim_end().to_string()
            })
            .collect();
    }
    if is_refusal(text) {
        return Vec::new();
    }
    paragraphs(text)
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

pub fn count_nl_steps(proof: &NlProof) -> usize {
    proof.steps.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paragraphs_without_numbering() {
        let p = NlProof::new("First we unfold.\nThen simplify.\n\n\nFinally conclude.\n", "t");
        assert_eq!(count_nl_steps(&p), 2);
    }

    #[test]
    fn steps_are_ordered_substrings() {
        let text = "Intro.\n1. a\n2) b\n  cont\n10. c\n";
        let p = NlProof::new(text, "t");
        assert_eq!(p.steps, ["1. a", "2) b\n  cont", "10. c"]);
        let mut at = 0;
        for s in &p.steps {
            let found = text[at..].find(s.as_str()).unwrap() + at;
            at = found + s.len();
        }
    }

    #[test]
    fn bare_refusal_counts_zero() {
        let p = NlProof::new("The hypothesis is valid, so we cannot prove False.", "t");
        assert!(p.is_refusal());
        assert_eq!(count_nl_steps(&p), 0);
        assert_eq!(count_nl_steps(&NlProof::new("", "t")), 0);
    }

    #[test]
    fn decimals_are_not_items() {
        assert_eq!(count_nl_steps(&NlProof::new("3.5 is not a step\n", "t")), 1);
    }
}
