//! Lexical sentence splitting for Rocq vernacular.
//!
//! A sentence runs from its first significant character up to and including
//! a `.` that is followed by whitespace, end of input, or the opening of a
//! comment. Periods inside (nested) comments and string literals never end a
//! sentence. Whitespace and comments between sentences belong to no sentence,
//! so bullets (`-`, `+`, `*`) and braces end up at the head of the sentence
//! that follows them.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("unterminated comment starting at byte {offset}")]
    UnterminatedComment { offset: usize },
    #[error("unterminated string literal starting at byte {offset}")]
    UnterminatedString { offset: usize },
}

impl LexError {
    pub fn offset(&self) -> usize {
        match self {
            LexError::UnterminatedComment { offset } | LexError::UnterminatedString { offset } => {
                *offset
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub range: Range<usize>,
}

impl Sentence {
    /// The sentence with leading bullets and braces stripped.
    pub fn core(&self) -> &str {
        strip_bullets(&self.text)
    }
}

/// Strips leading proof bullets (`-`, `+`, `*` runs) and braces.
pub fn strip_bullets(text: &str) -> &str {
    let mut rest = text.trim_start();
    loop {
        let before = rest.len();
        rest = rest.trim_start_matches(['{', '}']).trim_start();
        for bullet in ['-', '+', '*'] {
            let trimmed = rest.trim_start_matches(bullet);
            // `*)` or an operator glued to an identifier is not a bullet.
            if trimmed.len() != rest.len()
                && trimmed.chars().next().is_none_or(char::is_whitespace)
            {
                rest = trimmed.trim_start();
            }
        }
        if rest.len() == before {
            return rest;
        }
    }
}

/// Skips a comment whose `(*` starts at `start`; returns the offset just past
/// the matching `*)`.
fn skip_comment(bytes: &[u8], start: usize) -> Result<usize, LexError> {
    let mut depth = 0usize;
    let mut i = start;
    while i < bytes.len() {
        match bytes[i] {
            b'(' if bytes.get(i + 1) == Some(&b'*') => {
                depth += 1;
                i += 2;
            }
            b'*' if bytes.get(i + 1) == Some(&b')') => {
                depth -= 1;
                i += 2;
                if depth == 0 {
                    return Ok(i);
                }
            }
            // Rocq lexes string literals inside comments too.
            b'"' => i = skip_string(bytes, i)?,
            _ => i += 1,
        }
    }
    Err(LexError::UnterminatedComment { offset: start })
}

/// Skips a string literal whose opening quote is at `start`. A doubled quote
/// is an escaped quote.
fn skip_string(bytes: &[u8], start: usize) -> Result<usize, LexError> {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == b'"' {
            if bytes.get(i + 1) == Some(&b'"') {
                i += 2;
                continue;
            }
            return Ok(i + 1);
        }
        i += 1;
    }
    Err(LexError::UnterminatedString { offset: start })
}

fn is_comment_open(bytes: &[u8], i: usize) -> bool {
    bytes.get(i) == Some(&b'(') && bytes.get(i + 1) == Some(&b'*')
}

fn ends_sentence(bytes: &[u8], dot: usize) -> bool {
    match bytes.get(dot + 1) {
        None => true,
        Some(b) if b.is_ascii_whitespace() => true,
        Some(_) => is_comment_open(bytes, dot + 1),
    }
}

/// Splits `source` into sentences with byte ranges into `source`.
///
/// Trailing significant text without a terminating period is returned as a
/// final, unterminated sentence so that nothing is silently lost.
pub fn split_sentences(source: &str) -> Result<Vec<Sentence>, LexError> {
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if is_comment_open(bytes, i) {
            i = skip_comment(bytes, i)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let sentence_start = *start.get_or_insert(i);
        match b {
            b'"' => i = skip_string(bytes, i)?,
            b'.' if ends_sentence(bytes, i) => {
                let range = sentence_start..i + 1;
                out.push(Sentence {
                    text: source[range.clone()].to_string(),
                    range,
                });
                start = None;
                i += 1;
            }
            _ => i += 1,
        }
    }
    if let Some(s) = start {
        let end = source[s..].trim_end().len() + s;
        out.push(Sentence {
            text: source[s..end].to_string(),
            range: s..end,
        });
    }
    Ok(out)
}

/// True when `gap` holds only whitespace and complete comments.
pub fn is_trivia(gap: &str) -> bool {
    let bytes = gap.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if is_comment_open(bytes, i) {
            match skip_comment(bytes, i) {
                Ok(next) => i = next,
                Err(_) => return false,
            }
        } else if bytes[i].is_ascii_whitespace() {
            i += 1;
        } else {
            return false;
        }
    }
    true
}

/// Removes comments from a sentence, leaving string literals intact.
pub fn strip_comments(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let mut copied = 0;
    while i < bytes.len() {
        if is_comment_open(bytes, i) {
            out.push_str(&text[copied..i]);
            i = skip_comment(bytes, i).unwrap_or(bytes.len());
            out.push(' ');
            copied = i;
        } else if bytes[i] == b'"' {
            i = skip_string(bytes, i).unwrap_or(bytes.len());
        } else {
            i += 1;
        }
    }
    out.push_str(&text[copied..]);
    out
}

/// `Section`s and `Module`s left open at the end of `text`, outermost
/// first, with the offset of the sentence that opened each.
pub fn open_block_spans(text: &str) -> Vec<(String, usize)> {
    let mut stack: Vec<(String, usize)> = Vec::new();
    for sentence in split_sentences(text).unwrap_or_default() {
        let core = strip_comments(sentence.core());
        let words: Vec<&str> = core.trim_end_matches('.').split_whitespace().collect();
        match words.as_slice() {
            ["Section", name] => stack.push((name.to_string(), sentence.range.start)),
            ["Module", rest @ ..] if !core.contains(":=") => {
                let name = rest
                    .iter()
                    .find(|w| !matches!(**w, "Type" | "Import" | "Export"))
                    .map(|w| w.split(['(', ':']).next().unwrap_or(w));
                if let Some(name) = name.filter(|n| !n.is_empty()) {
                    stack.push((name.to_string(), sentence.range.start));
                }
            }
            ["End", name] => {
                if let Some(pos) = stack.iter().rposition(|(s, _)| s == name) {
                    stack.truncate(pos);
                }
            }
            _ => {}
        }
    }
    stack
}

pub fn open_blocks(text: &str) -> Vec<String> {
    open_block_spans(text).into_iter().map(|(n, _)| n).collect()
}

/// `End` sentences closing every block left open by `text`.
pub fn closing_sentences(text: &str) -> String {
    open_blocks(text)
        .iter()
        .rev()
        .map(|name| format!("End {name}.\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<String> {
        split_sentences(src)
            .unwrap()
            .into_iter()
            .map(|s| s.text)
            .collect()
    }

    #[test]
    fn four_sentences_in_a_one_line_lemma() {
        assert_eq!(
            texts("Lemma a : True. Proof. trivial. Qed."),
            ["Lemma a : True.", "Proof.", "trivial.", "Qed."]
        );
    }

    #[test]
    fn comment_periods_are_ignored() {
        assert_eq!(
            texts("(* x. y. *) Definition b := 0."),
            ["Definition b := 0."]
        );
        assert_eq!(
            texts("(* a (* nested. *) still. *) Check 1."),
            ["Check 1."]
        );
    }

    #[test]
    fn string_periods_are_ignored() {
        let src = "Definition s := \"a.b\". Check s.";
        assert_eq!(texts(src), ["Definition s := \"a.b\".", "Check s."]);
        assert_eq!(texts("Check \"x. \"\"y. \"."), ["Check \"x. \"\"y. \"."]);
    }

    #[test]
    fn qualified_names_do_not_split() {
        assert_eq!(texts("Check Nat.add. Qed."), ["Check Nat.add.", "Qed."]);
    }

    #[test]
    fn bullets_and_braces_attach_forward() {
        let got = texts("Proof.\n  - simpl.\n  { auto. }\nQed.");
        assert_eq!(got, ["Proof.", "- simpl.", "{ auto.", "}\nQed."]);
        assert_eq!(strip_bullets("} Qed."), "Qed.");
        assert_eq!(strip_bullets("- + simpl."), "simpl.");
        assert_eq!(strip_bullets("*) x."), "*) x.");
    }

    #[test]
    fn dot_before_comment_ends_sentence() {
        assert_eq!(texts("Qed.(* done *)"), ["Qed."]);
    }

    #[test]
    fn unterminated_input_reports_offsets() {
        assert_eq!(
            split_sentences("Check 1. (* open"),
            Err(LexError::UnterminatedComment { offset: 9 })
        );
        assert_eq!(
            split_sentences("Check \"abc"),
            Err(LexError::UnterminatedString { offset: 6 })
        );
    }

    #[test]
    fn trailing_fragment_is_kept() {
        assert_eq!(texts("Proof. trivial  \n"), ["Proof.", "trivial"]);
    }

    #[test]
    fn open_sections_and_modules() {
        let text = "Section A.\nModule M.\nEnd M.\nSection B.\nModule N := O.\nModule Type T.";
        assert_eq!(open_blocks(text), ["A", "B", "T"]);
        assert_eq!(closing_sentences("Section S.\nContext (x : nat)."), "End S.\n");
        assert_eq!(closing_sentences("Require Import Arith."), "");
        assert_eq!(open_block_spans("Check 1.\nSection A.\n")[0], ("A".to_string(), 9));
    }

    #[test]
    fn comment_stripping_keeps_strings() {
        assert_eq!(
            strip_comments("Check (* c *) \"(* s *)\"."),
            "Check   \"(* s *)\"."
        );
    }
}
