//! Identifier tokens of Rocq text.

use std::collections::HashSet;

use super::sentence::strip_comments;

/// Reserved words and sorts that never name a user definition.
const KEYWORDS: &[&str] = &[
    "as", "at", "cofix", "else", "end", "exists", "exists2", "fix", "for", "forall", "fun", "if",
    "in", "let", "match", "mod", "return", "struct", "then", "using", "where", "with", "Prop",
    "Set", "SProp", "Type", "_",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Yields identifier tokens in order of appearance. Comments and string
/// literals are skipped; qualified names are split on `.`, so `Nat.add`
/// yields `Nat` and `add`.
pub fn identifiers(text: &str) -> Vec<String> {
    let cleaned = strip_comments(text);
    let mut out = Vec::new();
    let mut chars = cleaned.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '"' {
            // Skip the literal, honoring doubled quotes.
            while let Some((_, d)) = chars.next() {
                if d == '"' {
                    if matches!(chars.peek(), Some((_, '"'))) {
                        chars.next();
                        continue;
                    }
                    break;
                }
            }
            continue;
        }
        if c.is_ascii_digit() {
            while matches!(chars.peek(), Some((_, d)) if is_ident_continue(*d)) {
                chars.next();
            }
            continue;
        }
        if is_ident_start(c) {
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if !is_ident_continue(d) {
                    break;
                }
                end = j + d.len_utf8();
                chars.next();
            }
            let word = &cleaned[i..end];
            if !is_keyword(word) {
                out.push(word.to_string());
            }
        }
    }
    out
}

/// Identifier tokens without duplicates, first occurrence first.
pub fn unique_identifiers(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    identifiers(text)
        .into_iter()
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

/// True when `name` occurs in `text` as a whole identifier token.
pub fn mentions(text: &str, name: &str) -> bool {
    identifiers(text).iter().any(|w| w == name)
}

/// The identifier that directly follows the leading keyword of a
/// declaration (`Lemma foo : ...` gives `foo`).
pub fn declared_name(sentence: &str) -> Option<String> {
    let mut rest = sentence.trim_start();
    let keyword_end = rest.find(|c: char| !is_ident_continue(c))?;
    rest = rest[keyword_end..].trim_start();
    let end = rest
        .find(|c: char| !(is_ident_continue(c) || c == '.'))
        .unwrap_or(rest.len());
    let name = rest[..end].trim_end_matches('.');
    (!name.is_empty() && name.chars().next().is_some_and(is_ident_start)).then(|| name.to_string())
}
