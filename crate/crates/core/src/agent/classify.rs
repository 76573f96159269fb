use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::text::collapse_whitespace;

/// Marker placed in the error text of a check that ran out of time.
pub const TIMEOUT_MARKER: &str = "[checker timeout]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorClass {
    UndefinedReference,
    SyntaxError,
    TacticFailure,
    UnfinishedProof,
    TypeMismatch,
    CheckerTimeout,
    Other,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

struct Rule {
    class: ErrorClass,
    pattern: &'static str,
}

/// First match wins.
const RULES: &[Rule] = &[
    Rule {
        class: ErrorClass::CheckerTimeout,
        pattern: r"\[checker timeout\]",
    },
    Rule {
        class: ErrorClass::UndefinedReference,
        pattern: r"(?i)(reference|variable|constructor|notation|library|module|class)\s+\S+\s+(was\s+)?not\s+found|was not found in the current environment|Unbound (reference|value|module)|Cannot find (a physical path|library)",
    },
    Rule {
        class: ErrorClass::SyntaxError,
        pattern: r"(?i)syntax error|lexer|unterminated (comment|string)|Invalid character|Unknown interpretation for notation",
    },
    Rule {
        class: ErrorClass::TacticFailure,
        pattern: r"(?i)unable to unify|no applicable tactic|tactic failure|in environment.*cannot be applied|not an inductive product|Found no subterm matching|Nothing to (rewrite|inject)|No such (hypothesis|goal)|Cannot find witness|omega can't solve|lia failed|Not a proposition or a type|The conclusion is not|Impossible to unify|Cannot solve|Not reducible|not convertible|unable to find an instance",
    },
    Rule {
        class: ErrorClass::UnfinishedProof,
        pattern: r"(?i)attempt to save an incomplete proof|pending proofs?|cannot leave open proofs|open proofs remain|proof is not complete|\(dependent evars:|not complete|No more (sub)?goals|There are pending|uses? admit",
    },
    Rule {
        class: ErrorClass::TypeMismatch,
        pattern: r"(?is)has type.*while it is expected to have type|The term .* has type|Illegal application|is expected to have type|cannot be applied to the term|ill-typed|type mismatch",
    },
];

fn compiled() -> &'static [(ErrorClass, Regex)] {
    static TABLE: OnceLock<Vec<(ErrorClass, Regex)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        RULES
            .iter()
            .map(|r| (r.class, Regex::new(r.pattern).expect("valid rule")))
            .collect()
    })
}

/// Maps checker output to exactly one class.
pub fn classify_error(error_text: &str) -> ErrorClass {
    let text = primary_message(error_text);
    compiled()
        .iter()
        .find(|(_, re)| re.is_match(&text))
        .map_or(ErrorClass::Other, |(class, _)| *class)
}

fn jscoq_error() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\[(Error|Exception)\]\s*(.*(?:\n[^-\[{\n].*)*)").expect("valid"))
}

/// The core error message of checker output, whitespace collapsed, without
/// file locations or banners. Messages from `coqc` and jsCoq reduce to the
/// same text.
pub fn primary_message(raw: &str) -> String {
    if raw.contains(TIMEOUT_MARKER) {
        return collapse_whitespace(raw);
    }
    if let Some(c) = jscoq_error().captures(raw) {
        return collapse_whitespace(&c[2]);
    }
    if let Some(pos) = raw.find("Error:") {
        let rest = &raw[pos + "Error:".len()..];
        let end = rest.find("\nFile \"").unwrap_or(rest.len());
        return collapse_whitespace(&rest[..end]);
    }
    collapse_whitespace(raw)
}

/// The identifier a not-found error complains about.
pub fn missing_reference(error_text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?:reference|variable|constructor|notation)\s+(\S+?)\s+was not found")
            .expect("valid")
    });
    re.captures(error_text).map(|c| c[1].to_string())
}

/// `(line, column)` from a coqc location header.
pub fn error_location(raw: &str) -> Option<(u32, u32)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r#"File "[^"]*", line (\d+), characters (\d+)-\d+:"#).expect("valid")
    });
    let c = re.captures(raw)?;
    Some((c[1].parse().ok()?, c[2].parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const COQC_UNDEFINED: &str = "File \"./Check.v\", line 3, characters 10-13:\nError: The reference foo was not found in the current environment.\n\n";

    #[test]
    fn coqc_and_jscoq_agree() {
        let js = "------------------------------------------------------------\n[Error] The reference foo was not found in the current environment.\n------------------------------------------------------------\n{\"fname\":[\"ToplevelInput\"]}\n";
        assert_eq!(primary_message(COQC_UNDEFINED), primary_message(js));
        assert_eq!(
            primary_message(js),
            "The reference foo was not found in the current environment."
        );
        assert_eq!(error_location(COQC_UNDEFINED), Some((3, 10)));
        assert_eq!(missing_reference(js).as_deref(), Some("foo"));
    }

    #[test]
    fn ordered_table() {
        assert_eq!(classify_error(COQC_UNDEFINED), ErrorClass::UndefinedReference);
        assert_eq!(
            classify_error("Error: Syntax error: '.' expected after [vernac] (in [vernac_aux])."),
            ErrorClass::SyntaxError
        );
        assert_eq!(classify_error("Error: Unable to unify \"2\" with \"1\"."), ErrorClass::TacticFailure);
        assert_eq!(
            classify_error("Error: In environment\nx : nat\nThe term \"x\" has type \"nat\" while it is expected to have type \"bool\"."),
            ErrorClass::TypeMismatch
        );
        assert_eq!(
            classify_error("Error: Attempt to save an incomplete proof"),
            ErrorClass::UnfinishedProof
        );
        assert_eq!(classify_error("Error: Command not supported (Open proofs remain)."), ErrorClass::UnfinishedProof);
        assert_eq!(classify_error("[checker timeout] after 60 s"), ErrorClass::CheckerTimeout);
        assert_eq!(classify_error("segmentation fault"), ErrorClass::Other);
        assert_eq!(classify_error(""), ErrorClass::Other);
    }
}
