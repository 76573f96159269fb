use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::corpus::ident::{declared_name, identifiers};
use crate::corpus::sentence::{closing_sentences, open_block_spans, split_sentences};
use crate::corpus::{CorpusIndex, TheoremRecord};
use crate::store::VerifiedLemma;

pub const HAMMER_HEADER: &str = "From Hammer Require Import Hammer.";
pub const HAMMER_STUB: &str = "Proof. hammer. Qed.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectOptions {
    pub header: String,
    pub stub: String,
}

impl Default for InjectOptions {
    fn default() -> Self {
        Self {
            header: HAMMER_HEADER.into(),
            stub: HAMMER_STUB.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InjectedFile {
    pub text: String,
    /// `(lemma id, name used in the file)` in file order.
    pub injected: Vec<(String, String)>,
    /// Ids of lemmas that mention definitions not visible at the insertion
    /// point.
    pub skipped: Vec<String>,
}

/// Where lemmas go: before the first block of the prefix that is still open
/// at the theorem, so that their own sections do not nest inside it.
fn insertion_point(prefix: &str) -> usize {
    open_block_spans(prefix)
        .first()
        .map_or(prefix.len(), |(_, at)| *at)
}

/// Names of index definitions visible at `point` of the theorem's file:
/// earlier definitions of the file itself and everything in files the
/// prefix requires.
fn visible_names(thm: &TheoremRecord, index: &CorpusIndex, prefix: &str, point: usize) -> HashSet<String> {
    let required: HashSet<String> = split_sentences(&prefix[..point])
        .unwrap_or_default()
        .iter()
        .filter(|s| s.core().contains("Require"))
        .flat_map(|s| identifiers(s.core()))
        .collect();
    index
        .definitions
        .iter()
        .filter(|d| {
            if d.file_path == thm.file_path {
                d.offset < point
            } else {
                let stem = std::path::Path::new(&d.file_path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                required.contains(&stem)
            }
        })
        .map(|d| d.name.clone())
        .collect()
}

fn rename_statement(statement: &str, old: &str, new: &str) -> String {
    let keyword_end = statement.find(char::is_whitespace).unwrap_or(0);
    let (head, rest) = statement.split_at(keyword_end);
    format!("{head}{}", rest.replacen(old, new, 1))
}

/// Builds the prover file for `thm`: header, the file prefix with the
/// lemmas inserted, the statement and the prover stub. With no lemmas this
/// is the baseline file.
pub fn inject_lemmas(
    thm: &TheoremRecord,
    lemmas: &[VerifiedLemma],
    index: &CorpusIndex,
    options: &InjectOptions,
) -> InjectedFile {
    let prefix = index.preceding_text(thm);
    let point = insertion_point(prefix);
    let visible = visible_names(thm, index, prefix, point);

    let mut taken: HashSet<String> = index
        .definitions
        .iter()
        .map(|d| d.name.clone())
        .chain(index.theorems.iter().map(|t| t.name.clone()))
        .collect();
    let mut out = InjectedFile::default();
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for lemma in lemmas {
        let mentioned = identifiers(&format!("{}\n{}", lemma.shared_preamble, lemma.statement));
        if let Some(missing) = mentioned
            .iter()
            .find(|n| index.name_map.contains_key(*n) && !visible.contains(*n))
        {
            debug!(lemma = %lemma.id, %missing, theorem = %thm.id, "not visible, skipped");
            out.skipped.push(lemma.id.clone());
            continue;
        }
        let original = declared_name(&lemma.statement).unwrap_or_else(|| lemma.name.clone());
        let mut name = original.clone();
        let mut n = 1;
        while taken.contains(&name) {
            name = format!("{original}_s2r{n}");
            n += 1;
        }
        taken.insert(name.clone());
        let statement = if name == original {
            lemma.statement.clone()
        } else {
            rename_statement(&lemma.statement, &original, &name)
        };
        let body = format!("{}\n{}\n", statement.trim_end(), lemma.proof.trim_end());
        let preamble = lemma.shared_preamble.trim().to_string();
        match groups.iter_mut().find(|(p, _)| *p == preamble) {
            Some((_, bodies)) => bodies.push(body),
            None => groups.push((preamble, vec![body])),
        }
        out.injected.push((lemma.id.clone(), name));
    }

    let mut text = String::new();
    text.push_str(options.header.trim_end());
    text.push('\n');
    push_block(&mut text, &prefix[..point]);
    for (preamble, bodies) in &groups {
        if !preamble.is_empty() {
            text.push_str(preamble);
            text.push('\n');
        }
        for body in bodies {
            text.push_str(body);
        }
        text.push_str(&closing_sentences(preamble));
    }
    push_block(&mut text, &prefix[point..]);
    text.push_str(thm.statement_text.trim_end());
    text.push('\n');
    text.push_str(options.stub.trim_end());
    text.push('\n');
    text.push_str(&closing_sentences(prefix));
    out.text = text;
    out
}

fn push_block(out: &mut String, block: &str) {
    out.push_str(block);
    if !block.is_empty() && !block.ends_with('\n') {
        out.push('\n');
    }
}
