//! Indexing of Rocq project sources: sentences, theorems, definitions.

pub mod ident;
mod scan;
pub mod sentence;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scan::{read_coq_project, scan_project, scan_project_named, CoqProject, LoadPath};
pub use sentence::{split_sentences, LexError, Sentence};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("no .v files matched under {root}")]
    NoFilesMatched { root: String },
    #[error("invalid include glob {glob:?}: {message}")]
    BadGlob { glob: String, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremKind {
    Theorem,
    Lemma,
    Corollary,
    Fact,
    Remark,
    Proposition,
    Example,
}

impl TheoremKind {
    pub fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "Theorem" => Self::Theorem,
            "Lemma" => Self::Lemma,
            "Corollary" => Self::Corollary,
            "Fact" => Self::Fact,
            "Remark" => Self::Remark,
            "Proposition" => Self::Proposition,
            "Example" => Self::Example,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DefinitionKind {
    Inductive,
    Fixpoint,
    CoFixpoint,
    Definition,
    Record,
    Class,
    Instance,
    Notation,
    Variable,
    Hypothesis,
    Axiom,
}

impl DefinitionKind {
    /// Maps a vernacular keyword, including common synonyms and plurals.
    pub fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "Inductive" | "CoInductive" | "Variant" => Self::Inductive,
            "Fixpoint" => Self::Fixpoint,
            "CoFixpoint" => Self::CoFixpoint,
            "Definition" | "Let" => Self::Definition,
            "Record" | "Structure" => Self::Record,
            "Class" => Self::Class,
            "Instance" => Self::Instance,
            "Notation" => Self::Notation,
            "Variable" | "Variables" => Self::Variable,
            "Hypothesis" | "Hypotheses" => Self::Hypothesis,
            "Axiom" | "Axioms" | "Parameter" | "Parameters" | "Conjecture" => Self::Axiom,
            _ => return None,
        })
    }

    /// Types go to the type-definition section of a prompt, everything else
    /// to the function-definition section.
    pub fn is_type_like(self) -> bool {
        matches!(
            self,
            Self::Inductive
                | Self::Record
                | Self::Class
                | Self::Variable
                | Self::Hypothesis
                | Self::Axiom
        )
    }
}

/// How a proof region was closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProofEnd {
    Qed,
    Defined,
    Admitted,
}

impl ProofEnd {
    /// Recognizes a terminator sentence, ignoring leading bullets/braces.
    pub fn parse(sentence: &str) -> Option<Self> {
        match sentence::strip_bullets(sentence).trim() {
            "Qed." => Some(Self::Qed),
            "Defined." => Some(Self::Defined),
            "Admitted." => Some(Self::Admitted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremRecord {
    pub id: String,
    pub name: String,
    pub kind: TheoremKind,
    pub statement_text: String,
    pub proof_sentences: Vec<String>,
    pub file_path: String,
    pub decl_offset: usize,
    pub proof_end_offset: usize,
    pub preceding_span: Range<usize>,
}

impl TheoremRecord {
    pub fn proof_end(&self) -> Option<ProofEnd> {
        self.proof_sentences.last().and_then(|s| ProofEnd::parse(s))
    }

    /// Proved means closed by `Qed.` or `Defined.`; `Admitted.` is not.
    pub fn is_proved(&self) -> bool {
        matches!(self.proof_end(), Some(ProofEnd::Qed | ProofEnd::Defined))
    }

    pub fn project(&self) -> &str {
        self.id.split('/').next().unwrap_or_default()
    }
}

/// Number of tactic sentences in a proof: everything strictly between the
/// opening `Proof` sentence and the closing terminator. Without a `Proof`
/// sentence, counting starts at the first proof sentence.
pub fn count_tactics(record: &TheoremRecord) -> usize {
    let sentences = &record.proof_sentences;
    let body_end = match sentences.last() {
        Some(last) if ProofEnd::parse(last).is_some() => sentences.len() - 1,
        _ => sentences.len(),
    };
    let body_start = match sentences.first() {
        Some(first) if is_proof_opener(first) => 1,
        _ => 0,
    };
    body_end.saturating_sub(body_start)
}

/// `Proof.`, `Proof using x.`, `Proof with auto.` and friends.
pub fn is_proof_opener(sentence: &str) -> bool {
    let core = sentence::strip_bullets(sentence);
    core.strip_prefix("Proof")
        .is_some_and(|rest| rest.starts_with('.') || rest.starts_with(char::is_whitespace))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionRecord {
    pub name: String,
    pub kind: DefinitionKind,
    pub body_text: String,
    pub file_path: String,
    pub offset: usize,
    pub referenced_names: Vec<String>,
}

/// One line of the index cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum IndexLine {
    Theorem(TheoremRecord),
    Definition(DefinitionRecord),
}

#[derive(Clone, Default, PartialEq, Eq)]
pub struct CorpusIndex {
    pub project: String,
    pub files: Vec<String>,
    pub theorems: Vec<TheoremRecord>,
    pub definitions: Vec<DefinitionRecord>,
    /// Name to position in `definitions`; later definitions shadow earlier ones.
    pub name_map: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
    pub sources: BTreeMap<String, Arc<str>>,
}

impl fmt::Debug for CorpusIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CorpusIndex")
            .field("project", &self.project)
            .field("files", &self.files)
            .field("theorems", &self.theorems.len())
            .field("definitions", &self.definitions.len())
            .field("warnings", &self.warnings)
            .finish()
    }
}

impl CorpusIndex {
    pub fn lookup(&self, name: &str) -> Option<&DefinitionRecord> {
        self.name_map.get(name).map(|&i| &self.definitions[i])
    }

    pub fn theorem(&self, id: &str) -> Option<&TheoremRecord> {
        self.theorems.iter().find(|t| t.id == id)
    }

    pub fn proved_theorems(&self) -> impl Iterator<Item = &TheoremRecord> {
        self.theorems.iter().filter(|t| t.is_proved())
    }

    /// Theorems eligible for extraction and evaluation.
    pub fn selected_theorems(&self, include_admitted: bool) -> Vec<&TheoremRecord> {
        self.theorems
            .iter()
            .filter(|t| include_admitted || t.is_proved())
            .collect()
    }

    pub fn source(&self, file: &str) -> Option<&str> {
        self.sources.get(file).map(|s| &**s)
    }

    /// Text of the file before the theorem's declaration.
    pub fn preceding_text(&self, thm: &TheoremRecord) -> &str {
        self.source(&thm.file_path)
            .and_then(|s| s.get(thm.preceding_span.clone()))
            .unwrap_or_default()
    }

    /// Position of a file in dependency order.
    pub fn file_rank(&self, file: &str) -> usize {
        self.files
            .iter()
            .position(|f| f == file)
            .unwrap_or(usize::MAX)
    }

    /// Total tactic count over proved theorems.
    pub fn total_tactics(&self) -> usize {
        self.proved_theorems().map(count_tactics).sum()
    }

    /// Keeps a seeded uniform sample of `n` proved theorems (all of them when
    /// fewer exist); unproved theorems are dropped. Order is preserved.
    pub fn sample_theorems(&mut self, n: usize, seed: u64) {
        let proved: Vec<TheoremRecord> = self.theorems.drain(..).filter(|t| t.is_proved()).collect();
        if proved.len() <= n {
            self.theorems = proved;
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = sample(&mut rng, proved.len(), n).into_vec();
        keep.sort_unstable();
        self.theorems = keep.into_iter().map(|i| proved[i].clone()).collect();
    }

    /// Writes the index cache: one JSON object per theorem, then one per
    /// definition.
    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        let lines = self
            .theorems
            .iter()
            .cloned()
            .map(IndexLine::Theorem)
            .chain(self.definitions.iter().cloned().map(IndexLine::Definition));
        for line in lines {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf)
    }

    /// Reads an index cache back. Sources are not part of the cache.
    pub fn read_jsonl(project: &str, input: impl BufRead) -> io::Result<Self> {
        let mut index = CorpusIndex {
            project: project.to_string(),
            ..Default::default()
        };
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                IndexLine::Theorem(t) => {
                    if !index.files.contains(&t.file_path) {
                        index.files.push(t.file_path.clone());
                    }
                    index.theorems.push(t);
                }
                IndexLine::Definition(d) => {
                    if !index.files.contains(&d.file_path) {
                        index.files.push(d.file_path.clone());
                    }
                    index.name_map.insert(d.name.clone(), index.definitions.len());
                    index.definitions.push(d);
                }
            }
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(sentences: &[&str]) -> TheoremRecord {
        TheoremRecord {
            id: "p/a.v/t".into(),
            name: "t".into(),
            kind: TheoremKind::Lemma,
            statement_text: "Lemma t : True.".into(),
            proof_sentences: sentences.iter().map(|s| s.to_string()).collect(),
            file_path: "a.v".into(),
            decl_offset: 0,
            proof_end_offset: 10,
            preceding_span: 0..0,
        }
    }

    #[test]
    fn tactic_counts() {
        assert_eq!(count_tactics(&record(&["Proof.", "trivial.", "Qed."])), 1);
        assert_eq!(
            count_tactics(&record(&["Proof.", "intros; simpl.", "auto.", "Qed."])),
            2
        );
        assert_eq!(count_tactics(&record(&["reflexivity.", "Qed."])), 1);
        assert_eq!(count_tactics(&record(&["Proof.", "Qed."])), 0);
        assert_eq!(count_tactics(&record(&["Proof using n.", "- auto.", "} Defined."])), 1);
    }

    #[test]
    fn proof_status() {
        assert!(record(&["Proof.", "Qed."]).is_proved());
        assert!(record(&["Proof.", "} Defined."]).is_proved());
        assert!(!record(&["Proof.", "Admitted."]).is_proved());
    }

    #[test]
    fn proof_openers() {
        assert!(is_proof_opener("Proof."));
        assert!(is_proof_opener("Proof with auto."));
        assert!(!is_proof_opener("Proofs."));
    }
}
