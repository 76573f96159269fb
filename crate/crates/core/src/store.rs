//! Verified lemmas with provenance, deduplicated by normalized statement.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ident::{declared_name, identifiers};
use crate::corpus::sentence::strip_comments;
use crate::corpus::{CorpusIndex, DefinitionKind};
use crate::evaluation::FoldPlan;
use crate::extraction::CandidateLemma;
use crate::text::{collapse_whitespace, sha256_hex};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("persisting {path}: {source}")]
    PersistFailure {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("lemma {lemma} comes from theorem {theorem}, which is not in the fold plan")]
    UnknownSourceTheorem { lemma: String, theorem: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedLemma {
    pub id: String,
    pub name: String,
    pub statement: String,
    pub proof: String,
    pub shared_preamble: String,
    pub source_theorem_id: String,
    pub source_project: String,
    pub backend_model: String,
    pub rounds_used: usize,
    pub normalized_hash: String,
}

impl VerifiedLemma {
    pub fn from_candidate(
        candidate: CandidateLemma,
        source_project: &str,
        backend_model: &str,
        rounds_used: usize,
    ) -> Self {
        let normalized_hash = normalized_hash(&candidate.statement);
        Self {
            id: format!("lem-{}", &normalized_hash[..16]),
            name: candidate.name,
            statement: candidate.statement,
            proof: candidate.proof,
            shared_preamble: candidate.shared_preamble,
            source_theorem_id: candidate.source_theorem_id,
            source_project: source_project.to_string(),
            backend_model: backend_model.to_string(),
            rounds_used,
            normalized_hash,
        }
    }
}

/// The statement without its keyword and name, whitespace collapsed.
pub fn normalized_statement(statement: &str) -> String {
    let text = collapse_whitespace(&strip_comments(statement));
    let rest = match text.split_once(' ') {
        Some((_, rest)) => rest,
        None => return text,
    };
    match declared_name(&text) {
        Some(name) => rest
            .strip_prefix(name.as_str())
            .unwrap_or(rest)
            .trim_start()
            .to_string(),
        None => rest.to_string(),
    }
}

pub fn normalized_hash(statement: &str) -> String {
    sha256_hex(normalized_statement(statement))
}

/// An extra origin of a stored lemma, recorded when a duplicate is added.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceLink {
    pub normalized_hash: String,
    pub name: String,
    pub source_theorem_id: String,
    pub source_project: String,
    pub backend_model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddResult {
    Added,
    Duplicate,
}

#[derive(Debug, Default)]
struct Inner {
    lemmas: Vec<VerifiedLemma>,
    by_hash: HashMap<String, usize>,
    links: Vec<ProvenanceLink>,
    files: Option<(File, File)>,
}

/// A set of verified lemmas, optionally backed by a JSON Lines file and a
/// `.provenance.jsonl` sidecar. Adds are serialized; each record is written
/// as one line.
#[derive(Debug, Default)]
pub struct LemmaStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

pub fn provenance_path(store: &Path) -> PathBuf {
    let stem = store.file_stem().unwrap_or_default().to_string_lossy();
    store.with_file_name(format!("{stem}.provenance.jsonl"))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let display = path.display().to_string();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|source| StoreError::PersistFailure {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StoreError::PersistFailure {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Format {
            path: display.clone(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_line(file: &mut File, path: &Path, value: &impl Serialize) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    file.write_all(line.as_bytes())
        .and_then(|()| file.flush())
        .map_err(|source| StoreError::PersistFailure {
            path: path.display().to_string(),
            source,
        })
}

impl LemmaStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads the store at `path` (missing files mean an empty store) and
    /// appends future additions to it.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let store = Self::load(path)?;
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| StoreError::PersistFailure {
                    path: p.display().to_string(),
                    source,
                })
        };
        let files = (open(path)?, open(&provenance_path(path))?);
        store.inner.lock().expect("store lock").files = Some(files);
        Ok(LemmaStore {
            path: Some(path.to_path_buf()),
            inner: store.inner,
        })
    }

    /// Loads a read-only copy of the store at `path`.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let store = Self::in_memory();
        {
            let mut inner = store.inner.lock().expect("store lock");
            for lemma in read_lines::<VerifiedLemma>(path)? {
                if !inner.by_hash.contains_key(&lemma.normalized_hash) {
                    let at = inner.lemmas.len();
                    inner.by_hash.insert(lemma.normalized_hash.clone(), at);
                    inner.lemmas.push(lemma);
                }
            }
            inner.links = read_lines(&provenance_path(path))?;
        }
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn add(&self, lemma: VerifiedLemma) -> Result<AddResult, StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        let inner = &mut *inner;
        if inner.by_hash.contains_key(&lemma.normalized_hash) {
            let link = ProvenanceLink {
                normalized_hash: lemma.normalized_hash,
                name: lemma.name,
                source_theorem_id: lemma.source_theorem_id,
                source_project: lemma.source_project,
                backend_model: lemma.backend_model,
            };
            if !inner.links.contains(&link) {
                if let (Some((_, links_file)), Some(path)) = (&mut inner.files, &self.path) {
                    append_line(links_file, &provenance_path(path), &link)?;
                }
                inner.links.push(link);
            }
            return Ok(AddResult::Duplicate);
        }
        if let (Some((store_file, _)), Some(path)) = (&mut inner.files, &self.path) {
            append_line(store_file, path, &lemma)?;
        }
        inner.by_hash.insert(lemma.normalized_hash.clone(), inner.lemmas.len());
        inner.lemmas.push(lemma);
        Ok(AddResult::Added)
    }

    /// Writes the whole store and its sidecar to `path`.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let inner = self.inner.lock().expect("store lock");
        write_jsonl(path, &inner.lemmas)?;
        write_jsonl(&provenance_path(path), &inner.links)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").lemmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<VerifiedLemma> {
        self.inner.lock().expect("store lock").lemmas.clone()
    }

    pub fn links(&self) -> Vec<ProvenanceLink> {
        self.inner.lock().expect("store lock").links.clone()
    }

    /// Backend models that produced the lemma with this hash.
    pub fn models_for(&self, hash: &str) -> Vec<String> {
        let inner = self.inner.lock().expect("store lock");
        let mut models: Vec<String> = inner
            .by_hash
            .get(hash)
            .map(|&i| inner.lemmas[i].backend_model.clone())
            .into_iter()
            .chain(
                inner
                    .links
                    .iter()
                    .filter(|l| l.normalized_hash == hash)
                    .map(|l| l.backend_model.clone()),
            )
            .collect();
        models.dedup();
        models
    }

    pub fn contains_hash(&self, hash: &str) -> bool {
        self.inner.lock().expect("store lock").by_hash.contains_key(hash)
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| StoreError::PersistFailure {
        path: path.display().to_string(),
        source,
    })
}

/// Lemmas usable when testing on `test_fold`: those with an origin in
/// another fold. A lemma whose primary origin is in the test fold but that
/// was also mined from a training theorem is returned with that training
/// origin.
pub fn query_training(
    store: &LemmaStore,
    plan: &FoldPlan,
    test_fold: usize,
) -> Result<Vec<VerifiedLemma>, StoreError> {
    let inner = store.inner.lock().expect("store lock");
    let mut out = Vec::new();
    for lemma in &inner.lemmas {
        let origins = std::iter::once((&lemma.source_theorem_id, &lemma.source_project)).chain(
            inner
                .links
                .iter()
                .filter(|l| l.normalized_hash == lemma.normalized_hash)
                .map(|l| (&l.source_theorem_id, &l.source_project)),
        );
        let mut chosen = None;
        for (theorem, project) in origins {
            let fold = plan.fold_of(theorem).ok_or_else(|| StoreError::UnknownSourceTheorem {
                lemma: lemma.id.clone(),
                theorem: theorem.clone(),
            })?;
            if fold != test_fold && chosen.is_none() {
                chosen = Some((theorem.clone(), project.clone()));
            }
        }
        if let Some((theorem, project)) = chosen {
            out.push(VerifiedLemma {
                source_theorem_id: theorem,
                source_project: project,
                ..lemma.clone()
            });
        }
    }
    Ok(out)
}

/// Both stores' contents with add semantics.
pub fn union_stores(a: &LemmaStore, b: &LemmaStore) -> LemmaStore {
    let out = LemmaStore::in_memory();
    for store in [a, b] {
        for lemma in store.snapshot() {
            out.add(lemma).expect("in-memory add");
        }
        for link in store.links() {
            let mut inner = out.inner.lock().expect("store lock");
            if !inner.links.contains(&link) {
                inner.links.push(link);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Var(usize),
    Word(String),
}

fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        let mut tok = c.to_string();
        if c.is_alphanumeric() || c == '_' {
            while let Some(&d) = chars.peek() {
                if d.is_alphanumeric() || d == '_' || d == '\'' || d == '.' {
                    tok.push(d);
                    chars.next();
                } else {
                    break;
                }
            }
            out.push(tok.trim_end_matches('.').to_string());
            if tok.ends_with('.') {
                out.push(".".into());
            }
        } else if "()[]{},".contains(c) {
            out.push(tok);
        } else {
            while let Some(&d) = chars.peek() {
                if d.is_whitespace() || d.is_alphanumeric() || d == '_' || "()[]{},".contains(d) {
                    break;
                }
                tok.push(d);
                chars.next();
            }
            out.push(tok);
        }
    }
    out
}

/// Renames `vars` to positional placeholders by first occurrence and drops
/// parentheses.
fn canonical(toks: &[String], vars: &[String]) -> Vec<Tok> {
    let mut order: Vec<&str> = Vec::new();
    toks.iter()
        .filter(|t| !matches!(t.as_str(), "(" | ")"))
        .map(|t| {
            if vars.iter().any(|v| v == t) {
                let pos = order.iter().position(|o| o == t).unwrap_or_else(|| {
                    order.push(t);
                    order.len() - 1
                });
                Tok::Var(pos)
            } else {
                Tok::Word(t.clone())
            }
        })
        .collect()
}

/// Splits at the first depth-0 occurrence of `sep`.
fn split_top(toks: &[String], sep: &str) -> Option<(Vec<String>, Vec<String>)> {
    let mut depth = 0i32;
    for (i, t) in toks.iter().enumerate() {
        match t.as_str() {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth -= 1,
            _ if depth == 0 && t == sep => {
                return Some((toks[..i].to_vec(), toks[i + 1..].to_vec()));
            }
            _ => {}
        }
    }
    None
}

/// Names bound by a binder list such as `x y (z : T) {w : U}`.
fn binder_names(toks: &[String]) -> Vec<String> {
    let mut names = Vec::new();
    let mut depth = 0;
    let mut in_type = false;
    for t in toks {
        match t.as_str() {
            "(" | "{" | "[" | "`(" | "`{" => {
                if depth == 0 {
                    in_type = false;
                }
                depth += 1;
            }
            ")" | "}" | "]" => {
                depth -= 1;
                if depth == 0 {
                    in_type = false;
                }
            }
            ":" => in_type = true,
            _ if !in_type && depth <= 1 && is_ident(t) => names.push(t.clone()),
            _ => {}
        }
    }
    names
}

fn is_ident(t: &str) -> bool {
    t.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_') && t != "_"
}

/// `(variables, lhs, rhs)` of a lemma statement `Lemma n binders : forall .., l = r.`
fn lemma_equation(statement: &str) -> Option<(Vec<String>, Vec<String>, Vec<String>)> {
    let mut toks = tokens(&strip_comments(statement));
    if toks.last().map(String::as_str) == Some(".") {
        toks.pop();
    }
    let toks = toks.get(2..)?.to_vec();
    let (params, mut body) = split_top(&toks, ":")?;
    let mut vars = binder_names(&params);
    while body.first().map(String::as_str) == Some("forall") {
        let (binders, rest) = split_top(&body[1..], ",")?;
        vars.extend(binder_names(&binders));
        body = rest;
    }
    let (lhs, rhs) = split_top(&body, "=")?;
    Some((vars, lhs, rhs))
}

/// Equations `f params[arm pattern] = arm body` for each match arm of a
/// definition whose body is a match on one of its parameters, or the single
/// equation `f params = body` otherwise. Only explicit parameters and
/// pattern variables are variables; implicit ones keep their names.
fn definition_equations(body_text: &str, name: &str) -> Vec<(Vec<String>, Vec<String>, Vec<String>)> {
    let mut toks = tokens(&strip_comments(body_text));
    if toks.last().map(String::as_str) == Some(".") {
        toks.pop();
    }
    let Some(at) = toks.iter().position(|t| t == name) else {
        return Vec::new();
    };
    let Some((head, body)) = split_top(&toks[at + 1..], ":=") else {
        return Vec::new();
    };
    let params_toks = match split_top(&head, ":") {
        Some((p, _)) => p,
        None => head,
    };
    let params_toks: Vec<String> = match split_top(&params_toks, "{") {
        // `{struct n}` annotations trail the binders.
        Some((before, after)) if after.first().map(String::as_str) == Some("struct") => before,
        _ => params_toks,
    };
    let explicit = explicit_params(&params_toks);
    let call = |args: &[Vec<String>]| {
        let mut lhs = vec![name.to_string()];
        for a in args {
            if a.len() > 1 {
                lhs.push("(".into());
                lhs.extend(a.iter().cloned());
                lhs.push(")".into());
            } else {
                lhs.extend(a.iter().cloned());
            }
        }
        lhs
    };

    let plain_args: Vec<Vec<String>> = explicit.iter().map(|p| vec![p.clone()]).collect();
    let is_match = body.first().map(String::as_str) == Some("match");
    if !is_match {
        return vec![(explicit.clone(), call(&plain_args), body)];
    }
    let Some(with_at) = body.iter().position(|t| t == "with") else {
        return Vec::new();
    };
    let scrutinee = &body[1..with_at];
    let [matched] = scrutinee else {
        return Vec::new();
    };
    let Some(matched_pos) = explicit.iter().position(|p| p == matched) else {
        return Vec::new();
    };
    let mut arms_toks = body[with_at + 1..].to_vec();
    if arms_toks.last().map(String::as_str) == Some("end") {
        arms_toks.pop();
    }
    let mut out = Vec::new();
    for arm in split_arms(&arms_toks) {
        let Some((pattern, rhs)) = split_top(&arm, "=>") else {
            continue;
        };
        if pattern.iter().any(|t| t == "_") || pattern.is_empty() {
            continue;
        }
        let pattern_vars: Vec<String> = pattern
            .iter()
            .skip(1)
            .filter(|t| is_ident(t))
            .cloned()
            .collect();
        let mut args = plain_args.clone();
        args[matched_pos] = pattern.clone();
        let mut vars: Vec<String> = explicit.iter().filter(|p| *p != matched).cloned().collect();
        vars.extend(pattern_vars);
        out.push((vars, call(&args), rhs));
    }
    out
}

fn explicit_params(toks: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut brace = false;
    let mut in_type = false;
    for t in toks {
        match t.as_str() {
            "(" => {
                if depth == 0 {
                    brace = false;
                    in_type = false;
                }
                depth += 1;
            }
            "{" | "[" => {
                if depth == 0 {
                    brace = true;
                    in_type = false;
                }
                depth += 1;
            }
            ")" | "}" | "]" => depth -= 1,
            ":" => in_type = true,
            _ if !brace && !in_type && depth <= 1 && is_ident(t) => out.push(t.clone()),
            _ => {}
        }
    }
    out
}

fn split_arms(toks: &[String]) -> Vec<Vec<String>> {
    let mut arms = Vec::new();
    let mut current = Vec::new();
    let mut depth = 0i32;
    for t in toks {
        match t.as_str() {
            "(" | "[" | "{" | "match" => depth += 1,
            ")" | "]" | "}" | "end" => depth -= 1,
            _ => {}
        }
        if t == "|" && depth == 0 {
            if !current.is_empty() {
                arms.push(std::mem::take(&mut current));
            }
        } else {
            current.push(t.clone());
        }
    }
    if !current.is_empty() {
        arms.push(current);
    }
    arms
}

/// True when the lemma's equation restates a clause of a `Fixpoint` or
/// `Definition` in the index, up to renaming of variables.
pub fn flag_redundant(lemma: &VerifiedLemma, index: &CorpusIndex) -> bool {
    let Some((vars, lhs, rhs)) = lemma_equation(&lemma.statement) else {
        return false;
    };
    let names: Vec<String> = identifiers(&lemma.statement);
    let lemma_side = |l: &[String], r: &[String]| {
        let mut all = l.to_vec();
        all.push("=".into());
        all.extend(r.iter().cloned());
        canonical(&all, &vars)
    };
    let forward = lemma_side(&lhs, &rhs);
    let backward = lemma_side(&rhs, &lhs);
    index
        .definitions
        .iter()
        .filter(|d| matches!(d.kind, DefinitionKind::Fixpoint | DefinitionKind::Definition))
        .filter(|d| names.contains(&d.name))
        .any(|d| {
            definition_equations(&d.body_text, &d.name)
                .into_iter()
                .any(|(dvars, dl, dr)| {
                    let mut all = dl;
                    all.push("=".into());
                    all.extend(dr);
                    let eq = canonical(&all, &dvars);
                    eq == forward || eq == backward
                })
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_drops_keyword_and_name() {
        assert_eq!(
            normalized_statement("Lemma power_1:  forall x: A,\n power x 1 = x."),
            ": forall x: A, power x 1 = x."
        );
        assert_eq!(
            normalized_hash("Lemma a : True."),
            normalized_hash("Theorem b   : True.")
        );
    }

    #[test]
    fn equations() {
        let (vars, l, r) = lemma_equation("Lemma p (y : nat) : forall x: A, power x y = x.").unwrap();
        assert_eq!(vars, ["y", "x"]);
        assert_eq!(l, ["power", "x", "y"]);
        assert_eq!(r, ["x"]);
        let eqs = definition_equations(
            "Fixpoint power {A : Type} {dot : A -> A -> A} {one : A} {M : Monoid dot one} (a : A) (n : nat) : A :=\n  match n with\n  | 0 => one\n  | S p => dot a (power a p)\n  end.",
            "power",
        );
        assert_eq!(eqs.len(), 2);
        assert_eq!(eqs[1].1, ["power", "a", "(", "S", "p", ")"]);
    }
}
