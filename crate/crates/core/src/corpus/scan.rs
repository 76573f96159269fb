use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use globset::{Glob, GlobSetBuilder};
use rayon::prelude::*;
use tracing::{debug, warn};
use walkdir::WalkDir;

use super::ident::{declared_name, unique_identifiers};
use super::sentence::{split_sentences, strip_comments, LexError, Sentence};
use super::{
    is_proof_opener, CorpusIndex, DefinitionKind, DefinitionRecord, ProofEnd, ScanError,
    TheoremKind, TheoremRecord,
};

/// A `-Q`/`-R` mapping from a `_CoqProject` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadPath {
    pub recursive: bool,
    pub dir: String,
    pub logical: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoqProject {
    pub files: Vec<String>,
    pub load_paths: Vec<LoadPath>,
}

impl CoqProject {
    /// Checker flags with directories resolved against `root`.
    pub fn checker_flags(&self, root: &Path) -> Vec<String> {
        let mut flags = Vec::new();
        for lp in &self.load_paths {
            flags.push(if lp.recursive { "-R" } else { "-Q" }.to_string());
            flags.push(root.join(&lp.dir).display().to_string());
            flags.push(lp.logical.clone());
        }
        flags
    }
}

fn normalize_rel(path: &str) -> String {
    path.trim_start_matches("./").replace('\\', "/")
}

/// Parses `_CoqProject` under `root`, if present.
pub fn read_coq_project(root: &Path) -> Option<CoqProject> {
    let text = std::fs::read_to_string(root.join("_CoqProject")).ok()?;
    let mut project = CoqProject::default();
    let tokens: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or_default())
        .flat_map(str::split_whitespace)
        .collect();
    let mut i = 0;
    while i < tokens.len() {
        match tokens[i] {
            flag @ ("-Q" | "-R") if i + 2 < tokens.len() => {
                project.load_paths.push(LoadPath {
                    recursive: flag == "-R",
                    dir: tokens[i + 1].to_string(),
                    logical: tokens[i + 2].to_string(),
                });
                i += 3;
            }
            "-I" | "-arg" => i += 2,
            tok if tok.ends_with(".v") => {
                project.files.push(normalize_rel(tok));
                i += 1;
            }
            _ => i += 1,
        }
    }
    Some(project)
}

/// Scans `root`, naming the project after the directory.
pub fn scan_project(root: &Path, include_globs: &[String]) -> Result<CorpusIndex, ScanError> {
    let name = root
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "project".to_string());
    scan_project_named(&name, root, include_globs)
}

pub fn scan_project_named(
    project: &str,
    root: &Path,
    include_globs: &[String],
) -> Result<CorpusIndex, ScanError> {
    let files = ordered_files(root, include_globs)?;
    if files.is_empty() {
        return Err(ScanError::NoFilesMatched {
            root: root.display().to_string(),
        });
    }

    let scanned: Vec<_> = files
        .par_iter()
        .map(|rel| {
            let path = root.join(rel);
            let result = std::fs::read_to_string(&path)
                .map_err(FileError::Io)
                .and_then(|text| {
                    let scan = scan_file(project, rel, &text).map_err(FileError::Lex)?;
                    Ok((Arc::from(text), scan))
                });
            (rel.clone(), result)
        })
        .collect();

    let mut index = CorpusIndex {
        project: project.to_string(),
        ..Default::default()
    };
    let mut seen_ids = HashSet::new();
    for (rel, result) in scanned {
        let (text, scan) = match result {
            Ok(ok) => ok,
            Err(e) => {
                let msg = format!("{rel}: skipped: {e}");
                warn!("{msg}");
                index.warnings.push(msg);
                continue;
            }
        };
        index.files.push(rel.clone());
        index.sources.insert(rel.clone(), text);
        index.warnings.extend(scan.warnings);
        for mut thm in scan.theorems {
            if !seen_ids.insert(thm.id.clone()) {
                let base = thm.id.clone();
                let mut n = 2;
                while !seen_ids.insert(format!("{base}~{n}")) {
                    n += 1;
                }
                thm.id = format!("{base}~{n}");
            }
            index.theorems.push(thm);
        }
        for def in scan.definitions {
            let pos = index.definitions.len();
            if let Some(prev) = index.name_map.insert(def.name.clone(), pos) {
                let prev = &index.definitions[prev];
                let msg = format!(
                    "{}: {} shadows the definition at {}:{}",
                    def.file_path, def.name, prev.file_path, prev.offset
                );
                debug!("{msg}");
                index.warnings.push(msg);
            }
            index.definitions.push(def);
        }
    }
    Ok(index)
}

#[derive(Debug, thiserror::Error)]
enum FileError {
    #[error("{0}")]
    Io(std::io::Error),
    #[error("{0}")]
    Lex(LexError),
}

/// Matching files in dependency order: `_CoqProject` order first, the rest
/// lexicographically.
fn ordered_files(root: &Path, include_globs: &[String]) -> Result<Vec<String>, ScanError> {
    let mut builder = GlobSetBuilder::new();
    let globs: Vec<String> = if include_globs.is_empty() {
        vec!["**/*.v".to_string()]
    } else {
        include_globs.to_vec()
    };
    for g in &globs {
        let glob = Glob::new(g).map_err(|e| ScanError::BadGlob {
            glob: g.clone(),
            message: e.to_string(),
        })?;
        builder.add(glob);
    }
    let set = builder.build().map_err(|e| ScanError::BadGlob {
        glob: globs.join(","),
        message: e.to_string(),
    })?;

    let mut matched: Vec<String> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| {
            let rel: PathBuf = e.path().strip_prefix(root).ok()?.to_path_buf();
            let rel = normalize_rel(&rel.to_string_lossy());
            (rel.ends_with(".v") && set.is_match(&rel)).then_some(rel)
        })
        .collect();
    matched.sort();

    let mut ordered = Vec::with_capacity(matched.len());
    if let Some(project) = read_coq_project(root) {
        for f in project.files {
            if let Some(pos) = matched.iter().position(|m| *m == f) {
                ordered.push(matched.remove(pos));
            }
        }
    }
    ordered.extend(matched);
    Ok(ordered)
}

#[derive(Debug, Default)]
struct FileScan {
    theorems: Vec<TheoremRecord>,
    definitions: Vec<DefinitionRecord>,
    warnings: Vec<String>,
}

/// Vernacular modifiers that may precede a definition keyword.
const MODIFIERS: &[&str] = &[
    "Local",
    "Global",
    "Program",
    "Polymorphic",
    "Monomorphic",
    "Private",
    "Cumulative",
    "NonCumulative",
];

fn leading_word(text: &str) -> &str {
    let end = text
        .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '\''))
        .unwrap_or(text.len());
    &text[..end]
}

/// Drops attributes and modifiers, returning the text from the keyword on.
fn strip_modifiers(text: &str) -> &str {
    let mut rest = text.trim_start();
    loop {
        if rest.starts_with("#[") {
            match rest.find(']') {
                Some(end) => rest = rest[end + 1..].trim_start(),
                None => return rest,
            }
            continue;
        }
        let word = leading_word(rest);
        if MODIFIERS.contains(&word) {
            rest = rest[word.len()..].trim_start();
            continue;
        }
        return rest;
    }
}

fn has_body(sentence: &str) -> bool {
    strip_comments(sentence).contains(":=")
}

fn is_declaration(sentence: &Sentence) -> bool {
    let core = strip_modifiers(sentence.core());
    let word = leading_word(core);
    TheoremKind::from_keyword(word).is_some() || DefinitionKind::from_keyword(word).is_some()
}

enum RegionEnd {
    Closed { end: usize },
    Aborted { end: usize },
    Interrupted { at: usize },
    Eof,
}

/// Finds the end of the proof region that starts at sentence `from`.
fn find_proof_end(sentences: &[Sentence], from: usize) -> RegionEnd {
    for (j, s) in sentences.iter().enumerate().skip(from) {
        if ProofEnd::parse(&s.text).is_some() {
            return RegionEnd::Closed { end: j };
        }
        let core = s.core();
        if core.starts_with("Abort") && leading_word(core) == "Abort" {
            return RegionEnd::Aborted { end: j };
        }
        if is_declaration(s) {
            return RegionEnd::Interrupted { at: j };
        }
    }
    RegionEnd::Eof
}

fn scan_file(project: &str, rel: &str, text: &str) -> Result<FileScan, LexError> {
    let sentences = split_sentences(text)?;
    let mut out = FileScan::default();
    let mut i = 0;
    while i < sentences.len() {
        let s = &sentences[i];
        if s.text.as_str() != s.core() {
            i += 1;
            continue;
        }
        let word = leading_word(&s.text);
        if let Some(kind) = TheoremKind::from_keyword(word) {
            i = scan_theorem(project, rel, text, &sentences, i, kind, &mut out);
            continue;
        }
        let stripped = strip_modifiers(&s.text);
        if let Some(kind) = DefinitionKind::from_keyword(leading_word(stripped)) {
            i = scan_definition(rel, text, &sentences, i, kind, &mut out);
            continue;
        }
        i += 1;
    }
    Ok(out)
}

fn scan_theorem(
    project: &str,
    rel: &str,
    text: &str,
    sentences: &[Sentence],
    i: usize,
    kind: TheoremKind,
    out: &mut FileScan,
) -> usize {
    let s = &sentences[i];
    let Some(name) = declared_name(&s.text) else {
        out.warnings.push(format!("{rel}:{}: unnamed {kind:?}", s.range.start));
        return i + 1;
    };
    if has_body(&s.text) {
        return i + 1;
    }
    match find_proof_end(sentences, i + 1) {
        RegionEnd::Closed { end } => {
            out.theorems.push(TheoremRecord {
                id: format!("{project}/{rel}/{name}"),
                name,
                kind,
                statement_text: s.text.clone(),
                proof_sentences: sentences[i + 1..=end].iter().map(|p| p.text.clone()).collect(),
                file_path: rel.to_string(),
                decl_offset: s.range.start,
                proof_end_offset: sentences[end].range.end,
                preceding_span: 0..s.range.start,
            });
            debug_assert!(text.is_char_boundary(s.range.start));
            end + 1
        }
        RegionEnd::Aborted { end } => end + 1,
        RegionEnd::Interrupted { at } => {
            out.warnings.push(format!(
                "{rel}:{}: proof of {name} interrupted by a declaration",
                s.range.start
            ));
            at
        }
        RegionEnd::Eof => {
            out.warnings.push(format!(
                "{rel}:{}: proof of {name} is not closed",
                s.range.start
            ));
            sentences.len()
        }
    }
}

fn scan_definition(
    rel: &str,
    text: &str,
    sentences: &[Sentence],
    i: usize,
    kind: DefinitionKind,
    out: &mut FileScan,
) -> usize {
    let s = &sentences[i];
    let mut end_sentence = i;
    let interactive = matches!(
        kind,
        DefinitionKind::Definition
            | DefinitionKind::Instance
            | DefinitionKind::Fixpoint
            | DefinitionKind::CoFixpoint
    ) && (!has_body(&s.text)
        || sentences.get(i + 1).is_some_and(|n| is_proof_opener(&n.text)));
    if interactive {
        if let RegionEnd::Closed { end } = find_proof_end(sentences, i + 1) {
            end_sentence = end;
        }
    }
    let body_range = s.range.start..sentences[end_sentence].range.end;
    let body = &text[body_range];
    let names = definition_names(kind, strip_modifiers(&s.text));
    if names.is_empty() {
        out.warnings
            .push(format!("{rel}:{}: could not name {kind:?}", s.range.start));
    }
    let idents = unique_identifiers(body);
    for name in names {
        out.definitions.push(DefinitionRecord {
            referenced_names: idents.iter().filter(|w| **w != name).cloned().collect(),
            name,
            kind,
            body_text: body.to_string(),
            file_path: rel.to_string(),
            offset: s.range.start,
        });
    }
    end_sentence + 1
}

/// Words of comment-free text, keywords included, strings skipped.
fn words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut in_string = false;
    let mut start = None;
    for (i, c) in text.char_indices() {
        if in_string {
            if c == '"' {
                in_string = false;
            }
            continue;
        }
        let word_char = c.is_alphanumeric() || c == '_' || c == '\'';
        match (word_char, start) {
            (true, None) => start = Some(i),
            (false, Some(st)) => {
                out.push(&text[st..i]);
                start = None;
            }
            _ => {}
        }
        if c == '"' {
            in_string = true;
        }
    }
    if let Some(st) = start {
        out.push(&text[st..]);
    }
    out
}

/// Names introduced by a definition sentence (keyword first, modifiers
/// already stripped).
fn definition_names(kind: DefinitionKind, sentence: &str) -> Vec<String> {
    let cleaned = strip_comments(sentence);
    let keyword = leading_word(&cleaned);
    let rest = cleaned[keyword.len()..].trim_start();
    match kind {
        DefinitionKind::Variable | DefinitionKind::Hypothesis | DefinitionKind::Axiom => {
            binder_names(rest)
        }
        DefinitionKind::Notation => {
            if let Some(open) = rest.strip_prefix('"') {
                open.split('"')
                    .next()
                    .map(|n| vec![n.to_string()])
                    .unwrap_or_default()
            } else {
                let w = leading_word(rest);
                if w.is_empty() { vec![] } else { vec![w.to_string()] }
            }
        }
        DefinitionKind::Inductive | DefinitionKind::Fixpoint | DefinitionKind::CoFixpoint => {
            mutual_names(rest)
        }
        _ => declared_name(&cleaned).into_iter().collect(),
    }
}

/// `x y : T` or `(x : T) (y z : U)`.
fn binder_names(rest: &str) -> Vec<String> {
    let ident = |w: &&str| w.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_');
    if rest.starts_with('(') {
        let mut names = Vec::new();
        let mut depth = 0usize;
        let mut group_start = 0;
        for (i, c) in rest.char_indices() {
            match c {
                '(' => {
                    if depth == 0 {
                        group_start = i + 1;
                    }
                    depth += 1;
                }
                ')' => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        let group = &rest[group_start..i];
                        let head = group.split(':').next().unwrap_or_default();
                        names.extend(head.split_whitespace().filter(ident).map(String::from));
                    }
                }
                _ => {}
            }
        }
        names
    } else {
        let head = rest.split(':').next().unwrap_or_default();
        head.split_whitespace()
            .filter(ident)
            .map(String::from)
            .collect()
    }
}

/// The first name plus every name introduced by a `with` that is not part
/// of a `match`.
fn mutual_names(rest: &str) -> Vec<String> {
    let ws = words(rest);
    let mut names = Vec::new();
    if let Some(first) = ws.first() {
        names.push(first.to_string());
    }
    let mut depth = 0usize;
    for (k, w) in ws.iter().enumerate() {
        match *w {
            "match" => depth += 1,
            "end" => depth = depth.saturating_sub(1),
            "with" if depth == 0 => {
                if let Some(next) = ws.get(k + 1) {
                    names.push(next.to_string());
                }
            }
            _ => {}
        }
    }
    let mut seen = BTreeMap::new();
    names.retain(|n| seen.insert(n.clone(), ()).is_none());
    names
}
