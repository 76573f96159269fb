//! Background context for one theorem: the definitions its statement refers
//! to (followed transitively) and the script that precedes it.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use thiserror::Error;
use tracing::debug;

use crate::corpus::ident::{identifiers, unique_identifiers};
use crate::corpus::{CorpusIndex, DefinitionRecord, TheoremRecord};
use crate::text::estimate_tokens;

pub const DEFAULT_DEPTH_LIMIT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("budget of {budget} tokens cannot hold the statement ({needed} tokens)")]
    BudgetTooSmall { budget: usize, needed: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextBundle {
    pub type_definitions: Vec<String>,
    pub function_definitions: Vec<String>,
    pub script_so_far: String,
    pub token_estimate: usize,
    pub truncated: bool,
}

impl ContextBundle {
    /// Every definition text, types first, without repeats.
    pub fn definitions(&self) -> impl Iterator<Item = &str> {
        self.type_definitions
            .iter()
            .chain(&self.function_definitions)
            .map(String::as_str)
    }
}

/// Resolves `names` against the index and follows referenced names up to
/// `depth_limit` hops. The result is ordered dependencies-first; definitions
/// declared by the same sentence (mutual blocks) stay adjacent. Unknown
/// names are skipped.
pub fn resolve_dependencies<'a>(
    names: &[String],
    index: &'a CorpusIndex,
    depth_limit: usize,
) -> Vec<&'a DefinitionRecord> {
    resolve_indices(names, index, depth_limit)
        .into_iter()
        .map(|i| &index.definitions[i])
        .collect()
}

fn resolve_indices(names: &[String], index: &CorpusIndex, depth_limit: usize) -> Vec<usize> {
    // Definitions sharing a sentence form one group, keyed by position.
    let group_key = |i: usize| {
        let d = &index.definitions[i];
        (index.file_rank(&d.file_path), d.offset)
    };
    let mut groups: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (i, _) in index.definitions.iter().enumerate() {
        groups.entry(group_key(i)).or_default().push(i);
    }

    let mut selected: HashSet<usize> = HashSet::new();
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    let mut enqueue = |i: usize, depth: usize, queue: &mut VecDeque<(usize, usize)>| {
        for &member in &groups[&group_key(i)] {
            if selected.insert(member) {
                queue.push_back((member, depth));
            }
        }
    };
    for name in names {
        match index.name_map.get(name) {
            Some(&i) => enqueue(i, 0, &mut queue),
            None => debug!("unknown name {name} skipped"),
        }
    }
    while let Some((i, depth)) = queue.pop_front() {
        if depth >= depth_limit {
            continue;
        }
        for referenced in &index.definitions[i].referenced_names {
            if let Some(&j) = index.name_map.get(referenced) {
                enqueue(j, depth + 1, &mut queue);
            }
        }
    }

    topo_order(index, &selected, group_key)
}

/// Kahn's algorithm over groups; ties and cycles fall back to file order.
fn topo_order(
    index: &CorpusIndex,
    selected: &HashSet<usize>,
    group_key: impl Fn(usize) -> (usize, usize),
) -> Vec<usize> {
    let mut members: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for &i in selected {
        members.entry(group_key(i)).or_default().push(i);
    }
    for m in members.values_mut() {
        m.sort_unstable();
    }
    let mut deps: HashMap<(usize, usize), BTreeSet<(usize, usize)>> = HashMap::new();
    let mut users: HashMap<(usize, usize), BTreeSet<(usize, usize)>> = HashMap::new();
    for (&key, ms) in &members {
        let entry = deps.entry(key).or_default();
        for &i in ms {
            for r in &index.definitions[i].referenced_names {
                if let Some(&j) = index.name_map.get(r) {
                    let other = group_key(j);
                    if other != key && selected.contains(&j) {
                        entry.insert(other);
                        users.entry(other).or_default().insert(key);
                    }
                }
            }
        }
    }
    let mut remaining: BTreeSet<(usize, usize)> = members.keys().copied().collect();
    let mut ready: BTreeSet<(usize, usize)> = remaining
        .iter()
        .filter(|k| deps[k].is_empty())
        .copied()
        .collect();
    let mut order = Vec::new();
    while !remaining.is_empty() {
        let next = match ready.pop_first() {
            Some(k) => k,
            // A cycle through shadowed names: break it in file order.
            None => *remaining.first().expect("non-empty"),
        };
        remaining.remove(&next);
        order.extend(&members[&next]);
        if let Some(us) = users.get(&next) {
            for u in us {
                if let Some(d) = deps.get_mut(u) {
                    d.remove(&next);
                    if d.is_empty() && remaining.contains(u) {
                        ready.insert(*u);
                    }
                }
            }
        }
    }
    order
}

/// Definition texts for `thm`, dependencies first, each text once. These are
/// the untruncated definitions a standalone checker file needs.
pub fn statement_dependencies(
    thm: &TheoremRecord,
    index: &CorpusIndex,
    depth_limit: usize,
) -> Vec<String> {
    let names: Vec<String> = unique_identifiers(&thm.statement_text)
        .into_iter()
        .filter(|n| *n != thm.name)
        .collect();
    let mut seen = HashSet::new();
    resolve_dependencies(&names, index, depth_limit)
        .into_iter()
        .map(|d| d.body_text.clone())
        .filter(|body| seen.insert(body.clone()))
        .collect()
}

pub fn collect_context(
    thm: &TheoremRecord,
    index: &CorpusIndex,
    budget: usize,
) -> Result<ContextBundle, RetrievalError> {
    collect_context_with_depth(thm, index, budget, DEFAULT_DEPTH_LIMIT)
}

/// Builds the bundle within `budget` estimated tokens. The statement is
/// always counted; the script is head-truncated first, then function
/// definitions and finally type definitions are dropped from the tail.
pub fn collect_context_with_depth(
    thm: &TheoremRecord,
    index: &CorpusIndex,
    budget: usize,
    depth_limit: usize,
) -> Result<ContextBundle, RetrievalError> {
    let statement_cost = estimate_tokens(&thm.statement_text);
    if statement_cost > budget {
        return Err(RetrievalError::BudgetTooSmall {
            budget,
            needed: statement_cost,
        });
    }

    let names: Vec<String> = unique_identifiers(&thm.statement_text)
        .into_iter()
        .filter(|n| *n != thm.name)
        .collect();
    let mut seen = HashSet::new();
    let mut types = Vec::new();
    let mut funcs = Vec::new();
    for def in resolve_dependencies(&names, index, depth_limit) {
        if !seen.insert(def.body_text.as_str()) {
            continue;
        }
        if def.kind.is_type_like() {
            types.push(def.body_text.clone());
        } else {
            funcs.push(def.body_text.clone());
        }
    }

    let prefix = index.preceding_text(thm);
    let cost = |v: &[String]| v.iter().map(|s| estimate_tokens(s)).sum::<usize>();
    let mut used = statement_cost + cost(&types) + cost(&funcs);
    let mut truncated = false;

    while used > budget {
        truncated = true;
        if let Some(last) = funcs.pop() {
            used -= estimate_tokens(&last);
        } else if let Some(last) = types.pop() {
            used -= estimate_tokens(&last);
        } else {
            break;
        }
    }

    let script = fit_suffix(prefix, budget.saturating_sub(used));
    if script.len() < prefix.len() {
        truncated = true;
    }
    used += estimate_tokens(script);

    Ok(ContextBundle {
        type_definitions: types,
        function_definitions: funcs,
        script_so_far: script.to_string(),
        token_estimate: used,
        truncated,
    })
}

/// The longest suffix of `text` within `tokens`, advanced to a line start
/// when it had to be cut.
fn fit_suffix(text: &str, tokens: usize) -> &str {
    if estimate_tokens(text) <= tokens {
        return text;
    }
    let mut cut = text.len().saturating_sub(tokens * 4);
    while !text.is_char_boundary(cut) {
        cut += 1;
    }
    let rest = &text[cut..];
    match rest.find('\n') {
        Some(nl) if cut > 0 && !text[..cut].ends_with('\n') => &rest[nl + 1..],
        _ => rest,
    }
}

/// Identifiers of `text` that resolve in the index.
pub fn resolvable_names<'a>(text: &str, index: &'a CorpusIndex) -> Vec<&'a str> {
    identifiers(text)
        .into_iter()
        .filter_map(|n| index.lookup(&n).map(|d| d.name.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_fitting() {
        let text = "line one\nline two\nline three\n";
        assert_eq!(fit_suffix(text, 100), text);
        let s = fit_suffix(text, 4);
        assert!(text.ends_with(s));
        assert!(s.len() <= 16);
        assert!(s.is_empty() || text[..text.len() - s.len()].ends_with('\n'));
        assert_eq!(fit_suffix(text, 0), "");
    }
}
