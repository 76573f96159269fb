use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatTranscript, GatewayError, GenerationParams};
use crate::text::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub request_snapshot: Value,
    pub response: String,
    pub recorded_at: String,
}

impl CassetteEntry {
    pub fn new(
        key: &str,
        transcript: &ChatTranscript,
        params: &GenerationParams,
        response: &str,
    ) -> Self {
        Self {
            key: key.to_string(),
            request_snapshot: json!({ "transcript": transcript, "params": params }),
            response: response.to_string(),
            recorded_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        }
    }

    /// The keyed part of the snapshot, for collision checks.
    fn keyed_request(&self) -> Option<Value> {
        let model = self.request_snapshot.pointer("/params/model_id")?.as_str()?;
        let transcript: ChatTranscript =
            serde_json::from_value(self.request_snapshot.get("transcript")?.clone()).ok()?;
        Some(normalized_request(model, &transcript))
    }
}

fn normalized_request(model_id: &str, transcript: &ChatTranscript) -> Value {
    let messages: Vec<Value> = transcript
        .messages
        .iter()
        .map(|m| json!([m.role.as_str(), m.content.trim_end()]))
        .collect();
    json!({ "model": model_id, "messages": messages })
}

/// Content digest of a request. Trailing whitespace of each message does not
/// affect the key; stage tags and sampling parameters are not part of it.
pub fn transcript_key(model_id: &str, transcript: &ChatTranscript) -> String {
    sha256_hex(normalized_request(model_id, transcript).to_string())
}

enum Entries {
    Frozen(HashMap<String, CassetteEntry>),
    Appending(Mutex<(HashMap<String, CassetteEntry>, File)>),
}

/// A JSON Lines log of recorded exchanges.
pub struct Cassette {
    path: PathBuf,
    entries: Entries,
}

impl Cassette {
    /// Loads a cassette for replay. The entries are never modified.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self {
            path: path.to_path_buf(),
            entries: Entries::Frozen(read_entries(path)?),
        })
    }

    /// Opens (creating if needed) a cassette that accepts new entries.
    pub fn open_append(path: &Path) -> Result<Self, GatewayError> {
        let io_err = |source| GatewayError::Cassette {
            path: path.display().to_string(),
            source,
        };
        let existing = if path.exists() {
            read_entries(path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: Entries::Appending(Mutex::new((existing, file))),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<CassetteEntry> {
        match &self.entries {
            Entries::Frozen(map) => map.get(key).cloned(),
            Entries::Appending(state) => state.lock().expect("cassette lock").0.get(key).cloned(),
        }
    }

    pub fn len(&self) -> usize {
        match &self.entries {
            Entries::Frozen(map) => map.len(),
            Entries::Appending(state) => state.lock().expect("cassette lock").0.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one entry as a single line. An entry whose key is already
    /// present is accepted only if it records the same request.
    pub fn append(&self, entry: CassetteEntry) -> Result<(), GatewayError> {
        let Entries::Appending(state) = &self.entries else {
            return Err(GatewayError::InvalidTranscript(
                "cassette was opened read-only".into(),
            ));
        };
        let mut guard = state.lock().expect("cassette lock");
        let (map, file) = &mut *guard;
        if let Some(existing) = map.get(&entry.key) {
            if existing.keyed_request() != entry.keyed_request() {
                return Err(GatewayError::KeyCollision { key: entry.key });
            }
            return Ok(());
        }
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|()| file.flush())
            .map_err(|source| GatewayError::Cassette {
                path: self.path.display().to_string(),
                source,
            })?;
        map.insert(entry.key.clone(), entry);
        Ok(())
    }
}

fn read_entries(path: &Path) -> Result<HashMap<String, CassetteEntry>, GatewayError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| GatewayError::Cassette {
        path: display.clone(),
        source,
    })?;
    let mut map = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| GatewayError::Cassette {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry =
            serde_json::from_str(&line).map_err(|e| GatewayError::CassetteFormat {
                path: display.clone(),
                line: n + 1,
                message: e.to_string(),
            })?;
        if let Some(previous) = map.get(&entry.key) {
            let previous: &CassetteEntry = previous;
            if previous.keyed_request() != entry.keyed_request() {
                return Err(GatewayError::KeyCollision { key: entry.key });
            }
            continue;
        }
        map.insert(entry.key.clone(), entry);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StageTag;

    fn transcript(user: &str) -> ChatTranscript {
        let mut t = ChatTranscript::with_system("sys");
        t.push_user(user, StageTag::NlProof);
        t
    }

    #[test]
    fn trailing_whitespace_does_not_change_the_key() {
        assert_eq!(
            transcript_key("m", &transcript("hello")),
            transcript_key("m", &transcript("hello \n\n"))
        );
        assert_ne!(
            transcript_key("m", &transcript("hello")),
            transcript_key("m", &transcript(" hello"))
        );
        assert_ne!(
            transcript_key("m", &transcript("hello")),
            transcript_key("n", &transcript("hello"))
        );
    }

    #[test]
    fn forged_collision_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cassette = Cassette::open_append(&dir.path().join("c.jsonl")).unwrap();
        let params = GenerationParams::new("m");
        let key = transcript_key("m", &transcript("a"));
        cassette
            .append(CassetteEntry::new(&key, &transcript("a"), &params, "x"))
            .unwrap();
        cassette
            .append(CassetteEntry::new(&key, &transcript("a"), &params, "y"))
            .unwrap();
        assert_eq!(cassette.len(), 1);
        let forged = CassetteEntry::new(&key, &transcript("b"), &params, "z");
        assert!(matches!(
            cassette.append(forged),
            Err(GatewayError::KeyCollision { .. })
        ));
    }
}
