//! File formats: JSON / JSONL helpers and content hashing.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::env::{Question, WorldFile, WorldGraph};
use crate::error::{Error, Result};
use crate::policy::{Checkpoint, Policy};

/// One compact JSON document per line, each terminated by `\n`.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serialises"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Malformed(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&fs::read_to_string(path)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    fs::write(path, to_jsonl(items))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_world(path: &Path, graph: &WorldGraph) -> Result<()> {
    write_json(path, &graph.to_file())
}

pub fn load_world(path: &Path) -> Result<WorldGraph> {
    WorldGraph::from_file(read_json::<WorldFile>(path)?)
}

pub fn save_questions(path: &Path, questions: &[Question]) -> Result<()> {
    write_jsonl(path, questions)
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>> {
    read_jsonl(path)
}

pub fn save_policy(path: &Path, policy: &Policy) -> Result<()> {
    let mut s = Checkpoint::from_policy(policy).to_json();
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    Checkpoint::from_json(&fs::read_to_string(path)?)?.into_policy()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a policy's checkpoint serialisation.
pub fn policy_hash(policy: &Policy) -> String {
    sha256_hex(Checkpoint::from_policy(policy).to_json().as_bytes())
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
