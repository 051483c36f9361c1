//! Append-only result store: one JSON record per line in `records.jsonl`.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::CliError;

pub const ARTIFACT_VERSION: &str = concat!("roughpam-", env!("CARGO_PKG_VERSION"), "/1");
pub const STORE_FILE: &str = "records.jsonl";

/// Files produced by one command. Text files are kept verbatim; binary
/// files are referenced by digest in the record payload.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(|v| v.as_slice())
    }

    pub fn payload(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(k, v)| {
                let s = match std::str::from_utf8(v) {
                    Ok(t) if !k.ends_with(".bin") => t.to_string(),
                    _ => format!("sha256:{}", hex(&Sha256::digest(v))),
                };
                (k.clone(), s)
            })
            .collect()
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub fingerprint: String,
    pub command: String,
    /// Seconds since the Unix epoch; not part of the payload hash.
    pub timestamp: u64,
    pub artifact_version: String,
    pub payload_hash: String,
    pub payload: BTreeMap<String, String>,
}

impl ResultRecord {
    pub fn new(fingerprint: &str, command: &str, artifacts: &Artifacts) -> Self {
        let payload = artifacts.payload();
        ResultRecord {
            fingerprint: fingerprint.to_string(),
            command: command.to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            artifact_version: ARTIFACT_VERSION.to_string(),
            payload_hash: payload_hash(&payload),
            payload,
        }
    }
}

pub fn payload_hash(payload: &BTreeMap<String, String>) -> String {
    let canon = serde_json::to_string(payload).expect("json");
    hex(&Sha256::digest(canon.as_bytes()))
}

pub struct ResultStore {
    path: PathBuf,
}

impl ResultStore {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(ResultStore {
            path: dir.join(STORE_FILE),
        })
    }

    pub fn records(&self) -> Result<Vec<ResultRecord>, CliError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let f = File::open(&self.path)?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ResultRecord = serde_json::from_str(&line)
                .map_err(|e| CliError::Integrity(format!("{} line {}: {e}", self.path.display(), i + 1)))?;
            out.push(r);
        }
        Ok(out)
    }

    /// Appends `record`. A stored record with the same fingerprint and
    /// command but a different payload is an integrity error; nothing is
    /// written in that case.
    pub fn append(&self, record: &ResultRecord) -> Result<(), CliError> {
        for r in self.records()? {
            if r.fingerprint == record.fingerprint && r.command == record.command && r.payload_hash != record.payload_hash {
                return Err(CliError::Integrity(format!(
                    "fingerprint {} ({}) already stored with payload {}, new payload {}",
                    record.fingerprint, record.command, r.payload_hash, record.payload_hash
                )));
            }
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let line = serde_json::to_string(record).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(f, "{line}")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arts(s: &str) -> Artifacts {
        let mut a = Artifacts::default();
        a.add("x.csv", s.as_bytes().to_vec());
        a.add("y.bin", vec![0, 159, 146, 150]);
        a
    }

    #[test]
    fn identical_replay_appends() {
        let d = tempfile::tempdir().unwrap();
        let s = ResultStore::open(d.path()).unwrap();
        s.append(&ResultRecord::new("f", "solve", &arts("a"))).unwrap();
        s.append(&ResultRecord::new("f", "solve", &arts("a"))).unwrap();
        s.append(&ResultRecord::new("f", "moments", &arts("b"))).unwrap();
        assert_eq!(s.records().unwrap().len(), 3);
    }

    #[test]
    fn collision_is_integrity_error() {
        let d = tempfile::tempdir().unwrap();
        let s = ResultStore::open(d.path()).unwrap();
        s.append(&ResultRecord::new("f", "solve", &arts("a"))).unwrap();
        let e = s.append(&ResultRecord::new("f", "solve", &arts("b"))).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert_eq!(s.records().unwrap().len(), 1);
    }

    #[test]
    fn binary_files_are_digested() {
        let p = arts("a").payload();
        assert!(p["y.bin"].starts_with("sha256:"));
        assert_eq!(p["x.csv"], "a");
    }
}
