//! Experiment harness for rrstream: synthetic traffic datasets, accuracy
//! and leakage reports, throughput benchmarks and end-to-end runs.

pub mod accuracy;
pub mod bench;
pub mod dataset;
pub mod e2e;
pub mod leakage;

use std::fs;
use std::path::Path;

use rrstream_net::QueryAnnounce;
use serde::{Deserialize, Serialize};

/// A query plus the servers that collect answers to it, as distributed to
/// data owners out of band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFile {
    pub query: QueryAnnounce,
    pub servers: Vec<String>,
}

impl QueryFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: QueryFile = serde_json::from_str(&text)?;
        file.query.validate()?;
        if file.servers.len() < 2 {
            anyhow::bail!("a query file must list at least 2 servers");
        }
        Ok(file)
    }
}

/// Parses `"1,0,1"` or `"101"` into bits. Anything but 0 and 1 is refused.
pub fn parse_bits(text: &str) -> Result<Vec<bool>, String> {
    let parts: Vec<&str> = if text.contains(',') {
        text.split(',').map(str::trim).collect()
    } else {
        text.trim().split("").filter(|s| !s.is_empty()).collect()
    };
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| match *p {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("position {i}: {other:?} is not 0 or 1")),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_parsing() {
        assert_eq!(parse_bits("1,0, 1").unwrap(), vec![true, false, true]);
        assert_eq!(parse_bits("01").unwrap(), vec![false, true]);
        assert!(parse_bits("0,2").is_err());
        assert!(parse_bits("0,-1").is_err());
    }

    #[test]
    fn query_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.json");
        let file = QueryFile {
            query: QueryAnnounce {
                query_id: 1,
                attribute_labels: vec!["a".into()],
                rows: 8,
                message_bytes: 1,
                p: 0.5,
                q: 0.5,
                epoch_ms: 500,
                analyst_signature: vec![],
            },
            servers: vec!["127.0.0.1:1".into(), "127.0.0.1:2".into()],
        };
        fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert_eq!(QueryFile::load(&path).unwrap(), file);
    }
}
