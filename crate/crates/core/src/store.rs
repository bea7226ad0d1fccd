//! Embedded ordered store of timestamped model and function outputs.
//!
//! Records are keyed by (source, timestamp, sequence) in memory; when a data
//! directory is configured every insert is appended to one log file per
//! source as a line of the canonical JSON serialization, and logs are
//! replayed on open. Retention is capped per source by record count.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::VirtualTime;
use crate::output::OutputValue;
use crate::sensor::SampleKey;

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("no data yet for source `{0}`")]
    NoDataYet(String),
}

/// A stored output: one model or function result for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub source_id: String,
    pub sample_key: SampleKey,
    pub timestamp: VirtualTime,
    /// Monotone store sequence number, unique across all sources.
    pub store_seq: u64,
    pub payload: OutputValue,
}

pub struct DataStore {
    records: BTreeMap<String, BTreeMap<(VirtualTime, u64), StoredRecord>>,
    next_seq: u64,
    retention_per_source: usize,
    data_dir: Option<PathBuf>,
}

impl DataStore {
    pub fn new(retention_per_source: usize) -> DataStore {
        DataStore {
            records: BTreeMap::new(),
            next_seq: 0,
            retention_per_source: retention_per_source.max(1),
            data_dir: None,
        }
    }

    /// Open a store persisted under `dir`, replaying any existing logs.
    pub fn open(dir: PathBuf, retention_per_source: usize) -> std::io::Result<DataStore> {
        std::fs::create_dir_all(&dir)?;
        let mut store = DataStore::new(retention_per_source);
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "log"))
            .collect();
        entries.sort();
        let mut max_seq = 0;
        for path in entries {
            let file = std::fs::File::open(&path)?;
            for line in std::io::BufReader::new(file).lines() {
                let line = line?;
                if let Ok(record) = serde_json::from_str::<StoredRecord>(&line) {
                    max_seq = max_seq.max(record.store_seq + 1);
                    store
                        .records
                        .entry(record.source_id.clone())
                        .or_default()
                        .insert((record.timestamp, record.store_seq), record);
                }
            }
        }
        store.next_seq = max_seq;
        store.data_dir = Some(dir);
        Ok(store)
    }

    /// Register a source so reads distinguish "unknown" from "no data yet".
    pub fn register_source(&mut self, source_id: &str) {
        self.records.entry(source_id.to_string()).or_default();
    }

    pub fn remove_source(&mut self, source_id: &str) {
        self.records.remove(source_id);
    }

    pub fn sources(&self) -> Vec<String> {
        self.records.keys().cloned().collect()
    }

    pub fn put(
        &mut self,
        source_id: &str,
        sample_key: SampleKey,
        timestamp: VirtualTime,
        payload: OutputValue,
    ) -> StoredRecord {
        let record = StoredRecord {
            source_id: source_id.to_string(),
            sample_key,
            timestamp,
            store_seq: self.next_seq,
            payload,
        };
        self.next_seq += 1;
        if let Some(dir) = &self.data_dir {
            let path = dir.join(format!("{source_id}.log"));
            if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
                let _ = writeln!(f, "{}", serde_json::to_string(&record).expect("serializable"));
            }
        }
        let per_source = self.records.entry(source_id.to_string()).or_default();
        per_source.insert((timestamp, record.store_seq), record.clone());
        while per_source.len() > self.retention_per_source {
            let oldest = *per_source.keys().next().unwrap();
            per_source.remove(&oldest);
        }
        record
    }

    pub fn get_latest(&self, source_id: &str) -> Result<&StoredRecord, StoreError> {
        let per_source = self
            .records
            .get(source_id)
            .ok_or_else(|| StoreError::UnknownSource(source_id.to_string()))?;
        per_source
            .values()
            .next_back()
            .ok_or_else(|| StoreError::NoDataYet(source_id.to_string()))
    }

    /// Records with t0 <= timestamp <= t1, in (timestamp, seq) order.
    pub fn range(
        &self,
        source_id: &str,
        t0: VirtualTime,
        t1: VirtualTime,
    ) -> Result<Vec<&StoredRecord>, StoreError> {
        let per_source = self
            .records
            .get(source_id)
            .ok_or_else(|| StoreError::UnknownSource(source_id.to_string()))?;
        Ok(per_source
            .range((t0, 0)..=(t1, u64::MAX))
            .map(|(_, r)| r)
            .collect())
    }

    pub fn count(&self, source_id: &str) -> usize {
        self.records.get(source_id).map(|m| m.len()).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(seq: u64) -> SampleKey {
        SampleKey {
            sensor_id: "cam0".to_string(),
            seq,
        }
    }

    #[test]
    fn put_then_latest_is_bit_exact() {
        let mut store = DataStore::new(100);
        store.register_source("f");
        let payload = OutputValue::Detections(crate::output::synth_detections(&key(3)));
        store.put("f", key(3), VirtualTime(10), payload.clone());
        let rec = store.get_latest("f").unwrap();
        assert_eq!(rec.payload, payload);
        // Round trip through the canonical serialization.
        let text = serde_json::to_string(rec).unwrap();
        let back: StoredRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(&back, rec);
    }

    #[test]
    fn empty_range_is_empty() {
        let mut store = DataStore::new(100);
        store.register_source("f");
        store.put("f", key(1), VirtualTime(100), OutputValue::Count(1));
        assert!(store.range("f", VirtualTime(200), VirtualTime(300)).unwrap().is_empty());
    }

    #[test]
    fn range_reads_are_ordered_and_inclusive() {
        let mut store = DataStore::new(1000);
        store.register_source("f");
        for i in 0..100u64 {
            store.put("f", key(i), VirtualTime(i * 10), OutputValue::Count(i));
        }
        let hits = store.range("f", VirtualTime(300), VirtualTime(690)).unwrap();
        assert_eq!(hits.len(), 40);
        assert!(hits.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert_eq!(hits[0].timestamp, VirtualTime(300));
        assert_eq!(hits.last().unwrap().timestamp, VirtualTime(690));
    }

    #[test]
    fn unknown_source_vs_no_data() {
        let mut store = DataStore::new(10);
        store.register_source("known");
        assert_eq!(
            store.get_latest("missing"),
            Err(StoreError::UnknownSource("missing".to_string()))
        );
        assert_eq!(
            store.get_latest("known"),
            Err(StoreError::NoDataYet("known".to_string()))
        );
    }

    #[test]
    fn sequence_numbers_strictly_increase() {
        let mut store = DataStore::new(10);
        store.register_source("a");
        store.register_source("b");
        let r1 = store.put("a", key(1), VirtualTime(5), OutputValue::Count(0));
        let r2 = store.put("b", key(1), VirtualTime(5), OutputValue::Count(0));
        let r3 = store.put("a", key(2), VirtualTime(6), OutputValue::Count(0));
        assert!(r1.store_seq < r2.store_seq && r2.store_seq < r3.store_seq);
    }

    #[test]
    fn retention_caps_record_count() {
        let mut store = DataStore::new(5);
        store.register_source("f");
        for i in 0..20u64 {
            store.put("f", key(i), VirtualTime(i), OutputValue::Count(i));
        }
        assert_eq!(store.count("f"), 5);
        assert_eq!(store.get_latest("f").unwrap().sample_key.seq, 19);
    }

    #[test]
    fn persistence_replays_on_open() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = DataStore::open(dir.path().to_path_buf(), 100).unwrap();
            store.register_source("f");
            store.put("f", key(1), VirtualTime(10), OutputValue::Count(7));
            store.put("f", key(2), VirtualTime(20), OutputValue::Count(8));
        }
        let store = DataStore::open(dir.path().to_path_buf(), 100).unwrap();
        let rec = store.get_latest("f").unwrap();
        assert_eq!(rec.payload, OutputValue::Count(8));
        assert_eq!(store.count("f"), 2);
    }
}
