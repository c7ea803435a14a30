use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One line of a metrics file. Missing or non-finite values are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: u64,
    pub frames_or_epochs: u64,
    pub wall_seconds: Option<f64>,
    pub metrics: BTreeMap<String, Option<f64>>,
}

impl MetricRecord {
    pub fn new(iteration: u64, frames_or_epochs: u64) -> Self {
        Self { iteration, frames_or_epochs, wall_seconds: None, metrics: BTreeMap::new() }
    }

    pub fn set(&mut self, name: &str, value: f64) -> &mut Self {
        self.metrics.insert(name.to_string(), value.is_finite().then_some(value));
        self
    }

    pub fn set_opt(&mut self, name: &str, value: Option<f64>) -> &mut Self {
        self.metrics.insert(name.to_string(), value.filter(|v| v.is_finite()));
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }
}

/// JSONL sink; each record is flushed before `append` returns.
pub struct MetricsWriter {
    out: BufWriter<File>,
    last: Option<u64>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        Ok(Self { out: BufWriter::new(File::create(path)?), last: None })
    }

    pub fn append(&mut self, record: &MetricRecord) -> Result<(), HarnessError> {
        if self.last.is_some_and(|l| record.iteration <= l) {
            return Err(HarnessError::Metrics(format!("iteration {} does not increase past {}", record.iteration, self.last.unwrap_or(0))));
        }
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.last = Some(record.iteration);
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, HarnessError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_records_round_trip_with_nulls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        let mut recs = Vec::new();
        for i in 1..=3 {
            let mut r = MetricRecord::new(i, i * 100);
            r.set("loss", 0.1 * i as f64 + 1e-17).set_opt("success_rate", None).set("bad", f64::NAN);
            w.append(&r).unwrap();
            r.metrics.insert("bad".into(), None);
            recs.push(r);
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains(r#""success_rate":null"#));
        assert_eq!(read_metrics(&path).unwrap(), recs);
        assert!(w.append(&MetricRecord::new(3, 0)).is_err());
    }
}
