//! JSONL metrics: one object per line, written and flushed per record.
//!
//! ```json
//! {"step":12,"loss":0.53,"wall_ms":0,"perplexity":1.7}
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub wall_ms: u64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(step: u64, loss: f64) -> Self {
        MetricsRecord {
            step,
            loss,
            wall_ms: 0,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.extra.get(key).copied()
    }
}

pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    last_step: Option<u64>,
    started: Option<Instant>,
}

impl MetricsWriter {
    /// Truncates `path`. With `wall_time` off every `wall_ms` is 0, which
    /// keeps reruns byte-identical.
    pub fn create(path: &Path, wall_time: bool) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
            last_step: None,
            started: wall_time.then(Instant::now),
        })
    }

    /// Rejects non-increasing steps and non-finite values.
    pub fn write(&mut self, mut rec: MetricsRecord) -> Result<()> {
        if let Some(last) = self.last_step {
            if rec.step <= last {
                return Err(Error::Metrics(format!("step {} does not follow step {last}", rec.step)));
            }
        }
        if !rec.loss.is_finite() {
            return Err(Error::Metrics(format!("non-finite loss at step {}", rec.step)));
        }
        if let Some((k, _)) = rec.extra.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Metrics(format!("non-finite {k} at step {}", rec.step)));
        }
        if let Some(t) = self.started {
            rec.wall_ms = t.elapsed().as_millis() as u64;
        }
        let mut line = serde_json::to_string(&rec)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.last_step = Some(rec.step);
        Ok(())
    }
}

/// Parses every complete line; a trailing partial line from an interrupted
/// writer is ignored.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Metrics(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut w = MetricsWriter::create(&p, false).unwrap();
        w.write(MetricsRecord::new(1, 0.5).with("perplexity", 1.6)).unwrap();
        w.write(MetricsRecord::new(3, 0.25)).unwrap();
        let back = read_metrics(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].get("perplexity"), Some(1.6));
        assert_eq!(back[1].wall_ms, 0);
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"step":1,"loss":0.5,"wall_ms":0,"perplexity":1.6}"#);
    }

    #[test]
    fn rejects_repeated_step_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(&dir.path().join("m.jsonl"), false).unwrap();
        w.write(MetricsRecord::new(2, 0.5)).unwrap();
        assert!(w.write(MetricsRecord::new(2, 0.4)).is_err());
        assert!(w.write(MetricsRecord::new(3, f64::NAN)).is_err());
        assert!(w.write(MetricsRecord::new(3, 1.0).with("g", f64::INFINITY)).is_err());
        w.write(MetricsRecord::new(3, 0.4)).unwrap();
    }

    #[test]
    fn partial_trailing_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "{\"step\":1,\"loss\":1.0,\"wall_ms\":0}\n{\"step\":2,\"lo").unwrap();
        assert_eq!(read_metrics(&p).unwrap().len(), 1);
    }
}
