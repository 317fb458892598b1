//! Pieces shared by the descriptor and detector training loops.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentation::RoiMask;
use crate::error::{Error, Result};
use crate::raster::Image;

/// Independent random streams: spatial/photometric augmentation, point
/// sampling (also network initialisation and data order), RANSAC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub augmentation: u64,
    pub sampling: u64,
    pub ransac: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            augmentation: 1,
            sampling: 2,
            ransac: 3,
        }
    }
}

/// One training image with its region of interest.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainImage {
    pub name: String,
    pub image: Image,
    pub roi: RoiMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: usize,
        loss: f64,
        /// Anchors (descriptor) or supervised pixels (detector).
        count: usize,
    },
    Epoch {
        epoch: usize,
        mean_loss: f64,
    },
}

impl LogRecord {
    pub fn loss(&self) -> f64 {
        match self {
            LogRecord::Step { loss, .. } => *loss,
            LogRecord::Epoch { mean_loss, .. } => *mean_loss,
        }
    }
}

/// Per-epoch means from a log.
pub fn epoch_losses(log: &[LogRecord]) -> Vec<f64> {
    log.iter()
        .filter_map(|r| match r {
            LogRecord::Epoch { mean_loss, .. } => Some(*mean_loss),
            _ => None,
        })
        .collect()
}

/// Where a training loop persists its state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainOutput {
    pub dir: PathBuf,
    /// Checkpoint interval in optimizer steps; 0 writes only the final state.
    pub checkpoint_every: usize,
}

impl TrainOutput {
    pub fn new(dir: impl Into<PathBuf>, checkpoint_every: usize) -> Self {
        Self {
            dir: dir.into(),
            checkpoint_every,
        }
    }

    pub fn due(&self, step: usize) -> bool {
        self.checkpoint_every > 0 && step % self.checkpoint_every == 0
    }
}

/// Append-only JSON-lines writer.
pub(crate) struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub(crate) struct LogSink {
    records: Vec<LogRecord>,
    file: Option<JsonlWriter>,
}

impl LogSink {
    pub fn new(file: Option<JsonlWriter>) -> Self {
        Self {
            records: Vec::new(),
            file,
        }
    }

    pub fn push(&mut self, r: LogRecord) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            f.write(&r)?;
        }
        self.records.push(r);
        Ok(())
    }

    pub fn into_records(self) -> Vec<LogRecord> {
        self.records
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub(crate) fn check_dataset(data: &[TrainImage]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for d in data {
        if d.roi.size() != d.image.size() {
            return Err(Error::Shape(format!(
                "{}: RoI does not match image size",
                d.name
            )));
        }
    }
    Ok(())
}
