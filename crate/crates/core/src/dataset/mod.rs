//! Recording layout of the public DAVIS datasets, plus a synthetic generator.
//!
//! A recording directory holds `events.txt` (`t x y p` per line, `t` in
//! decimal seconds), `images.txt` (`t path` per line) and the referenced
//! grayscale frames.

mod events;
mod frames;
mod merge;
pub mod synth;
mod trajectory;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::event::{Event, Keyframe, SensorGeometry};

pub use events::{format_seconds, parse_seconds, read_events, write_events, EventReader};
pub use frames::{read_frames, read_image, read_pgm, write_images_index, write_pgm};
pub use merge::{merge_streams, MergeStreams, StreamItem};
pub use trajectory::{read_trajectories, write_trajectories, TrajectoryWriter};

pub const EVENTS_FILE: &str = "events.txt";
pub const IMAGES_FILE: &str = "images.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}:{line}: timestamp {t} us precedes {prev} us", path.display())]
    Order {
        path: PathBuf,
        line: usize,
        prev: u64,
        t: u64,
    },
    #[error("{}: unsupported image: {detail}", path.display())]
    UnsupportedImageFormat { path: PathBuf, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordingHeader {
    pub width: usize,
    pub height: usize,
    pub event_count: usize,
    pub frame_count: usize,
}

impl RecordingHeader {
    pub fn geometry(&self) -> SensorGeometry {
        SensorGeometry::new(self.width, self.height)
    }
}

/// A fully loaded recording directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub header: RecordingHeader,
    pub events: Vec<Event>,
    pub frames: Vec<Keyframe>,
}

impl Recording {
    /// Loads `events.txt` and, when present, `images.txt` from `dir`.
    ///
    /// The sensor geometry comes from the first frame, or DAVIS240 when the
    /// recording has no frames.
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let events_path = dir.join(EVENTS_FILE);
        if !events_path.is_file() {
            return Err(DatasetError::io(
                &events_path,
                io::Error::new(io::ErrorKind::NotFound, "file not found"),
            ));
        }
        let index = dir.join(IMAGES_FILE);
        let frames = if index.is_file() {
            read_frames(&index, None)?
        } else {
            Vec::new()
        };
        let geometry = frames
            .first()
            .map(|f| f.geometry())
            .unwrap_or(SensorGeometry::DAVIS240);
        let events = read_events(&events_path, geometry)?;
        Ok(Recording::new(geometry, events, frames))
    }

    pub fn new(geometry: SensorGeometry, events: Vec<Event>, frames: Vec<Keyframe>) -> Self {
        Recording {
            header: RecordingHeader {
                width: geometry.width,
                height: geometry.height,
                event_count: events.len(),
                frame_count: frames.len(),
            },
            events,
            frames,
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.header.geometry()
    }
}
