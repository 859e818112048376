//! Single-threaded stream driver: detect on keyframes, match and track on events.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::Path;

use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::synth::{synth_scene, write_recording};
use crate::dataset::{merge_streams, DatasetError, Recording, StreamItem, TrajectoryWriter};
use crate::event::{Event, EventError, Keyframe, Sae, SensorGeometry, Timestamp};
use crate::harris::{detect_corners, FrameCorner, HarrisConfig, HarrisError};
use crate::matching::{EventCorner, Matcher};
use crate::tracker::{Tracker, UpdateRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harris(#[from] HarrisError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("keyframe at {t} us is {width}x{height}, sensor is {sensor_w}x{sensor_h}")]
    FrameSize {
        t: Timestamp,
        width: usize,
        height: usize,
        sensor_w: usize,
        sensor_h: usize,
    },
    #[error("{path}: {source}")]
    Output { path: String, source: io::Error },
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Dataset(DatasetError::Config(_)) => 2,
            _ => 1,
        }
    }

    fn output(path: &Path, source: impl Into<io::Error>) -> Self {
        PipelineError::Output {
            path: path.display().to_string(),
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipelineStats {
    pub events: u64,
    pub frames: u64,
    pub detections: u64,
    pub event_corners: u64,
    pub updates: u64,
}

pub struct Pipeline {
    geometry: SensorGeometry,
    harris: HarrisConfig,
    sae: Sae,
    matcher: Matcher,
    tracker: Tracker,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(geometry: SensorGeometry, cfg: &PipelineConfig) -> Self {
        Pipeline {
            geometry,
            harris: cfg.harris.clone(),
            sae: Sae::new(geometry),
            matcher: Matcher::new(geometry, cfg.matching.clone()),
            tracker: Tracker::new(geometry, cfg.tracker.clone()),
            stats: PipelineStats::default(),
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn sae(&self) -> &Sae {
        &self.sae
    }

    pub fn matcher(&self) -> &Matcher {
        &self.matcher
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats
    }

    pub fn detect(&self, frame: &Keyframe) -> Result<Vec<FrameCorner>, PipelineError> {
        if (frame.width, frame.height) != (self.geometry.width, self.geometry.height) {
            return Err(PipelineError::FrameSize {
                t: frame.t,
                width: frame.width,
                height: frame.height,
                sensor_w: self.geometry.width,
                sensor_h: self.geometry.height,
            });
        }
        Ok(detect_corners(frame, &self.harris)?)
    }

    /// Installs a keyframe's detections in the matcher and the tracker.
    pub fn apply_keyframe(&mut self, corners: &[FrameCorner], t: Timestamp) {
        self.stats.frames += 1;
        self.stats.detections += corners.len() as u64;
        self.matcher.set_corners(corners);
        self.tracker.on_keyframe(corners, t);
    }

    pub fn on_frame(&mut self, frame: &Keyframe) -> Result<(), PipelineError> {
        let corners = self.detect(frame)?;
        self.apply_keyframe(&corners, frame.t);
        Ok(())
    }

    /// Writes the event into the SAE.
    pub fn ingest(&mut self, e: &Event) -> Result<(), PipelineError> {
        self.sae.update(e)?;
        self.stats.events += 1;
        Ok(())
    }

    /// Runs the matching unit on an ingested event and anchors its track.
    pub fn match_event(&mut self, e: &Event) -> Option<EventCorner> {
        let ec = self.matcher.match_event(e, &self.sae)?;
        self.stats.event_corners += 1;
        self.tracker.on_event_corner(&ec);
        Some(ec)
    }

    /// Runs life-tracking on an ingested event.
    pub fn track_event(&mut self, e: &Event, out: &mut Vec<UpdateRecord>) {
        let before = out.len();
        self.tracker.on_event(e, &self.sae, out);
        self.stats.updates += (out.len() - before) as u64;
    }

    /// Processes events sharing one timestamp. All of them enter the SAE
    /// before any is matched or tracked.
    pub fn on_events(&mut self, batch: &[Event], out: &mut Vec<UpdateRecord>) -> Result<(), PipelineError> {
        debug_assert!(batch.windows(2).all(|w| w[0].t == w[1].t));
        for e in batch {
            self.ingest(e)?;
        }
        for e in batch {
            self.match_event(e);
        }
        for e in batch {
            self.track_event(e, out);
        }
        Ok(())
    }

    pub fn process(&mut self, item: &Batch, out: &mut Vec<UpdateRecord>) -> Result<(), PipelineError> {
        match item {
            Batch::Frame(f) => self.on_frame(f),
            Batch::Events(b) => self.on_events(b, out),
        }
    }

    /// Drives a whole in-memory recording and returns every update.
    pub fn run(
        &mut self,
        events: &[Event],
        frames: &[Keyframe],
    ) -> Result<Vec<UpdateRecord>, PipelineError> {
        let mut out = Vec::new();
        for item in batches(merge_streams(events.iter().copied(), frames.iter().cloned())) {
            self.process(&item, &mut out)?;
        }
        Ok(out)
    }
}

/// A keyframe, or the run of consecutive events that share one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Frame(Keyframe),
    Events(Vec<Event>),
}

impl Batch {
    pub fn t(&self) -> Timestamp {
        match self {
            Batch::Frame(f) => f.t,
            Batch::Events(b) => b[0].t,
        }
    }
}

pub struct Batches<I: Iterator<Item = StreamItem>> {
    inner: std::iter::Peekable<I>,
}

/// Groups a merged stream into [`Batch`]es.
pub fn batches<I: IntoIterator<Item = StreamItem>>(items: I) -> Batches<I::IntoIter> {
    Batches {
        inner: items.into_iter().peekable(),
    }
}

impl<I: Iterator<Item = StreamItem>> Iterator for Batches<I> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        match self.inner.next()? {
            StreamItem::Frame(f) => Some(Batch::Frame(f)),
            StreamItem::Event(e) => {
                let mut batch = vec![e];
                while let Some(StreamItem::Event(n)) = self.inner.peek() {
                    if n.t != e.t {
                        break;
                    }
                    batch.push(*n);
                    self.inner.next();
                }
                Some(Batch::Events(batch))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackSummary {
    pub stats: PipelineStats,
    pub tracks_created: u32,
}

/// Tracks a recording directory and writes the trajectory CSV to `out_csv`.
pub fn run_track(
    cfg: &PipelineConfig,
    input_dir: &Path,
    out_csv: &Path,
) -> Result<TrackSummary, PipelineError> {
    let rec = Recording::load(input_dir)?;
    let mut pipeline = Pipeline::new(rec.geometry(), cfg);
    let file = File::create(out_csv).map_err(|e| PipelineError::output(out_csv, e))?;
    let mut writer =
        TrajectoryWriter::new(BufWriter::new(file)).map_err(|e| PipelineError::output(out_csv, e))?;
    let mut out = Vec::new();
    for item in batches(merge_streams(rec.events, rec.frames)) {
        pipeline.process(&item, &mut out)?;
        for r in out.drain(..) {
            writer.write(&r).map_err(|e| PipelineError::output(out_csv, e))?;
        }
    }
    writer.finish().map_err(|e| PipelineError::output(out_csv, e))?;
    Ok(TrackSummary {
        stats: pipeline.stats(),
        tracks_created: pipeline.tracker().tracks_created(),
    })
}

/// Writes `keyframe_t_us,x,y,score` rows for every keyframe; returns the row count.
pub fn run_detect(
    cfg: &PipelineConfig,
    input_dir: &Path,
    out_csv: &Path,
) -> Result<usize, PipelineError> {
    let rec = Recording::load(input_dir)?;
    let pipeline = Pipeline::new(rec.geometry(), cfg);
    let mut w = csv::Writer::from_path(out_csv).map_err(|e| PipelineError::output(out_csv, e))?;
    w.write_record(["keyframe_t_us", "x", "y", "score"])
        .map_err(|e| PipelineError::output(out_csv, e))?;
    let mut rows = 0;
    for f in &rec.frames {
        for c in pipeline.detect(f)? {
            w.write_record([
                c.keyframe_t.to_string(),
                c.x.to_string(),
                c.y.to_string(),
                format!("{:.6}", c.score),
            ])
            .map_err(|e| PipelineError::output(out_csv, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| PipelineError::output(out_csv, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub events: usize,
    pub frames: usize,
}

/// Generates the configured synthetic recording into `out_dir`.
pub fn run_synth(cfg: &PipelineConfig, out_dir: &Path) -> Result<SynthSummary, PipelineError> {
    let scene = synth_scene(&cfg.synth.to_config())?;
    write_recording(out_dir, &scene)?;
    Ok(SynthSummary {
        events: scene.events.len(),
        frames: scene.frames.len(),
    })
}
