//! Per-unit timing of the pipeline and update-rate accounting.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::time::Instant;

use crate::config::PipelineConfig;
use crate::dataset::{merge_streams, Recording};
use crate::pipeline::{batches, Batch, Pipeline, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
}

impl LatencyStats {
    /// `None` for an empty sample.
    pub fn from_samples(mut samples: Vec<f64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        // nearest-rank percentiles
        let rank = |q: f64| samples[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        Some(LatencyStats {
            count: n,
            mean_us: samples.iter().sum::<f64>() / n as f64,
            median_us: rank(0.5),
            p99_us: rank(0.99),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub events: u64,
    pub frames: u64,
    /// Harris detection per keyframe.
    pub harris: Option<LatencyStats>,
    /// Matching unit per event.
    pub matching: Option<LatencyStats>,
    /// Plane fit and lifetime per event that triggered at least one fit.
    pub fit: Option<LatencyStats>,
    pub fits: u64,
    /// Events that reached the patch score at a corner pixel.
    pub events_checked: u64,
    /// Events per second of matching-unit time.
    pub matching_throughput: Option<f64>,
    pub updates: u64,
    pub tracks_created: u32,
    /// Updates per active corner per keyframe interval.
    pub interval_updates: Option<IntervalUpdates>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalUpdates {
    pub intervals: usize,
    pub median: f64,
    pub mean: f64,
    pub max: u32,
}

impl IntervalUpdates {
    pub fn from_counts(mut counts: Vec<u32>) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        counts.sort_unstable();
        let n = counts.len();
        let median = if n % 2 == 1 {
            counts[n / 2] as f64
        } else {
            0.5 * (counts[n / 2 - 1] + counts[n / 2]) as f64
        };
        Some(IntervalUpdates {
            intervals: n,
            median,
            mean: counts.iter().map(|&c| c as f64).sum::<f64>() / n as f64,
            max: counts[n - 1],
        })
    }
}

/// Rounds to three significant digits and prints without an exponent.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i32;
    let decimals = (2 - e).max(0) as usize;
    let q = 10f64.powi(e - 2);
    format!("{:.*}", decimals, (x / q).round() * q)
}

fn one_pass(
    cfg: &PipelineConfig,
    rec: &Recording,
    timed: bool,
) -> Result<(Pipeline, [Vec<f64>; 3], f64), PipelineError> {
    let mut p = Pipeline::new(rec.geometry(), cfg);
    let mut harris = Vec::new();
    let mut matching = Vec::with_capacity(if timed { rec.events.len() } else { 0 });
    let mut fit = Vec::new();
    let mut out = Vec::new();
    let start = Instant::now();
    for item in batches(merge_streams(
        rec.events.iter().copied(),
        rec.frames.iter().cloned(),
    )) {
        match &item {
            Batch::Frame(f) => {
                let t0 = Instant::now();
                let corners = p.detect(f)?;
                if timed {
                    harris.push(t0.elapsed().as_secs_f64() * 1e6);
                }
                p.apply_keyframe(&corners, f.t);
            }
            Batch::Events(batch) => {
                for e in batch {
                    p.ingest(e)?;
                }
                for e in batch {
                    let t0 = Instant::now();
                    p.match_event(e);
                    if timed {
                        matching.push(t0.elapsed().as_secs_f64() * 1e6);
                    }
                }
                for e in batch {
                    let before = p.tracker().fit_stats().attempted;
                    let t0 = Instant::now();
                    p.track_event(e, &mut out);
                    let dt = t0.elapsed().as_secs_f64() * 1e6;
                    if timed && p.tracker().fit_stats().attempted > before {
                        fit.push(dt);
                    }
                }
                out.clear();
            }
        }
    }
    let wall = start.elapsed().as_secs_f64();
    Ok((p, [harris, matching, fit], wall))
}

/// Times every unit over a loaded recording. An untimed warm-up pass runs first.
pub fn bench_recording(cfg: &PipelineConfig, rec: &Recording) -> Result<BenchReport, PipelineError> {
    one_pass(cfg, rec, false)?;
    let (p, [harris, matching, fit], wall_s) = one_pass(cfg, rec, true)?;
    let matching_total_s: f64 = matching.iter().sum::<f64>() * 1e-6;
    let stats = p.stats();
    let counts = p
        .tracker()
        .intervals()
        .iter()
        .filter(|c| c.active)
        .map(|c| c.updates)
        .collect();
    Ok(BenchReport {
        events: stats.events,
        frames: stats.frames,
        harris: LatencyStats::from_samples(harris),
        matching: LatencyStats::from_samples(matching),
        fit: LatencyStats::from_samples(fit),
        fits: p.tracker().fit_stats().attempted,
        events_checked: p.matcher().events_checked(),
        matching_throughput: (matching_total_s > 0.0).then(|| stats.events as f64 / matching_total_s),
        updates: stats.updates,
        tracks_created: p.tracker().tracks_created(),
        interval_updates: IntervalUpdates::from_counts(counts),
        wall_s,
    })
}

pub fn run_bench(cfg: &PipelineConfig, input_dir: &Path) -> Result<BenchReport, PipelineError> {
    let rec = Recording::load(input_dir)?;
    bench_recording(cfg, &rec)
}

fn latency_line(f: &mut fmt::Formatter<'_>, name: &str, s: &Option<LatencyStats>) -> fmt::Result {
    match s {
        Some(s) => writeln!(
            f,
            "{name:<22} mean {} us  median {} us  p99 {} us  (n = {})",
            sig3(s.mean_us),
            sig3(s.median_us),
            sig3(s.p99_us),
            s.count
        ),
        None => writeln!(f, "{name:<22} absent"),
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "events processed       {}", self.events)?;
        writeln!(f, "keyframes              {}", self.frames)?;
        latency_line(f, "harris per image", &self.harris)?;
        latency_line(f, "matching per event", &self.matching)?;
        latency_line(f, "lifetime fit per event", &self.fit)?;
        writeln!(f, "plane fits             {}", self.fits)?;
        writeln!(f, "events checked         {}", self.events_checked)?;
        match self.matching_throughput {
            Some(r) => writeln!(f, "matching throughput    {} events/s", sig3(r))?,
            None => writeln!(f, "matching throughput    absent")?,
        }
        writeln!(f, "tracks created         {}", self.tracks_created)?;
        writeln!(f, "updates emitted        {}", self.updates)?;
        match &self.interval_updates {
            Some(u) => writeln!(
                f,
                "updates per corner per interval  median {}  mean {}  max {}  ({} intervals)",
                sig3(u.median),
                sig3(u.mean),
                u.max,
                u.intervals
            )?,
            None => writeln!(f, "updates per corner per interval  absent")?,
        }
        writeln!(f, "wall time              {} s", sig3(self.wall_s))
    }
}

impl BenchReport {
    /// `metric,value` rows; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let mut row = |k: &str, v: Option<String>| {
            let _ = writeln!(s, "{k},{}", v.unwrap_or_default());
        };
        row("events", Some(self.events.to_string()));
        row("keyframes", Some(self.frames.to_string()));
        for (name, l) in [("harris", &self.harris), ("matching", &self.matching), ("fit", &self.fit)] {
            row(&format!("{name}_count"), Some(l.map_or(0, |l| l.count).to_string()));
            row(&format!("{name}_mean_us"), l.map(|l| sig3(l.mean_us)));
            row(&format!("{name}_median_us"), l.map(|l| sig3(l.median_us)));
            row(&format!("{name}_p99_us"), l.map(|l| sig3(l.p99_us)));
        }
        row("plane_fits", Some(self.fits.to_string()));
        row("events_checked", Some(self.events_checked.to_string()));
        row("matching_events_per_s", self.matching_throughput.map(sig3));
        row("tracks_created", Some(self.tracks_created.to_string()));
        row("updates", Some(self.updates.to_string()));
        let iu = self.interval_updates;
        row("interval_updates_median", iu.map(|u| sig3(u.median)));
        row("interval_updates_mean", iu.map(|u| sig3(u.mean)));
        row("interval_updates_max", iu.map(|u| u.max.to_string()));
        row("wall_s", Some(sig3(self.wall_s)));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(sig3(1234.5), "1230");
        assert_eq!(sig3(0.0036123), "0.00361");
        assert_eq!(sig3(0.49), "0.490");
        assert_eq!(sig3(12.349), "12.3");
        assert_eq!(sig3(0.0), "0");
    }

    #[test]
    fn percentiles() {
        let s = LatencyStats::from_samples((1..=100).map(|v| v as f64).collect()).unwrap();
        assert_eq!((s.median_us, s.p99_us, s.mean_us), (50.0, 99.0, 50.5));
        assert!(LatencyStats::from_samples(Vec::new()).is_none());
    }

    #[test]
    fn interval_median() {
        let u = IntervalUpdates::from_counts(vec![5, 1, 3, 100]).unwrap();
        assert_eq!((u.median, u.max, u.intervals), (4.0, 100, 4));
        assert!(IntervalUpdates::from_counts(Vec::new()).is_none());
    }
}
