use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::event::{Event, Polarity, SensorGeometry, Timestamp};

use super::DatasetError;

/// Parses non-negative decimal seconds into microseconds, rounding half up.
///
/// Plain decimals are converted digit by digit so no float rounding enters
/// the timestamp. Exponent notation falls back to `f64`.
pub fn parse_seconds(s: &str) -> Option<Timestamp> {
    if s.is_empty() || s.starts_with('-') {
        return None;
    }
    if s.contains(['e', 'E']) {
        let v: f64 = s.parse().ok()?;
        if !(v >= 0.0) || !v.is_finite() {
            return None;
        }
        return Some((v * 1e6).round() as Timestamp);
    }
    let s = s.strip_prefix('+').unwrap_or(s);
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let mut micros: u64 = 0;
    for i in 0..6 {
        let d = frac.as_bytes().get(i).map_or(0, |b| (b - b'0') as u64);
        micros = micros * 10 + d;
    }
    if frac.as_bytes().get(6).is_some_and(|&b| b >= b'5') {
        micros += 1;
    }
    whole.checked_mul(1_000_000)?.checked_add(micros)
}

/// Formats microseconds as seconds with nine decimals, as in the datasets.
pub fn format_seconds(t: Timestamp) -> String {
    format!("{}.{:06}000", t / 1_000_000, t % 1_000_000)
}

/// Streaming reader over `t x y p` lines.
pub struct EventReader<R> {
    input: R,
    path: PathBuf,
    geometry: SensorGeometry,
    line: usize,
    prev: Option<Timestamp>,
    buf: String,
}

impl EventReader<BufReader<File>> {
    pub fn open(path: &Path, geometry: SensorGeometry) -> Result<Self, DatasetError> {
        let f = File::open(path).map_err(|e| DatasetError::io(path, e))?;
        Ok(EventReader::new(BufReader::with_capacity(1 << 16, f), path, geometry))
    }
}

impl<R: BufRead> EventReader<R> {
    /// `path` only labels diagnostics.
    pub fn new(input: R, path: &Path, geometry: SensorGeometry) -> Self {
        EventReader {
            input,
            path: path.to_path_buf(),
            geometry,
            line: 0,
            prev: None,
            buf: String::new(),
        }
    }

    fn parse_error(&self, msg: impl Into<String>) -> DatasetError {
        DatasetError::Parse {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn parse_line(&self, line: &str) -> Result<Event, DatasetError> {
        let mut fields = line.split_ascii_whitespace();
        let (Some(ts), Some(xs), Some(ys), Some(ps), None) = (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) else {
            return Err(self.parse_error("expected 4 fields `t x y p`"));
        };
        let t = parse_seconds(ts).ok_or_else(|| self.parse_error(format!("bad timestamp `{ts}`")))?;
        let x: usize = xs
            .parse()
            .map_err(|_| self.parse_error(format!("bad x `{xs}`")))?;
        let y: usize = ys
            .parse()
            .map_err(|_| self.parse_error(format!("bad y `{ys}`")))?;
        let pol = match ps {
            "0" => Polarity::Off,
            "1" => Polarity::On,
            _ => return Err(self.parse_error(format!("bad polarity `{ps}`"))),
        };
        if !self.geometry.contains(x, y) {
            return Err(self.parse_error(format!(
                "({x}, {y}) outside the {}x{} sensor",
                self.geometry.width, self.geometry.height
            )));
        }
        Ok(Event::new(x as u16, y as u16, t, pol))
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(DatasetError::io(&self.path, e))),
            }
            self.line += 1;
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            let e = match self.parse_line(line) {
                Ok(e) => e,
                Err(err) => return Some(Err(err)),
            };
            if let Some(prev) = self.prev {
                if e.t < prev {
                    return Some(Err(DatasetError::Order {
                        path: self.path.clone(),
                        line: self.line,
                        prev,
                        t: e.t,
                    }));
                }
            }
            self.prev = Some(e.t);
            return Some(Ok(e));
        }
    }
}

pub fn read_events(path: &Path, geometry: SensorGeometry) -> Result<Vec<Event>, DatasetError> {
    EventReader::open(path, geometry)?.collect()
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<(), DatasetError> {
    let f = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in events {
        let p = match e.pol {
            Polarity::On => 1,
            Polarity::Off => 0,
        };
        writeln!(w, "{} {} {} {}", format_seconds(e.t), e.x, e.y, p)
            .map_err(|err| DatasetError::io(path, err))?;
    }
    w.flush().map_err(|err| DatasetError::io(path, err))
}
