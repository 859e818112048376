use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use crate::tracker::UpdateRecord;

use super::DatasetError;

const HEADER: [&str; 7] = ["track_id", "t_us", "x", "y", "vx", "vy", "lifetime_s"];

fn csv_err(path: &Path, e: csv::Error) -> DatasetError {
    DatasetError::io(path, io::Error::other(e))
}

/// Six decimals; values that round to zero print unsigned.
fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        s[1..].to_string()
    } else {
        s
    }
}

/// Streaming CSV writer for update records. Reals use six decimals.
pub struct TrajectoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(w: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(HEADER)?;
        Ok(TrajectoryWriter { inner })
    }

    pub fn write(&mut self, r: &UpdateRecord) -> csv::Result<()> {
        self.inner.write_record([
            r.track_id.to_string(),
            r.t.to_string(),
            fixed6(r.x),
            fixed6(r.y),
            fixed6(r.vx),
            fixed6(r.vy),
            fixed6(r.lifetime_s),
        ])
    }

    pub fn finish(mut self) -> csv::Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))
    }
}

pub fn write_trajectories(path: &Path, records: &[UpdateRecord]) -> Result<(), DatasetError> {
    let f = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = TrajectoryWriter::new(io::BufWriter::new(f)).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write(r).map_err(|e| csv_err(path, e))?;
    }
    w.finish().map_err(|e| csv_err(path, e))?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<UpdateRecord>, DatasetError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().ne(HEADER) {
        return Err(DatasetError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("unexpected header `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |msg: &str| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: msg.to_string(),
        };
        let real = |k: usize| -> Result<f64, DatasetError> {
            row[k].parse().map_err(|_| bad(&format!("bad {}", HEADER[k])))
        };
        out.push(UpdateRecord {
            track_id: row[0].parse().map_err(|_| bad("bad track_id"))?,
            t: row[1].parse().map_err(|_| bad("bad t_us"))?,
            x: real(2)?,
            y: real(3)?,
            vx: real(4)?,
            vy: real(5)?,
            lifetime_s: real(6)?,
        });
    }
    Ok(out)
}
