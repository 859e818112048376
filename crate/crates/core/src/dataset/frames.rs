use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::event::{Keyframe, SensorGeometry, Timestamp};

use super::events::{format_seconds, parse_seconds};
use super::DatasetError;

fn unsupported(path: &Path, detail: impl Into<String>) -> DatasetError {
    DatasetError::UnsupportedImageFormat {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Decodes a binary 8-bit PGM (P5). Returns `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    decode_pgm(&bytes).map_err(|d| unsupported(path, d))
}

fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(format!("expected binary PGM (P5), found `{magic}`"));
    }
    let mut num = |what: &str| -> Result<usize, String> {
        token()?
            .parse::<usize>()
            .map_err(|_| format!("bad {what} in header"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} is not 8-bit"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = width * height;
    if bytes.len() < start + n {
        return Err(format!("raster truncated: expected {n} bytes"));
    }
    Ok((width, height, bytes[start..start + n].to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), DatasetError> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| DatasetError::io(path, e))
}

#[cfg(feature = "png")]
fn read_png(path: &Path) -> Result<(usize, usize, Vec<u8>), DatasetError> {
    let img = image::open(path).map_err(|e| unsupported(path, e.to_string()))?;
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.into_raw()))
}

#[cfg(not(feature = "png"))]
fn read_png(path: &Path) -> Result<(usize, usize, Vec<u8>), DatasetError> {
    Err(unsupported(path, "PNG support is not compiled in (enable the `png` feature)"))
}

/// Loads a PGM or PNG frame by extension.
pub fn read_image(path: &Path) -> Result<(usize, usize, Vec<u8>), DatasetError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png(path),
        _ => Err(unsupported(path, "expected a .pgm or .png file")),
    }
}

/// Reads an `images.txt` index. Image paths are relative to its directory.
///
/// All frames must share one size, which must equal `geometry` when given.
pub fn read_frames(
    index_path: &Path,
    geometry: Option<SensorGeometry>,
) -> Result<Vec<Keyframe>, DatasetError> {
    let text = fs::read_to_string(index_path).map_err(|e| DatasetError::io(index_path, e))?;
    let base = index_path.parent().unwrap_or(Path::new("."));
    let mut expected = geometry;
    let mut frames: Vec<Keyframe> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| DatasetError::Parse {
            path: index_path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (ts, rel) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| parse_err("expected `t path`".into()))?;
        let t: Timestamp =
            parse_seconds(ts).ok_or_else(|| parse_err(format!("bad timestamp `{ts}`")))?;
        if let Some(prev) = frames.last() {
            if t < prev.t {
                return Err(DatasetError::Order {
                    path: index_path.to_path_buf(),
                    line: i + 1,
                    prev: prev.t,
                    t,
                });
            }
        }
        let img_path = base.join(rel.trim());
        let (w, h, pixels) = read_image(&img_path)?;
        match expected {
            Some(g) if (g.width, g.height) != (w, h) => {
                return Err(unsupported(
                    &img_path,
                    format!("{w}x{h} frame in a {}x{} recording", g.width, g.height),
                ));
            }
            Some(_) => {}
            None => expected = Some(SensorGeometry::new(w, h)),
        }
        frames.push(Keyframe::new(t, w, h, pixels));
    }
    Ok(frames)
}

/// Writes an `images.txt` index for `(t, relative path)` entries.
pub fn write_images_index(path: &Path, entries: &[(Timestamp, String)]) -> Result<(), DatasetError> {
    let f = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (t, rel) in entries {
        writeln!(w, "{} {}", format_seconds(*t), rel).map_err(|e| DatasetError::io(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let pixels: Vec<u8> = (0..12u8).map(|v| v * 20).collect();
        write_pgm(&p, 4, 3, &pixels).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), (4, 3, pixels));
    }

    #[test]
    fn pgm_header_comments() {
        let mut bytes = b"P5\n# made by hand\n2 2\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        assert_eq!(decode_pgm(&bytes).unwrap(), (2, 2, vec![1, 2, 3, 4]));
    }

    #[test]
    fn pgm_rejects_other_formats() {
        assert!(decode_pgm(b"P2\n2 2\n255\n1 2 3 4").is_err());
        assert!(decode_pgm(b"P5\n2 2\n65535\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x01\x02").is_err());
    }

    #[test]
    fn empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let idx = dir.path().join("images.txt");
        fs::write(&idx, "").unwrap();
        assert!(read_frames(&idx, None).unwrap().is_empty());
    }

    #[test]
    fn index_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("images")).unwrap();
        for k in 0..3u8 {
            write_pgm(&dir.path().join(format!("images/f{k}.pgm")), 5, 4, &[k; 20]).unwrap();
        }
        let idx = dir.path().join("images.txt");
        let entries: Vec<(Timestamp, String)> =
            (0..3).map(|k| (k * 41_667, format!("images/f{k}.pgm"))).collect();
        write_images_index(&idx, &entries).unwrap();
        let frames = read_frames(&idx, Some(SensorGeometry::new(5, 4))).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[2].t, 83_334);
        assert_eq!(frames[1].pixels, vec![1; 20]);
    }

    #[test]
    fn size_mismatch_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(&dir.path().join("f.pgm"), 5, 4, &[0; 20]).unwrap();
        let idx = dir.path().join("images.txt");
        fs::write(&idx, "0.0 f.pgm\n").unwrap();
        let err = read_frames(&idx, Some(SensorGeometry::DAVIS240)).unwrap_err();
        match err {
            DatasetError::UnsupportedImageFormat { detail, .. } => {
                assert!(detail.contains("5x4"), "{detail}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_extension() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bmp");
        fs::write(&p, b"BM").unwrap();
        assert!(matches!(
            read_image(&p),
            Err(DatasetError::UnsupportedImageFormat { .. })
        ));
    }
}
