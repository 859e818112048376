//! Harris frame-corner detection on keyframes.
//!
//! Gradients are 3x3 Sobel responses, the structure tensor is a uniform 3x3
//! box sum, and the score is `det(M) - k * trace(M)^2`.

use thiserror::Error;

use crate::event::{Keyframe, Timestamp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarrisError {
    #[error("image of {width}x{height} is smaller than 3x3")]
    ImageTooSmall { width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarrisConfig {
    pub k: f64,
    pub max_corners: usize,
    /// Fraction of the image's maximum score a corner must exceed.
    pub relative_threshold: f64,
    /// Overrides the relative threshold when set.
    pub absolute_threshold: Option<f64>,
}

impl Default for HarrisConfig {
    fn default() -> Self {
        HarrisConfig {
            k: 0.04,
            max_corners: 50,
            relative_threshold: 0.01,
            absolute_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub ix: Vec<f64>,
    pub iy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StructureTensor {
    pub sxx: f64,
    pub sxy: f64,
    pub syy: f64,
}

impl StructureTensor {
    pub fn det(&self) -> f64 {
        self.sxx * self.syy - self.sxy * self.sxy
    }

    pub fn trace(&self) -> f64 {
        self.sxx + self.syy
    }

    fn accumulate(&mut self, gx: f64, gy: f64) {
        self.sxx += gx * gx;
        self.sxy += gx * gy;
        self.syy += gy * gy;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCorner {
    pub x: usize,
    pub y: usize,
    pub score: f64,
    pub keyframe_t: Timestamp,
}

/// `lambda1 * lambda2 - k * (lambda1 + lambda2)^2`, evaluated through det and trace.
#[inline]
pub fn harris_score(m: &StructureTensor, k: f64) -> f64 {
    let tr = m.trace();
    m.det() - k * tr * tr
}

/// Sobel response at a cell given an accessor for its 3x3 neighbourhood
/// (`sample(dx, dy)` with offsets in -1..=1).
#[inline]
pub(crate) fn sobel<F: Fn(isize, isize) -> f64>(sample: F) -> (f64, f64) {
    let gx = (sample(1, -1) + 2.0 * sample(1, 0) + sample(1, 1))
        - (sample(-1, -1) + 2.0 * sample(-1, 0) + sample(-1, 1));
    let gy = (sample(-1, 1) + 2.0 * sample(0, 1) + sample(1, 1))
        - (sample(-1, -1) + 2.0 * sample(0, -1) + sample(1, -1));
    (gx, gy)
}

/// Sobel gradients with clamped border replication.
pub fn gradients(img: &Keyframe) -> Result<GradientField, HarrisError> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(HarrisError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let mut ix = vec![0.0; w * h];
    let mut iy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let sample = |dx: isize, dy: isize| {
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                img.get(sx, sy) as f64
            };
            let (gx, gy) = sobel(sample);
            ix[y * w + x] = gx;
            iy[y * w + x] = gy;
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        ix,
        iy,
    })
}

/// Structure tensor at every pixel with a 3x3 box window (clamped borders).
pub fn structure_tensors(g: &GradientField) -> Vec<StructureTensor> {
    let (w, h) = (g.width, g.height);
    let mut out = vec![StructureTensor::default(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut m = StructureTensor::default();
            for dy in -1isize..=1 {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -1isize..=1 {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let i = sy * w + sx;
                    m.accumulate(g.ix[i], g.iy[i]);
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Per-pixel Harris score map.
pub fn score_map(img: &Keyframe, k: f64) -> Result<Vec<f64>, HarrisError> {
    let g = gradients(img)?;
    Ok(structure_tensors(&g)
        .iter()
        .map(|m| harris_score(m, k))
        .collect())
}

/// Detects up to `cfg.max_corners` Harris corners, strongest first.
pub fn detect_corners(img: &Keyframe, cfg: &HarrisConfig) -> Result<Vec<FrameCorner>, HarrisError> {
    let (w, h) = (img.width, img.height);
    let scores = score_map(img, cfg.k)?;
    let max_score = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = match cfg.absolute_threshold {
        Some(t) => t,
        None => {
            if !(max_score > 0.0) {
                return Ok(Vec::new());
            }
            cfg.relative_threshold * max_score
        }
    };

    let geo = img.geometry();
    let mut corners = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let s = scores[y * w + x];
            if !(s > threshold) || !geo.is_interior(x, y) {
                continue;
            }
            // strict 3x3 maximum; plateaus are dropped
            let mut is_max = true;
            'nms: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = (x as isize + dx) as usize;
                    let ny = (y as isize + dy) as usize;
                    if scores[ny * w + nx] >= s {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                corners.push(FrameCorner {
                    x,
                    y,
                    score: s,
                    keyframe_t: img.t,
                });
            }
        }
    }
    corners.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    corners.truncate(cfg.max_corners);
    Ok(corners)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> u8) -> Keyframe {
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        Keyframe::new(0, w, h, px)
    }

    // 2x2 symmetric eigenvalues in closed form
    fn eigen_score(m: &StructureTensor, k: f64) -> f64 {
        let mean = 0.5 * (m.sxx + m.syy);
        let d = (0.25 * (m.sxx - m.syy).powi(2) + m.sxy * m.sxy).sqrt();
        let (l1, l2) = (mean + d, mean - d);
        l1 * l2 - k * (l1 + l2).powi(2)
    }

    #[test]
    fn score_examples() {
        assert_eq!(harris_score(&StructureTensor::default(), 0.04), 0.0);
        let id = StructureTensor {
            sxx: 1.0,
            sxy: 0.0,
            syy: 1.0,
        };
        assert!((harris_score(&id, 0.04) - 0.84).abs() < 1e-15);
    }

    #[test]
    fn score_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (a, b): (f64, f64) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let (c, d): (f64, f64) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            // G^T G is PSD
            let m = StructureTensor {
                sxx: a * a + c * c,
                sxy: a * b + c * d,
                syy: b * b + d * d,
            };
            let s = harris_score(&m, 0.04);
            let oracle = eigen_score(&m, 0.04);
            let scale = m.trace().powi(2).max(1e-300);
            assert!((s - oracle).abs() <= 1e-9 * scale, "{s} vs {oracle}");
        }
    }

    #[test]
    fn too_small() {
        let img = frame(2, 5, |_, _| 0);
        assert_eq!(
            gradients(&img).unwrap_err(),
            HarrisError::ImageTooSmall {
                width: 2,
                height: 5
            }
        );
        assert!(detect_corners(&img, &HarrisConfig::default()).is_err());
    }

    #[test]
    fn constant_image_is_flat() {
        let img = frame(20, 15, |_, _| 77);
        let g = gradients(&img).unwrap();
        assert!(g.ix.iter().chain(g.iy.iter()).all(|v| *v == 0.0));
        assert!(detect_corners(&img, &HarrisConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn vertical_step_edge() {
        let img = frame(12, 10, |x, _| if x >= 6 { 200 } else { 10 });
        let g = gradients(&img).unwrap();
        let w = img.width;
        for y in 1..9 {
            for x in 0..12 {
                assert_eq!(g.iy[y * w + x], 0.0);
            }
            let max = (0..12).map(|x| g.ix[y * w + x].abs()).fold(0.0, f64::max);
            assert_eq!(g.ix[y * w + 5].abs(), max);
            assert_eq!(g.ix[y * w + 6].abs(), max);
            assert_eq!(g.ix[y * w + 2], 0.0);
        }
    }

    #[test]
    fn gradients_match_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = frame(8, 8, |_, _| rng.gen());
        let g = gradients(&img).unwrap();
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        for y in 0..8i32 {
            for x in 0..8i32 {
                let (mut sx, mut sy) = (0.0, 0.0);
                for r in 0..3i32 {
                    for c in 0..3i32 {
                        let px = (x + c - 1).clamp(0, 7) as usize;
                        let py = (y + r - 1).clamp(0, 7) as usize;
                        let v = img.get(px, py) as f64;
                        sx += kx[r as usize][c as usize] * v;
                        sy += ky[r as usize][c as usize] * v;
                    }
                }
                let i = (y * 8 + x) as usize;
                assert_eq!(g.ix[i], sx);
                assert_eq!(g.iy[i], sy);
            }
        }
    }

    #[test]
    fn white_square_has_four_corners() {
        let img = frame(60, 50, |x, y| {
            if (20..40).contains(&x) && (15..35).contains(&y) {
                255
            } else {
                0
            }
        });
        let corners = detect_corners(&img, &HarrisConfig::default()).unwrap();
        assert_eq!(corners.len(), 4, "{corners:?}");
        for (vx, vy) in [(19.5, 14.5), (39.5, 14.5), (19.5, 34.5), (39.5, 34.5)] {
            assert!(
                corners
                    .iter()
                    .any(|c| (c.x as f64 - vx).abs() <= 1.0 && (c.y as f64 - vy).abs() <= 1.0),
                "no corner near ({vx}, {vy})"
            );
        }
    }

    fn random_blocks(seed: u64) -> Keyframe {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<u8> = (0..(12 * 9)).map(|_| rng.gen()).collect();
        frame(60, 45, |x, y| blocks[(y / 5) * 12 + x / 5])
    }

    #[test]
    fn result_bounded_and_above_threshold() {
        for seed in 0..5 {
            let img = random_blocks(seed);
            let cfg = HarrisConfig {
                max_corners: 50,
                ..Default::default()
            };
            let corners = detect_corners(&img, &cfg).unwrap();
            assert!(!corners.is_empty());
            assert!(corners.len() <= 50);
            let max = score_map(&img, cfg.k).unwrap().into_iter().fold(f64::MIN, f64::max);
            for c in &corners {
                assert!(c.score > 0.01 * max);
                assert!(img.geometry().is_interior(c.x, c.y));
            }
            for w in corners.windows(2) {
                assert!(w[0].score >= w[1].score);
            }
        }
    }

    #[test]
    fn nms_separates_corners() {
        for seed in 0..5 {
            let corners = detect_corners(&random_blocks(seed), &HarrisConfig::default()).unwrap();
            for (i, a) in corners.iter().enumerate() {
                for b in &corners[i + 1..] {
                    let cheb = a.x.abs_diff(b.x).max(a.y.abs_diff(b.y));
                    assert!(cheb > 1);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let img = random_blocks(9);
        let a = detect_corners(&img, &HarrisConfig::default()).unwrap();
        let b = detect_corners(&img, &HarrisConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn absolute_threshold_override() {
        let img = random_blocks(2);
        let cfg = HarrisConfig {
            absolute_threshold: Some(f64::MAX),
            ..Default::default()
        };
        assert!(detect_corners(&img, &cfg).unwrap().is_empty());
    }

    #[test]
    fn rotation_equivariance() {
        let img = random_blocks(4);
        let (w, h) = (img.width, img.height);
        // rotate 90 degrees clockwise: (x, y) -> (h - 1 - y, x)
        let mut rot = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                rot[x * h + (h - 1 - y)] = img.get(x, y);
            }
        }
        let rotated = Keyframe::new(0, h, w, rot);
        let cfg = HarrisConfig {
            max_corners: usize::MAX,
            ..Default::default()
        };
        let a = detect_corners(&img, &cfg).unwrap();
        let b = detect_corners(&rotated, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for c in &a {
            let (rx, ry) = (h - 1 - c.y, c.x);
            let m = b
                .iter()
                .find(|d| d.x == rx && d.y == ry)
                .unwrap_or_else(|| panic!("missing rotated corner for {c:?}"));
            assert!((m.score - c.score).abs() <= 1e-6 * c.score.abs().max(1.0));
        }
    }
}
