//! Matching unit: promotes the first qualifying event at a frame-corner pixel
//! to an event-corner.

use crate::event::{
    binarize_patch, extract_patch, BinaryPatch, Event, Polarity, Sae, SensorGeometry, Timestamp,
    MATCH_RADIUS,
};
use crate::harris::{harris_score, sobel, FrameCorner, StructureTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Number of most recent neighbours kept in the binary patch.
    pub n_recent: usize,
    pub threshold: f64,
    /// Chebyshev radius around a corner pixel that still counts as a hit.
    pub tolerance: usize,
    /// Harris constant, shared with frame detection.
    pub k: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            n_recent: 12,
            threshold: 1.0,
            tolerance: 0,
            k: 0.04,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventCorner {
    pub x: usize,
    pub y: usize,
    pub t: Timestamp,
    pub pol: Polarity,
    pub score: f64,
    /// Index of the source corner in the current keyframe's detection list.
    pub corner_index: usize,
    pub source: FrameCorner,
}

/// Harris score of a 7x7 binary patch evaluated at its center.
///
/// Sobel gradients are taken on the 0/1 grid and summed over the 3x3 window
/// around the center. A patch with no neighbour bits scores zero: a lone
/// center event carries no local structure.
pub fn score_binary_patch(bp: &BinaryPatch, k: f64) -> f64 {
    debug_assert_eq!(bp.radius, MATCH_RADIUS);
    let c = bp.radius as isize;
    let center = bp.radius * bp.side() + bp.radius;
    if bp.n_ones - usize::from(bp.bits[center]) == 0 {
        return 0.0;
    }
    let mut m = StructureTensor::default();
    for wy in -1..=1isize {
        for wx in -1..=1isize {
            let (cx, cy) = (c + wx, c + wy);
            let (gx, gy) = sobel(|dx, dy| bp.value((cx + dx) as usize, (cy + dy) as usize));
            m.sxx += gx * gx;
            m.sxy += gx * gy;
            m.syy += gy * gy;
        }
    }
    harris_score(&m, k)
}

/// Tracks the active frame-corners of the current keyframe interval.
#[derive(Debug, Clone)]
pub struct Matcher {
    geometry: SensorGeometry,
    cfg: MatchConfig,
    corners: Vec<FrameCorner>,
    matched: Vec<bool>,
    // pixel -> corner index + 1, 0 when no corner claims the pixel
    lookup: Vec<u32>,
    events_checked: u64,
}

impl Matcher {
    pub fn new(geometry: SensorGeometry, cfg: MatchConfig) -> Self {
        Matcher {
            geometry,
            cfg,
            corners: Vec::new(),
            matched: Vec::new(),
            lookup: vec![0; geometry.pixel_count()],
            events_checked: 0,
        }
    }

    pub fn config(&self) -> &MatchConfig {
        &self.cfg
    }

    pub fn corners(&self) -> &[FrameCorner] {
        &self.corners
    }

    pub fn is_matched(&self, index: usize) -> bool {
        self.matched[index]
    }

    /// Events that landed on a corner pixel and had their patch scored.
    pub fn events_checked(&self) -> u64 {
        self.events_checked
    }

    /// Replaces the active corner set and clears all matched flags.
    pub fn set_corners(&mut self, corners: &[FrameCorner]) {
        for c in std::mem::take(&mut self.corners) {
            self.clear_claim(&c);
        }
        self.corners = corners.to_vec();
        self.matched = vec![false; corners.len()];
        let r = self.cfg.tolerance as isize;
        let w = self.geometry.width;
        // strongest corner first keeps its claim on overlapping pixels
        for (i, c) in self.corners.iter().enumerate() {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (c.x as isize + dx, c.y as isize + dy);
                    if x < 0 || y < 0 || !self.geometry.contains(x as usize, y as usize) {
                        continue;
                    }
                    let slot = &mut self.lookup[y as usize * w + x as usize];
                    if *slot == 0 {
                        *slot = i as u32 + 1;
                    }
                }
            }
        }
    }

    fn clear_claim(&mut self, c: &FrameCorner) {
        let r = self.cfg.tolerance as isize;
        let w = self.geometry.width;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (c.x as isize + dx, c.y as isize + dy);
                if x >= 0 && y >= 0 && self.geometry.contains(x as usize, y as usize) {
                    self.lookup[y as usize * w + x as usize] = 0;
                }
            }
        }
    }

    /// Checks `e` against the active corners. `sae` must already contain `e`.
    pub fn match_event(&mut self, e: &Event, sae: &Sae) -> Option<EventCorner> {
        let (x, y) = (e.x as usize, e.y as usize);
        if !self.geometry.contains(x, y) {
            return None;
        }
        let slot = self.lookup[y * self.geometry.width + x];
        if slot == 0 {
            return None;
        }
        let index = slot as usize - 1;
        if self.matched[index] {
            return None;
        }
        self.events_checked += 1;
        let patch = extract_patch(sae, (x, y), MATCH_RADIUS, e.pol).ok()?;
        let bp = binarize_patch(&patch, self.cfg.n_recent);
        let score = score_binary_patch(&bp, self.cfg.k);
        if score > self.cfg.threshold {
            self.matched[index] = true;
            let source = self.corners[index];
            Some(EventCorner {
                x: source.x,
                y: source.y,
                t: e.t,
                pol: e.pol,
                score,
                corner_index: index,
                source,
            })
        } else {
            None
        }
    }
}
