//! Event data model, the surface of active events (SAE) and local patches.
//!
//! Timestamps are integer microseconds. The SAE keeps one timestamp grid per
//! polarity, and a cell that never fired is `None` rather than `0`.

use std::fmt;

use thiserror::Error;

/// Microseconds since the start of the recording.
pub type Timestamp = u64;

/// Pixels closer than this to any border are never corner candidates.
///
/// Covers the 7x7 matching window and the 5x5 tracking window.
pub const BORDER_MARGIN: usize = 4;

/// Radius of the local SAE used by the matching unit (7x7).
pub const MATCH_RADIUS: usize = 3;

/// Radius of the local SAE used for plane fitting (5x5).
pub const TRACK_RADIUS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventError {
    #[error("event at ({x}, {y}) is outside the {width}x{height} sensor")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("window of radius {radius} around ({x}, {y}) leaves the sensor")]
    BorderViolation { x: usize, y: usize, radius: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    /// Signed value in `{-1, +1}`.
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    fn index(self) -> usize {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.sign())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: Timestamp,
    pub pol: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: Timestamp, pol: Polarity) -> Self {
        Event { x, y, t, pol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: usize,
    pub height: usize,
}

impl SensorGeometry {
    pub const DAVIS240: SensorGeometry = SensorGeometry {
        width: 240,
        height: 180,
    };

    pub fn new(width: usize, height: usize) -> Self {
        SensorGeometry { width, height }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    /// True when a square window of `radius` around `(x, y)` fits on the sensor.
    pub fn window_fits(&self, x: usize, y: usize, radius: usize) -> bool {
        x >= radius && y >= radius && x + radius < self.width && y + radius < self.height
    }

    /// True when `(x, y)` satisfies the corner border policy.
    pub fn is_interior(&self, x: usize, y: usize) -> bool {
        self.window_fits(x, y, BORDER_MARGIN)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        SensorGeometry::DAVIS240
    }
}

/// An 8-bit grayscale intensity frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyframe {
    pub t: Timestamp,
    pub width: usize,
    pub height: usize,
    /// Row-major intensities.
    pub pixels: Vec<u8>,
}

impl Keyframe {
    pub fn new(t: Timestamp, width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer size mismatch");
        Keyframe {
            t,
            width,
            height,
            pixels,
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        SensorGeometry::new(self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Surface of active events: latest timestamp per pixel and polarity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sae {
    geometry: SensorGeometry,
    // indexed by Polarity::index()
    grids: [Vec<Option<Timestamp>>; 2],
}

impl Sae {
    pub fn new(geometry: SensorGeometry) -> Self {
        let n = geometry.pixel_count();
        Sae {
            geometry,
            grids: [vec![None; n], vec![None; n]],
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    /// Records `e`. A cell only ever moves forward in time.
    pub fn update(&mut self, e: &Event) -> Result<(), EventError> {
        let (x, y) = (e.x as usize, e.y as usize);
        if !self.geometry.contains(x, y) {
            return Err(EventError::OutOfBounds {
                x,
                y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        let cell = &mut self.grids[e.pol.index()][y * self.geometry.width + x];
        *cell = Some(cell.map_or(e.t, |old| old.max(e.t)));
        Ok(())
    }

    /// Latest timestamp at `(x, y)` for `pol`; panics when out of bounds.
    #[inline]
    pub fn get(&self, x: usize, y: usize, pol: Polarity) -> Option<Timestamp> {
        self.grids[pol.index()][y * self.geometry.width + x]
    }

    /// Latest timestamp at `(x, y)` over both polarities.
    #[inline]
    pub fn latest(&self, x: usize, y: usize) -> Option<Timestamp> {
        let i = y * self.geometry.width + x;
        match (self.grids[0][i], self.grids[1][i]) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }
}

/// A square window of SAE timestamps around a center pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalPatch {
    pub center: (usize, usize),
    pub radius: usize,
    /// Row-major, side `2 * radius + 1`; `None` marks a cell that never fired.
    pub cells: Vec<Option<Timestamp>>,
}

impl LocalPatch {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn center_index(&self) -> usize {
        self.radius * self.side() + self.radius
    }

    /// Cell at offset `(dx, dy)` from the center.
    pub fn at(&self, dx: isize, dy: isize) -> Option<Timestamp> {
        let r = self.radius as isize;
        let side = self.side() as isize;
        self.cells[((dy + r) * side + dx + r) as usize]
    }
}

/// Copies the SAE window of `radius` around `center` for polarity `pol`.
pub fn extract_patch(
    sae: &Sae,
    center: (usize, usize),
    radius: usize,
    pol: Polarity,
) -> Result<LocalPatch, EventError> {
    let (cx, cy) = center;
    if !sae.geometry().window_fits(cx, cy, radius) {
        return Err(EventError::BorderViolation {
            x: cx,
            y: cy,
            radius,
        });
    }
    let side = 2 * radius + 1;
    let mut cells = Vec::with_capacity(side * side);
    for y in cy - radius..=cy + radius {
        for x in cx - radius..=cx + radius {
            cells.push(sae.get(x, y, pol));
        }
    }
    Ok(LocalPatch {
        center,
        radius,
        cells,
    })
}

/// 0/1 version of a [`LocalPatch`] keeping only the most recent neighbours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryPatch {
    pub radius: usize,
    /// Row-major, side `2 * radius + 1`.
    pub bits: Vec<bool>,
    pub n_ones: usize,
}

impl BinaryPatch {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    pub fn value(&self, col: usize, row: usize) -> f64 {
        if self.bits[row * self.side() + col] {
            1.0
        } else {
            0.0
        }
    }

    /// Builds a patch directly from a bit grid (row-major).
    pub fn from_bits(radius: usize, bits: Vec<bool>) -> Self {
        let side = 2 * radius + 1;
        assert_eq!(bits.len(), side * side, "bit grid size mismatch");
        let n_ones = bits.iter().filter(|b| **b).count();
        BinaryPatch {
            radius,
            bits,
            n_ones,
        }
    }
}

/// Marks the `n` most recent valid neighbours plus the center as `1`.
///
/// Equal timestamps are ordered by row-major cell index.
pub fn binarize_patch(patch: &LocalPatch, n: usize) -> BinaryPatch {
    let center = patch.center_index();
    let mut neighbours: Vec<(usize, Timestamp)> = patch
        .cells
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != center)
        .filter_map(|(i, c)| c.map(|t| (i, t)))
        .collect();
    // stable sort keeps row-major order among ties
    neighbours.sort_by_key(|n| std::cmp::Reverse(n.1));

    let mut bits = vec![false; patch.cells.len()];
    for (i, _) in neighbours.iter().take(n) {
        bits[*i] = true;
    }
    if patch.cells[center].is_some() {
        bits[center] = true;
    }
    BinaryPatch::from_bits(patch.radius, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn ev(x: u16, y: u16, t: Timestamp, pol: Polarity) -> Event {
        Event::new(x, y, t, pol)
    }

    #[test]
    fn update_sets_cell() {
        let mut sae = Sae::new(SensorGeometry::DAVIS240);
        assert_eq!(sae.get(10, 10, Polarity::On), None);
        sae.update(&ev(10, 10, 500, Polarity::On)).unwrap();
        assert_eq!(sae.get(10, 10, Polarity::On), Some(500));
        assert_eq!(sae.get(10, 10, Polarity::Off), None);
        sae.update(&ev(10, 10, 900, Polarity::On)).unwrap();
        assert_eq!(sae.get(10, 10, Polarity::On), Some(900));
    }

    #[test]
    fn update_never_moves_backwards() {
        let mut sae = Sae::new(SensorGeometry::DAVIS240);
        sae.update(&ev(1, 1, 900, Polarity::Off)).unwrap();
        sae.update(&ev(1, 1, 400, Polarity::Off)).unwrap();
        assert_eq!(sae.get(1, 1, Polarity::Off), Some(900));
    }

    #[test]
    fn timestamp_zero_is_valid() {
        let mut sae = Sae::new(SensorGeometry::DAVIS240);
        sae.update(&ev(0, 0, 0, Polarity::On)).unwrap();
        assert_eq!(sae.get(0, 0, Polarity::On), Some(0));
        assert_eq!(sae.latest(0, 0), Some(0));
    }

    #[test]
    fn update_out_of_bounds() {
        let mut sae = Sae::new(SensorGeometry::DAVIS240);
        let err = sae.update(&ev(240, 3, 1, Polarity::On)).unwrap_err();
        assert!(matches!(err, EventError::OutOfBounds { x: 240, .. }));
        assert!(sae.update(&ev(3, 180, 1, Polarity::On)).is_err());
    }

    #[test]
    fn replay_matches_bruteforce_max() {
        let geo = SensorGeometry::DAVIS240;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sae = Sae::new(geo);
        let mut oracle: HashMap<(usize, usize, Polarity), Timestamp> = HashMap::new();
        for _ in 0..1_000_000 {
            let e = ev(
                rng.gen_range(0..240),
                rng.gen_range(0..180),
                rng.gen_range(0..10_000_000),
                if rng.gen() { Polarity::On } else { Polarity::Off },
            );
            sae.update(&e).unwrap();
            let slot = oracle.entry((e.x as usize, e.y as usize, e.pol)).or_insert(0);
            *slot = (*slot).max(e.t);
        }
        for y in 0..geo.height {
            for x in 0..geo.width {
                for pol in [Polarity::On, Polarity::Off] {
                    assert_eq!(sae.get(x, y, pol), oracle.get(&(x, y, pol)).copied());
                }
            }
        }
    }

    #[test]
    fn latest_takes_either_polarity() {
        let mut sae = Sae::new(SensorGeometry::new(8, 8));
        sae.update(&ev(2, 2, 10, Polarity::On)).unwrap();
        sae.update(&ev(2, 2, 30, Polarity::Off)).unwrap();
        assert_eq!(sae.latest(2, 2), Some(30));
        assert_eq!(sae.latest(3, 2), None);
    }

    #[test]
    fn patch_borders() {
        let sae = Sae::new(SensorGeometry::DAVIS240);
        let p = extract_patch(&sae, (3, 3), 3, Polarity::On).unwrap();
        assert_eq!(p.cells.len(), 49);
        assert!(matches!(
            extract_patch(&sae, (2, 3), 3, Polarity::On),
            Err(EventError::BorderViolation { x: 2, y: 3, radius: 3 })
        ));
        assert!(extract_patch(&sae, (236, 176), 3, Polarity::On).is_ok());
        assert!(extract_patch(&sae, (237, 100), 3, Polarity::On).is_err());
        assert!(extract_patch(&sae, (100, 177), 3, Polarity::On).is_err());
    }

    #[test]
    fn patch_matches_direct_reads() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let geo = SensorGeometry::new(32, 24);
        let mut sae = Sae::new(geo);
        for _ in 0..600 {
            let e = ev(
                rng.gen_range(0..32),
                rng.gen_range(0..24),
                rng.gen_range(0..1000),
                Polarity::On,
            );
            sae.update(&e).unwrap();
        }
        let center = (10usize, 12usize);
        let p = extract_patch(&sae, center, 3, Polarity::On).unwrap();
        for dy in -3isize..=3 {
            for dx in -3isize..=3 {
                let x = (center.0 as isize + dx) as usize;
                let y = (center.1 as isize + dy) as usize;
                assert_eq!(p.at(dx, dy), sae.get(x, y, Polarity::On));
            }
        }
    }

    fn patch_from(cells: Vec<Option<Timestamp>>) -> LocalPatch {
        LocalPatch {
            center: (3, 3),
            radius: 3,
            cells,
        }
    }

    #[test]
    fn binarize_twenty_neighbours() {
        let mut cells = vec![None; 49];
        cells[24] = Some(1000);
        for (k, i) in (0..49).filter(|i| *i != 24).take(20).enumerate() {
            cells[i] = Some(100 + k as u64);
        }
        let bp = binarize_patch(&patch_from(cells), 12);
        assert_eq!(bp.n_ones, 13);
        assert!(bp.bits[24]);
    }

    #[test]
    fn binarize_sparse() {
        let mut cells = vec![None; 49];
        cells[24] = Some(50);
        for i in [0, 5, 9, 30, 48] {
            cells[i] = Some(i as u64);
        }
        let bp = binarize_patch(&patch_from(cells.clone()), 12);
        assert_eq!(bp.n_ones, 6);
        for (i, c) in cells.iter().enumerate() {
            assert_eq!(bp.bits[i], c.is_some());
        }
    }

    #[test]
    fn binarize_ties_row_major() {
        let mut cells = vec![Some(7); 49];
        cells[24] = Some(9);
        let bp = binarize_patch(&patch_from(cells), 3);
        let set: Vec<usize> = (0..49).filter(|i| bp.bits[*i]).collect();
        assert_eq!(set, vec![0, 1, 2, 24]);
    }

    #[test]
    fn binarize_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            // distinct timestamps via a shuffled range
            let mut ts: Vec<u64> = (0..49).map(|i| i * 10).collect();
            for i in (1..ts.len()).rev() {
                let j = rng.gen_range(0..=i);
                ts.swap(i, j);
            }
            let cells: Vec<Option<Timestamp>> = ts.iter().map(|t| Some(*t)).collect();
            let bp = binarize_patch(&patch_from(cells), 12);

            let mut order: Vec<usize> = (0..49).filter(|i| *i != 24).collect();
            order.sort_by_key(|i| std::cmp::Reverse(ts[*i]));
            let mut expected = vec![false; 49];
            for i in &order[..12] {
                expected[*i] = true;
            }
            expected[24] = true;
            assert_eq!(bp.bits, expected);
            assert_eq!(bp.n_ones, 13);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_cells() -> impl Strategy<Value = Vec<Option<Timestamp>>> {
            proptest::collection::vec(proptest::option::of(0u64..1000), 49)
        }

        proptest! {
            #[test]
            fn replay_is_idempotent(events in proptest::collection::vec((0u16..16, 0u16..16, 0u64..500, any::<bool>()), 1..60)) {
                let mut sae = Sae::new(SensorGeometry::new(16, 16));
                let evs: Vec<Event> = events.iter().map(|(x, y, t, p)| {
                    ev(*x, *y, *t, if *p { Polarity::On } else { Polarity::Off })
                }).collect();
                for e in &evs { sae.update(e).unwrap(); }
                let snapshot = sae.clone();
                for e in &evs { sae.update(e).unwrap(); }
                prop_assert_eq!(sae, snapshot);
            }

            #[test]
            fn binary_bits_are_valid_cells(mut cells in arb_cells(), n in 0usize..30) {
                cells[24] = Some(2000);
                let p = patch_from(cells.clone());
                let bp = binarize_patch(&p, n);
                prop_assert!(bp.n_ones <= n + 1);
                for (i, b) in bp.bits.iter().enumerate() {
                    if *b { prop_assert!(cells[i].is_some()); }
                }
            }

            #[test]
            fn raising_neighbour_keeps_it(mut cells in arb_cells(), idx in 0usize..49, bump in 1u64..500) {
                prop_assume!(idx != 24);
                cells[24] = Some(2000);
                let before = binarize_patch(&patch_from(cells.clone()), 12);
                prop_assume!(before.bits[idx]);
                cells[idx] = cells[idx].map(|t| t + bump);
                let after = binarize_patch(&patch_from(cells), 12);
                prop_assert!(after.bits[idx]);
            }
        }
    }
}
