//! Asynchronous life-tracking between keyframes.
//!
//! Every event that lands in the 5x5 window of a live track triggers a plane
//! fit of its SAE neighbourhood. The plane normal gives the local velocity,
//! the velocity gives the lifetime (time to move one pixel), and the track
//! position is advanced continuously in event time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::event::{Event, Sae, SensorGeometry, Timestamp, TRACK_RADIUS};
use crate::harris::FrameCorner;
use crate::matching::EventCorner;
use crate::plane::{collect_support, rht_fit, PlaneParams, RhtConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("plane encodes no spatial motion")]
    StationarySurface,
}

/// Image-plane velocity in pixels per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Velocity {
    pub vx: f64,
    pub vy: f64,
}

impl Velocity {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    fn dominant(&self) -> f64 {
        self.vx.abs().max(self.vy.abs())
    }
}

/// Below this `a^2 + b^2` (unit normal) the plane is treated as parallel to
/// the image plane.
pub const STATIONARY_EPS: f64 = 1e-12;

/// Velocity from a plane normal: `v = -c * (a, b) / (a^2 + b^2)`.
pub fn velocity(plane: &PlaneParams) -> Result<Velocity, TrackError> {
    let ab = plane.a * plane.a + plane.b * plane.b;
    let norm2 = ab + plane.c * plane.c;
    if !(ab > STATIONARY_EPS * norm2) {
        return Err(TrackError::StationarySurface);
    }
    Ok(Velocity {
        vx: -plane.c * plane.a / ab,
        vy: -plane.c * plane.b / ab,
    })
}

/// Seconds until the corner reaches a neighbouring pixel: `1 / max(|vx|, |vy|)`.
pub fn lifetime(v: &Velocity) -> Result<f64, TrackError> {
    let m = v.dominant();
    if !(m > 0.0) || !m.is_finite() {
        return Err(TrackError::StationarySurface);
    }
    Ok(1.0 / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackState {
    /// Detected on a keyframe, no velocity yet.
    Pending,
    Active,
    Stale,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedCorner {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub vel: Option<Velocity>,
    pub lifetime: Option<f64>,
    pub last_event_t: Timestamp,
    pub state: TrackState,
    /// Update records emitted since the last keyframe.
    pub updates_since_keyframe: u32,
    active_in_interval: bool,
    /// Set once an event-corner anchored the track.
    pub anchored: bool,
    failures: u8,
}

impl TrackedCorner {
    fn new(id: u32, c: &FrameCorner, t: Timestamp) -> Self {
        TrackedCorner {
            id,
            x: c.x as f64,
            y: c.y as f64,
            vel: None,
            lifetime: None,
            last_event_t: t,
            state: TrackState::Pending,
            updates_since_keyframe: 0,
            active_in_interval: false,
            anchored: false,
            failures: 0,
        }
    }

    /// Rounded pixel position.
    pub fn pixel(&self) -> (i64, i64) {
        (self.x.round() as i64, self.y.round() as i64)
    }

    /// Dead-reckoned position at `t`.
    pub fn predict(&self, t: Timestamp) -> (f64, f64) {
        match self.vel {
            Some(v) => {
                let dt = (t as f64 - self.last_event_t as f64) * 1e-6;
                (self.x + v.vx * dt, self.y + v.vy * dt)
            }
            None => (self.x, self.y),
        }
    }

    fn in_window(&self, e: &Event) -> bool {
        let (px, py) = self.predict(e.t);
        let r = TRACK_RADIUS as f64;
        (e.x as f64 - px.round()).abs() <= r && (e.y as f64 - py.round()).abs() <= r
    }

    fn is_live(&self) -> bool {
        self.state == TrackState::Active || (self.state == TrackState::Pending && self.anchored)
    }
}

/// One asynchronous position update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRecord {
    pub track_id: u32,
    pub t: Timestamp,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub lifetime_s: f64,
}

/// Updates a track received during one keyframe interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntervalCount {
    pub track_id: u32,
    /// Timestamp of the keyframe that opened the interval.
    pub keyframe_t: Timestamp,
    pub updates: u32,
    /// Track emitted at least one update during the interval.
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Staleness factor: a track goes stale after `kappa * lifetime` of silence.
    pub kappa: f64,
    /// Keyframe association radius in pixels.
    pub r_assoc: f64,
    pub rht: RhtConfig,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            kappa: 3.0,
            r_assoc: 3.0,
            rht: RhtConfig::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitStats {
    pub attempted: u64,
    pub failed: u64,
}

pub struct Tracker {
    geometry: SensorGeometry,
    cfg: TrackerConfig,
    tracks: Vec<TrackedCorner>,
    // detection index of the current keyframe -> track id
    corner_tracks: Vec<u32>,
    next_id: u32,
    rng: ChaCha8Rng,
    last_keyframe_t: Option<Timestamp>,
    intervals: Vec<IntervalCount>,
    created: u32,
    fits: FitStats,
}

impl Tracker {
    pub fn new(geometry: SensorGeometry, cfg: TrackerConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Tracker {
            geometry,
            cfg,
            tracks: Vec::new(),
            corner_tracks: Vec::new(),
            next_id: 0,
            rng,
            last_keyframe_t: None,
            intervals: Vec::new(),
            created: 0,
            fits: FitStats::default(),
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Tracks that are not lost.
    pub fn tracks(&self) -> &[TrackedCorner] {
        &self.tracks
    }

    pub fn track(&self, id: u32) -> Option<&TrackedCorner> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Track opened for detection `index` of the current keyframe.
    pub fn track_for_corner(&self, index: usize) -> Option<u32> {
        self.corner_tracks.get(index).copied()
    }

    pub fn intervals(&self) -> &[IntervalCount] {
        &self.intervals
    }

    pub fn tracks_created(&self) -> u32 {
        self.created
    }

    pub fn fit_stats(&self) -> FitStats {
        self.fits
    }

    /// Associates fresh detections with existing tracks.
    ///
    /// Detections within `r_assoc` of a track's predicted position continue
    /// it (nearest pairs first), remaining tracks are lost and remaining
    /// detections open new pending tracks.
    pub fn on_keyframe(&mut self, corners: &[FrameCorner], t: Timestamp) {
        if let Some(kt) = self.last_keyframe_t {
            for tr in &self.tracks {
                self.intervals.push(IntervalCount {
                    track_id: tr.id,
                    keyframe_t: kt,
                    updates: tr.updates_since_keyframe,
                    active: tr.active_in_interval,
                });
            }
        }
        self.last_keyframe_t = Some(t);

        let r2 = self.cfg.r_assoc * self.cfg.r_assoc;
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, tr) in self.tracks.iter().enumerate() {
            let (px, py) = tr.predict(t);
            for (ci, c) in corners.iter().enumerate() {
                let d2 = (c.x as f64 - px).powi(2) + (c.y as f64 - py).powi(2);
                if d2 <= r2 {
                    pairs.push((d2, ti, ci));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_of_corner: Vec<Option<usize>> = vec![None; corners.len()];
        let mut track_taken = vec![false; self.tracks.len()];
        for (_, ti, ci) in pairs {
            if track_taken[ti] || track_of_corner[ci].is_some() {
                continue;
            }
            track_taken[ti] = true;
            track_of_corner[ci] = Some(ti);
        }

        let mut kept: Vec<TrackedCorner> = Vec::with_capacity(corners.len());
        self.corner_tracks.clear();
        let old = std::mem::take(&mut self.tracks);
        for (ci, c) in corners.iter().enumerate() {
            let tr = match track_of_corner[ci] {
                Some(ti) => {
                    let mut tr = old[ti].clone();
                    tr.x = c.x as f64;
                    tr.y = c.y as f64;
                    tr.last_event_t = t;
                    tr.failures = 0;
                    if tr.state != TrackState::Active {
                        tr.state = TrackState::Pending;
                        tr.anchored = false;
                    }
                    tr
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.created += 1;
                    TrackedCorner::new(id, c, t)
                }
            };
            self.corner_tracks.push(tr.id);
            kept.push(tr);
        }
        for tr in &mut kept {
            tr.updates_since_keyframe = 0;
            tr.active_in_interval = false;
        }
        self.tracks = kept;
    }

    /// Anchors the track of a matched event-corner at the corner pixel.
    pub fn on_event_corner(&mut self, ec: &EventCorner) {
        let Some(id) = self.track_for_corner(ec.corner_index) else {
            return;
        };
        if let Some(tr) = self.tracks.iter_mut().find(|t| t.id == id) {
            if tr.state == TrackState::Lost {
                return;
            }
            tr.x = ec.x as f64;
            tr.y = ec.y as f64;
            tr.last_event_t = ec.t;
            tr.anchored = true;
            if tr.state == TrackState::Stale {
                tr.state = TrackState::Pending;
            }
        }
    }

    /// Processes one event; `sae` must already contain it. Update records
    /// are appended to `out`.
    pub fn on_event(&mut self, e: &Event, sae: &Sae, out: &mut Vec<UpdateRecord>) {
        let kappa = self.cfg.kappa;
        for i in 0..self.tracks.len() {
            let tr = &mut self.tracks[i];
            if tr.state == TrackState::Active {
                let silent = (e.t.saturating_sub(tr.last_event_t)) as f64 * 1e-6;
                if let Some(tau) = tr.lifetime {
                    if silent > kappa * tau {
                        tr.state = TrackState::Stale;
                        continue;
                    }
                }
            }
            if !tr.is_live() || !tr.in_window(e) {
                continue;
            }

            self.fits.attempted += 1;
            let fit = collect_support(sae, e.x as usize, e.y as usize, e.t, self.cfg.rht.dt_max_us)
                .and_then(|pts| rht_fit(&pts, &self.cfg.rht, &mut self.rng))
                .ok()
                .and_then(|plane| velocity(&plane).ok())
                .and_then(|v| lifetime(&v).ok().map(|tau| (v, tau)));

            let tr = &mut self.tracks[i];
            let prior = tr.vel;
            match fit {
                Some((v, tau)) => {
                    tr.vel = Some(v);
                    tr.lifetime = Some(tau);
                    tr.failures = 0;
                    tr.state = TrackState::Active;
                }
                None => {
                    self.fits.failed += 1;
                    tr.failures = tr.failures.saturating_add(1);
                }
            }
            // the first fit starts from the anchor instead of extrapolating
            if let (Some(_), Some(v)) = (prior, tr.vel) {
                let dt = (e.t as f64 - tr.last_event_t as f64) * 1e-6;
                tr.x += v.vx * dt;
                tr.y += v.vy * dt;
            }
            tr.last_event_t = e.t;

            let (px, py) = tr.pixel();
            if px < 0 || py < 0 || !self.geometry.is_interior(px as usize, py as usize) {
                tr.state = TrackState::Lost;
                continue;
            }
            if tr.failures >= 2 && tr.state == TrackState::Active {
                tr.state = TrackState::Stale;
            }
            if tr.state == TrackState::Active {
                tr.updates_since_keyframe += 1;
                tr.active_in_interval = true;
                let (v, tau) = (tr.vel.expect("active track has velocity"), tr.lifetime.unwrap());
                out.push(UpdateRecord {
                    track_id: tr.id,
                    t: e.t,
                    x: tr.x,
                    y: tr.y,
                    vx: v.vx,
                    vy: v.vy,
                    lifetime_s: tau,
                });
            }
        }
    }
}
