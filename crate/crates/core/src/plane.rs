//! Local spatio-temporal plane fitting with a randomized Hough transform.
//!
//! Support points come from the 5x5 SAE neighbourhood of an event and are
//! centered on it, so the event itself sits at the origin. Voting happens in a
//! conditioned space where time is divided by the recency window, which keeps
//! pixel and time magnitudes comparable. The winning cell is refined with a
//! total-least-squares fit over its inliers.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use thiserror::Error;

use crate::event::{Sae, Timestamp, TRACK_RADIUS};

/// Minimum number of support points for a fit.
pub const MIN_SUPPORT: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaneError {
    #[error("5x5 window around ({x}, {y}) leaves the sensor")]
    BorderViolation { x: usize, y: usize },
    #[error("only {found} support points, need {required}")]
    InsufficientSupport { found: usize, required: usize },
    #[error("point triple is collinear")]
    DegenerateTriple,
    #[error("no Hough cell reached {threshold} votes in {iters} draws")]
    NoConsensus { threshold: u32, iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpacePoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl SpacePoint {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        SpacePoint { x, y, t }
    }

    fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.t)
    }
}

/// Neighbourhood points in pixels and seconds, the event-corner first at the origin.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupportPoints {
    pub points: Vec<SpacePoint>,
}

impl SupportPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Collects the 5x5 neighbourhood of `(x, y)` at time `t`.
///
/// Each cell contributes its most recent timestamp over both polarities when
/// it is no further than `dt_max_us` from `t`. The center is always `(0, 0, 0)`.
pub fn collect_support(
    sae: &Sae,
    x: usize,
    y: usize,
    t: Timestamp,
    dt_max_us: u64,
) -> Result<SupportPoints, PlaneError> {
    let r = TRACK_RADIUS;
    if !sae.geometry().window_fits(x, y, r) {
        return Err(PlaneError::BorderViolation { x, y });
    }
    let mut points = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    points.push(SpacePoint::default());
    for sy in y - r..=y + r {
        for sx in x - r..=x + r {
            if sx == x && sy == y {
                continue;
            }
            let Some(ts) = sae.latest(sx, sy) else {
                continue;
            };
            if ts.abs_diff(t) > dt_max_us {
                continue;
            }
            points.push(SpacePoint::new(
                sx as f64 - x as f64,
                sy as f64 - y as f64,
                (ts as f64 - t as f64) * 1e-6,
            ));
        }
    }
    if points.len() < MIN_SUPPORT {
        return Err(PlaneError::InsufficientSupport {
            found: points.len(),
            required: MIN_SUPPORT,
        });
    }
    Ok(SupportPoints { points })
}

/// Spherical plane parameters: unit normal
/// `(cos(theta) sin(phi), sin(theta) sin(phi), cos(phi))` and offset `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughParams {
    pub theta: f64,
    pub phi: f64,
    pub rho: f64,
}

impl HoughParams {
    pub fn normal(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(ct * sp, st * sp, cp)
    }

    /// Signed residual of `p` against the plane.
    pub fn residual(&self, p: &SpacePoint) -> f64 {
        self.normal().dot(&p.vec()) - self.rho
    }

    fn from_unit(n: Vector3<f64>, rho: f64) -> Self {
        let mut theta = n.y.atan2(n.x);
        if theta < 0.0 {
            theta += 2.0 * PI;
        }
        if theta >= 2.0 * PI {
            theta = 0.0;
        }
        HoughParams {
            theta,
            phi: n.z.clamp(-1.0, 1.0).acos(),
            rho,
        }
    }

    /// Same plane with the normal pointing toward +t, so that a plane maps to
    /// one parameter triple regardless of point order.
    pub fn canonical(&self) -> Self {
        let n = self.normal();
        let flip = n.z < 0.0 || (n.z == 0.0 && !(self.theta < PI));
        if flip {
            HoughParams::from_unit(-n, -self.rho)
        } else {
            *self
        }
    }
}

/// Plane through three points, `v = (p3 - p1) x (p1 - p2)`, `rho = v_hat . p1`.
pub fn hough_params(
    p1: &SpacePoint,
    p2: &SpacePoint,
    p3: &SpacePoint,
    eps: f64,
) -> Result<HoughParams, PlaneError> {
    let v = (p3.vec() - p1.vec()).cross(&(p1.vec() - p2.vec()));
    let norm = v.norm();
    if !(norm >= eps) {
        return Err(PlaneError::DegenerateTriple);
    }
    let n = v / norm;
    Ok(HoughParams::from_unit(n, n.dot(&p1.vec())))
}

/// Plane `a x + b y + c t = rho` with a unit normal and `c >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rho: f64,
}

impl PlaneParams {
    /// Normalizes `(a, b, c, rho)` and flips it so that `c >= 0`.
    pub fn new(a: f64, b: f64, c: f64, rho: f64) -> Self {
        let norm = (a * a + b * b + c * c).sqrt();
        let s = if c < 0.0 { -1.0 / norm } else { 1.0 / norm };
        PlaneParams {
            a: a * s,
            b: b * s,
            c: c * s,
            rho: rho * s,
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn distance(&self, p: &SpacePoint) -> f64 {
        (self.normal().dot(&p.vec()) - self.rho).abs()
    }

    fn from_hough(h: &HoughParams) -> Self {
        let n = h.normal();
        PlaneParams::new(n.x, n.y, n.z, h.rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughGrid {
    pub theta_bins: usize,
    pub phi_bins: usize,
    pub rho_bins: usize,
    pub rho_max: f64,
}

impl Default for HoughGrid {
    fn default() -> Self {
        let r = TRACK_RADIUS as f64;
        HoughGrid {
            theta_bins: 36,
            phi_bins: 18,
            rho_bins: 32,
            // 5x5 window diagonal with one unit of conditioned time
            rho_max: (r * r + r * r + 1.0).sqrt(),
        }
    }
}

impl HoughGrid {
    pub fn theta_step(&self) -> f64 {
        2.0 * PI / self.theta_bins as f64
    }

    pub fn phi_step(&self) -> f64 {
        PI / self.phi_bins as f64
    }

    pub fn rho_step(&self) -> f64 {
        2.0 * self.rho_max / self.rho_bins as f64
    }

    /// θ bins start a quarter bin below multiples of the step, so axis and
    /// diagonal directions never sit on a bin edge.
    fn theta_offset(&self) -> f64 {
        0.25 * self.theta_step()
    }

    pub fn cell_of(&self, h: &HoughParams) -> (u16, u16, u16) {
        let bin = |v: f64, step: f64, n: usize| ((v / step).floor().max(0.0) as usize).min(n - 1) as u16;
        let theta = (h.theta + self.theta_offset()).rem_euclid(2.0 * PI);
        (
            bin(theta, self.theta_step(), self.theta_bins),
            bin(h.phi, self.phi_step(), self.phi_bins),
            bin(h.rho + self.rho_max, self.rho_step(), self.rho_bins),
        )
    }

    /// Parameters at the center of a cell.
    pub fn cell_center(&self, key: (u16, u16, u16)) -> HoughParams {
        HoughParams {
            theta: ((key.0 as f64 + 0.5) * self.theta_step() - self.theta_offset())
                .rem_euclid(2.0 * PI),
            phi: (key.1 as f64 + 0.5) * self.phi_step(),
            rho: (key.2 as f64 + 0.5) * self.rho_step() - self.rho_max,
        }
    }
}

/// One accumulator cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HoughCell {
    pub key: (u16, u16, u16),
    pub votes: u32,
    normal_sum: Vector3<f64>,
    rho_sum: f64,
}

impl HoughCell {
    /// Mean of the voting planes.
    fn mean_plane(&self) -> PlaneParams {
        let n = self.normal_sum / self.votes as f64;
        PlaneParams::new(n.x, n.y, n.z, self.rho_sum / self.votes as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhtConfig {
    pub vote_threshold: u32,
    pub max_iters: usize,
    /// Support recency window; also caps the time conditioning scale.
    pub dt_max_us: u64,
    /// Inlier distance for refinement, in conditioned units.
    pub inlier_eps: f64,
    pub collinear_eps: f64,
    pub grid: HoughGrid,
}

impl Default for RhtConfig {
    fn default() -> Self {
        RhtConfig {
            vote_threshold: 3,
            max_iters: 100,
            dt_max_us: 50_000,
            inlier_eps: 0.05,
            collinear_eps: 1e-9,
            grid: HoughGrid::default(),
        }
    }
}

/// Winning cell and the planes around it, all in conditioned coordinates
/// except `plane`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhtFit {
    /// Refined plane in pixels and seconds.
    pub plane: PlaneParams,
    pub cell: HoughCell,
    pub coarse: PlaneParams,
    /// Support point indices of every triple that voted for the winning cell.
    pub voters: Vec<[usize; 3]>,
    /// Non-degenerate triples drawn.
    pub draws: usize,
}

fn condition(pts: &SupportPoints, time_scale: f64) -> Vec<SpacePoint> {
    pts.points
        .iter()
        .map(|p| SpacePoint::new(p.x, p.y, p.t / time_scale))
        .collect()
}

/// Largest `|t|` of the support, so conditioned times span `[-1, 1]` like the
/// pixel offsets. Falls back to `dt_max` when every point is simultaneous.
fn time_scale(pts: &SupportPoints, dt_max_us: u64) -> f64 {
    let dt_max = dt_max_us as f64 * 1e-6;
    let span = pts.points.iter().fold(0.0f64, |m, p| m.max(p.t.abs()));
    if span > 0.0 {
        span.min(dt_max)
    } else {
        dt_max
    }
}

/// Fits a plane to `pts`; the first point is the event-corner.
pub fn rht_fit<R: Rng + ?Sized>(
    pts: &SupportPoints,
    cfg: &RhtConfig,
    rng: &mut R,
) -> Result<PlaneParams, PlaneError> {
    rht_fit_detailed(pts, cfg, rng).map(|f| f.plane)
}

pub fn rht_fit_detailed<R: Rng + ?Sized>(
    pts: &SupportPoints,
    cfg: &RhtConfig,
    rng: &mut R,
) -> Result<RhtFit, PlaneError> {
    let n = pts.len();
    if n < MIN_SUPPORT {
        return Err(PlaneError::InsufficientSupport {
            found: n,
            required: MIN_SUPPORT,
        });
    }
    let scale = time_scale(pts, cfg.dt_max_us);
    let cond = condition(pts, scale);
    let grid = &cfg.grid;
    let mut cells: Vec<HoughCell> = Vec::new();
    let mut voters: Vec<((u16, u16, u16), [usize; 3])> = Vec::new();
    let mut draws = 0;
    // a repeated pair carries no new evidence and is skipped
    let mut seen = vec![false; n * n];
    let mut unseen_pairs = (n - 1) * (n - 2) / 2;
    // skipped draws do not count, but a fully collinear set must still end
    let draw_cap = cfg.max_iters.saturating_mul(4).max(1);

    for _ in 0..draw_cap {
        if draws >= cfg.max_iters || unseen_pairs == 0 {
            break;
        }
        let i = rng.gen_range(1..n);
        let mut j = rng.gen_range(1..n - 1);
        if j >= i {
            j += 1;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        if seen[lo * n + hi] {
            continue;
        }
        seen[lo * n + hi] = true;
        unseen_pairs -= 1;
        let h = match hough_params(&cond[0], &cond[i], &cond[j], cfg.collinear_eps) {
            Ok(h) => h.canonical(),
            Err(_) => continue,
        };
        draws += 1;
        let key = grid.cell_of(&h);
        voters.push((key, [0, i, j]));
        let idx = match cells.iter().position(|c| c.key == key) {
            Some(idx) => idx,
            None => {
                cells.push(HoughCell {
                    key,
                    votes: 0,
                    normal_sum: Vector3::zeros(),
                    rho_sum: 0.0,
                });
                cells.len() - 1
            }
        };
        let cell = &mut cells[idx];
        cell.votes += 1;
        cell.normal_sum += h.normal();
        cell.rho_sum += h.rho;
        if cell.votes >= cfg.vote_threshold {
            let cell = cell.clone();
            let coarse = cell.mean_plane();
            let mut refined = coarse;
            for _ in 0..3 {
                let next = refine_plane(&cond, &refined, cfg.inlier_eps);
                if next == refined {
                    break;
                }
                refined = next;
            }
            let plane = PlaneParams::new(refined.a, refined.b, refined.c / scale, refined.rho);
            let voters = voters
                .into_iter()
                .filter(|(k, _)| *k == cell.key)
                .map(|(_, v)| v)
                .collect();
            return Ok(RhtFit {
                plane,
                cell,
                coarse,
                voters,
                draws,
            });
        }
    }
    Err(PlaneError::NoConsensus {
        threshold: cfg.vote_threshold,
        iters: draws,
    })
}

/// Total-least-squares plane over the points within `eps` of `coarse`.
///
/// Returns `coarse` unchanged when fewer than three inliers remain.
pub fn refine_plane(pts: &[SpacePoint], coarse: &PlaneParams, eps: f64) -> PlaneParams {
    let inliers: Vec<Vector3<f64>> = pts
        .iter()
        .filter(|p| coarse.distance(p) <= eps)
        .map(|p| p.vec())
        .collect();
    if inliers.len() < 3 {
        return *coarse;
    }
    let centroid = inliers.iter().sum::<Vector3<f64>>() / inliers.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &inliers {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (mut min_i, mut min_v) = (0, f64::INFINITY);
    for (i, v) in eig.eigenvalues.iter().enumerate() {
        if *v < min_v {
            min_v = *v;
            min_i = i;
        }
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(min_i).into_owned();
    // a zero eigen-gap means the inliers do not pin down a single plane
    let mut sorted: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    if sorted[1] <= sorted[0] + 1e-12 * sorted[2].max(1e-300) {
        return *coarse;
    }
    if n.dot(&coarse.normal()) < 0.0 {
        n = -n;
    }
    PlaneParams::new(n.x, n.y, n.z, n.dot(&centroid))
}

impl From<HoughParams> for PlaneParams {
    fn from(h: HoughParams) -> Self {
        PlaneParams::from_hough(&h)
    }
}
