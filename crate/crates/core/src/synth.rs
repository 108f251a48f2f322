//! Deterministic synthetic lane scenes and a noisy stand-in for network
//! predictions.
//!
//! Randomness comes from ChaCha8 ([`RNG_ALGORITHM`]) seeded with
//! `seed_from_u64`, so a corpus is reproducible from its configuration alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{response_range, CanvasDims, Lane};
use crate::num::{Real, Vec2};
use crate::targets::{gaussian_stamp, Heatmap, TargetSet};

/// Name of the generator behind every random draw, recorded in emitted configs.
pub const RNG_ALGORITHM: &str = "ChaCha8";

/// Curve sampling step in pixels.
pub const SAMPLE_STEP_PX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub canvas: CanvasDims,
    pub lanes_min: usize,
    pub lanes_max: usize,
    /// Upper bound on lane curvature in 1/px.
    pub curvature_max: f64,
    /// Share of lanes meeting the bottom border near a corner at a shallow angle.
    pub corner_lane_fraction: f64,
    pub horizontal_lane_fraction: f64,
    pub seed: u64,
    /// Lanes are redrawn until they keep at least this distance from each
    /// other; failing that, the draw farthest from the others is kept.
    pub min_lane_separation: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            canvas: CanvasDims { w: 800, h: 320 },
            lanes_min: 2,
            lanes_max: 4,
            curvature_max: 0.002,
            corner_lane_fraction: 0.25,
            horizontal_lane_fraction: 0.1,
            seed: 0,
            min_lane_separation: 32.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        CanvasDims::new(self.canvas.w, self.canvas.h)?;
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.corner_lane_fraction) || !frac(self.horizontal_lane_fraction) {
            return domain("lane fractions must lie in [0, 1]");
        }
        if self.corner_lane_fraction + self.horizontal_lane_fraction > 1.0 + 1e-12 {
            return domain("corner and horizontal lane fractions sum above 1");
        }
        if self.lanes_min > self.lanes_max {
            return domain(format!(
                "lanes_min {} exceeds lanes_max {}",
                self.lanes_min, self.lanes_max
            ));
        }
        if !(self.curvature_max >= 0.0 && self.curvature_max.is_finite()) {
            return domain("curvature_max must be finite and non-negative");
        }
        if !(self.min_lane_separation >= 0.0 && self.min_lane_separation.is_finite()) {
            return domain("min_lane_separation must be finite and non-negative");
        }
        Ok(())
    }

    /// Same configuration with the seed advanced by `k`, for scene `k` of a corpus.
    pub fn for_scene(&self, k: usize) -> Self {
        Self {
            seed: self.seed.wrapping_add(k as u64),
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LaneKind {
    Regular,
    Corner,
    Horizontal,
}

// Quadratic Bézier control points in f64 pixels.
type Bezier = [[f64; 2]; 3];

fn sample_bezier(b: &Bezier) -> Vec<[f64; 2]> {
    let leg = |p: [f64; 2], q: [f64; 2]| (q[0] - p[0]).hypot(q[1] - p[1]);
    // |B'(t)| ≤ 2·max leg, so this many steps keeps every chord within the step
    let max_leg = leg(b[0], b[1]).max(leg(b[1], b[2]));
    let n = ((2.0 * max_leg / SAMPLE_STEP_PX).ceil() as usize).max(1);
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (u, v, w) = ((1.0 - t) * (1.0 - t), 2.0 * (1.0 - t) * t, t * t);
        let p = [
            u * b[0][0] + v * b[1][0] + w * b[2][0],
            u * b[0][1] + v * b[1][1] + w * b[2][1],
        ];
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    pts
}

// Scene-wide road layout: every lane heads for the vanishing point and shares
// one bend, so `x(y) = vx + (x0 - vx)(y - vy)/(h - vy) + k(h - y)²`. Two
// such lanes differ by a term linear in `y`, hence never cross below `vy`.
#[derive(Clone, Copy, Debug)]
struct Road {
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    k: f64,
}

impl Road {
    fn draw(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Self {
        let (w, h) = (f64::from(cfg.canvas.w), f64::from(cfg.canvas.h));
        Self {
            w,
            h,
            vx: w * rng.random_range(0.45..=0.55),
            vy: h * rng.random_range(0.38..=0.45),
            // x''(y) = 2k bounds the curvature of every lane
            k: rng.random_range(-1.0..=1.0) * cfg.curvature_max / 2.0,
        }
    }

    fn x_at(&self, x0: f64, y: f64) -> f64 {
        self.vx
            + (x0 - self.vx) * (y - self.vy) / (self.h - self.vy)
            + self.k * (self.h - y).powi(2)
    }

    /// Bottom-border crossing `x0` that leaves the border at 30° minus a pixel,
    /// i.e. the innermost corner-lane start on the left.
    fn corner_limit(&self) -> f64 {
        self.vx - (self.h - self.vy) * 3f64.sqrt() - 1.0
    }
}

// Lane along the road from y = h up to `y_end`, as a quadratic Bézier in
// (x, y) with y linear in the parameter, cut to the canvas.
fn trace_lane(road: &Road, x0: f64, y_end: f64) -> Vec<[f64; 2]> {
    let p0 = [x0, road.h];
    let p2 = [road.x_at(x0, y_end), y_end];
    let ym = (road.h + y_end) / 2.0;
    // middle control point from the midpoint value of a quadratic
    let p1 = [2.0 * road.x_at(x0, ym) - (p0[0] + p2[0]) / 2.0, ym];
    let pts = sample_bezier(&[p0, p1, p2]);
    clip_to_canvas(&pts, road.w)
}

// Keeps the first run of points with 0 ≤ x ≤ w, ending it exactly on the border.
fn clip_to_canvas(pts: &[[f64; 2]], w: f64) -> Vec<[f64; 2]> {
    let inside = |p: &[f64; 2]| (0.0..=w).contains(&p[0]);
    let cross = |a: [f64; 2], b: [f64; 2]| {
        let edge = if a[0] < 0.0 || b[0] < 0.0 { 0.0 } else { w };
        let u = (edge - a[0]) / (b[0] - a[0]);
        [edge, a[1] + u * (b[1] - a[1])]
    };
    let Some(first) = pts.iter().position(inside) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    if first > 0 {
        out.push(cross(pts[first - 1], pts[first]));
    }
    for i in first..pts.len() {
        if !inside(&pts[i]) {
            out.push(cross(pts[i - 1], pts[i]));
            break;
        }
        out.push(pts[i]);
    }
    out
}

fn draw_lane(rng: &mut ChaCha8Rng, kind: LaneKind, road: &Road) -> Vec<[f64; 2]> {
    let (w, h) = (road.w, road.h);
    let left = rng.random_bool(0.5);
    let mirror = |x: f64| if left { x } else { w - x };
    let reach = rng.random_range(0.15..=0.4);
    match kind {
        LaneKind::Regular => {
            let x0 = rng.random_range(0.1 * w..=0.9 * w);
            trace_lane(road, x0, road.vy + reach * (h - road.vy))
        }
        LaneKind::Corner => {
            let limit = if left {
                road.corner_limit()
            } else {
                w - Road {
                    vx: w - road.vx,
                    ..*road
                }
                .corner_limit()
            };
            let inner = if left { limit } else { w - limit };
            let x0 = mirror(rng.random_range(0.0..=1.0) * inner.max(0.0));
            trace_lane(road, x0, road.vy + reach * (h - road.vy))
        }
        LaneKind::Horizontal => {
            // enters through a side border, rising gently toward the vanishing point
            let y0 = road.vy + rng.random_range(0.25..=0.9) * (h - road.vy);
            let edge = mirror(0.0);
            let x0 = road.vx + (edge - road.vx) * (h - road.vy) / (y0 - road.vy);
            trace_lane(road, x0, road.vy + reach * (y0 - road.vy))
        }
    }
}

fn to_lane<T: Real>(pts: &[[f64; 2]], canvas: CanvasDims) -> Option<Lane<T>> {
    let mut out: Vec<Vec2<T>> = Vec::with_capacity(pts.len());
    for p in pts {
        let q = canvas.clamp(Vec2::<T>::from_f64(*p));
        if out.last() != Some(&q) {
            out.push(q);
        }
    }
    let lane = Lane::new(out).ok()?;
    Lane::new(lane.bottom_first()).ok()
}

const PLACEMENT_ATTEMPTS: usize = 100;

/// Generates one scene of quadratic Bézier lanes sampled every ≤ 2 px.
///
/// Lanes share a vanishing point and a bend, so they never cross. Corner lanes
/// meet the bottom border near a corner below 30°; horizontal lanes enter
/// through a side border and rise gently.
pub fn gen_scene<T: Real>(cfg: &SceneConfig) -> Result<Vec<Lane<T>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = rng.random_range(cfg.lanes_min..=cfg.lanes_max);
    let road = Road::draw(&mut rng, cfg);
    let min_len = 0.1 * road.h;
    let mut lanes: Vec<Lane<T>> = Vec::with_capacity(count);
    let sep = T::lit(cfg.min_lane_separation);
    for _ in 0..count {
        let u: f64 = rng.random();
        let kind = if u < cfg.corner_lane_fraction {
            LaneKind::Corner
        } else if u < cfg.corner_lane_fraction + cfg.horizontal_lane_fraction {
            LaneKind::Horizontal
        } else {
            LaneKind::Regular
        };
        // without a clear draw, the one farthest from the placed lanes is kept
        let mut best: Option<(T, Lane<T>)> = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let pts = draw_lane(&mut rng, kind, &road);
            let Some(lane) = to_lane::<T>(&pts, cfg.canvas) else {
                continue;
            };
            if lane.length().to_f64_lossy() < min_len {
                continue;
            }
            let gap = lanes
                .iter()
                .flat_map(|other| {
                    lane.points()
                        .iter()
                        .step_by(4)
                        .map(|p| other.distance_to(*p))
                })
                .fold(T::infinity(), T::min);
            if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                best = Some((gap, lane));
            }
            if gap >= sep {
                break;
            }
        }
        lanes.extend(best.map(|(_, lane)| lane));
    }
    Ok(lanes)
}

/// `n` scenes with seeds `seed, seed + 1, …`.
pub fn gen_corpus<T: Real>(cfg: &SceneConfig, n: usize) -> Result<Vec<Vec<Lane<T>>>> {
    (0..n).map(|k| gen_scene(&cfg.for_scene(k))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Additive noise standard deviation. Instance masks use it directly;
    /// keypoint maps scale it by the peak of a single keypoint kernel.
    pub gaussian_sigma: f64,
    pub dropout_prob: f64,
    /// Box blur radius in cells.
    pub blur_radius: usize,
    pub seed: u64,
    /// Stretches each keypoint kernel along the guide tangent: the added
    /// standard deviation is this multiple of the response range `2d / sin α`.
    /// 0 keeps the encoded kernels.
    pub response_scatter: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.0,
            dropout_prob: 0.0,
            blur_radius: 0,
            seed: 0,
            response_scatter: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return domain("gaussian_sigma must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return domain("dropout_prob must lie in [0, 1]");
        }
        if !(self.response_scatter >= 0.0 && self.response_scatter.is_finite()) {
            return domain("response_scatter must be finite and non-negative");
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.gaussian_sigma == 0.0
            && self.dropout_prob == 0.0
            && self.blur_radius == 0
            && self.response_scatter == 0.0
    }

    pub fn for_scene(&self, k: usize) -> Self {
        Self {
            seed: self.seed.wrapping_add(k as u64),
            ..*self
        }
    }
}

/// Keypoint map whose kernels are stretched along the guide tangent in
/// proportion to the response range at each origin's grazing angle.
pub fn scatter_keypoints<T: Real>(t: &TargetSet<T>, scatter: T) -> Heatmap<T> {
    let mut heat = Heatmap::zeros(t.grid);
    let cfg = &t.config;
    let stride = t.grid.stride_f::<T>();
    for inst in &t.instances {
        let o = &inst.origin;
        let range = response_range(cfg.d, o.alpha).expect("validated d, clamped angle") / stride;
        let spread = scatter * range;
        let along = cfg.sigma.hypot(spread);
        let stamp = gaussian_stamp(
            &t.grid,
            t.grid.to_grid(o.origin),
            o.guide_tangent,
            along,
            cfg.sigma,
            cfg.kernel_radius_sigmas,
        );
        heat.max_stamp(&stamp);
    }
    heat
}

fn perturb<T: Real>(map: &mut Heatmap<T>, noise: &NoiseConfig, scale: f64, stream: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(stream);
    if noise.gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.gaussian_sigma * scale).expect("finite sigma");
        for v in map.values_mut() {
            let n = T::lit(normal.sample(&mut rng));
            *v = (*v + n).max(T::zero());
        }
    }
    if noise.dropout_prob > 0.0 {
        for v in map.values_mut() {
            if rng.random_bool(noise.dropout_prob) {
                *v = T::zero();
            }
        }
    }
    if noise.blur_radius > 0 {
        box_blur(map, noise.blur_radius);
    }
}

/// Separable mean filter over a `(2r+1)²` window clipped at the borders.
pub fn box_blur<T: Real>(map: &mut Heatmap<T>, radius: usize) {
    let (rows, cols) = (map.rows(), map.cols());
    let mut tmp = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (lo, hi) = (c.saturating_sub(radius), (c + radius).min(cols - 1));
            let s: T = (lo..=hi).map(|cc| map.get(r, cc)).sum();
            tmp[r * cols + c] = s / T::from_usize_lossy(hi - lo + 1);
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let (lo, hi) = (r.saturating_sub(radius), (r + radius).min(rows - 1));
            let s: T = (lo..=hi).map(|rr| tmp[rr * cols + c]).sum();
            map.set(r, c, s / T::from_usize_lossy(hi - lo + 1));
        }
    }
}

/// Noisy copy of `t`: optional response scatter, then additive Gaussian noise
/// clamped at zero, cell dropout and box blur, each map drawn from its own
/// RNG stream. Offsets are left untouched.
pub fn corrupt_targets<T: Real>(t: &TargetSet<T>, noise: &NoiseConfig) -> Result<TargetSet<T>> {
    noise.validate()?;
    let mut out = t.clone();
    if noise.is_identity() {
        return Ok(out);
    }
    if noise.response_scatter > 0.0 {
        out.keypoints = scatter_keypoints(t, T::lit(noise.response_scatter));
    }
    let unit = t.keypoint_unit().to_f64_lossy();
    perturb(&mut out.keypoints, noise, unit, 0);
    for (i, inst) in out.instances.iter_mut().enumerate() {
        perturb(&mut inst.mask, noise, 1.0, i as u64 + 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{lane_origin, GuideLine};
    use crate::targets::{encode_scene, GridSpec, TargetConfig};

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig {
            seed: 42,
            ..SceneConfig::default()
        };
        let a = gen_scene::<f64>(&cfg).unwrap();
        let b = gen_scene::<f64>(&cfg).unwrap();
        assert_eq!(a, b);
        let c = gen_scene::<f64>(&cfg.for_scene(1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_lanes_gives_empty_scene() {
        let cfg = SceneConfig {
            lanes_min: 0,
            lanes_max: 0,
            ..SceneConfig::default()
        };
        assert!(gen_scene::<f64>(&cfg).unwrap().is_empty());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SceneConfig {
                lanes_min: 3,
                lanes_max: 2,
                ..SceneConfig::default()
            },
            SceneConfig {
                corner_lane_fraction: 0.7,
                horizontal_lane_fraction: 0.5,
                ..SceneConfig::default()
            },
            SceneConfig {
                corner_lane_fraction: -0.1,
                ..SceneConfig::default()
            },
        ];
        for cfg in bad {
            assert!(gen_scene::<f64>(&cfg).is_err());
        }
    }

    #[test]
    fn lanes_are_sampled_finely_and_stay_on_canvas() {
        let cfg = SceneConfig {
            lanes_min: 6,
            lanes_max: 6,
            seed: 7,
            ..SceneConfig::default()
        };
        for lane in gen_scene::<f64>(&cfg).unwrap() {
            lane.check_canvas(cfg.canvas).unwrap();
            for (a, b) in lane.segments() {
                assert!(a.dist(b) <= SAMPLE_STEP_PX + 1e-9);
            }
            assert!(lane.points()[0].y >= lane.points()[lane.len() - 1].y);
        }
    }

    #[test]
    fn corner_lanes_graze_the_rectangle() {
        let cfg = SceneConfig {
            lanes_min: 10,
            lanes_max: 10,
            corner_lane_fraction: 1.0,
            horizontal_lane_fraction: 0.0,
            seed: 3,
            ..SceneConfig::default()
        };
        let lanes = gen_scene::<f64>(&cfg).unwrap();
        assert_eq!(lanes.len(), 10);
        let rect = GuideLine::rectangle(cfg.canvas);
        for lane in &lanes {
            assert!(lane_origin(lane, &rect).alpha < 30.0);
        }
    }

    fn targets() -> TargetSet<f64> {
        let cfg = SceneConfig {
            seed: 11,
            ..SceneConfig::default()
        };
        let lanes = gen_scene::<f64>(&cfg).unwrap();
        let grid = GridSpec::new(cfg.canvas, 8).unwrap();
        let g = GuideLine::curved(cfg.canvas, 0.5, 0.4).unwrap();
        encode_scene(&lanes, &g, &grid, &TargetConfig::default()).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = targets();
        assert_eq!(corrupt_targets(&t, &NoiseConfig::default()).unwrap(), t);
    }

    #[test]
    fn full_dropout_zeroes_everything() {
        let t = targets();
        let n = NoiseConfig {
            dropout_prob: 1.0,
            blur_radius: 1,
            ..NoiseConfig::default()
        };
        let out = corrupt_targets(&t, &n).unwrap();
        assert_eq!(out.keypoints.max_value(), 0.0);
        assert!(out.instances.iter().all(|i| i.mask.max_value() == 0.0));
        assert_eq!(out.offsets, t.offsets);
    }

    #[test]
    fn noise_is_seeded() {
        let t = targets();
        let n = NoiseConfig {
            gaussian_sigma: 0.1,
            dropout_prob: 0.05,
            blur_radius: 1,
            seed: 5,
            ..NoiseConfig::default()
        };
        let a = corrupt_targets(&t, &n).unwrap();
        assert_eq!(a, corrupt_targets(&t, &n).unwrap());
        assert_ne!(a, corrupt_targets(&t, &n.for_scene(1)).unwrap());
        assert!(a.keypoints.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn scatter_keeps_unit_mass_and_lowers_grazing_peaks() {
        let t = targets();
        let spread = scatter_keypoints(&t, 1.0);
        assert!(spread.max_value() <= t.keypoints.max_value() + 1e-12);
        let n = t.instances.len() as f64;
        assert!(spread.sum() <= n + 1e-9);
    }
}
