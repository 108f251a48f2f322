//! Guide lines, lane origins and grazing angles.
//!
//! A guide line is the curve every lane origin is constrained to. Two kinds
//! are provided:
//!
//! - [`GuideKind::Rectangle`]: the closed image border, walked from the top
//!   left corner down the left side, along the bottom, up the right side and
//!   back along the top.
//! - [`GuideKind::Curved`]: a U shape made of the left border from `(0, 0)`
//!   to `(0, cy·h)`, the lower half of the ellipse centred at `(cx·w, cy·h)`
//!   with semi-axes `cx·w` and `cy·h`, and the right border back up to
//!   `(w, 0)`.
//!
//! Both are parameterized by arc length `t ∈ [0, L)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::num::{closest_on_segment, integrate, Real, Vec2};

/// Smallest grazing angle reported, in degrees. A lane exactly parallel to
/// the guide line would otherwise produce 0, outside `(0, 90]`.
pub const MIN_GRAZING_DEG: f64 = 1e-6;

const PARAM_EPS: f64 = 1e-9;
const ARC_TABLE_INTERVALS: usize = 128;
const ARC_REL_TOL: f64 = 1e-10;

/// Image or feature-map size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanvasDims {
    pub w: u32,
    pub h: u32,
}

impl CanvasDims {
    pub fn new(w: u32, h: u32) -> Result<Self> {
        if w < 8 || h < 8 {
            return domain(format!("canvas {w}x{h} is smaller than 8x8"));
        }
        Ok(Self { w, h })
    }

    pub fn width<T: Real>(&self) -> T {
        T::lit(self.w as f64)
    }

    pub fn height<T: Real>(&self) -> T {
        T::lit(self.h as f64)
    }

    pub fn contains<T: Real>(&self, p: Vec2<T>) -> bool {
        p.x >= T::zero() && p.y >= T::zero() && p.x <= self.width() && p.y <= self.height()
    }

    /// Clamps a point into `[0, w] × [0, h]`.
    pub fn clamp<T: Real>(&self, p: Vec2<T>) -> Vec2<T> {
        Vec2::new(
            p.x.max(T::zero()).min(self.width()),
            p.y.max(T::zero()).min(self.height()),
        )
    }
}

/// Ordered polyline of sub-pixel image points.
#[derive(Clone, Debug, PartialEq)]
pub struct Lane<T> {
    points: Vec<Vec2<T>>,
}

impl<T: Real> Lane<T> {
    /// Builds a lane from at least two finite points with no repeated neighbours.
    pub fn new(points: Vec<Vec2<T>>) -> Result<Self> {
        if points.len() < 2 {
            return domain(format!(
                "lane needs at least 2 points, got {}",
                points.len()
            ));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return domain(format!("lane point {i} is not finite"));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return domain(format!("lane points {i} and {} coincide", i + 1));
        }
        Ok(Self { points })
    }

    /// Builds a lane and checks every point lies on `canvas`.
    pub fn on_canvas(points: Vec<Vec2<T>>, canvas: CanvasDims) -> Result<Self> {
        let lane = Self::new(points)?;
        lane.check_canvas(canvas)?;
        Ok(lane)
    }

    pub fn check_canvas(&self, canvas: CanvasDims) -> Result<()> {
        match self.points.iter().position(|p| !canvas.contains(*p)) {
            Some(i) => domain(format!(
                "lane point {i} ({}, {}) outside {}x{} canvas",
                self.points[i].x, self.points[i].y, canvas.w, canvas.h
            )),
            None => Ok(()),
        }
    }

    pub fn points(&self) -> &[Vec2<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec2<T>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vec2<T>, Vec2<T>)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    /// Points ordered so the endpoint with the larger `y` comes first.
    pub fn bottom_first(&self) -> Vec<Vec2<T>> {
        let mut pts = self.points.clone();
        if pts[pts.len() - 1].y > pts[0].y {
            pts.reverse();
        }
        pts
    }

    /// Shortest distance from `p` to the polyline.
    pub fn distance_to(&self, p: Vec2<T>) -> T {
        self.segments()
            .map(|(a, b)| crate::num::dist_sq_to_segment(p, a, b))
            .fold(T::infinity(), T::min)
            .sqrt()
    }

    pub fn length(&self) -> T {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    /// Lane with every point shifted by `delta`.
    pub fn translated(&self, delta: Vec2<T>) -> Self {
        Self {
            points: self.points.iter().map(|p| *p + delta).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuideKind {
    #[serde(alias = "rect")]
    Rectangle,
    Curved,
}

/// Lower-half elliptical arc `p(θ) = (ex − a·cos θ, ey + b·sin θ)`, `θ ∈ [0, θ_end]`.
#[derive(Clone, Debug)]
pub struct EllipseArc<T> {
    center: Vec2<T>,
    a: T,
    b: T,
    theta_end: T,
    // Cumulative arc length at uniformly spaced θ knots.
    knot_step: T,
    cum: Vec<T>,
}

impl<T: Real> EllipseArc<T> {
    fn new(center: Vec2<T>, a: T, b: T, theta_end: T) -> Self {
        let n = ARC_TABLE_INTERVALS;
        let knot_step = theta_end / T::from_usize_lossy(n);
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(T::zero());
        let mut acc = T::zero();
        for k in 0..n {
            let lo = knot_step * T::from_usize_lossy(k);
            let hi = if k + 1 == n {
                theta_end
            } else {
                lo + knot_step
            };
            acc += integrate(&|th| Self::speed_ab(a, b, th), lo, hi, T::lit(ARC_REL_TOL));
            cum.push(acc);
        }
        Self {
            center,
            a,
            b,
            theta_end,
            knot_step,
            cum,
        }
    }

    fn speed_ab(a: T, b: T, th: T) -> T {
        (a * th.sin()).hypot(b * th.cos())
    }

    fn speed(&self, th: T) -> T {
        Self::speed_ab(self.a, self.b, th)
    }

    pub fn length(&self) -> T {
        self.cum[self.cum.len() - 1]
    }

    pub fn point_at_angle(&self, th: T) -> Vec2<T> {
        Vec2::new(
            self.center.x - self.a * th.cos(),
            self.center.y + self.b * th.sin(),
        )
    }

    pub fn tangent_at_angle(&self, th: T) -> Vec2<T> {
        Vec2::new(self.a * th.sin(), self.b * th.cos())
            .normalized()
            .expect("ellipse semi-axes are positive")
    }

    /// Implicit ellipse equation residual: `((x−ex)/a)² + ((y−ey)/b)² − 1`.
    pub fn residual(&self, p: Vec2<T>) -> T {
        let u = (p.x - self.center.x) / self.a;
        let v = (p.y - self.center.y) / self.b;
        u * u + v * v - T::one()
    }

    fn knot(&self, k: usize) -> T {
        if k >= ARC_TABLE_INTERVALS {
            self.theta_end
        } else {
            self.knot_step * T::from_usize_lossy(k)
        }
    }

    /// Arc length from `θ = 0` to `th`.
    pub fn arc_length_to(&self, th: T) -> T {
        let th = th.max(T::zero()).min(self.theta_end);
        let k = (th / self.knot_step)
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(ARC_TABLE_INTERVALS - 1);
        let lo = self.knot(k);
        self.cum[k] + integrate(&|x| self.speed(x), lo, th, T::lit(ARC_REL_TOL))
    }

    /// Inverse of [`Self::arc_length_to`].
    pub fn angle_at_length(&self, s: T) -> T {
        let s = s.max(T::zero()).min(self.length());
        let k = match self.cum.partition_point(|c| *c <= s) {
            0 => 0,
            i => (i - 1).min(ARC_TABLE_INTERVALS - 1),
        };
        let (lo, hi) = (self.knot(k), self.knot(k + 1));
        let target = s - self.cum[k];
        let mut th = lo + target / self.speed(lo).max(T::epsilon());
        th = th.max(lo).min(hi);
        let tol = T::lit(1e-13) * self.length().max(T::one());
        for _ in 0..40 {
            let g = integrate(&|x| self.speed(x), lo, th, T::lit(ARC_REL_TOL)) - target;
            if g.abs() <= tol {
                break;
            }
            let next = th - g / self.speed(th).max(T::epsilon());
            th = next.max(lo).min(hi);
        }
        th
    }

    /// Angle of the arc point closest to `p`.
    fn project_angle(&self, p: Vec2<T>) -> T {
        let n = 256usize;
        let step = self.theta_end / T::from_usize_lossy(n);
        let d2 = |th: T| (self.point_at_angle(th) - p).norm_sq();
        let mut best = 0usize;
        let mut best_d = d2(T::zero());
        for k in 1..=n {
            let d = d2(step * T::from_usize_lossy(k));
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        // golden-section refinement on the bracketing cells
        let mut lo = step * T::from_usize_lossy(best.saturating_sub(1));
        let mut hi = (step * T::from_usize_lossy(best + 1)).min(self.theta_end);
        let phi = T::lit(0.618_033_988_749_895);
        for _ in 0..80 {
            let m1 = hi - (hi - lo) * phi;
            let m2 = lo + (hi - lo) * phi;
            if d2(m1) <= d2(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        (lo + hi) * T::lit(0.5)
    }

    /// Crossings of segment `p0 → p1` with the arc as `(segment param, θ)`.
    fn intersect(&self, p0: Vec2<T>, p1: Vec2<T>) -> Vec<(T, T)> {
        let eps = T::lit(PARAM_EPS);
        let d = p1 - p0;
        let x0 = (p0.x - self.center.x) / self.a;
        let y0 = (p0.y - self.center.y) / self.b;
        let dx = d.x / self.a;
        let dy = d.y / self.b;
        let qa = dx * dx + dy * dy;
        let qb = T::lit(2.0) * (x0 * dx + y0 * dy);
        let qc = x0 * x0 + y0 * y0 - T::one();
        let mut roots = Vec::with_capacity(2);
        if qa <= T::zero() {
            return roots;
        }
        let disc = qb * qb - T::lit(4.0) * qa * qc;
        if disc < T::zero() {
            return roots;
        }
        let sq = disc.sqrt();
        // numerically stable pair
        let q = if qb >= T::zero() {
            -(qb + sq) * T::lit(0.5)
        } else {
            (sq - qb) * T::lit(0.5)
        };
        let mut cand = vec![q / qa];
        if q != T::zero() {
            cand.push(qc / q);
        }
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cand.dedup_by(|a, b| (*a - *b).abs() <= eps);
        for s in cand {
            if s < -eps || s > T::one() + eps {
                continue;
            }
            let s = s.max(T::zero()).min(T::one());
            let p = p0 + d * s;
            let v = (p.y - self.center.y) / self.b;
            let u = (self.center.x - p.x) / self.a;
            let th = v.atan2(u);
            let ang_eps = T::lit(1e-9);
            if th < -ang_eps || th > self.theta_end + ang_eps {
                continue;
            }
            roots.push((s, th.max(T::zero()).min(self.theta_end)));
        }
        roots
    }
}

/// One parametric piece of a guide line.
#[derive(Clone, Debug)]
pub enum Piece<T> {
    Line { start: Vec2<T>, end: Vec2<T> },
    Arc(EllipseArc<T>),
}

impl<T: Real> Piece<T> {
    pub fn length(&self) -> T {
        match self {
            Piece::Line { start, end } => start.dist(*end),
            Piece::Arc(arc) => arc.length(),
        }
    }

    /// Point and unit tangent at arc length `s` from the start of the piece.
    pub fn eval(&self, s: T) -> (Vec2<T>, Vec2<T>) {
        match self {
            Piece::Line { start, end } => {
                let dir = (*end - *start).normalized().expect("non-degenerate piece");
                (*start + dir * s, dir)
            }
            Piece::Arc(arc) => {
                let th = arc.angle_at_length(s);
                (arc.point_at_angle(th), arc.tangent_at_angle(th))
            }
        }
    }

    pub fn start(&self) -> Vec2<T> {
        self.eval(T::zero()).0
    }

    pub fn end(&self) -> Vec2<T> {
        match self {
            Piece::Line { end, .. } => *end,
            Piece::Arc(arc) => arc.point_at_angle(arc.theta_end),
        }
    }

    /// How far `p` is from satisfying the piece's defining equation: signed
    /// distance from the supporting line, or the ellipse residual.
    pub fn residual(&self, p: Vec2<T>) -> T {
        match self {
            Piece::Line { start, end } => {
                let dir = (*end - *start).normalized().expect("non-degenerate piece");
                dir.cross(p - *start)
            }
            Piece::Arc(arc) => arc.residual(p),
        }
    }

    fn intersect(&self, p0: Vec2<T>, p1: Vec2<T>) -> Vec<(T, T)> {
        match self {
            Piece::Line { start, end } => {
                let eps = T::lit(PARAM_EPS);
                let d1 = p1 - p0;
                let d2 = *end - *start;
                let denom = d1.cross(d2);
                let scale = d1.norm() * d2.norm();
                if denom.abs() <= T::lit(1e-12) * scale {
                    return Vec::new();
                }
                let w = *start - p0;
                let s = w.cross(d2) / denom;
                let u = w.cross(d1) / denom;
                if s < -eps || s > T::one() + eps || u < -eps || u > T::one() + eps {
                    return Vec::new();
                }
                let u = u.max(T::zero()).min(T::one());
                vec![(s.max(T::zero()).min(T::one()), u * d2.norm())]
            }
            Piece::Arc(arc) => arc
                .intersect(p0, p1)
                .into_iter()
                .map(|(s, th)| (s, arc.arc_length_to(th)))
                .collect(),
        }
    }

    /// Closest point as arc length within the piece.
    fn project(&self, p: Vec2<T>) -> T {
        match self {
            Piece::Line { start, end } => {
                let (_, s) = closest_on_segment(p, *start, *end);
                s * start.dist(*end)
            }
            Piece::Arc(arc) => arc.arc_length_to(arc.project_angle(p)),
        }
    }
}

/// Arc-length parameterized guide curve.
#[derive(Clone, Debug)]
pub struct GuideLine<T> {
    kind: GuideKind,
    canvas: CanvasDims,
    cx: T,
    cy: T,
    pieces: Vec<Piece<T>>,
    starts: Vec<T>,
    length: T,
}

/// Builds a guide line. `cx` and `cy` are ignored for [`GuideKind::Rectangle`].
pub fn make_guide_line<T: Real>(
    kind: GuideKind,
    canvas: CanvasDims,
    cx: T,
    cy: T,
) -> Result<GuideLine<T>> {
    match kind {
        GuideKind::Rectangle => Ok(GuideLine::rectangle(canvas)),
        GuideKind::Curved => GuideLine::curved(canvas, cx, cy),
    }
}

impl<T: Real> GuideLine<T> {
    pub fn rectangle(canvas: CanvasDims) -> Self {
        let (w, h) = (canvas.width::<T>(), canvas.height::<T>());
        let z = T::zero();
        let corners = [
            Vec2::new(z, z),
            Vec2::new(z, h),
            Vec2::new(w, h),
            Vec2::new(w, z),
            Vec2::new(z, z),
        ];
        let pieces = corners
            .windows(2)
            .map(|c| Piece::Line {
                start: c[0],
                end: c[1],
            })
            .collect();
        Self::from_pieces(
            GuideKind::Rectangle,
            canvas,
            T::lit(0.5),
            T::lit(0.5),
            pieces,
        )
    }

    pub fn curved(canvas: CanvasDims, cx: T, cy: T) -> Result<Self> {
        if !(cx > T::zero() && cx < T::one()) {
            return domain(format!("cx = {cx} must lie in (0, 1)"));
        }
        if !(cy > T::zero() && cy <= T::lit(0.5)) {
            return domain(format!("cy = {cy} must lie in (0, 0.5]"));
        }
        let (w, h) = (canvas.width::<T>(), canvas.height::<T>());
        let a = cx * w;
        let b = cy * h;
        let center = Vec2::new(a, b);
        // the ellipse spans x ∈ [0, 2a]; clip it at the right border when wider
        let theta_end = if cx > T::lit(0.5) {
            ((cx - T::one()) / cx).acos()
        } else {
            T::PI()
        };
        let arc = EllipseArc::new(center, a, b, theta_end);
        let arc_end = arc.point_at_angle(theta_end);
        let mut pieces = vec![
            Piece::Line {
                start: Vec2::new(T::zero(), T::zero()),
                end: Vec2::new(T::zero(), b),
            },
            Piece::Arc(arc),
        ];
        let mut right_start = arc_end;
        if cx < T::lit(0.5) {
            // ellipse closes short of the right border; bridge along y = cy·h
            let bridge_end = Vec2::new(w, arc_end.y);
            pieces.push(Piece::Line {
                start: arc_end,
                end: bridge_end,
            });
            right_start = bridge_end;
        } else {
            right_start.x = w;
        }
        pieces.push(Piece::Line {
            start: right_start,
            end: Vec2::new(w, T::zero()),
        });
        Ok(Self::from_pieces(GuideKind::Curved, canvas, cx, cy, pieces))
    }

    fn from_pieces(
        kind: GuideKind,
        canvas: CanvasDims,
        cx: T,
        cy: T,
        pieces: Vec<Piece<T>>,
    ) -> Self {
        let mut starts = Vec::with_capacity(pieces.len());
        let mut acc = T::zero();
        for p in &pieces {
            starts.push(acc);
            acc += p.length();
        }
        Self {
            kind,
            canvas,
            cx,
            cy,
            pieces,
            starts,
            length: acc,
        }
    }

    pub fn kind(&self) -> GuideKind {
        self.kind
    }

    pub fn canvas(&self) -> CanvasDims {
        self.canvas
    }

    pub fn cx(&self) -> T {
        self.cx
    }

    pub fn cy(&self) -> T {
        self.cy
    }

    /// Total arc length `L`.
    pub fn length(&self) -> T {
        self.length
    }

    pub fn pieces(&self) -> &[Piece<T>] {
        &self.pieces
    }

    /// Arc-length offset at which each piece begins.
    pub fn piece_starts(&self) -> &[T] {
        &self.starts
    }

    pub fn is_closed(&self) -> bool {
        self.kind == GuideKind::Rectangle
    }

    /// Point and unit tangent at arc length `t ∈ [0, L)`.
    pub fn point_and_tangent(&self, t: T) -> Result<(Vec2<T>, Vec2<T>)> {
        if !(t >= T::zero() && t < self.length) {
            return domain(format!("t = {t} outside [0, {})", self.length));
        }
        let i = self.starts.partition_point(|s| *s <= t) - 1;
        Ok(self.pieces[i].eval(t - self.starts[i]))
    }

    /// Lower ellipse branch evaluated at column `x`, for curved guide lines.
    pub fn ellipse_y_at(&self, x: T) -> Option<T> {
        let arc = self.pieces.iter().find_map(|p| match p {
            Piece::Arc(a) => Some(a),
            _ => None,
        })?;
        let u = (x - arc.center.x) / arc.a;
        if u.abs() > T::one() {
            return None;
        }
        Some(arc.center.y + arc.b * (T::one() - u * u).sqrt())
    }

    /// Residual of the ellipse equation at `p`; `None` for rectangles.
    pub fn ellipse_residual(&self, p: Vec2<T>) -> Option<T> {
        self.pieces.iter().find_map(|piece| match piece {
            Piece::Arc(a) => Some(a.residual(p)),
            _ => None,
        })
    }

    /// All crossings of segment `p0 → p1` with the curve, sorted by segment parameter.
    pub fn intersect_segment(&self, p0: Vec2<T>, p1: Vec2<T>) -> Vec<GuideHit<T>> {
        let mut hits: Vec<GuideHit<T>> = Vec::new();
        for (i, piece) in self.pieces.iter().enumerate() {
            for (s, local) in piece.intersect(p0, p1) {
                let t = self.wrap(self.starts[i] + local);
                let (point, tangent) = piece.eval(local);
                hits.push(GuideHit {
                    s,
                    t,
                    point,
                    tangent,
                });
            }
        }
        hits.sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap_or(std::cmp::Ordering::Equal));
        hits
    }

    /// Nearest point on the curve to `p`.
    pub fn project(&self, p: Vec2<T>) -> GuideHit<T> {
        let mut best: Option<(T, GuideHit<T>)> = None;
        for (i, piece) in self.pieces.iter().enumerate() {
            let local = piece.project(p);
            let (point, tangent) = piece.eval(local);
            let d = (point - p).norm_sq();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((
                    d,
                    GuideHit {
                        s: T::zero(),
                        t: self.wrap(self.starts[i] + local),
                        point,
                        tangent,
                    },
                ));
            }
        }
        best.expect("guide line has pieces").1
    }

    // keeps t inside [0, L) when a hit lands on the closing endpoint
    fn wrap(&self, t: T) -> T {
        if t >= self.length {
            if self.is_closed() {
                t - self.length
            } else {
                self.length - self.length * T::epsilon()
            }
        } else {
            t
        }
    }
}

/// A location on the guide line found by intersection or projection.
#[derive(Clone, Copy, Debug)]
pub struct GuideHit<T> {
    /// Parameter along the intersecting segment, in `[0, 1]`.
    pub s: T,
    /// Arc-length parameter on the guide line.
    pub t: T,
    pub point: Vec2<T>,
    pub tangent: Vec2<T>,
}

/// Where a lane meets its guide line and at which angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OriginRecord<T> {
    pub origin: Vec2<T>,
    pub t: T,
    pub lane_dir: Vec2<T>,
    pub guide_tangent: Vec2<T>,
    /// Grazing angle in degrees, `(0, 90]`.
    pub alpha: T,
}

/// Angle between two directions folded into `(0°, 90°]`.
pub fn grazing_angle<T: Real>(u: Vec2<T>, v: Vec2<T>) -> T {
    let deg = u.cross(v).abs().atan2(u.dot(v).abs()).to_degrees();
    deg.max(T::lit(MIN_GRAZING_DEG)).min(T::lit(90.0))
}

/// Origin of `lane` on `g`: the first crossing when walking the lane from its
/// bottom-most endpoint, or the projection of that endpoint when the lane
/// never reaches the curve.
pub fn lane_origin<T: Real>(lane: &Lane<T>, g: &GuideLine<T>) -> OriginRecord<T> {
    let pts = lane.bottom_first();
    for w in pts.windows(2) {
        if let Some(hit) = g.intersect_segment(w[0], w[1]).first() {
            let dir = (w[1] - w[0])
                .normalized()
                .expect("lane points are distinct");
            return OriginRecord {
                origin: hit.point,
                t: hit.t,
                lane_dir: dir,
                guide_tangent: hit.tangent,
                alpha: grazing_angle(dir, hit.tangent),
            };
        }
    }
    let hit = g.project(pts[0]);
    let dir = (pts[1] - pts[0])
        .normalized()
        .expect("lane points are distinct");
    OriginRecord {
        origin: hit.point,
        t: hit.t,
        lane_dir: dir,
        guide_tangent: hit.tangent,
        alpha: grazing_angle(dir, hit.tangent),
    }
}

/// Width of the heatmap response along the guide line: `2d / sin α`.
pub fn response_range<T: Real>(d: T, alpha_deg: T) -> Result<T> {
    if !(alpha_deg > T::zero() && alpha_deg <= T::lit(90.0)) {
        return domain(format!("grazing angle {alpha_deg} outside (0, 90]"));
    }
    if !(d > T::zero()) || !d.is_finite() {
        return domain(format!("response radius {d} must be positive"));
    }
    Ok(T::lit(2.0) * d / alpha_deg.to_radians().sin())
}

/// Strictly increasing angle bucket edges covering `(0°, 90°]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketEdges<T> {
    edges: Vec<T>,
}

impl<T: Real> BucketEdges<T> {
    pub fn new(edges: Vec<T>) -> Result<Self> {
        if edges.len() < 2 {
            return domain("need at least two bucket edges");
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return domain("bucket edges must be finite");
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return domain("bucket edges must be strictly increasing");
        }
        if edges[0] > T::zero() || edges[edges.len() - 1] < T::lit(90.0) {
            return domain("bucket edges must span (0, 90]");
        }
        Ok(Self { edges })
    }

    /// The `[0, 30, 60, 90]` split used for recall tables.
    pub fn thirds() -> Self {
        Self {
            edges: [0.0, 30.0, 60.0, 90.0].iter().map(|e| T::lit(*e)).collect(),
        }
    }

    pub fn edges(&self) -> &[T] {
        &self.edges
    }

    pub fn bucket_count(&self) -> usize {
        self.edges.len() - 1
    }

    /// Bucket `i` covers `(e_i, e_{i+1}]`; angles at or below the first edge land in bucket 0.
    pub fn bucket_of(&self, alpha: T) -> usize {
        let last = self.bucket_count() - 1;
        (0..=last)
            .find(|&i| alpha <= self.edges[i + 1])
            .unwrap_or(last)
    }

    pub fn bounds(&self, i: usize) -> (T, T) {
        (self.edges[i], self.edges[i + 1])
    }
}

impl<T: Real> TryFrom<Vec<T>> for BucketEdges<T> {
    type Error = Error;
    fn try_from(v: Vec<T>) -> Result<Self> {
        Self::new(v)
    }
}

/// Number of lanes per grazing-angle bucket across `scenes`.
pub fn grazing_angle_histogram<T: Real>(
    scenes: &[Vec<Lane<T>>],
    g: &GuideLine<T>,
    edges: &BucketEdges<T>,
) -> Vec<usize> {
    let mut counts = vec![0usize; edges.bucket_count()];
    for lane in scenes.iter().flatten() {
        counts[edges.bucket_of(lane_origin(lane, g).alpha)] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vec2<f64> {
        Vec2::new(x, y)
    }

    fn canvas(w: u32, h: u32) -> CanvasDims {
        CanvasDims::new(w, h).unwrap()
    }

    #[test]
    fn canvas_rejects_tiny() {
        assert!(CanvasDims::new(7, 100).is_err());
        assert!(CanvasDims::new(8, 8).is_ok());
    }

    #[test]
    fn lane_validation() {
        assert!(Lane::new(vec![v(1.0, 1.0)]).is_err());
        assert!(Lane::new(vec![v(1.0, 1.0), v(1.0, 1.0)]).is_err());
        assert!(Lane::new(vec![v(1.0, 1.0), v(f64::NAN, 1.0)]).is_err());
        assert!(Lane::on_canvas(vec![v(1.0, 1.0), v(120.0, 1.0)], canvas(100, 100)).is_err());
        assert!(Lane::on_canvas(vec![v(0.0, 0.0), v(100.0, 100.0)], canvas(100, 100)).is_ok());
    }

    #[test]
    fn curved_anchor_points() {
        let g = GuideLine::<f64>::curved(canvas(800, 320), 0.5, 0.4).unwrap();
        let p = g.pieces();
        assert_eq!(p.len(), 3);
        assert!(p[0].end().dist(v(0.0, 128.0)) < 1e-9);
        assert!(p[1].start().dist(v(0.0, 128.0)) < 1e-9);
        assert!(p[1].end().dist(v(800.0, 128.0)) < 1e-9);
        let apex = g.ellipse_y_at(400.0).unwrap();
        assert!((apex - 256.0).abs() < 1e-12);
    }

    #[test]
    fn ellipse_branch_at_quarter_width() {
        let g = GuideLine::<f64>::curved(canvas(800, 320), 0.5, 0.4).unwrap();
        let y = g.ellipse_y_at(200.0).unwrap();
        assert!((y - 238.851_251_684_406_9).abs() < 1e-9, "{y}");
        assert!(g.ellipse_residual(v(200.0, y)).unwrap().abs() < 1e-9);
    }

    #[test]
    fn curved_rejects_bad_centre() {
        let c = canvas(800, 320);
        assert!(GuideLine::<f64>::curved(c, 0.5, 0.51).is_err());
        assert!(GuideLine::<f64>::curved(c, 0.0, 0.4).is_err());
        assert!(GuideLine::<f64>::curved(c, 1.0, 0.4).is_err());
        assert!(GuideLine::<f64>::curved(c, 0.5, 0.0).is_err());
        assert!(GuideLine::<f64>::curved(c, 0.5, 0.5).is_ok());
    }

    #[test]
    fn off_centre_curves_stay_continuous() {
        for cx in [0.3, 0.7] {
            let g = GuideLine::<f64>::curved(canvas(800, 320), cx, 0.4).unwrap();
            for w in g.pieces().windows(2) {
                assert!(w[0].end().dist(w[1].start()) < 1e-9, "cx={cx}");
            }
            let last = g.pieces().last().unwrap();
            assert!(last.end().dist(v(800.0, 0.0)) < 1e-9);
        }
    }

    #[test]
    fn rectangle_perimeter_and_tangents() {
        let g = GuideLine::<f64>::rectangle(canvas(100, 100));
        assert_eq!(g.length(), 400.0);
        let (p, tan) = g.point_and_tangent(150.0).unwrap();
        assert!(p.dist(v(50.0, 100.0)) < 1e-12);
        assert!((tan.x.abs() - 1.0).abs() < 1e-12 && tan.y.abs() < 1e-12);
        assert!(g.point_and_tangent(400.0).is_err());
        assert!(g.point_and_tangent(-1.0).is_err());
    }

    #[test]
    fn curved_tangents_at_start_and_apex() {
        let g = GuideLine::<f64>::curved(canvas(800, 320), 0.5, 0.4).unwrap();
        let (p, tan) = g.point_and_tangent(0.0).unwrap();
        assert_eq!(p, v(0.0, 0.0));
        assert!(tan.x.abs() < 1e-12 && (tan.y.abs() - 1.0).abs() < 1e-12);
        let apex_t = g.piece_starts()[1] + g.pieces()[1].length() / 2.0;
        let (p, tan) = g.point_and_tangent(apex_t).unwrap();
        assert!(p.dist(v(400.0, 256.0)) < 1e-6, "{p:?}");
        assert!(tan.y.abs() < 1e-8);
    }

    #[test]
    fn vertical_lane_hits_bottom_edge_square_on() {
        let g = GuideLine::<f64>::rectangle(canvas(100, 100));
        let lane = Lane::new(vec![v(50.0, 100.0), v(50.0, 10.0)]).unwrap();
        let o = lane_origin(&lane, &g);
        assert!(o.origin.dist(v(50.0, 100.0)) < 1e-12);
        assert!((o.alpha - 90.0).abs() < 1e-9);
        assert!((o.t - 150.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_lane_grazes_at_45() {
        let g = GuideLine::<f64>::rectangle(canvas(100, 100));
        let lane = Lane::new(vec![v(20.0, 100.0), v(60.0, 60.0)]).unwrap();
        assert!((lane_origin(&lane, &g).alpha - 45.0).abs() < 1e-9);
    }

    #[test]
    fn lane_through_apex_is_perpendicular() {
        let g = GuideLine::<f64>::curved(canvas(800, 320), 0.5, 0.4).unwrap();
        let lane = Lane::new(vec![v(400.0, 320.0), v(400.0, 100.0)]).unwrap();
        let o = lane_origin(&lane, &g);
        assert!(o.origin.dist(v(400.0, 256.0)) < 1e-6);
        assert!((o.alpha - 90.0).abs() < 1e-6);
    }

    #[test]
    fn lane_is_walked_from_the_bottom() {
        let g = GuideLine::<f64>::rectangle(canvas(100, 100));
        // stored top-down; origin must still be the bottom edge crossing
        let lane = Lane::new(vec![v(50.0, 0.0), v(50.0, 100.0)]).unwrap();
        assert!(lane_origin(&lane, &g).origin.dist(v(50.0, 100.0)) < 1e-12);
    }

    #[test]
    fn interior_lane_falls_back_to_projection() {
        let g = GuideLine::<f64>::rectangle(canvas(100, 100));
        let lane = Lane::new(vec![v(50.0, 90.0), v(50.0, 40.0)]).unwrap();
        let o = lane_origin(&lane, &g);
        assert!(o.origin.dist(v(50.0, 100.0)) < 1e-9);
        assert!((o.alpha - 90.0).abs() < 1e-9);
    }

    #[test]
    fn response_range_values() {
        assert!((response_range(2.0f64, 90.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((response_range(2.0f64, 30.0).unwrap() - 8.0).abs() < 1e-12);
        assert!(response_range(2.0, 0.0).is_err());
        assert!(response_range(2.0, 90.5).is_err());
        assert!(response_range(0.0, 45.0).is_err());
    }

    #[test]
    fn response_range_inverse_example() {
        // 2·1.5 / sin α = 4  ⇒  α = asin(0.75)
        let alpha = 0.75f64.asin().to_degrees();
        assert!((alpha - 48.59).abs() < 5e-3);
        assert!((response_range(1.5, alpha).unwrap() - 4.0).abs() < 1e-12);
        assert!((response_range(1.5f64, 48.59).unwrap() - 4.0).abs() < 1e-3);
    }

    #[test]
    fn bucket_edges_validation() {
        assert!(BucketEdges::new(vec![0.0]).is_err());
        assert!(BucketEdges::new(vec![0.0, 30.0, 30.0, 90.0]).is_err());
        assert!(BucketEdges::new(vec![0.0, 30.0, 60.0]).is_err());
        assert!(BucketEdges::new(vec![10.0, 90.0]).is_err());
        let e = BucketEdges::new(vec![0.0, 30.0, 60.0, 90.0]).unwrap();
        assert_eq!(e.bucket_of(0.5), 0);
        assert_eq!(e.bucket_of(30.0), 0);
        assert_eq!(e.bucket_of(30.1), 1);
        assert_eq!(e.bucket_of(90.0), 2);
    }

    #[test]
    fn histogram_counts_single_vertical_lane() {
        let g = GuideLine::<f64>::rectangle(canvas(100, 100));
        let lane = Lane::new(vec![v(50.0, 100.0), v(50.0, 10.0)]).unwrap();
        let h = grazing_angle_histogram(&[vec![lane]], &g, &BucketEdges::thirds());
        assert_eq!(h, vec![0, 0, 1]);
    }

    #[test]
    fn f32_guides_work() {
        let g = GuideLine::<f32>::curved(canvas(800, 320), 0.5, 0.4).unwrap();
        let (p, _) = g.point_and_tangent(g.length() * 0.5).unwrap();
        assert!((p.x - 400.0).abs() < 0.05 && (p.y - 256.0).abs() < 0.05);
    }
}
