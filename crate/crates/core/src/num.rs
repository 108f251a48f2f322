//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the toolkit is generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the supported scalars.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// 2D point or direction in image pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    /// Unit vector, or `None` for a zero-length vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(Self::new(self.x / n, self.y / n))
        } else {
            None
        }
    }

    #[inline]
    pub fn dist(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_f64(self) -> [f64; 2] {
        [self.x.to_f64_lossy(), self.y.to_f64_lossy()]
    }

    pub fn from_f64(p: [f64; 2]) -> Self {
        Self::new(T::lit(p[0]), T::lit(p[1]))
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Closest point on segment `a..b` to `p`, with the segment parameter in `[0, 1]`.
pub fn closest_on_segment<T: Real>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> (Vec2<T>, T) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq <= T::zero() {
        return (a, T::zero());
    }
    let s = ((p - a).dot(ab) / len_sq).max(T::zero()).min(T::one());
    (a + ab * s, s)
}

/// Squared distance from `p` to segment `a..b`.
#[inline]
pub fn dist_sq_to_segment<T: Real>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> T {
    let (q, _) = closest_on_segment(p, a, b);
    (p - q).norm_sq()
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to the requested relative tolerance.
pub fn integrate<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, rel_tol: T) -> T {
    if a == b {
        return T::zero();
    }
    let half = T::lit(0.5);
    let m = (a + b) * half;
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    let tol = (rel_tol * whole.abs()).max(T::epsilon() * T::lit(16.0));
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
    depth: u32,
) -> T {
    let half = T::lit(0.5);
    let m = (a + b) * half;
    let lm = (a + m) * half;
    let rm = (m + b) * half;
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= T::lit(15.0) * tol {
        return left + right + delta / T::lit(15.0);
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol * half, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol * half, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v: f64 = integrate(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-10);
        assert!((v - 2.0).abs() < 1e-9);
        let v32: f32 = integrate(&|x: f32| x * x, 0.0, 3.0, 1e-6);
        assert!((v32 - 9.0).abs() < 1e-4);
    }

    #[test]
    fn segment_projection_clamps() {
        let a = Vec2::new(0.0, 0.0);
        let b = Vec2::new(10.0, 0.0);
        let (q, s) = closest_on_segment(Vec2::new(-5.0, 3.0), a, b);
        assert_eq!(q, a);
        assert_eq!(s, 0.0);
        assert_eq!(dist_sq_to_segment(Vec2::new(4.0, 3.0), a, b), 9.0);
    }
}
