//! Supervision targets: keypoint heatmaps with sub-cell offsets and
//! per-instance Gaussian lane masks.
//!
//! Grid coordinates put cell centres on integers: image point `p` maps to
//! `p / stride − 0.5`, and cell `(r, c)` covers `[c − ½, c + ½) × [r − ½, r + ½)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{lane_origin, CanvasDims, GuideLine, Lane, OriginRecord};
use crate::num::{dist_sq_to_segment, Real, Vec2};

pub const DEFAULT_STRIDE: u32 = 8;

/// Downsampled grid laid over a canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub canvas: CanvasDims,
    pub stride: u32,
}

impl GridSpec {
    pub fn new(canvas: CanvasDims, stride: u32) -> Result<Self> {
        if ![1, 2, 4, 8, 16].contains(&stride) {
            return domain(format!("stride {stride} not in {{1, 2, 4, 8, 16}}"));
        }
        Ok(Self { canvas, stride })
    }

    pub fn cols(&self) -> usize {
        self.canvas.w.div_ceil(self.stride) as usize
    }

    pub fn rows(&self) -> usize {
        self.canvas.h.div_ceil(self.stride) as usize
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride_f<T: Real>(&self) -> T {
        T::lit(self.stride as f64)
    }

    /// Image pixels to grid coordinates.
    pub fn to_grid<T: Real>(&self, p: Vec2<T>) -> Vec2<T> {
        let s = self.stride_f::<T>();
        let half = T::lit(0.5);
        Vec2::new(p.x / s - half, p.y / s - half)
    }

    /// Grid coordinates to image pixels.
    pub fn to_image<T: Real>(&self, g: Vec2<T>) -> Vec2<T> {
        let s = self.stride_f::<T>();
        let half = T::lit(0.5);
        Vec2::new((g.x + half) * s, (g.y + half) * s)
    }

    pub fn cell_center<T: Real>(&self, row: usize, col: usize) -> Vec2<T> {
        self.to_image(Vec2::new(
            T::from_usize_lossy(col),
            T::from_usize_lossy(row),
        ))
    }

    /// Cell containing grid point `g`, clamped onto the grid.
    pub fn containing_cell<T: Real>(&self, g: Vec2<T>) -> (usize, usize) {
        let clamp = |v: T, n: usize| -> usize {
            let i = (v + T::lit(0.5)).floor();
            if i <= T::zero() {
                0
            } else {
                i.to_usize().unwrap_or(usize::MAX).min(n - 1)
            }
        };
        (clamp(g.y, self.rows()), clamp(g.x, self.cols()))
    }
}

/// Non-negative activation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T> {
    grid: GridSpec,
    values: Vec<T>,
}

impl<T: Real> Heatmap<T> {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![T::zero(); grid.len()],
        }
    }

    /// Wraps row-major values, rejecting negative or non-finite entries.
    pub fn from_values(grid: GridSpec, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return domain(format!(
                "heatmap needs {} values, got {}",
                grid.len(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return domain("heatmap values must be finite and non-negative");
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn rows(&self) -> usize {
        self.grid.rows()
    }

    pub fn cols(&self) -> usize {
        self.grid.cols()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.grid.cols() + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        let cols = self.grid.cols();
        self.values[row * cols + col] = v;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn row(&self, row: usize) -> &[T] {
        let c = self.grid.cols();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::zero(), T::max)
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Element-wise maximum with a sparse stamp.
    pub fn max_stamp(&mut self, stamp: &Stamp<T>) {
        for &(r, c, v) in &stamp.cells {
            if v > self.get(r, c) {
                self.set(r, c, v);
            }
        }
    }

    /// Element-wise maximum of two maps on the same grid.
    pub fn max_with(&mut self, other: &Heatmap<T>) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = a.max(*b);
        }
    }
}

/// Sub-cell residuals of keypoints, in grid cells relative to the cell centre.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetMaps<T> {
    grid: GridSpec,
    dx: Vec<T>,
    dy: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Real> OffsetMaps<T> {
    pub fn empty(grid: GridSpec) -> Self {
        Self {
            grid,
            dx: vec![T::zero(); grid.len()],
            dy: vec![T::zero(); grid.len()],
            valid: vec![false; grid.len()],
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// `(dx, dy)` at a cell, if an origin was recorded there.
    pub fn get(&self, row: usize, col: usize) -> Option<Vec2<T>> {
        let i = row * self.grid.cols() + col;
        self.valid[i].then(|| Vec2::new(self.dx[i], self.dy[i]))
    }

    pub fn set(&mut self, row: usize, col: usize, d: Vec2<T>) -> Result<()> {
        let one = T::one();
        if !(d.x.abs() <= one && d.y.abs() <= one) {
            return domain(format!("offset ({}, {}) exceeds one cell", d.x, d.y));
        }
        let i = row * self.grid.cols() + col;
        self.dx[i] = d.x;
        self.dy[i] = d.y;
        self.valid[i] = true;
        Ok(())
    }

    /// Valid cells in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Vec2<T>)> + '_ {
        let cols = self.grid.cols();
        (0..self.valid.len())
            .filter(|&i| self.valid[i])
            .map(move |i| (i / cols, i % cols, Vec2::new(self.dx[i], self.dy[i])))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct TargetConfig<T> {
    /// Keypoint kernel width in grid cells.
    pub sigma: T,
    /// Lane mask band radius in image pixels.
    pub d: T,
    /// Kernel support, in multiples of the kernel width.
    pub kernel_radius_sigmas: T,
}

impl<T: Real> Default for TargetConfig<T> {
    fn default() -> Self {
        Self {
            sigma: T::lit(1.5),
            d: T::lit(4.0),
            kernel_radius_sigmas: T::lit(3.0),
        }
    }
}

impl<T: Real> TargetConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > T::zero() && self.sigma.is_finite()) {
            return domain(format!("sigma = {} must be positive", self.sigma));
        }
        if !(self.d > T::zero() && self.d.is_finite()) {
            return domain(format!("d = {} must be positive", self.d));
        }
        if !(self.kernel_radius_sigmas > T::zero()) {
            return domain("kernel_radius_sigmas must be positive");
        }
        Ok(())
    }
}

/// Sparse `(row, col, value)` cells of one kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Stamp<T> {
    pub cells: Vec<(usize, usize, T)>,
}

impl<T: Real> Stamp<T> {
    pub fn sum(&self) -> T {
        self.cells.iter().map(|c| c.2).sum()
    }

    pub fn peak(&self) -> Option<(usize, usize, T)> {
        self.cells
            .iter()
            .copied()
            .fold(None, |best: Option<(usize, usize, T)>, c| match best {
                Some(b) if b.2 >= c.2 => Some(b),
                _ => Some(c),
            })
    }
}

/// Gaussian kernel centred at grid point `center`, elongated along the unit
/// direction `axis` with standard deviation `std_along` (cells) and `std_across`
/// perpendicular to it. The square window of half-size
/// `ceil(radius_sigmas · max(std))` around the containing cell is normalized
/// to sum to one, then clipped to the grid.
pub fn gaussian_stamp<T: Real>(
    grid: &GridSpec,
    center: Vec2<T>,
    axis: Vec2<T>,
    std_along: T,
    std_across: T,
    radius_sigmas: T,
) -> Stamp<T> {
    let (r0, c0) = grid.containing_cell(center);
    let half = (radius_sigmas * std_along.max(std_across))
        .ceil()
        .to_i64()
        .unwrap_or(0);
    let two = T::lit(2.0);
    let (ia, ic) = (
        T::one() / (two * std_along * std_along),
        T::one() / (two * std_across * std_across),
    );
    let (rows, cols) = (grid.rows() as i64, grid.cols() as i64);
    let side = (2 * half + 1) as usize;
    let mut cells = Vec::with_capacity(side * side);
    let mut total = T::zero();
    // the whole window counts toward the normalization, so a kernel cut by
    // the grid edge keeps the height it has in the interior
    for r in r0 as i64 - half..=r0 as i64 + half {
        for c in c0 as i64 - half..=c0 as i64 + half {
            let d = Vec2::new(T::lit(c as f64), T::lit(r as f64)) - center;
            let along = d.dot(axis);
            let across = d.cross(axis);
            let v = (-(along * along * ia + across * across * ic)).exp();
            total += v;
            if (0..rows).contains(&r) && (0..cols).contains(&c) {
                cells.push((r as usize, c as usize, v));
            }
        }
    }
    if total > T::zero() {
        for cell in &mut cells {
            cell.2 = cell.2 / total;
        }
    }
    Stamp { cells }
}

/// Normalized isotropic keypoint kernel for an origin given in image pixels.
pub fn keypoint_stamp<T: Real>(
    grid: &GridSpec,
    origin: Vec2<T>,
    cfg: &TargetConfig<T>,
) -> Stamp<T> {
    gaussian_stamp(
        grid,
        grid.to_grid(origin),
        Vec2::new(T::one(), T::zero()),
        cfg.sigma,
        cfg.sigma,
        cfg.kernel_radius_sigmas,
    )
}

/// Peak height of an unclipped keypoint kernel centred on a cell. Used as the
/// unit of keypoint activation.
pub fn reference_peak<T: Real>(cfg: &TargetConfig<T>) -> T {
    let half = (cfg.kernel_radius_sigmas * cfg.sigma)
        .ceil()
        .to_i64()
        .unwrap_or(0);
    let inv = T::one() / (T::lit(2.0) * cfg.sigma * cfg.sigma);
    let mut total = T::zero();
    for r in -half..=half {
        for c in -half..=half {
            let d2 = T::lit((r * r + c * c) as f64);
            total += (-d2 * inv).exp();
        }
    }
    T::one() / total
}

/// Keypoint heatmap and offsets for a set of origins.
pub fn encode_keypoints<T: Real>(
    origins: &[OriginRecord<T>],
    grid: &GridSpec,
    cfg: &TargetConfig<T>,
) -> Result<(Heatmap<T>, OffsetMaps<T>)> {
    cfg.validate()?;
    let mut heat = Heatmap::zeros(*grid);
    let mut offsets = OffsetMaps::empty(*grid);
    // stamp value that currently owns each offset cell
    let mut owner: Vec<Option<T>> = vec![None; grid.len()];
    for o in origins {
        if !o.origin.is_finite() || !grid.canvas.contains(o.origin) {
            return domain(format!(
                "origin ({}, {}) outside canvas",
                o.origin.x, o.origin.y
            ));
        }
        let g = grid.to_grid(o.origin);
        let stamp = keypoint_stamp(grid, o.origin, cfg);
        heat.max_stamp(&stamp);
        let (r, c) = grid.containing_cell(g);
        let here = stamp
            .cells
            .iter()
            .find(|cell| cell.0 == r && cell.1 == c)
            .map_or(T::zero(), |cell| cell.2);
        let slot = &mut owner[r * grid.cols() + c];
        if slot.is_none_or(|prev| here > prev) {
            *slot = Some(here);
            let residual = Vec2::new(g.x - T::from_usize_lossy(c), g.y - T::from_usize_lossy(r));
            offsets.set(r, c, residual)?;
        }
    }
    Ok((heat, offsets))
}

/// Gaussian band around a lane: `exp(−ρ²/(2(d/stride)²))` with `ρ` the
/// cell-centre distance to the polyline in cells, zero beyond the kernel support.
pub fn encode_instance_mask<T: Real>(
    lane: &Lane<T>,
    grid: &GridSpec,
    cfg: &TargetConfig<T>,
) -> Heatmap<T> {
    let mut mask = Heatmap::zeros(*grid);
    let stride = grid.stride_f::<T>();
    let cutoff = cfg.kernel_radius_sigmas * cfg.d;
    let cutoff_sq = cutoff * cutoff;
    let mut best = vec![T::infinity(); grid.len()];
    let cols = grid.cols();
    let to_cell = |v: T, n: usize| -> usize {
        let i = (v / stride - T::lit(0.5)).floor();
        if i <= T::zero() {
            0
        } else {
            i.to_usize().unwrap_or(usize::MAX).min(n - 1)
        }
    };
    for (a, b) in lane.segments() {
        let (lo_x, hi_x) = (a.x.min(b.x) - cutoff, a.x.max(b.x) + cutoff);
        let (lo_y, hi_y) = (a.y.min(b.y) - cutoff, a.y.max(b.y) + cutoff);
        let (c_lo, c_hi) = (to_cell(lo_x, cols), to_cell(hi_x, cols) + 1);
        let (r_lo, r_hi) = (to_cell(lo_y, grid.rows()), to_cell(hi_y, grid.rows()) + 1);
        for r in r_lo..=r_hi.min(grid.rows() - 1) {
            for c in c_lo..=c_hi.min(cols - 1) {
                let p = grid.cell_center(r, c);
                let d2 = dist_sq_to_segment(p, a, b);
                let slot = &mut best[r * cols + c];
                if d2 < *slot {
                    *slot = d2;
                }
            }
        }
    }
    let inv = T::one() / (T::lit(2.0) * cfg.d * cfg.d);
    for (v, d2) in mask.values_mut().iter_mut().zip(&best) {
        if *d2 <= cutoff_sq {
            *v = (-*d2 * inv).exp();
        }
    }
    mask
}

/// Width in image pixels of the run of cells at or above `level` that contains
/// the row maximum, with both crossings linearly interpolated.
pub fn band_width_on_row<T: Real>(mask: &Heatmap<T>, row: usize, level: T) -> Option<T> {
    let vals = mask.row(row);
    let (peak, &vmax) =
        vals.iter()
            .enumerate()
            .fold(None, |best: Option<(usize, &T)>, (i, v)| match best {
                Some((_, b)) if *b >= *v => best,
                _ => Some((i, v)),
            })?;
    if vmax < level {
        return None;
    }
    let mut lo = peak;
    while lo > 0 && vals[lo - 1] >= level {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < vals.len() && vals[hi + 1] >= level {
        hi += 1;
    }
    let cross = |inside: usize, outside: usize| -> T {
        let (vi, vo) = (vals[inside], vals[outside]);
        let f = (vi - level) / (vi - vo);
        T::from_usize_lossy(inside)
            + (T::from_usize_lossy(outside) - T::from_usize_lossy(inside)) * f
    };
    let left = if lo == 0 {
        T::zero()
    } else {
        cross(lo, lo - 1)
    };
    let right = if hi + 1 == vals.len() {
        T::from_usize_lossy(hi)
    } else {
        cross(hi, hi + 1)
    };
    Some((right - left) * mask.grid().stride_f::<T>())
}

/// One ground-truth lane's origin and mask.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTarget<T> {
    pub origin: OriginRecord<T>,
    pub mask: Heatmap<T>,
}

/// Everything the lane head is supervised with for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet<T> {
    pub grid: GridSpec,
    pub config: TargetConfig<T>,
    pub keypoints: Heatmap<T>,
    pub offsets: OffsetMaps<T>,
    pub instances: Vec<InstanceTarget<T>>,
}

impl<T: Real> TargetSet<T> {
    /// Keypoint activation of a single unclipped kernel.
    pub fn keypoint_unit(&self) -> T {
        reference_peak(&self.config)
    }
}

pub fn encode_scene<T: Real>(
    lanes: &[Lane<T>],
    g: &GuideLine<T>,
    grid: &GridSpec,
    cfg: &TargetConfig<T>,
) -> Result<TargetSet<T>> {
    cfg.validate()?;
    for lane in lanes {
        lane.check_canvas(grid.canvas)?;
    }
    let origins: Vec<OriginRecord<T>> = lanes.iter().map(|l| lane_origin(l, g)).collect();
    let (keypoints, offsets) = encode_keypoints(&origins, grid, cfg)?;
    let instances = lanes
        .iter()
        .zip(&origins)
        .map(|(lane, o)| InstanceTarget {
            origin: *o,
            mask: encode_instance_mask(lane, grid, cfg),
        })
        .collect();
    Ok(TargetSet {
        grid: *grid,
        config: *cfg,
        keypoints,
        offsets,
        instances,
    })
}
