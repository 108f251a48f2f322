//! Adaptive decoder: keypoint peaks, row/column anchor choice from the mask
//! shape, and sub-pixel lane points whose range is the mask's response range.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{CanvasDims, Lane};
use crate::num::{Real, Vec2};
use crate::targets::{Heatmap, OffsetMaps, TargetSet};

/// Which grid lines act as anchors: one lane point per row or per column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    RowWise,
    ColWise,
}

/// Rows with a maximum below threshold that may be bridged inside a lane.
pub const MAX_BRIDGED_GAP: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct DecoderConfig<T> {
    pub peak_threshold: T,
    pub max_instances: usize,
    pub mask_threshold: T,
    /// Soft-argmax half-window in cells.
    pub anchor_window: usize,
    pub min_anchor_count: usize,
    /// Orientation used when the mask's second moments tie.
    pub orientation_tiebreak: Orientation,
    /// Largest distance in pixels between a peak and the instance origin it is paired with.
    pub pair_radius: T,
}

impl<T: Real> Default for DecoderConfig<T> {
    fn default() -> Self {
        Self {
            peak_threshold: T::lit(0.02),
            max_instances: 16,
            mask_threshold: T::lit((-0.5f64).exp()),
            anchor_window: 3,
            min_anchor_count: 2,
            orientation_tiebreak: Orientation::RowWise,
            pair_radius: T::lit(16.0),
        }
    }
}

impl<T: Real> DecoderConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v > T::zero() && v < T::one();
        if !unit(self.peak_threshold) || !unit(self.mask_threshold) {
            return domain("decoder thresholds must lie in (0, 1)");
        }
        if self.anchor_window < 1 || self.min_anchor_count < 1 {
            return domain("anchor_window and min_anchor_count must be at least 1");
        }
        if !(self.pair_radius > T::zero()) {
            return domain("pair_radius must be positive");
        }
        Ok(())
    }
}

/// A keypoint heatmap local maximum, refined to image pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak<T> {
    pub row: usize,
    pub col: usize,
    pub point: Vec2<T>,
    pub score: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedLane<T> {
    /// Ordered by increasing anchor index.
    pub points: Vec<Vec2<T>>,
    pub orientation: Orientation,
    /// Mean activation maximum over the qualifying anchors.
    pub score: T,
    /// First and last anchor index of the decoded range.
    pub anchor_range: (usize, usize),
    /// Instance the lane was decoded from, when known.
    pub instance: Option<usize>,
    /// Refined keypoint the instance was paired with.
    pub origin: Option<Vec2<T>>,
}

impl<T: Real> DecodedLane<T> {
    /// Lane clamped onto `canvas`, or `None` if fewer than two distinct points remain.
    pub fn to_lane(&self, canvas: CanvasDims) -> Option<Lane<T>> {
        let mut pts: Vec<Vec2<T>> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            let q = canvas.clamp(*p);
            if pts.last() != Some(&q) {
                pts.push(q);
            }
        }
        Lane::new(pts).ok()
    }
}

/// Strict 3×3 local maxima at or above `peak_threshold`, highest first, ties
/// in `(row, col)` order, capped at `max_instances`.
pub fn extract_peaks<T: Real>(
    keypoints: &Heatmap<T>,
    offsets: &OffsetMaps<T>,
    cfg: &DecoderConfig<T>,
) -> Vec<Peak<T>> {
    let (rows, cols) = (keypoints.rows(), keypoints.cols());
    let grid = keypoints.grid();
    let mut peaks = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = keypoints.get(r, c);
            if !(v >= cfg.peak_threshold) {
                continue;
            }
            let strict = (r.saturating_sub(1)..=(r + 1).min(rows - 1)).all(|rr| {
                (c.saturating_sub(1)..=(c + 1).min(cols - 1))
                    .all(|cc| (rr == r && cc == c) || keypoints.get(rr, cc) < v)
            });
            if !strict {
                continue;
            }
            let off = offsets.get(r, c).unwrap_or_default();
            let g = Vec2::new(
                T::from_usize_lossy(c) + off.x,
                T::from_usize_lossy(r) + off.y,
            );
            peaks.push(Peak {
                row: r,
                col: c,
                point: grid.to_image(g),
                score: v,
            });
        }
    }
    // stable sort keeps row-major order among equal scores
    peaks.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    peaks.truncate(cfg.max_instances);
    peaks
}

/// Activation-weighted mean grid position over the `(2·radius+1)²` window
/// around `(row, col)`, clipped to the map. Falls back to the cell itself
/// when the window carries no activation.
pub fn soft_argmax<T: Real>(map: &Heatmap<T>, row: usize, col: usize, radius: usize) -> Vec2<T> {
    let (mut sw, mut sx, mut sy) = (T::zero(), T::zero(), T::zero());
    for r in row.saturating_sub(radius)..=(row + radius).min(map.rows() - 1) {
        for c in col.saturating_sub(radius)..=(col + radius).min(map.cols() - 1) {
            let v = map.get(r, c);
            sw += v;
            sx += v * T::from_usize_lossy(c);
            sy += v * T::from_usize_lossy(r);
        }
    }
    if sw > T::zero() {
        Vec2::new(sx / sw, sy / sw)
    } else {
        Vec2::new(T::from_usize_lossy(col), T::from_usize_lossy(row))
    }
}

/// Activation-weighted second central moments `(m_xx, m_yy)` of cells at or
/// above `threshold`, in cells².
pub fn mask_moments<T: Real>(mask: &Heatmap<T>, threshold: T) -> Option<(T, T)> {
    let (mut sw, mut sx, mut sy) = (T::zero(), T::zero(), T::zero());
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            let v = mask.get(r, c);
            if v >= threshold {
                sw += v;
                sx += v * T::from_usize_lossy(c);
                sy += v * T::from_usize_lossy(r);
            }
        }
    }
    if sw <= T::zero() {
        return None;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut mxx, mut myy) = (T::zero(), T::zero());
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            let v = mask.get(r, c);
            if v >= threshold {
                let dx = T::from_usize_lossy(c) - mx;
                let dy = T::from_usize_lossy(r) - my;
                mxx += v * dx * dx;
                myy += v * dy * dy;
            }
        }
    }
    Some((mxx / sw, myy / sw))
}

/// Row-wise anchors when the mask spreads at least as much vertically as
/// horizontally, column-wise otherwise.
pub fn choose_orientation<T: Real>(
    mask: &Heatmap<T>,
    cfg: &DecoderConfig<T>,
) -> Result<Orientation> {
    let (mxx, myy) = mask_moments(mask, cfg.mask_threshold).ok_or(Error::EmptyMask)?;
    let tie = T::lit(1e-9) * (mxx + myy);
    Ok(if (myy - mxx).abs() <= tie {
        cfg.orientation_tiebreak
    } else if myy > mxx {
        Orientation::RowWise
    } else {
        Orientation::ColWise
    })
}

// mask accessor in (anchor, position) coordinates
struct AnchorView<'a, T> {
    mask: &'a Heatmap<T>,
    orientation: Orientation,
}

impl<T: Real> AnchorView<'_, T> {
    fn anchors(&self) -> usize {
        match self.orientation {
            Orientation::RowWise => self.mask.rows(),
            Orientation::ColWise => self.mask.cols(),
        }
    }

    fn positions(&self) -> usize {
        match self.orientation {
            Orientation::RowWise => self.mask.cols(),
            Orientation::ColWise => self.mask.rows(),
        }
    }

    #[inline]
    fn get(&self, anchor: usize, pos: usize) -> T {
        match self.orientation {
            Orientation::RowWise => self.mask.get(anchor, pos),
            Orientation::ColWise => self.mask.get(pos, anchor),
        }
    }
}

/// Per-anchor decode: `(max activation, argmax, soft-argmax position)`.
fn anchor_response<T: Real>(
    view: &AnchorView<'_, T>,
    anchor: usize,
    window: usize,
) -> (T, usize, T) {
    let n = view.positions();
    let mut best = 0usize;
    let mut vmax = view.get(anchor, 0);
    for p in 1..n {
        let v = view.get(anchor, p);
        if v > vmax {
            vmax = v;
            best = p;
        }
    }
    let lo = best.saturating_sub(window);
    let hi = (best + window).min(n - 1);
    let (mut sw, mut sp) = (T::zero(), T::zero());
    for p in lo..=hi {
        let v = view.get(anchor, p);
        sw += v;
        sp += v * T::from_usize_lossy(p);
    }
    let pos = if sw > T::zero() {
        sp / sw
    } else {
        T::from_usize_lossy(best)
    };
    (vmax, best, pos)
}

/// Soft-argmax position and hard argmax per anchor, without thresholding.
pub fn anchor_positions<T: Real>(
    mask: &Heatmap<T>,
    orientation: Orientation,
    window: usize,
) -> Vec<(T, usize, T)> {
    let view = AnchorView { mask, orientation };
    (0..view.anchors())
        .map(|a| anchor_response(&view, a, window))
        .collect()
}

/// Decodes one instance mask along the given anchors.
pub fn decode_instance<T: Real>(
    mask: &Heatmap<T>,
    orientation: Orientation,
    cfg: &DecoderConfig<T>,
) -> Result<DecodedLane<T>> {
    let responses = anchor_positions(mask, orientation, cfg.anchor_window);
    let qualifying: Vec<usize> = responses
        .iter()
        .enumerate()
        .filter(|(_, r)| r.0 >= cfg.mask_threshold)
        .map(|(i, _)| i)
        .collect();

    // split into runs whose internal gaps are at most MAX_BRIDGED_GAP anchors
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for &a in &qualifying {
        match runs.last_mut() {
            Some(run) if a - run[run.len() - 1] <= MAX_BRIDGED_GAP + 1 => run.push(a),
            _ => runs.push(vec![a]),
        }
    }
    let run_weight = |run: &Vec<usize>| -> T { run.iter().map(|&a| responses[a].0).sum() };
    let best = runs
        .into_iter()
        .fold(None::<Vec<usize>>, |best, run| match best {
            Some(b)
                if b.len() > run.len()
                    || (b.len() == run.len() && run_weight(&b) >= run_weight(&run)) =>
            {
                Some(b)
            }
            _ => Some(run),
        });
    let run = best.unwrap_or_default();
    if run.len() < cfg.min_anchor_count {
        return Err(Error::TooFewAnchors {
            found: run.len(),
            required: cfg.min_anchor_count,
        });
    }

    let grid = mask.grid();
    let to_px = |anchor: T, pos: T| -> Vec2<T> {
        let g = match orientation {
            Orientation::RowWise => Vec2::new(pos, anchor),
            Orientation::ColWise => Vec2::new(anchor, pos),
        };
        grid.to_image(g)
    };
    let mut points = Vec::with_capacity(run[run.len() - 1] - run[0] + 1);
    for w in run.windows(2) {
        let (a0, a1) = (w[0], w[1]);
        let (p0, p1) = (responses[a0].2, responses[a1].2);
        points.push(to_px(T::from_usize_lossy(a0), p0));
        // bridged gap anchors
        for a in a0 + 1..a1 {
            let f = T::from_usize_lossy(a - a0) / T::from_usize_lossy(a1 - a0);
            points.push(to_px(T::from_usize_lossy(a), p0 + (p1 - p0) * f));
        }
    }
    let last = run[run.len() - 1];
    points.push(to_px(T::from_usize_lossy(last), responses[last].2));

    let score = run.iter().map(|&a| responses[a].0).sum::<T>() / T::from_usize_lossy(run.len());
    Ok(DecodedLane {
        points,
        orientation,
        score,
        anchor_range: (run[0], last),
        instance: None,
        origin: None,
    })
}

/// Pairs extracted keypoint peaks with instance masks by nearest recorded
/// origin, then decodes each paired mask. Unpaired peaks have no mask and are
/// skipped; masks that fail to decode are dropped.
pub fn decode_scene<T: Real>(maps: &TargetSet<T>, cfg: &DecoderConfig<T>) -> Vec<DecodedLane<T>> {
    let peaks = extract_peaks(&maps.keypoints, &maps.offsets, cfg);
    let mut taken = vec![false; maps.instances.len()];
    let mut out = Vec::new();
    for peak in peaks {
        let nearest = maps
            .instances
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, inst)| (i, inst.origin.origin.dist(peak.point)))
            .filter(|(_, d)| *d <= cfg.pair_radius)
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let Some((id, _)) = nearest else { continue };
        taken[id] = true;
        let mask = &maps.instances[id].mask;
        let decoded = choose_orientation(mask, cfg).and_then(|o| decode_instance(mask, o, cfg));
        if let Ok(mut lane) = decoded {
            lane.instance = Some(id);
            lane.origin = Some(peak.point);
            out.push(lane);
        }
    }
    out
}
