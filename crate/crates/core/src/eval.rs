//! CULane-style lane evaluation: thick-line rasterization, IoU, optimal
//! assignment and precision/recall/F1, plus grazing-angle stratified recall.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{lane_origin, BucketEdges, CanvasDims, GuideLine, Lane};
use crate::num::{dist_sq_to_segment, Real, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct EvalConfig<T> {
    /// Rasterized lane width in pixels.
    pub lane_width: T,
    pub iou_threshold: T,
    /// Rasterize on a grid downscaled by this factor.
    pub raster_scale: T,
}

impl<T: Real> Default for EvalConfig<T> {
    fn default() -> Self {
        Self {
            lane_width: T::lit(30.0),
            iou_threshold: T::lit(0.5),
            raster_scale: T::one(),
        }
    }
}

impl<T: Real> EvalConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width >= T::one()) {
            return domain(format!("lane width {} must be at least 1", self.lane_width));
        }
        if !(self.iou_threshold > T::zero() && self.iou_threshold < T::one()) {
            return domain(format!(
                "IoU threshold {} outside (0, 1)",
                self.iou_threshold
            ));
        }
        if !(self.raster_scale >= T::one()) || !self.raster_scale.is_finite() {
            return domain("raster_scale must be at least 1");
        }
        Ok(())
    }
}

/// Rasterized lane: sorted, de-duplicated row-major cell indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaneMask {
    pub width: usize,
    pub height: usize,
    cells: Vec<u32>,
}

impl LaneMask {
    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.len()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.cells
            .binary_search(&((y * self.width + x) as u32))
            .is_ok()
    }

    pub fn intersection_count(&self, other: &LaneMask) -> usize {
        let (a, b) = (&self.cells, &other.cells);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn iou(&self, other: &LaneMask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.count() + other.count() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Cells whose centre lies within `width / 2` of the lane, at full resolution.
pub fn rasterize_lane<T: Real>(lane: &Lane<T>, width: T, canvas: CanvasDims) -> LaneMask {
    rasterize_lane_scaled(lane, width, canvas, T::one())
}

/// Like [`rasterize_lane`] on a grid of `scale`-pixel cells.
pub fn rasterize_lane_scaled<T: Real>(
    lane: &Lane<T>,
    width: T,
    canvas: CanvasDims,
    scale: T,
) -> LaneMask {
    let w = (canvas.width::<T>() / scale)
        .ceil()
        .to_usize()
        .unwrap_or(0)
        .max(1);
    let h = (canvas.height::<T>() / scale)
        .ceil()
        .to_usize()
        .unwrap_or(0)
        .max(1);
    let half = width / T::lit(2.0);
    let r2 = half * half;
    let mut bits = vec![0u64; (w * h).div_ceil(64)];
    let to_cell = |v: T, n: usize| -> usize {
        let i = (v / scale - T::lit(0.5)).floor();
        if i <= T::zero() {
            0
        } else {
            i.to_usize().unwrap_or(usize::MAX).min(n - 1)
        }
    };
    let hf = T::lit(0.5);
    for (a, b) in lane.segments() {
        let x0 = to_cell(a.x.min(b.x) - half, w);
        let x1 = (to_cell(a.x.max(b.x) + half, w) + 1).min(w - 1);
        let y0 = to_cell(a.y.min(b.y) - half, h);
        let y1 = (to_cell(a.y.max(b.y) + half, h) + 1).min(h - 1);
        for y in y0..=y1 {
            let cy = (T::from_usize_lossy(y) + hf) * scale;
            for x in x0..=x1 {
                let idx = y * w + x;
                if bits[idx >> 6] & (1 << (idx & 63)) != 0 {
                    continue;
                }
                let cx = (T::from_usize_lossy(x) + hf) * scale;
                if dist_sq_to_segment(Vec2::new(cx, cy), a, b) <= r2 {
                    bits[idx >> 6] |= 1 << (idx & 63);
                }
            }
        }
    }
    let mut cells = Vec::new();
    for (wi, mut word) in bits.into_iter().enumerate() {
        while word != 0 {
            let bit = word.trailing_zeros() as usize;
            cells.push((wi * 64 + bit) as u32);
            word &= word - 1;
        }
    }
    LaneMask {
        width: w,
        height: h,
        cells,
    }
}

/// Intersection over union of the two rasterized lanes.
pub fn lane_iou<T: Real>(a: &Lane<T>, b: &Lane<T>, cfg: &EvalConfig<T>, canvas: CanvasDims) -> f64 {
    let ma = rasterize_lane_scaled(a, cfg.lane_width, canvas, cfg.raster_scale);
    let mb = rasterize_lane_scaled(b, cfg.lane_width, canvas, cfg.raster_scale);
    ma.iou(&mb)
}

/// Minimum-cost assignment on a rectangular cost matrix (rows × cols).
/// Returns `min(rows, cols)` pairs `(row, col)` sorted by row.
pub fn hungarian_match<T: Real>(cost: &[Vec<T>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return domain("cost matrix rows differ in length");
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return domain("cost matrix has non-finite entries");
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    if rows > cols {
        let transposed: Vec<Vec<T>> = (0..cols)
            .map(|c| (0..rows).map(|r| cost[r][c]).collect())
            .collect();
        let mut pairs: Vec<(usize, usize)> = hungarian_match(&transposed)?
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }
    Ok(shortest_augmenting_path(cost, rows, cols))
}

// Potentials-based shortest augmenting path, rows ≤ cols. 1-based internally;
// column 0 is the virtual source.
fn shortest_augmenting_path<T: Real>(
    cost: &[Vec<T>],
    rows: usize,
    cols: usize,
) -> Vec<(usize, usize)> {
    let inf = T::infinity();
    let mut u = vec![T::zero(); rows + 1];
    let mut v = vec![T::zero(); cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// True/false positive and false negative counts; sums across scenes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// IoU of every (prediction, ground truth) pair.
    pub per_pair_iou: Vec<Vec<f64>>,
    /// Accepted `(prediction, ground truth)` pairs.
    pub assignment: Vec<(usize, usize)>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchReport {
    pub fn counts(&self) -> MatchCounts {
        MatchCounts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// Matches predictions to ground truth by optimal `1 − IoU` assignment and
/// keeps pairs with IoU at or above the threshold.
pub fn evaluate<T: Real>(
    preds: &[Lane<T>],
    gts: &[Lane<T>],
    cfg: &EvalConfig<T>,
    canvas: CanvasDims,
) -> MatchReport {
    let raster = |l: &Lane<T>| rasterize_lane_scaled(l, cfg.lane_width, canvas, cfg.raster_scale);
    let pm: Vec<LaneMask> = preds.iter().map(raster).collect();
    let gm: Vec<LaneMask> = gts.iter().map(raster).collect();
    let ious: Vec<Vec<f64>> = pm
        .iter()
        .map(|p| gm.iter().map(|g| p.iou(g)).collect())
        .collect();
    let cost: Vec<Vec<f64>> = ious
        .iter()
        .map(|row| row.iter().map(|v| 1.0 - v).collect())
        .collect();
    let threshold = cfg.iou_threshold.to_f64_lossy();
    let assignment: Vec<(usize, usize)> = if gts.is_empty() {
        Vec::new()
    } else {
        hungarian_match(&cost)
            .expect("IoU costs are finite and rectangular")
            .into_iter()
            .filter(|&(p, g)| ious[p][g] >= threshold)
            .collect()
    };
    let counts = MatchCounts {
        tp: assignment.len(),
        fp: preds.len() - assignment.len(),
        fn_: gts.len() - assignment.len(),
    };
    MatchReport {
        tp: counts.tp,
        fp: counts.fp,
        fn_: counts.fn_,
        per_pair_iou: ious,
        assignment,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
    }
}

/// Recall within one grazing-angle bucket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRecall {
    pub lo: f64,
    pub hi: f64,
    pub gt: usize,
    pub tp: usize,
}

impl BucketRecall {
    /// `tp / gt`, zero for an empty bucket.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.gt)
    }
}

/// Empty per-bucket tallies for `edges`.
pub fn empty_buckets<T: Real>(edges: &BucketEdges<T>) -> Vec<BucketRecall> {
    (0..edges.bucket_count())
        .map(|i| {
            let (lo, hi) = edges.bounds(i);
            BucketRecall {
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
                gt: 0,
                tp: 0,
            }
        })
        .collect()
}

/// Adds one scene's ground truth to `buckets`, stratified by each lane's
/// grazing angle against `g`, using an already computed match report.
pub fn tally_buckets<T: Real>(
    buckets: &mut [BucketRecall],
    report: &MatchReport,
    gts: &[Lane<T>],
    g: &GuideLine<T>,
    edges: &BucketEdges<T>,
) {
    let mut matched = vec![false; gts.len()];
    for &(_, gi) in &report.assignment {
        matched[gi] = true;
    }
    for (lane, hit) in gts.iter().zip(matched) {
        let b = &mut buckets[edges.bucket_of(lane_origin(lane, g).alpha)];
        b.gt += 1;
        if hit {
            b.tp += 1;
        }
    }
}

/// Recall per grazing-angle bucket. Lanes are stratified by their angle on
/// `g`; pass the rectangle guide line to stratify the usual way.
pub fn angle_bucketed_recall<T: Real>(
    preds: &[Lane<T>],
    gts: &[Lane<T>],
    g: &GuideLine<T>,
    cfg: &EvalConfig<T>,
    edges: &BucketEdges<T>,
) -> Vec<BucketRecall> {
    let report = evaluate(preds, gts, cfg, g.canvas());
    let mut buckets = empty_buckets(edges);
    tally_buckets(&mut buckets, &report, gts, g, edges);
    buckets
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas() -> CanvasDims {
        CanvasDims::new(200, 200).unwrap()
    }

    fn vline(x: f64, y0: f64, y1: f64) -> Lane<f64> {
        Lane::new(vec![Vec2::new(x, y0), Vec2::new(x, y1)]).unwrap()
    }

    #[test]
    fn raster_popcount_matches_brute_force() {
        let lane = vline(100.0, 75.0, 125.0);
        let mask = rasterize_lane(&lane, 30.0, canvas());
        let mut brute = 0;
        for y in 0..200 {
            for x in 0..200 {
                let c = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                if dist_sq_to_segment(c, lane.points()[0], lane.points()[1]) <= 225.0 {
                    brute += 1;
                    assert!(mask.contains(x, y));
                }
            }
        }
        assert_eq!(mask.count(), brute);
        assert!(brute > 50 * 30);
    }

    #[test]
    fn width_one_covers_traversed_cells() {
        let lane = vline(50.5, 20.0, 80.0);
        let mask = rasterize_lane(&lane, 1.0, canvas());
        for y in 20..80 {
            assert!(mask.contains(50, y));
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let cfg = EvalConfig::default();
        let a = vline(50.0, 10.0, 190.0);
        let b = vline(150.0, 10.0, 190.0);
        assert_eq!(lane_iou(&a, &a, &cfg, canvas()), 1.0);
        assert_eq!(lane_iou(&a, &b, &cfg, canvas()), 0.0);
    }

    #[test]
    fn parallel_lanes_fifteen_apart() {
        let c = CanvasDims::new(200, 1000).unwrap();
        let a = vline(80.0, 0.0, 1000.0);
        let b = vline(95.0, 0.0, 1000.0);
        let iou = lane_iou(&a, &b, &EvalConfig::default(), c);
        assert!((iou - 1.0 / 3.0).abs() < 0.02, "{iou}");
    }

    #[test]
    fn hungarian_small_cases() {
        assert_eq!(hungarian_match(&[vec![0.2]]).unwrap(), vec![(0, 0)]);
        assert_eq!(
            hungarian_match(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap(),
            vec![(0, 0), (1, 1)]
        );
        assert!(hungarian_match::<f64>(&[]).unwrap().is_empty());
        assert!(hungarian_match(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(hungarian_match(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn hungarian_rectangular() {
        let tall = vec![vec![5.0, 1.0], vec![1.0, 5.0], vec![0.0, 0.5]];
        let pairs = hungarian_match(&tall).unwrap();
        let total: f64 = pairs.iter().map(|&(r, c)| tall[r][c]).sum();
        assert_eq!(pairs.len(), 2);
        assert_eq!(total, 1.0);
    }

    #[test]
    fn evaluate_perfect_and_empty() {
        let cfg = EvalConfig::default();
        let gts = vec![
            vline(30.0, 0.0, 200.0),
            vline(100.0, 0.0, 200.0),
            vline(170.0, 0.0, 200.0),
        ];
        let r = evaluate(&gts, &gts, &cfg, canvas());
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = evaluate(&[], &gts, &cfg, canvas());
        assert_eq!((r.tp, r.fn_, r.f1), (0, 3, 0.0));
    }

    #[test]
    fn metric_formula() {
        let c = MatchCounts {
            tp: 2,
            fp: 1,
            fn_: 1,
        };
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(MatchCounts::default().f1(), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::<f64>::default().validate().is_ok());
        let bad = EvalConfig {
            iou_threshold: 1.0,
            ..EvalConfig::<f64>::default()
        };
        assert!(bad.validate().is_err());
    }
}
