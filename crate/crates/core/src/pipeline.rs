//! End-to-end synthetic experiment: generate → encode → corrupt → decode →
//! evaluate, with stratified recall and decoder fidelity statistics.

use serde::{Deserialize, Serialize};

use crate::decoder::{decode_scene, DecodedLane, DecoderConfig, Orientation};
use crate::error::{domain, Result};
use crate::eval::{empty_buckets, evaluate, tally_buckets, BucketRecall, EvalConfig, MatchCounts};
use crate::geometry::{make_guide_line, BucketEdges, GuideKind, GuideLine, Lane};
use crate::num::Real;
use crate::synth::{corrupt_targets, gen_scene, NoiseConfig, SceneConfig, RNG_ALGORITHM};
use crate::targets::{encode_scene, GridSpec, TargetConfig, DEFAULT_STRIDE};

/// Guide line choice as written in configs and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuideSpec {
    pub kind: GuideKind,
    pub cx: f64,
    pub cy: f64,
}

impl Default for GuideSpec {
    fn default() -> Self {
        Self {
            kind: GuideKind::Curved,
            cx: 0.5,
            cy: 0.4,
        }
    }
}

impl GuideSpec {
    pub fn rectangle() -> Self {
        Self {
            kind: GuideKind::Rectangle,
            ..Self::default()
        }
    }

    pub fn build<T: Real>(&self, canvas: crate::geometry::CanvasDims) -> Result<GuideLine<T>> {
        make_guide_line(self.kind, canvas, T::lit(self.cx), T::lit(self.cy))
    }
}

/// Every knob of a synthetic experiment, mirrored one-to-one in the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct PipelineConfig<T> {
    pub rng: String,
    pub num_scenes: usize,
    pub stride: u32,
    pub guide: GuideSpec,
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub targets: TargetConfig<T>,
    pub decoder: DecoderConfig<T>,
    pub eval: EvalConfig<T>,
    pub edges: Vec<f64>,
}

impl<T: Real> Default for PipelineConfig<T> {
    fn default() -> Self {
        Self {
            rng: RNG_ALGORITHM.to_string(),
            num_scenes: 200,
            stride: DEFAULT_STRIDE,
            guide: GuideSpec::default(),
            scene: SceneConfig::default(),
            noise: NoiseConfig::default(),
            targets: TargetConfig::default(),
            decoder: DecoderConfig::default(),
            eval: EvalConfig::default(),
            edges: vec![0.0, 30.0, 60.0, 90.0],
        }
    }
}

impl<T: Real> PipelineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.rng != RNG_ALGORITHM {
            return domain(format!(
                "config asks for RNG {:?}; this build provides {RNG_ALGORITHM:?}",
                self.rng
            ));
        }
        GridSpec::new(self.scene.canvas, self.stride)?;
        self.scene.validate()?;
        self.noise.validate()?;
        self.targets.validate()?;
        self.decoder.validate()?;
        self.eval.validate()?;
        self.bucket_edges()?;
        Ok(())
    }

    pub fn bucket_edges(&self) -> Result<BucketEdges<T>> {
        BucketEdges::new(self.edges.iter().map(|e| T::lit(*e)).collect())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.scene.canvas, self.stride)
    }
}

/// Decoded lanes of one scene alongside the ground truth they came from.
#[derive(Clone, Debug)]
pub struct SceneOutcome<T> {
    pub gts: Vec<Lane<T>>,
    pub decoded: Vec<DecodedLane<T>>,
    pub preds: Vec<Lane<T>>,
}

/// Runs one scene through encode → corrupt → decode.
pub fn run_scene<T: Real>(
    cfg: &PipelineConfig<T>,
    guide: &GuideLine<T>,
    k: usize,
) -> Result<SceneOutcome<T>> {
    let grid = cfg.grid()?;
    let gts = gen_scene::<T>(&cfg.scene.for_scene(k))?;
    let targets = encode_scene(&gts, guide, &grid, &cfg.targets)?;
    let noisy = corrupt_targets(&targets, &cfg.noise.for_scene(k))?;
    let decoded = decode_scene(&noisy, &cfg.decoder);
    let preds = decoded
        .iter()
        .filter_map(|d| d.to_lane(grid.canvas))
        .collect();
    Ok(SceneOutcome {
        gts,
        decoded,
        preds,
    })
}

/// Aggregate of a corpus run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub scenes: usize,
    pub gt_lanes: usize,
    pub counts: MatchCounts,
    /// Recall stratified by each ground-truth lane's grazing angle on the rectangle guide line.
    pub buckets: Vec<BucketRecall>,
    /// Perpendicular distance from decoded points to their source lane, in pixels.
    pub mean_point_error: f64,
    pub max_point_error: f64,
    /// Decoded points outside the source lane's anchor span ± 1 anchor.
    pub range_violations: usize,
    pub row_wise: usize,
    pub col_wise: usize,
}

impl RoundtripReport {
    pub fn precision(&self) -> f64 {
        self.counts.precision()
    }

    pub fn recall(&self) -> f64 {
        self.counts.recall()
    }

    pub fn f1(&self) -> f64 {
        self.counts.f1()
    }
}

/// Decoded points lying outside the anchor span of `gt` widened by one anchor.
pub fn range_violations<T: Real>(decoded: &DecodedLane<T>, gt: &Lane<T>, grid: &GridSpec) -> usize {
    let coord = |p: crate::num::Vec2<T>| -> T {
        let g = grid.to_grid(p);
        match decoded.orientation {
            Orientation::RowWise => g.y,
            Orientation::ColWise => g.x,
        }
    };
    let (lo, hi) = gt
        .points()
        .iter()
        .map(|p| coord(*p))
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let (lo, hi) = (lo.round() - T::one(), hi.round() + T::one());
    decoded
        .points
        .iter()
        .filter(|p| {
            let v = coord(**p);
            v < lo || v > hi
        })
        .count()
}

/// Per-scene contribution to a [`RoundtripReport`].
#[derive(Clone, Debug, Default)]
pub struct SceneTally {
    pub gt_lanes: usize,
    pub counts: MatchCounts,
    pub buckets: Vec<BucketRecall>,
    pub error_sum: f64,
    pub error_count: usize,
    pub max_error: f64,
    pub range_violations: usize,
    pub row_wise: usize,
    pub col_wise: usize,
}

/// A validated experiment, ready to run scenes in any order or in parallel.
#[derive(Clone, Debug)]
pub struct Roundtrip<T> {
    cfg: PipelineConfig<T>,
    guide: GuideLine<T>,
    rect: GuideLine<T>,
    edges: BucketEdges<T>,
    grid: GridSpec,
}

impl<T: Real> Roundtrip<T> {
    pub fn new(cfg: &PipelineConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let canvas = cfg.scene.canvas;
        Ok(Self {
            cfg: cfg.clone(),
            guide: cfg.guide.build(canvas)?,
            rect: GuideLine::rectangle(canvas),
            edges: cfg.bucket_edges()?,
            grid: cfg.grid()?,
        })
    }

    pub fn config(&self) -> &PipelineConfig<T> {
        &self.cfg
    }

    pub fn scene(&self, k: usize) -> Result<SceneTally> {
        let out = run_scene(&self.cfg, &self.guide, k)?;
        let m = evaluate(&out.preds, &out.gts, &self.cfg.eval, self.grid.canvas);
        let mut tally = SceneTally {
            gt_lanes: out.gts.len(),
            counts: m.counts(),
            buckets: empty_buckets(&self.edges),
            ..SceneTally::default()
        };
        tally_buckets(&mut tally.buckets, &m, &out.gts, &self.rect, &self.edges);
        for d in &out.decoded {
            match d.orientation {
                Orientation::RowWise => tally.row_wise += 1,
                Orientation::ColWise => tally.col_wise += 1,
            }
            let Some(gt) = d.instance.and_then(|i| out.gts.get(i)) else {
                continue;
            };
            tally.range_violations += range_violations(d, gt, &self.grid);
            for p in &d.points {
                let e = gt.distance_to(*p).to_f64_lossy();
                tally.error_sum += e;
                tally.error_count += 1;
                tally.max_error = tally.max_error.max(e);
            }
        }
        Ok(tally)
    }

    /// Combines scene tallies; their order does not matter.
    pub fn finish(&self, tallies: impl IntoIterator<Item = SceneTally>) -> RoundtripReport {
        let mut report = RoundtripReport {
            scenes: 0,
            gt_lanes: 0,
            counts: MatchCounts::default(),
            buckets: empty_buckets(&self.edges),
            mean_point_error: 0.0,
            max_point_error: 0.0,
            range_violations: 0,
            row_wise: 0,
            col_wise: 0,
        };
        let (mut err_sum, mut err_n) = (0.0f64, 0usize);
        for t in tallies {
            report.scenes += 1;
            report.gt_lanes += t.gt_lanes;
            report.counts += t.counts;
            for (b, tb) in report.buckets.iter_mut().zip(&t.buckets) {
                b.gt += tb.gt;
                b.tp += tb.tp;
            }
            err_sum += t.error_sum;
            err_n += t.error_count;
            report.max_point_error = report.max_point_error.max(t.max_error);
            report.range_violations += t.range_violations;
            report.row_wise += t.row_wise;
            report.col_wise += t.col_wise;
        }
        report.mean_point_error = if err_n == 0 {
            0.0
        } else {
            err_sum / err_n as f64
        };
        report
    }
}

/// Runs `cfg.num_scenes` scenes sequentially and aggregates the results.
pub fn run_roundtrip<T: Real>(cfg: &PipelineConfig<T>) -> Result<RoundtripReport> {
    let rt = Roundtrip::new(cfg)?;
    let tallies = (0..cfg.num_scenes)
        .map(|k| rt.scene(k))
        .collect::<Result<Vec<_>>>()?;
    Ok(rt.finish(tallies))
}
