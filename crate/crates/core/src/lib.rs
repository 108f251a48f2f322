//! Lane-detection geometry and decoding toolkit.
//!
//! ```
//! use laneguide::decoder::decode_scene;
//! use laneguide::geometry::CanvasDims;
//! use laneguide::targets::{encode_scene, GridSpec};
//! use laneguide::{DecoderConfig, GuideLine, Lane, TargetConfig, Vec2};
//!
//! let canvas = CanvasDims::new(800, 320)?;
//! let grid = GridSpec::new(canvas, 8)?;
//! let guide = GuideLine::curved(canvas, 0.5, 0.4)?;
//! let lane = Lane::on_canvas(vec![Vec2::new(120.0, 320.0), Vec2::new(380.0, 140.0)], canvas)?;
//!
//! let targets = encode_scene(&[lane], &guide, &grid, &TargetConfig::default())?;
//! let decoded = decode_scene(&targets, &DecoderConfig::default());
//! assert_eq!(decoded.len(), 1);
//! # Ok::<(), laneguide::Error>(())
//! ```

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod num;
pub mod pipeline;
pub mod synth;
pub mod targets;

pub use error::{Error, Result};
pub use num::{Real, Vec2};

// Double-precision aliases; `single` holds the f32 counterparts.
pub type Lane = geometry::Lane<f64>;
pub type GuideLine = geometry::GuideLine<f64>;
pub type OriginRecord = geometry::OriginRecord<f64>;
pub type BucketEdges = geometry::BucketEdges<f64>;
pub type Heatmap = targets::Heatmap<f64>;
pub type OffsetMaps = targets::OffsetMaps<f64>;
pub type TargetConfig = targets::TargetConfig<f64>;
pub type TargetSet = targets::TargetSet<f64>;
pub type DecoderConfig = decoder::DecoderConfig<f64>;
pub type DecodedLane = decoder::DecodedLane<f64>;
pub type EvalConfig = eval::EvalConfig<f64>;
pub type PipelineConfig = pipeline::PipelineConfig<f64>;

pub mod single {
    pub type Vec2 = crate::num::Vec2<f32>;
    pub type Lane = crate::geometry::Lane<f32>;
    pub type GuideLine = crate::geometry::GuideLine<f32>;
    pub type OriginRecord = crate::geometry::OriginRecord<f32>;
    pub type BucketEdges = crate::geometry::BucketEdges<f32>;
    pub type Heatmap = crate::targets::Heatmap<f32>;
    pub type OffsetMaps = crate::targets::OffsetMaps<f32>;
    pub type TargetConfig = crate::targets::TargetConfig<f32>;
    pub type TargetSet = crate::targets::TargetSet<f32>;
    pub type DecoderConfig = crate::decoder::DecoderConfig<f32>;
    pub type DecodedLane = crate::decoder::DecodedLane<f32>;
    pub type EvalConfig = crate::eval::EvalConfig<f32>;
    pub type PipelineConfig = crate::pipeline::PipelineConfig<f32>;
}
