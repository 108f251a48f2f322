//! File formats: scene JSON, CULane `.lines.txt`, 16-bit PGM heatmaps, target
//! index JSON and CSV reports. Writers are deterministic; [`write_atomic`]
//! never leaves a partially written file behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BucketRecall, MatchCounts};
use crate::geometry::{CanvasDims, Lane, OriginRecord};
use crate::num::{Real, Vec2};
use crate::targets::{GridSpec, Heatmap, InstanceTarget, OffsetMaps, TargetConfig, TargetSet};

pub const SCENE_FORMAT_VERSION: &str = "1";
pub const TARGET_INDEX_VERSION: &str = "1";
pub const PGM_MAX: u16 = 65535;

/// A scene on disk: `{version, canvas: {w, h}, lanes: [[[x, y], …], …]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: String,
    pub canvas: CanvasDims,
    pub lanes: Vec<Vec<[f64; 2]>>,
}

impl SceneFile {
    pub fn from_lanes<T: Real>(canvas: CanvasDims, lanes: &[Lane<T>]) -> Self {
        Self {
            version: SCENE_FORMAT_VERSION.to_string(),
            canvas,
            lanes: lanes
                .iter()
                .map(|l| l.points().iter().map(|p| p.to_f64()).collect())
                .collect(),
        }
    }

    pub fn to_lanes<T: Real>(&self) -> Result<Vec<Lane<T>>> {
        if self.version != SCENE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "scene version {:?}, expected {SCENE_FORMAT_VERSION:?}",
                self.version
            )));
        }
        CanvasDims::new(self.canvas.w, self.canvas.h)?;
        self.lanes
            .iter()
            .enumerate()
            .map(|(i, pts)| {
                let pts = pts.iter().map(|p| Vec2::from_f64(*p)).collect();
                Lane::new(pts).map_err(|e| Error::Format(format!("lane {i}: {e}")))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Parses CULane `.lines.txt` text: one lane per line of alternating `x y` values.
/// Blank lines are skipped.
pub fn parse_culane_lines<T: Real>(text: &str) -> Result<Vec<Lane<T>>> {
    let mut lanes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if !tokens.len().is_multiple_of(2) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("odd number of coordinates ({})", tokens.len()),
            });
        }
        let mut values = Vec::with_capacity(tokens.len());
        for (j, tok) in tokens.iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("token {} ({tok:?}) is not a number", j + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("token {} ({tok:?}) is not finite", j + 1),
                });
            }
            values.push(v);
        }
        let pts = values
            .chunks_exact(2)
            .map(|c| Vec2::from_f64([c[0], c[1]]))
            .collect();
        let lane = Lane::new(pts).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        lanes.push(lane);
    }
    Ok(lanes)
}

/// CULane text with 4 decimals per coordinate, one newline-terminated lane per line.
pub fn write_culane_lines<T: Real>(lanes: &[Lane<T>]) -> String {
    let mut out = String::new();
    for lane in lanes {
        for (i, p) in lane.points().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let [x, y] = p.to_f64();
            write!(out, "{x:.4} {y:.4}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Binary 16-bit PGM. Values are scaled so that `vmax` (recorded in a comment)
/// maps to 65535; an all-zero map is stored with `vmax = 0`.
pub fn encode_pgm<T: Real>(map: &Heatmap<T>) -> Vec<u8> {
    let vmax = map.max_value().to_f64_lossy().max(0.0);
    let mut out = format!(
        "P5\n# vmax {vmax:e}\n{} {}\n{PGM_MAX}\n",
        map.cols(),
        map.rows()
    )
    .into_bytes();
    out.reserve(2 * map.values().len());
    for v in map.values() {
        let q = if vmax > 0.0 {
            (v.to_f64_lossy().max(0.0) / vmax * f64::from(PGM_MAX)).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Reads a map written by [`encode_pgm`]; the size must match `grid`.
pub fn decode_pgm<T: Real>(bytes: &[u8], grid: GridSpec) -> Result<Heatmap<T>> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut pos = 0usize;
    let mut vmax: Option<f64> = None;
    let mut fields: Vec<String> = Vec::new();
    // header: magic, width, height, maxval; comments may sit between fields
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(bytes.len(), |e| pos + e);
            let comment = std::str::from_utf8(&bytes[pos + 1..end])
                .map_err(|_| bad("comment is not UTF-8"))?;
            if let Some(v) = comment.trim().strip_prefix("vmax") {
                vmax = Some(v.trim().parse().map_err(|_| bad("bad vmax comment"))?);
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (cols, rows, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != usize::from(PGM_MAX) {
        return Err(bad("expected maxval 65535"));
    }
    if (rows, cols) != (grid.rows(), grid.cols()) {
        return Err(bad(&format!(
            "size {cols}x{rows} does not match grid {}x{}",
            grid.cols(),
            grid.rows()
        )));
    }
    let vmax = vmax.ok_or_else(|| bad("missing vmax comment"))?;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != 2 * rows * cols {
        return Err(bad(&format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            2 * rows * cols
        )));
    }
    let values = raster
        .chunks_exact(2)
        .map(|b| T::lit(f64::from(u16::from_be_bytes([b[0], b[1]])) / f64::from(PGM_MAX) * vmax))
        .collect();
    Heatmap::from_values(grid, values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetEntry {
    pub row: usize,
    pub col: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub id: usize,
    pub mask: String,
    pub origin: [f64; 2],
    pub t: f64,
    pub lane_dir: [f64; 2],
    pub guide_tangent: [f64; 2],
    pub alpha: f64,
}

/// Describes one encoded scene: where its maps live and how instance masks
/// pair with keypoint origins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetIndex {
    pub version: String,
    pub grid: GridSpec,
    pub config: TargetConfig<f64>,
    pub keypoints: String,
    pub offsets: Vec<OffsetEntry>,
    pub instances: Vec<InstanceEntry>,
}

/// Index plus every map file, as `(file name, bytes)`.
pub struct EncodedTargets {
    pub index: TargetIndex,
    pub files: Vec<(String, Vec<u8>)>,
}

/// File names are prefixed with `stem`, e.g. `scene_0007_keypoints.pgm`.
pub fn export_targets<T: Real>(t: &TargetSet<T>, stem: &str) -> EncodedTargets {
    let kp_name = format!("{stem}_keypoints.pgm");
    let mut files = vec![(kp_name.clone(), encode_pgm(&t.keypoints))];
    let mut instances = Vec::with_capacity(t.instances.len());
    for (id, inst) in t.instances.iter().enumerate() {
        let name = format!("{stem}_mask_{id:03}.pgm");
        files.push((name.clone(), encode_pgm(&inst.mask)));
        let o = &inst.origin;
        instances.push(InstanceEntry {
            id,
            mask: name,
            origin: o.origin.to_f64(),
            t: o.t.to_f64_lossy(),
            lane_dir: o.lane_dir.to_f64(),
            guide_tangent: o.guide_tangent.to_f64(),
            alpha: o.alpha.to_f64_lossy(),
        });
    }
    let offsets = t
        .offsets
        .entries()
        .map(|(row, col, d)| OffsetEntry {
            row,
            col,
            dx: d.x.to_f64_lossy(),
            dy: d.y.to_f64_lossy(),
        })
        .collect();
    let c = &t.config;
    EncodedTargets {
        index: TargetIndex {
            version: TARGET_INDEX_VERSION.to_string(),
            grid: t.grid,
            config: TargetConfig {
                sigma: c.sigma.to_f64_lossy(),
                d: c.d.to_f64_lossy(),
                kernel_radius_sigmas: c.kernel_radius_sigmas.to_f64_lossy(),
            },
            keypoints: kp_name,
            offsets,
            instances,
        },
        files,
    }
}

/// Rebuilds a target set from an index; `load` returns the bytes of a named map file.
pub fn import_targets<T: Real>(
    index: &TargetIndex,
    mut load: impl FnMut(&str) -> Result<Vec<u8>>,
) -> Result<TargetSet<T>> {
    if index.version != TARGET_INDEX_VERSION {
        return Err(Error::Format(format!(
            "target index version {:?}, expected {TARGET_INDEX_VERSION:?}",
            index.version
        )));
    }
    let grid = GridSpec::new(index.grid.canvas, index.grid.stride)?;
    let config = TargetConfig {
        sigma: T::lit(index.config.sigma),
        d: T::lit(index.config.d),
        kernel_radius_sigmas: T::lit(index.config.kernel_radius_sigmas),
    };
    config.validate()?;
    let keypoints = decode_pgm(&load(&index.keypoints)?, grid)?;
    let mut offsets = OffsetMaps::empty(grid);
    for e in &index.offsets {
        if e.row >= grid.rows() || e.col >= grid.cols() {
            return Err(Error::Format(format!(
                "offset cell ({}, {}) outside grid",
                e.row, e.col
            )));
        }
        offsets.set(e.row, e.col, Vec2::new(T::lit(e.dx), T::lit(e.dy)))?;
    }
    let mut instances = Vec::with_capacity(index.instances.len());
    for e in &index.instances {
        instances.push(InstanceTarget {
            origin: OriginRecord {
                origin: Vec2::from_f64(e.origin),
                t: T::lit(e.t),
                lane_dir: Vec2::from_f64(e.lane_dir),
                guide_tangent: Vec2::from_f64(e.guide_tangent),
                alpha: T::lit(e.alpha),
            },
            mask: decode_pgm(&load(&e.mask)?, grid)?,
        });
    }
    Ok(TargetSet {
        grid,
        config,
        keypoints,
        offsets,
        instances,
    })
}

/// `metric,value` CSV of match counts followed by `extra` rows.
pub fn report_csv(c: &MatchCounts, extra: &[(&str, String)]) -> String {
    let mut rows = vec![
        ("tp", c.tp.to_string()),
        ("fp", c.fp.to_string()),
        ("fn", c.fn_.to_string()),
        ("precision", format!("{:.6}", c.precision())),
        ("recall", format!("{:.6}", c.recall())),
        ("f1", format!("{:.6}", c.f1())),
    ];
    rows.extend(extra.iter().cloned());
    metrics_csv(&rows)
}

pub fn metrics_csv(rows: &[(&str, String)]) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        writeln!(out, "{k},{v}").unwrap();
    }
    out
}

/// One row per angle bucket: `lo,hi,count,tp,recall`.
pub fn buckets_csv(buckets: &[BucketRecall]) -> String {
    let mut out = String::from("lo,hi,count,tp,recall\n");
    for b in buckets {
        writeln!(out, "{},{},{},{},{:.6}", b.lo, b.hi, b.gt, b.tp, b.recall()).unwrap();
    }
    out
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    if let Err(e) = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path)) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}
