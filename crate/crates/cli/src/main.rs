use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use laneguide::decoder::decode_scene;
use laneguide::eval::{empty_buckets, evaluate, tally_buckets, MatchCounts};
use laneguide::geometry::{grazing_angle_histogram, CanvasDims, GuideKind};
use laneguide::io::{
    buckets_csv, export_targets, import_targets, parse_culane_lines, report_csv, write_atomic,
    write_culane_lines, SceneFile, TargetIndex,
};
use laneguide::pipeline::{GuideSpec, Roundtrip};
use laneguide::synth::{gen_scene, NoiseConfig};
use laneguide::targets::{encode_scene, GridSpec};
use laneguide::{BucketEdges, Lane, PipelineConfig};

const TARGET_INDEX_SUFFIX: &str = ".targets.json";
const LINES_SUFFIX: &str = ".lines.txt";
const CULANE_CANVAS: &str = "1640x590";

#[derive(Parser)]
#[command(
    name = "laneguide",
    version,
    about = "Synthetic lane scenes, guide-line targets, decoding and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded scenes as JSON scene files.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `num_scenes` from the config.
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode scene files into keypoint and instance-mask PGMs plus an index.
    Encode {
        #[arg(long)]
        scenes: PathBuf,
        #[command(flatten)]
        guide: GuideArgs,
        #[arg(long, default_value_t = 8)]
        stride: u32,
        /// Pipeline config supplying the target settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode encoded targets into CULane `.lines.txt` files.
    Decode {
        #[arg(long)]
        targets: PathBuf,
        /// Pipeline config supplying the decoder settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match predictions to ground truth and write a metric CSV.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        width: f64,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Canvas for `.lines.txt` inputs, as WxH; scene files carry their own.
        #[arg(long, default_value = CULANE_CANVAS, value_parser = parse_canvas)]
        canvas: CanvasDims,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram ground-truth lanes by grazing angle, with recall when predictions are given.
    AngleStats {
        #[arg(long)]
        scenes: PathBuf,
        #[command(flatten)]
        guide: GuideArgs,
        #[arg(long, default_value = "0,30,60,90", value_parser = parse_edges)]
        edges: Edges,
        #[arg(long)]
        preds: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        width: f64,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value = CULANE_CANVAS, value_parser = parse_canvas)]
        canvas: CanvasDims,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, encode, corrupt, decode and evaluate in one pass.
    Roundtrip {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Gaussian noise sigma, or a path to a noise config JSON.
        #[arg(long)]
        noise: Option<String>,
        #[arg(long, value_enum)]
        guide: Option<GuideChoice>,
        #[arg(long)]
        cx: Option<f64>,
        #[arg(long)]
        cy: Option<f64>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-bucket recall here.
        #[arg(long)]
        buckets_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GuideChoice {
    Rect,
    Curved,
}

#[derive(Args)]
struct GuideArgs {
    #[arg(long, value_enum, default_value = "curved")]
    guide: GuideChoice,
    #[arg(long, default_value_t = 0.5)]
    cx: f64,
    #[arg(long, default_value_t = 0.4)]
    cy: f64,
}

impl GuideArgs {
    fn spec(&self) -> GuideSpec {
        GuideSpec {
            kind: self.guide.kind(),
            cx: self.cx,
            cy: self.cy,
        }
    }
}

impl GuideChoice {
    fn kind(self) -> GuideKind {
        match self {
            GuideChoice::Rect => GuideKind::Rectangle,
            GuideChoice::Curved => GuideKind::Curved,
        }
    }
}

fn parse_canvas(s: &str) -> Result<CanvasDims, String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    CanvasDims::new(w, h).map_err(|e| e.to_string())
}

#[derive(Clone)]
struct Edges(BucketEdges);

fn parse_edges(s: &str) -> Result<Edges, String> {
    let edges = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad edge {t:?}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    BucketEdges::new(edges)
        .map(Edges)
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            config,
            scenes,
            out,
        } => synth(config.as_deref(), scenes, &out),
        Command::Encode {
            scenes,
            guide,
            stride,
            config,
            out,
        } => encode(&scenes, guide.spec(), stride, config.as_deref(), &out),
        Command::Decode {
            targets,
            config,
            out,
        } => decode(&targets, config.as_deref(), &out),
        Command::Eval {
            preds,
            gts,
            width,
            iou,
            canvas,
            out,
        } => eval(&preds, &gts, width, iou, canvas, &out),
        Command::AngleStats {
            scenes,
            guide,
            edges,
            preds,
            width,
            iou,
            canvas,
            out,
        } => angle_stats(
            &scenes,
            guide.spec(),
            edges.0,
            preds.as_deref(),
            width,
            iou,
            canvas,
            &out,
        ),
        Command::Roundtrip {
            config,
            noise,
            guide,
            cx,
            cy,
            scenes,
            out,
            buckets_out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(noise) = noise {
                cfg.noise = parse_noise(&noise)?;
            }
            if let Some(g) = guide {
                cfg.guide.kind = g.kind();
            }
            cfg.guide.cx = cx.unwrap_or(cfg.guide.cx);
            cfg.guide.cy = cy.unwrap_or(cfg.guide.cy);
            cfg.num_scenes = scenes.unwrap_or(cfg.num_scenes);
            roundtrip(&cfg, &out, buckets_out.as_deref())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_noise(arg: &str) -> Result<NoiseConfig> {
    let noise = match arg.parse::<f64>() {
        Ok(sigma) => NoiseConfig {
            gaussian_sigma: sigma,
            ..NoiseConfig::default()
        },
        Err(_) => {
            let text =
                fs::read_to_string(arg).with_context(|| format!("reading noise config {arg}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing noise config {arg}"))?
        }
    };
    noise.validate()?;
    Ok(noise)
}

/// Files rendered in memory and written together; nothing is left behind if any write fails.
#[derive(Default)]
struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    fn add(&mut self, path: PathBuf, bytes: impl Into<Vec<u8>>) {
        self.files.push((path, bytes.into()));
    }

    fn commit(self) -> Result<()> {
        let mut created_dirs = Vec::new();
        let mut written: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<()> {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    if !dir.exists() {
                        fs::create_dir_all(dir)
                            .with_context(|| format!("creating {}", dir.display()))?;
                        created_dirs.push(dir.to_path_buf());
                    }
                }
                write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
                written.push(path.clone());
            }
            Ok(())
        })();
        if result.is_err() {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            for d in created_dirs.iter().rev() {
                let _ = fs::remove_dir(d);
            }
        }
        result
    }
}

// Sorted files in `dir` (or the single file `path`) whose names end with one of `suffixes`.
fn list_inputs(path: &Path, suffixes: &[&str], exclude: &[&str]) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries =
        fs::read_dir(path).with_context(|| format!("reading directory {}", path.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry?.path();
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if p.is_file()
            && suffixes.iter().any(|s| name.ends_with(s))
            && !exclude.iter().any(|s| name.ends_with(s))
            && !name.starts_with('.')
        {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in [TARGET_INDEX_SUFFIX, LINES_SUFFIX, ".json"] {
        if let Some(stem) = name.strip_suffix(suffix) {
            return stem.to_string();
        }
    }
    name
}

fn read_scene(path: &Path) -> Result<(CanvasDims, Vec<Lane>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file =
        SceneFile::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let lanes = file
        .to_lanes()
        .with_context(|| format!("in {}", path.display()))?;
    Ok((file.canvas, lanes))
}

// Lanes from a scene JSON or a CULane file; `canvas` applies to the latter.
fn read_lanes(path: &Path, canvas: CanvasDims) -> Result<(CanvasDims, Vec<Lane>)> {
    if path.to_string_lossy().ends_with(LINES_SUFFIX) {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let lanes = parse_culane_lines(&text).with_context(|| format!("in {}", path.display()))?;
        Ok((canvas, lanes))
    } else {
        read_scene(path)
    }
}

fn synth(config: Option<&Path>, scenes: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.num_scenes = scenes.unwrap_or(cfg.num_scenes);
    let rendered = (0..cfg.num_scenes)
        .into_par_iter()
        .map(|k| {
            let lanes = gen_scene::<f64>(&cfg.scene.for_scene(k))?;
            Ok(SceneFile::from_lanes(cfg.scene.canvas, &lanes).to_json())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut staged = Staged::default();
    for (k, json) in rendered.into_iter().enumerate() {
        staged.add(out.join(format!("scene_{k:04}.json")), json);
    }
    // the effective config, RNG name included, sits next to the corpus
    staged.add(
        out.join("config.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    );
    staged.commit()
}

fn encode(
    scenes: &Path,
    guide: GuideSpec,
    stride: u32,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let inputs = list_inputs(scenes, &[".json"], &[TARGET_INDEX_SUFFIX, "config.json"])?;
    let rendered = inputs
        .par_iter()
        .map(|path| {
            let (canvas, lanes) = read_scene(path)?;
            let grid = GridSpec::new(canvas, stride)?;
            let g = guide.build::<f64>(canvas)?;
            let t = encode_scene(&lanes, &g, &grid, &cfg.targets)
                .with_context(|| format!("encoding {}", path.display()))?;
            let stem = stem_of(path);
            let enc = export_targets(&t, &stem);
            let index = serde_json::to_string_pretty(&enc.index)? + "\n";
            Ok((stem, index, enc.files))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut staged = Staged::default();
    for (stem, index, files) in rendered {
        for (name, bytes) in files {
            staged.add(out.join(name), bytes);
        }
        staged.add(out.join(format!("{stem}{TARGET_INDEX_SUFFIX}")), index);
    }
    staged.commit()
}

fn decode(targets: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let indices = list_inputs(targets, &[TARGET_INDEX_SUFFIX], &[])?;
    let rendered = indices
        .par_iter()
        .map(|path| {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let index: TargetIndex = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let t = import_targets::<f64>(&index, |name| Ok(fs::read(dir.join(name))?))
                .with_context(|| format!("loading targets of {}", path.display()))?;
            let lanes: Vec<Lane> = decode_scene(&t, &cfg.decoder)
                .iter()
                .filter_map(|d| d.to_lane(t.grid.canvas))
                .collect();
            Ok((stem_of(path), write_culane_lines(&lanes)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut staged = Staged::default();
    for (stem, text) in rendered {
        staged.add(out.join(format!("{stem}{LINES_SUFFIX}")), text);
    }
    staged.commit()
}

// Prediction/ground-truth file pairs matched by stem.
fn pair_inputs(preds: &Path, gts: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let exclude = [TARGET_INDEX_SUFFIX, "config.json"];
    let gt_files = list_inputs(gts, &[LINES_SUFFIX, ".json"], &exclude)?;
    if preds.is_file() {
        if gt_files.len() != 1 {
            bail!("a single prediction file needs a single ground-truth file");
        }
        return Ok(vec![(preds.to_path_buf(), gt_files[0].clone())]);
    }
    let pred_files = list_inputs(preds, &[LINES_SUFFIX, ".json"], &exclude)?;
    gt_files
        .into_iter()
        .map(|gt| {
            let stem = stem_of(&gt);
            let pred = pred_files
                .iter()
                .find(|p| stem_of(p) == stem)
                .ok_or_else(|| anyhow!("no prediction for {}", gt.display()))?;
            Ok((pred.clone(), gt))
        })
        .collect()
}

fn eval_config(width: f64, iou: f64) -> Result<laneguide::EvalConfig> {
    let cfg = laneguide::EvalConfig {
        lane_width: width,
        iou_threshold: iou,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn eval(
    preds: &Path,
    gts: &Path,
    width: f64,
    iou: f64,
    canvas: CanvasDims,
    out: &Path,
) -> Result<()> {
    let cfg = eval_config(width, iou)?;
    let pairs = pair_inputs(preds, gts)?;
    let counts = pairs
        .par_iter()
        .map(|(p, g)| {
            let (canvas, gt) = read_lanes(g, canvas)?;
            let (_, pred) = read_lanes(p, canvas)?;
            Ok(evaluate(&pred, &gt, &cfg, canvas).counts())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = MatchCounts::default();
    for c in counts {
        total += c;
    }
    let mut staged = Staged::default();
    staged.add(out.to_path_buf(), report_csv(&total, &[]));
    staged.commit()
}

#[allow(clippy::too_many_arguments)]
fn angle_stats(
    scenes: &Path,
    guide: GuideSpec,
    edges: BucketEdges,
    preds: Option<&Path>,
    width: f64,
    iou: f64,
    canvas: CanvasDims,
    out: &Path,
) -> Result<()> {
    let csv = match preds {
        None => {
            let inputs = list_inputs(
                scenes,
                &[LINES_SUFFIX, ".json"],
                &[TARGET_INDEX_SUFFIX, "config.json"],
            )?;
            let scenes = inputs
                .par_iter()
                .map(|p| read_lanes(p, canvas))
                .collect::<Result<Vec<_>>>()?;
            let mut counts = vec![0usize; edges.bucket_count()];
            for (canvas, lanes) in scenes {
                let g = guide.build::<f64>(canvas)?;
                let h = grazing_angle_histogram(std::slice::from_ref(&lanes), &g, &edges);
                for (c, n) in counts.iter_mut().zip(h) {
                    *c += n;
                }
            }
            let mut csv = String::from("lo,hi,count\n");
            for (i, n) in counts.iter().enumerate() {
                let (lo, hi) = edges.bounds(i);
                csv.push_str(&format!("{lo},{hi},{n}\n"));
            }
            csv
        }
        Some(preds) => {
            let cfg = eval_config(width, iou)?;
            let pairs = pair_inputs(preds, scenes)?;
            let tallies = pairs
                .par_iter()
                .map(|(p, g)| {
                    let (canvas, gt) = read_lanes(g, canvas)?;
                    let (_, pred) = read_lanes(p, canvas)?;
                    let guide = guide.build::<f64>(canvas)?;
                    let report = evaluate(&pred, &gt, &cfg, canvas);
                    let mut buckets = empty_buckets(&edges);
                    tally_buckets(&mut buckets, &report, &gt, &guide, &edges);
                    Ok(buckets)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total = empty_buckets(&edges);
            for buckets in tallies {
                for (t, b) in total.iter_mut().zip(buckets) {
                    t.gt += b.gt;
                    t.tp += b.tp;
                }
            }
            buckets_csv(&total)
        }
    };
    let mut staged = Staged::default();
    staged.add(out.to_path_buf(), csv);
    staged.commit()
}

fn roundtrip(cfg: &PipelineConfig, out: &Path, buckets_out: Option<&Path>) -> Result<()> {
    let rt = Roundtrip::new(cfg)?;
    let tallies = (0..cfg.num_scenes)
        .into_par_iter()
        .map(|k| rt.scene(k))
        .collect::<laneguide::Result<Vec<_>>>()?;
    let r = rt.finish(tallies);
    let mut extra = vec![
        ("scenes", r.scenes.to_string()),
        ("gt_lanes", r.gt_lanes.to_string()),
        ("mean_point_error", format!("{:.6}", r.mean_point_error)),
        ("max_point_error", format!("{:.6}", r.max_point_error)),
        ("range_violations", r.range_violations.to_string()),
        ("row_wise", r.row_wise.to_string()),
        ("col_wise", r.col_wise.to_string()),
    ];
    let names: Vec<String> = r
        .buckets
        .iter()
        .map(|b| format!("recall_{}_{}", b.lo, b.hi))
        .collect();
    for (name, b) in names.iter().zip(&r.buckets) {
        extra.push((name.as_str(), format!("{:.6}", b.recall())));
    }
    let mut staged = Staged::default();
    staged.add(out.to_path_buf(), report_csv(&r.counts, &extra));
    if let Some(path) = buckets_out {
        staged.add(path.to_path_buf(), buckets_csv(&r.buckets));
    }
    staged.commit()
}
