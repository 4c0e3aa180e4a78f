use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use efk_core::dataset::{
    build_split, clamp_box, filter_small_boxes, parse_annotations, parse_split_metadata, serialize_annotations,
    warp_box, Homography, ParseOptions, SplitMetadata, SplitSpec,
};
use efk_core::eval::{evaluate_with, parse_detections, ApInterpolation};
use efk_core::event::{decode_events, encode_events, window_slice, EventFormat, EventWindow, SimConfig};
use efk_core::fusion::{
    afcm_with_attention, random_features, FeatureMap, FusionWeights, Modality, SoftmaxAxis, StagePreset,
    DEFAULT_REDUCTION,
};
use efk_core::represent::{polarity_integration, render_png, timestamp_frame_or_zeros, ColorMapping};
use efk_core::structure::{edge_map, fit_sif, FitOptions, Plane};
use efk_core::synthetic::MovingBar;
use efk_core::Tensor;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io_at, tensor_at, CliError};

/// Attention rows (or columns) must sum to one within this tolerance.
const SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Evt1,
    Csv,
}

impl From<FormatArg> for EventFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Evt1 => EventFormat::Evt1,
            FormatArg::Csv => EventFormat::Csv,
        }
    }
}

fn format_for(path: &Path, explicit: Option<FormatArg>, flag: &str) -> Result<EventFormat, CliError> {
    if let Some(f) = explicit {
        return Ok(f.into());
    }
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => Ok(EventFormat::Csv),
        Some("evt1" | "evt" | "bin") => Ok(EventFormat::Evt1),
        _ => Err(CliError::Config(format!(
            "cannot infer the event format of {}; pass {flag}",
            path.display()
        ))),
    }
}

fn resolution(width: Option<u32>, height: Option<u32>) -> Result<Option<(u32, u32)>, CliError> {
    match (width, height) {
        (Some(w), Some(h)) => Ok(Some((w, h))),
        (None, None) => Ok(None),
        _ => Err(CliError::Config("--width and --height must be given together".into())),
    }
}

fn read_events(path: &Path, format: EventFormat, res: Option<(u32, u32)>) -> Result<EventWindow, CliError> {
    let bytes = std::fs::read(path).map_err(io_at(path))?;
    decode_events(&bytes, format, res).map_err(|source| CliError::Codec { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(io_at(path))
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(io_at("<stdout>")),
    }
}

fn save_tensor(t: &Tensor, path: &Path) -> Result<(), CliError> {
    t.save(path).map_err(tensor_at(path))
}

fn load_tensor(path: &Path) -> Result<Tensor, CliError> {
    Tensor::load(path).map_err(tensor_at(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted
    #[arg(long, value_enum)]
    pub from: Option<FormatArg>,
    /// Output format; inferred from the extension when omitted
    #[arg(long, value_enum)]
    pub to: Option<FormatArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Sensor width, required for CSV input
    #[arg(long)]
    pub width: Option<u32>,
    /// Sensor height, required for CSV input
    #[arg(long)]
    pub height: Option<u32>,
}

pub fn convert(a: &ConvertArgs) -> Result<(), CliError> {
    let from = format_for(&a.input, a.from, "--from")?;
    let to = format_for(&a.out, a.to, "--to")?;
    let window = read_events(&a.input, from, resolution(a.width, a.height)?)?;
    let bytes = encode_events(&window, to).map_err(|source| CliError::Codec { path: a.out.clone(), source })?;
    write_file(&a.out, &bytes)
}

#[derive(Debug, Args)]
pub struct EventInput {
    /// Event file (EVT1 or CSV)
    pub events: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Sensor width, required for CSV input
    #[arg(long)]
    pub width: Option<u32>,
    /// Sensor height, required for CSV input
    #[arg(long)]
    pub height: Option<u32>,
    /// Window start in microseconds [default: first event]
    #[arg(long)]
    pub t0: Option<u64>,
}

impl EventInput {
    /// The configured window of the input stream.
    fn load(&self, cfg: &RunConfig) -> Result<EventWindow, CliError> {
        let format = format_for(&self.events, self.format, "--format")?;
        let all = read_events(&self.events, format, resolution(self.width, self.height)?)?;
        if all.is_empty() && self.t0.is_none() {
            return Ok(all);
        }
        let start = self.t0.unwrap_or(all.t_start());
        Ok(window_slice(&all, start, cfg.window_us())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Timestamp,
    Voxel,
}

#[derive(Debug, Args)]
pub struct RepresentArgs {
    #[command(flatten)]
    pub input: EventInput,
    #[arg(long, value_enum, default_value = "timestamp")]
    pub kind: KindArg,
    /// Output tensor (TNSR)
    #[arg(long)]
    pub out: PathBuf,
    /// Also render a PNG preview
    #[arg(long)]
    pub png: Option<PathBuf>,
}

pub fn represent(a: &RepresentArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let window = a.input.load(cfg)?;
    let (tensor, mapping) = match a.kind {
        KindArg::Timestamp => (timestamp_frame_or_zeros(&window).data, ColorMapping::Grayscale),
        KindArg::Voxel => (polarity_integration(&window, cfg.slices)?.data, ColorMapping::SignedDiverging),
    };
    save_tensor(&tensor, &a.out)?;
    if let Some(png) = &a.png {
        render_png(&tensor, mapping, png)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SifArgs {
    #[command(flatten)]
    pub input: EventInput,
    /// Well-exposed frame: PNG (converted to luma) or a rank-2 TNSR tensor
    #[arg(long)]
    pub target: PathBuf,
    /// Output SIF tensor (TNSR)
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV [default: stdout]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long, default_value_t = FitOptions::default().iterations)]
    pub iterations: usize,
    #[arg(long, default_value_t = FitOptions::default().step)]
    pub step: f64,
    /// Take every step as is instead of halving until the loss does not rise
    #[arg(long)]
    pub no_line_search: bool,
}

fn load_plane(path: &Path) -> Result<Plane, CliError> {
    let is_tensor = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tnsr"));
    if is_tensor {
        let t = load_tensor(path)?;
        let t = match *t.shape() {
            [1, h, w] => t.reshape(&[h, w]).map_err(tensor_at(path))?,
            _ => t,
        };
        return Ok(Plane::from_tensor(&t)?);
    }
    let img = image::open(path).map_err(|source| CliError::Image { path: path.to_path_buf(), source })?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Plane::new(h as usize, w as usize, img.pixels().map(|p| p.0[0] as f64 / 255.0).collect()))
}

pub fn sif(a: &SifArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let window = a.input.load(cfg)?;
    let f = timestamp_frame_or_zeros(&window);
    let e = polarity_integration(&window, cfg.slices)?;
    let s = edge_map(&load_plane(&a.target)?, cfg.operator)?;
    let opt = FitOptions { step: a.step, iterations: a.iterations, line_search: !a.no_line_search, ..FitOptions::default() };
    let fit = fit_sif(&f, &e, &s, &cfg.cc(), &opt)?;
    let tensor = fit.sif.plane.to_tensor();
    save_tensor(&tensor, &a.out)?;
    if let Some(png) = &a.png {
        render_png(&tensor, ColorMapping::Grayscale, png)?;
    }
    emit(a.trace.as_deref(), &fit.trace_csv())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Conv,
    Layer1,
    Layer2,
    Layer3,
}

impl From<StageArg> for StagePreset {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Conv => StagePreset::Conv,
            StageArg::Layer1 => StagePreset::Layer1,
            StageArg::Layer2 => StagePreset::Layer2,
            StageArg::Layer3 => StagePreset::Layer3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Keys,
    Queries,
}

#[derive(Debug, Args)]
pub struct AfcmArgs {
    /// RGB features, C×H×W TNSR [default: random, from --stage and --seed]
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    /// Event features, C×H×W TNSR [default: random, from --stage and --seed]
    #[arg(long)]
    pub event: Option<PathBuf>,
    /// Shape preset for generated features
    #[arg(long, value_enum, default_value = "layer2")]
    pub stage: StageArg,
    /// Weight directory holding manifest.json [default: random, from --seed]
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Channel reduction of the attention projections for random weights
    #[arg(long, default_value_t = DEFAULT_REDUCTION)]
    pub reduction: usize,
    #[arg(long, value_enum, default_value = "keys")]
    pub axis: AxisArg,
    /// Zero the output projection; the fused map then equals the RGB input
    #[arg(long)]
    pub zero_out: bool,
    /// Write the weights that were used to this directory
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
    /// Fused features (TNSR)
    #[arg(long)]
    pub out: PathBuf,
    /// Attention report JSON [default: stdout]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct AttentionReport {
    shape: [usize; 3],
    positions: usize,
    axis: SoftmaxAxis,
    min_sum: f64,
    max_sum: f64,
    max_deviation: f64,
    within_tolerance: bool,
    /// Largest `|fused - rgb|`.
    max_residual: f64,
}

fn load_features(path: &Path, modality: Modality) -> Result<FeatureMap, CliError> {
    FeatureMap::new(load_tensor(path)?, modality).map_err(|source| CliError::Weights { path: path.to_path_buf(), source })
}

pub fn afcm_demo(a: &AfcmArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let (c, h, w) = StagePreset::from(a.stage).dims();
    let rgb = match &a.rgb {
        Some(p) => load_features(p, Modality::Rgb)?,
        None => random_features(c, h, w, Modality::Rgb, cfg.seed),
    };
    let event = match &a.event {
        Some(p) => load_features(p, Modality::Event)?,
        None => random_features(c, h, w, Modality::Event, cfg.seed.wrapping_add(1)),
    };
    let weights = match &a.weights {
        Some(dir) => FusionWeights::load_dir(dir).map_err(|source| CliError::Weights { path: dir.clone(), source })?,
        None => FusionWeights::random(rgb.dims()[0], a.reduction, cfg.seed.wrapping_add(2))?,
    };
    let weights = if a.zero_out { weights.with_zero_output() } else { weights };
    if let Some(dir) = &a.save_weights {
        weights.save_dir(dir).map_err(|source| CliError::Weights { path: dir.clone(), source })?;
    }
    let axis = match a.axis {
        AxisArg::Keys => SoftmaxAxis::Keys,
        AxisArg::Queries => SoftmaxAxis::Queries,
    };
    let (fused, attention) = afcm_with_attention(&rgb, &event, &weights, axis)?;
    save_tensor(&fused.data, &a.out)?;

    let sums = attention.normalized_sums();
    let min_sum = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let max_sum = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_deviation = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let max_residual = fused
        .data
        .data()
        .iter()
        .zip(rgb.data.data())
        .map(|(f, r)| (f - r).abs() as f64)
        .fold(0.0, f64::max);
    let report = AttentionReport {
        shape: fused.dims(),
        positions: sums.len(),
        axis,
        min_sum,
        max_sum,
        max_deviation,
        within_tolerance: max_deviation <= SUM_TOLERANCE,
        max_residual,
    };
    emit(a.report.as_deref(), &to_json(&report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpArg {
    Coco101,
    AllPoints,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections, JSON lines {"frame","x","y","w","h","class","score"}
    #[arg(long)]
    pub dets: PathBuf,
    /// Ground truth, JSON lines {"frame","x","y","w","h","class"}
    #[arg(long)]
    pub gts: PathBuf,
    /// `<all|daytime|nighttime>/<balanced|imbalanced>`
    #[arg(long, default_value = "all/imbalanced")]
    pub split: String,
    /// Sequence lighting tags, required for daytime/nighttime splits
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "coco101")]
    pub interp: InterpArg,
    /// Metrics JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_at(path))
}

fn annotation_options() -> ParseOptions {
    ParseOptions { vocabulary: None, ..ParseOptions::default() }
}

pub fn eval(a: &EvalArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let spec: SplitSpec = a.split.parse().map_err(CliError::Config)?;
    let metadata: SplitMetadata = match &a.metadata {
        Some(p) => parse_split_metadata(&read_text(p)?)
            .map_err(|source| CliError::Annotations { path: p.clone(), source })?,
        None => SplitMetadata::new(),
    };
    let gts = parse_annotations(&read_text(&a.gts)?, &annotation_options())
        .map_err(|source| CliError::Annotations { path: a.gts.clone(), source })?
        .boxes;
    let dets = parse_detections(&read_text(&a.dets)?)
        .map_err(|source| CliError::Detections { path: a.dets.clone(), source })?;

    let split = build_split(&filter_small_boxes(&gts, cfg.min_diag), &metadata, &spec)?;
    let dets: Vec<_> = dets
        .into_iter()
        .filter(|d| split.contains_frame(&d.frame_id) && efk_core::dataset::class_allowed(&spec, &d.class_name))
        .collect();
    let interp = match a.interp {
        InterpArg::Coco101 => ApInterpolation::Coco101,
        InterpArg::AllPoints => ApInterpolation::AllPoints,
    };
    emit(a.out.as_deref(), &to_json(&evaluate_with(&dets, &split.boxes, interp)))
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Annotations, JSON lines {"frame","x","y","w","h","class"}
    pub input: PathBuf,
    /// Output JSON lines [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Nine numbers, row-major, mapping source to target coordinates
    #[arg(long)]
    pub homography: Option<PathBuf>,
    /// Target image size `WIDTHxHEIGHT`; boxes are clamped to it
    #[arg(long, value_parser = parse_size)]
    pub target_size: Option<(f64, f64)>,
    /// Skip bad records with a warning instead of failing
    #[arg(long)]
    pub lenient: bool,
}

fn parse_size(s: &str) -> Result<(f64, f64), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().ok().filter(|v| *v > 0.0 && v.is_finite());
    match (parse(w), parse(h)) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(format!("expected positive WIDTHxHEIGHT, got {s:?}")),
    }
}

pub fn annotate(a: &AnnotateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let opts = ParseOptions { strict: !a.lenient, ..annotation_options() };
    let parsed = parse_annotations(&read_text(&a.input)?, &opts)
        .map_err(|source| CliError::Annotations { path: a.input.clone(), source })?;
    for w in &parsed.warnings {
        eprintln!("warning[E_ANNOTATION]: {}: line {}: {}", a.input.display(), w.line, w.message);
    }
    let homography = match &a.homography {
        Some(p) => {
            Some(Homography::parse(&read_text(p)?).map_err(|source| CliError::Annotations { path: p.clone(), source })?)
        }
        None => None,
    };
    let target = a.target_size.unwrap_or((f64::INFINITY, f64::INFINITY));
    let mut boxes = Vec::with_capacity(parsed.boxes.len());
    for b in &parsed.boxes {
        let placed = match &homography {
            Some(h) => warp_box(h, b, target)?,
            None => clamp_box(b, target),
        };
        boxes.extend(placed);
    }
    emit(a.out.as_deref(), &serialize_annotations(&filter_small_boxes(&boxes, cfg.min_diag)))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Event file to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Write the last, sharp frame here (PNG, or TNSR by extension)
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value_t = MovingBar::default().width)]
    pub width: usize,
    #[arg(long, default_value_t = MovingBar::default().height)]
    pub height: usize,
    #[arg(long, default_value_t = MovingBar::default().frames)]
    pub frames: usize,
    /// Contrast threshold in log-intensity units
    #[arg(long, default_value_t = SimConfig::default().c)]
    pub threshold: f64,
}

pub fn simulate(a: &SimulateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    if a.frames < 2 || a.width < 8 || a.height < 6 {
        return Err(CliError::Config("simulate needs --frames >= 2, --width >= 8 and --height >= 6".into()));
    }
    let d = MovingBar::default();
    let bar = MovingBar {
        width: a.width,
        height: a.height,
        x_start: a.width / 8,
        x_end: a.width - a.width / 8 - d.bar,
        frames: a.frames,
        duration_us: cfg.window_us(),
        ..d
    };
    let scene = bar.render(&SimConfig { c: a.threshold, ..SimConfig::default() })?;
    let format = format_for(&a.out, a.format, "--format")?;
    let bytes = encode_events(&scene.window, format).map_err(|source| CliError::Codec { path: a.out.clone(), source })?;
    write_file(&a.out, &bytes)?;
    if let Some(target) = &a.target {
        let frame = scene.last_frame();
        if target.extension().is_some_and(|e| e.eq_ignore_ascii_case("tnsr")) {
            save_tensor(frame, target)?;
        } else {
            let img = image::GrayImage::from_fn(a.width as u32, a.height as u32, |x, y| {
                let v = frame.data()[y as usize * a.width + x as usize];
                image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
            });
            img.save_with_format(target, image::ImageFormat::Png)
                .map_err(|source| CliError::Image { path: target.clone(), source })?;
        }
    }
    Ok(())
}
