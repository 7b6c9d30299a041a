//! Interactive motion control benchmark: 34 prompts, three sampled box
//! trajectories each.
//!
//! Sampling per trajectory:
//!
//! * start at one of the nine cell centroids of a 3x3 canvas grid; moving
//!   prompts skip the three centroids on the edge they travel towards;
//! * box size is 0.25 or 0.35 of the shorter canvas side (geometric mean
//!   of width and height), shaped by the prompt's aspect;
//! * moving prompts advance 5 to 20 px per frame, direction flipped at
//!   random; zig-zag prompts move horizontally and reverse their vertical
//!   component every `ceil(frames / 3)` frames;
//! * every box coordinate gets independent uniform jitter and the box is
//!   shifted back inside the canvas.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BBox, BBoxTrajectory, Canvas};
use crate::trajfile::{CanvasSpec, TrajectoryFile};

pub const PROMPT_COUNT: usize = 34;
pub const SETS_PER_PROMPT: usize = 3;
pub const SIZE_FRACTIONS: [f64; 2] = [0.25, 0.35];
pub const SPEED_RANGE: std::ops::RangeInclusive<u32> = 5..=20;
pub const MIN_FRAMES: usize = 8;
pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_JITTER_PX: u32 = 1;

/// Canvas used for the benchmark: 256x256, 24 frames.
pub fn default_canvas() -> Canvas {
    Canvas { width: 256, height: 256, num_frames: 24 }
}

const PROMPT_TABLE: &str = include_str!("../data/imc_prompts.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Stationary,
    Moving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    UpDown,
    LeftRight,
    ZigZag,
    None,
}

/// Box width:height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aspect {
    #[serde(rename = "square_1_1")]
    Square,
    #[serde(rename = "horiz_4_3")]
    Horizontal,
    #[serde(rename = "vert_3_4")]
    Vertical,
}

impl Aspect {
    pub fn ratio(self) -> f64 {
        match self {
            Aspect::Square => 1.0,
            Aspect::Horizontal => 4.0 / 3.0,
            Aspect::Vertical => 3.0 / 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub text: String,
    pub subject: String,
    pub motion: Motion,
    pub direction: Direction,
    pub aspect: Aspect,
}

fn parse_field<T: for<'de> Deserialize<'de>>(raw: &str, line: usize) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(raw.to_owned()))
        .map_err(|e| Error::Format(format!("prompt table line {line}: {e}")))
}

/// Parse a tab-separated prompt table (`#` lines are comments).
pub fn parse_prompt_table(text: &str) -> Result<Vec<PromptEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [text, subject, motion, direction, aspect] = cols[..] else {
            return Err(Error::Format(format!("prompt table line {}: expected 5 columns", n + 1)));
        };
        let entry = PromptEntry {
            text: text.to_owned(),
            subject: subject.to_owned(),
            motion: parse_field(motion, n + 1)?,
            direction: parse_field(direction, n + 1)?,
            aspect: parse_field(aspect, n + 1)?,
        };
        if (entry.direction == Direction::None) != (entry.motion == Motion::Stationary) {
            return Err(Error::Format(format!("prompt table line {}: motion and direction disagree", n + 1)));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn builtin_prompts() -> Vec<PromptEntry> {
    parse_prompt_table(PROMPT_TABLE).expect("bundled prompt table is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySampleParams {
    /// Centroid index `row * 3 + col` on the 3x3 grid.
    pub start_centroid: usize,
    pub size_fraction: f64,
    /// Pixels per frame; `None` for stationary prompts.
    pub speed: Option<u32>,
    pub flip: bool,
    pub jitter_px: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImcOptions {
    pub jitter_px: u32,
    /// Frames between zig-zag reversals; `None` means `ceil(frames / 3)`.
    pub zigzag_period: Option<usize>,
}

impl Default for ImcOptions {
    fn default() -> Self {
        ImcOptions { jitter_px: DEFAULT_JITTER_PX, zigzag_period: None }
    }
}

/// The nine cell centroids of a 3x3 grid, row-major.
pub fn centroids(canvas: &Canvas) -> [(f64, f64); 9] {
    std::array::from_fn(|k| {
        let (row, col) = (k / 3, k % 3);
        (
            (2 * col + 1) as f64 * canvas.width as f64 / 6.0,
            (2 * row + 1) as f64 * canvas.height as f64 / 6.0,
        )
    })
}

/// Unit travel direction `(dx, dy)` at frame 0, image coordinates (y down).
fn heading(direction: Direction, flip: bool) -> (i32, i32) {
    let sign = if flip { -1 } else { 1 };
    match direction {
        Direction::LeftRight | Direction::ZigZag => (sign, 0),
        Direction::UpDown => (0, sign),
        Direction::None => (0, 0),
    }
}

/// Start centroids allowed for a prompt; moving prompts drop the edge line
/// they travel towards.
pub fn allowed_centroids(direction: Direction, flip: bool) -> Vec<usize> {
    let (dx, dy) = heading(direction, flip);
    (0..9)
        .filter(|&k| {
            let (row, col) = (k / 3, k % 3);
            !((dx > 0 && col == 2) || (dx < 0 && col == 0) || (dy > 0 && row == 2) || (dy < 0 && row == 0))
        })
        .collect()
}

/// Box width and height for an aspect and size fraction.
pub fn box_size(aspect: Aspect, size_fraction: f64, canvas: &Canvas) -> Result<(u32, u32)> {
    let side = size_fraction * canvas.width.min(canvas.height) as f64;
    let r = aspect.ratio().sqrt();
    let (w, h) = ((side * r).round(), (side / r).round());
    if w < 1.0 || h < 1.0 || w > canvas.width as f64 || h > canvas.height as f64 {
        return Err(invalid(format!(
            "canvas {}x{} cannot hold a {size_fraction} box with aspect {aspect:?}",
            canvas.width, canvas.height
        )));
    }
    Ok((w as u32, h as u32))
}

pub fn sample_params(entry: &PromptEntry, opts: &ImcOptions, rng: &mut impl Rng) -> TrajectorySampleParams {
    let size_fraction = SIZE_FRACTIONS[rng.random_range(0..SIZE_FRACTIONS.len())];
    let (speed, flip) = match entry.motion {
        Motion::Stationary => (None, false),
        Motion::Moving => (Some(rng.random_range(SPEED_RANGE)), rng.random_bool(0.5)),
    };
    let allowed = allowed_centroids(entry.direction, flip);
    let start_centroid = allowed[rng.random_range(0..allowed.len())];
    TrajectorySampleParams { start_centroid, size_fraction, speed, flip, jitter_px: opts.jitter_px }
}

/// Place a `w x h` box with real center `(cx, cy)` inside the canvas, apply
/// per-coordinate jitter, and shift it back inside.
fn place_box(canvas: &Canvas, (cx, cy): (f64, f64), (w, h): (u32, u32), jitter: [i64; 4]) -> BBox {
    let axis = |center: f64, len: u32, extent: u32, j0: i64, j1: i64| {
        let extent = extent as i64;
        let len = len as i64;
        let lo = ((center - len as f64 / 2.0).round() as i64).clamp(0, extent - len);
        let (a, b) = (lo + j0, lo + len + j1);
        let span = (b - a).clamp(1, extent);
        let a = a.clamp(0, extent - span);
        (a as u32, (a + span) as u32)
    };
    let (x0, x1) = axis(cx, w, canvas.width, jitter[0], jitter[2]);
    let (y0, y1) = axis(cy, h, canvas.height, jitter[1], jitter[3]);
    BBox { x0, y0, x1, y1 }
}

/// Build the per-frame boxes for sampled parameters. `rng` supplies jitter.
pub fn trajectory_from_params(
    entry: &PromptEntry,
    canvas: &Canvas,
    params: &TrajectorySampleParams,
    opts: &ImcOptions,
    rng: &mut impl Rng,
) -> Result<BBoxTrajectory> {
    canvas.validate()?;
    if canvas.num_frames < MIN_FRAMES {
        return Err(invalid(format!("need at least {MIN_FRAMES} frames, got {}", canvas.num_frames)));
    }
    if params.start_centroid >= 9 {
        return Err(invalid(format!("centroid index {} out of range", params.start_centroid)));
    }
    let size = box_size(entry.aspect, params.size_fraction, canvas)?;
    let (sx, sy) = centroids(canvas)[params.start_centroid];
    let speed = params.speed.unwrap_or(0) as f64;
    let (dx, dy) = heading(entry.direction, params.flip);
    let period = opts.zigzag_period.unwrap_or(canvas.num_frames.div_ceil(3)).max(1);
    // Zig-zag vertical component heads into the canvas first.
    let zig_start = if params.start_centroid / 3 == 2 { -1.0 } else { 1.0 };

    let j = params.jitter_px as i64;
    let (mut cx, mut cy) = (sx, sy);
    let mut boxes = Vec::with_capacity(canvas.num_frames);
    for f in 0..canvas.num_frames {
        if f > 0 {
            cx += dx as f64 * speed;
            cy += dy as f64 * speed;
            if entry.direction == Direction::ZigZag {
                let leg = (f - 1) / period;
                let sign = if leg.is_multiple_of(2) { zig_start } else { -zig_start };
                cy += sign * speed;
            }
        }
        let jitter = if j > 0 { std::array::from_fn(|_| rng.random_range(-j..=j)) } else { [0; 4] };
        boxes.push(Some(place_box(canvas, (cx, cy), size, jitter)));
    }
    BBoxTrajectory::new(*canvas, boxes)
}

pub fn sample_trajectory(
    entry: &PromptEntry,
    canvas: &Canvas,
    opts: &ImcOptions,
    rng: &mut impl Rng,
) -> Result<(TrajectorySampleParams, BBoxTrajectory)> {
    let params = sample_params(entry, opts, rng);
    let traj = trajectory_from_params(entry, canvas, &params, opts, rng)?;
    Ok((params, traj))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImcSample {
    pub prompt_index: usize,
    pub set_index: usize,
    pub entry: PromptEntry,
    pub params: TrajectorySampleParams,
    pub trajectory: BBoxTrajectory,
}

impl ImcSample {
    pub fn file_name(&self) -> String {
        format!("imc_{:02}_{}.json", self.prompt_index, self.set_index)
    }

    pub fn to_file(&self) -> TrajectoryFile {
        TrajectoryFile::from_trajectory(&self.entry.text, &self.entry.subject, &self.trajectory)
    }
}

pub fn generate_dataset(canvas: Canvas, seed: u64) -> Result<Vec<ImcSample>> {
    generate_dataset_with(canvas, seed, &ImcOptions::default())
}

/// Every prompt in order, three sets each, all drawn from one generator.
pub fn generate_dataset_with(canvas: Canvas, seed: u64, opts: &ImcOptions) -> Result<Vec<ImcSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(PROMPT_COUNT * SETS_PER_PROMPT);
    for (prompt_index, entry) in builtin_prompts().into_iter().enumerate() {
        for set_index in 0..SETS_PER_PROMPT {
            let (params, trajectory) = sample_trajectory(&entry, &canvas, opts, &mut rng)?;
            out.push(ImcSample { prompt_index, set_index, entry: entry.clone(), params, trajectory });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub prompt: String,
    pub subject: String,
    pub motion: Motion,
    pub direction: Direction,
    pub aspect: Aspect,
    pub params: TrajectorySampleParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub canvas: CanvasSpec,
    pub count: usize,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Render every sample to its file contents and build the manifest.
pub fn render_dataset(samples: &[ImcSample], canvas: Canvas, seed: u64) -> (Vec<(String, String)>, Manifest) {
    let mut files = Vec::with_capacity(samples.len());
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let name = s.file_name();
        let body = s.to_file().to_json();
        entries.push(ManifestEntry {
            file: name.clone(),
            sha256: hex::encode(Sha256::digest(body.as_bytes())),
            prompt: s.entry.text.clone(),
            subject: s.entry.subject.clone(),
            motion: s.entry.motion,
            direction: s.entry.direction,
            aspect: s.entry.aspect,
            params: s.params,
        });
        files.push((name, body));
    }
    let manifest = Manifest {
        seed,
        canvas: CanvasSpec { w: canvas.width, h: canvas.height, frames: canvas.num_frames },
        count: samples.len(),
        files: entries,
    };
    (files, manifest)
}

/// Write trajectory files and `manifest.json` into `dir`.
pub fn write_dataset(samples: &[ImcSample], canvas: Canvas, seed: u64, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let (files, manifest) = render_dataset(samples, canvas, seed);
    for (name, body) in files {
        fs::write(dir.join(name), body)?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest.to_json())?;
    Ok(manifest)
}
