use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use peekaboo_core::ablation::{run_ablation, AblationReport};
use peekaboo_core::codec::{encode_additive, encode_bundle, encode_latent};
use peekaboo_core::geometry::{rasterize, BBoxTrajectory, Canvas, FrameMaskSet, LatentGrid};
use peekaboo_core::imc::{self, ImcOptions, Manifest};
use peekaboo_core::maskgen::{build_bundle, AblationFlags, AttentionMaskBundle, MaskFamily, TokenLabels};
use peekaboo_core::metrics::{self, CdNorm, SuiteReport};
use peekaboo_core::pipeline::{self, PromptSpec};
use peekaboo_core::trajfile::TrajectoryFile;

use crate::config::{trajectory_files, ExperimentConfig};
use crate::{parse_dims, require_exists, UsageError, ValidationError};

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn load_trajectory(path: &Path) -> Result<TrajectoryFile> {
    require_exists(path)?;
    TrajectoryFile::load(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s)
}

#[derive(Debug, Args)]
pub struct GenImcArgs {
    /// Output directory for trajectory files and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Canvas size in pixels.
    #[arg(long, default_value = "256x256", value_parser = parse_dims)]
    pub canvas: (u32, u32),
    /// Frames per trajectory.
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    /// Seed for all sampling.
    #[arg(long, default_value_t = imc::DEFAULT_SEED)]
    pub seed: u64,
    /// Per-coordinate jitter amplitude in pixels.
    #[arg(long, default_value_t = imc::DEFAULT_JITTER_PX)]
    pub jitter: u32,
}

pub fn gen_imc(args: &GenImcArgs) -> Result<Manifest> {
    let canvas = Canvas::new(args.canvas.0, args.canvas.1, args.frames)?;
    let opts = ImcOptions { jitter_px: args.jitter, ..ImcOptions::default() };
    let samples = imc::generate_dataset_with(canvas, args.seed, &opts)?;
    let manifest = imc::write_dataset(&samples, canvas, args.seed, &args.out)?;
    println!("wrote {} trajectories to {}", manifest.count, args.out.display());
    Ok(manifest)
}

#[derive(Debug, Args)]
pub struct BuildMasksArgs {
    /// Trajectory file.
    #[arg(long)]
    pub traj: PathBuf,
    /// Latent grid size.
    #[arg(long, default_value = "16x16", value_parser = parse_dims)]
    pub grid: (u32, u32),
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Token foreground labels as a 0/1 string, overriding the prompt.
    #[arg(long)]
    pub tokens: Option<String>,
    /// Disable the cross-attention masks.
    #[arg(long)]
    pub no_cross: bool,
    /// Disable the spatial self-attention masks.
    #[arg(long)]
    pub no_spatial: bool,
    /// Disable the temporal self-attention masks.
    #[arg(long)]
    pub no_temporal: bool,
    /// Also write additive (0 / large negative) f32 files.
    #[arg(long)]
    pub additive: bool,
}

fn write_bundle(bundle: &AttentionMaskBundle, dir: &Path, prefix: &str, additive: bool) -> Result<()> {
    for (family, bytes) in encode_bundle(bundle)? {
        write(&dir.join(format!("{prefix}{}.pkbm", family.name())), bytes)?;
        if additive {
            let add = encode_additive(family, bundle.family(family))?;
            write(&dir.join(format!("{prefix}{}.pkba", family.name())), add)?;
        }
    }
    Ok(())
}

pub fn build_masks(args: &BuildMasksArgs) -> Result<AttentionMaskBundle> {
    let file = load_trajectory(&args.traj)?;
    let traj = file.to_trajectory()?;
    let grid = LatentGrid::new(args.grid.0, args.grid.1)?;
    let masks = rasterize(&traj, &grid)?;
    let labels = match &args.tokens {
        Some(bits) => TokenLabels::parse(bits)?,
        None => TokenLabels::from_prompt(&file.prompt, &file.fg_phrase)?,
    };
    let ablation = AblationFlags { cross: !args.no_cross, spatial: !args.no_spatial, temporal: !args.no_temporal };
    let bundle = build_bundle(&masks, &labels, ablation);
    fs::create_dir_all(&args.out)?;
    write_bundle(&bundle, &args.out, "", args.additive)?;
    println!(
        "frames {} latents {} tokens {}: {} cross, {} spatial, {} temporal matrices",
        bundle.num_frames(),
        bundle.l_latents(),
        bundle.l_text(),
        bundle.cross.len(),
        bundle.spatial.len(),
        bundle.temporal.len()
    );
    for (f, row) in &bundle.empty_cross_rows {
        eprintln!("warning: frame {f} latent {row} has no matching token and falls back to full attention");
    }
    Ok(bundle)
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
}

struct Job {
    name: String,
    traj: BBoxTrajectory,
    prompt: PromptSpec,
}

fn jobs(cfg: &ExperimentConfig) -> Result<Vec<Job>> {
    cfg.trajectory_files()?
        .into_iter()
        .map(|path| {
            let file = load_trajectory(&path)?;
            let traj = file.to_trajectory().with_context(|| path.display().to_string())?;
            let d_text = cfg.pipeline.denoiser.text_dim;
            let prompt = PromptSpec::from_text(&file.prompt, &file.fg_phrase, d_text, cfg.pipeline.seed)?;
            Ok(Job { name: stem(&path), traj, prompt })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub masked_steps: usize,
    pub max_masked_leakage: Option<f64>,
    pub localization: f64,
}

/// Run every trajectory of the dataset; writes `<name>/latent.pkbl` and
/// `<name>/report.json` under the output directory.
pub fn run(args: &ConfigArgs) -> Result<Vec<RunSummary>> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let jobs = jobs(&cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let summaries = jobs
        .par_iter()
        .map(|job| {
            let out = pipeline::run(&job.traj, &job.prompt, &cfg.pipeline, cfg.grid, cfg.ablations)
                .with_context(|| job.name.clone())?;
            let dir = cfg.output_dir.join(&job.name);
            fs::create_dir_all(&dir)?;
            write(&dir.join("latent.pkbl"), encode_latent(&out.latent)?)?;
            write(&dir.join("report.json"), out.report.to_json())?;
            let leak = MaskFamily::ALL.iter().filter_map(|&f| out.report.masked_leakage(f)).reduce(f64::max);
            Ok(RunSummary {
                name: job.name.clone(),
                masked_steps: out.report.masked_steps(),
                max_masked_leakage: leak,
                localization: out.report.localization(&out.masks),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write(&cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    for s in &summaries {
        let leak = s.max_masked_leakage.map_or_else(|| "n/a".into(), |v| format!("{v:.3e}"));
        println!("{}: masked steps {}, max leakage {leak}, fg fraction {:.4}", s.name, s.masked_steps, s.localization);
    }
    Ok(summaries)
}

pub fn ablate(args: &ConfigArgs) -> Result<Vec<(String, AblationReport)>> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let jobs = jobs(&cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let reports = jobs
        .par_iter()
        .map(|job| {
            let report = run_ablation(&job.traj, &job.prompt, &cfg.pipeline, cfg.grid).with_context(|| job.name.clone())?;
            let dir = cfg.output_dir.join(&job.name);
            fs::create_dir_all(&dir)?;
            write(&dir.join("ablation.json"), report.to_json())?;
            write(&dir.join("ablation.txt"), report.to_table())?;
            Ok((job.name.clone(), report))
        })
        .collect::<Result<Vec<_>>>()?;
    for (name, report) in &reports {
        println!("{name}\n{}", report.to_table());
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CdNormArg {
    Diagonal,
    Side,
}

impl From<CdNormArg> for CdNorm {
    fn from(v: CdNormArg) -> Self {
        match v {
            CdNormArg::Diagonal => CdNorm::Diagonal,
            CdNormArg::Side => CdNorm::Side,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth trajectory file or directory; video ids are file stems.
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections as JSON lines, optionally named `NAME=PATH`. Repeatable.
    #[arg(long = "detections", required = true)]
    pub detections: Vec<String>,
    /// Directory for report.txt and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Normalization for centroid distance.
    #[arg(long, value_enum, default_value_t = CdNormArg::Diagonal)]
    pub cd_norm: CdNormArg,
}

fn method_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_owned(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            (stem(&path), path)
        }
    }
}

pub fn eval(args: &EvalArgs) -> Result<SuiteReport> {
    require_exists(&args.gt)?;
    let gts: BTreeMap<String, BBoxTrajectory> = trajectory_files(&args.gt)?
        .iter()
        .map(|p| Ok((stem(p), load_trajectory(p)?.to_trajectory()?)))
        .collect::<Result<_>>()?;
    let norm = CdNorm::from(args.cd_norm);
    let mut groups = Vec::new();
    for spec in &args.detections {
        let (name, path) = method_spec(spec);
        require_exists(&path)?;
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let lines = metrics::parse_detections(&text).with_context(|| path.display().to_string())?;
        let tracks = metrics::assemble_tracks(&lines, &gts).with_context(|| path.display().to_string())?;
        let records = tracks
            .into_par_iter()
            .map(|(id, det)| metrics::EvalRecord::new(id.clone(), gts[&id].clone(), det, norm))
            .collect::<peekaboo_core::Result<Vec<_>>>()
            .map_err(|e| ValidationError(e.to_string()))?;
        groups.push((name, records));
    }
    let report = metrics::build_suite_report(&groups)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write(&out.join("report.txt"), &table)?;
        write(&out.join("report.json"), report.to_json())?;
    }
    Ok(report)
}

#[derive(Debug, Args)]
pub struct ExportGoldenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of random bundles.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Seed for the random inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn bits(v: &[bool]) -> String {
    v.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Inputs that produced one exported bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldenCase {
    pub name: String,
    pub grid: LatentGrid,
    pub frames: Vec<String>,
    pub tokens: String,
    pub ablation: AblationFlags,
}

/// Random bundles in binary and additive form, each with a JSON file
/// holding the inputs so another implementation can rebuild them.
pub fn export_golden(args: &ExportGoldenArgs) -> Result<Vec<GoldenCase>> {
    if args.count == 0 {
        return Err(UsageError("count must be positive".into()).into());
    }
    fs::create_dir_all(&args.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut cases = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let grid = LatentGrid::new(rng.random_range(1..=4), rng.random_range(1..=4))?;
        let frames: Vec<Vec<bool>> = (0..rng.random_range(1..=5))
            .map(|_| (0..grid.l_latents()).map(|_| rng.random_bool(0.4)).collect())
            .collect();
        let tokens: Vec<bool> = (0..rng.random_range(1..=8)).map(|_| rng.random_bool(0.3)).collect();
        let ablation = if i % 10 == 9 {
            AblationFlags { cross: rng.random(), spatial: rng.random(), temporal: rng.random() }
        } else {
            AblationFlags::ALL_ON
        };
        let name = format!("golden_{i:03}");
        let masks = FrameMaskSet::new(grid, frames.clone())?;
        let bundle = build_bundle(&masks, &TokenLabels::new(tokens.clone())?, ablation);
        write_bundle(&bundle, &args.out, &format!("{name}."), true)?;
        let case = GoldenCase { name, grid, frames: frames.iter().map(|f| bits(f)).collect(), tokens: bits(&tokens), ablation };
        write_json(&args.out.join(format!("{}.json", case.name)), &case)?;
        cases.push(case);
    }
    write_json(&args.out.join("index.json"), &cases.iter().map(|c| &c.name).collect::<Vec<_>>())?;
    println!("wrote {} bundles to {}", cases.len(), args.out.display());
    Ok(cases)
}
