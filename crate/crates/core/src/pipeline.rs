//! Surrogate denoising loop.
//!
//! A small deterministic network with one spatial, one cross and one
//! temporal attention layer stands in for a video UNet. It exists to drive
//! the masking schedule end to end: masks are applied for the first
//! `frozen_steps` steps and every later step runs unmasked. Attention weights
//! are instrumented so the run can report how much probability mass lands on
//! entries that the full foreground/background masks would exclude.
//!
//! Layer order per step is spatial, cross, temporal. Image mode drops the
//! temporal layer and treats every frame as an independent image.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{masked_attention, max_leakage, AttentionInputs, AttentionOutput, ScaleMode};
use crate::error::{invalid, Error, Result};
use crate::geometry::{rasterize, BBoxTrajectory, FrameMaskSet, LatentGrid};
use crate::maskgen::{build_bundle, tokenize, AblationFlags, AttentionMaskBundle, BinaryMatrix, MaskFamily, TokenLabels};

/// Latent tensor `[frames, l_latents, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    data: Array3<f64>,
}

impl LatentVideo {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (f, l, c) = data.dim();
        if f == 0 || l == 0 || c == 0 {
            return Err(invalid(format!("latent video shape ({f}, {l}, {c}) has an empty axis")));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(invalid("latent video contains non-finite values"));
        }
        Ok(LatentVideo { data })
    }

    /// Unit-variance uniform noise from `seed`.
    pub fn noise(frames: usize, l_latents: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 3f64.sqrt();
        let data = Array3::from_shape_simple_fn((frames, l_latents, channels), || rng.random_range(-a..a));
        LatentVideo { data }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn l_latents(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Token embeddings for a prompt plus their foreground labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    tokens: Array2<f64>,
    labels: TokenLabels,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PromptSpec {
    pub fn new(tokens: Array2<f64>, labels: TokenLabels) -> Result<Self> {
        if tokens.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} token embeddings for {} labels",
                tokens.nrows(),
                labels.len()
            )));
        }
        if tokens.ncols() == 0 || !tokens.iter().all(|x| x.is_finite()) {
            return Err(invalid("token embeddings must be non-empty and finite"));
        }
        Ok(PromptSpec { tokens, labels })
    }

    /// Embed each token string with a generator seeded from its hash and `seed`.
    pub fn embed_tokens(tokens: &[String], labels: TokenLabels, d_text: usize, seed: u64) -> Result<Self> {
        let a = 3f64.sqrt();
        let mut emb = Array2::zeros((tokens.len(), d_text));
        for (mut row, tok) in emb.axis_iter_mut(Axis(0)).zip(tokens) {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, fnv1a(tok.as_bytes())));
            row.iter_mut().for_each(|x| *x = rng.random_range(-a..a));
        }
        Self::new(emb, labels)
    }

    /// Tokenize `prompt`, label the tokens of `fg_phrase`, and embed.
    pub fn from_text(prompt: &str, fg_phrase: &str, d_text: usize, seed: u64) -> Result<Self> {
        let labels = TokenLabels::from_prompt(prompt, fg_phrase)?;
        Self::embed_tokens(&tokenize(prompt), labels, d_text, seed)
    }

    /// Anonymous tokens `tok0, tok1, ...` carrying the given labels.
    pub fn from_labels(labels: TokenLabels, d_text: usize, seed: u64) -> Result<Self> {
        let names: Vec<String> = (0..labels.len()).map(|j| format!("tok{j}")).collect();
        Self::embed_tokens(&names, labels, d_text, seed)
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn labels(&self) -> &TokenLabels {
        &self.labels
    }

    pub fn l_text(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn d_text(&self) -> usize {
        self.tokens.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    #[default]
    Video,
    Image,
}

/// Which steps get their attention weights checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrumentation {
    /// Every step.
    Full,
    /// First and last masked step only.
    Sampled,
}

impl Default for Instrumentation {
    fn default() -> Self {
        if cfg!(debug_assertions) {
            Instrumentation::Full
        } else {
            Instrumentation::Sampled
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub attn_dim: usize,
    pub text_dim: usize,
    /// Residual gain in `(0, 1]`; zero turns every step into the identity.
    pub gain: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { channels: 4, attn_dim: 8, text_dim: 8, gain: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub num_steps: usize,
    pub frozen_steps: usize,
    pub seed: u64,
    pub mode: GenerationMode,
    pub scale_mode: ScaleMode,
    pub denoiser: DenoiserConfig,
    pub instrumentation: Instrumentation,
}

/// Steps used by every preset.
pub const DEFAULT_NUM_STEPS: usize = 40;
/// Frozen steps for action-video style runs.
pub const SSV2_FROZEN_STEPS: usize = 2;
/// Frozen steps for interactive-motion benchmark runs.
pub const IMC_FROZEN_STEPS: usize = 4;

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::ssv2()
    }
}

impl PipelineConfig {
    pub fn ssv2() -> Self {
        PipelineConfig {
            num_steps: DEFAULT_NUM_STEPS,
            frozen_steps: SSV2_FROZEN_STEPS,
            seed: 0,
            mode: GenerationMode::Video,
            scale_mode: ScaleMode::default(),
            denoiser: DenoiserConfig::default(),
            instrumentation: Instrumentation::default(),
        }
    }

    pub fn imc() -> Self {
        PipelineConfig { frozen_steps: IMC_FROZEN_STEPS, ..Self::ssv2() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(invalid("num_steps must be positive"));
        }
        if self.frozen_steps > self.num_steps {
            return Err(invalid(format!(
                "frozen_steps {} exceeds num_steps {}",
                self.frozen_steps, self.num_steps
            )));
        }
        let d = &self.denoiser;
        if d.channels == 0 || d.attn_dim == 0 || d.text_dim == 0 {
            return Err(invalid("denoiser dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&d.gain) {
            return Err(invalid(format!("gain {} outside [0, 1]", d.gain)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Masked,
    Free,
}

/// Masked for the first `frozen_steps` steps, free afterwards.
pub fn schedule(step: usize, cfg: &PipelineConfig) -> Result<Phase> {
    if step >= cfg.num_steps {
        return Err(invalid(format!("step {step} outside 0..{}", cfg.num_steps)));
    }
    Ok(if step < cfg.frozen_steps { Phase::Masked } else { Phase::Free })
}

/// Query/key/value projections of one attention layer.
#[derive(Debug, Clone, PartialEq)]
struct Projections {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
}

impl Projections {
    fn random(rng: &mut ChaCha8Rng, query_in: usize, key_in: usize, attn: usize, out: usize) -> Self {
        let mut init = |rows: usize, cols: usize| {
            let a = (3.0 / rows as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
        };
        Projections { wq: init(query_in, attn), wk: init(key_in, attn), wv: init(key_in, out) }
    }
}

/// Seeded stand-in for the denoising network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    spatial: Projections,
    cross: Projections,
    temporal: Projections,
    gain: f64,
    scale: f64,
}

const NORM_EPS: f64 = 1e-6;

/// Scale each row to unit root-mean-square.
fn rms_normalize(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        row /= (ms + NORM_EPS).sqrt();
    }
    out
}

impl ToyDenoiser {
    pub fn new(cfg: &DenoiserConfig, scale_mode: ScaleMode, seed: u64) -> Result<Self> {
        if cfg.channels == 0 || cfg.attn_dim == 0 || cfg.text_dim == 0 {
            return Err(invalid("denoiser dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&cfg.gain) {
            return Err(invalid(format!("gain {} outside [0, 1]", cfg.gain)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xd1ce_5eed));
        let (c, d, t) = (cfg.channels, cfg.attn_dim, cfg.text_dim);
        Ok(ToyDenoiser {
            spatial: Projections::random(&mut rng, c, c, d, c),
            cross: Projections::random(&mut rng, c, t, d, c),
            temporal: Projections::random(&mut rng, c, c, d, c),
            gain: cfg.gain,
            scale: scale_mode.scale(d),
        })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Direction in channel space separating what foreground tokens write
    /// from what background tokens write through the cross layer. Zero when
    /// the prompt has only one kind of token.
    pub fn foreground_signature(&self, prompt: &PromptSpec) -> Array1<f64> {
        let values = prompt.tokens().dot(&self.cross.wv).mapv(f64::tanh);
        let labels = prompt.labels().as_slice();
        let mean_of = |want: bool| {
            let rows: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == want).collect();
            if rows.is_empty() {
                None
            } else {
                values.select(Axis(0), &rows).mean_axis(Axis(0))
            }
        };
        match (mean_of(true), mean_of(false)) {
            (Some(fg), Some(bg)) => {
                let d = fg - bg;
                let n = d.dot(&d).sqrt();
                if n > 0.0 {
                    d / n
                } else {
                    d
                }
            }
            _ => Array1::zeros(values.ncols()),
        }
    }

    /// One attention layer over `x` (rows are queries). Keys and values come
    /// from `context` when given, else from `x` itself.
    fn attend(
        &self,
        p: &Projections,
        x: ArrayView2<'_, f64>,
        context: Option<ArrayView2<'_, f64>>,
        mask: &BinaryMatrix,
    ) -> Result<AttentionOutput> {
        let xn = rms_normalize(x);
        let q = xn.dot(&p.wq);
        let (k, v) = match context {
            Some(ctx) => (ctx.dot(&p.wk), ctx.dot(&p.wv).mapv(f64::tanh)),
            None => (xn.dot(&p.wk), xn.dot(&p.wv).mapv(f64::tanh)),
        };
        masked_attention(&AttentionInputs::new(q.view(), k.view(), v.view(), self.scale)?, mask)
    }
}

/// Receives every attention call made during a step.
pub trait AttentionObserver {
    /// `block` is the frame index for spatial/cross layers and the latent
    /// pixel index for the temporal layer.
    fn observe(&mut self, layer: MaskFamily, block: usize, out: &AttentionOutput, mask: &BinaryMatrix);
}

impl AttentionObserver for () {
    fn observe(&mut self, _: MaskFamily, _: usize, _: &AttentionOutput, _: &BinaryMatrix) {}
}

fn check_bundle(z: &LatentVideo, prompt: &PromptSpec, bundle: &AttentionMaskBundle) -> Result<()> {
    let (f, l) = (z.num_frames(), z.l_latents());
    let ok = bundle.cross.len() == f
        && bundle.spatial.len() == f
        && bundle.temporal.len() == l
        && bundle.cross.iter().all(|m| m.shape() == (l, prompt.l_text()))
        && bundle.spatial.iter().all(|m| m.shape() == (l, l))
        && bundle.temporal.iter().all(|m| m.shape() == (f, f));
    if !ok {
        return Err(Error::ShapeMismatch(format!(
            "bundle ({} frames, {} latents, {} tokens) does not fit latent ({f}, {l}) with {} tokens",
            bundle.num_frames(),
            bundle.l_latents(),
            bundle.l_text(),
            prompt.l_text()
        )));
    }
    Ok(())
}

/// One denoising step without instrumentation.
pub fn denoise_step(
    z: &LatentVideo,
    prompt: &PromptSpec,
    bundle: &AttentionMaskBundle,
    phase: Phase,
    mode: GenerationMode,
    net: &ToyDenoiser,
) -> Result<LatentVideo> {
    denoise_step_observed(z, prompt, bundle, phase, mode, net, &mut ())
}

/// One denoising step. `bundle` is used in the masked phase; the free phase
/// uses all-ones masks of the same shapes.
pub fn denoise_step_observed(
    z: &LatentVideo,
    prompt: &PromptSpec,
    bundle: &AttentionMaskBundle,
    phase: Phase,
    mode: GenerationMode,
    net: &ToyDenoiser,
    observer: &mut dyn AttentionObserver,
) -> Result<LatentVideo> {
    check_bundle(z, prompt, bundle)?;
    if prompt.d_text() != net.cross.wk.nrows() || z.channels() != net.spatial.wq.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "denoiser expects {} channels and {}-dim tokens, got {} and {}",
            net.spatial.wq.nrows(),
            net.cross.wk.nrows(),
            z.channels(),
            prompt.d_text()
        )));
    }
    let (frames, l, _) = z.data.dim();
    let ones;
    let masks = match phase {
        Phase::Masked => bundle,
        Phase::Free => {
            ones = AttentionMaskBundle::all_ones(frames, l, prompt.l_text());
            &ones
        }
    };
    let g = net.gain;
    let mut data = z.data.clone();

    for f in 0..frames {
        let out = net.attend(&net.spatial, data.slice(s![f, .., ..]), None, &masks.spatial[f])?;
        observer.observe(MaskFamily::Spatial, f, &out, &masks.spatial[f]);
        data.slice_mut(s![f, .., ..]).scaled_add(g, &out.output);
    }
    for f in 0..frames {
        let out = net.attend(&net.cross, data.slice(s![f, .., ..]), Some(prompt.tokens().view()), &masks.cross[f])?;
        observer.observe(MaskFamily::Cross, f, &out, &masks.cross[f]);
        data.slice_mut(s![f, .., ..]).scaled_add(g, &out.output);
    }
    if mode == GenerationMode::Video {
        for i in 0..l {
            let out = net.attend(&net.temporal, data.slice(s![.., i, ..]), None, &masks.temporal[i])?;
            observer.observe(MaskFamily::Temporal, i, &out, &masks.temporal[i]);
            data.slice_mut(s![.., i, ..]).scaled_add(g, &out.output);
        }
    }
    LatentVideo::new(data)
}

/// Share of foreground-concept energy inside each frame's foreground cells.
///
/// The update `delta` of each cell is centered on its frame mean and
/// projected on `signature`; a cell's energy is the squared positive part of
/// that projection. Frames without foreground cells, or without energy,
/// report 0.
pub fn fg_energy_fraction(delta: &Array3<f64>, masks: &FrameMaskSet, signature: &Array1<f64>) -> Vec<f64> {
    (0..masks.num_frames())
        .map(|f| {
            let frame = delta.slice(s![f, .., ..]);
            let mean = frame.mean_axis(Axis(0)).expect("non-empty frame");
            let fg = masks.frame(f);
            let (mut inside, mut total) = (0.0, 0.0);
            for (i, row) in frame.axis_iter(Axis(0)).enumerate() {
                let a = (&row - &mean).dot(signature).max(0.0);
                let e = a * a;
                total += e;
                if fg[i] {
                    inside += e;
                }
            }
            if total > 0.0 && masks.fg_count(f) > 0 {
                inside / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-layer statistics for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: MaskFamily,
    /// Largest attention mass on entries excluded by the full masks, over
    /// all blocks of the layer. `None` when the step was not instrumented.
    pub max_leakage: Option<f64>,
    /// Whether every mask in effect for this layer was all-ones.
    pub masks_all_ones: bool,
    pub fallback_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mode: Phase,
    pub max_leakage: Option<f64>,
    pub fg_energy_fraction: Vec<f64>,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub generation_mode: GenerationMode,
    pub num_steps: usize,
    pub frozen_steps: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub steps: Vec<StepRecord>,
}

impl RunReport {
    pub fn masked_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.mode == Phase::Masked).count()
    }

    /// Largest measured leakage of `layer` over masked steps.
    pub fn masked_leakage(&self, layer: MaskFamily) -> Option<f64> {
        self.steps
            .iter()
            .filter(|s| s.mode == Phase::Masked)
            .flat_map(|s| s.layers.iter())
            .filter(|r| r.layer == layer)
            .filter_map(|r| r.max_leakage)
            .reduce(f64::max)
    }

    /// Final-step foreground energy fraction averaged over frames that have
    /// foreground cells.
    pub fn localization(&self, masks: &FrameMaskSet) -> f64 {
        let Some(last) = self.steps.last() else { return 0.0 };
        let frames: Vec<usize> = (0..masks.num_frames()).filter(|&f| masks.fg_count(f) > 0).collect();
        if frames.is_empty() {
            return 0.0;
        }
        frames.iter().map(|&f| last.fg_energy_fraction[f]).sum::<f64>() / frames.len() as f64
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub latent: LatentVideo,
    pub report: RunReport,
    pub masks: FrameMaskSet,
}

/// Accumulates leakage against the reference (full) masks.
struct LeakageProbe<'a> {
    reference: &'a AttentionMaskBundle,
    records: Vec<LayerRecord>,
}

impl<'a> LeakageProbe<'a> {
    fn new(reference: &'a AttentionMaskBundle, measure: bool, mode: GenerationMode) -> Self {
        let layers: &[MaskFamily] = match mode {
            GenerationMode::Video => &[MaskFamily::Spatial, MaskFamily::Cross, MaskFamily::Temporal],
            GenerationMode::Image => &[MaskFamily::Spatial, MaskFamily::Cross],
        };
        let records = layers
            .iter()
            .map(|&layer| LayerRecord {
                layer,
                max_leakage: measure.then_some(0.0),
                masks_all_ones: true,
                fallback_rows: 0,
            })
            .collect();
        LeakageProbe { reference, records }
    }
}

impl AttentionObserver for LeakageProbe<'_> {
    fn observe(&mut self, layer: MaskFamily, block: usize, out: &AttentionOutput, mask: &BinaryMatrix) {
        let reference = &self.reference.family(layer)[block];
        let rec = self.records.iter_mut().find(|r| r.layer == layer).expect("layer registered");
        rec.masks_all_ones &= mask.is_all_ones();
        rec.fallback_rows += out.fallback_rows.len();
        if let Some(m) = rec.max_leakage.as_mut() {
            *m = m.max(max_leakage(&out.weights, reference));
        }
    }
}

/// Run the pipeline from seeded noise.
pub fn run(
    traj: &BBoxTrajectory,
    prompt: &PromptSpec,
    cfg: &PipelineConfig,
    grid: LatentGrid,
    ablation: AblationFlags,
) -> Result<RunOutput> {
    let z0 = LatentVideo::noise(traj.num_frames(), grid.l_latents(), cfg.denoiser.channels, cfg.seed);
    run_from(z0, traj, prompt, cfg, grid, ablation)
}

/// Run the pipeline from an explicit initial latent.
pub fn run_from(
    z0: LatentVideo,
    traj: &BBoxTrajectory,
    prompt: &PromptSpec,
    cfg: &PipelineConfig,
    grid: LatentGrid,
    ablation: AblationFlags,
) -> Result<RunOutput> {
    cfg.validate()?;
    if prompt.d_text() != cfg.denoiser.text_dim {
        return Err(Error::ShapeMismatch(format!(
            "prompt embeddings have dim {}, config expects {}",
            prompt.d_text(),
            cfg.denoiser.text_dim
        )));
    }
    let masks = rasterize(traj, &grid)?;
    if z0.data.dim() != (masks.num_frames(), masks.l_latents(), cfg.denoiser.channels) {
        return Err(Error::ShapeMismatch(format!(
            "initial latent {:?} does not match ({}, {}, {})",
            z0.data.dim(),
            masks.num_frames(),
            masks.l_latents(),
            cfg.denoiser.channels
        )));
    }
    let reference = build_bundle(&masks, prompt.labels(), AblationFlags::ALL_ON);
    let effective = if ablation == AblationFlags::ALL_ON {
        reference.clone()
    } else {
        build_bundle(&masks, prompt.labels(), ablation)
    };
    let net = ToyDenoiser::new(&cfg.denoiser, cfg.scale_mode, cfg.seed)?;
    let signature = net.foreground_signature(prompt);

    let first_masked = 0;
    let last_masked = cfg.frozen_steps.checked_sub(1);
    let mut z = z0.clone();
    let mut steps = Vec::with_capacity(cfg.num_steps);
    for step in 0..cfg.num_steps {
        let phase = schedule(step, cfg)?;
        let measure = match cfg.instrumentation {
            Instrumentation::Full => true,
            Instrumentation::Sampled => {
                phase == Phase::Masked && (step == first_masked || Some(step) == last_masked)
            }
        };
        let mut probe = LeakageProbe::new(&reference, measure, cfg.mode);
        z = denoise_step_observed(&z, prompt, &effective, phase, cfg.mode, &net, &mut probe)?;
        let delta = &z.data - &z0.data;
        let max_leakage = probe.records.iter().filter_map(|r| r.max_leakage).reduce(f64::max);
        steps.push(StepRecord {
            step,
            mode: phase,
            max_leakage,
            fg_energy_fraction: fg_energy_fraction(&delta, &masks, &signature),
            layers: probe.records,
        });
    }
    let report = RunReport {
        generation_mode: cfg.mode,
        num_steps: cfg.num_steps,
        frozen_steps: cfg.frozen_steps,
        seed: cfg.seed,
        ablation,
        steps,
    };
    Ok(RunOutput { latent: z, report, masks })
}
