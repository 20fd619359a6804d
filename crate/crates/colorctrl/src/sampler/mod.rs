//! Rectified-flow Euler sampling with classifier-free guidance, and the
//! dual-branch editing loop built on it.
//!
//! The source branch generates from seeded noise, recording every
//! attention map and value token into a [`BranchCache`]. The target
//! branch starts from the same noise, runs under a different prompt and
//! replays the cached state through the controller hooks at every
//! layer, head and step. One cached source serves any number of target
//! branches; the source is never recomputed.

mod cache;

pub use cache::BranchCache;

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::control::{
    binarize_mask, color_preserve_apply, reweight_scores_apply, structure_preserve_apply, EditMask,
};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::metrics::dilate;
use crate::model::{
    tokenize, AttentionController, AttentionRecord, AttnContext, Latent, Model, Pass, TokenSequence,
};
use crate::tensor::{seeded_normal, Rng, Tensor2};

/// Mask threshold default.
pub const DEFAULT_EPSILON: f32 = 0.1;

/// Sampling parameters. Defaults: 28 steps, guidance 7.5, seed 42.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    pub steps: usize,
    pub cfg_scale: f32,
    pub seed: u64,
    /// Record attention state into the branch cache. Recording is
    /// observation only; the generated image is identical either way.
    pub record: bool,
    /// Fail-fast cache memory budget in bytes; `None` is unbounded.
    pub cache_budget: Option<u64>,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            steps: 28,
            cfg_scale: 7.5,
            seed: 42,
            record: true,
            cache_budget: None,
        }
    }
}

impl SampleParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Input("steps must be >= 1".into()));
        }
        if self.cfg_scale < 1.0 {
            return Err(Error::Input(format!(
                "cfg scale {} must be >= 1",
                self.cfg_scale
            )));
        }
        Ok(())
    }
}

/// Linear sigma schedule: `sigma_i = 1 - i/steps` for `i in 0..=steps`.
pub fn sigma_schedule(steps: usize) -> Vec<f32> {
    (0..=steps).map(|i| 1.0 - i as f32 / steps as f32).collect()
}

/// Seeded starting noise, standard normal per component.
pub fn initial_noise(image_size: usize, seed: u64) -> Latent {
    let n = image_size * image_size * 3;
    Latent::from_vec(image_size, seeded_normal(&mut Rng::new(seed), n, 0.0, 1.0)).unwrap()
}

/// One Euler update: `x' = x + (sigma_next - sigma_curr) * v`.
pub fn euler_step(x: &Latent, v: &Latent, sigma_curr: f32, sigma_next: f32) -> Result<Latent> {
    if !(sigma_curr > sigma_next && sigma_next >= 0.0) {
        return Err(Error::Schedule(format!(
            "sigmas must strictly decrease toward zero, got {sigma_curr} -> {sigma_next}"
        )));
    }
    if x.size() != v.size() {
        return Err(Error::Shape(format!(
            "latent size {} != velocity size {}",
            x.size(),
            v.size()
        )));
    }
    let d = sigma_next - sigma_curr;
    let mut out = x.clone();
    for (o, &vi) in out.data_mut().iter_mut().zip(v.data()) {
        *o += d * vi;
    }
    Ok(out)
}

/// Classifier-free guidance: `v = v_uncond + w * (v_cond - v_uncond)`.
/// `w == 1` disables guidance and returns the conditional velocity.
pub fn cfg_combine(v_cond: &Latent, v_uncond: &Latent, w: f32) -> Result<Latent> {
    if v_cond.size() != v_uncond.size() {
        return Err(Error::Shape(format!(
            "velocity sizes differ: {} vs {}",
            v_cond.size(),
            v_uncond.size()
        )));
    }
    if w == 1.0 {
        return Ok(v_cond.clone());
    }
    let mut out = v_uncond.clone();
    for (o, &c) in out.data_mut().iter_mut().zip(v_cond.data()) {
        *o += w * (c - *o);
    }
    Ok(out)
}

/// Which branch's attention maps attribute re-weighting applies to:
/// the target branch's own scores, or the cached source scores replayed
/// into the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReweightBranch {
    SourceMap,
    TargetMap,
}

/// Everything one edit needs: the prompt pair, mask targets, optional
/// attribute re-weighting, and the control toggles.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSpec {
    pub source_prompt: String,
    pub target_prompt: String,
    /// Word indices in the source prompt whose attention defines the
    /// edit mask. Must be non-empty when color preservation is on.
    pub edit_words: Vec<usize>,
    /// Word index (in the branch selected below) to scale factor.
    pub reweight: BTreeMap<usize, f32>,
    pub reweight_branch: ReweightBranch,
    /// Mask threshold in `(0, 1)`.
    pub epsilon: f32,
    pub enable_structure: bool,
    pub enable_color: bool,
    /// Radius for dilating the token mask on the token grid; off by
    /// default.
    pub mask_dilate: usize,
    /// Apply structure/color control on the unconditional CFG pass too.
    pub control_uncond: bool,
}

impl EditSpec {
    pub fn new(source_prompt: impl Into<String>, target_prompt: impl Into<String>) -> Self {
        Self {
            source_prompt: source_prompt.into(),
            target_prompt: target_prompt.into(),
            edit_words: Vec::new(),
            reweight: BTreeMap::new(),
            reweight_branch: ReweightBranch::TargetMap,
            epsilon: DEFAULT_EPSILON,
            enable_structure: true,
            enable_color: true,
            mask_dilate: 0,
            control_uncond: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Input(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        if self.enable_color && self.edit_words.is_empty() {
            return Err(Error::Input(
                "color preservation requires at least one edit word".into(),
            ));
        }
        for (&w, &s) in &self.reweight {
            if s < 0.0 {
                return Err(Error::Input(format!(
                    "re-weight scale {s} for word {w} < 0"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step controller activity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub structure_edits: u64,
    pub color_rows_copied: u64,
    pub reweight_rows: u64,
}

/// Record of what the controller did during a target branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlLog {
    pub source_prompt: String,
    pub target_prompt: String,
    pub epsilon: f32,
    pub mask_tokens: usize,
    pub mask_degenerate: bool,
    pub structure_enabled: bool,
    pub color_enabled: bool,
    pub reweight_branch: ReweightBranch,
    pub steps: Vec<StepLog>,
}

/// Output of [`run_edit`].
pub struct EditResult {
    pub edited: ImageBuffer,
    pub source: ImageBuffer,
    pub mask: EditMask,
    pub control_log: ControlLog,
}

/// Observation-only controller that streams records into a cache.
struct RecordingController<'a> {
    cache: &'a RefCell<BranchCache>,
}

impl AttentionController for RecordingController<'_> {
    fn wants_record(&self, _ctx: &AttnContext) -> bool {
        true
    }

    fn record(&self, _ctx: &AttnContext, record: AttentionRecord) -> Result<()> {
        self.cache.borrow_mut().insert(record)
    }
}

/// The editing controller: replays cached source state into the target
/// branch per the spec toggles.
struct EditController<'a> {
    cache: &'a BranchCache,
    mask: &'a EditMask,
    enable_structure: bool,
    enable_color: bool,
    control_uncond: bool,
    reweight_branch: ReweightBranch,
    /// Resolved (text row, scale) pairs.
    rules: Vec<(usize, f32)>,
    log: RefCell<Vec<StepLog>>,
}

impl<'a> EditController<'a> {
    fn lookup(&self, ctx: &AttnContext) -> Result<&'a AttentionRecord> {
        self.cache
            .get(ctx.step, ctx.layer, ctx.head, ctx.pass)
            .ok_or_else(|| {
                Error::Control(format!(
                    "no cached record for (step {}, layer {}, head {}, pass {:?})",
                    ctx.step, ctx.layer, ctx.head, ctx.pass
                ))
            })
    }

    fn pass_controlled(&self, pass: Pass) -> bool {
        pass == Pass::Cond || self.control_uncond
    }

    fn log_mut(&self, step: usize) -> std::cell::RefMut<'_, StepLog> {
        std::cell::RefMut::map(self.log.borrow_mut(), |v| &mut v[step])
    }
}

impl AttentionController for EditController<'_> {
    fn reweight_scores(
        &self,
        ctx: &AttnContext,
        scores: &mut Tensor2,
        n_text: usize,
    ) -> Result<()> {
        // Re-weighted words only exist in the conditional prompt.
        if self.rules.is_empty() || ctx.pass == Pass::Uncond {
            return Ok(());
        }
        match self.reweight_branch {
            ReweightBranch::TargetMap => {
                for &(row, scale) in &self.rules {
                    reweight_scores_apply(scores, &[row], scale, n_text)?;
                }
            }
            ReweightBranch::SourceMap => {
                let rec = self.lookup(ctx)?;
                if rec.scores.rows() != scores.rows() || rec.scores.cols() != scores.cols() {
                    return Err(Error::Control("cached score shape mismatch".into()));
                }
                for &(row, scale) in &self.rules {
                    if row >= n_text {
                        return Err(Error::Input(format!(
                            "re-weight row {row} outside text range 0..{n_text}"
                        )));
                    }
                    let src = &rec.scores.row(row)[n_text..];
                    for (dst, &s) in scores.row_mut(row)[n_text..].iter_mut().zip(src) {
                        *dst = s * scale;
                    }
                }
            }
        }
        self.log_mut(ctx.step).reweight_rows += self.rules.len() as u64;
        Ok(())
    }

    fn edit_map(&self, ctx: &AttnContext, map: &mut Tensor2, n_text: usize) -> Result<()> {
        if !self.enable_structure || !self.pass_controlled(ctx.pass) {
            return Ok(());
        }
        let rec = self.lookup(ctx)?;
        structure_preserve_apply(&rec.map, map, n_text)?;
        self.log_mut(ctx.step).structure_edits += 1;
        Ok(())
    }

    fn edit_vision_values(&self, ctx: &AttnContext, v_vision: &mut Tensor2) -> Result<()> {
        if !self.enable_color || !self.pass_controlled(ctx.pass) {
            return Ok(());
        }
        let rec = self.lookup(ctx)?;
        color_preserve_apply(&rec.v_vision, v_vision, self.mask)?;
        let copied = self.mask.token_mask().iter().filter(|&&b| !b).count() as u64;
        self.log_mut(ctx.step).color_rows_copied += copied;
        Ok(())
    }
}

/// Run the Euler loop under `text`, returning the final latent and the
/// starting noise. Both CFG passes run per step, conditional first.
fn generate(
    model: &Model,
    text: &TokenSequence,
    params: &SampleParams,
    controller: Option<&dyn AttentionController>,
) -> Result<(Latent, Latent)> {
    let noise = initial_noise(model.config().image_size, params.seed);
    let uncond = TokenSequence::empty(model.config());
    let sigmas = sigma_schedule(params.steps);
    let mut x = noise.clone();
    for step in 0..params.steps {
        let v_cond = model.forward(&x, sigmas[step], text, step, Pass::Cond, controller)?;
        let v_uncond = model.forward(&x, sigmas[step], &uncond, step, Pass::Uncond, controller)?;
        let v = cfg_combine(&v_cond, &v_uncond, params.cfg_scale)?;
        x = euler_step(&x, &v, sigmas[step], sigmas[step + 1])?;
    }
    Ok((x, noise))
}

/// Generate the source image, recording attention state when
/// `params.record` is set. With recording off the returned cache is
/// empty and unusable for editing; the image is identical either way.
pub fn run_source(
    model: &Model,
    prompt: &str,
    params: &SampleParams,
) -> Result<(ImageBuffer, BranchCache)> {
    params.validate()?;
    let text = tokenize(prompt, model.config())?;
    let cache_cell = RefCell::new(BranchCache::new(*model.config(), params));
    let recorder = RecordingController { cache: &cache_cell };
    let controller: Option<&dyn AttentionController> =
        if params.record { Some(&recorder) } else { None };
    let (x, noise) = generate(model, &text, params, controller)?;
    let image = x.decode();
    let mut cache = cache_cell.into_inner();
    if params.record {
        cache.finalize(image.clone(), noise.digest())?;
    }
    Ok((image, cache))
}

/// Run the target branch of an edit against a finalized source cache.
///
/// The branch starts from the same seeded noise as the source; the edit
/// mask is computed once from the cache before the pass; the controller
/// hooks run at every layer, head and step per the spec toggles.
pub fn run_edit(
    model: &Model,
    spec: &EditSpec,
    params: &SampleParams,
    cache: &BranchCache,
) -> Result<EditResult> {
    params.validate()?;
    spec.validate()?;
    if !cache.is_finalized() {
        return Err(Error::State(
            "cache not finalized; run the source branch with recording on".into(),
        ));
    }
    let config = model.config();
    if cache.config().digest() != config.digest() {
        return Err(Error::Control(
            "cache was built for a different model config".into(),
        ));
    }
    if cache.steps() != params.steps
        || cache.seed() != params.seed
        || cache.cfg_scale() != params.cfg_scale
    {
        return Err(Error::Control(format!(
            "cache params (steps {}, seed {}, cfg {}) differ from requested ({}, {}, {})",
            cache.steps(),
            cache.seed(),
            cache.cfg_scale(),
            params.steps,
            params.seed,
            params.cfg_scale
        )));
    }

    let source_text = tokenize(&spec.source_prompt, config)?;
    let target_text = tokenize(&spec.target_prompt, config)?;

    // Noise sharing is part of the contract; verify it by digest.
    let noise = initial_noise(config.image_size, params.seed);
    if noise.digest() != cache.noise_digest() {
        return Err(Error::Control(
            "initial noise digest differs from the cached source branch".into(),
        ));
    }

    // Edit mask, computed once from the cache before the target pass.
    let mut token_cols: Vec<usize> = Vec::new();
    for &word in &spec.edit_words {
        let tokens = source_text.word_tokens(word).ok_or_else(|| {
            Error::Input(format!(
                "edit word index {word} outside source prompt ({} words)",
                source_text.word_count()
            ))
        })?;
        token_cols.extend(tokens);
    }
    token_cols.sort_unstable();
    token_cols.dedup();
    let (mask, mask_degenerate) = if token_cols.is_empty() {
        let empty =
            EditMask::from_token_mask(vec![false; config.n_vision()], spec.epsilon, config)?;
        (empty, true)
    } else {
        let scores = cache.mask_scores(&token_cols)?;
        let mut mask = binarize_mask(&scores.scores, spec.epsilon, config)?;
        if spec.mask_dilate > 0 {
            mask = dilate_token_mask(&mask, spec.mask_dilate, config)?;
        }
        (mask, scores.degenerate)
    };

    // Resolve re-weight word indices against the selected branch's prompt.
    let rule_text = match spec.reweight_branch {
        ReweightBranch::SourceMap => &source_text,
        ReweightBranch::TargetMap => &target_text,
    };
    let mut rules = Vec::new();
    for (&word, &scale) in &spec.reweight {
        let tokens = rule_text.word_tokens(word).ok_or_else(|| {
            Error::Input(format!(
                "re-weight word index {word} outside prompt ({} words)",
                rule_text.word_count()
            ))
        })?;
        for row in tokens {
            rules.push((row, scale));
        }
    }
    rules.sort_unstable_by_key(|r| r.0);

    let controller = EditController {
        cache,
        mask: &mask,
        enable_structure: spec.enable_structure,
        enable_color: spec.enable_color,
        control_uncond: spec.control_uncond,
        reweight_branch: spec.reweight_branch,
        rules: rules.clone(),
        log: RefCell::new(
            (0..params.steps)
                .map(|step| StepLog {
                    step,
                    ..StepLog::default()
                })
                .collect(),
        ),
    };
    let engaged = spec.enable_structure || spec.enable_color || !rules.is_empty();
    let hooks: Option<&dyn AttentionController> = if engaged { Some(&controller) } else { None };

    let (x, _noise) = generate(model, &target_text, params, hooks)?;
    let edited = x.decode();
    let control_log = ControlLog {
        source_prompt: spec.source_prompt.clone(),
        target_prompt: spec.target_prompt.clone(),
        epsilon: spec.epsilon,
        mask_tokens: mask.popcount(),
        mask_degenerate,
        structure_enabled: spec.enable_structure,
        color_enabled: spec.enable_color,
        reweight_branch: spec.reweight_branch,
        steps: controller.log.into_inner(),
    };
    Ok(EditResult {
        edited,
        source: cache.source_image()?.clone(),
        mask,
        control_log,
    })
}

/// Dilate the token mask on the token grid with a square element.
fn dilate_token_mask(
    mask: &EditMask,
    radius: usize,
    config: &crate::model::ModelConfig,
) -> Result<EditMask> {
    let g = config.token_grid();
    let mut raster = ImageBuffer::new(g, g, 1)?;
    for (tok, &on) in mask.token_mask().iter().enumerate() {
        if on {
            raster.set(tok % g, tok / g, 0, 255);
        }
    }
    let dilated = dilate(&raster, radius)?;
    let bits = (0..g * g)
        .map(|tok| dilated.get(tok % g, tok / g, 0) != 0)
        .collect();
    EditMask::from_token_mask(bits, mask.epsilon_used(), config)
}
