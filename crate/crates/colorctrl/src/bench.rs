//! Benchmark harness: prompt-pair suites, ablation modes, metric
//! aggregation and the suite report.
//!
//! A suite is a JSON array of edit cases (source prompt, target prompt,
//! a blended word naming the mask target, optional re-weighting and an
//! optional ground-truth evaluation mask). Each case runs its source
//! branch once; every requested ablation mode reuses that cache for its
//! target branch. Reports are deterministic for a given suite and
//! parameters, independent of the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image;
use crate::image::ImageBuffer;
use crate::metrics::{evaluate_pair, scorer_by_id, MetricsReport, DEFAULT_EVAL_DILATE};
use crate::model::{tokenize, Model};
use crate::sampler::{run_edit, run_source, BranchCache, EditSpec, SampleParams};

/// One prompt-pair editing case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditCase {
    pub id: String,
    pub source_prompt: String,
    pub target_prompt: String,
    /// Word whose attention defines the edit mask; must occur in both
    /// prompts unless `blended_index` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blended_word: Option<String>,
    /// Explicit word index alternative to `blended_word`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blended_index: Option<usize>,
    /// Optional attribute re-weighting, word to scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweight: Option<BTreeMap<String, f32>>,
    /// Optional ground-truth edit-region raster, relative to the suite
    /// file. Absent, metrics fall back to the extracted mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_mask: Option<String>,
}

/// Ablation modes, ordered weakest to strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    FixSeed,
    StructureOnly,
    Full,
}

impl AblationMode {
    pub fn all() -> [AblationMode; 3] {
        [Self::FixSeed, Self::StructureOnly, Self::Full]
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FixSeed => "fix_seed",
            Self::StructureOnly => "structure_only",
            Self::Full => "full",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fix_seed" => Ok(Self::FixSeed),
            "structure_only" => Ok(Self::StructureOnly),
            "full" => Ok(Self::Full),
            other => Err(Error::Input(format!(
                "unknown ablation mode {other:?} (expected fix_seed, structure_only or full)"
            ))),
        }
    }
}

fn word_list(prompt: &str) -> Vec<String> {
    prompt
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Load and schema-validate a suite file.
pub fn load_suite(path: &Path) -> Result<Vec<EditCase>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let cases: Vec<EditCase> = serde_json::from_str(&text).map_err(|e| {
        Error::Load(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    if cases.is_empty() {
        return Err(Error::Load(format!("{}: empty case list", path.display())));
    }
    let mut seen = std::collections::BTreeSet::new();
    for case in &cases {
        if case.id.trim().is_empty() {
            return Err(Error::Load(format!(
                "{}: case with empty id",
                path.display()
            )));
        }
        if !seen.insert(case.id.clone()) {
            return Err(Error::Load(format!(
                "{}: duplicate case id {:?}",
                path.display(),
                case.id
            )));
        }
        if case.source_prompt.trim().is_empty() || case.target_prompt.trim().is_empty() {
            return Err(Error::Load(format!(
                "{}: case {:?} has an empty prompt",
                path.display(),
                case.id
            )));
        }
        match (&case.blended_word, case.blended_index) {
            (None, None) => {
                return Err(Error::Load(format!(
                    "{}: case {:?} needs blended_word or blended_index",
                    path.display(),
                    case.id
                )));
            }
            (Some(word), None) => {
                let w = word.to_lowercase();
                let in_source = word_list(&case.source_prompt).contains(&w);
                let in_target = word_list(&case.target_prompt).contains(&w);
                if !in_source || !in_target {
                    return Err(Error::Load(format!(
                        "{}: case {:?}: blended word {word:?} missing from a prompt",
                        path.display(),
                        case.id
                    )));
                }
            }
            _ => {}
        }
    }
    Ok(cases)
}

/// Shared run context for case execution.
pub struct BenchContext<'a> {
    /// Directory eval-mask paths resolve against.
    pub suite_dir: Option<&'a Path>,
    pub scorer_id: String,
    pub eval_dilate: usize,
}

impl Default for BenchContext<'_> {
    fn default() -> Self {
        Self {
            suite_dir: None,
            scorer_id: "mean-color".into(),
            eval_dilate: DEFAULT_EVAL_DILATE,
        }
    }
}

/// Serialized per-case entry of the suite report. Wall time is kept out
/// of the report so reports stay byte-identical across runs and worker
/// counts; it lives in [`CaseResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub mode: AblationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub cache_bytes: u64,
    pub mask_tokens: usize,
}

/// Result of one case under one mode.
pub struct CaseResult {
    pub entry: CaseEntry,
    pub wall_ms: u128,
}

/// Build the edit spec a mode implies for a case.
fn spec_for_mode(
    case: &EditCase,
    mode: AblationMode,
    config: &crate::model::ModelConfig,
) -> Result<EditSpec> {
    let source_text = tokenize(&case.source_prompt, config)?;
    let target_text = tokenize(&case.target_prompt, config)?;
    let word_index = match (case.blended_index, &case.blended_word) {
        (Some(idx), _) => idx,
        (None, Some(word)) => source_text.find_word(word).ok_or_else(|| {
            Error::Input(format!(
                "case {:?}: blended word {word:?} not in tokenized source prompt",
                case.id
            ))
        })?,
        (None, None) => {
            return Err(Error::Input(format!(
                "case {:?}: no blended word or index",
                case.id
            )))
        }
    };
    let mut spec = EditSpec::new(&case.source_prompt, &case.target_prompt);
    spec.edit_words = vec![word_index];
    match mode {
        AblationMode::FixSeed => {
            // Baseline: fixed seed only, no controller hooks.
            spec.enable_structure = false;
            spec.enable_color = false;
        }
        AblationMode::StructureOnly => {
            spec.enable_color = false;
        }
        AblationMode::Full => {}
    }
    // Re-weighting engages with the controlled modes only.
    if mode != AblationMode::FixSeed {
        if let Some(rules) = &case.reweight {
            for (word, &scale) in rules {
                let idx = target_text.find_word(word).ok_or_else(|| {
                    Error::Input(format!(
                        "case {:?}: re-weight word {word:?} not in target prompt",
                        case.id
                    ))
                })?;
                spec.reweight.insert(idx, scale);
            }
        }
    }
    Ok(spec)
}

fn eval_mask_for(
    case: &EditCase,
    ctx: &BenchContext<'_>,
    extracted: &ImageBuffer,
) -> Result<ImageBuffer> {
    match &case.eval_mask {
        Some(rel) => {
            let path = match ctx.suite_dir {
                Some(dir) => dir.join(rel),
                None => PathBuf::from(rel),
            };
            let mask = image::load(&path)?;
            if mask.channels() != 1 {
                return Err(Error::Input(format!(
                    "case {:?}: eval mask {} must be grayscale",
                    case.id,
                    path.display()
                )));
            }
            Ok(mask)
        }
        None => Ok(extracted.clone()),
    }
}

/// Run one case under one mode. When `cache` is absent the source
/// branch runs here; passing a shared cache is what lets a suite run
/// each source exactly once.
pub fn run_case(
    model: &Model,
    case: &EditCase,
    mode: AblationMode,
    params: &SampleParams,
    ctx: &BenchContext<'_>,
    cache: Option<&BranchCache>,
) -> Result<CaseResult> {
    let start = Instant::now();
    let spec = spec_for_mode(case, mode, model.config())?;
    let owned;
    let cache = match cache {
        Some(c) => c,
        None => {
            let (_, c) = run_source(model, &case.source_prompt, params)?;
            owned = c;
            &owned
        }
    };
    let result = run_edit(model, &spec, params, cache)?;
    let eval_mask = eval_mask_for(case, ctx, result.mask.pixel_mask())?;
    let scorer = scorer_by_id(&ctx.scorer_id)?;
    let metrics = evaluate_pair(
        &result.source,
        &result.edited,
        &eval_mask,
        ctx.eval_dilate,
        scorer.as_deref(),
        &case.target_prompt,
    )?;
    Ok(CaseResult {
        entry: CaseEntry {
            id: case.id.clone(),
            mode,
            metrics: Some(metrics),
            error: None,
            cache_bytes: cache.payload_bytes(),
            mask_tokens: result.mask.popcount(),
        },
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Per-mode metric means over successful cases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: AblationMode,
    pub cases: usize,
    pub canny_ssim: f64,
    pub bg_psnr: f64,
    pub bg_ssim: f64,
    pub semantic_whole: f64,
    pub semantic_edited: f64,
}

/// Directional checks over the aggregate means. `null` when a chain's
/// modes were not all run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingFlags {
    pub canny_ssim_ordering: Option<bool>,
    pub bg_psnr_ordering: Option<bool>,
    pub bg_psnr_strict_gain: Option<bool>,
}

impl OrderingFlags {
    pub fn all_pass(&self) -> bool {
        [
            self.canny_ssim_ordering,
            self.bg_psnr_ordering,
            self.bg_psnr_strict_gain,
        ]
        .iter()
        .all(|f| f.unwrap_or(true))
    }
}

/// Deterministic run statistics (no wall-clock values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub cases: usize,
    pub failures: usize,
    pub modes: Vec<AblationMode>,
    pub source_branches: u64,
    pub target_branches: u64,
    pub cache_bytes_total: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub per_case: Vec<CaseEntry>,
    pub aggregate: Vec<Aggregate>,
    pub ordering_flags: OrderingFlags,
    pub runtime: RuntimeStats,
}

impl SuiteReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }
}

/// Mean per metric per mode plus the directional flags.
pub fn aggregate(entries: &[CaseEntry]) -> Result<(Vec<Aggregate>, OrderingFlags)> {
    let mut by_mode: BTreeMap<AblationMode, Vec<&MetricsReport>> = BTreeMap::new();
    for entry in entries {
        if let Some(m) = &entry.metrics {
            by_mode.entry(entry.mode).or_default().push(m);
        }
    }
    if by_mode.is_empty() {
        return Err(Error::Report("no successful cases to aggregate".into()));
    }
    let mean = |xs: &[&MetricsReport], f: fn(&MetricsReport) -> f64| -> f64 {
        xs.iter().map(|m| f(m)).sum::<f64>() / xs.len() as f64
    };
    let aggregates: Vec<Aggregate> = by_mode
        .iter()
        .map(|(&mode, ms)| Aggregate {
            mode,
            cases: ms.len(),
            canny_ssim: mean(ms, |m| m.canny_ssim),
            bg_psnr: mean(ms, |m| m.bg_psnr),
            bg_ssim: mean(ms, |m| m.bg_ssim),
            semantic_whole: mean(ms, |m| m.semantic_whole),
            semantic_edited: mean(ms, |m| m.semantic_edited),
        })
        .collect();

    let get = |mode: AblationMode| aggregates.iter().find(|a| a.mode == mode);
    let flags = match (
        get(AblationMode::FixSeed),
        get(AblationMode::StructureOnly),
        get(AblationMode::Full),
    ) {
        (Some(fix), Some(structure), Some(full)) => OrderingFlags {
            canny_ssim_ordering: Some(
                full.canny_ssim >= structure.canny_ssim && structure.canny_ssim >= fix.canny_ssim,
            ),
            bg_psnr_ordering: Some(
                full.bg_psnr >= structure.bg_psnr && structure.bg_psnr >= fix.bg_psnr,
            ),
            bg_psnr_strict_gain: Some(full.bg_psnr > fix.bg_psnr),
        },
        _ => OrderingFlags {
            canny_ssim_ordering: None,
            bg_psnr_ordering: None,
            bg_psnr_strict_gain: None,
        },
    };
    Ok((aggregates, flags))
}

/// Run a whole suite. Cases execute independently (in parallel under
/// `jobs` workers); each case's source branch runs exactly once and its
/// cache is shared by all modes. A failing case is recorded and the run
/// continues.
pub fn run_suite(
    model: &Model,
    cases: &[EditCase],
    modes: &[AblationMode],
    params: &SampleParams,
    ctx: &BenchContext<'_>,
    jobs: usize,
) -> Result<SuiteReport> {
    if modes.is_empty() {
        return Err(Error::Input("no ablation modes requested".into()));
    }
    let mut params = *params;
    params.record = true;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Input(format!("worker pool: {e}")))?;

    let per_case_results: Vec<Vec<CaseResult>> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| run_case_all_modes(model, case, modes, &params, ctx))
            .collect()
    });

    let mut per_case: Vec<CaseEntry> = Vec::new();
    let mut source_branches = 0u64;
    let mut target_branches = 0u64;
    let mut cache_bytes_total = 0u64;
    for results in per_case_results {
        let mut case_cache_bytes = 0;
        for r in results {
            if r.entry.error.is_none() {
                target_branches += 1;
            }
            case_cache_bytes = case_cache_bytes.max(r.entry.cache_bytes);
            per_case.push(r.entry);
        }
        if case_cache_bytes > 0 {
            source_branches += 1;
            cache_bytes_total += case_cache_bytes;
        }
    }
    let failures = per_case.iter().filter(|e| e.error.is_some()).count();
    let (aggregates, flags) = aggregate(&per_case)?;
    Ok(SuiteReport {
        per_case,
        aggregate: aggregates,
        ordering_flags: flags,
        runtime: RuntimeStats {
            cases: cases.len(),
            failures,
            modes: modes.to_vec(),
            source_branches,
            target_branches,
            cache_bytes_total,
        },
    })
}

/// One case's source branch plus every mode's target branch. Any error
/// is folded into the entries; case isolation is the caller's contract.
fn run_case_all_modes(
    model: &Model,
    case: &EditCase,
    modes: &[AblationMode],
    params: &SampleParams,
    ctx: &BenchContext<'_>,
) -> Vec<CaseResult> {
    let error_entry = |mode: AblationMode, msg: &str| CaseResult {
        entry: CaseEntry {
            id: case.id.clone(),
            mode,
            metrics: None,
            error: Some(msg.to_string()),
            cache_bytes: 0,
            mask_tokens: 0,
        },
        wall_ms: 0,
    };
    let source = run_source(model, &case.source_prompt, params);
    let cache = match source {
        Ok((_, cache)) => cache,
        Err(e) => {
            let msg = format!("source branch failed: {e}");
            return modes.iter().map(|&m| error_entry(m, &msg)).collect();
        }
    };
    modes
        .iter()
        .map(|&mode| {
            run_case(model, case, mode, params, ctx, Some(&cache))
                .unwrap_or_else(|e| error_entry(mode, &e.to_string()))
        })
        .collect()
}
