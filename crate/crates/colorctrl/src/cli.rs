//! Command-line surface: `generate`, `edit`, `metrics` and `bench`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
//! `COLORCTRL_OUT_DIR` provides the output directory when no flag names
//! one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::bench::{load_suite, run_suite, AblationMode, BenchContext};
use crate::error::{Error, Result};
use crate::image;
use crate::metrics::{evaluate_pair, scorer_by_id, DEFAULT_EVAL_DILATE};
use crate::model::{tokenize, Model, ModelConfig};
use crate::sampler::{
    run_edit, run_source, BranchCache, EditSpec, ReweightBranch, SampleParams, DEFAULT_EPSILON,
};

#[derive(Parser)]
#[command(
    name = "colorctrl",
    version,
    about = "Training-free color editing on a deterministic toy MM-DiT"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an image (optionally recording an attention cache).
    Generate(GenerateArgs),
    /// Edit a cached or freshly generated source toward a target prompt.
    Edit(EditArgs),
    /// Compare two images with the evaluation metrics.
    Metrics(MetricsArgs),
    /// Run a benchmark suite across ablation modes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Square image side in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Patch side of the vision token grid.
    #[arg(long, default_value_t = 2)]
    patch: usize,
    /// Fixed text sequence length.
    #[arg(long, default_value_t = 16)]
    n_text: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 6)]
    layers: usize,
    /// Weight initialization seed.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        let config = ModelConfig {
            image_size: self.size,
            patch: self.patch,
            n_text: self.n_text,
            d_model: self.d_model,
            n_heads: self.heads,
            n_layers: self.layers,
            init_seed: self.init_seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Sampling noise seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Euler steps.
    #[arg(long, default_value_t = 28)]
    steps: usize,
    /// Classifier-free guidance scale.
    #[arg(long, default_value_t = 7.5)]
    cfg: f32,
    /// Fail-fast attention cache budget in bytes.
    #[arg(long)]
    cache_budget: Option<u64>,
}

impl SampleArgs {
    fn params(&self, record: bool) -> SampleParams {
        SampleParams {
            steps: self.steps,
            cfg_scale: self.cfg,
            seed: self.seed,
            record,
            cache_budget: self.cache_budget,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    prompt: String,
    /// Output image path (.png/.ppm); defaults to generated.png in the
    /// output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Persist the attention cache for later edits.
    #[arg(long)]
    cache_out: Option<PathBuf>,
    #[command(flatten)]
    sample: SampleArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    source_prompt: String,
    #[arg(long)]
    target_prompt: String,
    /// Edit word(s) in the source prompt defining the mask target.
    #[arg(long = "word")]
    words: Vec<String>,
    /// Explicit word index alternative to --word.
    #[arg(long = "word-index")]
    word_indices: Vec<usize>,
    /// Mask threshold.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f32,
    /// Attribute re-weighting as word=scale; repeatable.
    #[arg(long = "reweight", value_parser = parse_reweight)]
    reweight: Vec<(String, f32)>,
    /// Apply re-weighting to the source or target attention maps.
    #[arg(long, value_enum, default_value_t = ReweightArg::Target)]
    reweight_branch: ReweightArg,
    /// Disable structure preservation.
    #[arg(long)]
    no_structure: bool,
    /// Disable color preservation.
    #[arg(long)]
    no_color: bool,
    /// Apply control hooks on the conditional pass only.
    #[arg(long)]
    no_uncond_control: bool,
    /// Dilation radius for the token mask (token grid units).
    #[arg(long, default_value_t = 0)]
    mask_dilate: usize,
    /// Reuse a cache persisted by `generate --cache-out`.
    #[arg(long)]
    cache_in: Option<PathBuf>,
    /// Output directory for source.png, edited.png, mask.png and
    /// control_log.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    sample: SampleArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ReweightArg {
    Source,
    Target,
}

#[derive(Args)]
struct MetricsArgs {
    /// Reference image.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    edited: PathBuf,
    /// Edit-region mask; absent, the background is the whole image.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Mask dilation radius before taking the background complement.
    #[arg(long, default_value_t = DEFAULT_EVAL_DILATE)]
    dilate: usize,
    /// Semantic scorer id (mean-color or none).
    #[arg(long, default_value = "none")]
    scorer: String,
    /// Text for the semantic scorer.
    #[arg(long, default_value = "")]
    prompt: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite JSON file.
    #[arg(long)]
    suite: PathBuf,
    /// Comma-separated ablation modes.
    #[arg(long, value_delimiter = ',', default_values_t = vec![
        "fix_seed".to_string(), "structure_only".to_string(), "full".to_string()
    ])]
    modes: Vec<String>,
    /// Report path; defaults to report.json in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for case-level parallelism.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Exit nonzero if any ordering flag fails.
    #[arg(long)]
    strict: bool,
    /// Semantic scorer id (mean-color or none).
    #[arg(long, default_value = "mean-color")]
    scorer: String,
    /// Evaluation mask dilation radius in pixels.
    #[arg(long, default_value_t = DEFAULT_EVAL_DILATE)]
    eval_dilate: usize,
    #[command(flatten)]
    sample: SampleArgs,
    #[command(flatten)]
    model: ModelArgs,
}

fn parse_reweight(s: &str) -> std::result::Result<(String, f32), String> {
    let (word, scale) = s
        .split_once('=')
        .ok_or_else(|| format!("expected word=scale, got {s:?}"))?;
    let scale: f32 = scale
        .parse()
        .map_err(|e| format!("bad scale in {s:?}: {e}"))?;
    if scale < 0.0 {
        return Err(format!("scale must be >= 0, got {scale}"));
    }
    Ok((word.to_string(), scale))
}

/// Output directory: flag, then `COLORCTRL_OUT_DIR`, then the cwd.
fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("COLORCTRL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Usage-level failures exit with code 2.
struct UsageError(String);

fn run_generate(args: GenerateArgs) -> Result<()> {
    let config = args.model.config()?;
    let model = Model::new(config)?;
    let params = args.sample.params(args.cache_out.is_some());
    let (image_buf, cache) = run_source(&model, &args.prompt, &params)?;
    let out = args
        .out
        .unwrap_or_else(|| out_dir(None).join("generated.png"));
    image::save(&out, &image_buf)?;
    println!("{}", out.display());
    if let Some(cache_out) = args.cache_out {
        cache.save(&cache_out)?;
        println!("{}", cache_out.display());
    }
    Ok(())
}

fn build_edit_spec(args: &EditArgs) -> std::result::Result<EditSpec, UsageError> {
    let config = args.model.config().map_err(|e| UsageError(e.to_string()))?;
    let source_text =
        tokenize(&args.source_prompt, &config).map_err(|e| UsageError(e.to_string()))?;
    let target_text =
        tokenize(&args.target_prompt, &config).map_err(|e| UsageError(e.to_string()))?;

    let mut edit_words = args.word_indices.clone();
    for word in &args.words {
        match source_text.find_word(word) {
            Some(idx) => edit_words.push(idx),
            None => {
                return Err(UsageError(format!(
                    "--word {word:?} does not occur in the source prompt; pass --word-index"
                )))
            }
        }
    }
    edit_words.sort_unstable();
    edit_words.dedup();

    let branch = match args.reweight_branch {
        ReweightArg::Source => ReweightBranch::SourceMap,
        ReweightArg::Target => ReweightBranch::TargetMap,
    };
    let rule_text = match branch {
        ReweightBranch::SourceMap => &source_text,
        ReweightBranch::TargetMap => &target_text,
    };
    let mut reweight = BTreeMap::new();
    for (word, scale) in &args.reweight {
        match rule_text.find_word(word) {
            Some(idx) => {
                reweight.insert(idx, *scale);
            }
            None => {
                return Err(UsageError(format!(
                    "--reweight word {word:?} does not occur in the {} prompt",
                    if branch == ReweightBranch::SourceMap {
                        "source"
                    } else {
                        "target"
                    }
                )))
            }
        }
    }

    let mut spec = EditSpec::new(&args.source_prompt, &args.target_prompt);
    spec.edit_words = edit_words;
    spec.reweight = reweight;
    spec.reweight_branch = branch;
    spec.epsilon = args.epsilon;
    spec.enable_structure = !args.no_structure;
    spec.enable_color = !args.no_color;
    spec.mask_dilate = args.mask_dilate;
    spec.control_uncond = !args.no_uncond_control;
    if spec.enable_color && spec.edit_words.is_empty() {
        return Err(UsageError(
            "color preservation needs --word or --word-index (or pass --no-color)".into(),
        ));
    }
    if !(spec.epsilon > 0.0 && spec.epsilon < 1.0) {
        return Err(UsageError(format!(
            "--epsilon {} outside (0, 1)",
            spec.epsilon
        )));
    }
    Ok(spec)
}

fn run_edit_cmd(args: EditArgs) -> Result<()> {
    let spec = match build_edit_spec(&args) {
        Ok(spec) => spec,
        Err(UsageError(msg)) => return Err(Error::Input(format!("usage: {msg}"))),
    };
    let config = args.model.config()?;
    let model = Model::new(config)?;
    let params = args.sample.params(true);
    let cache = match &args.cache_in {
        Some(path) => BranchCache::load(path)?,
        None => run_source(&model, &args.source_prompt, &params)?.1,
    };
    let result = run_edit(&model, &spec, &params, &cache)?;

    let dir = out_dir(args.out_dir);
    std::fs::create_dir_all(&dir)?;
    image::save(&dir.join("source.png"), &result.source)?;
    image::save(&dir.join("edited.png"), &result.edited)?;
    image::save(&dir.join("mask.png"), result.mask.pixel_mask())?;
    let log = serde_json::to_string_pretty(&result.control_log)
        .map_err(|e| Error::Input(e.to_string()))?;
    std::fs::write(dir.join("control_log.json"), log + "\n")?;
    println!("{}", dir.display());
    Ok(())
}

fn run_metrics(args: MetricsArgs) -> Result<()> {
    let reference = image::load(&args.reference)?;
    let edited = image::load(&args.edited)?;
    let mask = match &args.mask {
        Some(path) => image::load(path)?,
        None => image::ImageBuffer::new(reference.width(), reference.height(), 1)?,
    };
    let scorer = scorer_by_id(&args.scorer)?;
    let report = evaluate_pair(
        &reference,
        &edited,
        &mask,
        args.dilate,
        scorer.as_deref(),
        &args.prompt,
    )?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<bool> {
    let config = args.model.config()?;
    let model = Model::new(config)?;
    let cases = load_suite(&args.suite)?;
    let modes: Vec<AblationMode> = args
        .modes
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_>>()?;
    let suite_dir = args.suite.parent().map(Path::to_path_buf);
    let ctx = BenchContext {
        suite_dir: suite_dir.as_deref(),
        scorer_id: args.scorer.clone(),
        eval_dilate: args.eval_dilate,
    };
    let params = args.sample.params(true);
    let started = std::time::Instant::now();
    let report = run_suite(&model, &cases, &modes, &params, &ctx, args.jobs)?;
    let elapsed = started.elapsed();

    let out = args
        .out
        .unwrap_or_else(|| out_dir(None).join("report.json"));
    std::fs::write(&out, report.to_json())?;
    eprintln!(
        "{} cases x {} modes in {:.1}s ({} failures), report at {}",
        report.runtime.cases,
        modes.len(),
        elapsed.as_secs_f64(),
        report.runtime.failures,
        out.display()
    );
    for a in &report.aggregate {
        eprintln!(
            "  {:<15} canny_ssim {:.4}  bg_psnr {:6.2}  bg_ssim {:.4}",
            a.mode.name(),
            a.canny_ssim,
            a.bg_psnr,
            a.bg_ssim
        );
    }
    Ok(report.ordering_flags.all_pass())
}

/// Entry point for the `colorctrl` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => run_generate(args).map(|()| true),
        Command::Edit(args) => run_edit_cmd(args).map(|()| true),
        Command::Metrics(args) => run_metrics(args).map(|()| true),
        Command::Bench(args) => {
            let strict = args.strict;
            run_bench(args).map(|flags_pass| flags_pass || !strict)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: ordering flags failed under --strict");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(&e, Error::Input(msg) if msg.starts_with("usage:"));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
