//! The full color-editing pipeline: source branch, cached attention,
//! and a controlled target branch.
//!
//! The source branch generates "a white fox ..." while recording every
//! attention map and value token. The target branch re-runs from the
//! same noise under "an orange fox ...", transplanting the source's
//! vision-to-vision attention (structure preservation) and copying
//! source vision values outside the extracted fox mask (color
//! preservation).
//!
//! ```bash
//! cargo run --example edit_color
//! ```

use colorctrl::image;
use colorctrl::metrics::{canny_ssim, psnr};
use colorctrl::model::{tokenize, Model, ModelConfig};
use colorctrl::sampler::{run_edit, run_source, EditSpec, SampleParams};

fn main() -> colorctrl::Result<()> {
    let config = ModelConfig::default();
    let model = Model::new(config)?;
    let params = SampleParams::default();

    let source_prompt = "a white fox in a snowy forest";
    let target_prompt = "an orange fox in a snowy forest";

    println!("source branch: {source_prompt:?}");
    let (_, cache) = run_source(&model, source_prompt, &params)?;
    println!(
        "cached {} attention records ({:.1} MiB)",
        cache.len(),
        cache.payload_bytes() as f64 / (1024.0 * 1024.0)
    );

    let mut spec = EditSpec::new(source_prompt, target_prompt);
    let words = tokenize(source_prompt, &config)?;
    spec.edit_words = vec![words.find_word("fox").unwrap()];

    println!("target branch: {target_prompt:?}");
    let result = run_edit(&model, &spec, &params, &cache)?;

    let dir = std::env::temp_dir().join("colorctrl_edit");
    std::fs::create_dir_all(&dir)?;
    image::save(&dir.join("source.png"), &result.source)?;
    image::save(&dir.join("edited.png"), &result.edited)?;
    image::save(&dir.join("mask.png"), result.mask.pixel_mask())?;

    println!(
        "mask covers {} of {} vision tokens (epsilon {})",
        result.mask.popcount(),
        config.n_vision(),
        result.mask.epsilon_used()
    );
    println!(
        "edited vs source: canny_ssim {:.4}, psnr {:.2} dB",
        canny_ssim(&result.source, &result.edited)?,
        psnr(&result.source, &result.edited, None)?
    );
    println!("outputs in {}", dir.display());
    Ok(())
}
