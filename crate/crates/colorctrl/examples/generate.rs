//! Deterministic text-to-image generation.
//!
//! Builds the toy MM-DiT with seeded weights, samples with the Euler
//! loop under classifier-free guidance, and writes a PNG. Running this
//! twice produces byte-identical files.
//!
//! ```bash
//! cargo run --example generate
//! ```

use colorctrl::image;
use colorctrl::model::{Model, ModelConfig};
use colorctrl::sampler::{run_source, SampleParams};

fn main() -> colorctrl::Result<()> {
    let model = Model::new(ModelConfig::default())?;
    let params = SampleParams {
        record: false, // no editing planned, skip the attention cache
        ..SampleParams::default()
    };
    let prompt = "a white fox in a snowy forest";
    let (image_buf, _cache) = run_source(&model, prompt, &params)?;

    let out = std::env::temp_dir().join("colorctrl_generate.png");
    image::save(&out, &image_buf)?;
    println!("prompt: {prompt}");
    println!(
        "seed {}, {} steps, cfg {}",
        params.seed, params.steps, params.cfg_scale
    );
    println!("wrote {}", out.display());
    Ok(())
}
