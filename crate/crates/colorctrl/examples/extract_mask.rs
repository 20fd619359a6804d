//! Edit-mask extraction from vision-to-text attention.
//!
//! Aggregates the vision-to-text quadrant over every step, layer and
//! head of the conditional pass, normalizes, and thresholds at a few
//! epsilons to show the monotone shrinkage of the mask.
//!
//! ```bash
//! cargo run --example extract_mask
//! ```

use colorctrl::control::binarize_mask;
use colorctrl::model::{tokenize, Model, ModelConfig};
use colorctrl::sampler::{run_source, SampleParams};

fn main() -> colorctrl::Result<()> {
    let config = ModelConfig::default();
    let model = Model::new(config)?;
    let params = SampleParams {
        steps: 8,
        ..SampleParams::default()
    };
    let prompt = "a white fox in a snowy forest";
    let (_, cache) = run_source(&model, prompt, &params)?;

    let words = tokenize(prompt, &config)?;
    let fox = words.find_word("fox").unwrap();
    let (lo, hi) = words.word_span(fox).unwrap();
    let cols: Vec<usize> = (lo..hi).collect();
    let scores = cache.mask_scores(&cols)?;
    println!("prompt: {prompt:?}, mask word: \"fox\" (token columns {cols:?})");
    if scores.degenerate {
        println!("warning: degenerate scores (uniform attention)");
    }

    let g = config.token_grid();
    for epsilon in [0.05f32, 0.1, 0.3, 0.6] {
        let mask = binarize_mask(&scores.scores, epsilon, &config)?;
        println!(
            "epsilon {epsilon:<4}: {:>3} / {} tokens",
            mask.popcount(),
            config.n_vision()
        );
        if epsilon == 0.6 {
            for gy in 0..g {
                let row: String = (0..g)
                    .map(|gx| {
                        if mask.token_mask()[gy * g + gx] {
                            '#'
                        } else {
                            '.'
                        }
                    })
                    .collect();
                println!("    {row}");
            }
        }
    }
    Ok(())
}
