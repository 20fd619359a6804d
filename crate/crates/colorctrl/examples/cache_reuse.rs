//! Attention-cache reuse and persistence.
//!
//! One recorded source branch serves any number of target branches;
//! the cache also round-trips through its binary file format, so edits
//! can run in a later process without recomputing the source.
//!
//! ```bash
//! cargo run --example cache_reuse
//! ```

use colorctrl::model::{tokenize, Model, ModelConfig};
use colorctrl::sampler::{run_edit, run_source, BranchCache, EditSpec, SampleParams};

fn main() -> colorctrl::Result<()> {
    let config = ModelConfig::default();
    let model = Model::new(config)?;
    let params = SampleParams {
        steps: 8,
        ..SampleParams::default()
    };
    let source_prompt = "a red car parked on the street";

    let (_, cache) = run_source(&model, source_prompt, &params)?;
    let source_forwards = model.forward_count();
    println!(
        "source branch: {} forwards, {} records, {:.1} MiB",
        source_forwards,
        cache.len(),
        cache.payload_bytes() as f64 / (1024.0 * 1024.0)
    );

    let words = tokenize(source_prompt, &config)?;
    let car = words.find_word("car").unwrap();
    for target in [
        "a blue car parked on the street",
        "a green car parked on the street",
        "a purple car parked on the street",
    ] {
        let mut spec = EditSpec::new(source_prompt, target);
        spec.edit_words = vec![car];
        run_edit(&model, &spec, &params, &cache)?;
        println!("edited: {target:?}");
    }
    println!(
        "three edits reused one cache; total forwards {} (source ran once)",
        model.forward_count()
    );

    // Persist, reload, and verify the file round-trips bitwise.
    let path = std::env::temp_dir().join("colorctrl_cache.ccc");
    cache.save(&path)?;
    let reloaded = BranchCache::load(&path)?;
    let path2 = std::env::temp_dir().join("colorctrl_cache2.ccc");
    reloaded.save(&path2)?;
    assert_eq!(std::fs::read(&path)?, std::fs::read(&path2)?);
    println!(
        "cache file {} round-trips bitwise ({} bytes)",
        path.display(),
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
