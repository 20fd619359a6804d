//! The ablation benchmark on the bundled 20-case suite.
//!
//! Runs fix_seed, structure_only and full on every case at the default
//! protocol settings and prints the aggregate table plus the
//! directional ordering flags. Expect a minute or two on a laptop; the
//! CLI equivalent is
//! `colorctrl bench --suite crates/colorctrl/suites/colorctrl_toy.json --jobs 4`.
//!
//! ```bash
//! cargo run --release --example run_benchmark
//! ```

use std::path::Path;

use colorctrl::bench::{load_suite, run_suite, AblationMode, BenchContext};
use colorctrl::model::{Model, ModelConfig};
use colorctrl::sampler::SampleParams;

fn main() -> colorctrl::Result<()> {
    let suite_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("suites/colorctrl_toy.json");
    let cases = load_suite(&suite_path)?;
    let model = Model::new(ModelConfig::default())?;
    let ctx = BenchContext {
        suite_dir: suite_path.parent(),
        ..BenchContext::default()
    };
    let params = SampleParams::default();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    let started = std::time::Instant::now();
    let report = run_suite(&model, &cases, &AblationMode::all(), &params, &ctx, jobs)?;
    println!(
        "{} cases, {} failures, {:.1}s with {jobs} workers\n",
        report.runtime.cases,
        report.runtime.failures,
        started.elapsed().as_secs_f64()
    );
    println!(
        "{:<16} {:>10} {:>9} {:>9}",
        "mode", "canny_ssim", "bg_psnr", "bg_ssim"
    );
    for a in &report.aggregate {
        println!(
            "{:<16} {:>10.4} {:>9.2} {:>9.4}",
            a.mode.name(),
            a.canny_ssim,
            a.bg_psnr,
            a.bg_ssim
        );
    }
    let flags = &report.ordering_flags;
    println!(
        "\ncanny_ssim ordering (full >= structure_only >= fix_seed): {:?}",
        flags.canny_ssim_ordering
    );
    println!(
        "bg_psnr ordering    (full >= structure_only >= fix_seed): {:?}",
        flags.bg_psnr_ordering
    );
    println!(
        "bg_psnr strict gain (full > fix_seed):                    {:?}",
        flags.bg_psnr_strict_gain
    );
    Ok(())
}
