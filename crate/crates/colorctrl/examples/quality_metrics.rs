//! Evaluation metrics: Canny-SSIM for structure, masked PSNR/SSIM for
//! background preservation, and the pluggable semantic scorer.
//!
//! ```bash
//! cargo run --example quality_metrics
//! ```

use colorctrl::image::ImageBuffer;
use colorctrl::metrics::{
    canny_default, canny_ssim, dilate, evaluate_pair, psnr, scorer_by_id, ssim,
};

fn gradient_image(tilt: f32) -> ImageBuffer {
    let mut img = ImageBuffer::new(48, 48, 3).unwrap();
    for y in 0..48 {
        for x in 0..48 {
            let v = (x as f32 * 4.0 + y as f32 * tilt) as i32 % 256;
            for c in 0..3 {
                img.set(x, y, c, v.unsigned_abs() as u8);
            }
        }
    }
    img
}

fn main() -> colorctrl::Result<()> {
    let a = gradient_image(2.0);
    let b = gradient_image(3.0);

    println!("ssim(a, a)      = {:.4}", ssim(&a, &a)?);
    println!("ssim(a, b)      = {:.4}", ssim(&a, &b)?);
    println!("psnr(a, b)      = {:.2} dB", psnr(&a, &b, None)?);
    println!("canny_ssim(a,b) = {:.4}", canny_ssim(&a, &b)?);

    let edges = canny_default(&a)?;
    let edge_count = edges.data().iter().filter(|&&v| v != 0).count();
    println!("canny edges on a: {edge_count} pixels");

    // Background metrics exclude the (dilated) edit region.
    let mut edit_mask = ImageBuffer::new(48, 48, 1)?;
    for y in 16..32 {
        for x in 16..32 {
            edit_mask.set(x, y, 0, 255);
        }
    }
    let dilated = dilate(&edit_mask, 2)?;
    println!(
        "edit region {} px, dilated {} px",
        edit_mask.data().iter().filter(|&&v| v != 0).count(),
        dilated.data().iter().filter(|&&v| v != 0).count()
    );
    let scorer = scorer_by_id("mean-color")?;
    let report = evaluate_pair(&a, &b, &edit_mask, 2, scorer.as_deref(), "a gray scene")?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
