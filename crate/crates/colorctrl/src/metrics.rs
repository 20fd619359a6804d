//! Image quality metrics and the evaluation protocol.
//!
//! Structure consistency is scored as SSIM between Canny edge maps of
//! the source and edited images. Background preservation computes PSNR
//! and SSIM exclusively on the complement of the dilated edit region.
//! Semantic alignment is a pluggable interface; the bundled scorer is a
//! deterministic mean-color placeholder that only exercises report
//! plumbing and is never used for acceptance decisions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// PSNR reported for a zero-MSE comparison, keeping reports finite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM window: 11x11 Gaussian, sigma 1.5, K1/K2 and L at their
/// canonical values.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

/// Canny defaults: blur sigma and the hysteresis thresholds on Sobel
/// gradient magnitude.
pub const CANNY_SIGMA: f32 = 1.4;
pub const CANNY_LOW: f32 = 100.0;
pub const CANNY_HIGH: f32 = 200.0;

/// Radius used to dilate edit masks before carving out the background
/// region for bg metrics.
pub const DEFAULT_EVAL_DILATE: usize = 2;

/// Sentinel written into semantic fields when no scorer is configured.
pub const SEMANTIC_SENTINEL: f64 = -1.0;

/// Peak signal-to-noise ratio in dB over the included region.
///
/// `mask`, when given, marks pixels to include (nonzero = included);
/// identical content returns [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Shape("psnr: image dimensions differ".into()));
    }
    if let Some(m) = mask {
        if m.width() != a.width() || m.height() != a.height() || m.channels() != 1 {
            return Err(Error::Shape("psnr: mask dimensions differ".into()));
        }
    }
    let mut se = 0.0f64;
    let mut count = 0u64;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if let Some(m) = mask {
                if m.get(x, y, 0) == 0 {
                    continue;
                }
            }
            for c in 0..a.channels() {
                let d = a.get(x, y, c) as f64 - b.get(x, y, c) as f64;
                se += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Input("psnr: included region is empty".into()));
    }
    let mse = se / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut sum = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w.push(v);
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

fn local_ssim(a: &ImageBuffer, b: &ImageBuffer, cx: usize, cy: usize, window: &[f64]) -> f64 {
    let half = SSIM_WINDOW / 2;
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let (mut mu_x, mut mu_y) = (0.0f64, 0.0f64);
    let (mut xx, mut yy, mut xy) = (0.0f64, 0.0f64, 0.0f64);
    let mut idx = 0;
    for dy in 0..SSIM_WINDOW {
        for dx in 0..SSIM_WINDOW {
            let w = window[idx];
            idx += 1;
            let px = a.get(cx - half + dx, cy - half + dy, 0) as f64;
            let py = b.get(cx - half + dx, cy - half + dy, 0) as f64;
            mu_x += w * px;
            mu_y += w * py;
            xx += w * px * px;
            yy += w * py * py;
            xy += w * px * py;
        }
    }
    let var_x = xx - mu_x * mu_x;
    let var_y = yy - mu_y * mu_y;
    let cov = xy - mu_x * mu_y;
    ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
        / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
}

fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Shape("ssim: image dimensions differ".into()));
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "ssim: image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            a.width(),
            a.height()
        )));
    }
    let ga = a.to_gray();
    let gb = b.to_gray();
    let window = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let mut sum = 0.0f64;
    let mut count = 0u64;
    for cy in half..a.height() - half {
        for cx in half..a.width() - half {
            if let Some(m) = mask {
                if m.get(cx, cy, 0) == 0 {
                    continue;
                }
            }
            sum += local_ssim(&ga, &gb, cx, cy, &window);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Input(
            "ssim: no windows inside the included region".into(),
        ));
    }
    Ok(sum / count as f64)
}

/// Mean local SSIM over all fully interior windows. RGB inputs are
/// converted with ITU-R 601 luma first.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_impl(a, b, None)
}

/// SSIM averaged only over windows whose center pixel the mask includes.
pub fn ssim_masked(a: &ImageBuffer, b: &ImageBuffer, mask: &ImageBuffer) -> Result<f64> {
    if mask.width() != a.width() || mask.height() != a.height() || mask.channels() != 1 {
        return Err(Error::Shape("ssim: mask dimensions differ".into()));
    }
    ssim_impl(a, b, Some(mask))
}

/// Canny edge detection: Gaussian blur, Sobel gradients, 4-direction
/// non-maximum suppression, double-threshold hysteresis with
/// 8-connectivity. Output is a 0/255 grayscale raster.
///
/// Suppression keeps a pixel only if its magnitude strictly exceeds the
/// forward neighbor along the gradient and is at least the backward
/// one; a perfectly symmetric step therefore yields a single-pixel line.
pub fn canny(img: &ImageBuffer, sigma: f32, low: f32, high: f32) -> Result<ImageBuffer> {
    if !(0.0 < low && low < high) {
        return Err(Error::Input(format!(
            "canny: thresholds must satisfy 0 < low < high, got {low}/{high}"
        )));
    }
    if img.width() < 3 || img.height() < 3 {
        return Err(Error::Input("canny: image smaller than 3x3".into()));
    }
    let gray = img.to_gray();
    let (w, h) = (gray.width(), gray.height());
    // The blur runs with integer kernel weights and exact f64 integer
    // accumulation, so adding a constant to the input shifts every
    // blurred value by exactly constant * norm and cancels in the Sobel
    // differences. Thresholds compare against magnitudes divided back
    // by the kernel norm.
    let (blurred, norm) = gaussian_blur_integer(gray.data(), w, h, sigma);

    // Sobel gradients on the interior.
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    let mut mag = vec![0.0f64; w * h];
    let at = |x: usize, y: usize| blurred[y * w + x];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = -at(x - 1, y - 1) + at(x + 1, y - 1) - 2.0 * at(x - 1, y) + 2.0 * at(x + 1, y)
                - at(x - 1, y + 1)
                + at(x + 1, y + 1);
            let dy = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1)
                + 2.0 * at(x, y + 1)
                + at(x + 1, y + 1);
            gx[y * w + x] = dx;
            gy[y * w + x] = dy;
            mag[y * w + x] = dx.hypot(dy);
        }
    }

    // Non-maximum suppression along the quantized gradient direction.
    let mut thin = vec![0.0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[y * w + x].atan2(gx[y * w + x]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // Forward/backward neighbors per direction bucket.
            let (fwd, bwd) = if !(22.5..157.5).contains(&angle) {
                (mag[y * w + x + 1], mag[y * w + x - 1])
            } else if angle < 67.5 {
                (mag[(y + 1) * w + x + 1], mag[(y - 1) * w + x - 1])
            } else if angle < 112.5 {
                (mag[(y + 1) * w + x], mag[(y - 1) * w + x])
            } else {
                (mag[(y + 1) * w + x - 1], mag[(y - 1) * w + x + 1])
            };
            if m > fwd && m >= bwd {
                thin[y * w + x] = m;
            }
        }
    }

    // Hysteresis: seed from strong pixels, grow through weak ones.
    // Thresholds are defined on the normalized gradient scale.
    let low = low as f64 * norm;
    let high = high as f64 * norm;
    let mut out = ImageBuffer::new(w, h, 1)?;
    let mut stack = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if thin[y * w + x] >= high && out.get(x, y, 0) == 0 {
                out.set(x, y, 0, 255);
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for (nx, ny) in neighbors8(cx, cy, w, h) {
                        if thin[ny * w + nx] >= low && out.get(nx, ny, 0) == 0 {
                            out.set(nx, ny, 0, 255);
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Canny with the documented default parameters.
pub fn canny_default(img: &ImageBuffer) -> Result<ImageBuffer> {
    canny(img, CANNY_SIGMA, CANNY_LOW, CANNY_HIGH)
}

fn neighbors8(x: usize, y: usize, w: usize, h: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(8);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx >= 1 && ny >= 1 && (nx as usize) < w - 1 && (ny as usize) < h - 1 {
                out.push((nx as usize, ny as usize));
            }
        }
    }
    out
}

/// Separable Gaussian blur with fixed-point kernel weights, clamp-to-edge.
///
/// Returns the unnormalized blurred field (integer-valued f64, exact)
/// and the total kernel norm to fold into threshold comparisons.
fn gaussian_blur_integer(pixels: &[u8], w: usize, h: usize, sigma: f32) -> (Vec<f64>, f64) {
    if sigma <= 0.0 {
        return (pixels.iter().map(|&v| v as f64).collect(), 1.0);
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let sigma = sigma as f64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| ((-((d * d) as f64) / (2.0 * sigma * sigma)).exp() * 1024.0).round())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    // Horizontal then vertical pass; every accumulator stays an exact
    // integer well below 2^53.
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, &k) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + i as isize - radius, w);
                acc += k * pixels[y * w + sx] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, &k) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + i as isize - radius, h);
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    (out, ksum * ksum)
}

/// SSIM between the Canny edge maps of the two images (default
/// detector parameters, edges scaled to 0/255).
pub fn canny_ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let ea = canny_default(a)?;
    let eb = canny_default(b)?;
    ssim(&ea, &eb)
}

/// Morphological dilation with a square structuring element of side
/// `2*radius + 1`. Any nonzero pixel is foreground; output is 0/255.
pub fn dilate(mask: &ImageBuffer, radius: usize) -> Result<ImageBuffer> {
    if mask.channels() != 1 {
        return Err(Error::Input("dilate: mask must be single-channel".into()));
    }
    let (w, h) = (mask.width(), mask.height());
    let mut out = ImageBuffer::new(w, h, 1)?;
    let r = radius as isize;
    for y in 0..h {
        for x in 0..w {
            let mut hit = false;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    let sx = x as isize + dx;
                    let sy = y as isize + dy;
                    if sx >= 0
                        && sy >= 0
                        && (sx as usize) < w
                        && (sy as usize) < h
                        && mask.get(sx as usize, sy as usize, 0) != 0
                    {
                        hit = true;
                        break 'scan;
                    }
                }
            }
            out.set(x, y, 0, if hit { 255 } else { 0 });
        }
    }
    Ok(out)
}

/// Binary complement of a mask: zero pixels become 255 and vice versa.
pub fn complement(mask: &ImageBuffer) -> ImageBuffer {
    let mut out = mask.clone();
    for v in out.data_mut() {
        *v = if *v == 0 { 255 } else { 0 };
    }
    out
}

/// Semantic alignment scorer interface. Real semantic models are out of
/// scope; implementations must be deterministic.
pub trait SemanticScorer: Send + Sync {
    fn id(&self) -> &'static str;

    /// Score `text` against the image, optionally restricted to the
    /// nonzero pixels of `region`.
    fn score(&self, img: &ImageBuffer, region: Option<&ImageBuffer>, text: &str) -> Result<f64>;
}

/// Placeholder scorer: distance between the region's mean color and the
/// last named color word in the text. Exercises report plumbing only.
pub struct MeanColorScorer;

const COLOR_WORDS: &[(&str, [f64; 3])] = &[
    ("red", [255.0, 0.0, 0.0]),
    ("orange", [255.0, 165.0, 0.0]),
    ("yellow", [255.0, 255.0, 0.0]),
    ("green", [0.0, 200.0, 0.0]),
    ("blue", [0.0, 0.0, 255.0]),
    ("purple", [160.0, 32.0, 240.0]),
    ("pink", [255.0, 105.0, 180.0]),
    ("brown", [139.0, 69.0, 19.0]),
    ("black", [0.0, 0.0, 0.0]),
    ("white", [255.0, 255.0, 255.0]),
    ("gray", [128.0, 128.0, 128.0]),
    ("grey", [128.0, 128.0, 128.0]),
    ("cyan", [0.0, 255.0, 255.0]),
    ("gold", [255.0, 215.0, 0.0]),
];

impl SemanticScorer for MeanColorScorer {
    fn id(&self) -> &'static str {
        "mean-color-placeholder"
    }

    fn score(&self, img: &ImageBuffer, region: Option<&ImageBuffer>, text: &str) -> Result<f64> {
        let lowered = text.to_lowercase();
        let target = lowered
            .split(|c: char| !c.is_alphabetic())
            .filter_map(|w| COLOR_WORDS.iter().find(|(name, _)| *name == w))
            .next_back();
        let Some((_, rgb)) = target else {
            return Ok(0.5);
        };
        let mut sum = [0.0f64; 3];
        let mut count = 0u64;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if let Some(r) = region {
                    if r.get(x, y, 0) == 0 {
                        continue;
                    }
                }
                for (c, slot) in sum.iter_mut().enumerate() {
                    let ch = if img.channels() == 3 { c } else { 0 };
                    *slot += img.get(x, y, ch) as f64;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Input("semantic score: empty region".into()));
        }
        let mean = [
            sum[0] / count as f64,
            sum[1] / count as f64,
            sum[2] / count as f64,
        ];
        let dist =
            ((mean[0] - rgb[0]).powi(2) + (mean[1] - rgb[1]).powi(2) + (mean[2] - rgb[2]).powi(2))
                .sqrt();
        let max = (3.0f64).sqrt() * 255.0;
        Ok(1.0 - dist / max)
    }
}

/// Resolve a scorer id: `"mean-color"` for the bundled placeholder,
/// `"none"` to disable semantic scoring (sentinel fields).
pub fn scorer_by_id(id: &str) -> Result<Option<Box<dyn SemanticScorer>>> {
    match id {
        "mean-color" | "mean-color-placeholder" => Ok(Some(Box::new(MeanColorScorer))),
        "none" => Ok(None),
        other => Err(Error::Input(format!(
            "unknown semantic scorer id {other:?}"
        ))),
    }
}

/// Per-comparison metric values. Semantic fields hold
/// [`SEMANTIC_SENTINEL`] when the scorer is `"none"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub canny_ssim: f64,
    pub bg_psnr: f64,
    pub bg_ssim: f64,
    pub semantic_whole: f64,
    pub semantic_edited: f64,
    pub semantic_scorer: String,
}

/// Run the full evaluation protocol on a (reference, edited) pair.
///
/// `edit_mask` marks the edited region; it is dilated by
/// `dilate_radius` and the bg metrics run on its complement.
pub fn evaluate_pair(
    reference: &ImageBuffer,
    edited: &ImageBuffer,
    edit_mask: &ImageBuffer,
    dilate_radius: usize,
    scorer: Option<&dyn SemanticScorer>,
    target_text: &str,
) -> Result<MetricsReport> {
    let dilated = dilate(edit_mask, dilate_radius)?;
    let background = complement(&dilated);
    let bg_psnr = psnr(reference, edited, Some(&background))?;
    let bg_ssim = ssim_masked(reference, edited, &background)?;
    let structure = canny_ssim(reference, edited)?;
    let (semantic_whole, semantic_edited, scorer_id) = match scorer {
        Some(s) => {
            let whole = s.score(edited, None, target_text)?;
            // An empty edit region scores as the whole image.
            let edited_region = if dilated.data().iter().any(|&v| v != 0) {
                s.score(edited, Some(&dilated), target_text)?
            } else {
                whole
            };
            (whole, edited_region, s.id().to_string())
        }
        None => (SEMANTIC_SENTINEL, SEMANTIC_SENTINEL, "none".to_string()),
    };
    Ok(MetricsReport {
        canny_ssim: structure,
        bg_psnr,
        bg_ssim,
        semantic_whole,
        semantic_edited,
        semantic_scorer: scorer_id,
    })
}

#[cfg(test)]
// Oracles below stay in plain scalar-loop style on purpose.
#[allow(clippy::needless_range_loop, clippy::manual_is_multiple_of)]
mod tests {
    use super::*;

    fn uniform(w: usize, h: usize, value: u8) -> ImageBuffer {
        ImageBuffer::filled(w, h, 3, value).unwrap()
    }

    fn checkerboard(w: usize, h: usize, tile: usize) -> ImageBuffer {
        let mut img = ImageBuffer::new(w, h, 1).unwrap();
        for y in 0..h {
            for x in 0..w {
                let on = (x / tile + y / tile) % 2 == 0;
                img.set(x, y, 0, if on { 255 } else { 0 });
            }
        }
        img
    }

    #[test]
    fn psnr_identical_images_hit_cap() {
        let a = uniform(16, 16, 77);
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_closed_form_uniform_pair() {
        let a = uniform(16, 16, 128);
        let b = uniform(16, 16, 138);
        // MSE = 100 -> 10*log10(255^2/100) = 28.13 dB.
        let got = psnr(&a, &b, None).unwrap();
        assert!((got - 28.13).abs() < 0.01, "{got}");
    }

    #[test]
    fn psnr_masked_identical_half() {
        let a = uniform(16, 16, 10);
        let mut b = a.clone();
        // Right half differs, mask includes only the left half.
        for y in 0..16 {
            for x in 8..16 {
                for c in 0..3 {
                    b.set(x, y, c, 200);
                }
            }
        }
        let mut mask = ImageBuffer::new(16, 16, 1).unwrap();
        for y in 0..16 {
            for x in 0..8 {
                mask.set(x, y, 0, 255);
            }
        }
        assert_eq!(psnr(&a, &b, Some(&mask)).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&a, &b, None).unwrap() < PSNR_CAP_DB);
    }

    #[test]
    fn psnr_empty_region_is_error() {
        let a = uniform(16, 16, 0);
        let mask = ImageBuffer::new(16, 16, 1).unwrap();
        assert!(psnr(&a, &a, Some(&mask)).is_err());
    }

    #[test]
    fn psnr_monotone_in_mse() {
        let a = uniform(16, 16, 100);
        let close = uniform(16, 16, 105);
        let far = uniform(16, 16, 130);
        assert!(psnr(&a, &close, None).unwrap() > psnr(&a, &far, None).unwrap());
    }

    #[test]
    fn ssim_self_is_exactly_one() {
        let img = checkerboard(32, 32, 4);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = checkerboard(32, 32, 4);
        let b = checkerboard(32, 32, 8);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_negative() {
        let a = checkerboard(32, 32, 4);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v = 255 - *v;
        }
        let got = ssim(&a, &b).unwrap();
        assert!(got < 0.0, "anticorrelated ssim {got}");
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = uniform(8, 8, 1);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn canny_constant_image_has_no_edges() {
        let img = uniform(24, 24, 55);
        let edges = canny_default(&img).unwrap();
        assert!(edges.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn canny_step_edge_is_single_pixel_line() {
        let mut img = ImageBuffer::new(24, 24, 1).unwrap();
        for y in 0..24 {
            for x in 12..24 {
                img.set(x, y, 0, 255);
            }
        }
        let edges = canny_default(&img).unwrap();
        // Interior rows must contain exactly one edge pixel.
        for y in 2..22 {
            let count = (0..24).filter(|&x| edges.get(x, y, 0) != 0).count();
            assert_eq!(count, 1, "row {y} has {count} edge pixels");
        }
    }

    #[test]
    fn canny_is_deterministic_and_shift_invariant() {
        let mut img = ImageBuffer::new(24, 24, 1).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                img.set(x, y, 0, if x >= 12 { 200 } else { 10 });
            }
        }
        let base = canny_default(&img).unwrap();
        assert_eq!(canny_default(&img).unwrap(), base);
        // Add a constant well below the hysteresis band.
        let mut shifted = img.clone();
        for v in shifted.data_mut() {
            *v += 20;
        }
        assert_eq!(canny_default(&shifted).unwrap(), base);
    }

    #[test]
    fn canny_rejects_bad_thresholds() {
        let img = uniform(16, 16, 0);
        assert!(canny(&img, 1.4, 200.0, 100.0).is_err());
        assert!(canny(&img, 1.4, 0.0, 100.0).is_err());
    }

    #[test]
    fn canny_ssim_identical_is_one() {
        let img = checkerboard(32, 32, 8);
        assert_eq!(canny_ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn canny_ssim_detects_rotation() {
        let mut img = ImageBuffer::new(32, 32, 1).unwrap();
        // Asymmetric content: a bright block off center.
        for y in 2..12 {
            for x in 3..17 {
                img.set(x, y, 0, 255);
            }
        }
        let mut rotated = ImageBuffer::new(32, 32, 1).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                rotated.set(x, y, 0, img.get(31 - x, 31 - y, 0));
            }
        }
        let got = canny_ssim(&img, &rotated).unwrap();
        assert!(got < 1.0, "rotated canny ssim {got}");
    }

    #[test]
    fn canny_ssim_equals_composition() {
        let a = checkerboard(32, 32, 8);
        let b = checkerboard(32, 32, 4);
        let composed = ssim(&canny_default(&a).unwrap(), &canny_default(&b).unwrap()).unwrap();
        assert_eq!(canny_ssim(&a, &b).unwrap(), composed);
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let m = checkerboard(16, 16, 2);
        assert_eq!(dilate(&m, 0).unwrap(), m);
    }

    #[test]
    fn dilate_single_pixel_makes_block() {
        let mut m = ImageBuffer::new(9, 9, 1).unwrap();
        m.set(4, 4, 0, 255);
        let d = dilate(&m, 1).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let inside = (3..=5).contains(&x) && (3..=5).contains(&y);
                assert_eq!(d.get(x, y, 0) != 0, inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn dilate_composition_law() {
        // Square elements compose: r=1 twice equals r=2 once.
        let mut m = ImageBuffer::new(16, 16, 1).unwrap();
        m.set(3, 4, 0, 255);
        m.set(10, 12, 0, 255);
        m.set(8, 2, 0, 255);
        let twice = dilate(&dilate(&m, 1).unwrap(), 1).unwrap();
        let once = dilate(&m, 2).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn mean_color_scorer_prefers_matching_word() {
        let red = {
            let mut img = ImageBuffer::new(16, 16, 3).unwrap();
            for i in 0..16 * 16 {
                img.data_mut()[i * 3] = 255;
            }
            img
        };
        let scorer = MeanColorScorer;
        let on_red = scorer.score(&red, None, "a red fox").unwrap();
        let on_blue = scorer.score(&red, None, "a blue fox").unwrap();
        assert!(on_red > on_blue, "{on_red} vs {on_blue}");
        // Deterministic.
        assert_eq!(on_red, scorer.score(&red, None, "a red fox").unwrap());
    }

    #[test]
    fn scorer_registry() {
        assert!(scorer_by_id("mean-color").unwrap().is_some());
        assert!(scorer_by_id("none").unwrap().is_none());
        assert!(scorer_by_id("clip").is_err());
    }

    #[test]
    fn evaluate_pair_sentinel_without_scorer() {
        let a = checkerboard(32, 32, 8);
        let mask = {
            let mut m = ImageBuffer::new(32, 32, 1).unwrap();
            for y in 10..20 {
                for x in 10..20 {
                    m.set(x, y, 0, 255);
                }
            }
            m
        };
        let report = evaluate_pair(&a, &a, &mask, 2, None, "anything").unwrap();
        assert_eq!(report.bg_psnr, PSNR_CAP_DB);
        assert_eq!(report.canny_ssim, 1.0);
        assert_eq!(report.semantic_whole, SEMANTIC_SENTINEL);
        assert_eq!(report.semantic_scorer, "none");
    }
}
