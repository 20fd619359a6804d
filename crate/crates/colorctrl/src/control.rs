//! Attention-control primitives for training-free color editing.
//!
//! The joint attention map over `[text; vision]` tokens splits into four
//! quadrants at index `n_text`; each quadrant has a distinct job here:
//!
//! - vision-to-vision carries scene structure and is transplanted from
//!   the source branch into the target branch (structure preservation);
//! - vision-to-text localizes the edit word and yields the edit mask;
//! - text-to-vision rows are scaled before softmax to modulate an
//!   attribute word's strength (re-weighting);
//! - text-to-text is never touched, and neither are text value tokens:
//!   both carry the prompt guidance.
//!
//! Color preservation copies source vision value tokens into the target
//! outside the mask, freezing colors of non-edited regions.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::model::{AttentionRecord, ModelConfig};
use crate::tensor::Tensor2;

/// Semantic view of the four quadrants of a joint attention map.
///
/// Token order is `[text; vision]`, so text rows and columns come first.
/// The accessors name blocks by their query/key modalities, which keeps
/// any drawing order out of the code.
#[derive(Debug, Clone, Copy)]
pub struct QuadrantView<'a> {
    map: &'a Tensor2,
    n_text: usize,
}

impl<'a> QuadrantView<'a> {
    pub fn new(map: &'a Tensor2, n_text: usize) -> Result<Self> {
        if map.rows() != map.cols() {
            return Err(Error::Control(format!(
                "attention map {}x{} is not square",
                map.rows(),
                map.cols()
            )));
        }
        if n_text >= map.rows() {
            return Err(Error::Control(format!(
                "quadrant boundary {n_text} outside map side {}",
                map.rows()
            )));
        }
        Ok(Self { map, n_text })
    }

    pub fn n_text(&self) -> usize {
        self.n_text
    }

    pub fn n_vision(&self) -> usize {
        self.map.rows() - self.n_text
    }

    /// Text-query x text-key block.
    pub fn tt(&self) -> Tensor2 {
        self.block(0, self.n_text, 0, self.n_text)
    }

    /// Text-query x vision-key block.
    pub fn tv(&self) -> Tensor2 {
        self.block(0, self.n_text, self.n_text, self.map.cols())
    }

    /// Vision-query x text-key block.
    pub fn vt(&self) -> Tensor2 {
        self.block(self.n_text, self.map.rows(), 0, self.n_text)
    }

    /// Vision-query x vision-key block.
    pub fn vv(&self) -> Tensor2 {
        self.block(self.n_text, self.map.rows(), self.n_text, self.map.cols())
    }

    fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Tensor2 {
        Tensor2::from_fn(r1 - r0, c1 - c0, |r, c| self.map.get(r0 + r, c0 + c))
    }
}

/// Binary edit mask over vision tokens plus its pixel-space upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct EditMask {
    token_mask: Vec<bool>,
    pixel_mask: ImageBuffer,
    epsilon_used: f32,
}

impl EditMask {
    /// Build from a token mask; the pixel raster is always the patchwise
    /// replication of the token mask.
    pub fn from_token_mask(
        token_mask: Vec<bool>,
        epsilon_used: f32,
        config: &ModelConfig,
    ) -> Result<Self> {
        if token_mask.len() != config.n_vision() {
            return Err(Error::Shape(format!(
                "token mask length {} != {} vision tokens",
                token_mask.len(),
                config.n_vision()
            )));
        }
        let pixel_mask = upsample_mask(&token_mask, config);
        Ok(Self {
            token_mask,
            pixel_mask,
            epsilon_used,
        })
    }

    pub fn token_mask(&self) -> &[bool] {
        &self.token_mask
    }

    /// 0/255 grayscale raster at image resolution.
    pub fn pixel_mask(&self) -> &ImageBuffer {
        &self.pixel_mask
    }

    pub fn epsilon_used(&self) -> f32 {
        self.epsilon_used
    }

    /// Number of masked-in (edited) tokens.
    pub fn popcount(&self) -> usize {
        self.token_mask.iter().filter(|&&b| b).count()
    }
}

/// Transplant the source map's vision-to-vision quadrant into the target
/// map. All other quadrants stay the target's; nothing is renormalized.
/// Inputs are post-softmax maps.
pub fn structure_preserve(m_src: &Tensor2, m_tgt: &Tensor2, n_text: usize) -> Result<Tensor2> {
    let mut out = m_tgt.clone();
    structure_preserve_apply(m_src, &mut out, n_text)?;
    Ok(out)
}

/// In-place form of [`structure_preserve`], used by the controller hook.
pub fn structure_preserve_apply(m_src: &Tensor2, m_tgt: &mut Tensor2, n_text: usize) -> Result<()> {
    if m_src.rows() != m_tgt.rows() || m_src.cols() != m_tgt.cols() {
        return Err(Error::Control(format!(
            "map shapes differ: {}x{} vs {}x{}",
            m_src.rows(),
            m_src.cols(),
            m_tgt.rows(),
            m_tgt.cols()
        )));
    }
    QuadrantView::new(m_src, n_text)?;
    for r in n_text..m_src.rows() {
        let src = &m_src.row(r)[n_text..];
        m_tgt.row_mut(r)[n_text..].copy_from_slice(src);
    }
    Ok(())
}

/// Per-vision-token mask scores, min-max normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskScores {
    pub scores: Vec<f32>,
    /// Set when every raw score was equal and normalization collapsed;
    /// the scores are then all zero.
    pub degenerate: bool,
}

/// Aggregate vision-to-text attention into per-vision-token scores.
///
/// `score_i` is the mean of `map.vt[i, t]` over all given records and
/// all token columns `t` in `token_cols`, accumulated flat in f64, then
/// min-max normalized. Only vision-to-text parts enter: text-to-vision
/// localizes poorly and is deliberately not averaged in.
pub fn accumulate_mask_scores<'a, I>(
    records: I,
    token_cols: &[usize],
    n_text: usize,
    n_vision: usize,
) -> Result<MaskScores>
where
    I: IntoIterator<Item = &'a AttentionRecord>,
{
    if token_cols.is_empty() {
        return Err(Error::Input("empty edit-word token span".into()));
    }
    if let Some(&bad) = token_cols.iter().find(|&&t| t >= n_text) {
        return Err(Error::Input(format!(
            "token column {bad} outside text range 0..{n_text}"
        )));
    }
    let mut acc = vec![0.0f64; n_vision];
    let mut count = 0u64;
    for record in records {
        let map = &record.map;
        if map.rows() != n_text + n_vision {
            return Err(Error::Control(format!(
                "record map side {} != {}",
                map.rows(),
                n_text + n_vision
            )));
        }
        for (i, slot) in acc.iter_mut().enumerate() {
            let row = map.row(n_text + i);
            for &t in token_cols {
                *slot += row[t] as f64;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Input("no attention records to aggregate".into()));
    }
    let denom = (count * token_cols.len() as u64) as f64;
    let means: Vec<f64> = acc.iter().map(|&s| s / denom).collect();
    let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(MaskScores {
            scores: vec![0.0; n_vision],
            degenerate: true,
        });
    }
    let range = max - min;
    Ok(MaskScores {
        scores: means.iter().map(|&m| ((m - min) / range) as f32).collect(),
        degenerate: false,
    })
}

/// Threshold normalized scores at `epsilon` into an [`EditMask`].
pub fn binarize_mask(scores: &[f32], epsilon: f32, config: &ModelConfig) -> Result<EditMask> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Input(format!("epsilon {epsilon} outside (0, 1)")));
    }
    if scores.len() != config.n_vision() {
        return Err(Error::Shape(format!(
            "{} scores != {} vision tokens",
            scores.len(),
            config.n_vision()
        )));
    }
    let token_mask = scores.iter().map(|&s| s >= epsilon).collect();
    EditMask::from_token_mask(token_mask, epsilon, config)
}

/// Nearest-neighbor upsampling of a token mask through the patch grid:
/// each token paints a `patch x patch` pixel block (0 or 255).
pub fn upsample_mask(token_mask: &[bool], config: &ModelConfig) -> ImageBuffer {
    let g = config.token_grid();
    let p = config.patch;
    let size = config.image_size;
    let mut out = ImageBuffer::new(size, size, 1).unwrap();
    for (tok, &on) in token_mask.iter().enumerate() {
        if !on {
            continue;
        }
        let (gy, gx) = (tok / g, tok % g);
        for py in 0..p {
            for px in 0..p {
                out.set(gx * p + px, gy * p + py, 0, 255);
            }
        }
    }
    out
}

/// Keep the target's vision value rows inside the mask, the source's
/// outside it. Text value tokens never pass through here.
pub fn color_preserve(
    v_src_vision: &Tensor2,
    v_tgt_vision: &Tensor2,
    mask: &EditMask,
) -> Result<Tensor2> {
    let mut out = v_tgt_vision.clone();
    color_preserve_apply(v_src_vision, &mut out, mask)?;
    Ok(out)
}

/// In-place form of [`color_preserve`], used by the controller hook.
pub fn color_preserve_apply(
    v_src_vision: &Tensor2,
    v_tgt_vision: &mut Tensor2,
    mask: &EditMask,
) -> Result<()> {
    if v_src_vision.rows() != v_tgt_vision.rows() || v_src_vision.cols() != v_tgt_vision.cols() {
        return Err(Error::Shape(format!(
            "value token shapes differ: {}x{} vs {}x{}",
            v_src_vision.rows(),
            v_src_vision.cols(),
            v_tgt_vision.rows(),
            v_tgt_vision.cols()
        )));
    }
    if v_src_vision.rows() != mask.token_mask().len() {
        return Err(Error::Shape(format!(
            "{} value rows != {} mask tokens",
            v_src_vision.rows(),
            mask.token_mask().len()
        )));
    }
    for (i, &edited) in mask.token_mask().iter().enumerate() {
        if !edited {
            v_tgt_vision.row_mut(i).copy_from_slice(v_src_vision.row(i));
        }
    }
    Ok(())
}

/// Scale the text-to-vision entries of selected text-query rows before
/// softmax. All other entries are untouched; softmax happens downstream,
/// so every row still sums to one afterwards.
pub fn reweight_scores(
    scores: &Tensor2,
    rows: &[usize],
    scale: f32,
    n_text: usize,
) -> Result<Tensor2> {
    let mut out = scores.clone();
    reweight_scores_apply(&mut out, rows, scale, n_text)?;
    Ok(out)
}

/// In-place form of [`reweight_scores`], used by the controller hook.
pub fn reweight_scores_apply(
    scores: &mut Tensor2,
    rows: &[usize],
    scale: f32,
    n_text: usize,
) -> Result<()> {
    if scale < 0.0 {
        return Err(Error::Input(format!("re-weight scale {scale} < 0")));
    }
    if n_text > scores.cols() {
        return Err(Error::Control(format!(
            "text boundary {n_text} outside score width {}",
            scores.cols()
        )));
    }
    for &r in rows {
        if r >= n_text {
            return Err(Error::Input(format!(
                "re-weight row {r} outside text range 0..{n_text}"
            )));
        }
        for v in scores.row_mut(r)[n_text..].iter_mut() {
            *v *= scale;
        }
    }
    Ok(())
}

#[cfg(test)]
// Oracles below stay in plain scalar-loop style on purpose.
#[allow(clippy::needless_range_loop, clippy::manual_is_multiple_of)]
mod tests {
    use super::*;
    use crate::model::Pass;
    use crate::tensor::{seeded_normal, softmax_rows, Rng};
    use proptest::prelude::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            image_size: 4,
            patch: 2,
            n_text: 2,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            init_seed: 0,
        }
    }

    fn random_map(rng: &mut Rng, side: usize) -> Tensor2 {
        let raw = Tensor2::from_vec(side, side, seeded_normal(rng, side * side, 0.0, 1.0)).unwrap();
        softmax_rows(&raw, 1.0)
    }

    fn record_with_map(map: Tensor2) -> AttentionRecord {
        AttentionRecord {
            step: 0,
            layer: 0,
            head: 0,
            pass: Pass::Cond,
            scores: map.clone(),
            map,
            v_text: Tensor2::zeros(1, 1),
            v_vision: Tensor2::zeros(1, 1),
        }
    }

    #[test]
    fn quadrants_tile_the_map() {
        let mut rng = Rng::new(1);
        let map = random_map(&mut rng, 6);
        let q = QuadrantView::new(&map, 2).unwrap();
        let (tt, tv, vt, vv) = (q.tt(), q.tv(), q.vt(), q.vv());
        let mut rebuilt = Tensor2::zeros(6, 6);
        for r in 0..6 {
            for c in 0..6 {
                let v = match (r < 2, c < 2) {
                    (true, true) => tt.get(r, c),
                    (true, false) => tv.get(r, c - 2),
                    (false, true) => vt.get(r - 2, c),
                    (false, false) => vv.get(r - 2, c - 2),
                };
                rebuilt.set(r, c, v);
            }
        }
        assert_eq!(rebuilt, map);
    }

    #[test]
    fn structure_preserve_identity_when_maps_equal() {
        let mut rng = Rng::new(2);
        let m = random_map(&mut rng, 6);
        let out = structure_preserve(&m, &m, 2).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn structure_preserve_hand_built_two_by_two() {
        // 2 text + 2 vision tokens: only the lower-right 2x2 block comes
        // from the source map.
        #[rustfmt::skip]
        let m_src = Tensor2::from_vec(4, 4, vec![
            0.11, 0.12, 0.13, 0.14,
            0.21, 0.22, 0.23, 0.24,
            0.31, 0.32, 0.33, 0.34,
            0.41, 0.42, 0.43, 0.44,
        ])
        .unwrap();
        #[rustfmt::skip]
        let m_tgt = Tensor2::from_vec(4, 4, vec![
            0.51, 0.52, 0.53, 0.54,
            0.61, 0.62, 0.63, 0.64,
            0.71, 0.72, 0.73, 0.74,
            0.81, 0.82, 0.83, 0.84,
        ])
        .unwrap();
        #[rustfmt::skip]
        let want = Tensor2::from_vec(4, 4, vec![
            0.51, 0.52, 0.53, 0.54,
            0.61, 0.62, 0.63, 0.64,
            0.71, 0.72, 0.33, 0.34,
            0.81, 0.82, 0.43, 0.44,
        ])
        .unwrap();
        assert_eq!(structure_preserve(&m_src, &m_tgt, 2).unwrap(), want);
    }

    #[test]
    fn structure_preserve_matches_quadrant_assembly_oracle() {
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let side = 4 + (rng.next_u64() % 5) as usize; // 4..=8
            let n_text = 1 + (rng.next_u64() % (side as u64 - 1)) as usize;
            let m_src = random_map(&mut rng, side);
            let m_tgt = random_map(&mut rng, side);
            let got = structure_preserve(&m_src, &m_tgt, n_text).unwrap();
            // Brute-force assembly: pick per element from the right map.
            let want = Tensor2::from_fn(side, side, |r, c| {
                if r >= n_text && c >= n_text {
                    m_src.get(r, c)
                } else {
                    m_tgt.get(r, c)
                }
            });
            assert_eq!(got, want);
        }
    }

    #[test]
    fn structure_preserve_never_touches_tt() {
        let mut rng = Rng::new(4);
        let m_src = random_map(&mut rng, 6);
        let m_tgt = random_map(&mut rng, 6);
        let out = structure_preserve(&m_src, &m_tgt, 3).unwrap();
        let out_q = QuadrantView::new(&out, 3).unwrap();
        let tgt_q = QuadrantView::new(&m_tgt, 3).unwrap();
        assert_eq!(out_q.tt(), tgt_q.tt());
        assert_eq!(out_q.tv(), tgt_q.tv());
        assert_eq!(out_q.vt(), tgt_q.vt());
        let src_q = QuadrantView::new(&m_src, 3).unwrap();
        assert_eq!(out_q.vv(), src_q.vv());
    }

    #[test]
    fn structure_preserve_is_idempotent() {
        let mut rng = Rng::new(5);
        let m_src = random_map(&mut rng, 6);
        let m_tgt = random_map(&mut rng, 6);
        let once = structure_preserve(&m_src, &m_tgt, 2).unwrap();
        let twice = structure_preserve(&m_src, &once, 2).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn structure_preserve_rejects_shape_mismatch() {
        let a = Tensor2::zeros(4, 4);
        let b = Tensor2::zeros(6, 6);
        assert!(structure_preserve(&a, &b, 2).is_err());
        assert!(structure_preserve(&a, &a, 4).is_err());
    }

    #[test]
    fn mask_scores_hand_computed_min_max() {
        // Single record, single token column: vt column [0.1, 0.4, 0.4, 0.9].
        let n_text = 1;
        let n_vision = 4;
        let mut map = Tensor2::zeros(5, 5);
        for (i, v) in [0.1f32, 0.4, 0.4, 0.9].iter().enumerate() {
            map.set(n_text + i, 0, *v);
        }
        let rec = record_with_map(map);
        let got = accumulate_mask_scores([&rec], &[0], n_text, n_vision).unwrap();
        assert!(!got.degenerate);
        let want = [0.0f32, 0.375, 0.375, 1.0];
        for (g, w) in got.scores.iter().zip(&want) {
            assert!((g - w).abs() < 1e-7, "{g} vs {w}");
        }
    }

    #[test]
    fn mask_scores_degenerate_uniform_column() {
        let n_text = 1;
        let n_vision = 4;
        let mut map = Tensor2::zeros(5, 5);
        for i in 0..4 {
            map.set(n_text + i, 0, 0.25);
        }
        let rec = record_with_map(map);
        let got = accumulate_mask_scores([&rec], &[0], n_text, n_vision).unwrap();
        assert!(got.degenerate);
        assert!(got.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn mask_scores_flat_mean_equals_grouped_mean() {
        // 2 steps x 2 layers x 2 heads of random maps; grouped averaging
        // must agree with the flat mean because all group sizes are equal.
        let mut rng = Rng::new(6);
        let n_text = 2;
        let n_vision = 4;
        let records: Vec<AttentionRecord> = (0..8)
            .map(|i| {
                let mut r = record_with_map(random_map(&mut rng, 6));
                r.step = i / 4;
                r.layer = (i / 2) % 2;
                r.head = i % 2;
                r
            })
            .collect();
        let flat = accumulate_mask_scores(records.iter(), &[0, 1], n_text, n_vision).unwrap();

        // Grouped oracle in f64: mean over heads, then layers, then steps.
        let mut grouped = vec![0.0f64; n_vision];
        for step in 0..2 {
            let mut per_step = vec![0.0f64; n_vision];
            for layer in 0..2 {
                let mut per_layer = vec![0.0f64; n_vision];
                for head in 0..2 {
                    let rec = records
                        .iter()
                        .find(|r| r.step == step && r.layer == layer && r.head == head)
                        .unwrap();
                    for i in 0..n_vision {
                        let row = rec.map.row(n_text + i);
                        per_layer[i] += ((row[0] + row[1]) / 2.0) as f64;
                    }
                }
                for i in 0..n_vision {
                    per_step[i] += per_layer[i] / 2.0;
                }
            }
            for i in 0..n_vision {
                grouped[i] += per_step[i] / 2.0;
            }
        }
        let min = grouped.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = grouped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, &g) in grouped.iter().enumerate() {
            let want = ((g - min) / (max - min)) as f32;
            assert!((flat.scores[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_scores_rejects_empty_span() {
        let rec = record_with_map(Tensor2::zeros(5, 5));
        assert!(accumulate_mask_scores([&rec], &[], 1, 4).is_err());
    }

    #[test]
    fn binarize_thresholds_by_hand() {
        let config = small_config();
        let scores = [0.0f32, 0.375, 0.375, 1.0];
        let mask = binarize_mask(&scores, 0.1, &config).unwrap();
        assert_eq!(mask.token_mask(), &[false, true, true, true]);
        assert_eq!(mask.epsilon_used(), 0.1);
    }

    #[test]
    fn binarize_extreme_epsilon_keeps_argmax() {
        let config = small_config();
        let scores = [0.0f32, 0.2, 0.7, 1.0];
        let mask = binarize_mask(&scores, 0.999, &config).unwrap();
        assert_eq!(mask.token_mask(), &[false, false, false, true]);
    }

    #[test]
    fn binarize_rejects_bad_epsilon() {
        let config = small_config();
        let scores = [0.0f32; 4];
        assert!(binarize_mask(&scores, 0.0, &config).is_err());
        assert!(binarize_mask(&scores, 1.0, &config).is_err());
    }

    #[test]
    fn upsample_paints_patch_blocks() {
        let config = small_config(); // 2x2 token grid, patch 2, 4x4 pixels
        let raster = upsample_mask(&[true, false, false, true], &config);
        for y in 0..4 {
            for x in 0..4 {
                let on_diag = (y < 2 && x < 2) || (y >= 2 && x >= 2);
                assert_eq!(raster.get(x, y, 0), if on_diag { 255 } else { 0 });
            }
        }
    }

    #[test]
    fn upsample_all_ones() {
        let config = small_config();
        let raster = upsample_mask(&[true; 4], &config);
        assert!(raster.data().iter().all(|&v| v == 255));
    }

    #[test]
    fn color_preserve_all_ones_and_all_zeros() {
        let config = small_config();
        let mut rng = Rng::new(8);
        let v_src = Tensor2::from_vec(4, 3, seeded_normal(&mut rng, 12, 0.0, 1.0)).unwrap();
        let v_tgt = Tensor2::from_vec(4, 3, seeded_normal(&mut rng, 12, 0.0, 1.0)).unwrap();

        let all_on = EditMask::from_token_mask(vec![true; 4], 0.1, &config).unwrap();
        assert_eq!(color_preserve(&v_src, &v_tgt, &all_on).unwrap(), v_tgt);

        let all_off = EditMask::from_token_mask(vec![false; 4], 0.1, &config).unwrap();
        assert_eq!(color_preserve(&v_src, &v_tgt, &all_off).unwrap(), v_src);
    }

    #[test]
    fn color_preserve_interleaves_rows_per_oracle() {
        let config = small_config();
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let v_src = Tensor2::from_vec(4, 3, seeded_normal(&mut rng, 12, 0.0, 1.0)).unwrap();
            let v_tgt = Tensor2::from_vec(4, 3, seeded_normal(&mut rng, 12, 0.0, 1.0)).unwrap();
            let bits: Vec<bool> = (0..4).map(|_| rng.next_u64() % 2 == 1).collect();
            let mask = EditMask::from_token_mask(bits.clone(), 0.1, &config).unwrap();
            let got = color_preserve(&v_src, &v_tgt, &mask).unwrap();
            // Brute-force row select.
            let want = Tensor2::from_fn(4, 3, |r, c| {
                if bits[r] {
                    v_tgt.get(r, c)
                } else {
                    v_src.get(r, c)
                }
            });
            assert_eq!(got, want);
        }
    }

    #[test]
    fn color_preserve_self_is_identity() {
        let config = small_config();
        let mut rng = Rng::new(10);
        let v = Tensor2::from_vec(4, 3, seeded_normal(&mut rng, 12, 0.0, 1.0)).unwrap();
        let mask = EditMask::from_token_mask(vec![true, false, true, false], 0.1, &config).unwrap();
        assert_eq!(color_preserve(&v, &v, &mask).unwrap(), v);
    }

    #[test]
    fn reweight_scale_one_is_bitwise_identity() {
        let mut rng = Rng::new(11);
        let scores = Tensor2::from_vec(6, 6, seeded_normal(&mut rng, 36, 0.0, 2.0)).unwrap();
        let out = reweight_scores(&scores, &[0, 1], 1.0, 2).unwrap();
        assert_eq!(out, scores);
        let empty = reweight_scores(&scores, &[], 3.0, 2).unwrap();
        assert_eq!(empty, scores);
    }

    #[test]
    fn reweight_keeps_rows_stochastic_after_softmax() {
        let mut rng = Rng::new(12);
        for &scale in &[0.0f32, 0.25, 0.5, 1.0, 2.0, 4.0] {
            let scores = Tensor2::from_vec(6, 6, seeded_normal(&mut rng, 36, 0.0, 2.0)).unwrap();
            let rw = reweight_scores(&scores, &[0, 1], scale, 2).unwrap();
            let map = softmax_rows(&rw, 0.5);
            for r in 0..map.rows() {
                let sum: f32 = map.row(r).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-5, "scale {scale} row {r}: {sum}");
            }
        }
    }

    #[test]
    fn reweight_shifts_vision_mass_monotonically() {
        // Fixed positive-score row: more scale, more post-softmax mass on
        // vision columns.
        let scores = Tensor2::from_vec(
            2,
            6,
            vec![
                0.3, -0.1, 0.8, 0.6, 0.9, 0.4, // selected text row, positive vision scores
                0.2, 0.1, -0.3, 0.0, 0.2, -0.1,
            ],
        )
        .unwrap();
        let mass = |scale: f32| -> f32 {
            let rw = reweight_scores(&scores, &[0], scale, 2).unwrap();
            let map = softmax_rows(&rw, 0.5);
            map.row(0)[2..].iter().sum()
        };
        let (m_half, m_one, m_two) = (mass(0.5), mass(1.0), mass(2.0));
        assert!(m_half < m_one && m_one < m_two, "{m_half} {m_one} {m_two}");
    }

    #[test]
    fn reweight_rejects_out_of_range_row() {
        let scores = Tensor2::zeros(6, 6);
        assert!(reweight_scores(&scores, &[2], 2.0, 2).is_err());
        assert!(reweight_scores(&scores, &[0], -1.0, 2).is_err());
    }

    /// Post-softmax scaling foil in the style prior work used: scaling
    /// map entries after softmax breaks row-stochasticity.
    fn reweight_post_softmax_foil(
        map: &Tensor2,
        rows: &[usize],
        scale: f32,
        n_text: usize,
    ) -> Tensor2 {
        let mut out = map.clone();
        for &r in rows {
            for v in out.row_mut(r)[n_text..].iter_mut() {
                *v *= scale;
            }
        }
        out
    }

    #[test]
    fn post_softmax_foil_breaks_row_sums() {
        let mut rng = Rng::new(13);
        let scores = Tensor2::from_vec(6, 6, seeded_normal(&mut rng, 36, 0.0, 2.0)).unwrap();
        let map = softmax_rows(&scores, 0.5);
        let foiled = reweight_post_softmax_foil(&map, &[0, 1], 2.0, 2);
        let worst = (0..foiled.rows())
            .map(|r| (foiled.row(r).iter().sum::<f32>() - 1.0).abs())
            .fold(0.0f32, f32::max);
        assert!(worst > 0.05, "worst row-sum violation {worst}");
    }

    fn downsample_by_patch(raster: &ImageBuffer, config: &ModelConfig) -> Vec<bool> {
        let g = config.token_grid();
        let p = config.patch;
        (0..g * g)
            .map(|tok| {
                let (gy, gx) = (tok / g, tok % g);
                let mut vals = Vec::new();
                for py in 0..p {
                    for px in 0..p {
                        vals.push(raster.get(gx * p + px, gy * p + py, 0));
                    }
                }
                assert!(vals.iter().all(|&v| v == vals[0]), "patch not constant");
                vals[0] == 255
            })
            .collect()
    }

    proptest! {
        #[test]
        fn mask_monotone_in_epsilon(seed in 0u64..1000) {
            let config = ModelConfig::default();
            let mut rng = Rng::new(seed);
            let mut scores: Vec<f32> = (0..config.n_vision()).map(|_| rng.next_f32()).collect();
            // Pin the normalization contract.
            scores[0] = 0.0;
            scores[1] = 1.0;
            let loose = binarize_mask(&scores, 0.05, &config).unwrap();
            let mid = binarize_mask(&scores, 0.1, &config).unwrap();
            let tight = binarize_mask(&scores, 0.3, &config).unwrap();
            for i in 0..config.n_vision() {
                prop_assert!(!mid.token_mask()[i] || loose.token_mask()[i]);
                prop_assert!(!tight.token_mask()[i] || mid.token_mask()[i]);
            }
        }

        #[test]
        fn mask_round_trips_through_downsample(seed in 0u64..1000) {
            let config = ModelConfig::default();
            let mut rng = Rng::new(seed);
            let bits: Vec<bool> = (0..config.n_vision()).map(|_| rng.next_u64() % 2 == 1).collect();
            let raster = upsample_mask(&bits, &config);
            prop_assert_eq!(downsample_by_patch(&raster, &config), bits);
        }
    }
}
