//! Joint self-attention over concatenated text and vision tokens.
//!
//! The token order is `[text; vision]`, so the attention map over the
//! concatenation splits into four quadrants at index `n_text`:
//! text-to-text, text-to-vision, vision-to-text and vision-to-vision.
//! A controller can hook into each head at fixed points, in this order:
//!
//! 1. adjust pre-softmax scores (attribute re-weighting),
//! 2. softmax,
//! 3. adjust the post-softmax map (structure preservation),
//! 4. adjust the vision value tokens (color preservation).
//!
//! With no controller, or a controller whose hooks do nothing, the head
//! computes plain self-attention through exactly the same kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, softmax_rows, Tensor2};

/// Additive bias placed on pad-token key columns before softmax. Scaled
/// exponents stay far below f32 underflow, so pad keys attract exactly
/// zero attention.
pub const PAD_KEY_BIAS: f32 = -1.0e5;

/// Which classifier-free-guidance pass a forward belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pass {
    Cond,
    Uncond,
}

impl Pass {
    pub fn index(self) -> usize {
        match self {
            Pass::Cond => 0,
            Pass::Uncond => 1,
        }
    }
}

/// Position of one attention evaluation within a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnContext {
    pub step: usize,
    pub layer: usize,
    pub head: usize,
    pub pass: Pass,
}

/// One head's attention state at one (step, layer, pass).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub step: usize,
    pub layer: usize,
    pub head: usize,
    pub pass: Pass,
    /// Pre-softmax scores over the full concatenation, pad bias included.
    pub scores: Tensor2,
    /// Post-softmax attention map.
    pub map: Tensor2,
    /// Text value tokens, `n_text x d_head`.
    pub v_text: Tensor2,
    /// Vision value tokens, `n_vision x d_head`.
    pub v_vision: Tensor2,
}

impl AttentionRecord {
    /// Payload size in bytes when held in memory or serialized.
    pub fn payload_bytes(&self) -> usize {
        4 * (self.scores.data().len()
            + self.map.data().len()
            + self.v_text.data().len()
            + self.v_vision.data().len())
    }
}

/// Hook points a controller may implement. All defaults are no-ops, so
/// an empty impl behaves exactly like no controller at all.
pub trait AttentionController {
    /// Hook 1: runs on the raw scores before softmax.
    fn reweight_scores(
        &self,
        _ctx: &AttnContext,
        _scores: &mut Tensor2,
        _n_text: usize,
    ) -> Result<()> {
        Ok(())
    }

    /// Hook 3: runs on the post-softmax map.
    fn edit_map(&self, _ctx: &AttnContext, _map: &mut Tensor2, _n_text: usize) -> Result<()> {
        Ok(())
    }

    /// Hook 4: runs on the vision value tokens. Text values are never
    /// exposed to controllers.
    fn edit_vision_values(&self, _ctx: &AttnContext, _v_vision: &mut Tensor2) -> Result<()> {
        Ok(())
    }

    /// Whether this controller wants an [`AttentionRecord`] for `ctx`.
    fn wants_record(&self, _ctx: &AttnContext) -> bool {
        false
    }

    /// Receives the record when [`wants_record`](Self::wants_record)
    /// returned true. Recording is observation only: implementations
    /// must not influence the computation.
    fn record(&self, _ctx: &AttnContext, _record: AttentionRecord) -> Result<()> {
        Ok(())
    }
}

/// Per-head projection weights, each `d_model x d_head`.
#[derive(Debug, Clone)]
pub struct HeadWeights {
    pub wq: Tensor2,
    pub wk: Tensor2,
    pub wv: Tensor2,
}

fn concat_rows(top: &Tensor2, bottom: &Tensor2) -> Tensor2 {
    debug_assert_eq!(top.cols(), bottom.cols());
    let mut data = Vec::with_capacity((top.rows() + bottom.rows()) * top.cols());
    data.extend_from_slice(top.data());
    data.extend_from_slice(bottom.data());
    Tensor2::from_vec(top.rows() + bottom.rows(), top.cols(), data).unwrap()
}

/// One attention head given its projected queries, keys and values.
///
/// This is the shared kernel behind [`joint_attention`] and the block
/// forward pass: score, mask pads, run the controller hooks in order,
/// softmax, and contract with the (possibly edited) values. `v` is
/// owned because color preservation may rewrite its vision rows.
pub(crate) fn attention_head(
    q: &Tensor2,
    k: &Tensor2,
    mut v: Tensor2,
    ctx: &AttnContext,
    n_text: usize,
    n_real_text: usize,
    controller: Option<&dyn AttentionController>,
) -> Result<Tensor2> {
    let d_head = q.cols();
    let mut scores = matmul(q, &k.transposed())?;
    for r in 0..scores.rows() {
        let row = scores.row_mut(r);
        for v in row[n_real_text..n_text].iter_mut() {
            *v += PAD_KEY_BIAS;
        }
    }

    if let Some(c) = controller {
        c.reweight_scores(ctx, &mut scores, n_text)?;
    }

    let scale = 1.0 / (d_head as f32).sqrt();
    let mut map = softmax_rows(&scores, scale);

    if let Some(c) = controller {
        c.edit_map(ctx, &mut map, n_text)?;

        let mut v_vision = v.row_block(n_text, v.rows());
        c.edit_vision_values(ctx, &mut v_vision)?;
        for r in 0..v_vision.rows() {
            v.row_mut(n_text + r).copy_from_slice(v_vision.row(r));
        }

        if c.wants_record(ctx) {
            c.record(
                ctx,
                AttentionRecord {
                    step: ctx.step,
                    layer: ctx.layer,
                    head: ctx.head,
                    pass: ctx.pass,
                    scores: scores.clone(),
                    map: map.clone(),
                    v_text: v.row_block(0, n_text),
                    v_vision,
                },
            )?;
        }
    }

    matmul(&map, &v)
}

/// One attention head over the concatenated `[text; vision]` tokens.
///
/// `n_real_text` marks how many text tokens are not padding; pad key
/// columns receive [`PAD_KEY_BIAS`] so they attract no attention.
/// Returns the text-row and vision-row parts of the head output.
pub fn joint_attention(
    x_text: &Tensor2,
    x_vision: &Tensor2,
    weights: &HeadWeights,
    ctx: &AttnContext,
    n_real_text: usize,
    controller: Option<&dyn AttentionController>,
) -> Result<(Tensor2, Tensor2)> {
    if x_text.cols() != x_vision.cols() {
        return Err(Error::Shape(format!(
            "text width {} != vision width {}",
            x_text.cols(),
            x_vision.cols()
        )));
    }
    let n_text = x_text.rows();
    let x = concat_rows(x_text, x_vision);

    let q = matmul(&x, &weights.wq)?;
    let k = matmul(&x, &weights.wk)?;
    let v = matmul(&x, &weights.wv)?;

    let out = attention_head(&q, &k, v, ctx, n_text, n_real_text, controller)?;
    Ok((out.row_block(0, n_text), out.row_block(n_text, out.rows())))
}
