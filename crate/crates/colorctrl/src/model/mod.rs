//! A miniature multi-modal diffusion transformer.
//!
//! Text and vision tokens are embedded, concatenated in `[text; vision]`
//! order and processed by a stack of identical blocks: adaptive
//! layer-scale modulation from a sinusoidal timestep embedding, joint
//! self-attention over the concatenation, and a two-layer GELU MLP, all
//! wrapped in gated residuals. The output head reads the vision tokens
//! back into a pixel-space velocity field of the input's shape.
//!
//! Weights are drawn once from a seeded generator and never trained; the
//! model exists to give the attention-control layer a deterministic,
//! desk-scale host whose joint attention is quadrant-addressable.

mod attention;
mod tokenizer;

use attention::attention_head;
pub use attention::{
    joint_attention, AttentionController, AttentionRecord, AttnContext, HeadWeights, Pass,
    PAD_KEY_BIAS,
};
pub use tokenizer::{tokenize, TokenSequence, PAD_ID, VOCAB_SIZE};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::tensor::{digest_f32, fnv1a, matmul, seeded_normal, Rng, Tensor2};

const LN_EPS: f64 = 1e-6;

/// Base init: normal, mean 0, std 0.02.
const INIT_STD: f32 = 0.02;

/// Per-tensor gains over the base std. A random-weight model at this
/// scale needs them: with a flat 0.02 init the attention logits span
/// only ~1e-2, every map is near uniform and prompt changes move
/// outputs by less than one 8-bit quantization step. The gains put the
/// post-softmax maps and the velocity field at O(1) so text conditioning
/// and the attention-control hooks have visible effect.
const GAIN_QK: f32 = 9.0;
const GAIN_V: f32 = 5.0;
const GAIN_OUT: f32 = 3.0;
const GAIN_MOD: f32 = 5.0;
const GAIN_MLP: f32 = 5.0;
const GAIN_HEAD: f32 = 12.0;

/// MLP hidden width multiplier.
const MLP_RATIO: usize = 2;

/// Shape parameters of the toy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square image side in pixels; channels are always 3.
    pub image_size: usize,
    /// Patch side; `(image_size/patch)^2` vision tokens.
    pub patch: usize,
    /// Fixed text sequence length (prompts are padded or truncated).
    pub n_text: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Seed for the weight initialization stream.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch: 2,
            n_text: 16,
            d_model: 64,
            n_heads: 4,
            n_layers: 6,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn n_vision(&self) -> usize {
        let g = self.image_size / self.patch;
        g * g
    }

    pub fn tokens_total(&self) -> usize {
        self.n_text + self.n_vision()
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Side of the vision token grid.
    pub fn token_grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.n_text == 0 {
            return Err(Error::Input("model dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Input(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.patch == 0 || !self.image_size.is_multiple_of(self.patch) {
            return Err(Error::Input(format!(
                "image size {} not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        Ok(())
    }

    /// Digest over every field, used to pair caches with models.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(7 * 8);
        for v in [
            self.image_size as u64,
            self.patch as u64,
            self.n_text as u64,
            self.d_model as u64,
            self.n_heads as u64,
            self.n_layers as u64,
            self.init_seed,
        ] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fnv1a(&bytes)
    }
}

/// Pixel-space state: a square RGB field of f32 values (interleaved
/// channels). Used both for the latent trajectory and for velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    size: usize,
    data: Vec<f32>,
}

impl Latent {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size * 3],
        }
    }

    pub fn from_vec(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != size * size * 3 {
            return Err(Error::Shape(format!(
                "latent data length {} != {size}x{size}x3",
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn digest(&self) -> u64 {
        digest_f32(&self.data)
    }

    /// Clamp to `[0,1]` and quantize to 8-bit RGB.
    pub fn decode(&self) -> ImageBuffer {
        let bytes = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.size, self.size, 3, bytes).unwrap()
    }
}

/// One transformer block's parameters.
///
/// The per-head projections are also kept concatenated (`d_model x
/// d_model`) so the forward pass projects all heads in one pass; column
/// slices of the fused product equal the per-head products bitwise.
struct BlockWeights {
    /// `d_model x 6*d_model`: shift/scale/gate for attention and MLP.
    mod_w: Tensor2,
    heads: Vec<HeadWeights>,
    wq_full: Tensor2,
    wk_full: Tensor2,
    wv_full: Tensor2,
    wo: Tensor2,
    w_mlp1: Tensor2,
    w_mlp2: Tensor2,
}

fn concat_cols(parts: &[&Tensor2]) -> Tensor2 {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor2::zeros(rows, cols);
    for r in 0..rows {
        let row = out.row_mut(r);
        let mut at = 0;
        for p in parts {
            row[at..at + p.cols()].copy_from_slice(p.row(r));
            at += p.cols();
        }
    }
    out
}

/// The toy MM-DiT. Weights are immutable after construction; the model
/// is shareable across threads and a forward pass is bitwise
/// deterministic in its inputs.
pub struct Model {
    config: ModelConfig,
    text_embed: Tensor2,
    pos_text: Tensor2,
    patch_embed: Tensor2,
    pos_vision: Tensor2,
    blocks: Vec<BlockWeights>,
    w_head: Tensor2,
    forward_count: AtomicU64,
}

impl Model {
    /// Build a model with weights drawn from `config.init_seed`
    /// (normal, mean 0, std 0.02, one fixed draw order).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.init_seed);
        let mut draw = |rows: usize, cols: usize, gain: f32| {
            Tensor2::from_vec(
                rows,
                cols,
                seeded_normal(&mut rng, rows * cols, 0.0, gain * INIT_STD),
            )
            .unwrap()
        };
        let d = config.d_model;
        let text_embed = draw(VOCAB_SIZE, d, 1.0);
        let pos_text = draw(config.n_text, d, 1.0);
        let patch_embed = draw(config.patch_dim(), d, 1.0);
        let pos_vision = draw(config.n_vision(), d, 1.0);
        let blocks = (0..config.n_layers)
            .map(|_| {
                let mod_w = draw(d, 6 * d, GAIN_MOD);
                let heads: Vec<HeadWeights> = (0..config.n_heads)
                    .map(|_| HeadWeights {
                        wq: draw(d, config.d_head(), GAIN_QK),
                        wk: draw(d, config.d_head(), GAIN_QK),
                        wv: draw(d, config.d_head(), GAIN_V),
                    })
                    .collect();
                let wq_full = concat_cols(&heads.iter().map(|h| &h.wq).collect::<Vec<_>>());
                let wk_full = concat_cols(&heads.iter().map(|h| &h.wk).collect::<Vec<_>>());
                let wv_full = concat_cols(&heads.iter().map(|h| &h.wv).collect::<Vec<_>>());
                BlockWeights {
                    mod_w,
                    heads,
                    wq_full,
                    wk_full,
                    wv_full,
                    wo: draw(d, d, GAIN_OUT),
                    w_mlp1: draw(d, MLP_RATIO * d, GAIN_MLP),
                    w_mlp2: draw(MLP_RATIO * d, d, GAIN_MLP),
                }
            })
            .collect();
        let w_head = draw(d, config.patch_dim(), GAIN_HEAD);
        Ok(Self {
            config,
            text_embed,
            pos_text,
            patch_embed,
            pos_vision,
            blocks,
            w_head,
            forward_count: AtomicU64::new(0),
        })
    }

    /// All-zero weights; the residual-only path. Used to pin down the
    /// data flow in tests.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let z = Tensor2::zeros(d, d);
        let blocks = (0..config.n_layers)
            .map(|_| BlockWeights {
                mod_w: Tensor2::zeros(d, 6 * d),
                heads: (0..config.n_heads)
                    .map(|_| HeadWeights {
                        wq: Tensor2::zeros(d, config.d_head()),
                        wk: Tensor2::zeros(d, config.d_head()),
                        wv: Tensor2::zeros(d, config.d_head()),
                    })
                    .collect(),
                wq_full: z.clone(),
                wk_full: z.clone(),
                wv_full: z.clone(),
                wo: z.clone(),
                w_mlp1: Tensor2::zeros(d, MLP_RATIO * d),
                w_mlp2: Tensor2::zeros(MLP_RATIO * d, d),
            })
            .collect();
        Ok(Self {
            config,
            text_embed: Tensor2::zeros(VOCAB_SIZE, d),
            pos_text: Tensor2::zeros(config.n_text, d),
            patch_embed: Tensor2::zeros(config.patch_dim(), d),
            pos_vision: Tensor2::zeros(config.n_vision(), d),
            blocks,
            w_head: Tensor2::zeros(d, config.patch_dim()),
            forward_count: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of forward passes executed so far.
    pub fn forward_count(&self) -> u64 {
        self.forward_count.load(Ordering::Relaxed)
    }

    /// Projection weights of one attention head.
    pub fn head_weights(&self, layer: usize, head: usize) -> &HeadWeights {
        &self.blocks[layer].heads[head]
    }

    /// Rearrange a latent into `n_vision x patch_dim` rows, patch grid
    /// row-major, features ordered (py, px, channel).
    pub fn patchify(&self, x: &Latent) -> Tensor2 {
        let g = self.config.token_grid();
        let p = self.config.patch;
        let size = self.config.image_size;
        Tensor2::from_fn(g * g, self.config.patch_dim(), |tok, feat| {
            let (gy, gx) = (tok / g, tok % g);
            let py = feat / (p * 3);
            let px = feat % (p * 3) / 3;
            let c = feat % 3;
            x.data[((gy * p + py) * size + gx * p + px) * 3 + c]
        })
    }

    /// Inverse of [`patchify`](Self::patchify).
    pub fn unpatchify(&self, t: &Tensor2) -> Latent {
        let g = self.config.token_grid();
        let p = self.config.patch;
        let size = self.config.image_size;
        let mut out = Latent::zeros(size);
        for tok in 0..g * g {
            let (gy, gx) = (tok / g, tok % g);
            let row = t.row(tok);
            for (feat, &v) in row.iter().enumerate() {
                let py = feat / (p * 3);
                let px = feat % (p * 3) / 3;
                let c = feat % 3;
                out.data[((gy * p + py) * size + gx * p + px) * 3 + c] = v;
            }
        }
        out
    }

    /// Predict the velocity field at `(x_t, sigma)` under `text`.
    ///
    /// `step` and `pass` position the call for the controller hooks and
    /// attention records; they do not influence the computation itself.
    pub fn forward(
        &self,
        x_t: &Latent,
        sigma: f32,
        text: &TokenSequence,
        step: usize,
        pass: Pass,
        controller: Option<&dyn AttentionController>,
    ) -> Result<Latent> {
        if x_t.size() != self.config.image_size {
            return Err(Error::Shape(format!(
                "latent size {} != configured {}",
                x_t.size(),
                self.config.image_size
            )));
        }
        if text.len() != self.config.n_text {
            return Err(Error::Shape(format!(
                "token sequence length {} != configured {}",
                text.len(),
                self.config.n_text
            )));
        }
        self.forward_count.fetch_add(1, Ordering::Relaxed);

        let n_text = self.config.n_text;
        let n_total = self.config.tokens_total();
        let d = self.config.d_model;

        // Token embeddings.
        let mut x = Tensor2::zeros(n_total, d);
        for (i, &id) in text.token_ids().iter().enumerate() {
            let emb = self.text_embed.row(id as usize);
            let pos = self.pos_text.row(i);
            let row = x.row_mut(i);
            for ((r, &e), &p) in row.iter_mut().zip(emb).zip(pos) {
                *r = e + p;
            }
        }
        let patches = self.patchify(x_t);
        let v_emb = matmul(&patches, &self.patch_embed)?;
        for i in 0..self.config.n_vision() {
            let emb = v_emb.row(i);
            let pos = self.pos_vision.row(i);
            let row = x.row_mut(n_text + i);
            for ((r, &e), &p) in row.iter_mut().zip(emb).zip(pos) {
                *r = e + p;
            }
        }

        let t_emb = timestep_embedding(sigma, d);
        let t_act: Vec<f32> = t_emb.iter().map(|&v| silu(v)).collect();

        for (layer, block) in self.blocks.iter().enumerate() {
            self.block_forward(block, layer, &mut x, &t_act, step, pass, text, controller)?;
        }

        let x_vision = x.row_block(n_text, n_total);
        let normed = layer_norm_rows(&x_vision);
        let head_out = matmul(&normed, &self.w_head)?;
        Ok(self.unpatchify(&head_out))
    }

    #[allow(clippy::too_many_arguments)]
    fn block_forward(
        &self,
        block: &BlockWeights,
        layer: usize,
        x: &mut Tensor2,
        t_act: &[f32],
        step: usize,
        pass: Pass,
        text: &TokenSequence,
        controller: Option<&dyn AttentionController>,
    ) -> Result<()> {
        let n_text = self.config.n_text;
        let n_total = self.config.tokens_total();
        let d = self.config.d_model;
        let d_head = self.config.d_head();

        let mods = matvec(t_act, &block.mod_w);
        let (shift1, rest) = mods.split_at(d);
        let (scale1, rest) = rest.split_at(d);
        let (gate1, rest) = rest.split_at(d);
        let (shift2, rest) = rest.split_at(d);
        let (scale2, gate2) = rest.split_at(d);

        // Attention sub-block. All heads project at once; per-head
        // column slices of the fused QKV equal the per-head projections
        // bitwise.
        let u = modulate(&layer_norm_rows(x), scale1, shift1);
        let q_full = matmul(&u, &block.wq_full)?;
        let k_full = matmul(&u, &block.wk_full)?;
        let v_full = matmul(&u, &block.wv_full)?;
        let mut attn = Tensor2::zeros(n_total, d);
        for head in 0..self.config.n_heads {
            let ctx = AttnContext {
                step,
                layer,
                head,
                pass,
            };
            let col = head * d_head;
            let q = q_full.col_block(col, col + d_head);
            let k = k_full.col_block(col, col + d_head);
            let v = v_full.col_block(col, col + d_head);
            let out = attention_head(&q, &k, v, &ctx, n_text, text.real_len(), controller)?;
            for r in 0..n_total {
                attn.row_mut(r)[col..col + d_head].copy_from_slice(out.row(r));
            }
        }
        let attn_out = matmul(&attn, &block.wo)?;
        gate_add(x, &attn_out, gate1);

        // MLP sub-block.
        let u2 = modulate(&layer_norm_rows(x), scale2, shift2);
        let mut h = matmul(&u2, &block.w_mlp1)?;
        for v in h.data_mut() {
            *v = gelu(*v);
        }
        let mlp_out = matmul(&h, &block.w_mlp2)?;
        gate_add(x, &mlp_out, gate2);
        Ok(())
    }
}

/// Sinusoidal embedding of the timestep scalar (sigma scaled by 1000):
/// first half sines, second half cosines over a log frequency ramp.
fn timestep_embedding(sigma: f32, d: usize) -> Vec<f32> {
    let half = d / 2;
    let t = sigma * 1000.0;
    (0..d)
        .map(|i| {
            let j = (i % half) as f32;
            let freq = (-(10000.0f32).ln() * j / half as f32).exp();
            if i < half {
                (t * freq).sin()
            } else {
                (t * freq).cos()
            }
        })
        .collect()
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Tanh-approximate GELU. The tanh runs through the exp identity
/// `tanh(y) = 1 - 2/(exp(2y) + 1)`, which saturates correctly at both
/// ends and costs one exp.
fn gelu(x: f32) -> f32 {
    let y = 0.797_884_6 * (x + 0.044_715 * x * x * x);
    let t = 1.0 - 2.0 / ((2.0 * y).exp() + 1.0);
    0.5 * x * (1.0 + t)
}

/// Parameter-free row LayerNorm; statistics accumulate in f64.
fn layer_norm_rows(x: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    let n = x.cols() as f64;
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut sum = 0.0f64;
        for &v in row {
            sum += v as f64;
        }
        let mean = sum / n;
        let mut var = 0.0f64;
        for &v in row {
            let d = v as f64 - mean;
            var += d * d;
        }
        var /= n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let out_row = out.row_mut(r);
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = ((v as f64 - mean) * inv) as f32;
        }
    }
    out
}

/// `x * (1 + scale) + shift`, broadcasting the vectors over rows.
fn modulate(x: &Tensor2, scale: &[f32], shift: &[f32]) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for ((v, &s), &b) in row.iter_mut().zip(scale).zip(shift) {
            *v = *v * (1.0 + s) + b;
        }
    }
    out
}

/// `x += gate * y`, broadcasting the gate vector over rows.
fn gate_add(x: &mut Tensor2, y: &Tensor2, gate: &[f32]) {
    for r in 0..x.rows() {
        let xr = x.row_mut(r);
        let yr = y.row(r);
        for ((v, &u), &g) in xr.iter_mut().zip(yr).zip(gate) {
            *v += g * u;
        }
    }
}

/// Row-vector times matrix, ascending accumulation.
fn matvec(v: &[f32], m: &Tensor2) -> Vec<f32> {
    let mut out = vec![0.0f32; m.cols()];
    for (k, &vk) in v.iter().enumerate() {
        let row = m.row(k);
        for (o, &w) in out.iter_mut().zip(row) {
            *o += vk * w;
        }
    }
    out
}
