//! Training-free color editing on a deterministic toy MM-DiT.
//!
//! A desk-scale multi-modal diffusion transformer whose joint attention
//! over concatenated text and vision tokens is quadrant-addressable,
//! plus the attention-control layer that edits colors without training:
//!
//! - **Structure preservation** — the target branch's vision-to-vision
//!   attention quadrant is replaced with the source branch's, freezing
//!   geometry while the prompt changes color words.
//! - **Color preservation** — a binary edit mask is extracted from
//!   vision-to-text attention; source vision value tokens are copied
//!   back outside the mask, freezing non-edited regions.
//! - **Attribute re-weighting** — selected words' text-to-vision scores
//!   are scaled before the softmax, so attention rows stay stochastic
//!   while the word's strength shifts smoothly.
//!
//! Everything is seeded and bitwise deterministic: no pretrained
//! weights, no GPU, no threads inside a generation. The evaluation
//! stack (Canny-SSIM, masked PSNR/SSIM, morphology, a pluggable
//! semantic scorer) and a benchmark harness with ablation modes round
//! out the pipeline.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --release --example generate        # deterministic sampling
//! cargo run --release --example edit_color      # the full editing pipeline
//! cargo run --release --example extract_mask    # vision-to-text mask extraction
//! cargo run --release --example reweight_sweep  # attribute strength sweep
//! cargo run --release --example cache_reuse     # one source, many edits, disk round-trip
//! cargo run --release --example quality_metrics # the evaluation protocol
//! cargo run --release --example run_benchmark   # ablation suite with ordering flags
//! ```
//!
//! The `colorctrl` binary exposes the same pipeline as `generate`,
//! `edit`, `metrics` and `bench` subcommands for scripted use.
//!
//! ## Module map
//!
//! - [`tensor`] — row-major f32 tensors, fixed-order matmul and
//!   softmax kernels, the seeded PRNG.
//! - [`model`] — tokenizer, the toy MM-DiT, and the controller hook
//!   interface into its joint attention.
//! - [`control`] — quadrant views, structure/color preservation, mask
//!   extraction and re-weighting.
//! - [`sampler`] — Euler sampling with classifier-free guidance, the
//!   dual-branch edit loop, and the write-once attention cache.
//! - [`metrics`] — PSNR/SSIM/Canny/dilation and the report schema.
//! - [`mod@bench`] — suite loading, ablation modes, aggregation.
//! - [`image`] — 8-bit buffers and PNG/PPM/PGM codecs.

pub mod bench;
pub mod cli;
pub mod control;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod tensor;

pub use error::{Error, Result};
