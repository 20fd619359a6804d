//! Write-once store for the source branch's attention state.
//!
//! One record per `(step, layer, head, pass)` key; insertion is rejected
//! after finalization and finalization checks that every key in the full
//! index range is present. During the target branch the cache is shared
//! by reference and never mutated.
//!
//! # On-disk layout
//!
//! Little-endian throughout:
//!
//! ```text
//! magic            4 bytes  "CCC1"
//! version          u32      1
//! config digest    u64
//! model config     7 x u64  image_size, patch, n_text, d_model,
//!                           n_heads, n_layers, init_seed
//! sample params    u64 steps, u64 seed, u32 cfg_scale (f32 bits)
//! noise digest     u64
//! source image     u64 w, u64 h, u64 channels, then w*h*c bytes
//! record count     u64
//! index table      count x u64 payload offsets (from payload base)
//! payloads         per record: u64 step, layer, head, pass, then
//!                  scores, map, v_text, v_vision as f32 bits
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::control::{accumulate_mask_scores, MaskScores};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::model::{AttentionRecord, ModelConfig, Pass};
use crate::sampler::SampleParams;
use crate::tensor::Tensor2;

const MAGIC: &[u8; 4] = b"CCC1";
const VERSION: u32 = 1;

/// Attention records and source outputs of one recorded source branch.
pub struct BranchCache {
    config: ModelConfig,
    steps: usize,
    seed: u64,
    cfg_scale: f32,
    noise_digest: u64,
    source_image: Option<ImageBuffer>,
    records: Vec<Option<AttentionRecord>>,
    payload_bytes: u64,
    budget: Option<u64>,
    finalized: bool,
}

impl BranchCache {
    pub fn new(config: ModelConfig, params: &SampleParams) -> Self {
        let slots = params.steps * config.n_layers * config.n_heads * 2;
        Self {
            config,
            steps: params.steps,
            seed: params.seed,
            cfg_scale: params.cfg_scale,
            noise_digest: 0,
            source_image: None,
            records: (0..slots).map(|_| None).collect(),
            payload_bytes: 0,
            budget: params.cache_budget,
            finalized: false,
        }
    }

    fn index(&self, step: usize, layer: usize, head: usize, pass: Pass) -> Option<usize> {
        if step >= self.steps || layer >= self.config.n_layers || head >= self.config.n_heads {
            return None;
        }
        Some(
            ((step * self.config.n_layers + layer) * self.config.n_heads + head) * 2 + pass.index(),
        )
    }

    /// Store one record. Fails once finalized, on duplicate keys, on
    /// shape mismatches, and when a configured budget would overflow.
    pub fn insert(&mut self, record: AttentionRecord) -> Result<()> {
        if self.finalized {
            return Err(Error::State("cache is finalized; writes rejected".into()));
        }
        let side = self.config.tokens_total();
        if record.map.rows() != side
            || record.map.cols() != side
            || record.scores.rows() != side
            || record.v_text.rows() != self.config.n_text
            || record.v_vision.rows() != self.config.n_vision()
            || record.v_vision.cols() != self.config.d_head()
        {
            return Err(Error::Control(format!(
                "record shape does not match config (map {}x{}, expected side {side})",
                record.map.rows(),
                record.map.cols()
            )));
        }
        let idx = self
            .index(record.step, record.layer, record.head, record.pass)
            .ok_or_else(|| {
                Error::Control(format!(
                    "record key (step {}, layer {}, head {}) outside cache range",
                    record.step, record.layer, record.head
                ))
            })?;
        if self.records[idx].is_some() {
            return Err(Error::State(format!(
                "duplicate record for (step {}, layer {}, head {}, pass {:?})",
                record.step, record.layer, record.head, record.pass
            )));
        }
        let bytes = record.payload_bytes() as u64;
        if let Some(budget) = self.budget {
            if self.payload_bytes + bytes > budget {
                return Err(Error::Resource(format!(
                    "cache budget {budget} bytes exceeded at {} records",
                    self.len() + 1
                )));
            }
        }
        self.payload_bytes += bytes;
        self.records[idx] = Some(record);
        Ok(())
    }

    /// Seal the cache. Every key in the index range must be present.
    pub fn finalize(&mut self, source_image: ImageBuffer, noise_digest: u64) -> Result<()> {
        if self.finalized {
            return Err(Error::State("cache already finalized".into()));
        }
        if let Some(missing) = self.records.iter().position(|r| r.is_none()) {
            return Err(Error::State(format!(
                "cache incomplete: {} of {} records present (first hole at index {missing})",
                self.len(),
                self.records.len()
            )));
        }
        self.source_image = Some(source_image);
        self.noise_digest = noise_digest;
        self.finalized = true;
        Ok(())
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Number of records currently present.
    pub fn len(&self) -> usize {
        self.records.iter().filter(|r| r.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of keys once complete: steps x layers x heads x 2.
    pub fn expected_len(&self) -> usize {
        self.records.len()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cfg_scale(&self) -> f32 {
        self.cfg_scale
    }

    pub fn noise_digest(&self) -> u64 {
        self.noise_digest
    }

    pub fn payload_bytes(&self) -> u64 {
        self.payload_bytes
    }

    /// Decoded source image, available once finalized.
    pub fn source_image(&self) -> Result<&ImageBuffer> {
        self.source_image
            .as_ref()
            .ok_or_else(|| Error::State("cache has no source image (not finalized)".into()))
    }

    pub fn get(
        &self,
        step: usize,
        layer: usize,
        head: usize,
        pass: Pass,
    ) -> Option<&AttentionRecord> {
        self.records[self.index(step, layer, head, pass)?].as_ref()
    }

    /// Conditional-pass records in canonical key order.
    pub fn cond_records(&self) -> impl Iterator<Item = &AttentionRecord> {
        self.records
            .iter()
            .flatten()
            .filter(|r| r.pass == Pass::Cond)
    }

    /// Aggregate the conditional pass's vision-to-text attention over
    /// the given text token columns into normalized mask scores.
    pub fn mask_scores(&self, token_cols: &[usize]) -> Result<MaskScores> {
        if !self.finalized {
            return Err(Error::State("cache not finalized".into()));
        }
        accumulate_mask_scores(
            self.cond_records(),
            token_cols,
            self.config.n_text,
            self.config.n_vision(),
        )
    }

    /// Serialize to the documented binary layout. Only finalized caches
    /// can be persisted; the file round-trips bitwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.finalized {
            return Err(Error::State("cannot persist an unfinalized cache".into()));
        }
        let image = self.source_image()?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config.digest().to_le_bytes())?;
        for v in [
            self.config.image_size as u64,
            self.config.patch as u64,
            self.config.n_text as u64,
            self.config.d_model as u64,
            self.config.n_heads as u64,
            self.config.n_layers as u64,
            self.config.init_seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.steps as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.cfg_scale.to_bits().to_le_bytes())?;
        w.write_all(&self.noise_digest.to_le_bytes())?;
        for v in [
            image.width() as u64,
            image.height() as u64,
            image.channels() as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(image.data())?;

        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        let record_size = |r: &AttentionRecord| 4 * 8 + r.payload_bytes() as u64;
        let mut offset = 0u64;
        for rec in self.records.iter().flatten() {
            w.write_all(&offset.to_le_bytes())?;
            offset += record_size(rec);
        }
        for rec in self.records.iter().flatten() {
            for v in [
                rec.step as u64,
                rec.layer as u64,
                rec.head as u64,
                rec.pass.index() as u64,
            ] {
                w.write_all(&v.to_le_bytes())?;
            }
            for t in [&rec.scores, &rec.map, &rec.v_text, &rec.v_vision] {
                write_f32s(&mut w, t.data())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load a cache previously written by [`save`](Self::save).
    pub fn load(path: &Path) -> Result<BranchCache> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::State(format!(
                "{}: not a cache file (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::State(format!(
                "{}: unsupported cache version {version}",
                path.display()
            )));
        }
        let stored_digest = read_u64(&mut r)?;
        let config = ModelConfig {
            image_size: read_u64(&mut r)? as usize,
            patch: read_u64(&mut r)? as usize,
            n_text: read_u64(&mut r)? as usize,
            d_model: read_u64(&mut r)? as usize,
            n_heads: read_u64(&mut r)? as usize,
            n_layers: read_u64(&mut r)? as usize,
            init_seed: read_u64(&mut r)?,
        };
        if config.digest() != stored_digest {
            return Err(Error::State(format!(
                "{}: config digest mismatch",
                path.display()
            )));
        }
        let steps = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let cfg_scale = f32::from_bits(read_u32(&mut r)?);
        let noise_digest = read_u64(&mut r)?;
        let (iw, ih, ic) = (
            read_u64(&mut r)? as usize,
            read_u64(&mut r)? as usize,
            read_u64(&mut r)? as usize,
        );
        let mut img_data = vec![0u8; iw * ih * ic];
        r.read_exact(&mut img_data)?;
        let source_image = ImageBuffer::from_raw(iw, ih, ic, img_data)?;

        let count = read_u64(&mut r)? as usize;
        let expected = steps * config.n_layers * config.n_heads * 2;
        if count != expected {
            return Err(Error::State(format!(
                "{}: record count {count} != expected {expected}",
                path.display()
            )));
        }
        // Offsets are implied by the canonical order; skip the table.
        for _ in 0..count {
            read_u64(&mut r)?;
        }

        let params = SampleParams {
            steps,
            cfg_scale,
            seed,
            record: true,
            cache_budget: None,
        };
        let mut cache = BranchCache::new(config, &params);
        let side = config.tokens_total();
        for _ in 0..count {
            let step = read_u64(&mut r)? as usize;
            let layer = read_u64(&mut r)? as usize;
            let head = read_u64(&mut r)? as usize;
            let pass = match read_u64(&mut r)? {
                0 => Pass::Cond,
                1 => Pass::Uncond,
                other => {
                    return Err(Error::State(format!(
                        "{}: bad pass tag {other}",
                        path.display()
                    )))
                }
            };
            let scores = read_tensor(&mut r, side, side)?;
            let map = read_tensor(&mut r, side, side)?;
            let v_text = read_tensor(&mut r, config.n_text, config.d_head())?;
            let v_vision = read_tensor(&mut r, config.n_vision(), config.d_head())?;
            cache.insert(AttentionRecord {
                step,
                layer,
                head,
                pass,
                scores,
                map,
                v_text,
                v_vision,
            })?;
        }
        cache.finalize(source_image, noise_digest)?;
        Ok(cache)
    }
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Tensor2> {
    let mut buf = vec![0u8; rows * cols * 4];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor2::from_vec(rows, cols, data)
}
