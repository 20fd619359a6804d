//! Dense row-major 2D tensors and the deterministic kernels built on them.
//!
//! Everything here is 32-bit and pure: the same inputs produce bitwise
//! identical outputs on every call, regardless of call order or thread
//! count. Reductions run in a fixed ascending order (the k loop of
//! [`matmul`], the row sums of [`softmax_rows`]) so that an optimized
//! build reproduces a naive reference loop exactly.

use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "tensor data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Identity matrix of side `n`.
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn transposed(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copy of rows `lo..hi`.
    pub fn row_block(&self, lo: usize, hi: usize) -> Tensor2 {
        assert!(lo <= hi && hi <= self.rows);
        Tensor2 {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }

    /// Copy of columns `lo..hi`.
    pub fn col_block(&self, lo: usize, hi: usize) -> Tensor2 {
        assert!(lo <= hi && hi <= self.cols);
        let mut data = Vec::with_capacity(self.rows * (hi - lo));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[lo..hi]);
        }
        Tensor2 {
            rows: self.rows,
            cols: hi - lo,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Matrix product `a x b`.
///
/// The accumulation over the shared dimension runs in ascending k order
/// for every output element, so the result is bitwise identical to the
/// naive triple loop.
pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} . {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor2::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax of `scale * s` with max-subtraction.
///
/// Each output row is `exp(scale*s_ij - m_i) / sum_j exp(scale*s_ij - m_i)`
/// with `m_i = max_j scale*s_ij`; every row sums to 1 within 1e-5.
pub fn softmax_rows(s: &Tensor2, scale: f32) -> Tensor2 {
    assert!(scale > 0.0, "softmax scale must be positive");
    let mut out = Tensor2::zeros(s.rows, s.cols);
    for r in 0..s.rows {
        let row = s.row(r);
        let out_row = out.row_mut(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (scale * (v - max)).exp();
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Deterministic counter-based PRNG (SplitMix64).
///
/// The state advances by the golden-ratio increment and each output is a
/// finalized mix of the counter, so the stream depends only on the seed:
/// same seed, same stream, on every platform and independent of thread
/// count.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f32(&mut self) -> f32 {
        self.next_f64() as f32
    }
}

/// `n` pseudo-normal draws via Box-Muller over [`Rng`].
///
/// Pairs are generated from consecutive uniforms and computed in f64
/// before narrowing, so the array is a pure function of `(seed, n)`.
pub fn seeded_normal(rng: &mut Rng, n: usize, mean: f32, std: f32) -> Vec<f32> {
    assert!(std >= 0.0, "std must be non-negative");
    if std == 0.0 {
        return vec![mean; n];
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - rng.next_f64();
        let u2 = rng.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        let z0 = r * theta.cos();
        let z1 = r * theta.sin();
        out.push(mean + std * z0 as f32);
        if out.len() < n {
            out.push(mean + std * z1 as f32);
        }
    }
    out
}

/// FNV-1a 64-bit digest, used wherever the pipeline compares byte streams
/// (noise sharing, config compatibility).
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Digest of an f32 slice via its little-endian bytes.
pub fn digest_f32(values: &[f32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}
