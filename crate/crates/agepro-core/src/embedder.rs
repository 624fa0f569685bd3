//! Pluggable differentiable embedders.
//!
//! The synthesis embedding concatenates several seeded affine+tanh blocks
//! computed at increasing downsampling strides, so shallow blocks keep pixel
//! detail while deeper blocks summarize coarse structure. The policy embedding
//! is a single block at the coarsest stride. A file-backed (identity) embedder
//! passes the vectorized frame through unchanged and pairs with galleries that
//! carry precomputed embedding payloads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Frame};

/// Synthesis-space feature vector of length `D_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisEmbedding(pub Vec<f64>);

/// Compact policy-space feature vector of length `D_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEmbedding(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    Synthetic,
    FileBacked,
}

fn default_bias_scale() -> f64 {
    0.1
}

/// Serializable description of an embedder; `seed` fully determines the
/// synthetic weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub seed: u64,
    pub block_dims: Vec<usize>,
    pub pool_dim: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Scale of the seeded biases; zero gives bias-free blocks.
    #[serde(default = "default_bias_scale")]
    pub bias_scale: f64,
}

impl EmbedderSpec {
    pub fn synthetic(
        seed: u64,
        block_dims: Vec<usize>,
        pool_dim: usize,
        input_height: usize,
        input_width: usize,
    ) -> Self {
        Self {
            kind: EmbedderKind::Synthetic,
            seed,
            block_dims,
            pool_dim,
            input_height,
            input_width,
            bias_scale: default_bias_scale(),
        }
    }

    pub fn file_backed(input_height: usize, input_width: usize) -> Self {
        Self {
            kind: EmbedderKind::FileBacked,
            seed: 0,
            block_dims: Vec::new(),
            pool_dim: 0,
            input_height,
            input_width,
            bias_scale: 0.0,
        }
    }

    pub fn synthesis_dim(&self) -> usize {
        match self.kind {
            EmbedderKind::Synthetic => self.block_dims.iter().sum(),
            EmbedderKind::FileBacked => self.input_height * self.input_width,
        }
    }

    pub fn policy_dim(&self) -> usize {
        match self.kind {
            EmbedderKind::Synthetic => self.pool_dim,
            EmbedderKind::FileBacked => self.input_height * self.input_width,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, Error> {
        match self.kind {
            EmbedderKind::Synthetic => {
                if self.block_dims.is_empty() || self.pool_dim == 0 {
                    return Err(Error::InvalidConfig(
                        "synthetic embedder needs nonempty block_dims and pool_dim > 0".into(),
                    ));
                }
                if self.input_height < 4 || self.input_width < 4 {
                    return Err(Error::InvalidConfig(
                        "synthetic embedder input must be at least 4x4".into(),
                    ));
                }
                Ok(Box::new(SyntheticEmbedder::from_spec(self)))
            }
            EmbedderKind::FileBacked => Ok(Box::new(IdentityEmbedder {
                h: self.input_height,
                w: self.input_width,
            })),
        }
    }
}

/// Maps frames to synthesis/policy feature vectors and pulls cotangents back
/// to frame space. Implementations are immutable after construction.
pub trait Embedder: Send + Sync {
    fn input_shape(&self) -> (usize, usize);
    fn synthesis_dim(&self) -> usize;
    fn policy_dim(&self) -> usize;
    fn embed_synthesis(&self, frame: &Frame) -> Result<SynthesisEmbedding, Error>;
    fn embed_policy(&self, frame: &Frame) -> Result<PolicyEmbedding, Error>;
    /// Gradient of `<embed_synthesis(x), cotangent>` with respect to the frame,
    /// returned as a row-major grid matching the input shape.
    fn embed_vjp(&self, frame: &Frame, cotangent: &[f64]) -> Result<Vec<f64>, Error>;
}

fn check_shape(embedder: &dyn Embedder, frame: &Frame) -> Result<(), Error> {
    if frame.shape() != embedder.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", embedder.input_shape()),
            got: format!("{:?}", frame.shape()),
        });
    }
    Ok(())
}

/// One affine+tanh block over an average-pooled view of the frame.
#[derive(Debug, Clone)]
struct AffineBlock {
    stride: usize,
    out_dim: usize,
    in_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl AffineBlock {
    fn seeded(seed: u64, index: u64, stride: usize, h: usize, w: usize, out_dim: usize, bias_scale: f64) -> Self {
        let ph = h.div_ceil(stride);
        let pw = w.div_ceil(stride);
        let in_dim = ph * pw;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..out_dim * in_dim).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let bias = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0) * bias_scale).collect();
        Self { stride, out_dim, in_dim, weights, bias }
    }

    /// Average pooling with stride `self.stride`; partial edge cells average
    /// over the pixels they actually cover.
    fn pooled(&self, frame: &Frame) -> Vec<f64> {
        let (h, w) = frame.shape();
        let s = self.stride;
        let ph = h.div_ceil(s);
        let pw = w.div_ceil(s);
        let mut out = vec![0.0; ph * pw];
        for i in 0..ph {
            for j in 0..pw {
                let y1 = (i * s + s).min(h);
                let x1 = (j * s + s).min(w);
                let mut sum = 0.0;
                for y in i * s..y1 {
                    for x in j * s..x1 {
                        sum += frame.get(y, x);
                    }
                }
                out[i * pw + j] = sum / ((y1 - i * s) * (x1 - j * s)) as f64;
            }
        }
        out
    }

    fn forward(&self, frame: &Frame) -> Vec<f64> {
        let v = self.pooled(frame);
        debug_assert_eq!(v.len(), self.in_dim);
        (0..self.out_dim)
            .map(|k| {
                let row = &self.weights[k * self.in_dim..(k + 1) * self.in_dim];
                let z: f64 = row.iter().zip(&v).map(|(w, x)| w * x).sum::<f64>() + self.bias[k];
                z.tanh()
            })
            .collect()
    }

    /// Accumulates the block's contribution to the frame gradient.
    fn vjp_into(&self, frame: &Frame, cotangent: &[f64], grad: &mut [f64]) {
        let (h, w) = frame.shape();
        let s = self.stride;
        let pw = w.div_ceil(s);
        let y = self.forward(frame);
        // d/dv_j of sum_k c_k tanh(z_k) = sum_k c_k (1 - y_k^2) W[k,j]
        let mut gv = vec![0.0; self.in_dim];
        for k in 0..self.out_dim {
            let t = cotangent[k] * (1.0 - y[k] * y[k]);
            if t == 0.0 {
                continue;
            }
            let row = &self.weights[k * self.in_dim..(k + 1) * self.in_dim];
            for (g, wkj) in gv.iter_mut().zip(row) {
                *g += t * wkj;
            }
        }
        // each pixel of cell j receives gv_j / |cell|
        for py in 0..h {
            for px in 0..w {
                let i = py / s;
                let j = px / s;
                let y1 = (i * s + s).min(h);
                let x1 = (j * s + s).min(w);
                let count = ((y1 - i * s) * (x1 - j * s)) as f64;
                grad[py * w + px] += gv[i * pw + j] / count;
            }
        }
    }
}

/// Seeded multi-block embedder; block `b` pools at stride `2^b`, the policy
/// block at stride `2^B`.
pub struct SyntheticEmbedder {
    h: usize,
    w: usize,
    blocks: Vec<AffineBlock>,
    pool: AffineBlock,
}

impl SyntheticEmbedder {
    fn from_spec(spec: &EmbedderSpec) -> Self {
        let (h, w) = (spec.input_height, spec.input_width);
        let blocks = spec
            .block_dims
            .iter()
            .enumerate()
            .map(|(b, &dim)| {
                AffineBlock::seeded(spec.seed, b as u64 + 1, 1 << b, h, w, dim, spec.bias_scale)
            })
            .collect::<Vec<_>>();
        let pool_stride = 1usize << spec.block_dims.len();
        let pool = AffineBlock::seeded(spec.seed, 0x7001, pool_stride, h, w, spec.pool_dim, spec.bias_scale);
        Self { h, w, blocks, pool }
    }
}

impl Embedder for SyntheticEmbedder {
    fn input_shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn synthesis_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.out_dim).sum()
    }

    fn policy_dim(&self) -> usize {
        self.pool.out_dim
    }

    fn embed_synthesis(&self, frame: &Frame) -> Result<SynthesisEmbedding, Error> {
        check_shape(self, frame)?;
        let mut out = Vec::with_capacity(self.synthesis_dim());
        for block in &self.blocks {
            out.extend(block.forward(frame));
        }
        Ok(SynthesisEmbedding(out))
    }

    fn embed_policy(&self, frame: &Frame) -> Result<PolicyEmbedding, Error> {
        check_shape(self, frame)?;
        Ok(PolicyEmbedding(self.pool.forward(frame)))
    }

    fn embed_vjp(&self, frame: &Frame, cotangent: &[f64]) -> Result<Vec<f64>, Error> {
        check_shape(self, frame)?;
        if cotangent.len() != self.synthesis_dim() {
            return Err(Error::LengthMismatch { expected: self.synthesis_dim(), got: cotangent.len() });
        }
        let mut grad = vec![0.0; self.h * self.w];
        let mut offset = 0;
        for block in &self.blocks {
            block.vjp_into(frame, &cotangent[offset..offset + block.out_dim], &mut grad);
            offset += block.out_dim;
        }
        Ok(grad)
    }
}

/// Pass-through embedder over the vectorized frame; `D_s = D_p = h * w`.
pub struct IdentityEmbedder {
    h: usize,
    w: usize,
}

impl IdentityEmbedder {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }
}

impl Embedder for IdentityEmbedder {
    fn input_shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn synthesis_dim(&self) -> usize {
        self.h * self.w
    }

    fn policy_dim(&self) -> usize {
        self.h * self.w
    }

    fn embed_synthesis(&self, frame: &Frame) -> Result<SynthesisEmbedding, Error> {
        check_shape(self, frame)?;
        Ok(SynthesisEmbedding(frame.values().to_vec()))
    }

    fn embed_policy(&self, frame: &Frame) -> Result<PolicyEmbedding, Error> {
        check_shape(self, frame)?;
        Ok(PolicyEmbedding(frame.values().to_vec()))
    }

    fn embed_vjp(&self, frame: &Frame, cotangent: &[f64]) -> Result<Vec<f64>, Error> {
        check_shape(self, frame)?;
        if cotangent.len() != self.synthesis_dim() {
            return Err(Error::LengthMismatch { expected: self.synthesis_dim(), got: cotangent.len() });
        }
        Ok(cotangent.to_vec())
    }
}
