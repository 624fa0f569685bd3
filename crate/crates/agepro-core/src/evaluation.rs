//! Video-level metrics: aging consistency, block-matching flow, temporal
//! smoothness, and an embedder-space matching score.

use serde::{Deserialize, Serialize};

use crate::embedder::Embedder;
use crate::traversal::AgingDelta;
use crate::{Error, Frame};

/// Ordered frames of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<Frame>,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self, Error> {
        if frames.is_empty() {
            return Err(Error::InvalidConfig("video needs at least one frame".into()));
        }
        let shape = frames[0].shape();
        if frames.iter().any(|f| f.shape() != shape) {
            return Err(Error::InvalidConfig("video frames must share one shape".into()));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-pixel integer displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub dy: Vec<i32>,
    pub dx: Vec<i32>,
}

impl FlowField {
    /// Frobenius-style distance between two fields of equal shape.
    pub fn l2_distance(&self, other: &FlowField) -> f64 {
        self.dy
            .iter()
            .zip(&other.dy)
            .chain(self.dx.iter().zip(&other.dx))
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Odd patch side length.
    pub patch: usize,
    pub radius: i32,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { patch: 3, radius: 2 }
    }
}

/// Mean over consecutive pairs of `||delta_t - delta_(t-1)|| + epsilon`, the
/// inverse of the step reward; smaller means more consistent aging.
pub fn aging_consistency(deltas: &[AgingDelta], epsilon: f64) -> Result<f64, Error> {
    if deltas.len() < 2 {
        return Err(Error::InvalidConfig("aging_consistency needs at least 2 deltas".into()));
    }
    let sum: f64 = deltas.windows(2).map(|w| w[0].distance(&w[1]) + epsilon).sum();
    Ok(sum / (deltas.len() - 1) as f64)
}

/// SSD block matching from `a` to `b`.
///
/// Only displacements whose displaced patch stays fully in bounds are
/// candidates; centers whose base patch leaves the frame keep flow (0, 0).
/// Ties break toward the smallest displacement norm, then row-major order.
pub fn block_flow(a: &Frame, b: &Frame, cfg: &FlowConfig) -> Result<FlowField, Error> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            got: format!("{:?}", b.shape()),
        });
    }
    if cfg.patch % 2 == 0 || cfg.patch == 0 {
        return Err(Error::InvalidConfig("flow patch must be odd".into()));
    }
    if cfg.radius < 0 {
        return Err(Error::InvalidConfig("flow radius must be >= 0".into()));
    }
    let (h, w) = a.shape();
    let half = (cfg.patch / 2) as i64;
    let mut dy = vec![0i32; h * w];
    let mut dx = vec![0i32; h * w];
    for cy in 0..h as i64 {
        for cx in 0..w as i64 {
            if cy - half < 0 || cy + half >= h as i64 || cx - half < 0 || cx + half >= w as i64 {
                continue;
            }
            let mut best = (f64::INFINITY, i64::MAX, (0i64, 0i64));
            for oy in -cfg.radius as i64..=cfg.radius as i64 {
                for ox in -cfg.radius as i64..=cfg.radius as i64 {
                    let ty = cy + oy;
                    let tx = cx + ox;
                    if ty - half < 0
                        || ty + half >= h as i64
                        || tx - half < 0
                        || tx + half >= w as i64
                    {
                        continue;
                    }
                    let mut ssd = 0.0;
                    for py in -half..=half {
                        for px in -half..=half {
                            let va = a.get((cy + py) as usize, (cx + px) as usize);
                            let vb = b.get((ty + py) as usize, (tx + px) as usize);
                            ssd += (va - vb) * (va - vb);
                        }
                    }
                    let norm2 = oy * oy + ox * ox;
                    // strict improvement in (ssd, |d|^2); row-major scan order
                    // settles remaining ties
                    if ssd < best.0 || (ssd == best.0 && norm2 < best.1) {
                        best = (ssd, norm2, (oy, ox));
                    }
                }
            }
            let idx = cy as usize * w + cx as usize;
            dy[idx] = best.2 .0 as i32;
            dx[idx] = best.2 .1 as i32;
        }
    }
    Ok(FlowField { height: h, width: w, dy, dx })
}

/// Mean over consecutive pairs of the l2 distance between original and
/// synthesized flow fields.
pub fn temporal_smoothness(
    original: &VideoSequence,
    synthesized: &VideoSequence,
    cfg: &FlowConfig,
) -> Result<f64, Error> {
    if original.len() != synthesized.len() {
        return Err(Error::LengthMismatch { expected: original.len(), got: synthesized.len() });
    }
    if original.len() < 2 {
        return Err(Error::InvalidConfig("temporal_smoothness needs at least 2 frames".into()));
    }
    let mut total = 0.0;
    for t in 0..original.len() - 1 {
        let fo = block_flow(&original.frames[t], &original.frames[t + 1], cfg)?;
        let fs = block_flow(&synthesized.frames[t], &synthesized.frames[t + 1], cfg)?;
        total += fo.l2_distance(&fs);
    }
    Ok(total / (original.len() - 1) as f64)
}

/// Mean and population standard deviation of cosine similarities between the
/// frame's synthesis embedding and each reference's.
pub fn matching_score(
    frame: &Frame,
    references: &[Frame],
    embedder: &dyn Embedder,
) -> Result<(f64, f64), Error> {
    if references.is_empty() {
        return Err(Error::InvalidConfig("matching_score needs references".into()));
    }
    let emb = embedder.embed_synthesis(frame)?.0;
    let mut sims = Vec::with_capacity(references.len());
    for r in references {
        let re = embedder.embed_synthesis(r)?.0;
        sims.push(1.0 - crate::gallery::cosine_distance(&emb, &re)?);
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / sims.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Metric summary emitted as the JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub consistency: f64,
    pub smoothness: f64,
    pub matching: MatchingSummary,
    pub per_frame: Vec<FrameMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchingSummary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub delta_norm: f64,
    pub matching_mean: f64,
}
