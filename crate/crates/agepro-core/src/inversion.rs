//! Feature inversion: recover an image whose embedding matches a target.
//!
//! Minimizes `0.5 * ||target - F1(x)||^2 + lambda * tv(x)` by projected
//! gradient descent with backtracking; pixels are clamped to `[0, 1]` after
//! every step.

use serde::{Deserialize, Serialize};

use crate::embedder::{Embedder, SynthesisEmbedding};
use crate::{Error, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InversionInit {
    /// Warm start from the input frame, preserving non-edited content.
    #[default]
    InputFrame,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub lambda_tv: f64,
    pub beta: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub init: InversionInit,
    /// Stop once the gradient norm drops below this.
    pub tol: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            lambda_tv: 1e-2,
            beta: 2.0,
            step_size: 0.1,
            max_iters: 500,
            init: InversionInit::InputFrame,
            tol: 1e-9,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.step_size <= 0.0 || self.max_iters == 0 || self.lambda_tv < 0.0 || self.beta <= 0.0
        {
            return Err(Error::InvalidConfig(
                "inversion needs step_size > 0, max_iters >= 1, lambda_tv >= 0, beta > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `sum_(i,j) ((x[i,j+1]-x[i,j])^2 + (x[i+1,j]-x[i,j])^2)^(beta/2)` over
/// interior offsets.
pub fn tv_value(frame: &Frame, beta: f64) -> f64 {
    let (h, w) = frame.shape();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let dh = if x + 1 < w { frame.get(y, x + 1) - frame.get(y, x) } else { 0.0 };
            let dv = if y + 1 < h { frame.get(y + 1, x) - frame.get(y, x) } else { 0.0 };
            let mag2 = dh * dh + dv * dv;
            if mag2 > 0.0 {
                total += mag2.powf(beta / 2.0);
            }
        }
    }
    total
}

/// Analytic gradient of [`tv_value`]; the `beta = 1` subgradient at flat
/// points is taken as zero.
pub fn tv_gradient(frame: &Frame, beta: f64) -> Vec<f64> {
    let (h, w) = frame.shape();
    let mut grad = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let dh = if x + 1 < w { frame.get(y, x + 1) - frame.get(y, x) } else { 0.0 };
            let dv = if y + 1 < h { frame.get(y + 1, x) - frame.get(y, x) } else { 0.0 };
            let mag2 = dh * dh + dv * dv;
            if mag2 == 0.0 {
                continue;
            }
            // d/d(diff) of (dh^2+dv^2)^(beta/2) = beta * diff * mag2^(beta/2 - 1)
            let scale = beta * mag2.powf(beta / 2.0 - 1.0);
            if x + 1 < w {
                grad[y * w + x + 1] += scale * dh;
                grad[y * w + x] -= scale * dh;
            }
            if y + 1 < h {
                grad[(y + 1) * w + x] += scale * dv;
                grad[y * w + x] -= scale * dv;
            }
        }
    }
    grad
}

fn objective(
    embedder: &dyn Embedder,
    target: &[f64],
    frame: &Frame,
    cfg: &InversionConfig,
) -> Result<f64, Error> {
    let emb = embedder.embed_synthesis(frame)?.0;
    let data: f64 =
        target.iter().zip(&emb).map(|(t, e)| (t - e) * (t - e)).sum::<f64>() * 0.5;
    Ok(data + cfg.lambda_tv * tv_value(frame, cfg.beta))
}

fn objective_gradient(
    embedder: &dyn Embedder,
    target: &[f64],
    frame: &Frame,
    cfg: &InversionConfig,
) -> Result<Vec<f64>, Error> {
    let emb = embedder.embed_synthesis(frame)?.0;
    let residual: Vec<f64> = emb.iter().zip(target).map(|(e, t)| e - t).collect();
    let mut grad = embedder.embed_vjp(frame, &residual)?;
    if cfg.lambda_tv > 0.0 {
        let tv = tv_gradient(frame, cfg.beta);
        for (g, t) in grad.iter_mut().zip(&tv) {
            *g += cfg.lambda_tv * t;
        }
    }
    Ok(grad)
}

fn clamp_step(frame: &Frame, grad: &[f64], step: f64) -> Frame {
    let vals: Vec<f64> = frame
        .values()
        .iter()
        .zip(grad)
        .map(|(v, g)| (v - step * g).clamp(0.0, 1.0))
        .collect();
    Frame::new(frame.height(), frame.width(), vals).expect("clamped values are valid")
}

/// Projected gradient descent toward `target`; returns the best iterate seen
/// and its objective value. The accepted-iterate objective is non-increasing.
pub fn invert(
    target: &SynthesisEmbedding,
    embedder: &dyn Embedder,
    cfg: &InversionConfig,
    init_frame: &Frame,
) -> Result<(Frame, f64), Error> {
    cfg.validate()?;
    if target.0.len() != embedder.synthesis_dim() {
        return Err(Error::LengthMismatch {
            expected: embedder.synthesis_dim(),
            got: target.0.len(),
        });
    }
    if init_frame.shape() != embedder.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", embedder.input_shape()),
            got: format!("{:?}", init_frame.shape()),
        });
    }
    let mut current = match cfg.init {
        InversionInit::InputFrame => init_frame.clone(),
        InversionInit::Zeros => Frame::zeros(init_frame.height(), init_frame.width()),
    };
    let mut current_obj = objective(embedder, &target.0, &current, cfg)?;
    if !current_obj.is_finite() {
        return Err(Error::Diverged("objective not finite at initialization".into()));
    }
    let mut best = current.clone();
    let mut best_obj = current_obj;
    let mut step = cfg.step_size;
    for iter in 0..cfg.max_iters {
        let grad = objective_gradient(embedder, &target.0, &current, cfg)?;
        let grad_norm = crate::linalg::l2_norm(&grad);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged(format!(
                "gradient not finite at iter {iter}, objective {current_obj}"
            )));
        }
        if grad_norm < cfg.tol {
            break;
        }
        // backtracking: halve until the objective stops increasing
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = clamp_step(&current, &grad, step);
            let obj = objective(embedder, &target.0, &candidate, cfg)?;
            if obj.is_nan() {
                return Err(Error::Diverged(format!(
                    "objective NaN at iter {iter}, last accepted {current_obj}"
                )));
            }
            if obj <= current_obj {
                current = candidate;
                current_obj = obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if current_obj < best_obj {
            best = current.clone();
            best_obj = current_obj;
        }
    }
    Ok((best, best_obj))
}
