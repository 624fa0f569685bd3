//! Policy network, action selection, rollouts, and REINFORCE training.
//!
//! The network is a plain two-hidden-layer ReLU MLP over the environment's
//! `[u; v]` encoding with an `N+1`-way head. Masked candidates receive a
//! `-inf` logit before the softmax so their selection probability is exactly
//! zero; the no-op head entry is never masked.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{add_scaled_vec, Matrix};
use crate::mdp::{Action, MdpConfig, SelectionEnv};
use crate::traversal::NeighborSets;
use crate::{Error, Frame, Gallery};

/// Weights of the two-hidden-layer policy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub wout: Matrix,
    pub bout: Vec<f64>,
}

impl PolicyParams {
    /// Desk-scale hidden sizes; the full-scale configuration is 4096/2048.
    pub const DESK_HIDDEN: (usize, usize) = (64, 32);

    pub fn seeded(input_dim: usize, h1: usize, h2: usize, actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w1: Matrix::seeded_uniform(h1, input_dim, &mut rng),
            b1: vec![0.0; h1],
            w2: Matrix::seeded_uniform(h2, h1, &mut rng),
            b2: vec![0.0; h2],
            wout: Matrix::seeded_uniform(actions, h2, &mut rng),
            bout: vec![0.0; actions],
        }
    }

    pub fn zeros(input_dim: usize, h1: usize, h2: usize, actions: usize) -> Self {
        Self {
            w1: Matrix::zeros(h1, input_dim),
            b1: vec![0.0; h1],
            w2: Matrix::zeros(h2, h1),
            b2: vec![0.0; h2],
            wout: Matrix::zeros(actions, h2),
            bout: vec![0.0; actions],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols
    }

    /// Head width `N + 1`.
    pub fn action_count(&self) -> usize {
        self.wout.rows
    }
}

#[derive(Debug)]
struct ForwardCache {
    input: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    probs: Vec<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

fn forward_cached(
    params: &PolicyParams,
    u: &[f64],
    v: &[f64],
    mask: &[bool],
) -> Result<ForwardCache, Error> {
    let mut input = Vec::with_capacity(u.len() + v.len());
    input.extend_from_slice(u);
    input.extend_from_slice(v);
    if input.len() != params.input_dim() {
        return Err(Error::LengthMismatch { expected: params.input_dim(), got: input.len() });
    }
    let actions = params.action_count();
    if mask.len() != actions - 1 {
        return Err(Error::LengthMismatch { expected: actions - 1, got: mask.len() });
    }
    let mut z1 = params.w1.matvec(&input);
    add_scaled_vec(&mut z1, 1.0, &params.b1);
    let h1 = relu(&z1);
    let mut z2 = params.w2.matvec(&h1);
    add_scaled_vec(&mut z2, 1.0, &params.b2);
    let h2 = relu(&z2);
    let mut logits = params.wout.matvec(&h2);
    add_scaled_vec(&mut logits, 1.0, &params.bout);
    for (j, m) in mask.iter().enumerate() {
        if !m {
            logits[j] = f64::NEG_INFINITY;
        }
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> =
        logits.iter().map(|l| if l.is_finite() { (l - max).exp() } else { 0.0 }).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    Ok(ForwardCache { input, z1, h1, z2, h2, probs })
}

/// Masked-softmax action distribution of length `N + 1`; entry `j < N` is
/// candidate `j + 1`, the last entry is the no-op.
pub fn policy_forward(
    params: &PolicyParams,
    u: &[f64],
    v: &[f64],
    mask: &[bool],
) -> Result<Vec<f64>, Error> {
    Ok(forward_cached(params, u, v, mask)?.probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectMode {
    /// Stochastic draw from the distribution (training).
    Sample,
    /// Highest probability, lowest index on ties (testing).
    Argmax,
}

pub fn action_from_index(index: usize, actions: usize) -> Action {
    if index + 1 == actions {
        Action::NoOp
    } else {
        Action::Candidate(index + 1)
    }
}

pub fn index_from_action(action: Action, actions: usize) -> usize {
    match action {
        Action::Candidate(j) => j - 1,
        Action::NoOp => actions - 1,
    }
}

pub fn select_action(probs: &[f64], mode: SelectMode, rng: &mut impl Rng) -> Action {
    let index = match mode {
        SelectMode::Argmax => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        }
        SelectMode::Sample => {
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        }
    };
    action_from_index(index, probs.len())
}

/// One recorded environment step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: Action,
    pub reward: f64,
    pub log_prob: f64,
    /// Neighbor sets after the step, by gallery id.
    pub sets_after: NeighborSets,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub mask: Vec<bool>,
}

/// A full 2K-step episode record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub total_return: f64,
}

/// Runs one full episode: encode, forward, select, step, record.
pub fn rollout(
    env: &mut SelectionEnv,
    params: &PolicyParams,
    mode: SelectMode,
    rng: &mut impl Rng,
) -> Result<EpisodeTrace, Error> {
    let mut steps = Vec::new();
    let mut total = 0.0;
    while !env.is_terminal() {
        let (u, v) = env.encode_features()?;
        let mask = env.legal_candidates();
        let probs = policy_forward(params, &u, &v, &mask)?;
        let action = select_action(&probs, mode, rng);
        let log_prob = probs[index_from_action(action, probs.len())].ln();
        let reward = env.step(action)?;
        total += reward;
        steps.push(TraceStep {
            action,
            reward,
            log_prob,
            sets_after: env.state().current_sets.clone(),
            u,
            v,
            mask,
        });
    }
    Ok(EpisodeTrace { steps, total_return: total })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnMode {
    /// Every step weighted by the episode's total return.
    Total,
    /// Step weighted by the return from that step onward.
    #[default]
    ToGo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub episodes: usize,
    pub baseline_momentum: f64,
    pub seed: u64,
    pub return_mode: ReturnMode,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            episodes: 2000,
            baseline_momentum: 0.9,
            seed: 0,
            return_mode: ReturnMode::ToGo,
            batch_size: 8,
        }
    }
}

/// Gradient accumulator with the same shapes as [`PolicyParams`].
#[derive(Debug, Clone)]
pub struct PolicyGrad {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub wout: Matrix,
    pub bout: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            w1: Matrix::zeros(params.w1.rows, params.w1.cols),
            b1: vec![0.0; params.b1.len()],
            w2: Matrix::zeros(params.w2.rows, params.w2.cols),
            b2: vec![0.0; params.b2.len()],
            wout: Matrix::zeros(params.wout.rows, params.wout.cols),
            bout: vec![0.0; params.bout.len()],
        }
    }
}

/// Accumulates `coefficient * d log pi(a|s) / d theta` into `grad` for one step.
fn accumulate_log_prob_grad(
    params: &PolicyParams,
    grad: &mut PolicyGrad,
    step: &TraceStep,
    coefficient: f64,
) -> Result<(), Error> {
    if coefficient == 0.0 {
        return Ok(());
    }
    let cache = forward_cached(params, &step.u, &step.v, &step.mask)?;
    let actions = params.action_count();
    let chosen = index_from_action(step.action, actions);
    // d log softmax: one-hot minus probabilities; masked entries already 0
    let mut g_logits: Vec<f64> = cache.probs.iter().map(|p| -coefficient * p).collect();
    g_logits[chosen] += coefficient;
    grad.wout.add_outer(1.0, &g_logits, &cache.h2);
    add_scaled_vec(&mut grad.bout, 1.0, &g_logits);
    let mut g_h2 = params.wout.tmatvec(&g_logits);
    for (g, z) in g_h2.iter_mut().zip(&cache.z2) {
        if *z <= 0.0 {
            *g = 0.0;
        }
    }
    grad.w2.add_outer(1.0, &g_h2, &cache.h1);
    add_scaled_vec(&mut grad.b2, 1.0, &g_h2);
    let mut g_h1 = params.w2.tmatvec(&g_h2);
    for (g, z) in g_h1.iter_mut().zip(&cache.z1) {
        if *z <= 0.0 {
            *g = 0.0;
        }
    }
    grad.w1.add_outer(1.0, &g_h1, &cache.input);
    add_scaled_vec(&mut grad.b1, 1.0, &g_h1);
    Ok(())
}

/// REINFORCE gradient over a batch of traces with a fixed scalar baseline.
pub fn policy_gradient(
    params: &PolicyParams,
    traces: &[EpisodeTrace],
    return_mode: ReturnMode,
    baseline: f64,
) -> Result<PolicyGrad, Error> {
    let mut grad = PolicyGrad::zeros_like(params);
    for trace in traces {
        let mut to_go = trace.total_return;
        for step in &trace.steps {
            let g = match return_mode {
                ReturnMode::Total => trace.total_return,
                ReturnMode::ToGo => to_go,
            };
            accumulate_log_prob_grad(params, &mut grad, step, g - baseline)?;
            to_go -= step.reward;
        }
    }
    Ok(grad)
}

/// Gradient-ascent step; traces are summed before the single update so
/// aggregation order cannot affect the result.
pub fn reinforce_update(
    params: &mut PolicyParams,
    traces: &[EpisodeTrace],
    cfg: &TrainConfig,
    baseline: f64,
) -> Result<(), Error> {
    if traces.is_empty() {
        return Err(Error::InvalidConfig("reinforce_update needs at least one trace".into()));
    }
    let grad = policy_gradient(params, traces, cfg.return_mode, baseline)?;
    let lr = cfg.learning_rate / traces.len() as f64;
    params.w1.add_scaled(lr, &grad.w1);
    add_scaled_vec(&mut params.b1, lr, &grad.b1);
    params.w2.add_scaled(lr, &grad.w2);
    add_scaled_vec(&mut params.b2, lr, &grad.b2);
    params.wout.add_scaled(lr, &grad.wout);
    add_scaled_vec(&mut params.bout, lr, &grad.bout);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub episode: usize,
    pub mean_return: f64,
    pub baseline: f64,
}

/// REINFORCE training loop over environments drawn from `make_env`.
///
/// The baseline is an exponential moving average of batch mean returns,
/// updated after each batch.
pub fn train<'a, F>(
    params: &mut PolicyParams,
    cfg: &TrainConfig,
    mut make_env: F,
) -> Result<Vec<TrainLogRow>, Error>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<SelectionEnv<'a>, Error>,
{
    if cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig("learning_rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.baseline_momentum) {
        return Err(Error::InvalidConfig("baseline_momentum must be in [0,1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let mut baseline = 0.0;
    let mut baseline_ready = false;
    let mut done = 0usize;
    while done < cfg.episodes {
        let batch = cfg.batch_size.min(cfg.episodes - done);
        let mut traces = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut env = make_env(&mut rng)?;
            traces.push(rollout(&mut env, params, SelectMode::Sample, &mut rng)?);
        }
        let mean_return =
            traces.iter().map(|t| t.total_return).sum::<f64>() / traces.len() as f64;
        let advantage_baseline = if baseline_ready { baseline } else { mean_return };
        reinforce_update(params, &traces, cfg, advantage_baseline)?;
        baseline = if baseline_ready {
            cfg.baseline_momentum * baseline + (1.0 - cfg.baseline_momentum) * mean_return
        } else {
            mean_return
        };
        baseline_ready = true;
        done += batch;
        log.push(TrainLogRow { episode: done, mean_return, baseline });
    }
    Ok(log)
}

pub fn write_train_log_csv(path: &Path, log: &[TrainLogRow]) -> Result<(), Error> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "episode,mean_return,baseline")?;
    for row in log {
        writeln!(out, "{},{},{}", row.episode, row.mean_return, row.baseline)?;
    }
    Ok(())
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    params: PolicyParams,
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams) -> Result<(), Error> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &Checkpoint { version: CHECKPOINT_VERSION, params: params.clone() })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, Error> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(file)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "checkpoint version {} unsupported",
            ckpt.version
        )));
    }
    Ok(ckpt.params)
}

/// One enumerated trajectory with its probability under a fixed policy.
#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub actions: Vec<Action>,
    pub probability: f64,
    pub total_return: f64,
}

/// Exhaustively enumerates every positive-probability trajectory of a tiny
/// environment under `params`. The expected return is
/// `sum(p_i * R_i)` over the outcomes.
pub fn enumerate_paths(
    env: &mut SelectionEnv,
    params: &PolicyParams,
) -> Result<Vec<PathOutcome>, Error> {
    let mut out = Vec::new();
    let mut actions = Vec::new();
    enumerate_rec(env, params, 1.0, 0.0, &mut actions, &mut out)?;
    Ok(out)
}

fn enumerate_rec(
    env: &mut SelectionEnv,
    params: &PolicyParams,
    prob: f64,
    ret: f64,
    actions: &mut Vec<Action>,
    out: &mut Vec<PathOutcome>,
) -> Result<(), Error> {
    if env.is_terminal() {
        out.push(PathOutcome { actions: actions.clone(), probability: prob, total_return: ret });
        return Ok(());
    }
    let (u, v) = env.encode_features()?;
    let mask = env.legal_candidates();
    let probs = policy_forward(params, &u, &v, &mask)?;
    for (i, p) in probs.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let action = action_from_index(i, probs.len());
        let snapshot = env.snapshot();
        let reward = env.step(action)?;
        actions.push(action);
        enumerate_rec(env, params, prob * p, ret + reward, actions, out)?;
        actions.pop();
        env.restore(snapshot);
    }
    Ok(())
}

/// Exhaustive search for a return-maximizing action sequence; ties resolve to
/// the lexicographically smallest sequence under the head ordering
/// (candidates by index, then no-op).
pub fn bruteforce_optimal(
    env: &mut SelectionEnv,
    budget: u64,
) -> Result<(Vec<Action>, f64), Error> {
    let n = env.cfg().n() as u64;
    let steps = 2 * env.cfg().k as u32;
    let need = (n + 1).saturating_pow(steps);
    if need > budget {
        return Err(Error::BudgetExceeded { need, budget });
    }
    let mut best: Option<(Vec<Action>, f64)> = None;
    let mut actions = Vec::new();
    bruteforce_rec(env, 0.0, &mut actions, &mut best)?;
    best.ok_or_else(|| Error::IllegalAction("environment has no trajectories".into()))
}

fn bruteforce_rec(
    env: &mut SelectionEnv,
    ret: f64,
    actions: &mut Vec<Action>,
    best: &mut Option<(Vec<Action>, f64)>,
) -> Result<(), Error> {
    if env.is_terminal() {
        let better = match best {
            Some((_, b)) => ret > *b,
            None => true,
        };
        if better {
            *best = Some((actions.clone(), ret));
        }
        return Ok(());
    }
    let mask = env.legal_candidates();
    let mut legal: Vec<Action> = mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| Action::Candidate(i + 1))
        .collect();
    legal.push(Action::NoOp);
    for action in legal {
        let snapshot = env.snapshot();
        let reward = env.step(action)?;
        actions.push(action);
        bruteforce_rec(env, ret + reward, actions, best)?;
        actions.pop();
        env.restore(snapshot);
    }
    Ok(())
}

/// Frame-independent per-frame K-NN sets, the no-temporal-coupling reference.
pub fn greedy_baseline(
    frame: &Frame,
    gallery: &Gallery,
    embedder: &dyn crate::embedder::Embedder,
    cfg: &MdpConfig,
) -> Result<NeighborSets, Error> {
    let query = gallery.query_for_frame(embedder, frame)?;
    Ok(NeighborSets {
        young: gallery.knn(&query, cfg.young_group, cfg.k, cfg.rank)?,
        old: gallery.knn(&query, cfg.old_group, cfg.k, cfg.rank)?,
    })
}
