//! Value-based deep RL machinery: replay, RMSprop, TD targets, ε-greedy
//! selection, and the policies built on top of them.

pub mod agent;
pub mod checkpoint;
pub mod net;
pub mod policy;

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use net::{Dense, Grads, Head, QNet};

/// Learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Initial learning rate α⁽⁰⁾.
    pub lr0: f64,
    /// Per-episode learning-rate decay λ.
    pub lr_decay: f64,
    pub eps0: f64,
    /// Per-step exploration decay β_ε.
    pub eps_decay: f64,
    /// Discount factor γ.
    pub gamma: f64,
    /// Soft target update rate τ.
    pub tau: f64,
    pub batch: usize,
    pub episodes: usize,
    pub test_episodes: usize,
    pub seeds: usize,
    pub replay_capacity: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub rms_rho: f64,
    pub rms_eps: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.03,
            lr_decay: 1e-3,
            eps0: 1.0,
            eps_decay: 1e-4,
            gamma: 0.666,
            tau: 0.001,
            batch: 32,
            episodes: 2500,
            test_episodes: 100,
            seeds: 10,
            replay_capacity: 50_000,
            grad_clip: 10.0,
            rms_rho: 0.99,
            rms_eps: 1e-8,
            hidden: vec![32, 64, 300],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidParam { field, reason });
        if !(self.lr0 > 0.0 && self.lr0 < 1.0) {
            return bad("lr0", format!("must lie in (0,1), got {}", self.lr0));
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay < 1.0) {
            return bad("lr_decay", format!("must lie in [0,1), got {}", self.lr_decay));
        }
        if !(0.0..=1.0).contains(&self.eps0) {
            return bad("eps0", format!("must lie in [0,1], got {}", self.eps0));
        }
        if !(self.eps_decay >= 0.0 && self.eps_decay < 1.0) {
            return bad("eps_decay", format!("must lie in [0,1), got {}", self.eps_decay));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma", format!("must lie in [0,1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau", format!("must lie in [0,1], got {}", self.tau));
        }
        if self.batch == 0 || self.replay_capacity < self.batch {
            return bad("batch", format!("need 1 <= batch <= replay_capacity, got {}", self.batch));
        }
        if self.episodes == 0 || self.seeds == 0 {
            return bad("episodes", "episodes and seeds must be >= 1".into());
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip", format!("must be >= 0, got {}", self.grad_clip));
        }
        if !(self.rms_rho > 0.0 && self.rms_rho < 1.0 && self.rms_eps > 0.0) {
            return bad("rms_rho", "need 0 < rho < 1 and eps > 0".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "hidden layer sizes must be >= 1".into());
        }
        Ok(())
    }

    /// ε⁽ᵗ⁾ = (1−β_ε)ᵗ·ε⁽⁰⁾ at environment step `t`.
    pub fn epsilon_at(&self, t: u64) -> f64 {
        self.eps0 * (1.0 - self.eps_decay).powf(t as f64)
    }

    /// α = (1−λ)ᵉ·α⁽⁰⁾ at episode `e`.
    pub fn lr_at(&self, episode: u64) -> f64 {
        self.lr0 * (1.0 - self.lr_decay).powf(episode as f64)
    }
}

/// One stored transition. `action` holds one index per action branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// FIFO experience memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            data: VecDeque::with_capacity(capacity.clamp(1, 1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(e);
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.data.get(i)
    }

    /// Indices of `batch` distinct stored experiences, uniformly at random.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch > self.data.len() {
            return Err(Error::domain(format!("batch {batch} exceeds buffer size {}", self.data.len())));
        }
        Ok(rand::seq::index::sample(rng, self.data.len(), batch).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.data[i]).collect())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice over `q`.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return rng.random_range(0..q.len());
    }
    argmax(q)
}

/// ε-greedy restricted to `allowed`; falls back to all actions when none is allowed.
pub fn select_action_masked<R: Rng + ?Sized>(q: &[f64], allowed: &[bool], epsilon: f64, rng: &mut R) -> usize {
    let idx: Vec<usize> = (0..q.len()).filter(|&i| allowed.get(i).copied().unwrap_or(false)).collect();
    if idx.is_empty() {
        return select_action(q, epsilon, rng);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return idx[rng.random_range(0..idx.len())];
    }
    let mut best = idx[0];
    for &i in &idx[1..] {
        if q[i] > q[best] {
            best = i;
        }
    }
    best
}

/// Bootstrap target flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// `r + γ·max_a' Q_target(s', a')`.
    Dqn,
    /// `r + γ·Q_target(s', argmax_a' Q_train(s', a'))`.
    Double,
}

/// TD targets for a batch; with several branches the bootstrap term is the
/// branch mean. Transitions are never terminal.
pub fn td_targets(
    rewards: &[f64],
    next: ArrayView2<f64>,
    target: &QNet,
    train: &QNet,
    mode: TargetMode,
    gamma: f64,
) -> Result<Vec<f64>> {
    if rewards.len() != next.nrows() {
        return Err(Error::Dimension {
            expected: next.nrows(),
            got: rewards.len(),
        });
    }
    if gamma == 0.0 {
        return Ok(rewards.to_vec());
    }
    let q_t = target.forward(next)?;
    let q_s = match mode {
        TargetMode::Double => Some(train.forward(next)?),
        TargetMode::Dqn => None,
    };
    let d = q_t.len() as f64;
    let mut y = rewards.to_vec();
    for (r, yr) in y.iter_mut().enumerate() {
        let mut boot = 0.0;
        for (b, qt) in q_t.iter().enumerate() {
            let row = qt.row(r);
            let row = row.as_slice().expect("row-major");
            boot += match &q_s {
                None => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Some(qs) => {
                    let sel = qs[b].row(r);
                    row[argmax(sel.as_slice().expect("row-major"))]
                }
            };
        }
        *yr += gamma * boot / d;
    }
    Ok(y)
}

/// RMSprop with a squared-gradient accumulator per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    sq: Vec<Dense>,
}

impl RmsProp {
    pub fn new(net: &QNet, rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            sq: net.layers().iter().map(|l| Dense::zeros(l.w.nrows(), l.w.ncols())).collect(),
        }
    }

    pub fn step(&mut self, net: &mut QNet, grads: &Grads, lr: f64) {
        let (rho, eps) = (self.rho, self.eps);
        let upd = |p: &mut f64, s: &mut f64, g: f64| {
            *s = rho * *s + (1.0 - rho) * g * g;
            *p -= lr * g / (s.sqrt() + eps);
        };
        for ((layer, sq), g) in net.layers_mut().into_iter().zip(&mut self.sq).zip(&grads.layers) {
            Zip::from(&mut layer.w).and(&mut sq.w).and(&g.w).for_each(|p, s, &g| upd(p, s, g));
            Zip::from(&mut layer.b).and(&mut sq.b).and(&g.b).for_each(|p, s, &g| upd(p, s, g));
        }
    }

    pub fn accumulators(&self) -> &[Dense] {
        &self.sq
    }
}

/// Stacks equally long rows into a matrix.
pub fn stack_rows(rows: &[&[f64]], dim: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in m.rows_mut().into_iter().zip(rows) {
        if src.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: src.len(),
            });
        }
        dst.assign(&ndarray::ArrayView1::from(*src));
    }
    Ok(m)
}

/// `Σ_r (1/D)·Σ_b (y_r − Q_b(s_r, a_rb))²` and its gradient w.r.t. each branch output.
pub fn td_loss(q: &[Array2<f64>], actions: &[Vec<usize>], targets: &[f64]) -> (f64, Vec<Array2<f64>>) {
    let d = q.len() as f64;
    let mut loss = 0.0;
    let mut dq: Vec<Array2<f64>> = q.iter().map(|x| Array2::zeros(x.raw_dim())).collect();
    for (r, (acts, &y)) in actions.iter().zip(targets).enumerate() {
        for (b, &a) in acts.iter().enumerate() {
            let err = q[b][[r, a]] - y;
            loss += err * err / d;
            dq[b][[r, a]] = 2.0 * err / d;
        }
    }
    (loss, dq)
}

/// One gradient step on a batch; returns the loss before the update.
pub fn train_step(
    net: &mut QNet,
    opt: &mut RmsProp,
    states: ArrayView2<f64>,
    actions: &[Vec<usize>],
    targets: &[f64],
    lr: f64,
    grad_clip: f64,
) -> Result<f64> {
    if actions.len() != states.nrows() || targets.len() != states.nrows() {
        return Err(Error::Dimension {
            expected: states.nrows(),
            got: actions.len().min(targets.len()),
        });
    }
    let sizes = net.head().branch_sizes();
    for a in actions {
        if a.len() != sizes.len() || a.iter().zip(&sizes).any(|(&i, &n)| i >= n) {
            return Err(Error::domain(format!("action {a:?} outside head {sizes:?}")));
        }
    }
    let (q, tape) = net.forward_tape(states)?;
    let (loss, dq) = td_loss(&q, actions, targets);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite TD loss {loss} (lr {lr}, targets in [{:e}, {:e}])",
            targets.iter().copied().fold(f64::INFINITY, f64::min),
            targets.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        )));
    }
    let mut grads = net.backward(&tape, &dq)?;
    if grad_clip > 0.0 {
        let n = grads.norm();
        if n > grad_clip {
            grads.scale(grad_clip / n);
        }
    }
    opt.step(net, &grads, lr);
    if !net.is_finite() {
        return Err(Error::Numeric("network parameters became non-finite".into()));
    }
    Ok(loss)
}

/// Largest relative discrepancy between backprop and central differences
/// for the loss `Σ_b Σ (weights_b ∘ Q_b)`.
pub fn gradient_check(net: &QNet, x: ArrayView2<f64>, weights: &[Array2<f64>], h: f64) -> Result<f64> {
    let (_, tape) = net.forward_tape(x)?;
    let grads = net.backward(&tape, weights)?;
    let analytic: Vec<f64> = grads
        .layers
        .iter()
        .flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>())
        .collect();
    let loss = |n: &QNet| -> Result<f64> {
        let q = n.forward(x)?;
        Ok(q.iter().zip(weights).map(|(a, w)| (a * w).sum()).sum())
    };
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut theta = base.clone();
    for i in 0..base.len() {
        theta[i] = base[i] + h;
        probe.set_flat_params(&theta)?;
        let up = loss(&probe)?;
        theta[i] = base[i] - h;
        probe.set_flat_params(&theta)?;
        let down = loss(&probe)?;
        theta[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
