//! Multi-agent environment: per-agent states, action resolution against the
//! current channel, and the shared reward.

use serde::{Deserialize, Serialize};

use crate::channel::{Channel, ChannelConfig};
use crate::control::{allocation_for_k, k_star, lemma_allocation, retry_cap, Allocation, Infeasible, NodeAllocation};
use crate::error::{Error, Result};
use crate::params::{LinkCoefficient, NetworkParams};
use crate::phy;

/// Environment and reward hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Weight `w` of the objective part of the reward.
    pub reward_weight: f64,
    /// Reward for meeting the utilization bound.
    pub r_pos: f64,
    /// Penalty slope `C` (negative) on utilization excess.
    pub penalty: f64,
    /// Multiplier applied to the power term of the reward (1 = watts).
    pub power_scale: f64,
    /// Steps per episode.
    pub steps_per_episode: usize,
    /// Restrict blocklength actions to those with a feasible retry count.
    pub mask_infeasible: bool,
    /// Also charge the best-effort power of violating nodes in the objective
    /// term. Off: such nodes pay only the penalty.
    pub charge_best_effort: bool,
    /// Number of sampling-period levels `Ω/k`, k = 1..=h_levels (joint actions).
    pub h_levels: usize,
    /// Number of log-uniform error-probability levels (joint actions).
    pub p_levels: usize,
    pub p_level_min: f64,
    pub p_level_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            reward_weight: 0.5,
            r_pos: 0.1,
            penalty: -10.0,
            power_scale: 1.0,
            steps_per_episode: 100,
            mask_infeasible: false,
            charge_best_effort: false,
            h_levels: 512,
            p_levels: 512,
            p_level_min: 1e-7,
            p_level_max: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidParam { field, reason });
        if !(self.reward_weight > 0.0 && self.reward_weight <= 1.0) {
            return bad("reward_weight", format!("must lie in (0,1], got {}", self.reward_weight));
        }
        if !(self.r_pos > 0.0 && self.r_pos.is_finite()) {
            return bad("r_pos", format!("must be > 0, got {}", self.r_pos));
        }
        if !(self.penalty < 0.0 && self.penalty.is_finite()) {
            return bad("penalty", format!("must be < 0, got {}", self.penalty));
        }
        if !(self.power_scale > 0.0 && self.power_scale.is_finite()) {
            return bad("power_scale", format!("must be > 0, got {}", self.power_scale));
        }
        if self.steps_per_episode == 0 {
            return bad("steps_per_episode", "must be >= 1".into());
        }
        if self.h_levels == 0 || self.p_levels == 0 {
            return bad("h_levels", "level counts must be >= 1".into());
        }
        if !(self.p_level_min > 0.0 && self.p_level_min <= self.p_level_max && self.p_level_max < 1.0) {
            return bad(
                "p_level_min",
                format!("need 0 < min <= max < 1, got [{}, {}]", self.p_level_min, self.p_level_max),
            );
        }
        Ok(())
    }

    /// Sampling period `Ω/k` of level `j` (zero-based).
    pub fn h_level(&self, j: usize, params: &NetworkParams) -> (u64, f64) {
        let k = j as u64 + 1;
        (k, params.mati_s / k as f64)
    }

    /// Error probability of level `j`, log-uniform between the bounds.
    pub fn p_level(&self, j: usize) -> f64 {
        if self.p_levels == 1 {
            return self.p_level_max;
        }
        let t = j as f64 / (self.p_levels - 1) as f64;
        (self.p_level_min.ln() + t * (self.p_level_max.ln() - self.p_level_min.ln())).exp()
    }
}

/// Which state layout and action space an agent uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    /// Blocklength only; retry count, period and error probability follow.
    Reduced,
    /// Blocklength, sampling period and error probability chosen jointly.
    Joint,
}

impl ActionMode {
    pub fn state_len(self, n: usize) -> usize {
        match self {
            ActionMode::Reduced => 3 * n + 3,
            ActionMode::Joint => 5 * n + 3,
        }
    }
}

/// One node's decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Action {
    Blocklength(u32),
    Joint { m: u32, k: u64, p: f64 },
}

/// Per-node constraint failures of a resolved action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Violations {
    /// Delay above the MAD or above the sampling period.
    pub mad: bool,
    /// MATI reliability not met.
    pub reliability: bool,
    /// Required power above `W_max` (clamped).
    pub tx_power: bool,
}

impl Violations {
    pub fn any(&self) -> bool {
        self.mad || self.reliability || self.tx_power
    }
}

/// Action resolved against the current channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeOutcome {
    pub alloc: NodeAllocation,
    pub violations: Violations,
}

/// Transmit at full power with the most retries that fit in one MATI window.
fn best_effort(m: u32, link: &LinkCoefficient, params: &NetworkParams) -> NodeAllocation {
    let k = retry_cap(m, params).max(1);
    let h = params.mati_s / k as f64;
    let snr = link.max_snr(params);
    let p = phy::packet_error_prob(m, link.bits, snr).unwrap_or(1.0);
    let d = f64::from(m) / params.bandwidth_hz;
    let power = (params.w_tx_max + params.w_circuit) * d / h;
    NodeAllocation {
        m,
        k,
        h,
        p,
        w_tx: params.w_tx_max,
        d,
        power,
    }
}

/// Resolve a blocklength action with the optimal retry count.
pub fn resolve_blocklength(m: u32, link: &LinkCoefficient, params: &NetworkParams) -> Result<NodeOutcome> {
    if m == 0 || m > params.m_max {
        return Err(Error::domain(format!("blocklength action {m} outside 1..={}", params.m_max)));
    }
    let mut violations = Violations::default();
    let alloc = match lemma_allocation(m, link, params) {
        Ok(a) => a,
        Err(Infeasible::DelayAboveMad) => {
            violations.mad = true;
            match k_star(m, link, params) {
                Ok(k) => allocation_for_k(m, k, link, params),
                Err(_) => {
                    violations.reliability = true;
                    best_effort(m, link, params)
                }
            }
        }
        Err(_) => {
            violations.reliability = true;
            best_effort(m, link, params)
        }
    };
    Ok(NodeOutcome { alloc, violations })
}

/// Resolve a joint `(m, k, p)` action; power is clamped to `W_max`.
pub fn resolve_joint(m: u32, k: u64, p: f64, link: &LinkCoefficient, params: &NetworkParams) -> Result<NodeOutcome> {
    if m == 0 || m > params.m_max {
        return Err(Error::domain(format!("blocklength action {m} outside 1..={}", params.m_max)));
    }
    if k == 0 || !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("invalid joint action k={k} p={p}")));
    }
    let mut violations = Violations {
        // d ≤ Δ and d ≤ h
        mad: m > params.mad_blocklength_limit() || k > retry_cap(m, params),
        ..Violations::default()
    };
    let ln_target = (1.0 - params.mati_prob).ln();
    let mut p_eff = p;
    let mut w_tx = phy::required_tx_power(m, link.bits, p, link.c1)?;
    if w_tx > params.w_tx_max {
        violations.tx_power = true;
        w_tx = params.w_tx_max;
        p_eff = phy::packet_error_prob(m, link.bits, link.max_snr(params))?;
    }
    if k as f64 * p_eff.ln() > ln_target * (1.0 - 1e-12) {
        violations.reliability = true;
    }
    let h = params.mati_s / k as f64;
    let d = f64::from(m) / params.bandwidth_hz;
    let power = (w_tx + params.w_circuit) * d / h;
    Ok(NodeOutcome {
        alloc: NodeAllocation {
            m,
            k,
            h,
            p: p_eff,
            w_tx,
            d,
            power,
        },
        violations,
    })
}

pub fn resolve(action: Action, link: &LinkCoefficient, params: &NetworkParams) -> Result<NodeOutcome> {
    match action {
        Action::Blocklength(m) => resolve_blocklength(m, link, params),
        Action::Joint { m, k, p } => resolve_joint(m, k, p, link, params),
    }
}

/// Decomposed shared reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reward {
    /// Objective part `r_g` (negative scaled power).
    pub objective: f64,
    /// Constraint part summed over agents.
    pub constraint: f64,
    pub total: f64,
}

/// Shared reward of a joint allocation. `violating[i]` marks nodes with
/// per-node constraint failures (missing entries count as satisfied); each
/// adds one unit of excess at slope `C`.
pub fn global_reward(alloc: &Allocation, violating: &[bool], params: &NetworkParams, cfg: &EnvConfig) -> Reward {
    let n = alloc.nodes.len() as f64;
    let charged: f64 = alloc
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| cfg.charge_best_effort || !violating.get(*i).copied().unwrap_or(false))
        .map(|(_, a)| a.power)
        .sum();
    let objective = -cfg.power_scale * charged;
    let violating_nodes = violating.iter().filter(|&&v| v).count();
    let util = alloc.utilization(params).total;
    let per_agent = if util <= params.util_bound {
        cfg.r_pos
    } else {
        cfg.penalty * (util - params.util_bound)
    };
    let constraint = n * per_agent + cfg.penalty * violating_nodes as f64;
    let w = cfg.reward_weight;
    Reward {
        objective,
        constraint,
        total: w * objective + (1.0 - w) * constraint,
    }
}

/// Feature vector for agent `own`, rotated so the agent's own node comes
/// first in every per-node block. Raw physical values; see [`transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub m_prev: Vec<f64>,
    /// Coding rate of the previous decision, bits/s/Hz.
    pub rate_prev: f64,
    /// Previous transmit powers, watts.
    pub w_prev: Vec<f64>,
    pub total_power_prev: f64,
    /// `g⁽ᵗ⁾·W⁽ᵗ⁻¹⁾/σ²` of the own node.
    pub snr_now: f64,
    pub gains_now: Vec<f64>,
}

impl AgentState {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.m_prev.len() + 3);
        v.extend_from_slice(&self.m_prev);
        v.push(self.rate_prev);
        v.extend_from_slice(&self.w_prev);
        v.push(self.total_power_prev);
        v.push(self.snr_now);
        v.extend_from_slice(&self.gains_now);
        v
    }
}

/// [`AgentState`] plus the previous sampling periods and error probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BdqState {
    pub base: AgentState,
    pub h_prev: Vec<f64>,
    pub p_prev: Vec<f64>,
}

impl BdqState {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.base.flatten();
        v.extend_from_slice(&self.h_prev);
        v.extend_from_slice(&self.p_prev);
        v
    }
}

/// Feature kinds in a flattened state, used for the log transform.
fn feature_is_log(idx: usize, n: usize) -> bool {
    // [m (n), rate, w (n), total, snr, g (n), h (n), p (n)]
    let m_end = n;
    let rate = n;
    idx != rate && idx >= m_end
}

/// Elementwise log10 of positive-scale features; blocklengths and rate pass through.
pub fn transform(raw: &[f64], n: usize) -> Vec<f64> {
    raw.iter()
        .enumerate()
        .map(|(i, &x)| if feature_is_log(i, n) { x.max(1e-300).log10() } else { x })
        .collect()
}

/// Inverse of [`transform`].
pub fn untransform(t: &[f64], n: usize) -> Vec<f64> {
    t.iter()
        .enumerate()
        .map(|(i, &x)| if feature_is_log(i, n) { 10f64.powf(x) } else { x })
        .collect()
}

/// Per-feature running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    frozen: bool,
}

/// Normalized inputs are clipped to this magnitude.
pub const NORM_CLIP: f64 = 10.0;

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn update(&mut self, x: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1;
        let c = self.count as f64;
        for ((mu, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *mu;
            *mu += d / c;
            *m2 += d * (v - *mu);
        }
    }

    fn std(&self, i: usize) -> f64 {
        if self.count < 2 {
            return 1.0;
        }
        (self.m2[i] / (self.count - 1) as f64).sqrt()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standardize; features with zero spread map to 0.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = self.std(i);
                let z = if s > 1e-12 { (v - self.mean[i]) / s } else { v - self.mean[i] };
                z.clamp(-NORM_CLIP, NORM_CLIP)
            })
            .collect()
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, (o, &v)) in out.iter_mut().zip(x).enumerate() {
            let s = self.std(i);
            let z = if s > 1e-12 { (v - self.mean[i]) / s } else { v - self.mean[i] };
            *o = z.clamp(-NORM_CLIP, NORM_CLIP);
        }
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = self.std(i);
                if s > 1e-12 {
                    v * s + self.mean[i]
                } else {
                    v + self.mean[i]
                }
            })
            .collect()
    }

    /// Raw `(count, mean, m2)` for checkpoints.
    pub fn raw_parts(&self) -> (u64, &[f64], &[f64]) {
        (self.count, &self.mean, &self.m2)
    }

    pub fn from_raw_parts(count: u64, mean: Vec<f64>, m2: Vec<f64>) -> Result<Self> {
        if mean.len() != m2.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: m2.len(),
            });
        }
        Ok(Self {
            count,
            mean,
            m2,
            frozen: false,
        })
    }
}

/// Metrics of one environment step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub reward: f64,
    pub objective: f64,
    pub constraint: f64,
    pub total_power_w: f64,
    pub utilization: f64,
    /// Nodes with per-node constraint failures.
    pub violations: usize,
    /// Whether the utilization bound was exceeded.
    pub over_bound: bool,
}

/// Result of [`Env::step`].
#[derive(Debug, Clone)]
pub struct StepResult {
    pub outcomes: Vec<NodeOutcome>,
    pub reward: Reward,
    pub metrics: StepMetrics,
}

/// The wireless control network seen by the agents.
#[derive(Debug, Clone)]
pub struct Env {
    params: NetworkParams,
    cfg: EnvConfig,
    channel: Channel,
    prev: Vec<NodeOutcome>,
    steps: u64,
}

impl Env {
    pub fn new(params: NetworkParams, cfg: EnvConfig, channel_cfg: &ChannelConfig, trace: u32) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        channel_cfg.validate()?;
        let channel = Channel::new(params.n_nodes, channel_cfg, trace);
        Self::with_channel(params, cfg, channel)
    }

    pub fn with_channel(params: NetworkParams, cfg: EnvConfig, channel: Channel) -> Result<Self> {
        if channel.state().n_nodes() != params.n_nodes {
            return Err(Error::Dimension {
                expected: params.n_nodes,
                got: channel.state().n_nodes(),
            });
        }
        let mut env = Self {
            params,
            cfg,
            channel,
            prev: Vec::new(),
            steps: 0,
        };
        env.reset_history()?;
        Ok(env)
    }

    /// Previous decisions start at the largest admissible blocklength.
    fn reset_history(&mut self) -> Result<()> {
        let m0 = self.params.blocklength_limit().max(1);
        self.prev = self
            .links()
            .iter()
            .map(|l| resolve_blocklength(m0, l, &self.params))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Switch to a fresh fading trace on the same deployment. The previous
    /// decisions carry over, so the first observation on the new trace looks
    /// like any other mid-run observation.
    pub fn restart_trace(&mut self, trace: u32) {
        self.channel.restart_trace(trace);
        self.steps = 0;
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn n_agents(&self) -> usize {
        self.params.n_nodes
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn previous(&self) -> &[NodeOutcome] {
        &self.prev
    }

    /// Link coefficients under the current gains.
    pub fn links(&self) -> Vec<LinkCoefficient> {
        self.channel
            .state()
            .gain
            .iter()
            .enumerate()
            .map(|(i, &g)| self.params.link(i, g))
            .collect()
    }

    fn rotate(v: &[f64], own: usize) -> Vec<f64> {
        let mut r = Vec::with_capacity(v.len());
        r.extend_from_slice(&v[own..]);
        r.extend_from_slice(&v[..own]);
        r
    }

    pub fn agent_state(&self, own: usize) -> AgentState {
        let g = &self.channel.state().gain;
        let m: Vec<f64> = self.prev.iter().map(|o| f64::from(o.alloc.m)).collect();
        let w: Vec<f64> = self.prev.iter().map(|o| o.alloc.w_tx).collect();
        let own_prev = &self.prev[own].alloc;
        AgentState {
            m_prev: Self::rotate(&m, own),
            rate_prev: self.params.bits(own) / f64::from(own_prev.m),
            w_prev: Self::rotate(&w, own),
            total_power_prev: self.prev.iter().map(|o| o.alloc.power).sum(),
            snr_now: g[own] * own_prev.w_tx / self.params.noise_power_w,
            gains_now: Self::rotate(g, own),
        }
    }

    pub fn bdq_state(&self, own: usize) -> BdqState {
        let h: Vec<f64> = self.prev.iter().map(|o| o.alloc.h).collect();
        let p: Vec<f64> = self.prev.iter().map(|o| o.alloc.p).collect();
        BdqState {
            base: self.agent_state(own),
            h_prev: Self::rotate(&h, own),
            p_prev: Self::rotate(&p, own),
        }
    }

    /// Flattened raw state of every agent for the given action mode.
    pub fn observe(&self, mode: ActionMode) -> Vec<Vec<f64>> {
        (0..self.n_agents())
            .map(|i| match mode {
                ActionMode::Reduced => self.agent_state(i).flatten(),
                ActionMode::Joint => self.bdq_state(i).flatten(),
            })
            .collect()
    }

    /// Blocklength actions that have a feasible retry count under the current gains.
    pub fn feasible_blocklengths(&self, node: usize) -> Vec<bool> {
        let link = self.params.link(node, self.channel.state().gain[node]);
        // same test as lemma_allocation without solving for the power
        let mad = self.params.mad_blocklength_limit();
        (1..=self.params.m_max)
            .map(|m| m <= mad && k_star(m, &link, &self.params).is_ok())
            .collect()
    }

    /// Resolve a joint action against the current channel without advancing.
    pub fn evaluate(&self, actions: &[Action]) -> Result<(Vec<NodeOutcome>, Reward, StepMetrics)> {
        if actions.len() != self.n_agents() {
            return Err(Error::Dimension {
                expected: self.n_agents(),
                got: actions.len(),
            });
        }
        let links = self.links();
        let outcomes: Vec<NodeOutcome> = actions
            .iter()
            .zip(&links)
            .map(|(&a, l)| resolve(a, l, &self.params))
            .collect::<Result<_>>()?;
        let alloc = Allocation {
            nodes: outcomes.iter().map(|o| o.alloc).collect(),
        };
        let mask: Vec<bool> = outcomes.iter().map(|o| o.violations.any()).collect();
        let violating = mask.iter().filter(|&&v| v).count();
        let reward = global_reward(&alloc, &mask, &self.params, &self.cfg);
        let util = alloc.utilization(&self.params).total;
        let metrics = StepMetrics {
            reward: reward.total,
            objective: reward.objective,
            constraint: reward.constraint,
            total_power_w: alloc.total_power(),
            utilization: util,
            violations: violating,
            over_bound: util > self.params.util_bound,
        };
        Ok((outcomes, reward, metrics))
    }

    /// Apply one joint action, then advance the fading by one frame.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        let (outcomes, reward, metrics) = self.evaluate(actions)?;
        self.prev.clone_from(&outcomes);
        self.channel.step();
        self.steps += 1;
        Ok(StepResult {
            outcomes,
            reward,
            metrics,
        })
    }
}

/// One JSON-lines metrics record.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord<'a> {
    pub phase: &'a str,
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    #[serde(rename = "total_power_W")]
    pub total_power_w: f64,
    pub utilization: f64,
    pub violations: usize,
}
