//! Common interface of all allocation strategies, a name-keyed registry,
//! and the training / evaluation loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{QAgent, QKind};
use super::checkpoint::Checkpoint;
use super::TrainConfig;
use crate::baseline::{solve_node_relaxed, solve_relaxed_greedy};
use crate::env::{Action, Env, EnvConfig, StepResult};
use crate::error::{Error, Result};
use crate::params::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

/// A resource-allocation strategy driving every node of an [`Env`].
pub trait Policy {
    fn name(&self) -> &str;

    /// Joint decision for the current environment state.
    fn act(&mut self, env: &Env, phase: Phase) -> Result<Vec<Action>>;

    /// Called after [`Env::step`] during training with the post-step env.
    fn learn(&mut self, _step: &StepResult, _next: &Env) -> Result<Option<f64>> {
        Ok(None)
    }

    fn end_episode(&mut self, _episode: usize) {}

    /// Freeze anything that adapts during training.
    fn begin_test(&mut self) {}

    fn checkpoint(&self) -> Option<Checkpoint> {
        None
    }
}

/// Construction inputs shared by every strategy.
#[derive(Debug, Clone)]
pub struct PolicyContext {
    pub params: NetworkParams,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl PolicyContext {
    /// Generator for the policy's own randomness, independent of the channel streams.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(0xA6E7);
        r
    }
}

pub type Factory = fn(&PolicyContext) -> Result<Box<dyn Policy>>;

/// Strategies selectable by name at runtime.
#[derive(Clone)]
pub struct Registry {
    entries: Vec<(&'static str, Factory)>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Self { entries: Vec::new() };
        r.register("optimization", |c| Ok(Box::new(OptimizationPolicy::new(c))));
        r.register("dqn", |c| Ok(Box::new(QAgent::new(QKind::Dqn, c)?)));
        r.register("ddqn", |c| Ok(Box::new(QAgent::new(QKind::Ddqn, c)?)));
        r.register("bdq", |c| Ok(Box::new(QAgent::new(QKind::Bdq, c)?)));
        r.register("random", |c| Ok(Box::new(RandomPolicy::new(c))));
        r
    }
}

impl Registry {
    /// Adds or replaces a strategy.
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 = factory,
            None => self.entries.push((name, factory)),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn create(&self, name: &str, ctx: &PolicyContext) -> Result<Box<dyn Policy>> {
        let (_, f) = self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::UnknownAlgorithm(format!("{name} (known: {})", self.names().join(", "))))?;
        f(ctx)
    }
}

/// Uniformly random blocklength for every node, every frame.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    m_max: u32,
}

impl RandomPolicy {
    pub fn new(ctx: &PolicyContext) -> Self {
        Self {
            rng: ctx.rng(),
            m_max: ctx.params.m_max,
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&mut self, env: &Env, _phase: Phase) -> Result<Vec<Action>> {
        Ok((0..env.n_agents())
            .map(|_| Action::Blocklength(self.rng.random_range(1..=self.m_max)))
            .collect())
    }
}

/// Relaxation-and-repair solver with full knowledge of the current gains.
pub struct OptimizationPolicy;

impl OptimizationPolicy {
    pub fn new(_ctx: &PolicyContext) -> Self {
        Self
    }
}

impl Policy for OptimizationPolicy {
    fn name(&self) -> &str {
        "optimization"
    }

    fn act(&mut self, env: &Env, _phase: Phase) -> Result<Vec<Action>> {
        let params = env.params();
        let links = env.links();
        match solve_relaxed_greedy(&links, params) {
            Ok(sol) => Ok(sol.allocation.nodes.iter().map(|n| Action::Blocklength(n.m)).collect()),
            Err(Error::Infeasible(_)) => Ok(links
                .iter()
                .map(|l| {
                    let m = solve_node_relaxed(l, params).map_or(params.blocklength_limit(), |a| a.m);
                    Action::Blocklength(m.max(1))
                })
                .collect()),
            Err(e) => Err(e),
        }
    }
}

/// Per-episode aggregate of step metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub mean_power_w: f64,
    pub mean_utilization: f64,
    /// Node-steps with a per-node constraint failure.
    pub violations: usize,
    /// Steps above the utilization bound.
    pub over_bound_steps: usize,
    pub mean_loss: Option<f64>,
}

#[derive(Default)]
struct Accum {
    steps: usize,
    reward: f64,
    power: f64,
    util: f64,
    violations: usize,
    over: usize,
    loss: f64,
    losses: usize,
}

impl Accum {
    fn add(&mut self, s: &StepResult, loss: Option<f64>) {
        self.steps += 1;
        self.reward += s.metrics.reward;
        self.power += s.metrics.total_power_w;
        self.util += s.metrics.utilization;
        self.violations += s.metrics.violations;
        self.over += usize::from(s.metrics.over_bound);
        if let Some(l) = loss {
            self.loss += l;
            self.losses += 1;
        }
    }

    fn finish(self, episode: usize) -> EpisodeSummary {
        let n = self.steps.max(1) as f64;
        EpisodeSummary {
            episode,
            steps: self.steps,
            mean_reward: self.reward / n,
            mean_power_w: self.power / n,
            mean_utilization: self.util / n,
            violations: self.violations,
            over_bound_steps: self.over,
            mean_loss: (self.losses > 0).then(|| self.loss / self.losses as f64),
        }
    }
}

/// Per-step observer used by the harness to persist traces.
pub type StepHook<'a> = dyn FnMut(Phase, usize, usize, &StepResult) -> Result<()> + 'a;

/// Interact and learn for `episodes` episodes.
pub fn run_training(
    policy: &mut dyn Policy,
    env: &mut Env,
    episodes: usize,
    hook: &mut StepHook<'_>,
) -> Result<Vec<EpisodeSummary>> {
    let steps = env.config().steps_per_episode;
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut acc = Accum::default();
        for t in 0..steps {
            let actions = policy.act(env, Phase::Train)?;
            let res = env.step(&actions)?;
            let loss = policy.learn(&res, env)?;
            hook(Phase::Train, ep, t, &res)?;
            acc.add(&res, loss);
        }
        policy.end_episode(ep);
        out.push(acc.finish(ep));
    }
    Ok(out)
}

/// Greedy evaluation without learning.
pub fn evaluate(
    policy: &mut dyn Policy,
    env: &mut Env,
    episodes: usize,
    hook: &mut StepHook<'_>,
) -> Result<Vec<EpisodeSummary>> {
    policy.begin_test();
    let steps = env.config().steps_per_episode;
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut acc = Accum::default();
        for t in 0..steps {
            let actions = policy.act(env, Phase::Test)?;
            let res = env.step(&actions)?;
            hook(Phase::Test, ep, t, &res)?;
            acc.add(&res, None);
        }
        out.push(acc.finish(ep));
    }
    Ok(out)
}

/// Hook that ignores every step.
pub fn no_hook(_: Phase, _: usize, _: usize, _: &StepResult) -> Result<()> {
    Ok(())
}
