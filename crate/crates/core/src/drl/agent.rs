//! Value-based multi-agent learner. All agents share one train network and
//! one target network; each agent's state lists its own node first.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::net::{Head, QNet};
use super::policy::{Phase, Policy, PolicyContext};
use super::{select_action, select_action_masked, stack_rows, td_targets, train_step, Experience, ReplayBuffer, RmsProp, TargetMode, TrainConfig};
use crate::env::{transform, Action, ActionMode, Env, EnvConfig, RunningStats, StepResult};
use crate::error::{Error, Result};
use crate::params::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QKind {
    /// Plain head over blocklengths, max-based target.
    Dqn,
    /// Dueling head over blocklengths, double-Q target.
    Ddqn,
    /// Branching dueling head over (m, h, p), double-Q target per branch.
    Bdq,
}

impl QKind {
    pub fn name(self) -> &'static str {
        match self {
            QKind::Dqn => "dqn",
            QKind::Ddqn => "ddqn",
            QKind::Bdq => "bdq",
        }
    }

    pub fn mode(self) -> ActionMode {
        match self {
            QKind::Bdq => ActionMode::Joint,
            _ => ActionMode::Reduced,
        }
    }

    fn target_mode(self) -> TargetMode {
        match self {
            QKind::Dqn => TargetMode::Dqn,
            _ => TargetMode::Double,
        }
    }

    pub fn head(self, params: &NetworkParams, env: &EnvConfig) -> Head {
        let n_m = params.m_max as usize;
        match self {
            QKind::Dqn => Head::Plain(n_m),
            QKind::Ddqn => Head::Dueling(n_m),
            QKind::Bdq => Head::Branching(vec![n_m, env.h_levels, env.p_levels]),
        }
    }
}

pub struct QAgent {
    kind: QKind,
    train: QNet,
    target: QNet,
    opt: RmsProp,
    buffer: ReplayBuffer,
    stats: RunningStats,
    rng: ChaCha8Rng,
    cfg: TrainConfig,
    env_cfg: EnvConfig,
    params: NetworkParams,
    steps: u64,
    episode: u64,
    last_states: Vec<Vec<f64>>,
    last_actions: Vec<Vec<usize>>,
}

impl QAgent {
    pub fn new(kind: QKind, ctx: &PolicyContext) -> Result<Self> {
        ctx.train.validate()?;
        ctx.env.validate()?;
        let mut rng = ctx.rng();
        let dim = kind.mode().state_len(ctx.params.n_nodes);
        let train = QNet::new(dim, &ctx.train.hidden, kind.head(&ctx.params, &ctx.env), &mut rng)?;
        Ok(Self::assemble(kind, ctx, train, RunningStats::new(dim), rng))
    }

    /// Agent restored from a checkpoint (network, normalization and RNG).
    pub fn from_checkpoint(kind: QKind, ctx: &PolicyContext, ck: Checkpoint) -> Result<Self> {
        let dim = kind.mode().state_len(ctx.params.n_nodes);
        if ck.net.input_dim() != dim || ck.stats.dim() != dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint input {} does not match {} nodes",
                ck.net.input_dim(),
                ctx.params.n_nodes
            )));
        }
        if ck.net.head() != &kind.head(&ctx.params, &ctx.env) {
            return Err(Error::Checkpoint(format!("checkpoint head {:?} does not match {}", ck.net.head(), kind.name())));
        }
        Ok(Self::assemble(kind, ctx, ck.net, ck.stats, ck.rng))
    }

    fn assemble(kind: QKind, ctx: &PolicyContext, train: QNet, stats: RunningStats, rng: ChaCha8Rng) -> Self {
        Self {
            kind,
            target: train.clone(),
            opt: RmsProp::new(&train, ctx.train.rms_rho, ctx.train.rms_eps),
            train,
            buffer: ReplayBuffer::new(ctx.train.replay_capacity),
            stats,
            rng,
            cfg: ctx.train.clone(),
            env_cfg: ctx.env.clone(),
            params: ctx.params.clone(),
            steps: 0,
            episode: 0,
            last_states: Vec::new(),
            last_actions: Vec::new(),
        }
    }

    pub fn kind(&self) -> QKind {
        self.kind
    }

    pub fn network(&self) -> &QNet {
        &self.train
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn normalized_batch(&self, rows: &[&[f64]]) -> Result<Array2<f64>> {
        let dim = self.train.input_dim();
        let mut x = stack_rows(rows, dim)?;
        for mut row in x.rows_mut() {
            let raw = row.to_vec();
            self.stats.normalize_into(&raw, row.as_slice_mut().expect("row-major"));
        }
        Ok(x)
    }

    fn to_action(&self, idx: &[usize]) -> Action {
        let m = idx[0] as u32 + 1;
        match self.kind {
            QKind::Bdq => {
                let (k, _) = self.env_cfg.h_level(idx[1], &self.params);
                Action::Joint {
                    m,
                    k,
                    p: self.env_cfg.p_level(idx[2]),
                }
            }
            _ => Action::Blocklength(m),
        }
    }

    /// Exploration rate for the next decision.
    pub fn epsilon(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Test => 0.0,
            Phase::Train if self.buffer.len() < self.cfg.batch => 1.0,
            Phase::Train => self.cfg.epsilon_at(self.steps),
        }
    }

    fn learn_batch(&mut self) -> Result<f64> {
        let idx = self.buffer.sample_indices(self.cfg.batch, &mut self.rng)?;
        let batch: Vec<&Experience> = idx.iter().map(|&i| self.buffer.get(i).expect("sampled index")).collect();
        let states: Vec<&[f64]> = batch.iter().map(|e| e.state.as_slice()).collect();
        let next: Vec<&[f64]> = batch.iter().map(|e| e.next_state.as_slice()).collect();
        let actions: Vec<Vec<usize>> = batch.iter().map(|e| e.action.clone()).collect();
        let rewards: Vec<f64> = batch.iter().map(|e| e.reward).collect();
        let s = self.normalized_batch(&states)?;
        let s2 = self.normalized_batch(&next)?;
        let y = td_targets(&rewards, s2.view(), &self.target, &self.train, self.kind.target_mode(), self.cfg.gamma)?;
        let lr = self.cfg.lr_at(self.episode);
        let loss = train_step(&mut self.train, &mut self.opt, s.view(), &actions, &y, lr, self.cfg.grad_clip)?;
        self.target.soft_update_from(&self.train, self.cfg.tau);
        Ok(loss)
    }
}

impl Policy for QAgent {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn act(&mut self, env: &Env, phase: Phase) -> Result<Vec<Action>> {
        let n = env.n_agents();
        let raw = env.observe(self.kind.mode());
        let states: Vec<Vec<f64>> = raw.iter().map(|s| transform(s, n)).collect();
        if phase == Phase::Train {
            for s in &states {
                self.stats.update(s);
            }
        }
        let eps = self.epsilon(phase);
        let sizes = self.train.head().branch_sizes();
        let q = if eps < 1.0 {
            let rows: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
            Some(self.train.forward(self.normalized_batch(&rows)?.view())?)
        } else {
            None
        };
        let mask = self.env_cfg.mask_infeasible && self.kind.mode() == ActionMode::Reduced;
        let mut chosen = Vec::with_capacity(n);
        for i in 0..n {
            let allowed = mask.then(|| env.feasible_blocklengths(i));
            let mut idx = Vec::with_capacity(sizes.len());
            for (b, &size) in sizes.iter().enumerate() {
                let a = match &q {
                    Some(q) => {
                        let row = q[b].row(i);
                        let row = row.as_slice().expect("row-major");
                        match (&allowed, b) {
                            (Some(al), 0) => select_action_masked(row, al, eps, &mut self.rng),
                            _ => select_action(row, eps, &mut self.rng),
                        }
                    }
                    None => match (&allowed, b) {
                        (Some(al), 0) => select_action_masked(&vec![0.0; size], al, 1.0, &mut self.rng),
                        _ => self.rng.random_range(0..size),
                    },
                };
                idx.push(a);
            }
            chosen.push(idx);
        }
        let actions = chosen.iter().map(|idx| self.to_action(idx)).collect();
        self.last_actions = chosen;
        self.last_states = states;
        Ok(actions)
    }

    fn learn(&mut self, step: &StepResult, next: &Env) -> Result<Option<f64>> {
        if self.last_states.len() != next.n_agents() {
            return Err(Error::domain("learn called without a preceding act"));
        }
        let n = next.n_agents();
        let raw = next.observe(self.kind.mode());
        let reward = step.reward.total;
        let states = std::mem::take(&mut self.last_states);
        let actions = std::mem::take(&mut self.last_actions);
        for ((s, a), s2) in states.into_iter().zip(actions).zip(raw) {
            self.buffer.push(Experience {
                state: s,
                action: a,
                reward,
                next_state: transform(&s2, n),
            });
        }
        self.steps += 1;
        if self.buffer.len() < self.cfg.batch {
            return Ok(None);
        }
        self.learn_batch().map(Some)
    }

    fn end_episode(&mut self, _episode: usize) {
        self.episode += 1;
    }

    fn begin_test(&mut self) {
        self.stats.freeze();
    }

    fn checkpoint(&self) -> Option<Checkpoint> {
        Some(Checkpoint {
            net: self.train.clone(),
            stats: self.stats.clone(),
            rng: self.rng.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use crate::drl::policy::{evaluate, no_hook, run_training};

    fn ctx() -> PolicyContext {
        PolicyContext {
            params: NetworkParams {
                n_nodes: 2,
                m_max: 20,
                ..NetworkParams::default()
            },
            env: EnvConfig {
                steps_per_episode: 20,
                h_levels: 8,
                p_levels: 8,
                ..EnvConfig::default()
            },
            train: TrainConfig {
                hidden: vec![16, 16],
                batch: 8,
                ..TrainConfig::default()
            },
            seed: 11,
        }
    }

    #[test]
    fn training_is_deterministic() {
        let c = ctx();
        let run = || {
            let mut env = Env::new(c.params.clone(), c.env.clone(), &ChannelConfig::default(), 0).unwrap();
            let mut a = QAgent::new(QKind::Ddqn, &c).unwrap();
            let tr = run_training(&mut a, &mut env, 3, &mut no_hook).unwrap();
            (tr, a.network().flat_params())
        };
        let (t1, p1) = run();
        let (t2, p2) = run();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn buffer_fills_with_one_entry_per_agent() {
        let c = ctx();
        let mut env = Env::new(c.params.clone(), c.env.clone(), &ChannelConfig::default(), 0).unwrap();
        let mut a = QAgent::new(QKind::Bdq, &c).unwrap();
        run_training(&mut a, &mut env, 1, &mut no_hook).unwrap();
        assert_eq!(a.buffer().len(), 2 * 20);
        assert_eq!(a.buffer().get(0).unwrap().action.len(), 3);
        assert_eq!(a.buffer().get(0).unwrap().state.len(), 5 * 2 + 3);
    }

    #[test]
    fn checkpoint_restores_greedy_policy() {
        let c = ctx();
        let mut env = Env::new(c.params.clone(), c.env.clone(), &ChannelConfig::default(), 0).unwrap();
        let mut a = QAgent::new(QKind::Dqn, &c).unwrap();
        run_training(&mut a, &mut env, 2, &mut no_hook).unwrap();
        let ck = a.checkpoint().unwrap();
        let mut b = QAgent::from_checkpoint(QKind::Dqn, &c, ck).unwrap();
        let mut e1 = env.clone();
        let mut e2 = env;
        let r1 = evaluate(&mut a, &mut e1, 1, &mut no_hook).unwrap();
        let r2 = evaluate(&mut b, &mut e2, 1, &mut no_hook).unwrap();
        assert_eq!(r1, r2);
        assert!(QAgent::from_checkpoint(QKind::Ddqn, &c, a.checkpoint().unwrap()).is_err());
    }

    #[test]
    fn masked_actions_are_feasible() {
        let mut c = ctx();
        c.env.mask_infeasible = true;
        let mut env = Env::new(c.params.clone(), c.env.clone(), &ChannelConfig::default(), 0).unwrap();
        let mut a = QAgent::new(QKind::Dqn, &c).unwrap();
        let tr = run_training(&mut a, &mut env, 2, &mut no_hook).unwrap();
        assert!(tr.iter().all(|e| e.violations == 0));
    }
}
