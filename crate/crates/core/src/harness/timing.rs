use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::ExperimentConfig;
use crate::drl::policy::{Phase, PolicyContext, Registry};
use crate::env::{Action, Env};
use crate::error::{Error, Result};
use crate::params::NetworkParams;

/// Per-step decision latency of one algorithm at one network size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub algorithm: String,
    pub n_nodes: usize,
    pub steps: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p90_ms: f64,
    /// FNV-1a digest of the decision sequence; equal across repeated runs.
    pub decision_digest: String,
}

fn digest(h: &mut u64, actions: &[Action]) {
    for a in actions {
        let (m, k) = match *a {
            Action::Blocklength(m) => (m, 0),
            Action::Joint { m, k, .. } => (m, k),
        };
        for b in u64::from(m).to_le_bytes().into_iter().chain(k.to_le_bytes()) {
            *h ^= u64::from(b);
            *h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Wall-clock latency of `act` per step, for each node count and algorithm.
/// Learning agents are timed in greedy mode with freshly initialized
/// networks; inference cost does not depend on the trained weights.
pub fn timing_study(cfg: &ExperimentConfig, nodes: &[usize], algorithms: &[String], out: Option<&Path>) -> Result<Vec<TimingRow>> {
    let reg = Registry::default();
    let steps = cfg.scenario.timing_steps.max(1);
    let mut rows = Vec::new();
    for &n in nodes {
        let params = NetworkParams {
            n_nodes: n,
            packet_bits_per_node: None,
            ..cfg.network.clone()
        };
        for algo in algorithms {
            let ctx = PolicyContext {
                params: params.clone(),
                env: cfg.env.clone(),
                train: cfg.train.clone(),
                seed: cfg.channel.seed,
            };
            let mut policy = reg.create(algo, &ctx)?;
            policy.begin_test();
            let mut env = Env::new(params.clone(), cfg.env.clone(), &cfg.channel, 0)?;
            let mut samples = Vec::with_capacity(steps);
            let mut h = 0xcbf2_9ce4_8422_2325u64;
            for _ in 0..steps {
                let t0 = Instant::now();
                let actions = policy.act(&env, Phase::Test)?;
                samples.push(t0.elapsed().as_secs_f64() * 1e3);
                digest(&mut h, &actions);
                env.step(&actions)?;
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            samples.sort_by(f64::total_cmp);
            rows.push(TimingRow {
                algorithm: algo.clone(),
                n_nodes: n,
                steps,
                median_ms: quantile(&samples, 0.5),
                mean_ms: mean,
                p90_ms: quantile(&samples, 0.9),
                decision_digest: format!("{h:016x}"),
            });
        }
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for r in &rows {
            w.serialize(r).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(rows)
}
