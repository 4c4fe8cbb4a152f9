use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ExperimentConfig;
use crate::channel::ChannelConfig;
use crate::drl::mean_std;
use crate::drl::policy::{evaluate, run_training, EpisodeSummary, Phase, PolicyContext, Registry};
use crate::env::{Env, MetricsRecord, StepResult};
use crate::error::{Error, Result};

/// Fading trace used for training; testing uses the next one.
const TRAIN_TRACE: u32 = 0;
const TEST_TRACE: u32 = 1;

#[derive(Debug, Clone, Serialize)]
struct DecisionRow {
    episode: usize,
    step: usize,
    node: usize,
    m: u32,
    k: u64,
    h: f64,
    p: f64,
    w_tx: f64,
    power: f64,
    violation: bool,
}

/// Outcome of one (algorithm, seed) job.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub algorithm: String,
    pub seed: u64,
    pub train: Vec<EpisodeSummary>,
    pub test: Vec<EpisodeSummary>,
}

impl SeedResult {
    pub fn test_power(&self) -> f64 {
        mean_std(&self.test.iter().map(|e| e.mean_power_w).collect::<Vec<_>>()).0
    }

    pub fn test_reward(&self) -> f64 {
        mean_std(&self.test.iter().map(|e| e.mean_reward).collect::<Vec<_>>()).0
    }
}

/// Across-seed statistics for one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub seeds: usize,
    pub test_power_mean_w: f64,
    pub test_power_std_w: f64,
    pub test_reward_mean: f64,
    pub test_reward_std: f64,
    pub test_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub root: PathBuf,
    pub rows: Vec<SummaryRow>,
    pub results: Vec<SeedResult>,
}

impl RunSummary {
    pub fn row(&self, algorithm: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm)
    }
}

pub fn seed_dir(root: &Path, algorithm: &str, seed: u64) -> PathBuf {
    root.join(algorithm).join(format!("seed_{seed}"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Sinks {
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
    decisions: csv::Writer<File>,
    decisions_path: PathBuf,
    per_step: bool,
    steps_per_episode: usize,
    episode: Option<(Phase, usize, Vec<f64>)>,
}

impl Sinks {
    fn open(dir: &Path, per_step: bool, steps_per_episode: usize) -> Result<Self> {
        let metrics_path = dir.join("metrics.jsonl");
        let decisions_path = dir.join("decisions.csv");
        Ok(Self {
            metrics: BufWriter::new(File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?),
            metrics_path,
            decisions: csv_writer(&decisions_path)?,
            decisions_path,
            per_step,
            steps_per_episode,
            episode: None,
        })
    }

    fn record(&mut self, rec: &MetricsRecord<'_>) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(self.metrics, "{line}").map_err(|e| Error::io(&self.metrics_path, e))
    }

    fn on_step(&mut self, phase: Phase, episode: usize, step: usize, res: &StepResult) -> Result<()> {
        let m = &res.metrics;
        if self.per_step {
            self.record(&MetricsRecord {
                phase: phase.as_str(),
                episode,
                step,
                reward: m.reward,
                total_power_w: m.total_power_w,
                utilization: m.utilization,
                violations: m.violations,
            })?;
        } else {
            // episode aggregate: reward, power, utilization sums and violation count
            let acc = match &mut self.episode {
                Some((p, e, acc)) if *p == phase && *e == episode => acc,
                _ => {
                    self.episode = Some((phase, episode, vec![0.0; 4]));
                    &mut self.episode.as_mut().expect("just set").2
                }
            };
            acc[0] += m.reward;
            acc[1] += m.total_power_w;
            acc[2] += m.utilization;
            acc[3] += m.violations as f64;
            if step + 1 == self.steps_per_episode {
                let n = self.steps_per_episode as f64;
                let (a0, a1, a2, a3) = (acc[0], acc[1], acc[2], acc[3]);
                self.record(&MetricsRecord {
                    phase: phase.as_str(),
                    episode,
                    step,
                    reward: a0 / n,
                    total_power_w: a1 / n,
                    utilization: a2 / n,
                    violations: a3 as usize,
                })?;
                self.episode = None;
            }
        }
        if phase == Phase::Test {
            for (node, o) in res.outcomes.iter().enumerate() {
                let a = &o.alloc;
                self.decisions
                    .serialize(DecisionRow {
                        episode,
                        step,
                        node,
                        m: a.m,
                        k: a.k,
                        h: a.h,
                        p: a.p,
                        w_tx: a.w_tx,
                        power: a.power,
                        violation: o.violations.any(),
                    })
                    .map_err(|e| Error::Config(format!("{}: {e}", self.decisions_path.display())))?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(&self.metrics_path, e))?;
        self.decisions.flush().map_err(|e| Error::io(&self.decisions_path, e))
    }
}

/// Train then test one algorithm on one seed. Without `out`, nothing is written.
pub fn run_seed(cfg: &ExperimentConfig, algorithm: &str, seed_index: usize, out: Option<&Path>) -> Result<SeedResult> {
    let seed = cfg.channel.seed + seed_index as u64;
    let channel = ChannelConfig {
        seed,
        ..cfg.channel.clone()
    };
    let ctx = PolicyContext {
        params: cfg.network.clone(),
        env: cfg.env.clone(),
        train: cfg.train.clone(),
        seed,
    };
    let mut policy = Registry::default().create(algorithm, &ctx)?;
    let mut env = Env::new(cfg.network.clone(), cfg.env.clone(), &channel, TRAIN_TRACE)?;

    let dir = out.map(|root| seed_dir(root, algorithm, seed));
    let mut sinks = match &dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            Some(Sinks::open(d, cfg.scenario.metrics_per_step, cfg.env.steps_per_episode)?)
        }
        None => None,
    };
    let mut hook = |phase: Phase, ep: usize, t: usize, res: &StepResult| -> Result<()> {
        match sinks.as_mut() {
            Some(s) => s.on_step(phase, ep, t, res),
            None => Ok(()),
        }
    };
    let train = run_training(policy.as_mut(), &mut env, cfg.train.episodes, &mut hook)?;
    env.restart_trace(TEST_TRACE);
    let test = evaluate(policy.as_mut(), &mut env, cfg.train.test_episodes, &mut hook)?;

    if let (Some(d), Some(s)) = (&dir, sinks) {
        s.finish()?;
        write_rows(&d.join("train.csv"), &train)?;
        write_rows(&d.join("test.csv"), &test)?;
        if let Some(ck) = policy.checkpoint() {
            ck.save(&d.join("checkpoint.bin"))?;
        }
    }
    Ok(SeedResult {
        algorithm: algorithm.to_string(),
        seed,
        train,
        test,
    })
}

fn summarize(algorithm: &str, results: &[&SeedResult]) -> SummaryRow {
    let power: Vec<f64> = results.iter().map(|r| r.test_power()).collect();
    let reward: Vec<f64> = results.iter().map(|r| r.test_reward()).collect();
    let (pm, ps) = mean_std(&power);
    let (rm, rs) = mean_std(&reward);
    SummaryRow {
        algorithm: algorithm.to_string(),
        seeds: results.len(),
        test_power_mean_w: pm,
        test_power_std_w: ps,
        test_reward_mean: rm,
        test_reward_std: rs,
        test_violations: results.iter().flat_map(|r| &r.test).map(|e| e.violations).sum(),
    }
}

/// Every algorithm × seed of the scenario, persisted under the results root.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let root = cfg.results_root();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let resolved = root.join("config.resolved.toml");
    fs::write(&resolved, cfg.to_toml_string()?).map_err(|e| Error::io(&resolved, e))?;

    let jobs: Vec<(String, usize)> = cfg
        .scenario
        .algorithms
        .iter()
        .flat_map(|a| (0..cfg.train.seeds).map(move |s| (a.clone(), s)))
        .collect();
    let workers = match cfg.scenario.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len())
    .max(1);

    let mut slots: Vec<Option<Result<SeedResult>>> = (0..jobs.len()).map(|_| None).collect();
    if workers == 1 {
        for (slot, (a, s)) in slots.iter_mut().zip(&jobs) {
            *slot = Some(run_seed(cfg, a, *s, Some(&root)));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    let Some((a, s)) = jobs.get(i) else { break };
                    let r = run_seed(cfg, a, *s, Some(&root));
                    done.lock().expect("result lock")[i] = Some(r);
                });
            }
        });
    }
    let results: Vec<SeedResult> = slots
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<_>>()?;

    let rows: Vec<SummaryRow> = cfg
        .scenario
        .algorithms
        .iter()
        .map(|a| {
            let mine: Vec<&SeedResult> = results.iter().filter(|r| &r.algorithm == a).collect();
            summarize(a, &mine)
        })
        .collect();
    write_rows(&root.join("summary.csv"), &rows)?;
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::Config(e.to_string()))?;
    let path = root.join("summary.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(RunSummary { root, rows, results })
}
