//! Model-based benchmark for the reduced problem: continuous relaxation of
//! the blocklength with greedy integral repair, an exhaustive grid oracle for
//! small instances, and an EDF schedule simulator.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::control::{self, k_star, lemma_allocation, relaxed_objective, Allocation, NodeAllocation};
use crate::error::{Error, Result};
use crate::params::{LinkCoefficient, NetworkParams};

/// Golden-section tolerance on the relaxed blocklength, in symbols.
pub const GOLDEN_TOL: f64 = 1e-3;

/// Result of [`solve_relaxed_greedy`].
#[derive(Debug, Clone, Serialize)]
pub struct BaselineSolution {
    pub allocation: Allocation,
    /// Number of greedy unit moves applied to restore schedulability.
    pub repair_steps: usize,
    /// Total utilization after each repair step.
    pub repair_trace: Vec<f64>,
}

impl BaselineSolution {
    pub fn total_power(&self) -> f64 {
        self.allocation.total_power()
    }
}

/// Minimise a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Smallest blocklength with a feasible retry count, scanning up from 1.
pub fn min_feasible_blocklength(link: &LinkCoefficient, params: &NetworkParams) -> Option<u32> {
    (1..=params.blocklength_limit()).find(|&m| k_star(m, link, params).is_ok())
}

/// Best integer blocklength for one node, ignoring the coupling constraint.
pub fn solve_node_relaxed(link: &LinkCoefficient, params: &NetworkParams) -> Option<NodeAllocation> {
    let m_lo = min_feasible_blocklength(link, params)?;
    let m_hi = params.blocklength_limit();
    // k*(m) is non-increasing in m; walk down from m_hi collecting the first
    // blocklength at which each retry count becomes sufficient.
    let mut bands: Vec<(u64, u32)> = Vec::new();
    for m in (m_lo..=m_hi).rev() {
        let Ok(k) = k_star(m, link, params) else { continue };
        match bands.last_mut() {
            Some((last_k, start)) if *last_k == k => *start = m,
            Some((last_k, _)) if *last_k > k => {}
            _ => bands.push((k, m)),
        }
    }

    let mut best: Option<NodeAllocation> = None;
    let mut prev_band_best = f64::INFINITY;
    for &(k, band_lo) in &bands {
        let band_hi = m_hi.min(control::retry_cap_inverse(k, params));
        if band_hi < band_lo {
            continue;
        }
        let m_cont = if band_hi == band_lo {
            f64::from(band_lo)
        } else {
            golden_section(
                |m| relaxed_objective(m, k, link, params),
                f64::from(band_lo),
                f64::from(band_hi),
                GOLDEN_TOL,
            )
        };
        let floor = (m_cont.floor() as u32).clamp(band_lo, band_hi);
        let ceil = (m_cont.ceil() as u32).clamp(band_lo, band_hi);
        let band_best = [floor, ceil]
            .into_iter()
            .filter_map(|m| lemma_allocation(m, link, params).ok())
            .min_by(|a, b| a.power.total_cmp(&b.power));
        let Some(band_best) = band_best else { continue };
        if best.is_none_or(|b| band_best.power < b.power) {
            best = Some(band_best);
        }
        if band_best.power > prev_band_best {
            break;
        }
        prev_band_best = band_best.power;
    }
    best
}

/// Relax, pick integral blocklengths per node, then greedily repair the
/// utilization bound.
pub fn solve_relaxed_greedy(links: &[LinkCoefficient], params: &NetworkParams) -> Result<BaselineSolution> {
    if links.is_empty() {
        return Err(Error::domain("at least one node is required"));
    }
    let mut nodes = Vec::with_capacity(links.len());
    let mut m_lo = Vec::with_capacity(links.len());
    for (i, link) in links.iter().enumerate() {
        let node = solve_node_relaxed(link, params)
            .ok_or_else(|| Error::Infeasible(format!("node {i} has no feasible blocklength")))?;
        m_lo.push(min_feasible_blocklength(link, params).unwrap_or(node.m));
        nodes.push(node);
    }
    let m_hi = params.blocklength_limit();
    let mut alloc = Allocation { nodes };
    let mut total_u = alloc.utilization(params).total;
    let mut repair_trace = Vec::new();
    let step_cap: usize = links.len() * m_hi as usize;

    while total_u > params.util_bound {
        if repair_trace.len() >= step_cap {
            return Err(Error::Infeasible("greedy repair did not converge".into()));
        }
        let mut best: Option<(usize, NodeAllocation, f64)> = None;
        for (i, (link, cur)) in links.iter().zip(&alloc.nodes).enumerate() {
            let cur_u = cur.utilization(params);
            let cands = [cur.m.checked_sub(1), Some(cur.m + 1)];
            for m in cands.into_iter().flatten() {
                if m < m_lo[i] || m > m_hi {
                    continue;
                }
                let Ok(next) = lemma_allocation(m, link, params) else { continue };
                let du = next.utilization(params) - cur_u;
                if du >= 0.0 {
                    continue;
                }
                let ratio = (next.power - cur.power) / -du;
                if best.as_ref().is_none_or(|(_, _, r)| ratio < *r) {
                    best = Some((i, next, ratio));
                }
            }
        }
        let Some((i, next, _)) = best else {
            return Err(Error::Infeasible(format!(
                "utilization {total_u:.6} exceeds bound {} and no unit move reduces it",
                params.util_bound
            )));
        };
        alloc.nodes[i] = next;
        total_u = alloc.utilization(params).total;
        repair_trace.push(total_u);
    }
    Ok(BaselineSolution {
        allocation: alloc,
        repair_steps: repair_trace.len(),
        repair_trace,
    })
}

/// Largest search space the oracle will enumerate.
pub const ORACLE_MAX_POINTS: f64 = 1e7;

/// Exhaustive search over `m ∈ {step, 2·step, …}` for every node.
pub fn brute_force_oracle(links: &[LinkCoefficient], params: &NetworkParams, step: u32) -> Result<Allocation> {
    if step == 0 {
        return Err(Error::domain("grid step must be >= 1"));
    }
    if links.is_empty() || links.len() > 4 {
        return Err(Error::InstanceTooLarge(format!("oracle supports 1..=4 nodes, got {}", links.len())));
    }
    let m_hi = params.blocklength_limit();
    let grid: Vec<u32> = (1..).map(|j| j * step).take_while(|&m| m <= m_hi).collect();
    let points = (grid.len() as f64).powi(links.len() as i32);
    if points > ORACLE_MAX_POINTS {
        return Err(Error::InstanceTooLarge(format!("{points:e} grid points")));
    }
    // per node: feasible (allocation, utilization) on the grid
    let options: Vec<Vec<(NodeAllocation, f64)>> = links
        .iter()
        .map(|link| {
            grid.iter()
                .filter_map(|&m| lemma_allocation(m, link, params).ok())
                .map(|a| {
                    let u = a.utilization(params);
                    (a, u)
                })
                .collect()
        })
        .collect();
    if options.iter().any(Vec::is_empty) {
        return Err(Error::Infeasible("a node has no feasible grid point".into()));
    }

    let n = links.len();
    let mut idx = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let (mut power, mut util) = (0.0, 0.0);
        for (i, &j) in idx.iter().enumerate() {
            power += options[i][j].0.power;
            util += options[i][j].1;
        }
        if util <= params.util_bound && best.as_ref().is_none_or(|(p, _)| power < *p) {
            best = Some((power, idx.clone()));
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                let (_, choice) = best.ok_or_else(|| Error::Infeasible("no grid point meets the utilization bound".into()))?;
                return Ok(Allocation {
                    nodes: choice.iter().enumerate().map(|(i, &j)| options[i][j].0).collect(),
                });
            }
            idx[pos] += 1;
            if idx[pos] < options[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Result of [`edf_schedulability`].
#[derive(Debug, Clone, Serialize)]
pub struct EdfReport {
    pub jobs_released: usize,
    pub deadline_misses: usize,
    /// Σ dᵢ/hᵢ.
    pub utilization: f64,
    pub beta_nec: f64,
    /// min(1, minᵢ Δ/hᵢ).
    pub beta_suf: f64,
    pub meets_necessary: bool,
    pub meets_sufficient: bool,
}

impl EdfReport {
    pub fn feasible(&self) -> bool {
        self.deadline_misses == 0
    }
}

#[derive(Debug)]
struct Job {
    deadline: f64,
    release: f64,
    task: usize,
    remaining: f64,
}

impl PartialEq for Job {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Job {}
impl PartialOrd for Job {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Job {
    // min-heap on (deadline, release, task)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .deadline
            .total_cmp(&self.deadline)
            .then_with(|| other.release.total_cmp(&self.release))
            .then_with(|| other.task.cmp(&self.task))
    }
}

/// Common hyperperiod when every period divides Ω, otherwise `cap`.
pub fn default_horizon(alloc: &Allocation, params: &NetworkParams, cap: f64) -> f64 {
    let divides = alloc.nodes.iter().all(|n| {
        let r = params.mati_s / n.h;
        (r - r.round()).abs() < 1e-9
    });
    if divides {
        params.mati_s
    } else {
        cap
    }
}

/// Preemptive EDF on one shared channel over `[0, horizon)`.
///
/// Task i releases a packet every `hᵢ` starting at 0, needs `dᵢ` of airtime
/// and must finish within `min(Δ, hᵢ)`; packets still pending at their
/// deadline are dropped and counted as misses.
pub fn edf_schedulability(alloc: &Allocation, params: &NetworkParams, horizon: f64) -> EdfReport {
    let tasks: Vec<(f64, f64, f64)> = alloc
        .nodes
        .iter()
        .map(|n| (n.h, n.d, params.mad_s.min(n.h)))
        .collect();
    let utilization: f64 = tasks.iter().map(|(h, d, _)| d / h).sum();
    let beta_suf = tasks
        .iter()
        .map(|(h, _, _)| params.mad_s / h)
        .fold(1.0_f64, f64::min);
    let eps = 1e-12 * horizon.max(1e-9);

    let mut release_idx = vec![0u64; tasks.len()];
    let next_release = |i: usize, j: u64| j as f64 * tasks[i].0;
    let mut ready: BinaryHeap<Job> = BinaryHeap::new();
    let mut released = 0usize;
    let mut misses = 0usize;
    let mut t = 0.0_f64;

    loop {
        // release everything due by t
        for (i, j) in release_idx.iter_mut().enumerate() {
            loop {
                let r = next_release(i, *j);
                if r > t + eps || r >= horizon - eps {
                    break;
                }
                ready.push(Job {
                    deadline: r + tasks[i].2,
                    release: r,
                    task: i,
                    remaining: tasks[i].1,
                });
                released += 1;
                *j += 1;
            }
        }
        // drop expired packets
        while let Some(top) = ready.peek() {
            if top.deadline <= t + eps && top.remaining > eps {
                misses += 1;
                ready.pop();
            } else {
                break;
            }
        }
        let upcoming = release_idx
            .iter()
            .enumerate()
            .map(|(i, &j)| next_release(i, j))
            .filter(|&r| r < horizon - eps)
            .fold(f64::INFINITY, f64::min);
        let Some(mut job) = ready.pop() else {
            if upcoming.is_finite() {
                t = upcoming;
                continue;
            }
            break;
        };
        let finish = t + job.remaining;
        let stop = finish.min(upcoming).min(job.deadline);
        job.remaining -= stop - t;
        t = stop;
        if job.remaining > eps {
            if t >= job.deadline - eps {
                misses += 1;
            } else {
                ready.push(job);
            }
        }
    }
    misses += ready.len();

    EdfReport {
        jobs_released: released,
        deadline_misses: misses,
        utilization,
        beta_nec: 1.0,
        beta_suf,
        meets_necessary: utilization <= 1.0 + 1e-12,
        meets_sufficient: utilization <= beta_suf + 1e-12,
    }
}
