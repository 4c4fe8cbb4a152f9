//! Optimality structure of the joint problem.
//!
//! At the optimum the sampling period and error probability are tied to an
//! integer retry count `k`: `h = Ω/k` and `p = (1−δ)^{1/k}`. The smallest
//! `k` that meets reliability at maximum power is a function of the
//! blocklength alone, which reduces the problem to one integer per node.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::Result;
use crate::params::{floor_tol, LinkCoefficient, NetworkParams};
use crate::phy::{self, ln_packet_error_prob, node_power, required_tx_power};

/// Why a blocklength admits no allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Infeasible {
    /// m = 0 or m > M_th.
    BlocklengthOutOfRange,
    /// m/B exceeds the maximum allowed delay.
    DelayAboveMad,
    /// No retry count meets the MATI probability without `d > h`.
    ReliabilityUnreachable,
}

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Infeasible::BlocklengthOutOfRange => "blocklength out of range",
            Infeasible::DelayAboveMad => "delay above MAD",
            Infeasible::ReliabilityUnreachable => "reliability unreachable",
        };
        f.write_str(s)
    }
}

/// SNR used inside the closed-form retry count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnrVariant {
    /// `W_max/C₁`, consistent with the packet-error and power formulas.
    #[default]
    Consistent,
    /// `W_max/(m·C₁)`, the printed closed form. Diagnostic only.
    Literal,
}

/// Smallest k ≥ 1 with `k·ln p_min ≤ ln(1−δ)`, bounded by `cap`.
pub fn min_retries(ln_p_min: f64, mati_prob: f64, cap: u64) -> Option<u64> {
    let ln_target = (1.0 - mati_prob).ln();
    if ln_p_min == f64::NEG_INFINITY || ln_p_min <= ln_target {
        return (cap >= 1).then_some(1);
    }
    if !(ln_p_min < 0.0) {
        return None;
    }
    let slack = 1e-12 * ln_target.abs();
    let meets = |k: u64| (k as f64) * ln_p_min <= ln_target + slack;
    let ratio = ln_target / ln_p_min;
    if ratio > cap as f64 + 1.0 {
        return None;
    }
    let mut k = (ratio.ceil() as u64).max(1);
    while k > 1 && meets(k - 1) {
        k -= 1;
    }
    while !meets(k) {
        k += 1;
    }
    (k <= cap).then_some(k)
}

/// `⌊Ω·B/m⌋`: retry counts above this force `d > h`.
pub fn retry_cap(m: u32, params: &NetworkParams) -> u64 {
    floor_tol(params.symbols_per_mati() / f64::from(m)) as u64
}

/// Largest blocklength that still satisfies `d ≤ h` with `k` retries.
pub fn retry_cap_inverse(k: u64, params: &NetworkParams) -> u32 {
    floor_tol(params.symbols_per_mati() / k.max(1) as f64).min(f64::from(u32::MAX)) as u32
}

/// ln of the best per-attempt error probability at blocklength `m`.
pub fn ln_min_error_prob(m: u32, link: &LinkCoefficient, params: &NetworkParams, variant: SnrVariant) -> f64 {
    let snr = match variant {
        SnrVariant::Consistent => link.max_snr(params),
        SnrVariant::Literal => link.max_snr(params) / f64::from(m),
    };
    ln_packet_error_prob(m, link.bits, snr).unwrap_or(0.0)
}

/// Optimal retry count k*(m).
pub fn k_star(m: u32, link: &LinkCoefficient, params: &NetworkParams) -> std::result::Result<u64, Infeasible> {
    k_star_with(m, link, params, SnrVariant::Consistent)
}

pub fn k_star_with(
    m: u32,
    link: &LinkCoefficient,
    params: &NetworkParams,
    variant: SnrVariant,
) -> std::result::Result<u64, Infeasible> {
    if m == 0 || m > params.m_max {
        return Err(Infeasible::BlocklengthOutOfRange);
    }
    let ln_p_min = ln_min_error_prob(m, link, params, variant);
    min_retries(ln_p_min, params.mati_prob, retry_cap(m, params)).ok_or(Infeasible::ReliabilityUnreachable)
}

/// Sampling period and error probability implied by retry count `k`.
pub fn recover_h_p(k: u64, params: &NetworkParams) -> (f64, f64) {
    let k = k.max(1) as f64;
    let h = params.mati_s / k;
    let p = ((1.0 - params.mati_prob).ln() / k).exp();
    (h, p)
}

/// Per-node power of the reduced problem at blocklength `m`.
pub fn reduced_objective(m: u32, link: &LinkCoefficient, params: &NetworkParams) -> std::result::Result<f64, Infeasible> {
    lemma_allocation(m, link, params).map(|a| a.power)
}

/// Power with the retry count forced to `k` (no optimality in k). Returns
/// NaN-free values for any k ≥ 1 and integer m ≥ 1.
pub fn objective_with_k(m: u32, k: u64, link: &LinkCoefficient, params: &NetworkParams) -> Result<f64> {
    let (h, p) = recover_h_p(k, params);
    node_power(m, h, p, link, params)
}

/// Continuous relaxation of [`objective_with_k`] in the blocklength.
pub fn relaxed_objective(m: f64, k: u64, link: &LinkCoefficient, params: &NetworkParams) -> f64 {
    let (_, p) = recover_h_p(k, params);
    let qinv = phy::q_inverse(p).unwrap_or(0.0);
    let duty = link.c2 * m * k as f64 / params.mati_s;
    let w_tx = link.c1 * (qinv / m.sqrt() + LN_2 * link.bits / m).exp_m1();
    duty * (w_tx + params.w_circuit)
}

/// One node's decision tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeAllocation {
    pub m: u32,
    pub k: u64,
    /// Sampling period, seconds.
    pub h: f64,
    pub p: f64,
    /// Transmit power, watts.
    pub w_tx: f64,
    /// Transmission delay m/B, seconds.
    pub d: f64,
    /// Average power consumption, watts.
    pub power: f64,
}

impl NodeAllocation {
    pub fn utilization(&self, params: &NetworkParams) -> f64 {
        params.c2() * f64::from(self.m) * self.k as f64 / params.mati_s
    }
}

/// Allocation obtained from the optimality conditions at blocklength `m`.
pub fn lemma_allocation(
    m: u32,
    link: &LinkCoefficient,
    params: &NetworkParams,
) -> std::result::Result<NodeAllocation, Infeasible> {
    if m == 0 || m > params.m_max {
        return Err(Infeasible::BlocklengthOutOfRange);
    }
    if m > params.mad_blocklength_limit() {
        return Err(Infeasible::DelayAboveMad);
    }
    let k = k_star(m, link, params)?;
    Ok(allocation_for_k(m, k, link, params))
}

/// Allocation with the retry count forced to `k`.
pub fn allocation_for_k(m: u32, k: u64, link: &LinkCoefficient, params: &NetworkParams) -> NodeAllocation {
    let (h, p) = recover_h_p(k, params);
    let w_tx = required_tx_power(m, link.bits, p, link.c1).unwrap_or(f64::INFINITY);
    let d = f64::from(m) / params.bandwidth_hz;
    let power = (w_tx + params.w_circuit) * d / h;
    NodeAllocation { m, k, h, p, w_tx, d, power }
}

/// Decision tuples for every node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub nodes: Vec<NodeAllocation>,
}

impl Allocation {
    pub fn total_power(&self) -> f64 {
        self.nodes.iter().map(|n| n.power).sum()
    }

    pub fn utilization(&self, params: &NetworkParams) -> UtilizationReport {
        let per_node: Vec<f64> = self.nodes.iter().map(|n| n.utilization(params)).collect();
        let total = per_node.iter().sum();
        UtilizationReport {
            per_node,
            total,
            feasible: total <= params.util_bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilizationReport {
    pub per_node: Vec<f64>,
    pub total: f64,
    pub feasible: bool,
}

/// Outcome of a single constraint: `violation` is positive when it fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Check {
    pub ok: bool,
    pub violation: f64,
}

impl Check {
    fn le(lhs: f64, rhs: f64, rel_tol: f64) -> Self {
        let violation = lhs - rhs;
        Check {
            ok: violation <= rel_tol * rhs.abs().max(lhs.abs()),
            violation,
        }
    }
}

/// Per-node constraint outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeConstraints {
    /// `⌊Ω/h⌋·ln p − ln(1−δ) ≤ 0`.
    pub mati: Check,
    /// `0 < d ≤ min(Δ, h)`.
    pub delay: Check,
    /// `0 < h ≤ Ω`.
    pub period: Check,
    /// `0 < p < 1`.
    pub error_prob: Check,
    /// `m ≤ M_th`.
    pub blocklength: Check,
    /// `W_tx ≤ W_max`.
    pub tx_power: Check,
}

impl NodeConstraints {
    pub fn all_ok(&self) -> bool {
        self.mati.ok
            && self.delay.ok
            && self.period.ok
            && self.error_prob.ok
            && self.blocklength.ok
            && self.tx_power.ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub nodes: Vec<NodeConstraints>,
    /// `Σ d/h ≤ β`.
    pub schedulability: Check,
    pub total_ok: bool,
}

/// Check every constraint of the full problem for an arbitrary allocation.
pub fn check_full_constraints(alloc: &Allocation, params: &NetworkParams) -> ConstraintReport {
    const TOL: f64 = 1e-9;
    let nodes: Vec<NodeConstraints> = alloc
        .nodes
        .iter()
        .map(|n| {
            let retries = if n.h > 0.0 { floor_tol(params.mati_s / n.h) } else { 0.0 };
            let mati = if n.p > 0.0 && n.p < 1.0 {
                Check::le(retries * n.p.ln(), (1.0 - params.mati_prob).ln(), TOL)
            } else {
                Check {
                    ok: false,
                    violation: f64::INFINITY,
                }
            };
            let delay_cap = params.mad_s.min(n.h);
            let mut delay = Check::le(n.d, delay_cap, TOL);
            delay.ok &= n.d > 0.0;
            let mut period = Check::le(n.h, params.mati_s, TOL);
            period.ok &= n.h > 0.0;
            let error_prob = if n.p > 0.0 && n.p < 1.0 {
                Check { ok: true, violation: 0.0 }
            } else {
                Check {
                    ok: false,
                    violation: if n.p <= 0.0 { -n.p } else { n.p - 1.0 },
                }
            };
            let blocklength = Check {
                ok: n.m >= 1 && n.m <= params.m_max,
                violation: f64::from(n.m) - f64::from(params.m_max),
            };
            let tx_power = Check::le(n.w_tx, params.w_tx_max, TOL);
            NodeConstraints {
                mati,
                delay,
                period,
                error_prob,
                blocklength,
                tx_power,
            }
        })
        .collect();
    let total_util: f64 = alloc.nodes.iter().map(|n| n.d / n.h).sum();
    let schedulability = Check {
        ok: total_util <= params.util_bound * (1.0 + TOL),
        violation: total_util - params.util_bound,
    };
    let total_ok = schedulability.ok && nodes.iter().all(NodeConstraints::all_ok);
    ConstraintReport {
        nodes,
        schedulability,
        total_ok,
    }
}
