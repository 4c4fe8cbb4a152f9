//! Finite-blocklength link functions.
//!
//! All formulas use the unit-dispersion simplification V = 1, under which
//! the packet error probability at blocklength `m`, payload `L` bits and SNR
//! `γ` is `Q(√m·ln(1+γ) − ln2·L/√m)`. Transmit power is obtained by
//! inverting that relation exactly, so `packet_error_prob` and
//! `required_tx_power` round-trip to machine precision.

use std::f64::consts::{LN_2, PI, SQRT_2};

use crate::error::{Error, Result};
use crate::params::{LinkCoefficient, NetworkParams};

/// Gaussian tail probability Q(x) = P[N(0,1) > x].
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Natural log of Q(x), accurate far into the tail where Q underflows.
pub fn ln_q_function(x: f64) -> f64 {
    if x < -8.0 {
        return (-q_function(-x)).ln_1p();
    }
    if x < 35.0 {
        return q_function(x).ln();
    }
    // Asymptotic (Mills ratio) expansion; truncation error < 1e-12 here.
    let inv2 = 1.0 / (x * x);
    let series = 1.0 - inv2 * (1.0 - 3.0 * inv2 * (1.0 - 5.0 * inv2 * (1.0 - 7.0 * inv2)));
    -0.5 * x * x - x.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Acklam's rational approximation of the standard normal quantile Φ⁻¹(p),
/// relative error about 1e-9. Used only as the Newton seed.
fn normal_quantile_seed(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile_seed(1.0 - p)
    }
}

/// Inverse Gaussian tail Q⁻¹(p) for 0 < p < 1.
///
/// Seeded by a rational approximation, then refined by a bracketed Newton
/// iteration on ln Q so that deep-tail targets (p ~ 1e-12 and below) keep
/// full relative precision.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("q_inverse needs 0 < p < 1, got {p}")));
    }
    if p > 0.5 {
        // 1 - p is exact for p in [0.5, 1).
        return Ok(-q_inverse_upper(1.0 - p));
    }
    Ok(q_inverse_upper(p))
}

/// Q⁻¹ on (0, 0.5]; the result is non-negative.
fn q_inverse_upper(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let ln_p = p.ln();
    let mut x = -normal_quantile_seed(p);
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    for _ in 0..60 {
        let ln_q = ln_q_function(x);
        let f = ln_q - ln_p;
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // d/dx ln Q(x) = -φ(x)/Q(x)
        let slope = -(std_normal_pdf(x).ln() - ln_q).exp();
        let mut next = x - f / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - x).abs() <= 1e-15 * x.abs().max(1.0);
        x = next;
        if done {
            break;
        }
    }
    x
}

fn check_blocklength(m: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("blocklength must be >= 1"));
    }
    Ok(f64::from(m))
}

fn check_bits(bits: f64) -> Result<()> {
    if !(bits >= 1.0 && bits.is_finite()) {
        return Err(Error::domain(format!("packet size must be >= 1 bit, got {bits}")));
    }
    Ok(())
}

/// Argument of Q in the packet error probability.
fn error_exponent(m: f64, bits: f64, snr: f64) -> f64 {
    let sm = m.sqrt();
    sm * snr.ln_1p() - LN_2 * bits / sm
}

/// Packet error probability at blocklength `m`, payload `bits` and SNR `snr`.
pub fn packet_error_prob(m: u32, bits: f64, snr: f64) -> Result<f64> {
    let m = check_blocklength(m)?;
    check_bits(bits)?;
    if !(snr > 0.0) {
        return Err(Error::domain(format!("SNR must be > 0, got {snr}")));
    }
    Ok(q_function(error_exponent(m, bits, snr)))
}

/// `ln` of [`packet_error_prob`], finite even when the probability underflows.
pub fn ln_packet_error_prob(m: u32, bits: f64, snr: f64) -> Result<f64> {
    let m = check_blocklength(m)?;
    check_bits(bits)?;
    if !(snr > 0.0) {
        return Err(Error::domain(format!("SNR must be > 0, got {snr}")));
    }
    Ok(ln_q_function(error_exponent(m, bits, snr)))
}

/// Exponent `Q⁻¹(p)/√m + ln2·L/m` shared by the power formulas.
fn power_exponent(m: f64, bits: f64, p: f64) -> Result<f64> {
    Ok(q_inverse(p)? / m.sqrt() + LN_2 * bits / m)
}

/// Transmit power needed to reach error probability `p` with noise-over-gain `c1`.
pub fn required_tx_power(m: u32, bits: f64, p: f64, c1: f64) -> Result<f64> {
    let m = check_blocklength(m)?;
    check_bits(bits)?;
    if !(c1 > 0.0) {
        return Err(Error::domain(format!("c1 must be > 0, got {c1}")));
    }
    Ok(c1 * power_exponent(m, bits, p)?.exp_m1())
}

/// Average power of a node transmitting one packet every `h` seconds:
/// `(W_tx + W_c)·m/(h·B)`.
pub fn node_power(
    m: u32,
    h: f64,
    p: f64,
    link: &LinkCoefficient,
    params: &NetworkParams,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("sampling period must be > 0, got {h}")));
    }
    let w_tx = required_tx_power(m, link.bits, p, link.c1)?;
    let duty = f64::from(m) / (h * params.bandwidth_hz);
    Ok(w_tx * duty + params.w_circuit * duty)
}

/// Channel dispersion model for [`coding_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispersion {
    /// V = 1, the simplification used by every solver.
    Unit,
    /// V = 1 − (1+γ)⁻².
    Exact,
}

/// Finite-blocklength coding rate in bits/s/Hz at SNR `snr`, blocklength `m`
/// and decoding error probability `p`. Diagnostic only.
pub fn coding_rate(m: u32, snr: f64, p: f64, dispersion: Dispersion) -> Result<f64> {
    let m = check_blocklength(m)?;
    if !(snr >= 0.0) {
        return Err(Error::domain(format!("SNR must be >= 0, got {snr}")));
    }
    let v = match dispersion {
        Dispersion::Unit => 1.0,
        Dispersion::Exact => 1.0 - (1.0 + snr).powi(-2),
    };
    Ok(snr.ln_1p() / LN_2 - (v / m).sqrt() * q_inverse(p)? / LN_2)
}
