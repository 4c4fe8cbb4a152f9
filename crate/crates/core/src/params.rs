//! Global constants of the joint control/communication problem.

use serde::{Deserialize, Serialize};

use crate::channel::noise_power;
use crate::error::{Error, Result};

/// Network-wide constants: bandwidth, packet size, control requirements,
/// power limits and the TDMA utilization bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkParams {
    /// Channel bandwidth B in Hz.
    pub bandwidth_hz: f64,
    /// Uniform packet size L in bits.
    pub packet_bits: f64,
    /// Optional per-node packet sizes; overrides `packet_bits` when set.
    pub packet_bits_per_node: Option<Vec<f64>>,
    /// Stochastic MATI Ω in seconds.
    pub mati_s: f64,
    /// Probability δ with which the MATI must be met.
    pub mati_prob: f64,
    /// Maximum allowed delay Δ in seconds.
    pub mad_s: f64,
    /// TDMA utilization bound β.
    pub util_bound: f64,
    /// Maximum transmit power in watts.
    pub w_tx_max: f64,
    /// Circuit power in active mode, watts.
    pub w_circuit: f64,
    /// Largest blocklength M_th in symbols.
    pub m_max: u32,
    /// Noise power σ² in watts.
    pub noise_power_w: f64,
    /// When present, σ² must equal PSD x bandwidth.
    pub noise_psd_dbm_hz: Option<f64>,
    pub n_nodes: usize,
}

impl Default for NetworkParams {
    fn default() -> Self {
        let bandwidth_hz = 1e5;
        Self {
            bandwidth_hz,
            packet_bits: 100.0,
            packet_bits_per_node: None,
            mati_s: 0.1,
            mati_prob: 0.99,
            mad_s: 1e-3,
            util_bound: 1.0,
            w_tx_max: 0.25,
            w_circuit: 0.054,
            m_max: 200,
            noise_power_w: noise_power(-174.0, bandwidth_hz),
            noise_psd_dbm_hz: Some(-174.0),
            n_nodes: 50,
        }
    }
}

impl NetworkParams {
    /// Table defaults with σ² derived from a noise PSD for the given bandwidth.
    pub fn with_psd(mut self, psd_dbm_hz: f64) -> Self {
        self.noise_psd_dbm_hz = Some(psd_dbm_hz);
        self.noise_power_w = noise_power(psd_dbm_hz, self.bandwidth_hz);
        self
    }

    /// Re-derive σ² after changing the bandwidth.
    pub fn rederive_noise(&mut self) {
        if let Some(psd) = self.noise_psd_dbm_hz {
            self.noise_power_w = noise_power(psd, self.bandwidth_hz);
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParam {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                })
            }
        }
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("packet_bits", self.packet_bits)?;
        positive("mati_s", self.mati_s)?;
        positive("mad_s", self.mad_s)?;
        positive("w_tx_max", self.w_tx_max)?;
        positive("w_circuit", self.w_circuit)?;
        positive("noise_power_w", self.noise_power_w)?;
        if !(self.mati_prob > 0.0 && self.mati_prob < 1.0) {
            return Err(Error::InvalidParam {
                field: "mati_prob",
                reason: format!("must lie in (0,1), got {}", self.mati_prob),
            });
        }
        if !(self.util_bound > 0.0 && self.util_bound <= 1.0) {
            return Err(Error::InvalidParam {
                field: "util_bound",
                reason: format!("must lie in (0,1], got {}", self.util_bound),
            });
        }
        if self.mad_s > self.mati_s {
            return Err(Error::InvalidParam {
                field: "mad_s",
                reason: format!("MAD {} exceeds MATI {}", self.mad_s, self.mati_s),
            });
        }
        if self.m_max == 0 {
            return Err(Error::InvalidParam {
                field: "m_max",
                reason: "must be a positive integer".into(),
            });
        }
        if self.n_nodes == 0 {
            return Err(Error::InvalidParam {
                field: "n_nodes",
                reason: "must be a positive integer".into(),
            });
        }
        if let Some(bits) = &self.packet_bits_per_node {
            if bits.len() != self.n_nodes {
                return Err(Error::InvalidParam {
                    field: "packet_bits_per_node",
                    reason: format!("expected {} entries, got {}", self.n_nodes, bits.len()),
                });
            }
            if let Some(b) = bits.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
                return Err(Error::InvalidParam {
                    field: "packet_bits_per_node",
                    reason: format!("entries must be > 0, got {b}"),
                });
            }
        }
        if let Some(psd) = self.noise_psd_dbm_hz {
            let derived = noise_power(psd, self.bandwidth_hz);
            if ((derived - self.noise_power_w) / derived).abs() > 1e-9 {
                return Err(Error::InvalidParam {
                    field: "noise_power_w",
                    reason: format!(
                        "inconsistent with PSD {psd} dBm/Hz over {} Hz (expected {derived:e} W)",
                        self.bandwidth_hz
                    ),
                });
            }
        }
        Ok(())
    }

    /// Packet size of `node` in bits.
    pub fn bits(&self, node: usize) -> f64 {
        match &self.packet_bits_per_node {
            Some(v) => v[node],
            None => self.packet_bits,
        }
    }

    /// Symbol duration C₂ = 1/B.
    pub fn c2(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    /// Largest blocklength meeting the delay cap, ⌊B·Δ⌋.
    pub fn mad_blocklength_limit(&self) -> u32 {
        floor_tol(self.bandwidth_hz * self.mad_s) as u32
    }

    /// Largest admissible blocklength, min(M_th, ⌊B·Δ⌋).
    pub fn blocklength_limit(&self) -> u32 {
        self.m_max.min(self.mad_blocklength_limit())
    }

    /// Symbols available in one MATI window, ⌊Ω·B⌋ as a float.
    pub fn symbols_per_mati(&self) -> f64 {
        self.mati_s * self.bandwidth_hz
    }

    pub fn link(&self, node: usize, gain: f64) -> LinkCoefficient {
        LinkCoefficient::from_gain(gain, self.bits(node), self)
    }
}

/// Floor that forgives representation error just below an integer.
pub(crate) fn floor_tol(x: f64) -> f64 {
    (x * (1.0 + 1e-12) + 1e-9).floor()
}

/// Per-node link coefficients: C₁ = σ²/|g| and C₂ = 1/B, plus the node's
/// packet size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkCoefficient {
    /// Noise over gain, watts.
    pub c1: f64,
    /// Seconds per symbol.
    pub c2: f64,
    pub bits: f64,
}

impl LinkCoefficient {
    pub fn from_gain(gain: f64, bits: f64, params: &NetworkParams) -> Self {
        Self {
            c1: params.noise_power_w / gain,
            c2: params.c2(),
            bits,
        }
    }

    /// Uniform-bits link with an explicit C₁.
    pub fn with_c1(c1: f64, params: &NetworkParams) -> Self {
        Self {
            c1,
            c2: params.c2(),
            bits: params.packet_bits,
        }
    }

    /// Largest SNR reachable at maximum transmit power.
    pub fn max_snr(&self, params: &NetworkParams) -> f64 {
        params.w_tx_max / self.c1
    }
}
