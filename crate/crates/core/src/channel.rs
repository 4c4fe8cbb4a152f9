//! Node geometry and fading.
//!
//! Large-scale gain: log-distance path loss with log-normal shadowing.
//! Small-scale gain: first-order complex Gauss–Markov fading,
//! `f⁽ᵗ⁾ = ρ·f⁽ᵗ⁻¹⁾ + √(1−ρ²)·e⁽ᵗ⁾`, `g = |f|²·α`.
//!
//! Every node draws from its own ChaCha stream keyed by (seed, purpose,
//! trace, node), so changing the node count never perturbs other nodes.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// σ² in watts for a noise PSD (dBm/Hz) over `bandwidth_hz`.
pub fn noise_power(psd_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    10f64.powf((psd_dbm_hz + 10.0 * bandwidth_hz.log10() - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Deployment radius, meters.
    pub radius_m: f64,
    /// Path loss at the reference distance, dB.
    pub pl_ref_db: f64,
    /// Reference distance d₀, meters; nodes closer than this are clamped.
    pub ref_distance_m: f64,
    pub pl_exponent: f64,
    pub shadow_std_db: f64,
    /// Fading correlation ρ between consecutive frames.
    pub rho: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            radius_m: 50.0,
            pl_ref_db: 35.3,
            ref_distance_m: 1.0,
            pl_exponent: 3.76,
            shadow_std_db: 4.0,
            rho: 0.6,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m > 0.0) {
            return Err(Error::InvalidParam {
                field: "radius_m",
                reason: format!("must be > 0, got {}", self.radius_m),
            });
        }
        if !(self.ref_distance_m > 0.0 && self.ref_distance_m <= self.radius_m) {
            return Err(Error::InvalidParam {
                field: "ref_distance_m",
                reason: "must lie in (0, radius]".into(),
            });
        }
        if !(self.shadow_std_db >= 0.0) {
            return Err(Error::InvalidParam {
                field: "shadow_std_db",
                reason: "must be >= 0".into(),
            });
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::InvalidParam {
                field: "rho",
                reason: format!("|rho| must be <= 1, got {}", self.rho),
            });
        }
        Ok(())
    }

    /// Path loss in dB at distance `d` with shadowing sample `z_db`.
    pub fn path_loss_db(&self, d: f64, z_db: f64) -> f64 {
        let d = d.max(self.ref_distance_m);
        self.pl_ref_db + 10.0 * self.pl_exponent * (d / self.ref_distance_m).log10() + z_db
    }
}

/// Independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Placement = 1,
    Shadowing = 2,
    Fading = 3,
}

/// RNG for `(seed, purpose, trace, node)`.
pub fn substream(seed: u64, purpose: Stream, trace: u32, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ (u64::from(trace) << 32) ^ node as u64);
    rng
}

/// Node distances and large-scale gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub distance_m: Vec<f64>,
    pub shadowing_db: Vec<f64>,
    /// Linear large-scale power gain α.
    pub large_scale: Vec<f64>,
}

/// Place `n` nodes uniformly in the disc and draw their large-scale gains.
pub fn place_nodes(n: usize, cfg: &ChannelConfig) -> Placement {
    let mut distance_m = Vec::with_capacity(n);
    let mut shadowing_db = Vec::with_capacity(n);
    let mut large_scale = Vec::with_capacity(n);
    for node in 0..n {
        let mut pr = substream(cfg.seed, Stream::Placement, 0, node);
        let u: f64 = rand::Rng::random(&mut pr);
        let d = (cfg.radius_m * u.sqrt()).max(cfg.ref_distance_m);
        let mut sr = substream(cfg.seed, Stream::Shadowing, 0, node);
        let z: f64 = StandardNormal.sample(&mut sr);
        let z = z * cfg.shadow_std_db;
        let pl = cfg.path_loss_db(d, z);
        distance_m.push(d);
        shadowing_db.push(z);
        large_scale.push(10f64.powf(-pl / 10.0));
    }
    Placement {
        distance_m,
        shadowing_db,
        large_scale,
    }
}

/// Unit-variance circularly symmetric complex Gaussian sample.
pub fn cscg<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One Gauss–Markov step for a single coefficient.
pub fn evolve_fading(prev: Complex64, innovation: Complex64, rho: f64) -> Complex64 {
    prev * rho + innovation * (1.0 - rho * rho).max(0.0).sqrt()
}

/// Per-node channel snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub distance_m: Vec<f64>,
    pub large_scale: Vec<f64>,
    pub fading: Vec<Complex64>,
    /// Instantaneous linear gain g = |f|²·α.
    pub gain: Vec<f64>,
}

impl ChannelState {
    pub fn n_nodes(&self) -> usize {
        self.gain.len()
    }

    fn refresh_gains(&mut self) {
        for ((g, f), a) in self.gain.iter_mut().zip(&self.fading).zip(&self.large_scale) {
            *g = f.norm_sqr() * a;
        }
    }
}

/// Evolving channel of a fixed deployment.
#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    state: ChannelState,
    rngs: Vec<ChaCha8Rng>,
    step: u64,
}

impl Channel {
    /// Deployment from `cfg.seed`, fading trace number `trace`.
    pub fn new(n: usize, cfg: &ChannelConfig, trace: u32) -> Self {
        let placement = place_nodes(n, cfg);
        let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| substream(cfg.seed, Stream::Fading, trace, i)).collect();
        let fading: Vec<Complex64> = rngs.iter_mut().map(cscg).collect();
        let mut state = ChannelState {
            distance_m: placement.distance_m,
            large_scale: placement.large_scale,
            fading,
            gain: vec![0.0; n],
        };
        state.refresh_gains();
        Self {
            cfg: cfg.clone(),
            state,
            rngs,
            step: 0,
        }
    }

    /// Fixed gains that never change (ρ = 1, no randomness beyond `large_scale`).
    pub fn from_state(state: ChannelState, cfg: &ChannelConfig) -> Self {
        let n = state.n_nodes();
        let rngs = (0..n).map(|i| substream(cfg.seed, Stream::Fading, 0, i)).collect();
        let mut state = state;
        state.refresh_gains();
        Self {
            cfg: cfg.clone(),
            state,
            rngs,
            step: 0,
        }
    }

    /// Restart small-scale fading on a fresh trace, keeping the geometry.
    pub fn restart_trace(&mut self, trace: u32) {
        let n = self.state.n_nodes();
        self.rngs = (0..n).map(|i| substream(self.cfg.seed, Stream::Fading, trace, i)).collect();
        for (f, r) in self.state.fading.iter_mut().zip(self.rngs.iter_mut()) {
            *f = cscg(r);
        }
        self.state.refresh_gains();
        self.step = 0;
    }

    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Advance every node by one frame.
    pub fn step(&mut self) {
        let rho = self.cfg.rho;
        for (f, r) in self.state.fading.iter_mut().zip(self.rngs.iter_mut()) {
            let e = cscg(r);
            *f = evolve_fading(*f, e, rho);
        }
        self.state.refresh_gains();
        self.step += 1;
    }
}

/// Write `steps` frames of `channel` as CSV rows `t,node,fading_power,gain`.
pub fn export_trace(channel: &mut Channel, steps: usize, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "t,node,fading_power,gain")?;
        for t in 0..steps {
            let s = channel.state();
            for (i, (f, g)) in s.fading.iter().zip(&s.gain).enumerate() {
                writeln!(out, "{t},{i},{},{}", f.norm_sqr(), g)?;
            }
            channel.step();
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_loss_examples() {
        let cfg = ChannelConfig::default();
        assert!((cfg.path_loss_db(1.0, 0.0) - 35.3).abs() < 1e-12);
        let alpha = 10f64.powf(-cfg.path_loss_db(1.0, 0.0) / 10.0);
        assert!((alpha - 2.95e-4).abs() < 1e-6);
        assert!((cfg.path_loss_db(10.0, 0.0) - 72.9).abs() < 1e-12);
        // clamped inside the reference distance
        assert_eq!(cfg.path_loss_db(0.2, 0.0), cfg.path_loss_db(1.0, 0.0));
    }

    #[test]
    fn noise_power_examples() {
        assert!((noise_power(-174.0, 1e5) - 3.98e-16).abs() < 1e-18);
        assert!((noise_power(-174.0, 1.0) - 3.98e-21).abs() < 1e-23);
        assert!((noise_power(0.0, 1.0) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn placement_is_uniform_in_area() {
        let cfg = ChannelConfig {
            seed: 3,
            ..ChannelConfig::default()
        };
        let n = 100_000;
        let p = place_nodes(n, &cfg);
        let mut u: Vec<f64> = p.distance_m.iter().map(|d| (d / cfg.radius_m).powi(2)).collect();
        u.sort_by(f64::total_cmp);
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = (x - i as f64 / n as f64).abs();
                let hi = ((i + 1) as f64 / n as f64 - x).abs();
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        // clamping at d0 moves at most (1/50)^2 of the mass
        assert!(ks < 0.01, "ks={ks}");
        assert!(p.distance_m.iter().all(|&d| (1.0..=50.0).contains(&d)));
    }

    #[test]
    fn degenerate_rho() {
        let frozen = ChannelConfig {
            rho: 1.0,
            ..ChannelConfig::default()
        };
        let mut ch = Channel::new(4, &frozen, 0);
        let f0 = ch.state().fading.clone();
        for _ in 0..10 {
            ch.step();
        }
        assert_eq!(ch.state().fading, f0);

        let iid = ChannelConfig {
            rho: 0.0,
            ..ChannelConfig::default()
        };
        let mut a = Channel::new(1, &iid, 0);
        let mut r = substream(iid.seed, Stream::Fading, 0, 0);
        let _f0 = cscg(&mut r);
        a.step();
        assert_eq!(a.state().fading[0], cscg(&mut r));
    }

    #[test]
    fn gain_is_fading_times_large_scale() {
        let mut ch = Channel::new(8, &ChannelConfig::default(), 0);
        for _ in 0..5 {
            ch.step();
            let s = ch.state();
            for i in 0..8 {
                let expected = s.fading[i].norm_sqr() * s.large_scale[i];
                assert!((s.gain[i] - expected).abs() <= 1e-12 * expected);
                assert!(s.gain[i] >= 0.0);
            }
        }
    }

    #[test]
    fn substreams_do_not_depend_on_node_count() {
        let cfg = ChannelConfig::default();
        let mut small = Channel::new(3, &cfg, 0);
        let mut large = Channel::new(10, &cfg, 0);
        for _ in 0..20 {
            small.step();
            large.step();
        }
        assert_eq!(small.state().gain[..], large.state().gain[..3]);
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = ChannelConfig {
            seed: 11,
            ..ChannelConfig::default()
        };
        let mut a = Channel::new(5, &cfg, 2);
        let mut b = Channel::new(5, &cfg, 2);
        for _ in 0..50 {
            a.step();
            b.step();
            assert_eq!(a.state().gain, b.state().gain);
        }
        let mut c = Channel::new(5, &cfg, 3);
        c.step();
        a.restart_trace(3);
        a.step();
        assert_eq!(a.state().gain, c.state().gain);
    }

    #[test]
    fn trace_export_writes_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut ch = Channel::new(2, &ChannelConfig::default(), 0);
        export_trace(&mut ch, 3, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.starts_with("t,node,fading_power,gain"));
    }
}
