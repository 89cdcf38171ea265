//! Transmit-power adaptation and the per-superframe energy model.
//!
//! A node transmitting at full power reaches every peer within the range
//! radius `R`. With power control it scales its data and ack transmissions
//! to the peer distance `x` as `P_tx(x) = P_tx(R) x^2 / R^2` and sleeps
//! through data slots that are not addressed to it. With peers uniform in a
//! ball of radius `R`, `E[x^2] = 3R^2/5`.
//!
//! Per superframe, with `D` data slots, `N` nodes, `C = N` control packets
//! and `lambda = floor(D / N)` data slots per node:
//!
//! ```text
//! E_wpc = P_tx(R) (T_c + lambda (T_d + T_a)) + P_rx ((C-1) T_c + (D - lambda)(T_d + T_a))
//! E_pc  = P_tx(R) T_c + P_tx(x) lambda (T_d + T_a) + P_rx ((C-1) T_c + lambda (T_d + T_a))
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::timing::{capacity_max_data_slots, FrameTiming};

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("peer at {distance} m is beyond the range radius {range} m")]
    OutOfRange { distance: f64, range: f64 },
    #[error("radio parameter {0} is out of range")]
    InvalidParam(&'static str),
}

/// Denominator of the free-space formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FriisForm {
    /// `4 pi^2 d^2 L`
    #[default]
    FourPiSquared,
    /// `(4 pi)^2 d^2 L`
    Standard,
}

/// Spatial distribution of a peer around a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpatialModel {
    /// Uniform in a 3-D ball of radius `R`: `E[x^2] = 3R^2/5`.
    #[default]
    Ball,
    /// Uniform in a disk of radius `R`: `E[x^2] = R^2/2`.
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    /// Full transmit power, which reaches exactly the range radius.
    pub p_tx_max_mw: f64,
    pub p_rx_mw: f64,
    pub gain_tx: f64,
    pub gain_rx: f64,
    pub wavelength_m: f64,
    pub loss: f64,
    pub range_m: f64,
    pub friis: FriisForm,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            p_tx_max_mw: 1500.0,
            p_rx_mw: 800.0,
            gain_tx: 1.0,
            gain_rx: 1.0,
            wavelength_m: 0.125,
            loss: 1.0,
            range_m: 250.0,
            friis: FriisForm::FourPiSquared,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let positive = [
            ("p_tx_max_mw", self.p_tx_max_mw),
            ("p_rx_mw", self.p_rx_mw),
            ("gain_tx", self.gain_tx),
            ("gain_rx", self.gain_rx),
            ("wavelength_m", self.wavelength_m),
            ("range_m", self.range_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EnergyError::InvalidParam(name));
            }
        }
        if !(self.loss.is_finite() && self.loss >= 1.0) {
            return Err(EnergyError::InvalidParam("loss"));
        }
        Ok(())
    }

    fn path_constant(&self) -> f64 {
        let pi = std::f64::consts::PI;
        let four_pi_sq = match self.friis {
            FriisForm::FourPiSquared => 4.0 * pi * pi,
            FriisForm::Standard => 16.0 * pi * pi,
        };
        self.gain_tx * self.gain_rx * self.wavelength_m * self.wavelength_m / (four_pi_sq * self.loss)
    }

    /// Received power at the range edge when sending at full power.
    pub fn rx_threshold_mw(&self) -> f64 {
        self.p_tx_max_mw * self.path_constant() / (self.range_m * self.range_m)
    }
}

pub fn friis_rx_power(p_t_mw: f64, d: f64, params: &RadioParams) -> Result<f64, EnergyError> {
    if d.is_nan() || d <= 0.0 {
        return Err(EnergyError::NonPositiveDistance(d));
    }
    Ok(p_t_mw * params.path_constant() / (d * d))
}

/// Distance implied by a transmit/receive power pair.
pub fn estimate_distance(p_t_mw: f64, p_r_mw: f64, params: &RadioParams) -> f64 {
    (p_t_mw * params.path_constant() / p_r_mw).sqrt()
}

pub fn required_tx_power(d: f64, params: &RadioParams) -> Result<f64, EnergyError> {
    if d.is_nan() || d <= 0.0 {
        return Err(EnergyError::NonPositiveDistance(d));
    }
    if d > params.range_m {
        return Err(EnergyError::OutOfRange {
            distance: d,
            range: params.range_m,
        });
    }
    Ok(params.p_tx_max_mw * d * d / (params.range_m * params.range_m))
}

pub fn mean_square_distance(model: SpatialModel, range: f64) -> f64 {
    match model {
        SpatialModel::Ball => 0.6 * range * range,
        SpatialModel::Disk => 0.5 * range * range,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    /// Joules per superframe without power control.
    pub e_wpc: f64,
    /// Expected joules per superframe with power control.
    pub e_pc: f64,
    /// Watts saved.
    pub p_saved: f64,
    /// Superframes per second.
    pub xi: f64,
    /// Data slots per node per superframe.
    pub lambda_pkts: usize,
    /// Data slots per superframe.
    pub data_slots: usize,
}

struct Terms {
    p_tx: f64,
    p_rx: f64,
    tc: f64,
    pair: f64,
    c: f64,
    d: f64,
    lambda: f64,
}

fn terms(timing: &FrameTiming, n_nodes: usize, params: &RadioParams) -> Terms {
    let n = n_nodes.max(1);
    let d = capacity_max_data_slots(timing, n);
    Terms {
        p_tx: params.p_tx_max_mw * 1e-3,
        p_rx: params.p_rx_mw * 1e-3,
        tc: timing.control.as_secs_f64(),
        pair: timing.data_pair().as_secs_f64(),
        c: n as f64,
        d: d as f64,
        lambda: (d / n) as f64,
    }
}

pub fn energy_without_power_control(timing: &FrameTiming, n_nodes: usize, params: &RadioParams) -> f64 {
    let t = terms(timing, n_nodes, params);
    t.p_tx * (t.tc + t.lambda * t.pair) + t.p_rx * ((t.c - 1.0) * t.tc + (t.d - t.lambda) * t.pair)
}

/// Energy with power control for a peer at mean square distance `mean_sq_distance`.
pub fn energy_with_power_control(
    timing: &FrameTiming,
    n_nodes: usize,
    params: &RadioParams,
    mean_sq_distance: f64,
) -> f64 {
    let t = terms(timing, n_nodes, params);
    let p_x = t.p_tx * mean_sq_distance / (params.range_m * params.range_m);
    t.p_tx * t.tc + p_x * t.lambda * t.pair + t.p_rx * ((t.c - 1.0) * t.tc + t.lambda * t.pair)
}

pub fn expected_power_saved(timing: &FrameTiming, n_nodes: usize, params: &RadioParams) -> f64 {
    let t = terms(timing, n_nodes, params);
    let xi = timing.frames_per_sec();
    xi * (0.4 * t.lambda * t.p_tx * t.pair + (t.d - 2.0 * t.lambda) * t.p_rx * t.pair)
}

pub fn energy_breakdown(timing: &FrameTiming, n_nodes: usize, params: &RadioParams) -> EnergyBreakdown {
    let t = terms(timing, n_nodes, params);
    let e_wpc = energy_without_power_control(timing, n_nodes, params);
    let e_pc = energy_with_power_control(
        timing,
        n_nodes,
        params,
        mean_square_distance(SpatialModel::Ball, params.range_m),
    );
    EnergyBreakdown {
        e_wpc,
        e_pc,
        p_saved: expected_power_saved(timing, n_nodes, params),
        xi: timing.frames_per_sec(),
        lambda_pkts: t.lambda as usize,
        data_slots: t.d as usize,
    }
}

/// A point uniform in the ball (or disk) of radius `range` around the origin.
pub fn sample_point<R: Rng>(rng: &mut R, model: SpatialModel, range: f64) -> [f64; 3] {
    loop {
        let x = rng.random_range(-1.0..1.0);
        let y = rng.random_range(-1.0..1.0);
        let z = match model {
            SpatialModel::Ball => rng.random_range(-1.0..1.0),
            SpatialModel::Disk => 0.0,
        };
        if x * x + y * y + z * z <= 1.0 {
            return [x * range, y * range, z * range];
        }
    }
}

const MC_CHUNK: usize = 1 << 14;

fn chunked_mean<F>(samples: usize, seed: u64, f: F) -> f64
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    let sum: f64 = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let n = MC_CHUNK.min(samples - i * MC_CHUNK);
            (0..n).map(|_| f(&mut rng)).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    sum / samples as f64
}

/// Monte-Carlo estimate of `E[x^2]` for a peer placed by `model`.
pub fn mc_mean_square_distance(samples: usize, seed: u64, model: SpatialModel, range: f64) -> f64 {
    chunked_mean(samples, seed, |rng| {
        let p = sample_point(rng, model, range);
        p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
    })
}

/// Monte-Carlo estimate of the power saved, from event-by-event accounting
/// of one superframe per sample with the peer placed uniformly in the ball.
///
/// Each sample node sends its control packet, `lambda` data packets and
/// `lambda` acks for its peer's data. Without power control it transmits at
/// full power and listens to every other slot; with power control it sends
/// data and acks at the distance-scaled power and only receives the control
/// packets, its peer's data and the acks for its own data.
pub fn mc_power_saved(
    timing: &FrameTiming,
    n_nodes: usize,
    params: &RadioParams,
    samples: usize,
    seed: u64,
) -> f64 {
    let n = n_nodes.max(1);
    let d_slots = capacity_max_data_slots(timing, n);
    let lambda = d_slots / n;
    let tc = timing.control.as_secs_f64();
    let td = timing.data.as_secs_f64();
    let ta = timing.ack.as_secs_f64();
    let p_max = params.p_tx_max_mw * 1e-3;
    let p_rx = params.p_rx_mw * 1e-3;
    let per_frame = timing.superframe.as_secs_f64();
    chunked_mean(samples, seed, |rng| {
        let p = sample_point(rng, SpatialModel::Ball, params.range_m);
        let x = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt().max(f64::MIN_POSITIVE);
        let p_x = required_tx_power(x, params).unwrap_or(params.p_tx_max_mw) * 1e-3;

        let mut full = p_max * tc;
        let mut scaled = p_max * tc;
        for _ in 1..n {
            full += p_rx * tc;
            scaled += p_rx * tc;
        }
        for _ in 0..lambda {
            // own data out, peer's ack in
            full += p_max * td + p_rx * ta;
            scaled += p_x * td + p_rx * ta;
            // peer's data in, own ack out
            full += p_rx * td + p_max * ta;
            scaled += p_rx * td + p_x * ta;
        }
        // everyone else's slots: listened to in full, slept through otherwise
        for _ in 0..d_slots.saturating_sub(2 * lambda) {
            full += p_rx * (td + ta);
        }
        (full - scaled) / per_frame
    })
}
