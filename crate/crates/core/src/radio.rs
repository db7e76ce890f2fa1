//! Wireless link budget between end users and edge nodes.
//!
//! Channel gain `g = θ·ω·d^(−α)·|h|²` folds path loss, fading and the
//! BER-dependent SNR gap `θ = −1.5 / ln(5·BER)`. The uplink rate at bandwidth
//! `B` and transmit power `P` is `B·log2(1 + P·g / (N0·B))`, which inverts to
//! the power needed for a target rate, `(N0·B/g)·(2^(r/B) − 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scenario::{EndUserSpec, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Noise spectral density N0 in W/Hz.
    #[serde(rename = "n0_w_per_hz")]
    pub noise_density: f64,
    /// Antenna/wavelength constant ω.
    #[serde(rename = "omega")]
    pub antenna_constant: f64,
    /// Path loss exponent α, between 2 and 6.
    #[serde(rename = "alpha")]
    pub path_loss_exponent: f64,
    /// Target bit error rate, in (0, 0.2).
    #[serde(rename = "ber")]
    pub ber_target: f64,
    /// Transmit power cap in W.
    #[serde(rename = "p_max_w")]
    pub max_tx_power: f64,
    #[serde(rename = "xi_up_s")]
    pub access_delay_up: f64,
    #[serde(rename = "xi_down_s")]
    pub access_delay_down: f64,
    #[serde(rename = "download_rate_bps")]
    pub download_rate: f64,
    /// When set, every uplink runs at this rate instead of the minimum rate
    /// that meets the deadline.
    #[serde(
        rename = "fixed_uplink_rate_bps",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub fixed_uplink_rate: Option<f64>,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(2.0..=6.0).contains(&self.path_loss_exponent) {
            return Err(invalid(format!(
                "path loss exponent must lie in [2, 6], got {}",
                self.path_loss_exponent
            )));
        }
        theta(self)?;
        for (name, v) in [
            ("n0_w_per_hz", self.noise_density),
            ("omega", self.antenna_constant),
            ("p_max_w", self.max_tx_power),
            ("download_rate_bps", self.download_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("`{name}` must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("xi_up_s", self.access_delay_up),
            ("xi_down_s", self.access_delay_down),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("`{name}` must be non-negative, got {v}")));
            }
        }
        if let Some(r) = self.fixed_uplink_rate {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid("`fixed_uplink_rate_bps` must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeParams {
    /// Iteration-count constant υ.
    pub upsilon: f64,
    /// Local accuracy ε in (0, 1).
    pub epsilon: f64,
}

impl ComputeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.upsilon > 0.0) {
            return Err(invalid("upsilon must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// SNR gap `−1.5 / ln(5·BER)`; positive only for BER below 0.2.
pub fn theta(params: &ChannelParams) -> Result<f64> {
    let ber = params.ber_target;
    if !(ber > 0.0 && ber < 0.2) {
        return Err(invalid(format!("BER must lie in (0, 0.2), got {ber}")));
    }
    Ok(-1.5 / (5.0 * ber).ln())
}

pub fn channel_gain(distance: f64, fading: f64, params: &ChannelParams) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(invalid(format!(
            "channel gain is singular at distance {distance}"
        )));
    }
    Ok(theta(params)?
        * params.antenna_constant
        * distance.powf(-params.path_loss_exponent)
        * fading
        * fading)
}

/// Achievable uplink rate in bit/s.
pub fn rate(bandwidth: f64, tx_power: f64, gain: f64, params: &ChannelParams) -> f64 {
    let snr = tx_power * gain / (params.noise_density * bandwidth);
    bandwidth * snr.ln_1p() / std::f64::consts::LN_2
}

/// Transmit power needed to sustain `rate` over `bandwidth`.
pub fn required_power(rate: f64, bandwidth: f64, gain: f64, params: &ChannelParams) -> f64 {
    params.noise_density * bandwidth / gain * pow2_minus_one(rate / bandwidth)
}

/// Energy spent uploading `model_bits` at `rate`.
pub fn transmit_energy(
    model_bits: f64,
    rate: f64,
    bandwidth: f64,
    gain: f64,
    params: &ChannelParams,
) -> f64 {
    model_bits * params.noise_density * bandwidth / (rate * gain) * pow2_minus_one(rate / bandwidth)
}

fn pow2_minus_one(x: f64) -> f64 {
    (x * std::f64::consts::LN_2).exp_m1()
}

/// Local update time `υ·log2(1/ε)·ψ·D / f`.
pub fn computation_time(user: &EndUserSpec, compute: &ComputeParams) -> f64 {
    compute.upsilon * (1.0 / compute.epsilon).log2() * user.cycles_per_sample
        * user.data_size() as f64
        / user.cpu_frequency
}

pub fn link_latency(model_bits: f64, rate: f64, access_delay: f64) -> f64 {
    model_bits / rate + access_delay
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub model_bits: f64,
    pub rate: f64,
    pub access_delay: f64,
}

impl Link {
    pub fn latency(&self) -> f64 {
        link_latency(self.model_bits, self.rate, self.access_delay)
    }
}

/// Slowest uplink plus slowest downlink.
pub fn max_round_latency(up: &[Link], down: &[Link]) -> Result<f64> {
    if up.is_empty() || down.is_empty() {
        return Err(invalid("round latency needs at least one uplink and one downlink"));
    }
    let worst = |links: &[Link]| links.iter().map(Link::latency).fold(f64::NEG_INFINITY, f64::max);
    Ok(worst(up) + worst(down))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinBandwidth {
    Finite(f64),
    /// No bandwidth keeps the transmit power under the cap.
    Unbounded,
}

impl MinBandwidth {
    pub fn finite(self) -> Option<f64> {
        match self {
            MinBandwidth::Finite(b) => Some(b),
            MinBandwidth::Unbounded => None,
        }
    }
}

const BISECTION_REL_WIDTH: f64 = 1e-12;

/// Smallest bandwidth at which uploading `model_bits` within
/// `deadline_remaining` seconds needs no more than the power cap.
///
/// Power is decreasing in bandwidth with floor `N0·r·ln2/g`; when that floor
/// already exceeds the cap the result is [`MinBandwidth::Unbounded`].
pub fn min_bandwidth_for_deadline(
    model_bits: f64,
    deadline_remaining: f64,
    gain: f64,
    params: &ChannelParams,
) -> Result<MinBandwidth> {
    if !(deadline_remaining > 0.0) {
        return Err(Error::DeadlineInfeasible(deadline_remaining));
    }
    let r = model_bits / deadline_remaining;
    let p_max = params.max_tx_power;
    let floor = params.noise_density * r * std::f64::consts::LN_2 / gain;
    if floor >= p_max {
        return Ok(MinBandwidth::Unbounded);
    }
    let power = |b: f64| required_power(r, b, gain, params);
    // Bracket: power(lo) > p_max >= power(hi).
    let (mut lo, mut hi) = if power(r) <= p_max {
        let mut lo = r;
        while power(lo) <= p_max {
            lo *= 0.5;
        }
        (lo, lo * 2.0)
    } else {
        let mut hi = r;
        while power(hi) > p_max {
            hi *= 2.0;
        }
        (hi * 0.5, hi)
    };
    for _ in 0..200 {
        if hi - lo <= BISECTION_REL_WIDTH * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if power(mid) > p_max {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MinBandwidth::Finite(hi))
}

/// Uplink quantities for one user-edge pair at a fixed bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEstimate {
    pub gain: f64,
    /// Rate the user transmits at.
    pub rate: f64,
    /// Transmit power used for that rate.
    pub power: f64,
    /// Upload latency including access delay.
    pub latency: f64,
    /// Upload energy.
    pub energy: f64,
}

/// Uplink estimate for user `i` to edge `j` at `bandwidth`.
///
/// The user transmits at the smallest rate that meets the deadline after
/// local computation. If the power cap does not allow that rate, it transmits
/// at full power instead and the returned latency overshoots the deadline.
/// With `fixed_uplink_rate` set, that rate is used as is.
pub fn link_estimate(scenario: &Scenario, i: usize, j: usize, bandwidth: f64) -> Result<LinkEstimate> {
    let params = &scenario.radio;
    let user = &scenario.users[i];
    let gain = channel_gain(scenario.distance(i, j), user.fading_magnitude, params)?;
    let bits = scenario.model_bits;
    let xi = params.access_delay_up;
    let rate = match params.fixed_uplink_rate {
        Some(r) => r,
        None => {
            let cap_rate = rate(bandwidth, params.max_tx_power, gain, params);
            let remaining = scenario.deadline - computation_time(user, &scenario.compute) - xi;
            if remaining > 0.0 {
                (bits / remaining).min(cap_rate)
            } else {
                cap_rate
            }
        }
    };
    let power = required_power(rate, bandwidth, gain, params);
    Ok(LinkEstimate {
        gain,
        rate,
        power,
        latency: link_latency(bits, rate, xi),
        energy: transmit_energy(bits, rate, bandwidth, gain, params),
    })
}
