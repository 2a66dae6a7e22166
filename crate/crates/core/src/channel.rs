//! Dual-polarization fiber channel: chromatic dispersion, Jones rotation,
//! carrier frequency offset, laser phase noise and additive Gaussian noise.
//!
//! Stages run in that order. A stage whose parameters make it the identity
//! is skipped outright, so disabled stages are bit-exact pass-throughs.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ofdm::{Pol, SampleStream};
use crate::seed::derive_seed;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// OSNR reference bandwidth (0.1 nm at 1550 nm).
pub const OSNR_REF_BANDWIDTH_HZ: f64 = 12.5e9;

const PHASE_NOISE_STREAM: u64 = 0x5048_4153;
const AWGN_STREAM: u64 = 0x4157_474e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub fiber_length_km: f64,
    /// Dispersion parameter D in ps/(nm km).
    pub dispersion_ps_nm_km: f64,
    pub wavelength_nm: f64,
    /// Jones rotation angle.
    pub pol_rotation_rad: f64,
    /// Jones differential phase.
    pub pol_phase_rad: f64,
    /// Combined transmitter and local-oscillator linewidth.
    pub linewidth_hz: f64,
    pub freq_offset_hz: f64,
    /// Target SNR per polarization; `inf` disables this noise term.
    pub snr_db: Option<f64>,
    /// Target OSNR in the 12.5 GHz reference bandwidth.
    pub osnr_db: Option<f64>,
    /// Extra noise loaded per amplified span, as the SNR one span alone
    /// would give.
    pub span_snr_db: Option<f64>,
    pub span_length_km: f64,
    /// Occupied signal bandwidth used by the OSNR conversion.
    pub occupied_bandwidth_hz: f64,
    /// Reference signal power per polarization for noise loading. Measured
    /// from the stream when unset.
    pub signal_power: Option<f64>,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            fiber_length_km: 0.0,
            dispersion_ps_nm_km: 17.0,
            wavelength_nm: 1550.0,
            pol_rotation_rad: 0.0,
            pol_phase_rad: 0.0,
            linewidth_hz: 100e3,
            freq_offset_hz: 0.0,
            snr_db: Some(f64::INFINITY),
            osnr_db: None,
            span_snr_db: None,
            span_length_km: 40.0,
            occupied_bandwidth_hz: 232.0 / 512.0 * 12e9,
            signal_power: None,
            seed: 1,
        }
    }
}

impl ChannelConfig {
    /// Every impairment off.
    pub fn transparent() -> Self {
        ChannelConfig {
            linewidth_hz: 0.0,
            ..ChannelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fiber_length_km >= 0.0) {
            return bad(format!("fiber length must be >= 0, got {}", self.fiber_length_km));
        }
        if !(self.linewidth_hz >= 0.0) {
            return bad(format!("linewidth must be >= 0, got {}", self.linewidth_hz));
        }
        match (self.snr_db, self.osnr_db) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("exactly one of snr_db and osnr_db must be set".into()),
        }
        if self.snr_db.is_some_and(f64::is_nan) || self.osnr_db.is_some_and(f64::is_nan) {
            return bad("noise level is NaN".into());
        }
        if !(self.span_length_km > 0.0) {
            return bad(format!("span length must be positive, got {}", self.span_length_km));
        }
        if self.osnr_db.is_some() && !(self.occupied_bandwidth_hz > 0.0) {
            return bad("OSNR conversion needs a positive occupied bandwidth".into());
        }
        for (name, v) in [
            ("dispersion", self.dispersion_ps_nm_km),
            ("wavelength", self.wavelength_nm),
            ("pol rotation", self.pol_rotation_rad),
            ("pol phase", self.pol_phase_rad),
            ("frequency offset", self.freq_offset_hz),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    /// Amplified spans covering the fiber.
    pub fn spans(&self) -> usize {
        if self.fiber_length_km <= 0.0 {
            0
        } else {
            (self.fiber_length_km / self.span_length_km - 1e-9).ceil() as usize
        }
    }

    /// Linear SNR implied by the receiver-side noise specification alone.
    pub fn receiver_snr_linear(&self) -> f64 {
        match (self.snr_db, self.osnr_db) {
            (Some(s), _) => db_to_linear(s),
            (None, Some(o)) => osnr_to_snr_linear(db_to_linear(o), self.occupied_bandwidth_hz),
            (None, None) => f64::INFINITY,
        }
    }

    /// Noise-to-signal power ratio from the receiver and span terms combined.
    pub fn noise_to_signal(&self) -> f64 {
        let mut nsr = 1.0 / self.receiver_snr_linear();
        if let Some(span) = self.span_snr_db {
            nsr += self.spans() as f64 / db_to_linear(span);
        }
        nsr
    }

    /// Effective SNR in dB after all noise terms.
    pub fn effective_snr_db(&self) -> f64 {
        -10.0 * self.noise_to_signal().log10()
    }

    /// Quadratic phase coefficient `pi lambda^2 D L / c` in s^2.
    pub fn cd_beta(&self) -> f64 {
        let lambda = self.wavelength_nm * 1e-9;
        let d = self.dispersion_ps_nm_km * 1e-6; // s/m^2
        let l = self.fiber_length_km * 1e3;
        PI * lambda * lambda * d * l / SPEED_OF_LIGHT
    }

    /// All-pass dispersion response at baseband frequency `f`.
    pub fn cd_response(&self, f: f64) -> Complex64 {
        Complex64::from_polar(1.0, -self.cd_beta() * f * f)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `SNR = OSNR * 2 B_ref / R_s`, both polarizations counted in the OSNR.
pub fn osnr_to_snr_linear(osnr: f64, occupied_bandwidth_hz: f64) -> f64 {
    osnr * 2.0 * OSNR_REF_BANDWIDTH_HZ / occupied_bandwidth_hz
}

/// Differential group delay across `bandwidth_hz`, in seconds:
/// `D L dlambda` with `dlambda = lambda^2 df / c`.
pub fn cd_delay_spread(cfg: &ChannelConfig, bandwidth_hz: f64) -> f64 {
    let lambda = cfg.wavelength_nm * 1e-9;
    let dlambda = lambda * lambda * bandwidth_hz / SPEED_OF_LIGHT;
    cfg.dispersion_ps_nm_km * 1e-6 * cfg.fiber_length_km * 1e3 * dlambda
}

/// Two polarization tributaries of equal length and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolStream {
    pub x_pol: SampleStream,
    pub y_pol: SampleStream,
}

impl DualPolStream {
    pub fn new(x_pol: SampleStream, y_pol: SampleStream) -> Result<Self> {
        if x_pol.len() != y_pol.len() || x_pol.sample_rate != y_pol.sample_rate {
            return Err(Error::Framing(format!(
                "polarization streams differ: {} vs {} samples",
                x_pol.len(),
                y_pol.len()
            )));
        }
        Ok(DualPolStream { x_pol, y_pol })
    }

    pub fn len(&self) -> usize {
        self.x_pol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_pol.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.x_pol.sample_rate
    }

    pub fn pol(&self, p: Pol) -> &SampleStream {
        match p {
            Pol::X => &self.x_pol,
            Pol::Y => &self.y_pol,
        }
    }

    pub fn pol_mut(&mut self, p: Pol) -> &mut SampleStream {
        match p {
            Pol::X => &mut self.x_pol,
            Pol::Y => &mut self.y_pol,
        }
    }

    pub fn energy(&self) -> f64 {
        self.x_pol.energy() + self.y_pol.energy()
    }

    /// Mean power per polarization.
    pub fn mean_power(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.energy() / (2 * self.len()) as f64
        }
    }
}

/// Baseband frequency of FFT bin `k` for an `n`-point transform.
pub(crate) fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    let k = if k >= n.div_ceil(2) { k as f64 - n as f64 } else { k as f64 };
    k * sample_rate / n as f64
}

/// Multiplies the stream's spectrum by the dispersion response.
pub fn apply_cd(stream: &SampleStream, cfg: &ChannelConfig) -> SampleStream {
    if cfg.fiber_length_km == 0.0 || cfg.dispersion_ps_nm_km == 0.0 || stream.is_empty() {
        return stream.clone();
    }
    let n = stream.len();
    let mut planner = FftPlanner::new();
    let mut buf = stream.samples.clone();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        *z *= cfg.cd_response(bin_frequency(k, n, stream.sample_rate)) / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    SampleStream::new(buf, stream.sample_rate)
}

/// The unitary Jones matrix `[[c, s e^{jd}], [-s e^{-jd}, c]]`.
pub fn jones_matrix(theta: f64, delta: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::from_polar(s, delta)],
        [-Complex64::from_polar(s, -delta), Complex64::new(c, 0.0)],
    ]
}

pub fn apply_pol_mix(dp: &DualPolStream, cfg: &ChannelConfig) -> DualPolStream {
    if cfg.pol_rotation_rad == 0.0 && cfg.pol_phase_rad == 0.0 {
        return dp.clone();
    }
    let j = jones_matrix(cfg.pol_rotation_rad, cfg.pol_phase_rad);
    let (xs, ys): (Vec<_>, Vec<_>) = dp
        .x_pol
        .samples
        .iter()
        .zip(&dp.y_pol.samples)
        .map(|(&x, &y)| (j[0][0] * x + j[0][1] * y, j[1][0] * x + j[1][1] * y))
        .unzip();
    let fs = dp.sample_rate();
    DualPolStream {
        x_pol: SampleStream::new(xs, fs),
        y_pol: SampleStream::new(ys, fs),
    }
}

/// Wiener phase trajectory with per-sample increment variance
/// `2 pi linewidth / sample_rate`, starting at zero.
pub fn wiener_phase(len: usize, linewidth_hz: f64, sample_rate: f64, seed: u64) -> Vec<f64> {
    let sigma = (2.0 * PI * linewidth_hz / sample_rate).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PHASE_NOISE_STREAM));
    let mut phi = 0.0;
    (0..len)
        .map(|k| {
            if k > 0 {
                let step: f64 = StandardNormal.sample(&mut rng);
                phi += sigma * step;
            }
            phi
        })
        .collect()
}

/// Common laser phase noise on both polarizations.
pub fn apply_phase_noise(dp: &DualPolStream, cfg: &ChannelConfig) -> DualPolStream {
    if cfg.linewidth_hz == 0.0 {
        return dp.clone();
    }
    let phi = wiener_phase(dp.len(), cfg.linewidth_hz, dp.sample_rate(), cfg.seed);
    rotate_both(dp, |k| phi[k])
}

pub fn apply_freq_offset(dp: &DualPolStream, cfg: &ChannelConfig) -> DualPolStream {
    if cfg.freq_offset_hz == 0.0 {
        return dp.clone();
    }
    let w = 2.0 * PI * cfg.freq_offset_hz / dp.sample_rate();
    rotate_both(dp, |k| w * k as f64)
}

fn rotate_both(dp: &DualPolStream, phase: impl Fn(usize) -> f64) -> DualPolStream {
    let rot: Vec<Complex64> = (0..dp.len()).map(|k| Complex64::from_polar(1.0, phase(k))).collect();
    let apply = |s: &SampleStream| {
        SampleStream::new(
            s.samples.iter().zip(&rot).map(|(z, r)| z * r).collect(),
            s.sample_rate,
        )
    };
    DualPolStream {
        x_pol: apply(&dp.x_pol),
        y_pol: apply(&dp.y_pol),
    }
}

/// Adds circular complex Gaussian noise to each polarization.
pub fn apply_awgn(dp: &DualPolStream, cfg: &ChannelConfig) -> DualPolStream {
    let nsr = cfg.noise_to_signal();
    if nsr == 0.0 {
        return dp.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, AWGN_STREAM));
    let mut out = dp.clone();
    for p in Pol::BOTH {
        let stream = out.pol_mut(p);
        let power = cfg.signal_power.unwrap_or_else(|| stream.mean_power());
        let sigma = (power * nsr / 2.0).sqrt();
        for z in stream.samples.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(re, im) * sigma;
        }
    }
    out
}

/// CD, polarization mixing, frequency offset, phase noise, then noise.
pub fn run_channel(dp: &DualPolStream, cfg: &ChannelConfig) -> Result<DualPolStream> {
    cfg.validate()?;
    let cd = DualPolStream::new(apply_cd(&dp.x_pol, cfg), apply_cd(&dp.y_pol, cfg))?;
    let mixed = apply_pol_mix(&cd, cfg);
    let shifted = apply_freq_offset(&mixed, cfg);
    let rotated = apply_phase_noise(&shifted, cfg);
    Ok(apply_awgn(&rotated, cfg))
}
