//! Run configuration: a flat TOML file of `key = value` lines with units in
//! the key names. Every key is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::ofdm::OfdmConfig;
use crate::pdm::{plan_from_pdr, PowerPlan};
use crate::rx::RxConfig;
use crate::sic::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_fft: usize,
    pub n_data: usize,
    pub cp_len: usize,
    pub n_frame: usize,
    pub n_ts: usize,
    pub sample_rate_hz: f64,
    pub dft_spread: bool,

    /// Strong-to-weak branch power ratio.
    pub pdr: f64,
    pub method: Method,

    pub fiber_length_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub wavelength_nm: f64,
    pub pol_rotation_rad: f64,
    pub pol_phase_rad: f64,
    pub linewidth_hz: f64,
    pub freq_offset_hz: f64,
    /// Receiver SNR per polarization. Unset with `osnr_db` unset means no
    /// receiver noise.
    pub snr_db: Option<f64>,
    pub osnr_db: Option<f64>,
    pub span_snr_db: Option<f64>,
    pub span_length_km: f64,

    pub timing_backoff_samples: usize,

    /// Bits simulated per branch (both polarizations), rounded up to whole frames.
    pub bits_per_branch: u64,
    /// Lowest BER the run is expected to resolve; only used for a warning.
    pub target_ber: f64,
    /// Orthogonal bands in the rate formula. Only one band is simulated.
    pub bands: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let o = OfdmConfig::default();
        let c = ChannelConfig::default();
        RunConfig {
            n_fft: o.n_fft,
            n_data: o.n_data,
            cp_len: o.cp_len,
            n_frame: o.n_frame,
            n_ts: o.n_ts,
            sample_rate_hz: o.sample_rate,
            dft_spread: o.dft_spread,
            pdr: 4.0,
            method: Method::Sic,
            fiber_length_km: c.fiber_length_km,
            dispersion_ps_nm_km: c.dispersion_ps_nm_km,
            wavelength_nm: c.wavelength_nm,
            pol_rotation_rad: c.pol_rotation_rad,
            pol_phase_rad: c.pol_phase_rad,
            linewidth_hz: c.linewidth_hz,
            freq_offset_hz: c.freq_offset_hz,
            snr_db: None,
            osnr_db: None,
            span_snr_db: None,
            span_length_km: c.span_length_km,
            timing_backoff_samples: RxConfig::default().timing_backoff,
            bits_per_branch: 200_000,
            target_ber: 3.8e-3,
            bands: 3,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Canonical JSON, the input to the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm().validate()?;
        self.power_plan()?;
        if self.snr_db.is_some() && self.osnr_db.is_some() {
            return Err(Error::Config("set at most one of snr_db and osnr_db".into()));
        }
        self.channel(0).validate()?;
        if self.bits_per_branch == 0 {
            return Err(Error::Config("bits_per_branch must be positive".into()));
        }
        if !(self.target_ber > 0.0 && self.target_ber < 0.5) {
            return Err(Error::Config(format!("target_ber {} outside (0, 0.5)", self.target_ber)));
        }
        if self.bands == 0 {
            return Err(Error::Config("bands must be positive".into()));
        }
        if self.timing_backoff_samples > self.cp_len {
            return Err(Error::Config(format!(
                "timing backoff {} exceeds the cyclic prefix {}",
                self.timing_backoff_samples, self.cp_len
            )));
        }
        Ok(())
    }

    pub fn ofdm(&self) -> OfdmConfig {
        OfdmConfig {
            n_fft: self.n_fft,
            n_data: self.n_data,
            cp_len: self.cp_len,
            n_frame: self.n_frame,
            n_ts: self.n_ts,
            sample_rate: self.sample_rate_hz,
            dft_spread: self.dft_spread,
        }
    }

    pub fn power_plan(&self) -> Result<PowerPlan> {
        plan_from_pdr(self.pdr)
    }

    pub fn rx(&self) -> RxConfig {
        RxConfig {
            timing_backoff: self.timing_backoff_samples,
            ..RxConfig::default()
        }
    }

    pub fn channel(&self, seed: u64) -> ChannelConfig {
        let o = self.ofdm();
        ChannelConfig {
            fiber_length_km: self.fiber_length_km,
            dispersion_ps_nm_km: self.dispersion_ps_nm_km,
            wavelength_nm: self.wavelength_nm,
            pol_rotation_rad: self.pol_rotation_rad,
            pol_phase_rad: self.pol_phase_rad,
            linewidth_hz: self.linewidth_hz,
            freq_offset_hz: self.freq_offset_hz,
            snr_db: match self.osnr_db {
                Some(_) => None,
                None => Some(self.snr_db.unwrap_or(f64::INFINITY)),
            },
            osnr_db: self.osnr_db,
            span_snr_db: self.span_snr_db,
            span_length_km: self.span_length_km,
            occupied_bandwidth_hz: o.n_data as f64 / o.n_fft as f64 * o.sample_rate,
            signal_power: None,
            seed,
        }
    }

    /// Payload bits per branch and polarization in one frame.
    pub fn bits_per_block(&self) -> usize {
        2 * self.n_data * (self.n_frame - self.n_ts)
    }

    pub fn frames(&self) -> usize {
        let per_frame = 2 * self.bits_per_block() as u64;
        self.bits_per_branch.div_ceil(per_frame) as usize
    }
}

/// Sweepable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Pdr,
    SnrDb,
    OsnrDb,
    FiberLength,
}

impl Axis {
    /// Column name in the sweep CSV.
    pub fn column(self) -> &'static str {
        match self {
            Axis::Pdr => "pdr",
            Axis::SnrDb => "snr_db",
            Axis::OsnrDb => "osnr_db",
            Axis::FiberLength => "fiber_length_km",
        }
    }

    pub fn from_column(s: &str) -> Result<Self> {
        [Axis::Pdr, Axis::SnrDb, Axis::OsnrDb, Axis::FiberLength]
            .into_iter()
            .find(|a| a.column() == s)
            .ok_or_else(|| Error::Usage(format!("unknown axis column '{s}'")))
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: f64) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            Axis::Pdr => c.pdr = value,
            Axis::SnrDb => {
                c.snr_db = Some(value);
                c.osnr_db = None;
            }
            Axis::OsnrDb => {
                c.osnr_db = Some(value);
                c.snr_db = None;
            }
            Axis::FiberLength => c.fiber_length_km = value,
        }
        c
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pdr" => Ok(Axis::Pdr),
            "snr_db" | "snr" => Ok(Axis::SnrDb),
            "osnr_db" | "osnr" => Ok(Axis::OsnrDb),
            "fiber_length" | "fiber_length_km" => Ok(Axis::FiberLength),
            other => Err(Error::Usage(format!(
                "unknown axis '{other}' (expected pdr, snr_db, osnr_db or fiber_length)"
            ))),
        }
    }
}
