//! Receiver DSP: frame timing, carrier frequency offset, 2x2 channel
//! estimation, zero-forcing equalization and common-phase recovery.
//!
//! Frame layout (per polarization, one column per OFDM symbol):
//!
//! ```text
//! | TS#1 timing | TS#2 X | TS#3 Y | ... | TS#15 Y | payload ... |
//! ```
//!
//! TS#1 loads only even subcarriers, so its time-domain body repeats after
//! `n_fft / 2` samples on both polarizations. The MIMO symbols alternate
//! which polarization is lit while the other carries zeros, so each pair
//! measures both columns of the 2x2 response.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::DualPolStream;
use crate::constellation::map_qpsk;
use crate::error::{Error, Result};
use crate::ofdm::{DualPolGrid, OfdmConfig, OfdmModem, Pol, SampleStream, SymbolGrid};
use crate::pdm::PowerPlan;
use crate::seed::derive_seed;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const TRAINING_STREAM: u64 = 0x5452_4e47;

/// Peak timing metric below which synchronization is declared failed.
pub const SYNC_THRESHOLD: f64 = 0.5;

const MAX_PHASE_PASSES: usize = 12;

/// Known training content of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub cfg: OfdmConfig,
    /// TS#1 on the data subcarriers, per polarization.
    pub timing_freq: [Vec<Complex64>; 2],
    /// TS#1 in time, cyclic prefix included, per polarization.
    pub timing_time: [Vec<Complex64>; 2],
    /// TS#2.. on the data subcarriers, per polarization.
    pub mimo: Vec<[Vec<Complex64>; 2]>,
    /// Lit polarization of each MIMO symbol.
    pub schedule: Vec<Pol>,
}

impl TrainingPlan {
    pub fn generate(cfg: &OfdmConfig, seed: u64) -> Result<Self> {
        let modem = OfdmModem::new(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TRAINING_STREAM));
        let qpsk = |rng: &mut ChaCha8Rng| map_qpsk([rng.random_range(0..2), rng.random_range(0..2)]).value();

        let freq = cfg.data_freq_index();
        let mut timing_freq: [Vec<Complex64>; 2] = Default::default();
        let mut timing_time: [Vec<Complex64>; 2] = Default::default();
        for p in Pol::BOTH {
            let col: Vec<Complex64> = freq
                .iter()
                .map(|&k| if k % 2 == 0 { qpsk(&mut rng) * SQRT_2 } else { ZERO })
                .collect();
            let grid = SymbolGrid::from_columns(cfg.n_data, col.clone(), p)?;
            timing_time[p.index()] = modem.modulate_spectrum(&grid)?.samples;
            timing_freq[p.index()] = col;
        }

        let n_mimo = cfg.n_ts - 1;
        let mut mimo = Vec::with_capacity(n_mimo);
        let mut schedule = Vec::with_capacity(n_mimo);
        for j in 0..n_mimo {
            let lit = if j % 2 == 0 { Pol::X } else { Pol::Y };
            let mut cols: [Vec<Complex64>; 2] = [vec![ZERO; cfg.n_data], vec![ZERO; cfg.n_data]];
            cols[lit.index()] = (0..cfg.n_data).map(|_| qpsk(&mut rng)).collect();
            mimo.push(cols);
            schedule.push(lit);
        }
        Ok(TrainingPlan {
            cfg: cfg.clone(),
            timing_freq,
            timing_time,
            mimo,
            schedule,
        })
    }

    /// Training symbols as a transmit stream (`n_ts` symbols).
    pub fn to_stream(&self, modem: &OfdmModem) -> Result<DualPolStream> {
        let n = self.cfg.n_data;
        let mut streams = Vec::with_capacity(2);
        for p in Pol::BOTH {
            let mut entries = self.timing_freq[p.index()].clone();
            for ts in &self.mimo {
                entries.extend_from_slice(&ts[p.index()]);
            }
            let grid = SymbolGrid::from_columns(n, entries, p)?;
            streams.push(modem.modulate_spectrum(&grid)?);
        }
        let y = streams.pop().unwrap();
        let x = streams.pop().unwrap();
        DualPolStream::new(x, y)
    }
}

/// Per-subcarrier 2x2 response, `h[rx][tx]`.
pub type Jones = [[Complex64; 2]; 2];

/// The receiver's view of the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    pub h_matrix: Vec<Jones>,
    /// 2-norm condition number of each subcarrier's matrix.
    pub condition: Vec<f64>,
    pub cfo_hat: f64,
    /// Common phase applied to each payload symbol, radians.
    pub phase_track: Vec<f64>,
    /// Payload symbols where the phase estimate jumped by more than pi/2.
    pub cycle_slips: Vec<usize>,
}

impl ChannelEstimate {
    pub fn identity(n_data: usize) -> Self {
        let one = Complex64::new(1.0, 0.0);
        ChannelEstimate {
            h_matrix: vec![[[one, ZERO], [ZERO, one]]; n_data],
            condition: vec![1.0; n_data],
            cfo_hat: 0.0,
            phase_track: Vec::new(),
            cycle_slips: Vec::new(),
        }
    }

    pub fn max_condition(&self) -> f64 {
        self.condition.iter().cloned().fold(0.0, f64::max)
    }
}

fn condition_number(h: &Jones) -> f64 {
    // singular values of a 2x2 from the Frobenius norm and determinant
    let fro2: f64 = h.iter().flatten().map(|z| z.norm_sqr()).sum();
    let det = (h[0][0] * h[1][1] - h[0][1] * h[1][0]).norm();
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    let s_max = ((fro2 + disc) / 2.0).sqrt();
    let s_min2 = (fro2 - disc) / 2.0;
    if s_min2 <= 0.0 {
        // cancellation near singularity: fall back to det / s_max
        let s_min = det / s_max;
        return if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    }
    s_max / s_min2.sqrt()
}

/// Zero-forcing filter for one subcarrier. For a full-rank square matrix the
/// pseudo-inverse `(H^H H)^-1 H^H` is the plain inverse.
fn pseudo_inverse(h: &Jones) -> Option<Jones> {
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let scale: f64 = h.iter().flatten().map(|z| z.norm_sqr()).sum();
    if !(det.norm_sqr() > 1e-24 * scale * scale) {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [h[1][1] * inv, -h[0][1] * inv],
        [-h[1][0] * inv, h[0][0] * inv],
    ])
}

// ---------------------------------------------------------------------------
// timing and frequency

/// Half-repetition correlation at every start `d` in `0..=last`.
fn half_repetition_metric(dp: &DualPolStream, half: usize, last: usize) -> (Vec<f64>, Vec<Complex64>) {
    let pols = [&dp.x_pol.samples, &dp.y_pol.samples];
    let pair = |k: usize| -> (Complex64, f64, f64) {
        let mut p = ZERO;
        let (mut r1, mut r2) = (0.0, 0.0);
        for s in pols {
            p += s[k].conj() * s[k + half];
            r1 += s[k].norm_sqr();
            r2 += s[k + half].norm_sqr();
        }
        (p, r1, r2)
    };
    let mut p = ZERO;
    let (mut r1, mut r2) = (0.0, 0.0);
    for k in 0..half {
        let (a, b, c) = pair(k);
        p += a;
        r1 += b;
        r2 += c;
    }
    let mut metric = Vec::with_capacity(last + 1);
    let mut corr = Vec::with_capacity(last + 1);
    for d in 0..=last {
        if d > 0 {
            let (a, b, c) = pair(d - 1);
            let (a2, b2, c2) = pair(d + half - 1);
            p += a2 - a;
            r1 += b2 - b;
            r2 += c2 - c;
        }
        let denom = r1 * r2;
        metric.push(if denom > 1e-300 { (p.norm_sqr() / denom).min(1.0) } else { 0.0 });
        corr.push(p);
    }
    (metric, corr)
}

/// Start of the first frame (first sample of TS#1's cyclic prefix).
///
/// A half-repetition autocorrelation finds the TS#1 plateau and a coarse
/// frequency offset; cross-correlating against the known TS#1 waveform then
/// picks the exact start inside the plateau.
pub fn sync_timing(dp: &DualPolStream, plan: &TrainingPlan) -> Result<usize> {
    let cfg = &plan.cfg;
    let sym = cfg.symbol_len();
    let half = cfg.n_fft / 2;
    if dp.len() < sym {
        return Err(Error::Framing(format!(
            "{} samples cannot hold a {}-sample training symbol",
            dp.len(),
            sym
        )));
    }
    let last = (dp.len() - sym).min(cfg.frame_len());
    let (metric, corr) = half_repetition_metric(dp, half, last);
    let (coarse, &peak) = metric
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    if !(peak >= SYNC_THRESHOLD) {
        return Err(Error::SyncFailure {
            peak,
            threshold: SYNC_THRESHOLD,
        });
    }
    let w = corr[coarse].arg() / half as f64; // rad/sample

    let lo = coarse.saturating_sub(cfg.cp_len + cfg.cp_len / 4);
    let hi = (coarse + cfg.cp_len / 4).min(last);
    let mut best = (lo, f64::NEG_INFINITY);
    let pols = [&dp.x_pol.samples, &dp.y_pol.samples];
    for d in lo..=hi {
        let mut score = 0.0;
        for rx in pols {
            for reference in &plan.timing_time {
                let c: Complex64 = (0..sym)
                    .map(|m| reference[m].conj() * rx[d + m] * Complex64::from_polar(1.0, -w * m as f64))
                    .sum();
                score += c.norm_sqr();
            }
        }
        if score > best.1 {
            best = (d, score);
        }
    }
    Ok(best.0)
}

/// Fractional frequency offset from the two halves of TS#1.
/// Capture range is `±sample_rate / n_fft`.
pub fn estimate_cfo(dp: &DualPolStream, plan: &TrainingPlan, offset: usize) -> Result<f64> {
    let cfg = &plan.cfg;
    let half = cfg.n_fft / 2;
    let start = offset + cfg.cp_len / 2;
    let end = offset + cfg.symbol_len() - half;
    if end + half > dp.len() {
        return Err(Error::Framing("training symbol runs past the stream end".into()));
    }
    let mut p = ZERO;
    for s in [&dp.x_pol.samples, &dp.y_pol.samples] {
        for k in start..end {
            p += s[k].conj() * s[k + half];
        }
    }
    Ok(p.arg() * dp.sample_rate() / (2.0 * PI * half as f64))
}

/// Refines a coarse offset with the cyclic-prefix correlation of every
/// symbol in the frame. The coarse error must be within
/// `±sample_rate / (2 n_fft)`.
pub fn refine_cfo(dp: &DualPolStream, cfg: &OfdmConfig, offset: usize, coarse: f64) -> f64 {
    let (n, cp, sym) = (cfg.n_fft, cfg.cp_len, cfg.symbol_len());
    let fs = dp.sample_rate();
    let mut p = ZERO;
    for s in 0..cfg.n_frame {
        let start = offset + s * sym;
        if start + sym > dp.len() {
            break;
        }
        for pol in [&dp.x_pol.samples, &dp.y_pol.samples] {
            for k in start + cp / 4..start + cp - cp / 4 {
                p += pol[k].conj() * pol[k + n];
            }
        }
    }
    if p == ZERO {
        return coarse;
    }
    let residual = (p * Complex64::from_polar(1.0, -2.0 * PI * coarse * n as f64 / fs)).arg();
    coarse + residual * fs / (2.0 * PI * n as f64)
}

/// Removes a frequency offset: multiplies sample `k` by `exp(-j 2 pi f k / fs)`.
pub fn compensate_cfo(dp: &DualPolStream, cfo_hz: f64) -> DualPolStream {
    if cfo_hz == 0.0 {
        return dp.clone();
    }
    let w = -2.0 * PI * cfo_hz / dp.sample_rate();
    let rot = |s: &SampleStream| {
        SampleStream::new(
            s.samples
                .iter()
                .enumerate()
                .map(|(k, z)| z * Complex64::from_polar(1.0, w * k as f64))
                .collect(),
            s.sample_rate,
        )
    };
    DualPolStream {
        x_pol: rot(&dp.x_pol),
        y_pol: rot(&dp.y_pol),
    }
}

/// Cuts one frame starting `backoff` samples before `offset`, so every FFT
/// window opens `backoff` samples early inside its cyclic prefix.
pub fn extract_frame(dp: &DualPolStream, cfg: &OfdmConfig, offset: usize, backoff: usize) -> Result<DualPolStream> {
    let start = offset.saturating_sub(backoff);
    let end = start + cfg.frame_len();
    if end > dp.len() {
        return Err(Error::Framing(format!(
            "frame at {} needs {} samples, stream has {}",
            start,
            end,
            dp.len()
        )));
    }
    let cut = |s: &SampleStream| SampleStream::new(s.samples[start..end].to_vec(), s.sample_rate);
    DualPolStream::new(cut(&dp.x_pol), cut(&dp.y_pol))
}

// ---------------------------------------------------------------------------
// channel estimation and equalization

/// 2x2 response per subcarrier from the MIMO training symbols.
///
/// `ts` holds the received MIMO symbols (columns `1..n_ts` of the frame).
/// Each entry `h[rx][tx]` is the mean of received over known values across
/// the symbols in which `tx` was lit.
pub fn estimate_channel(ts: &DualPolGrid, plan: &TrainingPlan) -> Result<ChannelEstimate> {
    let n = plan.cfg.n_data;
    if ts.cols() != plan.mimo.len() || ts.rows() != n {
        return Err(Error::Framing(format!(
            "expected {} MIMO training symbols of {} rows, got {}x{}",
            plan.mimo.len(),
            n,
            ts.rows(),
            ts.cols()
        )));
    }
    let mut h = vec![[[ZERO; 2]; 2]; n];
    let mut counts = [0usize; 2];
    for (j, (known, &lit)) in plan.mimo.iter().zip(&plan.schedule).enumerate() {
        let tx = lit.index();
        counts[tx] += 1;
        for (k, hk) in h.iter_mut().enumerate() {
            let t = known[tx][k];
            if t.norm_sqr() < 1e-20 {
                return Err(Error::EstimationSingular { subcarrier: k });
            }
            for rx in Pol::BOTH {
                hk[rx.index()][tx] += ts.pol(rx).get(k, j) / t;
            }
        }
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::EstimationSingular { subcarrier: 0 });
    }
    let mut condition = Vec::with_capacity(n);
    for (k, hk) in h.iter_mut().enumerate() {
        for row in hk.iter_mut() {
            for (tx, v) in row.iter_mut().enumerate() {
                *v /= counts[tx] as f64;
            }
        }
        if pseudo_inverse(hk).is_none() {
            return Err(Error::EstimationSingular { subcarrier: k });
        }
        condition.push(condition_number(hk));
    }
    Ok(ChannelEstimate {
        h_matrix: h,
        condition,
        cfo_hat: 0.0,
        phase_track: Vec::new(),
        cycle_slips: Vec::new(),
    })
}

/// Applies the per-subcarrier zero-forcing inverse of the estimate.
pub fn equalize(grid: &DualPolGrid, est: &ChannelEstimate) -> Result<DualPolGrid> {
    let n = grid.rows();
    if est.h_matrix.len() != n {
        return Err(Error::Framing(format!(
            "estimate covers {} subcarriers, grid has {}",
            est.h_matrix.len(),
            n
        )));
    }
    let filters = est
        .h_matrix
        .iter()
        .enumerate()
        .map(|(k, h)| pseudo_inverse(h).ok_or(Error::Equalization { subcarrier: k }))
        .collect::<Result<Vec<_>>>()?;
    let mut out = grid.clone();
    for c in 0..grid.cols() {
        let xs = grid.x_pol.column(c);
        let ys = grid.y_pol.column(c);
        let (ox, oy) = {
            let DualPolGrid { x_pol, y_pol } = &mut out;
            (x_pol.column_mut(c), y_pol.column_mut(c))
        };
        for k in 0..n {
            let w = &filters[k];
            ox[k] = w[0][0] * xs[k] + w[0][1] * ys[k];
            oy[k] = w[1][0] * xs[k] + w[1][1] * ys[k];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// phase recovery

/// Every superposition `sum_i sqrt(p_i) s_i` of QPSK symbols.
pub fn superposed_constellation(plan: &PowerPlan) -> Vec<Complex64> {
    let mut pts = vec![ZERO];
    for a in plan.amplitudes() {
        pts = pts
            .iter()
            .flat_map(|&p| {
                [[0, 0], [0, 1], [1, 0], [1, 1]]
                    .into_iter()
                    .map(move |b| p + map_qpsk(b).value() * a)
            })
            .collect();
    }
    pts
}

/// Per-rail levels of the superposed constellation, ascending. The
/// constellation is a product grid, so slicing each rail separately is
/// nearest-point detection.
fn rail_levels(plan: &PowerPlan) -> Vec<f64> {
    let mut levels: Vec<f64> = superposed_constellation(plan).iter().map(|z| z.re).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    levels
}

fn slice(x: f64, levels: &[f64]) -> f64 {
    match levels.partition_point(|&l| l < x) {
        0 => levels[0],
        i if i == levels.len() => levels[i - 1],
        i => {
            if x - levels[i - 1] < levels[i] - x {
                levels[i - 1]
            } else {
                levels[i]
            }
        }
    }
}

fn nearest(z: Complex64, levels: &[f64]) -> Complex64 {
    Complex64::new(slice(z.re, levels), slice(z.im, levels))
}

/// Decision-directed common phase error removal.
///
/// `grid` is the equalized payload in the symbol domain (after despreading
/// when spreading is on; a common rotation commutes with the despread DFT).
/// Each symbol starts from a fourth-power estimate unwrapped toward the
/// previous symbol's phase (zero before the first, the phase reference of
/// the training symbols). It is then de-rotated, sliced against the
/// composite constellation, and corrected by `arg(sum z conj(d))` pooled over
/// both polarizations until the decisions stop changing.
pub fn recover_phase(grid: &DualPolGrid, plan: &PowerPlan, est: &mut ChannelEstimate) -> Result<DualPolGrid> {
    let levels = rail_levels(plan);
    let mut out = grid.clone();
    let mut track = Vec::with_capacity(grid.cols());
    let mut slips = Vec::new();
    let mut phi = 0.0f64;
    for c in 0..grid.cols() {
        let prev = phi;
        let cols = [grid.x_pol.column(c), grid.y_pol.column(c)];
        // fourth-power seed: E[z^4] of any QPSK superposition is real and
        // negative; the pi/2 ambiguity resolves toward the previous symbol
        let m4: Complex64 = cols.iter().flat_map(|c| c.iter()).map(|z| z.powi(4)).sum();
        if m4 != ZERO {
            let blind = (-m4).arg() / 4.0;
            phi = blind + ((prev - blind) / FRAC_PI_2).round() * FRAC_PI_2;
        }
        // re-slice with the refined phase until the decisions settle
        for _ in 0..MAX_PHASE_PASSES {
            let rot = Complex64::from_polar(1.0, -phi);
            let mut acc = ZERO;
            for col in cols {
                for &z in col {
                    let zr = z * rot;
                    acc += zr * nearest(zr, &levels).conj();
                }
            }
            if acc == ZERO {
                break;
            }
            phi += acc.arg();
            if acc.arg().abs() < 1e-12 {
                break;
            }
        }
        if (phi - prev).abs() > FRAC_PI_2 {
            slips.push(c);
        }
        let rot = Complex64::from_polar(1.0, -phi);
        for p in Pol::BOTH {
            out.pol_mut(p).column_mut(c).iter_mut().for_each(|z| *z *= rot);
        }
        track.push(phi);
    }
    est.phase_track = track;
    est.cycle_slips = slips;
    Ok(out)
}

// ---------------------------------------------------------------------------
// full receiver

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RxConfig {
    /// FFT windows open this many samples early, inside the cyclic prefix.
    pub timing_backoff: usize,
    pub refine_cfo: bool,
}

impl Default for RxConfig {
    fn default() -> Self {
        RxConfig {
            timing_backoff: 32,
            refine_cfo: true,
        }
    }
}

/// Everything the receiver produces for one frame.
#[derive(Debug, Clone)]
pub struct RxOutput {
    pub offset: usize,
    pub estimate: ChannelEstimate,
    /// Payload after equalization, before despreading.
    pub equalized: DualPolGrid,
    /// Payload after despreading and phase recovery: `sum sqrt(p_i) X_i + noise`.
    pub composite: DualPolGrid,
}

/// Synchronizes, estimates, equalizes and phase-recovers one frame.
pub fn receive(
    dp: &DualPolStream,
    training: &TrainingPlan,
    plan: &PowerPlan,
    modem: &OfdmModem,
    rx: &RxConfig,
) -> Result<RxOutput> {
    let cfg = &training.cfg;
    let offset = sync_timing(dp, training).map_err(|e| e.at("sync"))?;
    let coarse = estimate_cfo(dp, training, offset).map_err(|e| e.at("cfo"))?;
    let cfo = if rx.refine_cfo {
        refine_cfo(dp, cfg, offset, coarse)
    } else {
        coarse
    };
    let corrected = compensate_cfo(dp, cfo);
    let backoff = rx.timing_backoff.min(cfg.cp_len);
    let frame = extract_frame(&corrected, cfg, offset, backoff).map_err(|e| e.at("framing"))?;
    let grid = DualPolGrid::new(
        modem.demodulate(&frame.x_pol, Pol::X)?,
        modem.demodulate(&frame.y_pol, Pol::Y)?,
    )
    .map_err(|e| e.at("demodulate"))?;

    let mut estimate =
        estimate_channel(&grid.slice_cols(1, cfg.n_ts), training).map_err(|e| e.at("channel estimation"))?;
    estimate.cfo_hat = cfo;
    let equalized = equalize(&grid.slice_cols(cfg.n_ts, cfg.n_frame), &estimate).map_err(|e| e.at("equalize"))?;
    let despread = if cfg.dft_spread {
        DualPolGrid::new(modem.despread(&equalized.x_pol)?, modem.despread(&equalized.y_pol)?)?
    } else {
        equalized.clone()
    };
    let composite = recover_phase(&despread, plan, &mut estimate).map_err(|e| e.at("phase recovery"))?;
    Ok(RxOutput {
        offset,
        estimate,
        equalized,
        composite,
    })
}
