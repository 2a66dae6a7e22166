//! DFT-spread OFDM modulation and demodulation.
//!
//! Both transforms are unitary (`1/sqrt(N)` each way). Data subcarriers sit
//! symmetrically around DC: rows `0..n_data/2` map to bins `-n_data/2..=-1`
//! and the remaining rows to bins `1..`, with DC unused.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rx::TrainingPlan;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfdmConfig {
    pub n_fft: usize,
    pub n_data: usize,
    pub cp_len: usize,
    /// Symbols per frame, training included.
    pub n_frame: usize,
    /// Training symbols at the head of each frame.
    pub n_ts: usize,
    pub sample_rate: f64,
    pub dft_spread: bool,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        OfdmConfig {
            n_fft: 512,
            n_data: 232,
            cp_len: 64,
            n_frame: 140,
            n_ts: 15,
            sample_rate: 12e9,
            dft_spread: true,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_fft < 4 || self.n_fft % 2 != 0 {
            return bad(format!("n_fft must be even and >= 4, got {}", self.n_fft));
        }
        if self.n_data == 0 || self.n_data > self.n_fft {
            return bad(format!("n_data {} outside 1..={}", self.n_data, self.n_fft));
        }
        if self.n_data - self.n_data / 2 > self.n_fft / 2 - 1 {
            return bad(format!(
                "{} data subcarriers do not fit around DC in a {}-point FFT",
                self.n_data, self.n_fft
            ));
        }
        if self.cp_len >= self.n_fft {
            return bad(format!("cp_len {} must be below n_fft {}", self.cp_len, self.n_fft));
        }
        if self.n_ts >= self.n_frame {
            return bad(format!("n_ts {} must be below n_frame {}", self.n_ts, self.n_frame));
        }
        if self.n_ts < 3 || (self.n_ts - 1) % 2 != 0 {
            return bad(format!(
                "n_ts {} must be one timing symbol plus an even number of MIMO symbols",
                self.n_ts
            ));
        }
        if !(self.sample_rate > 0.0) {
            return bad(format!("sample_rate must be positive, got {}", self.sample_rate));
        }
        Ok(())
    }

    /// Samples per OFDM symbol, cyclic prefix included.
    pub fn symbol_len(&self) -> usize {
        self.n_fft + self.cp_len
    }

    pub fn frame_len(&self) -> usize {
        self.n_frame * self.symbol_len()
    }

    pub fn payload_symbols(&self) -> usize {
        self.n_frame - self.n_ts
    }

    /// FFT bin of each data row, in row order.
    pub fn data_bins(&self) -> Vec<usize> {
        let neg = self.n_data / 2;
        let pos = self.n_data - neg;
        (0..neg)
            .map(|r| self.n_fft - neg + r)
            .chain(1..=pos)
            .collect()
    }

    /// Signed frequency index (in subcarriers) of each data row.
    pub fn data_freq_index(&self) -> Vec<i64> {
        let n = self.n_fft as i64;
        self.data_bins()
            .into_iter()
            .map(|b| {
                let b = b as i64;
                if b >= n / 2 {
                    b - n
                } else {
                    b
                }
            })
            .collect()
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.sample_rate / self.n_fft as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pol {
    X,
    Y,
}

impl Pol {
    pub const BOTH: [Pol; 2] = [Pol::X, Pol::Y];

    pub fn index(self) -> usize {
        match self {
            Pol::X => 0,
            Pol::Y => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pol::X => "x",
            Pol::Y => "y",
        }
    }
}

/// Complex matrix of `rows` subcarriers by `cols` OFDM symbols, stored
/// column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    rows: usize,
    cols: usize,
    entries: Vec<Complex64>,
    pub pol: Pol,
}

impl SymbolGrid {
    pub fn zeros(rows: usize, cols: usize, pol: Pol) -> Self {
        SymbolGrid {
            rows,
            cols,
            entries: vec![ZERO; rows * cols],
            pol,
        }
    }

    /// Builds a grid from column-major entries.
    pub fn from_columns(rows: usize, entries: Vec<Complex64>, pol: Pol) -> Result<Self> {
        if rows == 0 || entries.len() % rows != 0 {
            return Err(Error::Framing(format!(
                "{} entries do not fill columns of {} rows",
                entries.len(),
                rows
            )));
        }
        Ok(SymbolGrid {
            rows,
            cols: entries.len() / rows,
            entries,
            pol,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.entries
    }

    pub fn into_entries(self) -> Vec<Complex64> {
        self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[Complex64] {
        &self.entries[col * self.rows..(col + 1) * self.rows]
    }

    pub fn column_mut(&mut self, col: usize) -> &mut [Complex64] {
        &mut self.entries[col * self.rows..(col + 1) * self.rows]
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'_, Complex64> {
        self.entries.chunks_exact(self.rows)
    }

    /// Copy of columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> SymbolGrid {
        SymbolGrid {
            rows: self.rows,
            cols: end - start,
            entries: self.entries[start * self.rows..end * self.rows].to_vec(),
            pol: self.pol,
        }
    }

    pub fn energy(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// One grid per polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolGrid {
    pub x_pol: SymbolGrid,
    pub y_pol: SymbolGrid,
}

impl DualPolGrid {
    pub fn new(x_pol: SymbolGrid, y_pol: SymbolGrid) -> Result<Self> {
        if x_pol.rows != y_pol.rows || x_pol.cols != y_pol.cols {
            return Err(Error::Framing("polarization grids differ in shape".into()));
        }
        Ok(DualPolGrid { x_pol, y_pol })
    }

    pub fn pol(&self, p: Pol) -> &SymbolGrid {
        match p {
            Pol::X => &self.x_pol,
            Pol::Y => &self.y_pol,
        }
    }

    pub fn pol_mut(&mut self, p: Pol) -> &mut SymbolGrid {
        match p {
            Pol::X => &mut self.x_pol,
            Pol::Y => &mut self.y_pol,
        }
    }

    pub fn rows(&self) -> usize {
        self.x_pol.rows
    }

    pub fn cols(&self) -> usize {
        self.x_pol.cols
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> DualPolGrid {
        DualPolGrid {
            x_pol: self.x_pol.slice_cols(start, end),
            y_pol: self.y_pol.slice_cols(start, end),
        }
    }
}

/// Complex baseband samples at `sample_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl SampleStream {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        SampleStream {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        SampleStream::new(vec![ZERO; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn scaled(&self, c: Complex64) -> SampleStream {
        SampleStream::new(self.samples.iter().map(|z| z * c).collect(), self.sample_rate)
    }

    pub fn extend(&mut self, other: &SampleStream) {
        self.samples.extend_from_slice(&other.samples);
    }
}

/// Cached transforms for one [`OfdmConfig`].
#[derive(Clone)]
pub struct OfdmModem {
    cfg: OfdmConfig,
    bins: Vec<usize>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    spread_fwd: Arc<dyn Fft<f64>>,
    spread_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for OfdmModem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OfdmModem").field("cfg", &self.cfg).finish()
    }
}

impl OfdmModem {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(OfdmModem {
            cfg: cfg.clone(),
            bins: cfg.data_bins(),
            fft: planner.plan_fft_forward(cfg.n_fft),
            ifft: planner.plan_fft_inverse(cfg.n_fft),
            spread_fwd: planner.plan_fft_forward(cfg.n_data),
            spread_inv: planner.plan_fft_inverse(cfg.n_data),
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    fn unitary(plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
        plan.process(buf);
        let s = 1.0 / (buf.len() as f64).sqrt();
        buf.iter_mut().for_each(|z| *z *= s);
    }

    fn check_rows(&self, grid: &SymbolGrid) -> Result<()> {
        if grid.rows != self.cfg.n_data {
            return Err(Error::Framing(format!(
                "grid has {} rows, expected {} data subcarriers",
                grid.rows, self.cfg.n_data
            )));
        }
        Ok(())
    }

    /// Unitary size-`n_data` DFT of every column.
    pub fn spread(&self, grid: &SymbolGrid) -> Result<SymbolGrid> {
        self.check_rows(grid)?;
        let mut out = grid.clone();
        for col in out.entries.chunks_exact_mut(grid.rows) {
            Self::unitary(&self.spread_fwd, col);
        }
        Ok(out)
    }

    /// Inverse of [`OfdmModem::spread`].
    pub fn despread(&self, grid: &SymbolGrid) -> Result<SymbolGrid> {
        self.check_rows(grid)?;
        let mut out = grid.clone();
        for col in out.entries.chunks_exact_mut(grid.rows) {
            Self::unitary(&self.spread_inv, col);
        }
        Ok(out)
    }

    /// Subcarrier mapping, IFFT and cyclic prefix for every column, with no
    /// spreading.
    pub fn modulate_spectrum(&self, grid: &SymbolGrid) -> Result<SampleStream> {
        self.check_rows(grid)?;
        let (n, cp) = (self.cfg.n_fft, self.cfg.cp_len);
        let mut out = Vec::with_capacity(grid.cols * (n + cp));
        let mut buf = vec![ZERO; n];
        for col in grid.columns() {
            buf.iter_mut().for_each(|z| *z = ZERO);
            for (&bin, &v) in self.bins.iter().zip(col) {
                buf[bin] = v;
            }
            Self::unitary(&self.ifft, &mut buf);
            out.extend_from_slice(&buf[n - cp..]);
            out.extend_from_slice(&buf);
        }
        Ok(SampleStream::new(out, self.cfg.sample_rate))
    }

    /// Spreads (when enabled) and modulates every column.
    pub fn modulate(&self, grid: &SymbolGrid) -> Result<SampleStream> {
        if self.cfg.dft_spread {
            self.modulate_spectrum(&self.spread(grid)?)
        } else {
            self.modulate_spectrum(grid)
        }
    }

    /// Modulates a framed grid: training columns go out as-is, payload
    /// columns are spread when enabled.
    pub fn modulate_frame(&self, frame: &SymbolGrid) -> Result<SampleStream> {
        if frame.cols != self.cfg.n_frame {
            return Err(Error::Framing(format!(
                "frame has {} symbols, expected {}",
                frame.cols, self.cfg.n_frame
            )));
        }
        let n_ts = self.cfg.n_ts;
        let mut out = self.modulate_spectrum(&frame.slice_cols(0, n_ts))?;
        out.extend(&self.modulate(&frame.slice_cols(n_ts, frame.cols))?);
        Ok(out)
    }

    /// Strips cyclic prefixes, FFTs and keeps the data subcarriers.
    pub fn demodulate(&self, stream: &SampleStream, pol: Pol) -> Result<SymbolGrid> {
        let (n, cp) = (self.cfg.n_fft, self.cfg.cp_len);
        let sym = n + cp;
        if stream.is_empty() || stream.len() % sym != 0 {
            return Err(Error::Framing(format!(
                "stream of {} samples is not a whole number of {}-sample symbols",
                stream.len(),
                sym
            )));
        }
        let cols = stream.len() / sym;
        let mut out = SymbolGrid::zeros(self.cfg.n_data, cols, pol);
        let mut buf = vec![ZERO; n];
        for (c, chunk) in stream.samples.chunks_exact(sym).enumerate() {
            buf.copy_from_slice(&chunk[cp..]);
            Self::unitary(&self.fft, &mut buf);
            for (dst, &bin) in out.column_mut(c).iter_mut().zip(&self.bins) {
                *dst = buf[bin];
            }
        }
        Ok(out)
    }
}

/// Unitary DFT spreading of each column (size = column length).
pub fn dft_spread(grid: &SymbolGrid) -> SymbolGrid {
    spread_with(grid, true)
}

/// Inverse of [`dft_spread`].
pub fn despread(grid: &SymbolGrid) -> SymbolGrid {
    spread_with(grid, false)
}

fn spread_with(grid: &SymbolGrid, forward: bool) -> SymbolGrid {
    let mut planner = FftPlanner::new();
    let plan = if forward {
        planner.plan_fft_forward(grid.rows)
    } else {
        planner.plan_fft_inverse(grid.rows)
    };
    let mut out = grid.clone();
    for col in out.entries.chunks_exact_mut(grid.rows) {
        OfdmModem::unitary(&plan, col);
    }
    out
}

pub fn modulate(grid: &SymbolGrid, cfg: &OfdmConfig) -> Result<SampleStream> {
    OfdmModem::new(cfg)?.modulate(grid)
}

pub fn demodulate(stream: &SampleStream, cfg: &OfdmConfig, pol: Pol) -> Result<SymbolGrid> {
    OfdmModem::new(cfg)?.demodulate(stream, pol)
}

/// Prepends the training symbols to a payload of `n_frame - n_ts` columns.
///
/// Column 0 is the timing symbol, columns `1..n_ts` the polarization
/// alternating MIMO symbols. Payload columns are left unspread; use
/// [`OfdmModem::modulate_frame`] to transmit the result.
pub fn build_frame(payload: &DualPolGrid, cfg: &OfdmConfig, seed: u64) -> Result<(DualPolGrid, TrainingPlan)> {
    cfg.validate()?;
    if payload.cols() != cfg.payload_symbols() {
        return Err(Error::Framing(format!(
            "payload has {} symbols, frame expects {}",
            payload.cols(),
            cfg.payload_symbols()
        )));
    }
    if payload.rows() != cfg.n_data {
        return Err(Error::Framing(format!(
            "payload has {} rows, expected {}",
            payload.rows(),
            cfg.n_data
        )));
    }
    let plan = TrainingPlan::generate(cfg, seed)?;
    let mut frame = Vec::with_capacity(2);
    for p in Pol::BOTH {
        let mut entries = Vec::with_capacity(cfg.n_data * cfg.n_frame);
        entries.extend_from_slice(&plan.timing_freq[p.index()]);
        for ts in &plan.mimo {
            entries.extend_from_slice(&ts[p.index()]);
        }
        entries.extend_from_slice(payload.pol(p).entries());
        frame.push(SymbolGrid::from_columns(cfg.n_data, entries, p)?);
    }
    let y = frame.pop().unwrap();
    let x = frame.pop().unwrap();
    Ok((DualPolGrid::new(x, y)?, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::map_qpsk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_qpsk_grid(rows: usize, cols: usize, seed: u64) -> SymbolGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..rows * cols)
            .map(|_| map_qpsk([rng.random_range(0..2), rng.random_range(0..2)]).value())
            .collect();
        SymbolGrid::from_columns(rows, entries, Pol::X).unwrap()
    }

    fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    // direct O(n^2) unitary DFT, independent of rustfft
    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(m, v)| {
                        v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * m) as f64 / n as f64)
                    })
                    .sum::<Complex64>()
                    / (n as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn default_config_matches_frame_layout() {
        let cfg = OfdmConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.symbol_len(), 576);
        assert_eq!(cfg.payload_symbols(), 125);
        let idx = cfg.data_freq_index();
        assert_eq!(idx.len(), 232);
        assert_eq!(idx[0], -116);
        assert_eq!(idx[115], -1);
        assert_eq!(idx[116], 1);
        assert_eq!(idx[231], 116);
        assert!(!idx.contains(&0));
    }

    #[test]
    fn spread_constant_column_is_impulse() {
        let v = map_qpsk([0, 0]).value();
        let grid = SymbolGrid::from_columns(232, vec![v; 232], Pol::X).unwrap();
        let s = dft_spread(&grid);
        assert!((s.get(0, 0) - v * 232f64.sqrt()).norm() < 1e-12);
        assert!(s.column(0)[1..].iter().all(|z| z.norm() < 1e-12));
        let back = despread(&s);
        assert!(max_err(back.entries(), grid.entries()) < 1e-12);
    }

    #[test]
    fn spread_matches_naive_dft_and_preserves_energy() {
        let g = random_qpsk_grid(232, 3, 5);
        let s = dft_spread(&g);
        for c in 0..3 {
            assert!(max_err(s.column(c), &naive_dft(g.column(c))) < 1e-12);
            let e0: f64 = g.column(c).iter().map(|z| z.norm_sqr()).sum();
            let e1: f64 = s.column(c).iter().map(|z| z.norm_sqr()).sum();
            assert!((e0 - e1).abs() / e0 < 1e-12);
        }
        assert!(max_err(despread(&s).entries(), g.entries()) < 1e-12);
    }

    #[test]
    fn zero_grid_gives_zero_stream() {
        let cfg = OfdmConfig::default();
        let g = SymbolGrid::zeros(232, 3, Pol::X);
        let s = modulate(&g, &cfg).unwrap();
        assert_eq!(s.len(), 3 * 576);
        assert!(s.samples.iter().all(|z| *z == ZERO));
        let d = demodulate(&s, &cfg, Pol::X).unwrap();
        assert!(d.entries().iter().all(|z| *z == ZERO));
    }

    #[test]
    fn one_symbol_is_576_samples() {
        let s = modulate(&random_qpsk_grid(232, 1, 1), &OfdmConfig::default()).unwrap();
        assert_eq!(s.len(), 576);
    }

    #[test]
    fn parseval_and_cyclic_prefix() {
        let cfg = OfdmConfig {
            dft_spread: false,
            ..OfdmConfig::default()
        };
        let g = random_qpsk_grid(232, 4, 2);
        let s = modulate(&g, &cfg).unwrap();
        for (c, sym) in s.samples.chunks_exact(576).enumerate() {
            let body: f64 = sym[64..].iter().map(|z| z.norm_sqr()).sum();
            let freq: f64 = g.column(c).iter().map(|z| z.norm_sqr()).sum();
            assert!((body - freq).abs() / freq < 1e-12);
            assert_eq!(&sym[..64], &sym[512..]);
        }
    }

    #[test]
    fn loopback_identity() {
        for spread in [false, true] {
            let cfg = OfdmConfig {
                dft_spread: spread,
                ..OfdmConfig::default()
            };
            let m = OfdmModem::new(&cfg).unwrap();
            let g = random_qpsk_grid(232, 6, 3);
            let rx = m.demodulate(&m.modulate(&g).unwrap(), Pol::X).unwrap();
            let rx = if spread { m.despread(&rx).unwrap() } else { rx };
            assert!(max_err(rx.entries(), g.entries()) < 1e-10);
        }
    }

    #[test]
    fn short_stream_is_framing_error() {
        let s = SampleStream::zeros(100, 12e9);
        assert!(matches!(
            demodulate(&s, &OfdmConfig::default(), Pol::X),
            Err(Error::Framing(_))
        ));
    }

    #[test]
    fn modulation_is_linear() {
        let cfg = OfdmConfig::default();
        let m = OfdmModem::new(&cfg).unwrap();
        let g1 = random_qpsk_grid(232, 2, 7);
        let g2 = random_qpsk_grid(232, 2, 8);
        let (a, b) = (Complex64::new(0.3, -1.1), Complex64::new(2.0, 0.4));
        let combo: Vec<Complex64> = g1.entries().iter().zip(g2.entries()).map(|(x, y)| a * x + b * y).collect();
        let lhs = m.modulate(&SymbolGrid::from_columns(232, combo, Pol::X).unwrap()).unwrap();
        let s1 = m.modulate(&g1).unwrap();
        let s2 = m.modulate(&g2).unwrap();
        let rhs: Vec<Complex64> = s1.samples.iter().zip(&s2.samples).map(|(x, y)| a * x + b * y).collect();
        assert!(max_err(&lhs.samples, &rhs) < 1e-12);
    }

    #[test]
    fn frame_layout() {
        let cfg = OfdmConfig::default();
        let payload = DualPolGrid::new(
            random_qpsk_grid(232, 125, 1),
            SymbolGrid { pol: Pol::Y, ..random_qpsk_grid(232, 125, 2) },
        )
        .unwrap();
        let (frame, plan) = build_frame(&payload, &cfg, 9).unwrap();
        assert_eq!(frame.cols(), 140);
        assert_eq!(plan.mimo.len(), 14);
        assert_eq!(frame.slice_cols(15, 140), payload);
        let (frame2, _) = build_frame(&payload, &cfg, 9).unwrap();
        assert_eq!(frame, frame2);

        let short = payload.slice_cols(0, 124);
        assert!(matches!(build_frame(&short, &cfg, 9), Err(Error::Framing(_))));
    }
}
