//! Monte-Carlo runs, sweeps, constellation dumps and output files.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitsource::{prbs_next, split_branches, BitBlock, PrbsState};
use crate::channel::{run_channel, DualPolStream};
use crate::config::{Axis, RunConfig};
use crate::constellation::map_bits;
use crate::error::{Error, Result};
use crate::ofdm::{DualPolGrid, OfdmModem, Pol, SampleStream, SymbolGrid};
use crate::pdm::{superpose, PowerPlan};
use crate::rx::{receive, ChannelEstimate, RxOutput, TrainingPlan};
use crate::seed::derive_seed;
use crate::sic::{count_errors, detect, DetectionReport, ErrorCounts};
use crate::stats::{crossing, evm, wilson_interval, Z95};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Zero samples ahead of each frame.
pub const LEAD_IN: usize = 256;
const STREAM_QUANTUM: usize = 1024;

const TRAINING_TAG: u64 = 0x5453;
const FRAME_TAG: u64 = 0x4652_0000;
const CHANNEL_TAG: u64 = 1;
const PRBS_TAG: u64 = 2;

/// One frame ready for the channel, plus what the receiver should recover.
#[derive(Debug, Clone)]
pub struct TxFrame {
    pub stream: DualPolStream,
    /// Payload bits, one block per (branch, pol).
    pub blocks: Vec<BitBlock>,
    /// Noiseless `sum sqrt(p_i) X_i` in the symbol domain.
    pub composite: DualPolGrid,
    /// Mean power per polarization over the frame's samples.
    pub signal_power: f64,
}

/// Everything fixed for the duration of a run.
pub struct Link {
    pub cfg: RunConfig,
    pub plan: PowerPlan,
    pub modem: OfdmModem,
    pub training: TrainingPlan,
}

impl Link {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let ofdm = cfg.ofdm();
        Ok(Link {
            cfg: cfg.clone(),
            plan: cfg.power_plan()?,
            modem: OfdmModem::new(&ofdm)?,
            training: TrainingPlan::generate(&ofdm, derive_seed(cfg.seed, TRAINING_TAG))?,
        })
    }

    pub fn frame_seed(&self, frame: usize) -> u64 {
        derive_seed(self.cfg.seed, FRAME_TAG + frame as u64)
    }

    /// Builds frame `frame`: PRBS bits split round-robin over
    /// (branch, pol), QPSK, per-branch modulation, superposition, training.
    pub fn transmit(&self, frame: usize) -> Result<TxFrame> {
        let ofdm = self.modem.config();
        let n_branches = self.plan.n_branches();
        let per_block = self.cfg.bits_per_block();
        let seed = (derive_seed(self.frame_seed(frame), PRBS_TAG) & 0x7fff) as u16;
        let mut prbs = PrbsState::with_seed(seed.max(1)).map_err(|e| e.at("bitsource"))?;
        let bits = prbs_next(&mut prbs, per_block * n_branches * 2).map_err(|e| e.at("bitsource"))?;
        let blocks = split_branches(&bits, n_branches, 2).map_err(|e| e.at("bitsource"))?;

        let amps = self.plan.amplitudes();
        let mut pol_streams = Vec::with_capacity(2);
        let mut composite = Vec::with_capacity(2);
        let ts = self.training.to_stream(&self.modem).map_err(|e| e.at("ofdm_modem"))?;
        for p in Pol::BOTH {
            let mut branch_streams = Vec::with_capacity(n_branches);
            let mut sum = vec![Complex64::new(0.0, 0.0); per_block / 2];
            for (b, a) in amps.iter().enumerate() {
                let block = blocks
                    .iter()
                    .find(|k| k.branch_id == b && k.pol_id == p.index())
                    .expect("split covers every branch and pol");
                let symbols = map_bits(&block.bits).map_err(|e| e.at("constellation"))?;
                for (s, x) in sum.iter_mut().zip(&symbols) {
                    *s += x * a;
                }
                let grid = SymbolGrid::from_columns(ofdm.n_data, symbols, p)?;
                branch_streams.push(self.modem.modulate(&grid).map_err(|e| e.at("ofdm_modem"))?);
            }
            let payload = superpose(&branch_streams, &self.plan).map_err(|e| e.at("pdm"))?;
            let mut s = SampleStream::zeros(LEAD_IN, ofdm.sample_rate);
            s.extend(ts.pol(p));
            s.extend(&payload);
            let total = s.len().div_ceil(STREAM_QUANTUM) * STREAM_QUANTUM;
            s.extend(&SampleStream::zeros(total - s.len(), ofdm.sample_rate));
            pol_streams.push(s);
            composite.push(SymbolGrid::from_columns(ofdm.n_data, sum, p)?);
        }
        let y = pol_streams.pop().unwrap();
        let x = pol_streams.pop().unwrap();
        let stream = DualPolStream::new(x, y)?;
        let active = ofdm.frame_len();
        let signal_power = stream.energy() / (2 * active) as f64;
        let yc = composite.pop().unwrap();
        let xc = composite.pop().unwrap();
        Ok(TxFrame {
            stream,
            blocks,
            composite: DualPolGrid::new(xc, yc)?,
            signal_power,
        })
    }

    pub fn propagate(&self, tx: &TxFrame, frame: usize) -> Result<DualPolStream> {
        let mut ch = self.cfg.channel(derive_seed(self.frame_seed(frame), CHANNEL_TAG));
        ch.signal_power = Some(tx.signal_power);
        run_channel(&tx.stream, &ch).map_err(|e| e.at("channel"))
    }

    pub fn receive(&self, rx: &DualPolStream) -> Result<RxOutput> {
        receive(rx, &self.training, &self.plan, &self.modem, &self.cfg.rx()).map_err(|e| e.at("rx_dsp"))
    }

    pub fn detect(&self, out: &RxOutput) -> Result<Vec<DetectionReport>> {
        Pol::BOTH
            .iter()
            .map(|&p| detect(self.cfg.method, out.composite.pol(p), &self.plan).map_err(|e| e.at("sic")))
            .collect()
    }

    /// Full chain for one frame.
    pub fn run_frame(&self, frame: usize) -> Result<FrameOutcome> {
        let tx = self.transmit(frame)?;
        let rx = self.propagate(&tx, frame)?;
        let out = self.receive(&rx)?;
        let reports = self.detect(&out)?;
        let mut counts = ErrorCounts::default();
        for r in &reports {
            counts.merge(&count_errors(r, &tx.blocks).map_err(|e| e.at("metrics"))?);
        }
        let (mut err, mut reference) = (0.0, 0.0);
        for p in Pol::BOTH {
            for (y, x) in out.composite.pol(p).entries().iter().zip(tx.composite.pol(p).entries()) {
                err += (y - x).norm_sqr();
                reference += x.norm_sqr();
            }
        }
        Ok(FrameOutcome {
            counts,
            err_energy: err,
            ref_energy: reference,
            reports,
            rx: out,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub counts: ErrorCounts,
    pub err_energy: f64,
    pub ref_energy: f64,
    pub reports: Vec<DetectionReport>,
    pub rx: RxOutput,
}

/// BER of one branch on one polarization (`pol` is `x`, `y` or `both`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    /// 1-based, strongest first.
    pub branch: usize,
    pub pol: String,
    pub ber: f64,
    pub errors: u64,
    pub bits: u64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl BerRow {
    fn new(branch: usize, pol: &str, errors: u64, bits: u64) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(errors, bits, Z95);
        BerRow {
            branch,
            pol: pol.to_string(),
            ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
            errors,
            bits,
            ci_lo,
            ci_hi,
        }
    }
}

/// Result at one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub rows: Vec<BerRow>,
    pub evm: f64,
    pub frames: usize,
}

impl PointResult {
    /// Aggregate row of a 1-based branch across polarizations.
    pub fn branch(&self, branch: usize) -> Option<&BerRow> {
        self.rows.iter().find(|r| r.branch == branch && r.pol == "both")
    }
}

/// Output of [`run_once`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub point: PointResult,
    pub counts: ErrorCounts,
    /// Reports of the last frame, one per polarization.
    pub reports: Vec<DetectionReport>,
    pub estimate: ChannelEstimate,
    pub warnings: Vec<String>,
}

fn rows_from_counts(counts: &ErrorCounts, n_branches: usize) -> Vec<BerRow> {
    let mut rows = Vec::new();
    for b in 0..n_branches {
        for p in Pol::BOTH {
            let (e, n) = counts
                .blocks
                .iter()
                .filter(|k| k.branch_id == b && k.pol_id == p.index())
                .fold((0, 0), |acc, k| (acc.0 + k.errors, acc.1 + k.bits));
            rows.push(BerRow::new(b + 1, p.name(), e, n));
        }
        let t = counts.branch(b);
        rows.push(BerRow::new(b + 1, "both", t.errors, t.bits));
    }
    rows
}

/// Runs enough frames for the bit budget. Frames run in parallel and are
/// reduced in frame order.
pub fn run_once(cfg: &RunConfig) -> Result<RunOutcome> {
    let link = Link::new(cfg)?;
    let frames = cfg.frames();
    let outcomes: Vec<FrameOutcome> = (0..frames)
        .into_par_iter()
        .map(|f| link.run_frame(f))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let budget = frames as u64 * 2 * cfg.bits_per_block() as u64;
    if (budget as f64) < 100.0 / cfg.target_ber {
        warnings.push(format!(
            "{budget} bits per branch cannot resolve BER {:e} with 100 errors",
            cfg.target_ber
        ));
    }
    let mut counts = ErrorCounts::default();
    let (mut err, mut reference) = (0.0, 0.0);
    for (f, o) in outcomes.iter().enumerate() {
        counts.merge(&o.counts);
        err += o.err_energy;
        reference += o.ref_energy;
        for s in &o.rx.estimate.cycle_slips {
            warnings.push(format!("frame {f}: phase jump above pi/2 at payload symbol {s}"));
        }
    }
    let last = outcomes.into_iter().last().expect("at least one frame");
    Ok(RunOutcome {
        point: PointResult {
            rows: rows_from_counts(&counts, link.plan.n_branches()),
            evm: evm(err, reference),
            frames,
        },
        counts,
        reports: last.reports,
        estimate: last.rx.estimate,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// `None` when the point failed; the reason is in `failure`.
    pub result: Option<PointResult>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Estimate,
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub points: Vec<SweepPoint>,
    pub meta: Metadata,
}

impl SweepResult {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Rows of a 1-based branch across polarizations, skipping failed points.
    pub fn curve(&self, branch: usize) -> Vec<(f64, BerRow)> {
        self.points
            .iter()
            .filter_map(|p| Some((p.value, p.result.as_ref()?.branch(branch)?.clone())))
            .collect()
    }

    /// Axis value where a branch reaches `target`. `bound` picks the point
    /// estimate or an edge of the 95% interval; zero-error points count as
    /// half an error.
    pub fn required(&self, branch: usize, target: f64, bound: Bound) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .curve(branch)
            .into_iter()
            .map(|(v, r)| {
                let floor = 0.5 / r.bits.max(1) as f64;
                let b = match bound {
                    Bound::Estimate => r.ber,
                    Bound::Lower => r.ci_lo,
                    Bound::Upper => r.ci_hi,
                };
                (v, b.max(floor))
            })
            .collect();
        crossing(&pts, target)
    }

    pub fn failures(&self) -> Vec<(f64, String)> {
        self.points
            .iter()
            .filter_map(|p| p.failure.clone().map(|f| (p.value, f)))
            .collect()
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.canonical_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn metadata(cfg: &RunConfig) -> Metadata {
    Metadata {
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        version: VERSION.to_string(),
    }
}

/// Runs every axis value with the same seed, so points differ only in the
/// swept parameter. A failing point is recorded and the sweep continues.
pub fn run_sweep(cfg: &RunConfig, axis: Axis, values: &[f64]) -> Result<SweepResult> {
    if values.len() < 2 {
        return Err(Error::Usage("a sweep needs at least two values".into()));
    }
    let rising = values.windows(2).all(|w| w[0] < w[1]);
    let falling = values.windows(2).all(|w| w[0] > w[1]);
    if !(rising || falling) {
        return Err(Error::Usage("sweep values must be strictly monotone".into()));
    }
    let points = values
        .iter()
        .map(|&v| {
            let point_cfg = axis.apply(cfg, v);
            match run_once(&point_cfg) {
                Ok(o) => SweepPoint {
                    value: v,
                    result: Some(o.point),
                    failure: None,
                },
                Err(e) => SweepPoint {
                    value: v,
                    result: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepResult {
        axis,
        points,
        meta: metadata(cfg),
    })
}

// ---------------------------------------------------------------------------
// constellation taps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tap {
    /// Equalized payload before despreading.
    PostEqualize,
    /// Despread and phase-recovered composite, the detector input.
    PostDespread,
    /// What each later branch is sliced on after cancellation.
    Residual,
}

impl Tap {
    pub fn name(self) -> &'static str {
        match self {
            Tap::PostEqualize => "post_equalize",
            Tap::PostDespread => "post_despread",
            Tap::Residual => "residual",
        }
    }
}

impl std::str::FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post_equalize" => Ok(Tap::PostEqualize),
            "post_despread" => Ok(Tap::PostDespread),
            "residual" => Ok(Tap::Residual),
            other => Err(Error::Usage(format!(
                "unknown tap '{other}' (expected post_equalize, post_despread or residual)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationPoint {
    pub i: f64,
    pub q: f64,
    /// `all` for composite taps, else the 1-based branch.
    pub branch: String,
    pub pol: String,
}

/// Samples of the first frame at a receiver tap.
pub fn dump_constellation(cfg: &RunConfig, tap: Tap) -> Result<Vec<ConstellationPoint>> {
    let link = Link::new(cfg)?;
    let outcome = link.run_frame(0)?;
    let mut out = Vec::new();
    let mut push = |grid: &SymbolGrid, branch: String| {
        out.extend(grid.entries().iter().map(|z| ConstellationPoint {
            i: z.re,
            q: z.im,
            branch: branch.clone(),
            pol: grid.pol.name().to_string(),
        }));
    };
    for (k, p) in Pol::BOTH.into_iter().enumerate() {
        match tap {
            Tap::PostEqualize => push(outcome.rx.equalized.pol(p), "all".into()),
            Tap::PostDespread => push(outcome.rx.composite.pol(p), "all".into()),
            Tap::Residual => {
                let r = &outcome.reports[k];
                for (i, grid) in r.residuals.iter().take(r.n_branches() - 1).enumerate() {
                    push(grid, (i + 2).to_string());
                }
            }
        }
    }
    Ok(out)
}

/// Net bit rate of the configured link.
pub fn compute_rate(cfg: &RunConfig) -> f64 {
    let pols = 2.0;
    let branches = 2.0;
    let bits_per_symbol = 2.0;
    let symbol_fraction = cfg.n_data as f64 / (cfg.n_fft + cfg.cp_len) as f64;
    let payload_fraction = (cfg.n_frame - cfg.n_ts) as f64 / cfg.n_frame as f64;
    cfg.bands as f64 * pols * branches * bits_per_symbol * cfg.sample_rate_hz * symbol_fraction * payload_fraction
}

// ---------------------------------------------------------------------------
// files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    value: f64,
    branch: Option<usize>,
    pol: String,
    ber: Option<f64>,
    errors: Option<u64>,
    bits: Option<u64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    evm: Option<f64>,
}

const FAILED: &str = "failed";

/// Writes the sweep as CSV. The first column is named after the axis. A
/// failed point is a single row with `pol = failed` and empty numbers.
pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        sweep.axis.column(),
        "branch",
        "pol",
        "ber",
        "errors",
        "bits",
        "ci_lo",
        "ci_hi",
        "evm",
    ])?;
    for p in &sweep.points {
        match &p.result {
            Some(r) => {
                for row in &r.rows {
                    w.serialize(CsvRow {
                        value: p.value,
                        branch: Some(row.branch),
                        pol: row.pol.clone(),
                        ber: Some(row.ber),
                        errors: Some(row.errors),
                        bits: Some(row.bits),
                        ci_lo: Some(row.ci_lo),
                        ci_hi: Some(row.ci_hi),
                        evm: Some(r.evm),
                    })?;
                }
            }
            None => w.serialize(CsvRow {
                value: p.value,
                branch: None,
                pol: FAILED.into(),
                ber: None,
                errors: None,
                bits: None,
                ci_lo: None,
                ci_hi: None,
                evm: None,
            })?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a sweep CSV back into an axis and its points. Frame counts and
/// failure messages are not in the CSV; they come back as 0 and `failed`.
pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<(Axis, Vec<SweepPoint>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Io("empty sweep CSV".into()))??;
    let axis = Axis::from_column(header.get(0).unwrap_or(""))?;
    let mut points: Vec<SweepPoint> = Vec::new();
    for rec in records {
        let row: CsvRow = rec?.deserialize(None)?;
        let same = points.last().is_some_and(|p| p.value.to_bits() == row.value.to_bits());
        if !same {
            points.push(SweepPoint {
                value: row.value,
                result: None,
                failure: None,
            });
        }
        let point = points.last_mut().unwrap();
        if row.pol == FAILED {
            point.failure = Some(FAILED.into());
            continue;
        }
        let missing = || Error::Io(format!("incomplete row at {} {}", row.value, row.pol));
        let ber_row = BerRow {
            branch: row.branch.ok_or_else(missing)?,
            pol: row.pol.clone(),
            ber: row.ber.ok_or_else(missing)?,
            errors: row.errors.ok_or_else(missing)?,
            bits: row.bits.ok_or_else(missing)?,
            ci_lo: row.ci_lo.ok_or_else(missing)?,
            ci_hi: row.ci_hi.ok_or_else(missing)?,
        };
        let evm = row.evm.ok_or_else(missing)?;
        point
            .result
            .get_or_insert_with(|| PointResult {
                rows: Vec::new(),
                evm,
                frames: 0,
            })
            .rows
            .push(ber_row);
    }
    Ok((axis, points))
}

pub fn write_constellation_csv<W: Write>(points: &[ConstellationPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord<'a> {
    pub version: &'a str,
    pub command: &'a str,
    pub config_hash: String,
    pub seed: u64,
    pub config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_bps: Option<f64>,
}

impl<'a> RunRecord<'a> {
    pub fn new(command: &'a str, cfg: &'a RunConfig) -> Self {
        RunRecord {
            version: VERSION,
            command,
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            config: cfg,
            axis: None,
            values: None,
            failures: Vec::new(),
            warnings: Vec::new(),
            rate_bps: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("run.json"), text)?;
        Ok(())
    }
}

/// Writes `sweep.csv` and `run.json` into `dir`.
pub fn write_sweep_outputs(dir: &Path, cfg: &RunConfig, sweep: &SweepResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_sweep_csv(sweep, std::fs::File::create(dir.join("sweep.csv"))?)?;
    let mut record = RunRecord::new("sweep", cfg);
    record.axis = Some(sweep.axis);
    record.values = Some(sweep.values());
    record.failures = sweep.failures().into_iter().map(|(v, f)| format!("{v}: {f}")).collect();
    record.write(dir)
}

/// Writes `result.csv` (one row per branch and polarization) and `run.json`.
pub fn write_point_outputs(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(std::fs::File::create(dir.join("result.csv"))?);
    for row in &outcome.point.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let mut record = RunRecord::new("simulate", cfg);
    record.warnings = outcome.warnings.clone();
    record.rate_bps = Some(compute_rate(cfg));
    record.write(dir)
}
