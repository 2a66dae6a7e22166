//! Power de-multiplexing: successive interference cancellation and the
//! one-shot hierarchical de-mapper.
//!
//! Input is the equalized, phase-recovered, despread grid of one
//! polarization, modelled as `y = sum sqrt(p_i) X_i + noise`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitsource::BitBlock;
use crate::constellation::{check_separable, composite_points, demap_qpsk, hierarchical_nearest, map_qpsk};
use crate::error::{Error, Result};
use crate::ofdm::SymbolGrid;
use crate::pdm::PowerPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sic,
    Hierarchical,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sic => "sic",
            Method::Hierarchical => "hierarchical",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sic" => Ok(Method::Sic),
            "hierarchical" => Ok(Method::Hierarchical),
            other => Err(Error::Usage(format!("unknown detection method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub method: Method,
    /// Recovered bits, one block per branch in descending power order.
    pub bits: Vec<BitBlock>,
    /// Unit-energy QPSK decisions per branch, column-major like the grid.
    pub decisions: Vec<Vec<Complex64>>,
    /// `residuals[i]` is the grid after branches `0..=i` were subtracted.
    pub residuals: Vec<SymbolGrid>,
}

impl DetectionReport {
    pub fn n_branches(&self) -> usize {
        self.bits.len()
    }
}

fn decide(points: &[Complex64]) -> (Vec<Complex64>, Vec<u8>) {
    let labels: Vec<[u8; 2]> = points.par_iter().map(|&z| demap_qpsk(z)).collect();
    let decisions = labels.iter().map(|&b| map_qpsk(b).value()).collect();
    (decisions, labels.into_iter().flatten().collect())
}

fn subtract(residual: &SymbolGrid, decisions: &[Complex64], gain: f64) -> SymbolGrid {
    let mut out = residual.clone();
    for (r, d) in out.entries_mut().iter_mut().zip(decisions) {
        *r -= d * gain;
    }
    out
}

/// Successive cancellation: slice the strongest remaining branch with the
/// QPSK slicer, re-modulate, scale by `sqrt(p_i)`, subtract, repeat.
pub fn detect_sic(grid: &SymbolGrid, plan: &PowerPlan) -> Result<DetectionReport> {
    // PowerPlan guarantees descending powers; re-checked for plans built by hand
    if plan.powers().windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Ordering("branch powers must be strictly descending".into()));
    }
    let pol = grid.pol.index();
    let mut residual = grid.clone();
    let mut report = DetectionReport {
        method: Method::Sic,
        bits: Vec::new(),
        decisions: Vec::new(),
        residuals: Vec::new(),
    };
    for (i, a) in plan.amplitudes().into_iter().enumerate() {
        let (decisions, bits) = decide(residual.entries());
        residual = subtract(&residual, &decisions, a);
        report.bits.push(BitBlock::new(bits, i, pol));
        report.decisions.push(decisions);
        report.residuals.push(residual.clone());
    }
    Ok(report)
}

/// Nearest-point detection on the two-branch composite constellation.
pub fn detect_hierarchical(grid: &SymbolGrid, plan: &PowerPlan) -> Result<DetectionReport> {
    let points = composite_points(plan)?;
    check_separable(&points)?;
    let labels: Vec<([u8; 2], [u8; 2])> = grid
        .entries()
        .par_iter()
        .map(|&z| hierarchical_nearest(z, &points))
        .collect();
    let pol = grid.pol.index();
    let a = plan.amplitudes();
    let mut report = DetectionReport {
        method: Method::Hierarchical,
        bits: Vec::new(),
        decisions: Vec::new(),
        residuals: Vec::new(),
    };
    let mut residual = grid.clone();
    for i in 0..2 {
        let pick = |l: &([u8; 2], [u8; 2])| if i == 0 { l.0 } else { l.1 };
        let decisions: Vec<Complex64> = labels.iter().map(|l| map_qpsk(pick(l)).value()).collect();
        residual = subtract(&residual, &decisions, a[i]);
        report.bits.push(BitBlock::new(labels.iter().flat_map(pick).collect(), i, pol));
        report.decisions.push(decisions);
        report.residuals.push(residual.clone());
    }
    Ok(report)
}

pub fn detect(method: Method, grid: &SymbolGrid, plan: &PowerPlan) -> Result<DetectionReport> {
    match method {
        Method::Sic => detect_sic(grid, plan),
        Method::Hierarchical => detect_hierarchical(grid, plan),
    }
}

/// Exact error count for one branch and polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockErrors {
    pub branch_id: usize,
    pub pol_id: usize,
    pub errors: u64,
    pub bits: u64,
}

impl BlockErrors {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub blocks: Vec<BlockErrors>,
}

impl ErrorCounts {
    pub fn errors(&self) -> u64 {
        self.blocks.iter().map(|b| b.errors).sum()
    }

    pub fn bits(&self) -> u64 {
        self.blocks.iter().map(|b| b.bits).sum()
    }

    pub fn ber(&self) -> f64 {
        BlockErrors {
            branch_id: 0,
            pol_id: 0,
            errors: self.errors(),
            bits: self.bits(),
        }
        .ber()
    }

    /// Totals for one branch across polarizations.
    pub fn branch(&self, branch_id: usize) -> BlockErrors {
        let mut out = BlockErrors {
            branch_id,
            pol_id: usize::MAX,
            errors: 0,
            bits: 0,
        };
        for b in self.blocks.iter().filter(|b| b.branch_id == branch_id) {
            out.errors += b.errors;
            out.bits += b.bits;
        }
        out
    }

    /// Adds counts block by block, matching on (branch, pol).
    pub fn merge(&mut self, other: &ErrorCounts) {
        for b in &other.blocks {
            match self
                .blocks
                .iter_mut()
                .find(|s| s.branch_id == b.branch_id && s.pol_id == b.pol_id)
            {
                Some(s) => {
                    s.errors += b.errors;
                    s.bits += b.bits;
                }
                None => self.blocks.push(*b),
            }
        }
    }
}

/// Compares recovered blocks against the transmitted ones, matched by
/// (branch, pol).
pub fn count_errors(report: &DetectionReport, truth: &[BitBlock]) -> Result<ErrorCounts> {
    let mut blocks = Vec::with_capacity(report.bits.len());
    for got in &report.bits {
        let want = truth
            .iter()
            .find(|t| t.branch_id == got.branch_id && t.pol_id == got.pol_id)
            .ok_or_else(|| {
                Error::Accounting(format!(
                    "no transmitted block for branch {} pol {}",
                    got.branch_id, got.pol_id
                ))
            })?;
        if want.len() != got.len() {
            return Err(Error::Accounting(format!(
                "branch {} pol {}: {} recovered bits against {} sent",
                got.branch_id,
                got.pol_id,
                got.len(),
                want.len()
            )));
        }
        let errors = want.bits.iter().zip(&got.bits).filter(|(a, b)| a != b).count() as u64;
        blocks.push(BlockErrors {
            branch_id: got.branch_id,
            pol_id: got.pol_id,
            errors,
            bits: want.len() as u64,
        });
    }
    Ok(ErrorCounts { blocks })
}
