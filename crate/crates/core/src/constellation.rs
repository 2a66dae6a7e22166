//! QPSK mapping, the two-branch composite constellation and its
//! hierarchical de-mapper.
//!
//! QPSK is Gray mapped: bit 0 picks the sign of the in-phase rail, bit 1 the
//! sign of the quadrature rail, with `0 -> +`. Superposing two such branches
//! gives per-rail levels `±a1 ± a2`. Each composite point also carries a
//! quadrant-Gray label `(s1, s1 xor s2)`: the first two bits are the strong
//! branch's quadrant, the last two say outer/inner within the quadrant, and
//! at PDR 4:1 the labels form a textbook Gray 16QAM. The weak branch's bits
//! are recovered from the label by undoing the xor.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pdm::PowerPlan;

/// A unit-energy QPSK point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpskSymbol(Complex64);

impl QpskSymbol {
    pub fn value(self) -> Complex64 {
        self.0
    }
}

impl From<QpskSymbol> for Complex64 {
    fn from(s: QpskSymbol) -> Self {
        s.0
    }
}

#[inline]
fn rail(bit: u8) -> f64 {
    if bit == 0 {
        FRAC_1_SQRT_2
    } else {
        -FRAC_1_SQRT_2
    }
}

#[inline]
fn slice_rail(x: f64) -> u8 {
    // boundary resolves toward bit 0
    if x >= 0.0 {
        0
    } else {
        1
    }
}

pub fn map_qpsk(bits: [u8; 2]) -> QpskSymbol {
    QpskSymbol(Complex64::new(rail(bits[0]), rail(bits[1])))
}

/// Hard decision: sign of each rail, zero maps to bit 0.
pub fn demap_qpsk(point: Complex64) -> [u8; 2] {
    [slice_rail(point.re), slice_rail(point.im)]
}

/// Maps an even-length bit slice onto QPSK points, two bits per symbol.
pub fn map_bits(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::Framing(format!(
            "QPSK mapping needs an even bit count, got {}",
            bits.len()
        )));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|b| map_qpsk([b[0], b[1]]).value())
        .collect())
}

/// Inverse of [`map_bits`] by hard decision.
pub fn demap_bits(points: &[Complex64]) -> Vec<u8> {
    points.iter().flat_map(|&p| demap_qpsk(p)).collect()
}

/// One of the 16 superposed points with the branch labels that produce it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositePoint {
    pub value: Complex64,
    pub strong: [u8; 2],
    pub weak: [u8; 2],
    /// Quadrant-Gray label `(s1, s1 xor s2)`.
    pub label: [u8; 4],
}

fn two_branch_amplitudes(plan: &PowerPlan) -> Result<(f64, f64)> {
    match plan.amplitudes().as_slice() {
        [a1, a2] => Ok((*a1, *a2)),
        other => Err(Error::UnsupportedArity {
            expected: 2,
            got: other.len(),
        }),
    }
}

const LABELS: [[u8; 2]; 4] = [[0, 0], [0, 1], [1, 0], [1, 1]];

/// All `sqrt(p1) s1 + sqrt(p2) s2` over QPSK `s1, s2`.
pub fn composite_points(plan: &PowerPlan) -> Result<Vec<CompositePoint>> {
    let (a1, a2) = two_branch_amplitudes(plan)?;
    let mut out = Vec::with_capacity(16);
    for strong in LABELS {
        for weak in LABELS {
            out.push(CompositePoint {
                value: map_qpsk(strong).value() * a1 + map_qpsk(weak).value() * a2,
                strong,
                weak,
                label: [strong[0], strong[1], strong[0] ^ weak[0], strong[1] ^ weak[1]],
            });
        }
    }
    Ok(out)
}

/// Nearest-point detection on the composite constellation. The first two
/// label bits go to the strong branch, the last two to the weak branch.
pub fn demap_hierarchical(point: Complex64, plan: &PowerPlan) -> Result<([u8; 2], [u8; 2])> {
    let points = composite_points(plan)?;
    check_separable(&points)?;
    Ok(hierarchical_nearest(point, &points))
}

/// Checks that distinct labels map to distinct points.
pub(crate) fn check_separable(points: &[CompositePoint]) -> Result<()> {
    let scale = points.iter().map(|p| p.value.norm()).fold(0.0, f64::max);
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            if (p.value - q.value).norm() <= 1e-12 * scale {
                return Err(Error::Ambiguous(format!(
                    "labels {:?}/{:?} and {:?}/{:?} share a point",
                    p.strong, p.weak, q.strong, q.weak
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn hierarchical_nearest(point: Complex64, points: &[CompositePoint]) -> ([u8; 2], [u8; 2]) {
    let mut best = &points[0];
    let mut best_d = (points[0].value - point).norm_sqr();
    for cand in &points[1..] {
        let d = (cand.value - point).norm_sqr();
        let tie = (d - best_d).abs() <= 1e-12 * best_d.max(1e-300);
        // equidistant candidates: prefer the larger level on each rail, which
        // is where the per-rail `>= 0 -> bit 0` rule lands on every boundary
        let prefer = if tie {
            (cand.value.re, cand.value.im) > (best.value.re, best.value.im)
        } else {
            d < best_d
        };
        if prefer {
            best = cand;
            best_d = d;
        }
    }
    let l = best.label;
    ([l[0], l[1]], [l[0] ^ l[2], l[1] ^ l[3]])
}
