//! Digital-domain power-division multiplexing.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ofdm::SampleStream;

const SUM_TOL: f64 = 1e-12;

/// Branch powers in strictly descending order, normalized to unit total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPlan {
    powers: Vec<f64>,
}

impl PowerPlan {
    pub fn new(powers: Vec<f64>) -> Result<Self> {
        if powers.is_empty() {
            return Err(Error::Ordering("power plan has no branches".into()));
        }
        if powers.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Ordering(format!(
                "branch powers must be positive and finite: {powers:?}"
            )));
        }
        let total: f64 = powers.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::Ordering(format!(
                "branch powers sum to {total}, expected 1"
            )));
        }
        if let Some(w) = powers.windows(2).find(|w| w[0] <= w[1]) {
            return Err(Error::Ordering(format!(
                "powers must be strictly descending, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(PowerPlan { powers })
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    /// Per-branch amplitude weights `sqrt(p_i)`.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.powers.iter().map(|p| p.sqrt()).collect()
    }

    pub fn n_branches(&self) -> usize {
        self.powers.len()
    }

    /// `p_1 / p_2` for a two-branch plan.
    pub fn pdr(&self) -> Option<f64> {
        match self.powers.as_slice() {
            [p1, p2] => Some(p1 / p2),
            _ => None,
        }
    }
}

/// Two-branch plan with `p_1 / p_2 = pdr`.
pub fn plan_from_pdr(pdr: f64) -> Result<PowerPlan> {
    if !pdr.is_finite() || pdr <= 1.0 {
        return Err(Error::Ordering(format!(
            "power division ratio must exceed 1, got {pdr}"
        )));
    }
    let p1 = pdr / (1.0 + pdr);
    let p2 = 1.0 / (1.0 + pdr);
    // construct directly: p1 + p2 can differ from 1 by an ulp
    Ok(PowerPlan {
        powers: vec![p1, p2],
    })
}

/// Samplewise `sum_i sqrt(p_i) x_i`.
pub fn superpose(streams: &[SampleStream], plan: &PowerPlan) -> Result<SampleStream> {
    if streams.len() != plan.n_branches() {
        return Err(Error::UnsupportedArity {
            expected: plan.n_branches(),
            got: streams.len(),
        });
    }
    let len = streams[0].len();
    if let Some(s) = streams.iter().find(|s| s.len() != len) {
        return Err(Error::Framing(format!(
            "branch streams differ in length: {} vs {}",
            len,
            s.len()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (stream, amp) in streams.iter().zip(plan.amplitudes()) {
        for (o, x) in out.iter_mut().zip(&stream.samples) {
            *o += x * amp;
        }
    }
    Ok(SampleStream::new(out, streams[0].sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pdr_plans() {
        let p = plan_from_pdr(4.0).unwrap();
        assert!((p.powers()[0] - 0.8).abs() < 1e-15);
        assert!((p.powers()[1] - 0.2).abs() < 1e-15);
        let p = plan_from_pdr(2.0).unwrap();
        assert!((p.powers()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.powers()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.pdr().unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(plan_from_pdr(1.0), Err(Error::Ordering(_))));
        assert!(matches!(plan_from_pdr(0.5), Err(Error::Ordering(_))));
    }

    #[test]
    fn plan_validation() {
        assert!(PowerPlan::new(vec![1.0]).is_ok());
        assert!(PowerPlan::new(vec![0.5, 0.5]).is_err());
        assert!(PowerPlan::new(vec![0.2, 0.8]).is_err());
        assert!(PowerPlan::new(vec![0.7, 0.2]).is_err());
        assert!(PowerPlan::new(vec![0.6, 0.3, 0.1]).is_ok());
    }

    #[test]
    fn single_branch_is_identity() {
        let s = SampleStream::new(vec![Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5)], 1.0);
        let out = superpose(std::slice::from_ref(&s), &PowerPlan::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = SampleStream::new(vec![Complex64::new(1.0, 0.0); 4], 1.0);
        let b = SampleStream::new(vec![Complex64::new(1.0, 0.0); 5], 1.0);
        let plan = plan_from_pdr(4.0).unwrap();
        assert!(matches!(superpose(&[a, b], &plan), Err(Error::Framing(_))));
    }

    #[test]
    fn uncorrelated_unit_streams_keep_unit_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let mut qpsk = || {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            Complex64::new(
                if rng.random::<bool>() { s } else { -s },
                if rng.random::<bool>() { s } else { -s },
            )
        };
        let a = SampleStream::new((0..n).map(|_| qpsk()).collect(), 1.0);
        let b = SampleStream::new((0..n).map(|_| qpsk()).collect(), 1.0);
        let out = superpose(&[a, b], &plan_from_pdr(4.0).unwrap()).unwrap();
        let p = out.mean_power();
        assert!((p - 1.0).abs() < 0.01, "mean power {p}");
    }

    #[test]
    fn scale_covariance() {
        let a = SampleStream::new(vec![Complex64::new(0.1, 0.7), Complex64::new(-0.4, 0.2)], 1.0);
        let b = SampleStream::new(vec![Complex64::new(1.1, -0.3), Complex64::new(0.0, 0.9)], 1.0);
        let plan = plan_from_pdr(3.0).unwrap();
        let c = Complex64::new(0.0, 2.5);
        let base = superpose(&[a.clone(), b.clone()], &plan).unwrap();
        let scaled = superpose(&[a.scaled(c), b.scaled(c)], &plan).unwrap();
        for (x, y) in base.samples.iter().zip(&scaled.samples) {
            assert!((x * c - y).norm() < 1e-14);
        }
    }
}
