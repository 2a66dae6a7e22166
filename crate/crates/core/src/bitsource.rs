//! PRBS-15 bit source and per-branch bit bookkeeping.
//!
//! The generator is a Fibonacci LFSR on `x^15 + x^14 + 1`. Branches and
//! polarizations draw from disjoint round-robin positions of one stream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEGREE: u32 = 15;
const MASK: u16 = (1 << DEGREE) - 1;

/// Period of the maximal-length degree-15 sequence.
pub const PRBS15_PERIOD: usize = (1 << DEGREE) - 1;

/// State of the PRBS-15 shift register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrbsState {
    register: u16,
    counter: u64,
}

impl Default for PrbsState {
    fn default() -> Self {
        Self::all_ones()
    }
}

impl PrbsState {
    pub fn all_ones() -> Self {
        PrbsState {
            register: MASK,
            counter: 0,
        }
    }

    /// Seeds the register with the low 15 bits of `seed`.
    pub fn with_seed(seed: u16) -> Result<Self> {
        let register = seed & MASK;
        if register == 0 {
            return Err(Error::InvalidState(
                "PRBS register seeded with all zeros".into(),
            ));
        }
        Ok(PrbsState {
            register,
            counter: 0,
        })
    }

    pub fn register(&self) -> u16 {
        self.register
    }

    /// Bits emitted so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    fn step(&mut self) -> u8 {
        let fb = ((self.register >> 14) ^ (self.register >> 13)) & 1;
        self.register = ((self.register << 1) | fb) & MASK;
        self.counter += 1;
        fb as u8
    }
}

/// An ordered run of bits tagged with the branch and polarization it feeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitBlock {
    pub bits: Vec<u8>,
    pub branch_id: usize,
    pub pol_id: usize,
}

impl BitBlock {
    pub fn new(bits: Vec<u8>, branch_id: usize, pol_id: usize) -> Self {
        BitBlock {
            bits,
            branch_id,
            pol_id,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Draws the next `n` bits from the generator.
pub fn prbs_next(state: &mut PrbsState, n: usize) -> Result<BitBlock> {
    if n == 0 {
        return Err(Error::Precondition("requested zero PRBS bits".into()));
    }
    if state.register & MASK == 0 {
        return Err(Error::InvalidState("PRBS register is all zeros".into()));
    }
    let bits = (0..n).map(|_| state.step()).collect();
    Ok(BitBlock::new(bits, 0, 0))
}

/// Deals bits round-robin into `n_branches * n_pols` blocks.
///
/// Output block `k` holds input positions `k, k + m, k + 2m, ...` with
/// `m = n_branches * n_pols`, and is labeled branch `k / n_pols`,
/// polarization `k % n_pols`.
pub fn split_branches(bits: &BitBlock, n_branches: usize, n_pols: usize) -> Result<Vec<BitBlock>> {
    let m = n_branches * n_pols;
    if m == 0 {
        return Err(Error::Framing("zero branches or polarizations".into()));
    }
    if bits.len() % m != 0 {
        return Err(Error::Framing(format!(
            "{} bits do not divide into {} branches x {} polarizations",
            bits.len(),
            n_branches,
            n_pols
        )));
    }
    let per = bits.len() / m;
    let mut out: Vec<BitBlock> = (0..m)
        .map(|k| BitBlock::new(Vec::with_capacity(per), k / n_pols, k % n_pols))
        .collect();
    for (i, &b) in bits.bits.iter().enumerate() {
        out[i % m].bits.push(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_is_exactly_32767() {
        let mut st = PrbsState::all_ones();
        let two = prbs_next(&mut st, 2 * PRBS15_PERIOD).unwrap();
        let (a, b) = two.bits.split_at(PRBS15_PERIOD);
        assert_eq!(a, b);
        // no proper divisor of 32767 = 7 * 31 * 151 is a period
        for d in [7usize, 31, 151, 217, 1057, 4681] {
            let shifted = two.bits[d..d + PRBS15_PERIOD].to_vec();
            assert_ne!(shifted, a, "sequence repeats with period {d}");
        }
        assert_eq!(st.counter(), 2 * PRBS15_PERIOD as u64);
    }

    #[test]
    fn balance_over_one_period() {
        let mut st = PrbsState::all_ones();
        let blk = prbs_next(&mut st, PRBS15_PERIOD).unwrap();
        let ones = blk.bits.iter().filter(|&&b| b == 1).count();
        assert_eq!(ones, 1 << 14);
        assert_eq!(PRBS15_PERIOD - ones, (1 << 14) - 1);
    }

    #[test]
    fn cyclic_autocorrelation_is_two_valued() {
        let mut st = PrbsState::all_ones();
        let blk = prbs_next(&mut st, PRBS15_PERIOD).unwrap();
        let s: Vec<i64> = blk.bits.iter().map(|&b| 1 - 2 * b as i64).collect();
        let n = s.len();
        for lag in [1usize, 2, 3, 100, 4096, 16383, 32766] {
            let acc: i64 = (0..n).map(|i| s[i] * s[(i + lag) % n]).sum();
            assert_eq!(acc, -1, "lag {lag}");
        }
    }

    #[test]
    fn zero_request_and_zero_seed_rejected() {
        let mut st = PrbsState::all_ones();
        assert!(matches!(prbs_next(&mut st, 0), Err(Error::Precondition(_))));
        assert!(matches!(PrbsState::with_seed(0), Err(Error::InvalidState(_))));
        assert!(matches!(
            PrbsState::with_seed(0x8000),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn equal_seeds_agree() {
        let mut a = PrbsState::with_seed(0x1234).unwrap();
        let mut b = PrbsState::with_seed(0x1234).unwrap();
        assert_eq!(prbs_next(&mut a, 1024).unwrap(), prbs_next(&mut b, 1024).unwrap());
    }

    #[test]
    fn split_round_robin() {
        let blk = BitBlock::new(vec![1, 0, 0, 1], 0, 0);
        let out = split_branches(&blk, 2, 1).unwrap();
        assert_eq!(out[0].bits, vec![1, 0]);
        assert_eq!(out[1].bits, vec![0, 1]);
        assert_eq!((out[1].branch_id, out[1].pol_id), (1, 0));

        let blk = BitBlock::new(vec![0, 1, 1, 0, 1, 1, 0, 0], 0, 0);
        let out = split_branches(&blk, 2, 2).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|b| b.len() == 2));
        let labels: Vec<_> = out.iter().map(|b| (b.branch_id, b.pol_id)).collect();
        assert_eq!(labels, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let total: usize = out.iter().flat_map(|b| b.bits.iter()).map(|&b| b as usize).sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn split_indivisible_is_framing_error() {
        let blk = BitBlock::new(vec![0; 7], 0, 0);
        assert!(matches!(split_branches(&blk, 2, 2), Err(Error::Framing(_))));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_is_a_bijection(bits in proptest::collection::vec(0u8..2, 0..64usize),
                                    nb in 1usize..4, np in 1usize..3) {
                let m = nb * np;
                let len = bits.len() / m * m;
                let blk = BitBlock::new(bits[..len].to_vec(), 0, 0);
                let out = split_branches(&blk, nb, np).unwrap();
                for (i, &b) in blk.bits.iter().enumerate() {
                    let k = i % m;
                    prop_assert_eq!(out[k].bits[i / m], b);
                    prop_assert_eq!(out[k].branch_id * np + out[k].pol_id, k);
                }
            }
        }
    }
}
