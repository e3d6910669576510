use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which modalities are observed, in model order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mask(Vec<bool>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScheme {
    /// Any of the 2^M − 1 non-empty subsets.
    UniformNonempty,
    /// Non-empty and not everything: 2^M − 2 options.
    UniformStrictSubset,
}

impl Mask {
    pub fn new(observed: Vec<bool>) -> Self {
        Self(observed)
    }

    pub fn full(m: usize) -> Self {
        Self(vec![true; m])
    }

    /// Bit `i` of `bits` marks modality `i`.
    pub fn from_bits(bits: u32, m: usize) -> Self {
        Self((0..m).map(|i| bits >> i & 1 == 1).collect())
    }

    pub fn bits(&self) -> u32 {
        self.0.iter().enumerate().map(|(i, &b)| u32::from(b) << i).sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn observed(&self) -> &[bool] {
        &self.0
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.0.get(i).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn none_observed(&self) -> bool {
        self.count() == 0
    }

    pub fn sample(rng: &mut Rng, m: usize, scheme: MaskScheme) -> Result<Self> {
        if m == 0 || m > 16 {
            return Err(Error::contract(format!("mask over {m} modalities")));
        }
        let all = 1u32 << m;
        let bits = match scheme {
            MaskScheme::UniformNonempty => 1 + rng.below(all as usize - 1) as u32,
            MaskScheme::UniformStrictSubset => {
                if m < 2 {
                    return Err(Error::contract("a strict subset needs at least two modalities"));
                }
                1 + rng.below(all as usize - 2) as u32
            }
        };
        Ok(Self::from_bits(bits, m))
    }

    /// `[rows, width]` tensor whose row `r` is all ones when modality `i` is
    /// observed in `masks[r]`, zeros otherwise.
    pub(crate) fn column_weights(masks: &[Mask], i: usize, width: usize) -> Tensor {
        let mut data = Vec::with_capacity(masks.len() * width);
        for m in masks {
            let v = if m.is_observed(i) { 1.0 } else { 0.0 };
            data.extend(std::iter::repeat_n(v, width));
        }
        Tensor::from_parts(vec![masks.len(), width], data)
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_modality_nonempty_is_always_observed() {
        let mut rng = Rng::new(0);
        for _ in 0..50 {
            assert_eq!(Mask::sample(&mut rng, 1, MaskScheme::UniformNonempty).unwrap(), Mask::full(1));
        }
    }

    #[test]
    fn strict_subsets_of_two() {
        let mut rng = Rng::new(1);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            seen.insert(Mask::sample(&mut rng, 2, MaskScheme::UniformStrictSubset).unwrap().bits());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2]);
        assert!(Mask::sample(&mut rng, 1, MaskScheme::UniformStrictSubset).is_err());
    }

    #[test]
    fn nonempty_frequencies_over_three() {
        let mut rng = Rng::new(2);
        let mut counts = [0usize; 8];
        let n = 70_000;
        for _ in 0..n {
            counts[Mask::sample(&mut rng, 3, MaskScheme::UniformNonempty).unwrap().bits() as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        for c in &counts[1..] {
            assert!((*c as f64 / n as f64 - 1.0 / 7.0).abs() < 0.01);
        }
    }

    #[test]
    fn bits_round_trip_and_display() {
        let m = Mask::new(vec![true, false, true]);
        assert_eq!(m.bits(), 5);
        assert_eq!(Mask::from_bits(5, 3), m);
        assert_eq!(m.to_string(), "101");
        assert_eq!(m.count(), 2);
        assert!(!m.is_full());
    }
}
