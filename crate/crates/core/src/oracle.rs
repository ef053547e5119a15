//! Query access to pseudo-Boolean functions.

use std::collections::HashMap;

use crate::bits::BitPattern;
use crate::dataset::ActivationDataset;
use crate::error::{Error, Result};

/// A pseudo-Boolean function that can be evaluated on patterns.
pub trait PatternOracle: Sync {
    fn n(&self) -> usize;

    fn query(&self, pattern: &BitPattern) -> Result<f64>;

    /// Whether answers off the in-distribution set carry information.
    /// A projection answers 0 there, which flip-based attributions cannot use.
    fn answers_off_distribution(&self) -> bool {
        true
    }
}

/// An exactly known function.
pub struct FnOracle<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&BitPattern) -> f64 + Sync> FnOracle<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnOracle { n, f }
    }
}

impl<F: Fn(&BitPattern) -> f64 + Sync> PatternOracle for FnOracle<F> {
    fn n(&self) -> usize {
        self.n
    }

    fn query(&self, pattern: &BitPattern) -> Result<f64> {
        if pattern.n() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: pattern.n() });
        }
        Ok((self.f)(pattern))
    }
}

/// The projection of a dataset: the recorded value on observed patterns, 0 elsewhere.
/// Repeated patterns answer their weighted mean value.
pub struct ProjectionOracle {
    n: usize,
    values: HashMap<BitPattern, f64>,
}

impl ProjectionOracle {
    pub fn new(ds: &ActivationDataset) -> Self {
        let mut acc: HashMap<BitPattern, (f64, f64)> = HashMap::new();
        for r in ds.records() {
            let e = acc.entry(r.pattern.clone()).or_insert((0.0, 0.0));
            e.0 += r.weight * r.value;
            e.1 += r.weight;
        }
        let values = acc
            .into_iter()
            .map(|(p, (sum, w))| (p, if w > 0.0 { sum / w } else { 0.0 }))
            .collect();
        ProjectionOracle { n: ds.n(), values }
    }

    pub fn contains(&self, pattern: &BitPattern) -> bool {
        self.values.contains_key(pattern)
    }
}

impl PatternOracle for ProjectionOracle {
    fn n(&self) -> usize {
        self.n
    }

    fn query(&self, pattern: &BitPattern) -> Result<f64> {
        if pattern.n() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: pattern.n() });
        }
        Ok(self.values.get(pattern).copied().unwrap_or(0.0))
    }

    fn answers_off_distribution(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Record;

    #[test]
    fn projection_lookup() {
        let a: BitPattern = "101".parse().unwrap();
        let b: BitPattern = "111".parse().unwrap();
        let ds = ActivationDataset::new(
            3,
            vec![Record::new(a.clone(), 2.0), Record::weighted(a.clone(), 5.0, 2.0)],
        )
        .unwrap();
        let o = ProjectionOracle::new(&ds);
        assert_eq!(o.query(&a).unwrap(), 4.0);
        assert_eq!(o.query(&b).unwrap(), 0.0);
        assert!(!o.answers_off_distribution());
        assert!(o.query(&BitPattern::positive(2)).is_err());
    }
}
