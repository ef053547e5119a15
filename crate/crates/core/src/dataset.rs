//! Weighted datasets of sign patterns with real outputs, and restriction grouping.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bits::{BitPattern, SubsetMask};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub pattern: BitPattern,
    pub value: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Record {
    pub fn new(pattern: BitPattern, value: f64) -> Self {
        Record { pattern, value, weight: 1.0 }
    }

    pub fn weighted(pattern: BitPattern, value: f64, weight: f64) -> Self {
        Record { pattern, value, weight }
    }
}

/// The in-distribution sample set defining a pseudo-Boolean projection.
///
/// All averages over the dataset are weight-aware; duplicate patterns are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    n: usize,
    records: Vec<Record>,
    total_weight: f64,
}

impl ActivationDataset {
    pub fn new(n: usize, records: Vec<Record>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("dataset dimension must be positive"));
        }
        let mut total_weight = 0.0;
        for (k, r) in records.iter().enumerate() {
            if r.pattern.n() != n {
                return Err(Error::DimensionMismatch { expected: n, found: r.pattern.n() });
            }
            if !r.value.is_finite() {
                return Err(Error::Numeric(format!("record {k} has non-finite value")));
            }
            if !(r.weight.is_finite() && r.weight >= 0.0) {
                return Err(Error::Numeric(format!("record {k} has invalid weight {}", r.weight)));
            }
            total_weight += r.weight;
        }
        if records.is_empty() || total_weight <= 0.0 {
            return Err(Error::EmptyDataset);
        }
        Ok(ActivationDataset { n, records, total_weight })
    }

    /// Every point of `{-1,+1}^n` once, in table order, valued by `f`.
    pub fn full_cube(n: usize, f: impl Fn(&BitPattern) -> f64) -> Result<Self> {
        if n > 24 {
            return Err(invalid("full cube datasets are limited to n <= 24"));
        }
        let records = (0..1u64 << n)
            .map(|x| {
                let p = BitPattern::from_index(n, x);
                let v = f(&p);
                Record::new(p, v)
            })
            .collect();
        Self::new(n, records)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn max_abs_value(&self) -> f64 {
        self.records.iter().map(|r| r.value.abs()).fold(0.0, f64::max)
    }

    /// Weighted mean of `g(record)`.
    pub fn mean(&self, g: impl Fn(&Record) -> f64) -> f64 {
        self.records.iter().map(|r| r.weight * g(r)).sum::<f64>() / self.total_weight
    }

    /// Weighted mean of `x^S` over the dataset (the value is ignored).
    pub fn parity_mean(&self, s: &SubsetMask) -> f64 {
        self.mean(|r| r.pattern.parity_unchecked(s) as f64)
    }

    pub(crate) fn check_mask(&self, s: &SubsetMask) -> Result<()> {
        if s.n() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: s.n() });
        }
        Ok(())
    }

    /// Same patterns and weights, values replaced.
    pub fn with_values(&self, values: impl Fn(&Record) -> f64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| Record::weighted(r.pattern.clone(), values(r), r.weight))
            .collect();
        Self::new(self.n, records)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionGroup {
    /// The shared coordinates; positions outside `J` read as -1.
    pub key: BitPattern,
    pub members: Vec<usize>,
}

/// Partition of a dataset's records by their coordinates on `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionGroups {
    pub j_mask: SubsetMask,
    pub groups: Vec<RestrictionGroup>,
}

/// Groups records that agree on every coordinate of `j`, ordered lexicographically
/// on the restricted pattern.
pub fn group_by_restriction(ds: &ActivationDataset, j: &SubsetMask) -> Result<RestrictionGroups> {
    ds.check_mask(j)?;
    let mut map: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for (k, r) in ds.records().iter().enumerate() {
        map.entry(r.pattern.restricted_key(j)).or_default().push(k);
    }
    let groups = map
        .into_values()
        .map(|members| {
            let mut key = BitPattern::negative(ds.n());
            key.splice(&ds.records()[members[0]].pattern, j);
            RestrictionGroup { key, members }
        })
        .collect();
    Ok(RestrictionGroups { j_mask: j.clone(), groups })
}

/// Dense group ids (in first-appearance order) for the hot aggregation loops.
pub(crate) fn group_ids(ds: &ActivationDataset, j: &SubsetMask) -> (Vec<u32>, usize) {
    let mut ids = HashMap::with_capacity(ds.len());
    let assignment = ds
        .records()
        .iter()
        .map(|r| {
            let next = ids.len() as u32;
            *ids.entry(r.pattern.restricted_key(j)).or_insert(next)
        })
        .collect();
    (assignment, ids.len())
}
