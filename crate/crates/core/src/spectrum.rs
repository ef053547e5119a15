//! Exact Fourier machinery: the Walsh–Hadamard transform of full truth tables,
//! projection coefficients of datasets, influence and exact bucket weights.
//!
//! Coefficients of a dataset are on the normalized scale
//! `c(S) = Σ_r w_r f(x_r) x_r^S / Σ_r w_r`. The coefficient of the projection that
//! vanishes off the dataset is `c(S) · (Σ_r w_r) / 2^n`; that factor is carried in
//! [`NormalizedCoefficient::projection_scale`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bits::SubsetMask;
use crate::dataset::{group_ids, ActivationDataset};
use crate::error::{invalid, Error, Result};

/// Largest dimension accepted by the exact transform.
pub const MAX_EXACT_N: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct FourierTable {
    n: usize,
    coeffs: Vec<f64>,
}

impl FourierTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, s: &SubsetMask) -> f64 {
        self.coeffs[s.to_index() as usize]
    }

    pub fn total_weight(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SubsetMask, f64)> + '_ {
        let n = self.n;
        self.coeffs.iter().enumerate().map(move |(k, &c)| (SubsetMask::from_index(n, k as u64), c))
    }

    /// `mask,coefficient` rows in table order.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "mask,coefficient")?;
        for (s, c) in self.iter() {
            writeln!(sink, "{s},{c}")?;
        }
        Ok(())
    }
}

/// Fourier coefficients of a full truth table.
///
/// `values[x]` is `f` at the pattern whose bit `i` is bit `i` of `x` (bit 1 = +1).
/// Runs the in-place butterfly in `O(n 2^n)`.
pub fn wht_exact(values: &[f64]) -> Result<FourierTable> {
    let len = values.len();
    if len == 0 || !len.is_power_of_two() {
        return Err(invalid(format!("table length {len} is not a power of two")));
    }
    let n = len.trailing_zeros() as usize;
    if n > MAX_EXACT_N {
        return Err(invalid(format!("n = {n} exceeds the exact-transform limit {MAX_EXACT_N}")));
    }
    let mut a = values.to_vec();
    let mut h = 1;
    while h < len {
        for block in a.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (u, v) in lo.iter_mut().zip(hi.iter_mut()) {
                // lo holds x_i = -1, hi holds x_i = +1
                let (neg, pos) = (*u, *v);
                *u = pos + neg;
                *v = pos - neg;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / len as f64;
    a.iter_mut().for_each(|c| *c *= scale);
    Ok(FourierTable { n, coeffs: a })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCoefficient {
    pub s: SubsetMask,
    pub value: f64,
    /// `(Σ w) / 2^n`, the factor to the projection's unnormalized coefficient.
    pub projection_scale: f64,
}

impl NormalizedCoefficient {
    pub fn unnormalized(&self) -> f64 {
        self.value * self.projection_scale
    }
}

pub fn projection_coefficient(ds: &ActivationDataset, s: &SubsetMask) -> Result<NormalizedCoefficient> {
    ds.check_mask(s)?;
    let value = ds.mean(|r| r.value * r.pattern.parity_unchecked(s) as f64);
    Ok(NormalizedCoefficient {
        s: s.clone(),
        value,
        projection_scale: ds.total_weight() / 2f64.powi(ds.n() as i32),
    })
}

/// `Σ_{S ∋ i} coeffs(S)²`.
pub fn influence_exact(table: &FourierTable, i: usize) -> Result<f64> {
    if i >= table.n {
        return Err(Error::IndexOutOfRange { index: i, n: table.n });
    }
    Ok(table
        .coeffs
        .iter()
        .enumerate()
        .filter(|(k, _)| k >> i & 1 == 1)
        .map(|(_, c)| c * c)
        .sum())
}

/// Per-group sums `(Σ_{r∈g} w_r f_r x_r^S, Σ_{r∈g} w_r)` over the groups of records
/// that agree on `J = [n] \ I`.
fn group_sums(ds: &ActivationDataset, s: &SubsetMask, i_mask: &SubsetMask) -> Result<Vec<(f64, f64)>> {
    ds.check_mask(s)?;
    ds.check_mask(i_mask)?;
    if !s.is_subset_of(i_mask) {
        return Err(invalid(format!("S = {s:?} is not a subset of I = {i_mask:?}")));
    }
    let (ids, count) = group_ids(ds, &i_mask.complement());
    let mut sums = vec![(0.0, 0.0); count];
    for (r, &g) in ds.records().iter().zip(&ids) {
        let e = &mut sums[g as usize];
        e.0 += r.weight * r.value * r.pattern.parity_unchecked(s) as f64;
        e.1 += r.weight;
    }
    Ok(sums)
}

/// Bucket weight of `{S ∪ T : T ⊆ J}`, `J = [n] \ I`, measured on the dataset:
/// the weight-fraction-weighted sum over `J`-restriction groups of the squared
/// within-group mean of `f · x^S`.
///
/// It bounds every member, `c(S ∪ T)² ≤ weight` for all `T ⊆ J`, and equals
/// `Σ_T c(S ∪ T)²` when the dataset is the full cube (or any dataset whose
/// `J`-restrictions are uniformly weighted over `{-1,+1}^J`).
pub fn bucket_weight_exact(ds: &ActivationDataset, s: &SubsetMask, i_mask: &SubsetMask) -> Result<f64> {
    let total = ds.total_weight();
    Ok(group_sums(ds, s, i_mask)?
        .into_iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|(sum, w)| sum * sum / (w * total))
        .sum())
}

/// `Σ_{T ⊆ J} c(S ∪ T)²` exactly, for any dataset:
/// `2^|J| Σ_g (Σ_{r∈g} w_r f_r x_r^S)² / (Σ w)²`.
pub fn completion_sum_exact(ds: &ActivationDataset, s: &SubsetMask, i_mask: &SubsetMask) -> Result<f64> {
    let total = ds.total_weight();
    let free = (ds.n() - i_mask.len()) as i32;
    let sq: f64 = group_sums(ds, s, i_mask)?.into_iter().map(|(sum, _)| sum * sum).sum();
    Ok(2f64.powi(free) * sq / (total * total))
}

/// Total weight seen by the search: the bucket of every subset, `I = ∅`.
pub fn dataset_total_weight(ds: &ActivationDataset) -> f64 {
    bucket_weight_exact(ds, &SubsetMask::empty(ds.n()), &SubsetMask::empty(ds.n()))
        .expect("empty masks always match")
}

/// Truth table of `f` over the full cube in table order.
pub fn truth_table(n: usize, f: impl Fn(&crate::bits::BitPattern) -> f64) -> Vec<f64> {
    (0..1u64 << n).map(|x| f(&crate::bits::BitPattern::from_index(n, x))).collect()
}
