//! Synthetic benchmark functions, ground-truth importance, and black-box baselines.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitPattern;
use crate::dataset::{ActivationDataset, Record};
use crate::error::{invalid, Error, Result};
use crate::estimate::query_rng;
use crate::oracle::PatternOracle;
use crate::spectrum::{influence_exact, truth_table, wht_exact};

/// 1 iff `X3 = X4 = 1`, or `X1 ≥ X2 ≥ X3 ≥ X4`, or `X1 ≤ X2 ≤ X3 ≤ X4`; else -1.
pub fn multitier(x: [i8; 4]) -> i8 {
    let [a, b, c, d] = x;
    if (c == 1 && d == 1) || (a >= b && b >= c && c >= d) || (a <= b && b <= c && c <= d) {
        1
    } else {
        -1
    }
}

/// `multitier` on the first four coordinates of a pattern.
pub fn multitier_pattern(p: &BitPattern) -> f64 {
    multitier([p.sign(0), p.sign(1), p.sign(2), p.sign(3)]) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// The 16 points of the 4-cube.
    Base,
    /// Five variables, the fifth fixed at +1.
    Constant,
    /// 100 variables: four informative, 96 uniform noise.
    Noise,
}

impl SynthKind {
    pub fn n(self) -> usize {
        match self {
            SynthKind::Base => 4,
            SynthKind::Constant => 5,
            SynthKind::Noise => 100,
        }
    }
}

/// Builds a benchmark dataset labeled by [`multitier`].
///
/// `Base` ignores `count` and `seed`. `Constant` cycles through the 16 cube
/// points for `count` records, so any multiple of 16 covers the cube evenly.
/// `Noise` draws `count` uniform patterns from `seed`.
pub fn gen_synth_dataset(kind: SynthKind, count: usize, seed: u64) -> Result<ActivationDataset> {
    let n = kind.n();
    let records: Vec<Record> = match kind {
        SynthKind::Base => (0..16).map(|x| BitPattern::from_index(4, x)).map(labeled).collect(),
        SynthKind::Constant => (0..count as u64)
            .map(|k| {
                let mut p = BitPattern::from_index(5, k % 16);
                p.set(4, true);
                labeled(p)
            })
            .collect(),
        SynthKind::Noise => {
            let mut rng = query_rng(seed, 0);
            (0..count)
                .map(|_| {
                    let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
                    labeled(BitPattern::from_bools(&bits))
                })
                .collect()
        }
    };
    ActivationDataset::new(n, records)
}

fn labeled(p: BitPattern) -> Record {
    let v = multitier_pattern(&p);
    Record::new(p, v)
}

/// Exact influences of the benchmark function over `n` variables: the multi-tier
/// values on the first four, 0 on the rest.
pub fn ground_truth_influence(n: usize) -> Result<ImportanceVector> {
    if n < 4 {
        return Err(invalid("the benchmark function needs at least 4 variables"));
    }
    let table = wht_exact(&truth_table(4, multitier_pattern))?;
    let mut values = vec![0.0; n];
    for (i, v) in values.iter_mut().enumerate().take(4) {
        *v = influence_exact(&table, i)?;
    }
    ImportanceVector::new(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl ImportanceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Numeric(format!("importance values must be finite and nonnegative, got {v}")));
        }
        Ok(ImportanceVector { values, normalized: false })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Divides by the sum of absolute values.
    pub fn normalize(&self) -> Result<Self> {
        let sum: f64 = self.values.iter().map(|v| v.abs()).sum();
        if sum <= 0.0 {
            return Err(Error::Numeric("cannot normalize an all-zero importance vector".into()));
        }
        Ok(ImportanceVector { values: self.values.iter().map(|v| v.abs() / sum).collect(), normalized: true })
    }
}

/// Total variation distance between the normalized vectors.
pub fn tv_distance(p: &ImportanceVector, q: &ImportanceVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: q.len() });
    }
    let (p, q) = (p.normalize()?, q.normalize()?);
    Ok(0.5 * p.values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

fn require_flips(oracle: &dyn PatternOracle, ds: &ActivationDataset) -> Result<()> {
    if !oracle.answers_off_distribution() {
        return Err(Error::ProjectionOnly);
    }
    if oracle.n() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), found: oracle.n() });
    }
    Ok(())
}

/// Mean over records of `|f(x) - f(x with bit i flipped)|`.
pub fn feature_ablation_importance(oracle: &dyn PatternOracle, ds: &ActivationDataset) -> Result<ImportanceVector> {
    require_flips(oracle, ds)?;
    let per_record: Vec<Vec<f64>> = ds
        .records()
        .par_iter()
        .map(|r| {
            let base = oracle.query(&r.pattern)?;
            (0..ds.n())
                .map(|i| Ok(r.weight * (base - oracle.query(&r.pattern.flipped(i))?).abs()))
                .collect()
        })
        .collect::<Result<_>>()?;
    ImportanceVector::new(column_means(&per_record, ds))
}

fn column_means(rows: &[Vec<f64>], ds: &ActivationDataset) -> Vec<f64> {
    let mut sums = vec![0.0; ds.n()];
    for row in rows {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums.iter().map(|s| s / ds.total_weight()).collect()
}

/// Marginal contributions along one permutation, starting from the all -1
/// baseline and switching coordinates to `x` in order. They sum to
/// `f(x) - f(baseline)`.
pub fn shapley_marginals(oracle: &dyn PatternOracle, x: &BitPattern, perm: &[usize]) -> Result<Vec<f64>> {
    let mut z = BitPattern::negative(x.n());
    let mut prev = oracle.query(&z)?;
    let mut out = vec![0.0; x.n()];
    for &i in perm {
        if x.bit(i) {
            z.set(i, true);
            let cur = oracle.query(&z)?;
            out[i] = cur - prev;
            prev = cur;
        }
    }
    Ok(out)
}

/// Monte Carlo Shapley values per record, averaged over `permutations` random
/// orders, then `|φ_i|` averaged over the records.
pub fn shapley_sampling_importance(
    oracle: &dyn PatternOracle,
    ds: &ActivationDataset,
    permutations: usize,
    seed: u64,
) -> Result<ImportanceVector> {
    require_flips(oracle, ds)?;
    if permutations == 0 {
        return Err(invalid("shapley sampling needs at least one permutation"));
    }
    let n = ds.n();
    let per_record: Vec<Vec<f64>> = ds
        .records()
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let mut rng = query_rng(seed, k as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut phi = vec![0.0; n];
            for _ in 0..permutations {
                perm.shuffle(&mut rng);
                for (p, m) in phi.iter_mut().zip(shapley_marginals(oracle, &r.pattern, &perm)?) {
                    *p += m;
                }
            }
            Ok(phi.iter().map(|p| r.weight * (p / permutations as f64).abs()).collect())
        })
        .collect::<Result<_>>()?;
    ImportanceVector::new(column_means(&per_record, ds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: String,
    pub setting: String,
    pub tv_distance: f64,
    /// Wall-clock seconds.
    pub runtime: f64,
}

/// With `include_runtime` false the runtime column is left blank, so the file
/// depends only on the seed.
pub fn write_scoreboard_csv<W: Write>(rows: &[ScoreRow], include_runtime: bool, mut sink: W) -> Result<()> {
    writeln!(sink, "method,setting,tv_distance,runtime")?;
    for r in rows {
        let runtime = if include_runtime { format!("{:.6}", r.runtime) } else { String::new() };
        writeln!(sink, "{},{},{},{runtime}", r.method, r.setting, r.tv_distance)?;
    }
    Ok(())
}
