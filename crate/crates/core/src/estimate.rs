//! Sampled bucket-weight estimation.
//!
//! The dataset estimator draws a record `x` weight-proportionally, draws an
//! independent partner `x'` from the records sharing `x`'s coordinates on `J`,
//! and averages `f(x) x^S · f(x') x'^S`. Its expectation is exactly
//! [`bucket_weight_exact`](crate::spectrum::bucket_weight_exact). Terms lie in
//! `[-M², M²]`, so Hoeffding gives the sample count in [`sample_size`].
//!
//! The query estimator keeps the `J` coordinates of a sampled record and
//! resamples the `I` coordinates uniformly, which needs an oracle that can be
//! evaluated off the dataset.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{BitPattern, SubsetMask};
use crate::dataset::{group_ids, ActivationDataset};
use crate::error::{invalid, Result};
use crate::oracle::PatternOracle;
use crate::spectrum::bucket_weight_exact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Additive error target.
    pub eta: f64,
    /// Failure probability.
    pub delta: f64,
    /// Declared bound on `|f|`; `None` uses the largest observed `|value|`.
    pub bound: Option<f64>,
    pub seed: u64,
    /// Fixed number of samples per estimate, overriding the Hoeffding count.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Use every record with exact in-group pairing instead of sampling.
    #[serde(default)]
    pub exhaustive: bool,
    /// Query estimator only: average the `I` coordinates exactly (2^|I| queries per
    /// sample) when `|I|` is at most this, instead of drawing a random pair.
    #[serde(default = "default_exact_inner")]
    pub exact_inner_max: usize,
}

fn default_exact_inner() -> usize {
    1
}

impl EstimatorConfig {
    pub fn new(eta: f64, delta: f64, seed: u64) -> Self {
        EstimatorConfig {
            eta,
            delta,
            bound: None,
            seed,
            samples: None,
            exhaustive: false,
            exact_inner_max: default_exact_inner(),
        }
    }

    pub fn exhaustive() -> Self {
        EstimatorConfig { exhaustive: true, ..Self::new(0.1, 0.05, 0) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if let Some(m) = self.bound {
            if !(m > 0.0 && m.is_finite()) {
                return Err(invalid(format!("bound must be positive, got {m}")));
            }
        }
        if self.samples == Some(0) {
            return Err(invalid("samples override must be positive"));
        }
        Ok(())
    }

    fn resolved_bound(&self, ds: &ActivationDataset) -> f64 {
        self.bound.unwrap_or_else(|| ds.max_abs_value()).max(f64::MIN_POSITIVE)
    }

    pub fn samples_for(&self, ds: &ActivationDataset) -> usize {
        self.samples.unwrap_or_else(|| sample_size(self.eta, self.delta, self.resolved_bound(ds)))
    }
}

/// `ceil(2 M⁴ ln(2/δ) / η²)`: Hoeffding's count for averaging terms in `[-M², M²]`.
pub fn sample_size(eta: f64, delta: f64, bound: f64) -> usize {
    let raw = 2.0 * bound.powi(4) * (2.0 / delta).ln() / (eta * eta);
    // absorb rounding noise from ln so exact integers are not bumped up
    ((raw * (1.0 - 1e-12)).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub samples_used: usize,
    /// Fraction of samples drawn from a group holding a single record.
    pub singleton_fraction: f64,
}

/// A counter-based stream: the same `(seed, query_id)` gives the same draws
/// whichever thread evaluates the query.
pub fn query_rng(seed: u64, query_id: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query_id);
    rng
}

/// Stable 64-bit id for a query described by a few integers and a mask.
pub fn query_id(tag: u64, k: usize, s: &SubsetMask) -> u64 {
    let mut h = splitmix(tag ^ 0x9e37_79b9_7f4a_7c15);
    h = splitmix(h ^ k as u64);
    for &w in s.words() {
        h = splitmix(h ^ w);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_bucket(ds: &ActivationDataset, s: &SubsetMask, i_mask: &SubsetMask) -> Result<()> {
    ds.check_mask(s)?;
    ds.check_mask(i_mask)?;
    if !s.is_subset_of(i_mask) {
        return Err(invalid(format!("S = {s:?} is not a subset of I = {i_mask:?}")));
    }
    Ok(())
}

pub fn bucket_weight_estimate(
    ds: &ActivationDataset,
    s: &SubsetMask,
    i_mask: &SubsetMask,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    bucket_weight_estimate_stream(ds, s, i_mask, cfg, 0)
}

/// Dataset estimator on the stream `query_id`.
pub fn bucket_weight_estimate_stream(
    ds: &ActivationDataset,
    s: &SubsetMask,
    i_mask: &SubsetMask,
    cfg: &EstimatorConfig,
    query_id: u64,
) -> Result<Estimate> {
    cfg.validate()?;
    check_bucket(ds, s, i_mask)?;
    let (ids, count) = group_ids(ds, &i_mask.complement());
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (r, &g) in ids.iter().enumerate() {
        members[g as usize].push(r);
    }
    let singleton_weight: f64 = members
        .iter()
        .filter(|m| m.len() == 1)
        .map(|m| ds.records()[m[0]].weight)
        .sum();

    if cfg.exhaustive {
        return Ok(Estimate {
            estimate: bucket_weight_exact(ds, s, i_mask)?,
            samples_used: ds.len(),
            singleton_fraction: singleton_weight / ds.total_weight(),
        });
    }

    let term = |r: usize| {
        let rec = &ds.records()[r];
        rec.value * rec.pattern.parity_unchecked(s) as f64
    };
    let all = WeightedIndex::new(ds.records().iter().map(|r| r.weight))
        .map_err(|e| invalid(format!("record weights: {e}")))?;
    let within: Vec<Option<WeightedIndex<f64>>> = members
        .iter()
        .map(|m| {
            (m.len() > 1).then(|| {
                WeightedIndex::new(m.iter().map(|&r| ds.records()[r].weight))
                    .expect("groups with sampled records carry weight")
            })
        })
        .collect();

    let samples = cfg.samples_for(ds);
    let mut rng = query_rng(cfg.seed, query_id);
    let mut sum = 0.0;
    let mut singletons = 0usize;
    for _ in 0..samples {
        let r = all.sample(&mut rng);
        let g = ids[r] as usize;
        let partner = match &within[g] {
            Some(dist) => members[g][dist.sample(&mut rng)],
            None => {
                singletons += 1;
                r
            }
        };
        sum += term(r) * term(partner);
    }
    Ok(Estimate {
        estimate: sum / samples as f64,
        samples_used: samples,
        singleton_fraction: singletons as f64 / samples as f64,
    })
}

/// Sampler of `F_S(z) = E_y f(y, z) y^S` terms: `z` from the records, `y` over `I`.
struct InnerSampler<'a> {
    oracle: &'a dyn PatternOracle,
    ds: &'a ActivationDataset,
    s: &'a SubsetMask,
    i_mask: &'a SubsetMask,
    i_vars: Vec<usize>,
    exact: bool,
}

impl<'a> InnerSampler<'a> {
    fn new(
        oracle: &'a dyn PatternOracle,
        ds: &'a ActivationDataset,
        s: &'a SubsetMask,
        i_mask: &'a SubsetMask,
        cfg: &EstimatorConfig,
    ) -> Result<Self> {
        check_bucket(ds, s, i_mask)?;
        if oracle.n() != ds.n() {
            return Err(crate::Error::DimensionMismatch { expected: ds.n(), found: oracle.n() });
        }
        let i_vars = i_mask.indices();
        let exact = i_vars.len() <= cfg.exact_inner_max.min(24);
        Ok(InnerSampler { oracle, ds, s, i_mask, i_vars, exact })
    }

    fn eval(&self, p: &BitPattern) -> Result<f64> {
        Ok(self.oracle.query(p)? * p.parity_unchecked(self.s) as f64)
    }

    fn random_completion(&self, z: &BitPattern, rng: &mut ChaCha8Rng) -> BitPattern {
        let bits: Vec<bool> = (0..self.ds.n()).map(|_| rng.gen()).collect();
        let mut p = z.clone();
        p.splice(&BitPattern::from_bools(&bits), self.i_mask);
        p
    }

    /// Exact `F_S(z)` by enumerating `{-1,+1}^I`.
    fn exact_inner(&self, z: &BitPattern) -> Result<f64> {
        let mut p = z.clone();
        let count = 1u64 << self.i_vars.len();
        let mut sum = 0.0;
        for y in 0..count {
            for (b, &v) in self.i_vars.iter().enumerate() {
                p.set(v, y >> b & 1 == 1);
            }
            sum += self.eval(&p)?;
        }
        Ok(sum / count as f64)
    }
}

/// Averages `term(z)` over the records: all of them, weighted, when the config is
/// exhaustive, otherwise over weight-proportional draws.
fn outer_average(
    ds: &ActivationDataset,
    cfg: &EstimatorConfig,
    query_id: u64,
    mut term: impl FnMut(&BitPattern, &mut ChaCha8Rng) -> Result<f64>,
) -> Result<(f64, usize)> {
    let mut rng = query_rng(cfg.seed, query_id);
    if cfg.exhaustive {
        let mut sum = 0.0;
        for r in ds.records() {
            if r.weight > 0.0 {
                sum += r.weight * term(&r.pattern, &mut rng)?;
            }
        }
        return Ok((sum / ds.total_weight(), ds.len()));
    }
    let all = WeightedIndex::new(ds.records().iter().map(|r| r.weight))
        .map_err(|e| invalid(format!("record weights: {e}")))?;
    let samples = cfg.samples_for(ds);
    let mut sum = 0.0;
    for _ in 0..samples {
        let z = &ds.records()[all.sample(&mut rng)].pattern;
        sum += term(z, &mut rng)?;
    }
    Ok((sum / samples as f64, samples))
}

/// Query estimator of the bucket weight `E_z[F_S(z)²]`.
pub fn query_bucket_weight_estimate(
    oracle: &dyn PatternOracle,
    ds: &ActivationDataset,
    s: &SubsetMask,
    i_mask: &SubsetMask,
    cfg: &EstimatorConfig,
    query_id: u64,
) -> Result<Estimate> {
    cfg.validate()?;
    let sampler = InnerSampler::new(oracle, ds, s, i_mask, cfg)?;
    let (estimate, samples_used) = outer_average(ds, cfg, query_id, |z, rng| {
        if sampler.exact {
            Ok(sampler.exact_inner(z)?.powi(2))
        } else {
            let a = sampler.random_completion(z, rng);
            let b = sampler.random_completion(z, rng);
            Ok(sampler.eval(&a)? * sampler.eval(&b)?)
        }
    })?;
    Ok(Estimate { estimate, samples_used, singleton_fraction: 0.0 })
}

/// Query estimator of the signed coefficient `E_z[F_S(z)]`, with `S ⊆ I`.
pub fn query_coefficient_estimate(
    oracle: &dyn PatternOracle,
    ds: &ActivationDataset,
    s: &SubsetMask,
    i_mask: &SubsetMask,
    cfg: &EstimatorConfig,
    query_id: u64,
) -> Result<f64> {
    cfg.validate()?;
    let sampler = InnerSampler::new(oracle, ds, s, i_mask, cfg)?;
    let (value, _) = outer_average(ds, cfg, query_id, |z, rng| {
        if sampler.exact {
            sampler.exact_inner(z)
        } else {
            sampler.eval(&sampler.random_completion(z, rng))
        }
    })?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Record;
    use crate::oracle::FnOracle;
    use crate::synth::multitier_pattern;
    use rand::SeedableRng;

    fn mask(n: usize, idx: &[usize]) -> SubsetMask {
        SubsetMask::from_indices(n, idx).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, count: usize) -> ActivationDataset {
        let records = (0..count)
            .map(|_| {
                let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
                Record::new(BitPattern::from_bools(&bits), rng.gen_range(-1.0..1.0))
            })
            .collect();
        ActivationDataset::new(n, records).unwrap()
    }

    #[test]
    fn sample_size_examples() {
        assert_eq!(sample_size(0.1, 0.05, 1.0), 738);
        let e2 = std::f64::consts::E.powi(2);
        assert_eq!(sample_size(2f64.sqrt(), 2.0 / e2, 1.0), 2);
        let a = sample_size(0.2, 0.01, 1.0) as f64;
        let b = sample_size(0.1, 0.01, 1.0) as f64;
        assert!((b / a - 4.0).abs() < 0.01);
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig::new(0.0, 0.1, 0).validate().is_err());
        assert!(EstimatorConfig::new(0.1, 1.0, 0).validate().is_err());
        assert!(EstimatorConfig::new(0.1, 0.5, 0).validate().is_ok());
    }

    #[test]
    fn exhaustive_equals_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_dataset(&mut rng, 6, 50);
        let s = mask(6, &[0, 2]);
        let i = mask(6, &[0, 1, 2]);
        let e = bucket_weight_estimate(&ds, &s, &i, &EstimatorConfig::exhaustive()).unwrap();
        assert_eq!(e.estimate, bucket_weight_exact(&ds, &s, &i).unwrap());
    }

    #[test]
    fn single_record() {
        let p: BitPattern = "0110".parse().unwrap();
        let ds = ActivationDataset::new(4, vec![Record::new(p, -1.5)]).unwrap();
        for i in [mask(4, &[]), mask(4, &[1, 3]), SubsetMask::full(4)] {
            let e = bucket_weight_estimate(&ds, &mask(4, &[]), &i, &EstimatorConfig::new(0.5, 0.5, 9))
                .unwrap();
            assert_eq!(e.estimate, 2.25);
        }
    }

    #[test]
    fn rejects_s_outside_i() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_dataset(&mut rng, 4, 5);
        let cfg = EstimatorConfig::new(0.1, 0.1, 0);
        assert!(bucket_weight_estimate(&ds, &mask(4, &[1]), &mask(4, &[2]), &cfg).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_dataset(&mut rng, 8, 200);
        let cfg = EstimatorConfig::new(0.1, 0.05, 77);
        let s = mask(8, &[1]);
        let i = mask(8, &[0, 1, 2, 3, 4]);
        let a = bucket_weight_estimate(&ds, &s, &i, &cfg).unwrap();
        let b = bucket_weight_estimate(&ds, &s, &i, &cfg).unwrap();
        assert_eq!(a, b);
        let c = bucket_weight_estimate(&ds, &s, &i, &EstimatorConfig { seed: 78, ..cfg }).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn multitier_influence_bucket_concentrates() {
        let cube = ActivationDataset::full_cube(4, multitier_pattern).unwrap();
        let s = mask(4, &[2]);
        let mut within = 0;
        for seed in 0..200 {
            let cfg = EstimatorConfig::new(0.05, 0.01, seed);
            let e = bucket_weight_estimate(&cube, &s, &s, &cfg).unwrap();
            if (e.estimate - 5.0 / 8.0).abs() <= 0.05 {
                within += 1;
            }
        }
        assert!(within >= 198, "{within}/200");
    }

    #[test]
    fn unbiased_on_paired_groups() {
        // every J-group has at least two records
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_dataset(&mut rng, 6, 30);
        let mut records = base.records().to_vec();
        for r in base.records() {
            let mut p = r.pattern.clone();
            p.flip(0);
            records.push(Record::new(p, rng.gen_range(-1.0..1.0)));
        }
        let ds = ActivationDataset::new(6, records).unwrap();
        let s = mask(6, &[0]);
        let i = mask(6, &[0]);
        let exact = bucket_weight_exact(&ds, &s, &i).unwrap();
        let seeds = 400;
        let eta = 0.1;
        let mean: f64 = (0..seeds)
            .map(|seed| {
                let cfg = EstimatorConfig { samples: Some(200), ..EstimatorConfig::new(eta, 0.05, seed) };
                bucket_weight_estimate(&ds, &s, &i, &cfg).unwrap().estimate
            })
            .sum::<f64>()
            / seeds as f64;
        assert!((mean - exact).abs() < 3.0 * eta / (seeds as f64).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn query_estimator_on_exact_function() {
        let cube = ActivationDataset::full_cube(4, multitier_pattern).unwrap();
        let oracle = FnOracle::new(4, multitier_pattern);
        let s = mask(4, &[2, 3]);
        // exact inner average: F_S(z) is constant, so the estimate is exact
        let cfg = EstimatorConfig { exact_inner_max: 4, samples: Some(10), ..EstimatorConfig::new(0.1, 0.1, 1) };
        let e = query_bucket_weight_estimate(&oracle, &cube, &s, &SubsetMask::full(4), &cfg, 0).unwrap();
        assert!((e.estimate - 25.0 / 64.0).abs() < 1e-12);
        let c = query_coefficient_estimate(&oracle, &cube, &s, &SubsetMask::full(4), &cfg, 0).unwrap();
        assert!((c.abs() - 5.0 / 8.0).abs() < 1e-12);
        // random pairs concentrate
        let cfg = EstimatorConfig { exact_inner_max: 0, ..EstimatorConfig::new(0.05, 0.01, 2) };
        let e = query_bucket_weight_estimate(&oracle, &cube, &s, &s, &cfg, 0).unwrap();
        let exact = bucket_weight_exact(&cube, &s, &s).unwrap();
        assert!((e.estimate - exact).abs() < 0.05);
    }
}
