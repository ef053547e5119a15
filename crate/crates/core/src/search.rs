//! Goldreich–Levin branch-and-bound over buckets with a redundancy filter.
//!
//! A bucket `(k, S)` stands for every subset `S ∪ T` with `T` drawn from the
//! variables not yet decided. Splitting on the next variable gives an exclude and
//! an include branch; branches whose weight falls below `τ²` are pruned. Before an
//! include branch is kept, the new variable is tested against the parities of `S`
//! on the dataset; a variable that is (close to) a function of `S` there would
//! only produce duplicate coefficients, so it is recorded and the branch dropped.
//!
//! Two evaluation modes exist. Dataset mode computes bucket weights from the
//! records alone (exactly, or with the sampled estimator). Query mode keeps the
//! undecided coordinates of sampled records and averages the decided ones through
//! a [`PatternOracle`], which prunes on sparse data where every restriction group
//! is a single record.
//!
//! Before the search, each variable's singleton bucket `({v}, {v})` is measured.
//! That weight bounds the squared coefficient of every subset containing `v`, so
//! variables below `τ²` are screened out and never split on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::SubsetMask;
use crate::dataset::{group_ids, ActivationDataset};
use crate::error::{invalid, Error, Result};
use crate::estimate::{
    bucket_weight_estimate_stream, query_bucket_weight_estimate, query_coefficient_estimate, query_id,
    EstimatorConfig,
};
use crate::oracle::PatternOracle;
use crate::spectrum::{bucket_weight_exact, projection_coefficient};

/// Slack when pruning on exactly aggregated weights, so rounding never prunes a
/// bucket sitting on the threshold.
const PRUNE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableOrder {
    #[default]
    Natural,
    /// Descending singleton bucket weight, ties by index.
    SingletonWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Acceptance threshold on the coefficient scale; weights compare against `τ²`.
    pub tau: f64,
    /// Redundancy threshold in `(0, 1]`.
    pub gamma: f64,
    /// `None` aggregates bucket weights exactly over the dataset. Query mode
    /// without a config averages over every record.
    #[serde(default)]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default)]
    pub order: VariableOrder,
    #[serde(default = "yes")]
    pub screen: bool,
    /// Upper limit on live buckets at any depth.
    #[serde(default = "default_max_buckets")]
    pub max_buckets: usize,
}

fn yes() -> bool {
    true
}

fn default_max_buckets() -> usize {
    1 << 20
}

impl SearchParams {
    pub fn new(tau: f64, gamma: f64) -> Self {
        SearchParams {
            tau,
            gamma,
            estimator: None,
            order: VariableOrder::Natural,
            screen: true,
            max_buckets: default_max_buckets(),
        }
    }

    /// Parameters for a given `τ²`.
    pub fn with_tau_sq(tau_sq: f64, gamma: f64) -> Self {
        Self::new(tau_sq.sqrt(), gamma)
    }

    pub fn tau_sq(&self) -> f64 {
        self.tau * self.tau
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0,1], got {}", self.gamma)));
        }
        if self.max_buckets == 0 {
            return Err(invalid("max_buckets must be positive"));
        }
        if let Some(cfg) = &self.estimator {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// A search node: variables `order[..k]` are decided and `s` holds the included ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub k: usize,
    pub s: SubsetMask,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedSubset {
    pub mask: SubsetMask,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyEntry {
    pub variable: usize,
    pub witness_mask: SubsetMask,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub bucket_evaluations: u64,
    pub redundancy_checks: u64,
    pub peak_live_buckets: usize,
    /// Largest fraction of sampled pairs that came from single-record groups.
    pub max_singleton_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n: usize,
    pub accepted: Vec<AcceptedSubset>,
    pub redundancy: Vec<RedundancyEntry>,
    /// Variables skipped because their singleton weight is below `τ²`.
    pub screened: Vec<usize>,
    pub total_weight: f64,
    pub residual: f64,
    pub params: SearchParams,
    pub order: Vec<usize>,
    pub stats: SearchStats,
}

impl SpectrumReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Variables recorded as constant on the dataset.
    pub fn constant_variables(&self) -> Vec<usize> {
        self.redundancy
            .iter()
            .filter(|e| e.witness_mask.is_empty())
            .map(|e| e.variable)
            .collect()
    }
}

/// `Σ_{T⊆A} (E_D[x_i x^T])²`, how well `x_i` is explained by parities of `A` on the data.
///
/// Computed exactly for any `|A|` through the grouping identity
/// `Σ_T (E_D[x_i x^T])² = 2^{|A|} Σ_g P_g² m_g²`, where `g` ranges over records
/// agreeing on `A`, `P_g` is the group's weight share and `m_g` its mean of `x_i`.
pub fn redundancy_score(ds: &ActivationDataset, i: usize, a: &SubsetMask) -> Result<f64> {
    ds.check_mask(a)?;
    if i >= ds.n() {
        return Err(Error::IndexOutOfRange { index: i, n: ds.n() });
    }
    if a.contains(i) {
        return Err(invalid(format!("variable {i} belongs to the witness set {a:?}")));
    }
    let (ids, count) = group_ids(ds, a);
    let mut signed = vec![0.0; count];
    for (r, &g) in ds.records().iter().zip(&ids) {
        signed[g as usize] += r.weight * r.pattern.sign(i) as f64;
    }
    // P_g m_g is the group's weighted sum of x_i over the total weight
    let total = ds.total_weight();
    let sum: f64 = signed.iter().map(|s| (s / total).powi(2)).sum();
    Ok((a.len() as f64).exp2() * sum)
}

enum Evaluator<'a> {
    Data { ds: &'a ActivationDataset, cfg: Option<&'a EstimatorConfig> },
    Query { ds: &'a ActivationDataset, oracle: &'a dyn PatternOracle, cfg: EstimatorConfig },
}

const TAG_WEIGHT: u64 = 1;
const TAG_COEFF: u64 = 2;
const TAG_SCREEN: u64 = 3;

impl Evaluator<'_> {
    fn ds(&self) -> &ActivationDataset {
        match self {
            Evaluator::Data { ds, .. } | Evaluator::Query { ds, .. } => ds,
        }
    }

    /// Weight of the bucket `(S, I)` and its singleton fraction.
    fn weight(&self, s: &SubsetMask, i: &SubsetMask, qid: u64) -> Result<(f64, f64)> {
        match self {
            Evaluator::Data { ds, cfg: None } => Ok((bucket_weight_exact(ds, s, i)?, 0.0)),
            Evaluator::Data { ds, cfg: Some(cfg) } => {
                let e = bucket_weight_estimate_stream(ds, s, i, cfg, qid)?;
                Ok((e.estimate, e.singleton_fraction))
            }
            Evaluator::Query { ds, oracle, cfg } => {
                let e = query_bucket_weight_estimate(*oracle, ds, s, i, cfg, qid)?;
                Ok((e.estimate, 0.0))
            }
        }
    }

    fn coefficient(&self, s: &SubsetMask, i: &SubsetMask, qid: u64) -> Result<f64> {
        match self {
            Evaluator::Data { ds, .. } => Ok(projection_coefficient(ds, s)?.value),
            Evaluator::Query { ds, oracle, cfg } => query_coefficient_estimate(*oracle, ds, s, i, cfg, qid),
        }
    }

    fn exact(&self) -> bool {
        matches!(self, Evaluator::Data { cfg: None, .. })
            || matches!(self, Evaluator::Query { cfg, .. } if cfg.exhaustive)
    }
}

/// Dataset-mode search.
pub fn actspec_search(ds: &ActivationDataset, params: &SearchParams) -> Result<SpectrumReport> {
    params.validate()?;
    run(&Evaluator::Data { ds, cfg: params.estimator.as_ref() }, params)
}

/// Query-mode search: the records supply the undecided coordinates and `oracle`
/// is evaluated with the decided ones resampled.
pub fn actspec_search_with_oracle(
    ds: &ActivationDataset,
    oracle: &dyn PatternOracle,
    params: &SearchParams,
) -> Result<SpectrumReport> {
    params.validate()?;
    if !oracle.answers_off_distribution() {
        return Err(Error::ProjectionOnly);
    }
    if oracle.n() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), found: oracle.n() });
    }
    let cfg = params.estimator.clone().unwrap_or_else(EstimatorConfig::exhaustive);
    run(&Evaluator::Query { ds, oracle, cfg }, params)
}

struct Expansion {
    children: Vec<Bucket>,
    redundancy: Option<RedundancyEntry>,
    evaluations: u64,
    checks: u64,
    singleton_fraction: f64,
}

fn run(ev: &Evaluator<'_>, params: &SearchParams) -> Result<SpectrumReport> {
    let ds = ev.ds();
    let n = ds.n();
    let tau_sq = params.tau_sq();
    let slack = if ev.exact() { PRUNE_SLACK } else { 0.0 };
    let mut stats = SearchStats::default();

    let empty = SubsetMask::empty(n);
    let (total_weight, _) = ev.weight(&empty, &empty, query_id(TAG_WEIGHT, 0, &empty))?;
    stats.bucket_evaluations += 1;

    let need_singletons = params.screen || params.order == VariableOrder::SingletonWeight;
    let singleton: Vec<f64> = if need_singletons {
        (0..n)
            .into_par_iter()
            .map(|v| {
                let m = SubsetMask::empty(n).with(v);
                ev.weight(&m, &m, query_id(TAG_SCREEN, v, &m)).map(|w| w.0)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    stats.bucket_evaluations += singleton.len() as u64;
    let screened_flags: Vec<bool> =
        (0..n).map(|v| params.screen && singleton[v] + slack < tau_sq).collect();

    let mut order: Vec<usize> = (0..n).collect();
    if params.order == VariableOrder::SingletonWeight {
        order.sort_by(|&a, &b| singleton[b].total_cmp(&singleton[a]).then(a.cmp(&b)));
    }

    let mut live = if total_weight + slack >= tau_sq {
        vec![Bucket { k: 0, s: empty.clone(), weight: total_weight }]
    } else {
        Vec::new()
    };
    let mut decided = SubsetMask::empty(n);
    let mut redundancy: Vec<RedundancyEntry> = Vec::new();
    stats.peak_live_buckets = live.len();

    for (k, &v) in order.iter().enumerate() {
        if live.is_empty() {
            break;
        }
        if screened_flags[v] {
            for b in &mut live {
                b.k = k + 1;
            }
            continue;
        }
        let next = decided.with(v);
        let expansions: Vec<Expansion> = live
            .par_iter()
            .map(|b| expand(ev, b, v, k, &next, tau_sq, slack, params.gamma))
            .collect::<Result<_>>()?;
        live = Vec::with_capacity(expansions.len() * 2);
        for e in expansions {
            stats.bucket_evaluations += e.evaluations;
            stats.redundancy_checks += e.checks;
            stats.max_singleton_fraction = stats.max_singleton_fraction.max(e.singleton_fraction);
            live.extend(e.children);
            if let Some(entry) = e.redundancy {
                push_unique(&mut redundancy, entry);
            }
        }
        if live.len() > params.max_buckets {
            return Err(Error::BudgetExceeded(format!(
                "{} live buckets after deciding {} variables (limit {})",
                live.len(),
                k + 1,
                params.max_buckets
            )));
        }
        stats.peak_live_buckets = stats.peak_live_buckets.max(live.len());
        decided = next;
    }

    let leaves: Vec<AcceptedSubset> = live
        .par_iter()
        .map(|b| {
            let c = ev.coefficient(&b.s, &decided, query_id(TAG_COEFF, n, &b.s))?;
            Ok(AcceptedSubset { mask: b.s.clone(), coefficient: c })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut leaves: Vec<AcceptedSubset> =
        leaves.into_iter().filter(|a| a.coefficient * a.coefficient >= tau_sq).collect();
    leaves.sort_by(|a, b| a.mask.cmp_minimal(&b.mask));

    let mut accepted: Vec<AcceptedSubset> = Vec::new();
    for leaf in leaves {
        match duplicate_of(ds, &leaf.mask, &accepted, params.gamma)? {
            Some(entry) => push_unique(&mut redundancy, entry),
            None => accepted.push(leaf),
        }
    }

    let explained: f64 = accepted.iter().map(|a| a.coefficient * a.coefficient).sum();
    Ok(SpectrumReport {
        n,
        accepted,
        redundancy,
        screened: (0..n).filter(|&v| screened_flags[v]).collect(),
        total_weight,
        residual: total_weight - explained,
        params: params.clone(),
        order,
        stats,
    })
}

#[allow(clippy::too_many_arguments)]
fn expand(
    ev: &Evaluator<'_>,
    b: &Bucket,
    v: usize,
    k: usize,
    next: &SubsetMask,
    tau_sq: f64,
    slack: f64,
    gamma: f64,
) -> Result<Expansion> {
    let mut out = Expansion {
        children: Vec::with_capacity(2),
        redundancy: None,
        evaluations: 2,
        checks: 0,
        singleton_fraction: 0.0,
    };
    let (w_out, f_out) = ev.weight(&b.s, next, query_id(TAG_WEIGHT, k + 1, &b.s))?;
    let with_v = b.s.with(v);
    let (w_in, f_in) = ev.weight(&with_v, next, query_id(TAG_WEIGHT, k + 1, &with_v))?;
    out.singleton_fraction = f_out.max(f_in);
    if w_out + slack >= tau_sq {
        out.children.push(Bucket { k: k + 1, s: b.s.clone(), weight: w_out });
    }
    if w_in + slack >= tau_sq {
        out.checks = 1;
        let ds = ev.ds();
        let score = redundancy_score(ds, v, &b.s)?;
        if score > gamma {
            let constant = redundancy_score(ds, v, &SubsetMask::empty(ds.n()))?;
            out.redundancy = Some(if constant > gamma {
                RedundancyEntry { variable: v, witness_mask: SubsetMask::empty(ds.n()), score: constant }
            } else {
                RedundancyEntry { variable: v, witness_mask: b.s.clone(), score }
            });
        } else {
            out.children.push(Bucket { k: k + 1, s: with_v, weight: w_in });
        }
    }
    Ok(out)
}

/// A leaf duplicates an accepted subset `A` when `x^{U△A}` is nearly constant on
/// the data, so `x^U` and `x^A` carry the same signal there.
fn duplicate_of(
    ds: &ActivationDataset,
    u: &SubsetMask,
    accepted: &[AcceptedSubset],
    gamma: f64,
) -> Result<Option<RedundancyEntry>> {
    for a in accepted {
        let d = u.symmetric_difference(&a.mask);
        if ds.parity_mean(&d).powi(2) > gamma {
            let v = d.iter().last().expect("accepted masks are distinct");
            let mut witness = d;
            witness.remove(v);
            let score = redundancy_score(ds, v, &witness)?;
            return Ok(Some(RedundancyEntry { variable: v, witness_mask: witness, score }));
        }
    }
    Ok(None)
}

fn push_unique(list: &mut Vec<RedundancyEntry>, entry: RedundancyEntry) {
    if !list
        .iter()
        .any(|e| e.variable == entry.variable && e.witness_mask == entry.witness_mask)
    {
        list.push(entry);
    }
}

/// Searches for a `τ` returning about `k` subsets: the largest `τ` (to a relative
/// resolution of 1e-3) whose report has at least `k` accepted subsets, or the
/// smallest tried when none does.
pub fn top_k_search(
    ds: &ActivationDataset,
    oracle: Option<&dyn PatternOracle>,
    params: &SearchParams,
    k: usize,
) -> Result<SpectrumReport> {
    if k == 0 {
        return Err(invalid("top-k mode needs k >= 1"));
    }
    let search = |tau: f64| {
        let p = SearchParams { tau, ..params.clone() };
        match oracle {
            Some(o) => actspec_search_with_oracle(ds, o, &p),
            None => actspec_search(ds, &p),
        }
    };
    let scale = (ds.mean(|r| r.value * r.value)).sqrt().max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = ((scale * 1e-4).ln(), (scale * 1.000_001).ln());
    let mut best = search(lo.exp())?;
    if best.accepted.len() < k {
        return Ok(best);
    }
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        let report = search(mid.exp())?;
        if report.accepted.len() >= k {
            lo = mid;
            best = report;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEstimate {
    pub values: Vec<f64>,
    /// Set when the residual came out negative beyond the estimation slack.
    pub residual_clamped: bool,
}

/// Influence from a report: `Σ_{accepted S ∋ i} c(S)² + residual/2` for each
/// variable. Variables recorded as constant, and screened variables, get no
/// share of the residual.
pub fn influence_estimate(report: &SpectrumReport, total_weight: f64) -> InfluenceEstimate {
    let n = report.n;
    let mut values = vec![0.0; n];
    let mut explained = 0.0;
    for a in &report.accepted {
        let c2 = a.coefficient * a.coefficient;
        explained += c2;
        for i in a.mask.iter() {
            values[i] += c2;
        }
    }
    let mut residual = total_weight - explained;
    let slack = report.params.estimator.as_ref().map_or(1e-9, |c| c.eta) * report.accepted.len().max(1) as f64;
    let mut residual_clamped = false;
    if residual < 0.0 {
        if residual < -slack {
            log::warn!("negative residual {residual} clamped to 0");
            residual_clamped = true;
        }
        residual = 0.0;
    }
    let mut excluded = vec![false; n];
    for v in report.constant_variables().into_iter().chain(report.screened.iter().copied()) {
        excluded[v] = true;
    }
    for (i, value) in values.iter_mut().enumerate() {
        if excluded[i] {
            continue;
        }
        *value += residual / 2.0;
    }
    for v in report.constant_variables() {
        values[v] = 0.0;
    }
    InfluenceEstimate { values, residual_clamped }
}
