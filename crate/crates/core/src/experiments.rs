//! End-to-end pipelines: the synthetic attribution benchmark and the MNIST
//! dropout sweep.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitPattern;
use crate::dataset::ActivationDataset;
use crate::error::{invalid, Error, Result};
use crate::estimate::EstimatorConfig;
use crate::mnist::{ImageSet, LabelFilter};
use crate::nn::{build_multitier_net, extract_activation_dataset, train_mlp, Mlp, Selector, SubnetOracle, TrainConfig};
use crate::oracle::{FnOracle, PatternOracle};
use crate::search::{actspec_search, actspec_search_with_oracle, influence_estimate, SearchParams, SpectrumReport};
use crate::synth::{
    feature_ablation_importance, gen_synth_dataset, ground_truth_influence, multitier_pattern,
    shapley_sampling_importance, tv_distance, ImportanceVector, ScoreRow, SynthKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Hardcoded,
    Learned,
    Constant,
    Noise1000,
    Noise50,
}

impl Setting {
    pub const ALL: [Setting; 5] =
        [Setting::Hardcoded, Setting::Learned, Setting::Constant, Setting::Noise1000, Setting::Noise50];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Hardcoded => "hardcoded",
            Setting::Learned => "learned",
            Setting::Constant => "constant",
            Setting::Noise1000 => "noise1000",
            Setting::Noise50 => "noise50",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown setting {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// `τ²` for every setting.
    pub tau_sq: f64,
    pub gamma: f64,
    /// Estimator for the noise settings (query mode over sampled records).
    pub estimator: EstimatorConfig,
    /// Network trained for the learned setting.
    pub train: TrainConfig,
    pub shapley_permutations: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            tau_sq: 0.1,
            gamma: 0.5,
            estimator: EstimatorConfig { exact_inner_max: 4, ..EstimatorConfig::new(0.05, 0.05, 0) },
            train: learned_multitier_config(0),
            shapley_permutations: 20,
            seed: 0,
        }
    }
}

/// Three-layer network settings that fit the 16 multi-tier points to ~1e-26 MSE.
pub fn learned_multitier_config(seed: u64) -> TrainConfig {
    TrainConfig {
        sizes: vec![4, 32, 32, 1],
        epochs: 20_000,
        learning_rate: 0.02,
        momentum: 0.9,
        dropout: 0.0,
        seed,
        target_mse: Some(1e-24),
    }
}

/// The function under study for one setting, with the dataset ActSpec reads.
pub struct Prepared {
    pub dataset: ActivationDataset,
    pub oracle: Box<dyn PatternOracle>,
    /// Whether ActSpec runs in query mode (sparse data) or on the dataset alone.
    pub query_mode: bool,
    pub train_mse: Option<f64>,
}

fn net_oracle(net: Mlp) -> Box<dyn PatternOracle> {
    Box::new(FnOracle::new(4, move |p: &BitPattern| net.forward(&p.signs()).expect("4 sign inputs")[0]))
}

pub fn prepare(setting: Setting, cfg: &BenchConfig, seed: u64) -> Result<Prepared> {
    let valued = |net: &Mlp| {
        ActivationDataset::full_cube(4, |p| net.forward(&p.signs()).expect("4 sign inputs")[0])
    };
    Ok(match setting {
        Setting::Hardcoded => {
            let net = build_multitier_net();
            Prepared { dataset: valued(&net)?, oracle: net_oracle(net), query_mode: false, train_mse: None }
        }
        Setting::Learned => {
            let base = gen_synth_dataset(SynthKind::Base, 16, 0)?;
            let xs: Vec<Vec<f64>> = base.records().iter().map(|r| r.pattern.signs()).collect();
            let ts: Vec<Vec<f64>> = base.records().iter().map(|r| vec![r.value]).collect();
            let (net, mse) = train_mlp(&xs, &ts, &cfg.train)?;
            log::info!("learned multi-tier network: training MSE {mse:e}");
            Prepared { dataset: valued(&net)?, oracle: net_oracle(net), query_mode: false, train_mse: Some(mse) }
        }
        Setting::Constant => Prepared {
            dataset: gen_synth_dataset(SynthKind::Constant, 16, seed)?,
            oracle: Box::new(FnOracle::new(5, multitier_pattern)),
            query_mode: false,
            train_mse: None,
        },
        Setting::Noise1000 | Setting::Noise50 => {
            let count = if setting == Setting::Noise1000 { 1000 } else { 50 };
            Prepared {
                dataset: gen_synth_dataset(SynthKind::Noise, count, seed)?,
                oracle: Box::new(FnOracle::new(100, multitier_pattern)),
                query_mode: true,
                train_mse: None,
            }
        }
    })
}

/// ActSpec's report and influence vector for a prepared setting.
pub fn actspec_influence(p: &Prepared, cfg: &BenchConfig, seed: u64) -> Result<(SpectrumReport, ImportanceVector)> {
    let mut params = SearchParams::with_tau_sq(cfg.tau_sq, cfg.gamma);
    let report = if p.query_mode {
        params.estimator = Some(EstimatorConfig { seed, ..cfg.estimator.clone() });
        actspec_search_with_oracle(&p.dataset, p.oracle.as_ref(), &params)?
    } else {
        actspec_search(&p.dataset, &params)?
    };
    let inf = influence_estimate(&report, report.total_weight);
    Ok((report, ImportanceVector::new(inf.values)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ActSpec,
    FeatureAblation,
    ShapleySampling,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ActSpec, Method::FeatureAblation, Method::ShapleySampling];

    pub fn name(self) -> &'static str {
        match self {
            Method::ActSpec => "actspec",
            Method::FeatureAblation => "feature_ablation",
            Method::ShapleySampling => "shapley_sampling",
        }
    }
}

/// TV distance from the ground-truth influence for one method, setting and seed.
pub fn score(method: Method, setting: Setting, cfg: &BenchConfig, seed: u64) -> Result<ScoreRow> {
    let p = prepare(setting, cfg, seed)?;
    let start = Instant::now();
    let importance = match method {
        Method::ActSpec => actspec_influence(&p, cfg, seed)?.1,
        Method::FeatureAblation => feature_ablation_importance(p.oracle.as_ref(), &p.dataset)?,
        Method::ShapleySampling => {
            shapley_sampling_importance(p.oracle.as_ref(), &p.dataset, cfg.shapley_permutations, seed)?
        }
    };
    let runtime = start.elapsed().as_secs_f64();
    let truth = ground_truth_influence(p.dataset.n())?;
    Ok(ScoreRow {
        method: method.name().into(),
        setting: setting.name().into(),
        tv_distance: tv_distance(&importance, &truth)?,
        runtime,
    })
}

/// Every method on every requested setting, in (setting, method) order.
pub fn run_synth_bench(settings: &[Setting], cfg: &BenchConfig) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::new();
    for &setting in settings {
        for method in Method::ALL {
            rows.push(score(method, setting, cfg, cfg.seed)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub digits: (u8, u8),
    /// Hidden widths of the classifier.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Layer analyzed (1 is the first hidden layer).
    pub layer: usize,
    pub search: SearchParams,
    /// When set, `τ²` is this fraction of each layer dataset's mean squared value
    /// and `search.tau` is ignored, so nets with different output scales are
    /// cut at the same relative level.
    pub tau_sq_fraction: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let mut search = SearchParams::with_tau_sq(0.01, 0.5);
        search.estimator = Some(EstimatorConfig { exhaustive: true, ..EstimatorConfig::new(0.1, 0.05, 0) });
        SweepConfig {
            digits: (1, 7),
            hidden: vec![64, 32],
            epochs: 200,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
            layer: 1,
            search,
            tau_sq_fraction: Some(0.01),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub mean_size: f64,
    pub redundancy_count: usize,
    pub accepted_count: usize,
    pub train_mse: f64,
    /// Failure message when this rate could not be run.
    pub error: Option<String>,
}

/// Trains a two-class classifier on `images` (binarized, one-hot MSE targets).
pub fn train_digit_classifier(images: &ImageSet, cfg: &SweepConfig, dropout: f64) -> Result<(Mlp, f64)> {
    let (a, _) = cfg.digits;
    let xs = images.binary_inputs();
    let ts: Vec<Vec<f64>> =
        images.labels.iter().map(|&l| if l == a { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
    let mut sizes = vec![crate::mnist::PIXELS];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let train = TrainConfig {
        sizes,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        dropout,
        seed: cfg.seed,
        target_mse: None,
    };
    train_mlp(&xs, &ts, &train)
}

/// ActSpec on a classifier's layer in promote mode, valued by the logit difference.
/// With `tau_sq_fraction` set, `τ²` is that fraction of the mean squared value.
pub fn analyze_layer(
    net: Mlp,
    layer: usize,
    inputs: &[Vec<f64>],
    params: &SearchParams,
    tau_sq_fraction: Option<f64>,
) -> Result<SpectrumReport> {
    let mut oracle = SubnetOracle::new(net, layer, Selector::LogitDiff(0, 1))?;
    oracle.fit_stats(inputs)?;
    let ds = extract_activation_dataset(&oracle, inputs)?;
    let mut params = params.clone();
    if let Some(frac) = tau_sq_fraction {
        params.tau = (frac * ds.mean(|r| r.value * r.value)).sqrt();
    }
    actspec_search_with_oracle(&ds, &oracle, &params)
}

/// Mean cardinality of the non-empty accepted subsets; 0 when there are none.
/// The empty set only carries the mean and says nothing about interactions.
pub fn mean_subset_size(report: &SpectrumReport) -> f64 {
    let sizes: Vec<usize> = report.accepted.iter().map(|a| a.mask.len()).filter(|&k| k > 0).collect();
    if sizes.is_empty() {
        return 0.0;
    }
    sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
}

/// One row per rate. Rates run in parallel; a failing rate is recorded in its row.
pub fn run_dropout_sweep(images: &ImageSet, rates: &[f64], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if let Some(r) = rates.iter().find(|r| !(0.0..=0.9).contains(*r)) {
        return Err(invalid(format!("dropout rate {r} outside [0, 0.9]")));
    }
    let images = images.filter(LabelFilter::Pair(cfg.digits.0, cfg.digits.1));
    if images.is_empty() {
        return Err(invalid("no images for the selected digits"));
    }
    let inputs = images.binary_inputs();
    Ok(rates
        .par_iter()
        .map(|&rate| {
            let run = || -> Result<SweepRow> {
                let (net, mse) = train_digit_classifier(&images, cfg, rate)?;
                let report = analyze_layer(net, cfg.layer, &inputs, &cfg.search, cfg.tau_sq_fraction)?;
                Ok(SweepRow {
                    rate,
                    mean_size: mean_subset_size(&report),
                    redundancy_count: report.redundancy.len(),
                    accepted_count: report.accepted.len(),
                    train_mse: mse,
                    error: None,
                })
            };
            run().unwrap_or_else(|e| SweepRow {
                rate,
                mean_size: f64::NAN,
                redundancy_count: 0,
                accepted_count: 0,
                train_mse: f64::NAN,
                error: Some(e.to_string()),
            })
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut sink: W) -> Result<()> {
    writeln!(sink, "rate,mean_size,redundancy_count,accepted_count,train_mse,error")?;
    for r in rows {
        writeln!(
            sink,
            "{},{},{},{},{},{}",
            r.rate,
            r.mean_size,
            r.redundancy_count,
            r.accepted_count,
            r.train_mse,
            r.error.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}
