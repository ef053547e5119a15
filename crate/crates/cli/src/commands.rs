use std::cell::Cell;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use actspec::abf::{read_abf, read_abf_jsonl, write_abf};
use actspec::estimate::EstimatorConfig;
use actspec::experiments::{
    run_dropout_sweep, run_synth_bench, train_digit_classifier, write_sweep_csv, BenchConfig, Setting,
    SweepConfig,
};
use actspec::export::{export_hypergraph, heatmap};
use actspec::mnist::{load_idx_files, to_input_dataset, ImageSet, LabelFilter, ValueSource, PIXELS, SIDE};
use actspec::nn::{build_cancellation_net, intervene_flip_rate, Mlp, Selector, SubnetOracle};
use actspec::search::{
    actspec_search, actspec_search_with_oracle, influence_estimate, top_k_search, SearchParams, SpectrumReport,
    VariableOrder,
};
use actspec::spectrum::{truth_table, wht_exact};
use actspec::synth::{multitier_pattern, write_scoreboard_csv, ImportanceVector};
use actspec::{ActivationDataset, FnOracle, PatternOracle, ProjectionOracle, SubsetMask};

use crate::config::{Aggregation, ExportKnobs, MnistKnobs, Mode, Order, SearchKnobs, SettingsKnobs, TrainKnobs};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Functions that can stand in for a dataset or answer off-data queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Builtin {
    /// The four-variable multi-tier function, read from the first four coordinates
    Multitier,
}

impl Builtin {
    fn oracle(self, n: usize) -> Result<FnOracle<fn(&actspec::BitPattern) -> f64>> {
        match self {
            Builtin::Multitier if n < 4 => {
                Err(actspec::Error::DimensionMismatch { expected: 4, found: n }.into())
            }
            Builtin::Multitier => Ok(FnOracle::new(n, multitier_pattern as fn(&actspec::BitPattern) -> f64)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Pixels,
    Layer,
}

fn read_dataset(path: &Path) -> Result<ActivationDataset> {
    let file = File::open(path)?;
    let ds = if path.extension().is_some_and(|e| e == "jsonl") {
        read_abf_jsonl(BufReader::new(file))?
    } else {
        read_abf(BufReader::new(file))?
    };
    Ok(ds)
}

fn read_report(path: &Path) -> Result<SpectrumReport> {
    Ok(SpectrumReport::from_json(&std::fs::read_to_string(path)?)?)
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> actspec::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut sink = BufWriter::new(File::create(p)?);
            write(&mut sink)?;
            sink.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut sink = stdout.lock();
            write(&mut sink)?;
            sink.flush()?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    emit(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Search parameters from the merged knobs. Sampled aggregation needs a seed.
pub fn search_params(k: &SearchKnobs, seed: Option<u64>) -> Result<SearchParams> {
    let tau = match (k.tau_sq, k.tau) {
        (Some(t2), _) => t2.sqrt(),
        (None, Some(t)) => t,
        (None, None) => 0.1f64.sqrt(),
    };
    let mut params = SearchParams::new(tau, k.gamma.unwrap_or(0.5));
    let inner = k.exact_inner_max;
    params.estimator = match k.aggregation.unwrap_or(Aggregation::Exact) {
        Aggregation::Exact => inner.map(|m| EstimatorConfig { exact_inner_max: m, ..EstimatorConfig::exhaustive() }),
        Aggregation::Sampled => {
            let seed = seed.ok_or_else(|| CliError::Config("sampled aggregation needs --seed".into()))?;
            let mut cfg = EstimatorConfig::new(k.eta.unwrap_or(0.1), k.delta.unwrap_or(0.05), seed);
            cfg.bound = k.bound;
            cfg.samples = k.samples;
            if let Some(m) = inner {
                cfg.exact_inner_max = m;
            }
            Some(cfg)
        }
    };
    params.order = match k.order.unwrap_or(Order::Natural) {
        Order::Natural => VariableOrder::Natural,
        Order::SingletonWeight => VariableOrder::SingletonWeight,
    };
    params.screen = k.screen.unwrap_or(true);
    if let Some(m) = k.max_buckets {
        params.max_buckets = m;
    }
    params.validate()?;
    Ok(params)
}

fn search(
    ds: &ActivationDataset,
    oracle: Option<&dyn PatternOracle>,
    params: &SearchParams,
    target: Option<usize>,
) -> Result<SpectrumReport> {
    Ok(match (target, oracle) {
        (Some(k), _) => top_k_search(ds, oracle, params, k)?,
        (None, Some(o)) => actspec_search_with_oracle(ds, o, params)?,
        (None, None) => actspec_search(ds, params)?,
    })
}

pub fn wht(input: Option<&Path>, function: Option<Builtin>, out: Option<&Path>) -> Result<()> {
    let values = match (input, function) {
        (Some(path), _) => {
            let ds = read_dataset(path)?;
            let proj = ProjectionOracle::new(&ds);
            let missing = Cell::new(0usize);
            let values = truth_table(ds.n(), |p| {
                if !proj.contains(p) {
                    missing.set(missing.get() + 1);
                }
                proj.query(p).unwrap_or(0.0)
            });
            if missing.get() > 0 {
                return Err(actspec::Error::Format(format!(
                    "{} of {} cube points are missing from {}",
                    missing.get(),
                    values.len(),
                    path.display()
                ))
                .into());
            }
            values
        }
        (None, Some(Builtin::Multitier)) => truth_table(4, multitier_pattern),
        (None, None) => return Err(CliError::Config("wht needs --input or --function".into())),
    };
    let table = wht_exact(&values)?;
    emit(out, |w| table.write_csv(w))
}

pub fn analyze(
    input: &Path,
    oracle: Option<Builtin>,
    knobs: &SearchKnobs,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let ds = read_dataset(input)?;
    let params = search_params(knobs, seed)?;
    let report = match oracle {
        Some(b) => {
            let o = b.oracle(ds.n())?;
            search(&ds, Some(&o), &params, knobs.target_subsets)?
        }
        None => search(&ds, None, &params, knobs.target_subsets)?,
    };
    log::info!("{} subsets accepted, {} redundancy entries", report.accepted.len(), report.redundancy.len());
    emit(out, |w| {
        w.write_all(report.to_json()?.as_bytes())?;
        writeln!(w)?;
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct InfluenceOutput {
    n: usize,
    values: Vec<f64>,
    /// Values scaled to sum to 1 (all zero when every value is zero).
    normalized: Vec<f64>,
    residual_clamped: bool,
}

pub fn influence(report: &Path, out: Option<&Path>) -> Result<()> {
    let report = read_report(report)?;
    let inf = influence_estimate(&report, report.total_weight);
    let normalized = ImportanceVector::new(inf.values.clone())?.normalize()?.values;
    emit_json(out, &InfluenceOutput { n: report.n, values: inf.values, normalized, residual_clamped: inf.residual_clamped })
}

pub fn synth_bench(
    knobs: &SearchKnobs,
    settings: &SettingsKnobs,
    seed: Option<u64>,
    include_runtime: bool,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = BenchConfig::default();
    let seed = seed.unwrap_or(0);
    cfg.seed = seed;
    cfg.estimator.seed = seed;
    cfg.train.seed = seed;
    if let Some(t2) = knobs.tau_sq.or(knobs.tau.map(|t| t * t)) {
        cfg.tau_sq = t2;
    }
    if let Some(g) = knobs.gamma {
        cfg.gamma = g;
    }
    if let Some(e) = knobs.eta {
        cfg.estimator.eta = e;
    }
    if let Some(d) = knobs.delta {
        cfg.estimator.delta = d;
    }
    if let Some(m) = knobs.exact_inner_max {
        cfg.estimator.exact_inner_max = m;
    }
    if let Some(p) = settings.shapley_permutations {
        cfg.shapley_permutations = p;
    }
    let names = settings.settings.clone().unwrap_or_else(|| Setting::ALL.iter().map(|s| s.name().to_string()).collect());
    let list = names.iter().map(|s| s.parse::<Setting>()).collect::<actspec::Result<Vec<_>>>()?;
    let rows = run_synth_bench(&list, &cfg)?;
    emit(out, |w| write_scoreboard_csv(&rows, include_runtime, w))
}

fn digits(mnist: &MnistKnobs) -> Result<(u8, u8)> {
    match mnist.digits.as_deref() {
        None => Ok((1, 7)),
        Some(&[a, b]) if a != b && a <= 9 && b <= 9 => Ok((a, b)),
        Some(d) => Err(CliError::Config(format!("--digits needs two different digits, got {d:?}"))),
    }
}

fn load_images(mnist: &MnistKnobs) -> Result<ImageSet> {
    let (Some(images), Some(labels)) = (&mnist.images, &mnist.labels) else {
        return Err(CliError::Config("MNIST commands need --images and --labels".into()));
    };
    Ok(load_idx_files(images, labels)?)
}

fn sweep_config(mnist: &MnistKnobs, train: &TrainKnobs, knobs: &SearchKnobs, seed: Option<u64>) -> Result<SweepConfig> {
    let mut cfg = SweepConfig::default();
    cfg.digits = digits(mnist)?;
    cfg.seed = seed.unwrap_or(cfg.seed);
    if let Some(h) = &train.hidden {
        cfg.hidden = h.clone();
    }
    if let Some(e) = train.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = train.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(m) = train.momentum {
        cfg.momentum = m;
    }
    if let Some(l) = mnist.layer {
        cfg.layer = l;
    }
    if knobs.tau.is_some() || knobs.tau_sq.is_some() {
        cfg.tau_sq_fraction = None;
    }
    let defaults = &cfg.search;
    let merged = SearchKnobs {
        tau_sq: knobs.tau_sq.or(knobs.tau.map(|t| t * t)).or(Some(defaults.tau_sq())),
        gamma: knobs.gamma.or(Some(defaults.gamma)),
        ..knobs.clone()
    };
    cfg.search = search_params(&merged, seed)?;
    Ok(cfg)
}

fn classifier(images: &ImageSet, mnist: &MnistKnobs, cfg: &SweepConfig, dropout: f64) -> Result<Mlp> {
    if let Some(path) = &mnist.net {
        let net = Mlp::from_json(&std::fs::read_to_string(path)?)?;
        if net.input_dim() != PIXELS || net.output_dim() != 2 {
            return Err(actspec::Error::Format(format!(
                "{} is a {}-to-{} network; a 784-to-2 classifier is needed",
                path.display(),
                net.input_dim(),
                net.output_dim()
            ))
            .into());
        }
        return Ok(net);
    }
    let (net, mse) = train_digit_classifier(images, cfg, dropout)?;
    log::info!("trained classifier: MSE {mse:.4e}");
    if let Some(path) = &mnist.save_net {
        std::fs::write(path, net.to_json()?)?;
    }
    Ok(net)
}

fn write_exports(report: &SpectrumReport, export: &ExportKnobs, default_width: usize) -> Result<()> {
    if let Some(p) = &export.hypergraph {
        emit_json(Some(p), &export_hypergraph(report))?;
    }
    if let Some(p) = &export.dot {
        std::fs::write(p, export_hypergraph(report).to_dot())?;
    }
    let mut h = heatmap(report);
    if let Some(k) = export.top_k {
        h.restrict_to_top_k(k);
    }
    if let Some(p) = &export.heatmap_csv {
        emit(Some(p), |w| h.write_csv(w))?;
    }
    if let Some(p) = &export.heatmap_pgm {
        let width = export.width.unwrap_or(default_width);
        emit(Some(p), |w| h.write_pgm(width, w))?;
    }
    Ok(())
}

pub fn mnist_analyze(
    target: Target,
    mnist: &MnistKnobs,
    train: &TrainKnobs,
    knobs: &SearchKnobs,
    export: &ExportKnobs,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = sweep_config(mnist, train, knobs, seed)?;
    let images = load_images(mnist)?.filter(LabelFilter::Pair(cfg.digits.0, cfg.digits.1));
    if images.is_empty() {
        return Err(actspec::Error::EmptyDataset.into());
    }
    let net = classifier(&images, mnist, &cfg, train.dropout.unwrap_or(0.0))?;
    let params = cfg.search.clone();
    let mode = mnist.mode.unwrap_or(Mode::Projection);
    let (report, ds, width) = match target {
        Target::Pixels => {
            let ds = to_input_dataset(&images, LabelFilter::All, &net, ValueSource::Fixed(Selector::LogitDiff(0, 1)))?;
            let report = match mode {
                Mode::Projection => search(&ds, None, &params, knobs.target_subsets)?,
                Mode::Promote => {
                    let n2 = net.clone();
                    let oracle = FnOracle::new(PIXELS, move |p: &actspec::BitPattern| {
                        let x: Vec<f64> = p.signs().iter().map(|s| (s + 1.0) / 2.0).collect();
                        Selector::LogitDiff(0, 1).select(&n2.forward(&x).expect("784 inputs"))
                    });
                    search(&ds, Some(&oracle), &params, knobs.target_subsets)?
                }
            };
            (report, ds, SIDE)
        }
        Target::Layer => {
            let layer = mnist.layer.unwrap_or(cfg.layer);
            let inputs = images.binary_inputs();
            let mut oracle = SubnetOracle::new(net, layer, Selector::LogitDiff(0, 1))?;
            oracle.fit_stats(&inputs)?;
            let ds = actspec::nn::extract_activation_dataset(&oracle, &inputs)?;
            let report = match mode {
                Mode::Projection => search(&ds, None, &params, knobs.target_subsets)?,
                Mode::Promote => search(&ds, Some(&oracle), &params, knobs.target_subsets)?,
            };
            let width = oracle.width();
            (report, ds, width)
        }
    };
    if let Some(p) = &mnist.abf_out {
        emit(Some(p), |w| write_abf(&ds, w))?;
    }
    write_exports(&report, export, width)?;
    emit(out, |w| {
        w.write_all(report.to_json()?.as_bytes())?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn dropout_sweep(
    mnist: &MnistKnobs,
    train: &TrainKnobs,
    knobs: &SearchKnobs,
    settings: &SettingsKnobs,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = sweep_config(mnist, train, knobs, seed)?;
    if let Some(f) = settings.tau_sq_fraction {
        cfg.tau_sq_fraction = Some(f);
    }
    let images = load_images(mnist)?;
    let rates = settings.rates.clone().unwrap_or_else(|| vec![0.0, 0.25, 0.5]);
    let rows = run_dropout_sweep(&images, &rates, &cfg)?;
    for r in &rows {
        if let Some(e) = &r.error {
            log::warn!("rate {}: {e}", r.rate);
        }
    }
    emit(out, |w| write_sweep_csv(&rows, w))
}

fn parse_subset(text: &str, n: usize) -> Result<SubsetMask> {
    let idx = text
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<usize>().map_err(|e| CliError::Config(format!("subset {text:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubsetMask::from_indices(n, &idx)?)
}

pub fn intervene(
    cancellation: bool,
    inputs: Option<&Path>,
    report: Option<&Path>,
    subsets: &[String],
    mnist: &MnistKnobs,
    out: Option<&Path>,
) -> Result<()> {
    let net = if cancellation {
        build_cancellation_net()
    } else {
        let path = mnist.net.as_ref().ok_or_else(|| CliError::Config("intervene needs --net or --cancellation".into()))?;
        Mlp::from_json(&std::fs::read_to_string(path)?)?
    };
    let xs: Vec<Vec<f64>> = match inputs {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(actspec::Error::from)?,
        None if cancellation => vec![vec![1.0]],
        None => {
            let (a, b) = digits(mnist)?;
            load_images(mnist)?.filter(LabelFilter::Pair(a, b)).binary_inputs()
        }
    };
    let selector = if net.output_dim() == 1 { Selector::Scalar } else { Selector::Logit(0) };
    let mut oracle = SubnetOracle::new(net, mnist.layer.unwrap_or(1), selector)?;
    oracle.fit_stats(&xs)?;
    let w = oracle.width();
    let mut masks = subsets.iter().map(|s| parse_subset(s, w)).collect::<Result<Vec<_>>>()?;
    if let Some(p) = report {
        let report = read_report(p)?;
        if report.n != w {
            return Err(actspec::Error::DimensionMismatch { expected: w, found: report.n }.into());
        }
        masks.extend(report.accepted.into_iter().map(|a| a.mask).filter(|m| !m.is_empty()));
    }
    if masks.is_empty() {
        if cancellation {
            masks.push(SubsetMask::full(w));
        } else {
            return Err(CliError::Config("no subsets: pass --subset or --report".into()));
        }
    }
    emit_json(out, &intervene_flip_rate(&oracle, &masks, &xs)?)
}

pub fn export(report: &Path, export: &ExportKnobs) -> Result<()> {
    let report = read_report(report)?;
    if export.hypergraph.is_none() && export.dot.is_none() && export.heatmap_csv.is_none() && export.heatmap_pgm.is_none()
    {
        return Err(CliError::Config("export needs at least one of --hypergraph, --dot, --heatmap-csv, --heatmap-pgm".into()));
    }
    let width = if report.n == PIXELS { SIDE } else { report.n.max(1) };
    write_exports(&report, export, width)
}
