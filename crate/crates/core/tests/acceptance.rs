//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and
//! exits non-zero when any criterion fails.
//!
//! Criterion 10 reads MNIST from `ACTSPEC_MNIST_DIR` (default `data/mnist` at the
//! workspace root), expecting `npm-images-idx3-ubyte` and `npm-labels-idx1-ubyte`
//! or the standard `t10k-*` pair.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use actspec::estimate::bucket_weight_estimate;
use actspec::experiments::{actspec_influence, prepare, run_dropout_sweep, run_synth_bench, BenchConfig, Setting, SweepConfig};
use actspec::mnist::{load_idx_files, LabelFilter};
use actspec::nn::{build_cancellation_net, intervene_flip_rate, Mlp, Selector, SubnetOracle};
use actspec::search::{actspec_search, actspec_search_with_oracle, top_k_search, SearchParams, SpectrumReport};
use actspec::spectrum::{bucket_weight_exact, influence_exact, truth_table, wht_exact};
use actspec::synth::{
    gen_synth_dataset, ground_truth_influence, multitier, multitier_pattern, tv_distance, write_scoreboard_csv, SynthKind,
};
use actspec::{ActivationDataset, BitPattern, EstimatorConfig, Record, SubsetMask};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `multitier` on the sign vector of a cube index (bit k is variable k, 1 is +1).
fn tier(x: usize) -> f64 {
    let s = |k: usize| if x >> k & 1 == 1 { 1 } else { -1 };
    multitier([s(0), s(1), s(2), s(3)]) as f64
}

/// `x^S` for cube index `x` and subset index `s`.
fn chi(s: usize, x: usize) -> f64 {
    if (s & !x).count_ones() % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

fn brute_coefficients(n: usize, f: &[f64]) -> Vec<f64> {
    let size = 1usize << n;
    (0..size).map(|s| (0..size).map(|x| f[x] * chi(s, x)).sum::<f64>() / size as f64).collect()
}

fn subset_index(vars: &[usize]) -> usize {
    vars.iter().map(|v| 1usize << v).sum()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let table = wht_exact(&truth_table(4, multitier_pattern)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    // Multi-tier spectrum with X1..X4 as variables 0..3.
    let fives = [vec![2, 3]];
    let threes = [vec![0, 1], vec![0, 3], vec![1, 2]];
    let ones: [Vec<usize>; 12] = [
        vec![],
        vec![0],
        vec![1],
        vec![2],
        vec![3],
        vec![0, 2],
        vec![1, 3],
        vec![0, 1, 2],
        vec![0, 1, 3],
        vec![0, 2, 3],
        vec![1, 2, 3],
        vec![0, 1, 2, 3],
    ];
    let mut worst: f64 = 0.0;
    for (group, magnitude) in [(&fives[..], 5.0 / 8.0), (&threes[..], 3.0 / 8.0), (&ones[..], 1.0 / 8.0)] {
        for s in group {
            let c = table.coeffs()[subset_index(s)];
            worst = worst.max((c.abs() - magnitude).abs());
        }
    }
    let brute = brute_coefficients(4, &(0..16).map(tier).collect::<Vec<_>>());
    let brute_gap = table.coeffs().iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        worst < 1e-12 && brute_gap < 1e-12 && elapsed < Duration::from_secs(1),
        format!("max |coeff| error {worst:e}, brute-force gap {brute_gap:e}, {elapsed:?}"),
    )
}

fn criterion_2() -> Outcome {
    let table = wht_exact(&truth_table(4, multitier_pattern)).map_err(|e| e.to_string())?;
    let total: f64 = table.coeffs().iter().map(|c| c * c).sum();
    let mut by_size = [0.0; 3];
    for c in table.coeffs() {
        let k = ((c.abs() * 8.0).round() as usize - 1) / 2;
        by_size[k] += c * c;
    }
    let expected = [12.0 / 64.0, 27.0 / 64.0, 25.0 / 64.0];
    let gap = by_size.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        (total - 1.0).abs() < 1e-12 && gap < 1e-12,
        format!("sum {total} (1/8: {}, 3/8: {}, 5/8: {})", by_size[0], by_size[1], by_size[2]),
    )
}

fn criterion_3() -> Outcome {
    let table = wht_exact(&truth_table(4, multitier_pattern)).map_err(|e| e.to_string())?;
    let expected = [3.0 / 8.0, 3.0 / 8.0, 5.0 / 8.0, 5.0 / 8.0];
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, want) in expected.iter().enumerate() {
        let exact = influence_exact(&table, i).map_err(|e| e.to_string())?;
        let flips = (0..16).filter(|&x| tier(x) != tier(x ^ (1 << i))).count() as f64 / 16.0;
        ok &= (exact - want).abs() < 1e-12 && (flips - want).abs() < 1e-12;
        lines.push(format!("{exact}/{flips}"));
    }
    check(ok, format!("influence/flip-count {}", lines.join(", ")))
}

fn criterion_4() -> Outcome {
    let cfg = BenchConfig::default();
    let truth = ground_truth_influence(4).map_err(|e| e.to_string())?;
    let truth5 = ground_truth_influence(5).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for setting in [Setting::Hardcoded, Setting::Learned, Setting::Constant] {
        let p = prepare(setting, &cfg, cfg.seed).map_err(|e| e.to_string())?;
        let (_, inf) = actspec_influence(&p, &cfg, cfg.seed).map_err(|e| e.to_string())?;
        let reference = if setting == Setting::Constant { &truth5 } else { &truth };
        let tv = tv_distance(&inf, reference).map_err(|e| e.to_string())?;
        ok &= tv < 1e-9;
        if let Some(mse) = p.train_mse {
            ok &= mse < 1e-6;
            parts.push(format!("learned MSE {mse:e}"));
        }
        parts.push(format!("{} TV {tv:e}", setting.name()));
    }
    check(ok, parts.join(", "))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let cfg = BenchConfig::default();
    let truth = ground_truth_influence(100).map_err(|e| e.to_string())?;
    let pair = SubsetMask::from_indices(100, &[2, 3]).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    let mut ok = true;
    for (setting, limit) in [(Setting::Noise1000, 0.10), (Setting::Noise50, 0.30)] {
        let mut tvs = Vec::new();
        let mut hits = 0;
        for seed in 0..20u64 {
            let p = prepare(setting, &cfg, seed).map_err(|e| e.to_string())?;
            let (report, inf) = actspec_influence(&p, &cfg, seed).map_err(|e| e.to_string())?;
            tvs.push(tv_distance(&inf, &truth).map_err(|e| e.to_string())?);
            hits += report.accepted.iter().any(|a| a.mask == pair) as usize;
        }
        let med = median(tvs);
        ok &= med <= limit;
        if setting == Setting::Noise50 {
            ok &= hits >= 18;
        }
        summary.push(format!("{} median TV {med:.4} (limit {limit}), {{3,4}} in {hits}/20", setting.name()));
    }
    let elapsed = start.elapsed();
    ok &= elapsed <= Duration::from_secs(300);
    check(ok, format!("{}, {elapsed:.1?}", summary.join("; ")))
}

fn criterion_6() -> Outcome {
    let rows: [([f64; 5], f64); 4] = [
        ([1., 1., 1., 1., 1.], 1.),
        ([1., -1., -1., -1., 1.], -1.),
        ([-1., 1., -1., -1., 1.], -1.),
        ([-1., -1., 1., 1., 1.], 1.),
    ];
    let records = rows.iter().map(|(x, f)| Record::new(BitPattern::from_signs(x), *f)).collect();
    let ds = ActivationDataset::new(5, records).map_err(|e| e.to_string())?;

    // all 32 normalized coefficients by direct enumeration over the four rows
    let coeff = |s: usize| -> f64 {
        rows.iter().map(|(x, f)| f * (0..5).filter(|i| s >> i & 1 == 1).map(|i| x[i]).product::<f64>()).sum::<f64>()
            / 4.0
    };
    let c: Vec<f64> = (0..32).map(coeff).collect();
    let x5_constant = (0..32).filter(|s| s & 16 == 0).all(|s| c[s] == c[s | 16]);
    let x3_x4_twins = (0..32).filter(|s| s & 12 == 0).all(|s| c[s | 4] == c[s | 8]);
    let heaviest = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let report = actspec_search(&ds, &SearchParams::with_tau_sq(0.5, 0.5)).map_err(|e| e.to_string())?;
    let accepted: Vec<Vec<usize>> = report.accepted.iter().map(|a| a.mask.indices()).collect();
    let constant = report.redundancy.iter().any(|e| e.variable == 4 && e.witness_mask.is_empty() && e.score == 1.0);
    let kept_x3 = accepted == vec![vec![2]] && report.accepted[0].coefficient == c[4];
    let x4_mapped = report
        .redundancy
        .iter()
        .any(|e| e.variable == 3 && e.witness_mask.indices() == vec![2] && e.score == 1.0);
    let x4_absent = accepted.iter().all(|s| !s.contains(&3) && !s.contains(&4));
    check(
        x5_constant && x3_x4_twins && heaviest == 1.0 && constant && kept_x3 && x4_mapped && x4_absent,
        format!(
            "enumeration: X5 constant {x5_constant}, X3/X4 twins {x3_x4_twins}; accepted {accepted:?}, \
             X5 witness empty {constant}, X4 -> X3 {x4_mapped}"
        ),
    )
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, count: usize) -> ActivationDataset {
    let records = (0..count)
        .map(|_| {
            let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            Record::weighted(BitPattern::from_bools(&bits), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0))
        })
        .collect();
    ActivationDataset::new(n, records).expect("valid records")
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let count = rng.gen_range(50..400);
        let ds = random_dataset(&mut rng, 10, count);
        let i_mask = SubsetMask::from_index(10, rng.gen_range(1..1024));
        let s = i_mask.intersection(&SubsetMask::from_index(10, rng.gen_range(0..1024)));
        let cfg = EstimatorConfig::new(0.1, 0.05, seed);
        let est = bucket_weight_estimate(&ds, &s, &i_mask, &cfg).map_err(|e| e.to_string())?.estimate;
        let exact = bucket_weight_exact(&ds, &s, &i_mask).map_err(|e| e.to_string())?;
        let err = (est - exact).abs();
        worst = worst.max(err);
        within += (err <= 0.1) as usize;
    }
    check(within >= 190, format!("{within}/200 within eta = 0.1 (need 190), worst error {worst:.4}"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    let mut checked = 0;
    for k in 0..50 {
        let n = rng.gen_range(1..=10);
        let f: Vec<f64> = (0..1usize << n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
        let brute = brute_coefficients(n, &f);
        let cube = ActivationDataset::full_cube(n, |p| {
            let x = (0..n).map(|i| (p.bit(i) as usize) << i).sum::<usize>();
            f[x]
        })
        .map_err(|e| e.to_string())?;
        for tau_sq in [0.05, 0.1, 0.3] {
            // γ = 1 turns the redundancy filter off: scores never exceed 1
            let params = SearchParams::with_tau_sq(tau_sq, 1.0);
            let report = actspec_search(&cube, &params).map_err(|e| e.to_string())?;
            let mut got: Vec<u64> = report.accepted.iter().map(|a| a.mask.to_index()).collect();
            got.sort_unstable();
            let want: Vec<u64> =
                (0..brute.len()).filter(|&s| brute[s] * brute[s] >= tau_sq).map(|s| s as u64).collect();
            checked += 1;
            if got != want {
                failures.push(format!("function {k} (n={n}) tau^2={tau_sq}: got {got:?}, want {want:?}"));
            }
        }
    }
    check(failures.is_empty(), format!("{}/{checked} searches exact {}", checked - failures.len(), failures.join("; ")))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for _ in 0..20 {
        let depth = rng.gen_range(1..4);
        let mut sizes = vec![rng.gen_range(1..6)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(1..7));
        }
        let mut net = Mlp::random(&sizes, rng.gen()).map_err(|e| e.to_string())?;
        for l in &mut net.layers {
            for b in &mut l.bias {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        let (d_in, d_out) = (net.input_dim(), net.output_dim());
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ts: Vec<Vec<f64>> = (0..5).map(|_| (0..d_out).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (_, grads) = net.loss_and_gradient(&xs, &ts, None).map_err(|e| e.to_string())?;
        for (k, layer) in net.layers.iter().enumerate() {
            for p in 0..layer.weights.len() + layer.bias.len() {
                let eval = |delta: f64| {
                    let mut m = net.clone();
                    let nw = m.layers[k].weights.len();
                    if p < nw {
                        m.layers[k].weights[p] += delta;
                    } else {
                        m.layers[k].bias[p - nw] += delta;
                    }
                    m.mse(&xs, &ts).expect("shapes match")
                };
                let h = 1e-5;
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let g = grads[k][p];
                // relative error, with an absolute floor for gradients that vanish
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-4);
                worst = worst.max(rel);
                params += 1;
            }
        }
    }
    check(worst <= 1e-6, format!("{params} parameters over 20 nets, worst relative error {worst:.2e}"))
}

fn mnist_dir() -> PathBuf {
    std::env::var("ACTSPEC_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load_mnist() -> Result<actspec::mnist::ImageSet, String> {
    let dir = mnist_dir();
    for (img, lbl) in [("npm-images-idx3-ubyte", "npm-labels-idx1-ubyte"), ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")] {
        let (img, lbl) = (dir.join(img), dir.join(lbl));
        if img.exists() && lbl.exists() {
            return load_idx_files(&img, &lbl).map_err(|e| e.to_string());
        }
    }
    Err(format!("no MNIST IDX files in {}", dir.display()))
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let images = load_mnist()?;
    let cfg = SweepConfig::default();
    let kept = images.filter(LabelFilter::Pair(cfg.digits.0, cfg.digits.1)).len();
    let rows = run_dropout_sweep(&images, &[0.0, 0.25, 0.5], &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let table: Vec<String> = rows
        .iter()
        .map(|r| match &r.error {
            Some(e) => format!("rate {} failed: {e}", r.rate),
            None => format!("rate {}: mean size {:.3}, redundancy {}", r.rate, r.mean_size, r.redundancy_count),
        })
        .collect();
    let ran = rows.iter().all(|r| r.error.is_none());
    let size_ok = rows.windows(2).all(|w| w[1].mean_size <= w[0].mean_size);
    let red_ok = rows.windows(2).all(|w| w[1].redundancy_count >= w[0].redundancy_count);
    check(
        kept >= 2000 && ran && size_ok && red_ok && elapsed <= Duration::from_secs(900),
        format!(
            "{kept} images; {}; size non-increasing {size_ok}, redundancy non-decreasing {red_ok}; {elapsed:.1?}",
            table.join("; ")
        ),
    )
}

fn criterion_11() -> Outcome {
    let mut oracle = SubnetOracle::new(build_cancellation_net(), 1, Selector::Logit(0)).map_err(|e| e.to_string())?;
    let inputs = vec![vec![1.0], vec![2.0], vec![0.5]];
    oracle.fit_stats(&inputs).map_err(|e| e.to_string())?;
    let group = SubsetMask::full(2);
    let r = intervene_flip_rate(&oracle, &[group], &inputs).map_err(|e| e.to_string())?;
    let singles_flip = r.per_variable.iter().all(|&(_, rate)| rate == 1.0) && r.per_variable.len() == 2;
    let group_holds = r.per_subset == vec![0.0];
    check(
        singles_flip && group_holds,
        format!("singleton flip rates {:?}, group flip rate {:?}", r.per_variable, r.per_subset),
    )
}

fn report_bytes(r: actspec::Result<SpectrumReport>) -> Result<String, String> {
    r.and_then(|r| r.to_json()).map_err(|e| e.to_string())
}

fn criterion_12() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ds = random_dataset(&mut rng, 8, 300);
    let mut params = SearchParams::with_tau_sq(0.01, 0.5);
    params.estimator = Some(EstimatorConfig::new(0.1, 0.05, 5));

    let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let mut runs: Vec<(&str, Box<dyn Fn() -> Result<String, String> + Send + Sync>)> = Vec::new();
    {
        let (ds, params) = (ds.clone(), params.clone());
        runs.push(("sampled search", Box::new(move || report_bytes(actspec_search(&ds, &params)))));
    }
    {
        let (ds, params) = (ds.clone(), params.clone());
        runs.push(("top-k search", Box::new(move || report_bytes(top_k_search(&ds, None, &params, 3)))));
    }
    runs.push((
        "query-mode search",
        Box::new(|| {
            let ds = gen_synth_dataset(SynthKind::Noise, 50, 3).map_err(|e| e.to_string())?;
            let oracle = actspec::FnOracle::new(100, multitier_pattern);
            let mut p = SearchParams::with_tau_sq(0.1, 0.5);
            p.estimator = Some(EstimatorConfig::new(0.05, 0.05, 3));
            report_bytes(actspec_search_with_oracle(&ds, &oracle, &p))
        }),
    ));
    runs.push((
        "synth scoreboard",
        Box::new(|| {
            let cfg = BenchConfig { seed: 3, ..BenchConfig::default() };
            let rows = run_synth_bench(&[Setting::Constant, Setting::Noise50, Setting::Noise1000], &cfg)
                .map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            write_scoreboard_csv(&rows, false, &mut buf).map_err(|e| e.to_string())?;
            String::from_utf8(buf).map_err(|e| e.to_string())
        }),
    ));
    runs.push((
        "dropout sweep",
        Box::new(|| {
            let images = load_mnist()?.filter(LabelFilter::Pair(1, 7));
            let small = actspec::mnist::ImageSet {
                images: images.images[..300 * actspec::mnist::PIXELS].to_vec(),
                labels: images.labels[..300].to_vec(),
            };
            let cfg = SweepConfig { hidden: vec![16, 8], epochs: 3, ..SweepConfig::default() };
            let rows = run_dropout_sweep(&small, &[0.0, 0.5], &cfg).map_err(|e| e.to_string())?;
            serde_json::to_string(&rows).map_err(|e| e.to_string())
        }),
    ));

    let mut parts = Vec::new();
    let mut ok = true;
    for (name, run) in &runs {
        let a = run()?;
        let b = run()?;
        let c = one_thread.install(|| run())?;
        let same = a == b && b == c;
        ok &= same;
        parts.push(format!("{name} {}", if same { "identical" } else { "DIFFERS" }));
    }
    check(ok, format!("{} (repeated, and on one thread)", parts.join(", ")))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 12] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, run) in criteria {
        if !filter.is_empty() && !filter.contains(&k) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {k}: PASS ({detail})"),
            Err(detail) => {
                println!("criterion {k}: FAIL ({detail})");
                failed.push(k);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
