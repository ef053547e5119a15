use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use actspec::abf::write_abf;
use actspec::mnist::{write_idx_images, write_idx_labels, PIXELS};
use actspec::nn::build_multitier_net;
use actspec::synth::multitier;
use actspec::{ActivationDataset, BitPattern, Record};
use jsonschema::JSONSchema;
use serde_json::Value;
use tempfile::TempDir;

fn actspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actspec")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = actspec(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    actspec(args).status.code().expect("exit code")
}

fn schema(name: &str) -> JSONSchema {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(name);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    JSONSchema::compile(&doc).expect("schema compiles")
}

fn assert_valid(schema_name: &str, text: &str) -> Value {
    let value: Value = serde_json::from_str(text).unwrap();
    let s = schema(schema_name);
    if let Err(errors) = s.validate(&value) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{schema_name}: {msgs:?}");
    }
    value
}

fn multitier_sign(bits: usize) -> f64 {
    let s = |k: usize| if bits >> k & 1 == 1 { 1 } else { -1 };
    multitier([s(0), s(1), s(2), s(3)]) as f64
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn cube(&self) -> String {
        let records = (0..16usize)
            .map(|i| {
                let bits: Vec<bool> = (0..4).map(|k| i >> k & 1 == 1).collect();
                Record::new(BitPattern::from_bools(&bits), multitier_sign(i))
            })
            .collect();
        let ds = ActivationDataset::new(4, records).unwrap();
        let path = self.path("cube.abf");
        write_abf(&ds, std::fs::File::create(&path).unwrap()).unwrap();
        self.arg("cube.abf")
    }

    /// Two stroke shapes standing in for digits 1 and 7, plus a stray 3.
    fn digits(&self, count: usize) -> (String, String) {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in 0..count {
            let mut img = vec![0u8; PIXELS];
            let (label, start) = if k % 2 == 0 { (1u8, 14) } else { (7u8, 5 * 28) };
            for p in 0..20 {
                let idx = if label == 1 { (p + 4) * 28 + start + k % 3 } else { start + 4 + p + 28 * (k % 3) };
                img[idx] = 200 + (k % 50) as u8;
            }
            images.extend(img);
            labels.push(label);
        }
        images.extend(vec![255u8; PIXELS]);
        labels.push(3);
        write_idx_images(&images, std::fs::File::create(self.path("img.idx")).unwrap()).unwrap();
        write_idx_labels(&labels, std::fs::File::create(self.path("lbl.idx")).unwrap()).unwrap();
        (self.arg("img.idx"), self.arg("lbl.idx"))
    }
}

#[test]
fn wht_matches_brute_force() {
    let f = Fixture::new();
    let cube = f.cube();
    let from_file = ok(&["wht", "--input", &cube]);
    assert_eq!(from_file, ok(&["wht", "--function", "multitier"]));
    let mut lines = from_file.lines();
    assert_eq!(lines.next(), Some("mask,coefficient"));
    for line in lines {
        let (mask, c) = line.split_once(',').unwrap();
        let s: usize = mask.chars().enumerate().map(|(i, ch)| ((ch == '1') as usize) << i).sum();
        let expected: f64 = (0..16usize)
            // bit 1 reads as +1, so the parity is negative when an odd number of S's bits are 0
            .map(|x| multitier_sign(x) * if (s & !x).count_ones() % 2 == 1 { -1.0 } else { 1.0 })
            .sum::<f64>()
            / 16.0;
        assert!((c.parse::<f64>().unwrap() - expected).abs() < 1e-12, "{mask}");
    }
}

#[test]
fn wht_needs_the_full_cube() {
    let f = Fixture::new();
    let ds = ActivationDataset::new(3, vec![Record::new(BitPattern::from_bools(&[true, false, true]), 1.0)]).unwrap();
    write_abf(&ds, std::fs::File::create(f.path("one.abf")).unwrap()).unwrap();
    assert_eq!(code(&["wht", "--input", &f.arg("one.abf")]), 3);
    assert_eq!(code(&["wht"]), 2);
}

#[test]
fn analyze_influence_export_pipeline() {
    let f = Fixture::new();
    let cube = f.cube();
    let report_path = f.arg("r.json");
    ok(&["analyze", "--input", &cube, "--tau-sq", "0.3", "--out", &report_path]);
    let report = assert_valid("report.schema.json", &std::fs::read_to_string(&report_path).unwrap());
    let accepted = report["accepted"].as_array().unwrap();
    assert_eq!(accepted.len(), 1);
    assert_eq!(accepted[0]["mask"], "0011");
    assert_eq!(accepted[0]["coefficient"], 0.625);

    let inf = assert_valid("influence.schema.json", &ok(&["influence", "--report", &report_path]));
    assert_eq!(inf["n"], 4);

    let (hg, dot, csv, pgm) = (f.arg("h.json"), f.arg("h.dot"), f.arg("h.csv"), f.arg("h.pgm"));
    ok(&["export", "--report", &report_path, "--hypergraph", &hg, "--dot", &dot, "--heatmap-csv", &csv, "--heatmap-pgm", &pgm]);
    let graph = assert_valid("hypergraph.schema.json", &std::fs::read_to_string(&hg).unwrap());
    assert_eq!(graph["edges"][0]["members"], serde_json::json!([2, 3]));
    assert!(std::fs::read_to_string(&dot).unwrap().contains("2 -- 3"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 5);
    assert!(std::fs::read_to_string(&pgm).unwrap().starts_with("P2\n4 1\n255\n"));
    assert_eq!(code(&["export", "--report", &report_path]), 2);
}

#[test]
fn query_mode_with_builtin_oracle() {
    let f = Fixture::new();
    let ds = actspec::synth::gen_synth_dataset(actspec::synth::SynthKind::Noise, 200, 3).unwrap();
    write_abf(&ds, std::fs::File::create(f.path("noise.abf")).unwrap()).unwrap();
    let input = f.arg("noise.abf");
    let text = ok(&["analyze", "--input", &input, "--oracle", "multitier", "--tau-sq", "0.3", "--exact-inner-max", "4"]);
    let report = assert_valid("report.schema.json", &text);
    assert_eq!(report["n"], 100);
    let masks: Vec<String> = report["accepted"].as_array().unwrap().iter().map(|a| a["mask"].to_string()).collect();
    assert!(masks.iter().any(|m| m.starts_with("\"0011") && m[5..].chars().all(|c| c == '0' || c == '"')), "{masks:?}");
}

#[test]
fn sampled_mode_is_seeded_and_repeatable() {
    let f = Fixture::new();
    let cube = f.cube();
    let args = ["analyze", "--input", &cube, "--aggregation", "sampled", "--samples", "64", "--tau-sq", "0.1"];
    assert_eq!(code(&args), 2, "a seed is required");
    let mut seeded = args.to_vec();
    seeded.extend(["--seed", "11"]);
    let a = ok(&seeded);
    assert_eq!(a, ok(&seeded));
    seeded.extend(["--threads", "1"]);
    assert_eq!(a, ok(&seeded));
    assert_valid("report.schema.json", &a);
}

#[test]
fn config_file_and_overrides() {
    let f = Fixture::new();
    let cube = f.cube();
    let cfg = f.path("run.toml");
    std::fs::write(&cfg, "tau_sq = 0.3\ngamma = 0.5\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_file = ok(&["analyze", "--config", cfg, "--input", &cube]);
    let report: Value = serde_json::from_str(&from_file).unwrap();
    assert_eq!(report["accepted"].as_array().unwrap().len(), 1);
    let overridden = ok(&["analyze", "--config", cfg, "--input", &cube, "--tau-sq", "0.1"]);
    let report: Value = serde_json::from_str(&overridden).unwrap();
    assert_eq!(report["accepted"].as_array().unwrap().len(), 4);

    let bad = f.path("bad.toml");
    std::fs::write(&bad, "tau_squared = 0.3\n").unwrap();
    assert_eq!(code(&["analyze", "--config", bad.to_str().unwrap(), "--input", &cube]), 2);
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let cube = f.cube();
    assert_eq!(code(&["analyze", "--input", &f.arg("missing.abf")]), 3);
    std::fs::write(f.path("junk.abf"), b"ABF2\0\0\0\0").unwrap();
    assert_eq!(code(&["analyze", "--input", &f.arg("junk.abf")]), 3);
    assert_eq!(code(&["analyze", "--input", &cube, "--gamma", "1.5"]), 2);
    assert_eq!(code(&["analyze", "--input", &cube, "--tau-sq", "0.01", "--max-buckets", "1"]), 4);
    assert_eq!(code(&["analyze", "--input", &cube, "--bogus"]), 2);
}

#[test]
fn intervene_on_the_cancellation_net() {
    let text = ok(&["intervene", "--cancellation", "--subset", "0,1"]);
    let report = assert_valid("flip_report.schema.json", &text);
    assert_eq!(report["per_subset"], serde_json::json!([0.0]));
    assert_eq!(report["per_variable"], serde_json::json!([[0, 1.0], [1, 1.0]]));
}

#[test]
fn mlp_schema_accepts_saved_networks() {
    assert_valid("mlp.schema.json", &build_multitier_net().to_json().unwrap());
}

#[test]
fn mnist_commands_on_synthetic_digits() {
    let f = Fixture::new();
    let (img, lbl) = f.digits(60);
    let net = f.arg("net.json");
    let common = ["--images", &img, "--labels", &lbl, "--hidden", "8,4", "--epochs", "20", "--seed", "2"];

    let mut layer = vec!["mnist-layer", "--save-net", &net, "--tau-sq", "0.01"];
    layer.extend(common);
    let report = assert_valid("report.schema.json", &ok(&layer));
    // layer 1 is the first hidden layer
    assert_eq!(report["n"], 8);
    assert_valid("mlp.schema.json", &std::fs::read_to_string(&net).unwrap());
    let mut promote = layer.clone();
    promote.extend(["--mode", "promote"]);
    assert_valid("report.schema.json", &ok(&promote));

    let csv = f.arg("heat.csv");
    let pgm = f.arg("heat.pgm");
    let mut input = vec!["mnist-input", "--net", &net, "--tau-sq", "0.05", "--heatmap-csv", &csv, "--heatmap-pgm", &pgm];
    input.extend(["--images", &img, "--labels", &lbl]);
    let report = assert_valid("report.schema.json", &ok(&input));
    assert_eq!(report["n"], 784);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 785);
    assert!(std::fs::read_to_string(&pgm).unwrap().starts_with("P2\n28 28\n255\n"));

    let flips = ok(&["intervene", "--net", &net, "--images", &img, "--labels", &lbl, "--subset", "0,1", "--subset", "2"]);
    let flips = assert_valid("flip_report.schema.json", &flips);
    assert_eq!(flips["per_subset"].as_array().unwrap().len(), 2);

    assert_eq!(code(&["mnist-layer", "--images", &img]), 2);
    assert_eq!(code(&["mnist-layer", "--images", &img, "--labels", &lbl, "--digits", "1"]), 2);
}

#[test]
fn dropout_sweep_rows_are_repeatable() {
    let f = Fixture::new();
    let (img, lbl) = f.digits(40);
    let args =
        ["dropout-sweep", "--images", &img, "--labels", &lbl, "--hidden", "8,4", "--epochs", "10", "--rates", "0,0.25,0.5"];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    let mut lines = a.lines();
    assert!(lines.next().unwrap().starts_with("rate,mean_size,redundancy_count"));
    let rates: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rates, vec!["0", "0.25", "0.5"]);
    assert_eq!(code(&["dropout-sweep", "--images", &img, "--labels", &lbl, "--rates", "0.95"]), 2);
}

#[test]
fn synth_bench_without_runtime_is_byte_identical() {
    let args = ["synth-bench", "--settings", "hardcoded,constant", "--no-runtime", "--seed", "4"];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    let rows: Vec<Vec<&str>> = a.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[3], "");
        if r[0] == "actspec" {
            assert!(r[2].parse::<f64>().unwrap() < 1e-12, "{r:?}");
        }
    }
    assert_eq!(code(&["synth-bench", "--settings", "bogus"]), 2);
}
