use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use packsense::corpus::{standard_recipes, RoleCounts};
use packsense::detect::{run_experiment, ExperimentConfig, REPORT_SCHEMA};
use packsense::encoder::{ModelConfig, TrainConfig};
use packsense::lowentropy::{invert_transform, shannon_entropy};
use packsense_cli::{AdversarialMeta, ADVERSARIAL_SCHEMA, ENTROPY_SCHEMA, EVAL_SCHEMA, TRAIN_SCHEMA};
use serde_json::Value;

fn packsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_packsense"))
        .args(args)
        .env("PACKSENSE_THREADS", "1")
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = packsense(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn assert_valid(schema: &str, value: &Value) {
    let schema: Value = serde_json::from_str(schema).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}\n{value:#}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Half plain text, half bytes cycling through all 256 values.
fn sample_file(dir: &Path) -> PathBuf {
    let mut bytes = b"the quick brown fox jumps over the lazy dog ".repeat(100);
    bytes.extend((0..4400u32).map(|i| (i * 7 % 256) as u8));
    let p = dir.join("sample.bin");
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(packsense(&[]).status.code(), Some(2));
    assert_eq!(packsense(&["scan", "--bogus"]).status.code(), Some(2));
    assert_eq!(packsense(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(packsense(&["entropy-scan", "--input", "x", "--granularity", "page"]).status.code(), Some(2));
    let out = packsense(&["entropy-scan"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(packsense(&["--help"]).status.code(), Some(0));
}

#[test]
fn operational_errors_exit_1() {
    let out = packsense(&["entropy-scan", "--input", "/nonexistent/file"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = sample_file(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_packsense"))
        .args(["entropy-scan", "--input", s(&f)])
        .env("PACKSENSE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn entropy_scan_reports_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let f = sample_file(dir.path());
    let out = ok(&["entropy-scan", "--input", s(&f), "--granularity", "window", "--threshold", "7.0", "--window", "2048"]);
    let v = json(&out);
    assert_valid(ENTROPY_SCHEMA, &v);
    let values = v["profile"]["values"].as_array().unwrap();
    // 8800 bytes: four full windows and a 608-byte tail.
    assert_eq!(values.len(), 5);
    assert!(values[0]["entropy"].as_f64().unwrap() < 5.0);
    assert!(values[3]["entropy"].as_f64().unwrap() >= 7.0);
    assert_eq!(v["verdict"]["packed"], Value::Bool(true));

    let v = json(&ok(&["entropy-scan", "--input", s(&f)]));
    assert_valid(ENTROPY_SCHEMA, &v);
    assert_eq!(v["profile"]["values"].as_array().unwrap().len(), 1);

    let table = String::from_utf8(ok(&["entropy-scan", "--input", s(&f), "--format", "table"]).stdout).unwrap();
    assert!(table.contains("verdict:"), "{table}");
}

#[test]
fn logs_carry_the_reproducibility_chain() {
    let dir = tempfile::tempdir().unwrap();
    let f = sample_file(dir.path());
    let out = ok(&["entropy-scan", "--input", s(&f), "--seed", "42"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed 42 config "), "{err}");
    assert!(err.contains(" vocabulary "), "{err}");
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let f = sample_file(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# low threshold\nthreshold = 1.0\ngranularity = file\n").unwrap();
    let packed = |extra: &[&str]| {
        let mut args = vec!["entropy-scan", "--input", s(&f), "--config", s(&cfg)];
        args.extend_from_slice(extra);
        json(&ok(&args))["verdict"]["packed"].as_bool().unwrap()
    };
    // Defaults alone (threshold 7.0) do not flag the whole file.
    assert!(!json(&ok(&["entropy-scan", "--input", s(&f)]))["verdict"]["packed"].as_bool().unwrap());
    assert!(packed(&[]));
    assert!(!packed(&["--threshold", "7.9"]));

    std::fs::write(&cfg, "no-such-flag = 3\n").unwrap();
    assert_eq!(packsense(&["entropy-scan", "--input", s(&f), "--config", s(&cfg)]).status.code(), Some(2));
    std::fs::write(&cfg, "threshold 3\n").unwrap();
    assert_eq!(packsense(&["entropy-scan", "--input", s(&f), "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn gen_adversarial_roundtrips_and_keeps_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let f = sample_file(dir.path());
    let original = std::fs::read(&f).unwrap();
    for scheme in ["mono_sub", "transposition", "poly_sub", "base64", "base32", "custom_hex", "padding"] {
        let out_path = dir.path().join(format!("{scheme}.bin"));
        let v = json(&ok(&["gen-adversarial", "--input", s(&f), "--scheme", scheme, "--out", s(&out_path), "--seed", "3"]));
        assert_valid(ADVERSARIAL_SCHEMA, &v);
        let meta_file: Value =
            serde_json::from_slice(&std::fs::read(format!("{}.meta.json", out_path.display())).unwrap()).unwrap();
        assert_eq!(meta_file, v);
        let meta: AdversarialMeta = serde_json::from_value(v).unwrap();
        let bytes = std::fs::read(&out_path).unwrap();
        assert_eq!(invert_transform(&bytes, &meta.inverse).unwrap(), original, "{scheme}");
        assert_eq!(meta.entropy_after, shannon_entropy(&bytes).unwrap());
        match scheme {
            "mono_sub" | "transposition" => assert_eq!(meta.entropy_after, meta.entropy_before),
            "base64" => assert!(meta.entropy_after <= 6.0),
            "base32" => assert!(meta.entropy_after <= 5.0),
            "padding" => assert!(meta.entropy_after < 7.0),
            _ => {}
        }
    }
    let out = dir.path().join("x.bin");
    assert_eq!(packsense(&["gen-adversarial", "--input", s(&f), "--scheme", "rot13", "--out", s(&out)]).status.code(), Some(2));
}

const TINY_MODEL: [&str; 8] = ["--layers", "1", "--heads", "2", "--d-model", "16", "--d-ffn", "32"];

/// gen-corpus, pretrain, finetune, scan and eval through the binary. The
/// resulting checkpoint must be the one the library pipeline produces from
/// the same settings.
#[test]
fn pipeline_through_the_binary_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    let pre = dir.path().join("pre.ckpt");
    let ft = dir.path().join("ft.ckpt");
    let seed = "11";

    let v = json(&ok(&[
        "gen-corpus", "--out", s(&root), "--seed", seed, "--pretrain", "4", "--finetune", "10", "--test", "6", "--min-size",
        "512", "--max-size", "768",
    ]));
    assert_eq!(v["files"], 20);
    assert_eq!(v["split_violations"].as_array().unwrap().len(), 0);

    let mut args = vec!["pretrain", "--corpus", s(&root), "--out", s(&pre), "--seed", seed, "--max-inputs", "8"];
    args.extend_from_slice(&TINY_MODEL);
    let v = json(&ok(&args));
    assert_valid(TRAIN_SCHEMA, &v);
    assert_eq!(v["inputs"], 8);

    let v = json(&ok(&[
        "finetune", "--corpus", s(&root), "--init", s(&pre), "--out", s(&ft), "--seed", seed, "--epochs", "2",
        "--max-inputs", "24",
    ]));
    assert_valid(TRAIN_SCHEMA, &v);
    let cli_hash = v["checkpoint_sha256"].as_str().unwrap().to_string();
    assert!(Path::new(&format!("{}.knn.json", ft.display())).exists());

    // The same run through the library.
    let model = ModelConfig { layers: 1, heads: 2, d_model: 16, d_ffn: 32, ..ExperimentConfig::default().model };
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        seed: 11,
        counts: RoleCounts { pretrain: 4, finetune: 10, test: 6 },
        recipes: standard_recipes().into_iter().map(|r| r.with_size(512, 768)).collect(),
        model,
        pretrain: TrainConfig { ..defaults.pretrain.clone() },
        finetune: TrainConfig { epochs: 2, ..defaults.finetune.clone() },
        max_pretrain_inputs: 8,
        max_finetune_inputs: 24,
        ..defaults
    };
    let (report, _, _) = run_experiment(&cfg).unwrap();
    assert_eq!(report.checkpoint_sha256, cli_hash);

    let test_file = std::fs::read_dir(root.join("test")).unwrap().next().unwrap().unwrap().path();
    let out = ok(&["scan", "--model", s(&ft), "--input", s(&test_file), "--format", "json"]);
    let v = json(&out);
    assert_valid(REPORT_SCHEMA, &v);
    assert!(v["program"]["decision"].is_string());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sha256"));
    let table = String::from_utf8(ok(&["scan", "--model", s(&ft), "--input", s(&test_file), "--format", "table"]).stdout).unwrap();
    assert!(table.contains("program:"), "{table}");

    let v = json(&ok(&["eval", "--corpus", s(&root), "--model", s(&ft)]));
    assert_valid(EVAL_SCHEMA, &v);
    assert_eq!(v["files"], 6);
    assert_eq!(v, serde_json::to_value(&report.test).unwrap());

    // A pre-trained model has no region head.
    assert_eq!(packsense(&["scan", "--model", s(&pre), "--input", s(&test_file)]).status.code(), Some(1));
}

#[test]
fn thread_count_does_not_change_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    ok(&["gen-corpus", "--out", s(&root), "--pretrain", "4", "--finetune", "2", "--test", "2", "--max-size", "768", "--min-size", "512"]);
    let hash = |threads: &str| {
        let out_path = dir.path().join(format!("pre{threads}.ckpt"));
        let mut args = vec!["pretrain", "--corpus", s(&root), "--out", s(&out_path), "--max-inputs", "12", "--batch", "4"];
        args.extend_from_slice(&TINY_MODEL);
        let out = Command::new(env!("CARGO_BIN_EXE_packsense")).args(&args).env("PACKSENSE_THREADS", threads).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        json(&out)["checkpoint_sha256"].as_str().unwrap().to_string()
    };
    assert_eq!(hash("1"), hash("3"));
}
