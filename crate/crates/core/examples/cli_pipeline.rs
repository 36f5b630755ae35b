//! Drives the command-line front end through build-vocab, adapt, finetune,
//! evaluate and replay on the bundled toy corpus.
//!
//! ```text
//! cargo run --release --example cli_pipeline
//! ```

use std::path::Path;

use turnrank::cli::main_with_args;

fn run(args: &[&str]) {
    println!("$ turnrank {}", args.join(" "));
    let code = main_with_args(std::iter::once("turnrank").chain(args.iter().copied()));
    assert_eq!(code, 0, "command failed");
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let data = root.join("data/toy");
    let dir = std::env::temp_dir().join(format!("turnrank-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = |name: &str| dir.join(name).display().to_string();
    let d = |name: &str| data.join(name).display().to_string();
    let configs = root.join("configs").display().to_string();

    run(&["build-vocab", "--input", &d("adapt.jsonl"), "--input", &d("train.jsonl"), "--out", &p("vocab.txt")]);
    let common = ["--config-dir", &configs, "--config", "toy", "--vocab", &p("vocab.txt")];
    run(&[&["adapt", "--data", &d("adapt.jsonl"), "--checkpoint-out", &p("adapted.json")][..], &common].concat());
    run(&[
        &["finetune", "--data", &d("train.jsonl"), "--valid", &d("valid.jsonl")][..],
        &["--checkpoint-in", &p("adapted.json"), "--checkpoint-out", &p("tuned.json")],
        &common,
    ]
    .concat());
    run(&[
        &["evaluate", "--pools", &d("test.jsonl"), "--checkpoint", &p("tuned.json")][..],
        &["--threshold-sweep", "--valid", &d("valid.jsonl"), "--out", &p("report.txt")],
        &common,
    ]
    .concat());
    run(&["replay", "--from", &p("report.txt.manifest.json"), "--out-dir", &p("replay")]);
    println!("outputs in {}", dir.display());
}
