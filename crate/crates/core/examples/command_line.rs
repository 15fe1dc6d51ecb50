//! The `glen` command line driven in-process: write a synthetic dataset,
//! build its graph, train, and export heatmaps, using a config file for the
//! shared flags.
//!
//!     cargo run --release --example command_line [WORK_DIR]

use std::fs;
use std::path::PathBuf;

use glen::cli::run_from;

fn main() -> glen::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "glen-cli-example".into()));
    let data = work.join("data");
    let arg = |p: PathBuf| p.display().to_string();
    run_from(["glen", "synth", "--preset", "cross-domain", "--out", &arg(data.clone())])?;

    let config = work.join("run.cfg");
    let text = format!(
        "# every long flag works here; command-line flags win\n\
         source_train = {}\nsource_unlabeled = {}\ntarget_unlabeled = {}\ntarget_test = {}\nembeddings = {}\n",
        arg(data.join("source_train.jsonl")),
        arg(data.join("source_unlabeled.jsonl")),
        arg(data.join("target_unlabeled.jsonl")),
        arg(data.join("target_test.jsonl")),
        arg(data.join("embeddings.txt")),
    );
    fs::create_dir_all(&work).map_err(|e| glen::GlenError::io(&work, e))?;
    fs::write(&config, text).map_err(|e| glen::GlenError::io(&config, e))?;
    let cfg = arg(config);

    run_from(["glen", "build-graph", "--config", &cfg, "--out", &arg(work.join("graph"))])?;
    run_from([
        "glen", "train", "--config", &cfg, "--ablation", "glen", "--seeds", "1", "--lr-grid", "1e-3",
        "--batch-size", "8", "--out", &arg(work.join("train")),
    ])?;
    run_from([
        "glen", "heatmap", "--config", &cfg, "--heatmap-tokens", "src0x0,src1x0,tgt0x0,tgt1x0",
        "--checkpoint", &arg(work.join("train/checkpoints/glen-f1-seed0.ckpt")), "--svg",
        "--out", &arg(work.join("heatmap")),
    ])?;
    println!("outputs under {}", work.display());
    Ok(())
}
