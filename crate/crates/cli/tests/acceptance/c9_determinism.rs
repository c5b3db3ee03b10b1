//! Every subcommand, run twice with the same config and seed, writes
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::common::ensure;

const TINY: &str = r#"
seed = 21
output_dir = "runs"

[data]
train_dir = "data"

[seg_model]
encoder_depth = 2
base_channels = 3

[seg_train]
epochs = 2
lr = 0.003
lr_decay_epoch = 1
input_size = 32
batch_size = 2

[generator]
base_channels = 4
n_blocks = 1

[discriminator]
base_channels = 4
n_layers = 1

[mask_policy]
thickness_px = [1.0, 3.0]

[inpaint_train]
epochs = 2
lr_gen = 0.001
lr_disc = 0.001
batch_size = 2
crop_size = 32
val_every = 1

[pipeline]
seg_input_size = 32
"#;

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["wrinkle"];
    argv.extend_from_slice(args);
    let code = wrinkle_cli::run(&argv);
    ensure(code == 0, || {
        format!("`{}` exited with {code}", args.join(" "))
    })
}

/// Run every command in a fresh directory and return the files to compare.
fn session(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let cfg = root.join("tiny.toml");
    fs::write(&cfg, TINY).map_err(|e| e.to_string())?;
    let c = cfg.to_str().unwrap();
    let data = root.join("data");
    cli(&[
        "make-toy",
        "--output",
        data.to_str().unwrap(),
        "--count",
        "4",
        "--size",
        "32",
        "--seed",
        "4",
    ])?;
    cli(&["train-seg", "--config", c])?;
    cli(&["train-inpaint", "--config", c])?;
    cli(&["eval", "--seg", "--config", c])?;
    cli(&["eval", "--inpaint", "--config", c])?;
    let input = data.join("images").join(
        fs::read_to_string(data.join("manifest.txt"))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_owned()
            + ".png",
    );
    let out = root.join("out").join("clean.png");
    cli(&[
        "infer",
        input.to_str().unwrap(),
        "--config",
        c,
        "--output",
        out.to_str().unwrap(),
    ])?;

    let runs = root.join("runs");
    let mut files: Vec<PathBuf> = vec![out.clone(), out.with_file_name("clean_mask.png")];
    for name in [
        "seg_history.json",
        "inpaint_history.json",
        "eval_seg.json",
        "eval_inpaint.json",
        "seg.ckpt",
        "generator.ckpt",
        "discriminator.ckpt",
    ] {
        files.push(runs.join(name));
    }
    files
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), bytes))
        })
        .collect()
}

pub fn run() -> Result<String, String> {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = session(a.path())?;
    let second = session(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between identical runs"))?;
    }
    Ok(format!(
        "make-toy, train-seg, train-inpaint, eval --seg/--inpaint, infer: {} files identical",
        first.len()
    ))
}
