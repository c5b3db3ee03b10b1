//! Subcommand implementations. Each returns the files it wrote.

use std::path::{Path, PathBuf};

use wrinkle_core::data::split_dataset;
use wrinkle_core::eval::{evaluate_inpainting, evaluate_segmentation, MetricsReport};
use wrinkle_core::features::{DilatedConvNet, FeatureExtractor};
use wrinkle_core::inpaint::{InpaintGenerator, PatchDiscriminator};
use wrinkle_core::math::derive_seed;
use wrinkle_core::pipeline::{remove_wrinkles, Segmenter};
use wrinkle_core::segnet::{train_segmentation, SegModel};
use wrinkle_core::toy::toy_samples;
use wrinkle_core::trainer::train_inpainting;
use wrinkle_core::{Image, ProbMap, Sample};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io;

pub const SEG_HISTORY: &str = "seg_history.json";
pub const INPAINT_HISTORY: &str = "inpaint_history.json";
pub const DISC_CHECKPOINT: &str = "discriminator.ckpt";
pub const SEG_REPORT: &str = "eval_seg.json";
pub const INPAINT_REPORT: &str = "eval_inpaint.json";

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    s.push('\n');
    Ok(s)
}

/// Training and validation samples. A validation directory wins over
/// `val_fraction`; with neither, validation reuses the training set.
fn datasets(cfg: &RunConfig) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    let all = io::load_dataset(&cfg.data.train_dir)?;
    if let Some(dir) = &cfg.data.val_dir {
        return Ok((all, io::load_dataset(dir)?));
    }
    if cfg.data.val_fraction == 0.0 {
        return Ok((all, Vec::new()));
    }
    let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
    let (_, val_ids) = split_dataset(
        &ids,
        cfg.data.val_fraction,
        derive_seed(cfg.seed, &[0x73706c]),
    )
    .map_err(|e| CliError::config(format!("data.val_fraction: {e}")))?;
    let (val, train) = all.into_iter().partition(|s| val_ids.contains(&s.id));
    Ok((train, val))
}

fn eval_dataset(cfg: &RunConfig) -> CliResult<Vec<Sample>> {
    let dir = cfg
        .data
        .eval_dir
        .as_ref()
        .or(cfg.data.val_dir.as_ref())
        .unwrap_or(&cfg.data.train_dir);
    io::load_dataset(dir)
}

fn existing(path: PathBuf, key: &str) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::config(format!(
            "{key} {} does not exist",
            path.display()
        )))
    }
}

fn load_seg(cfg: &RunConfig) -> CliResult<SegModel> {
    checkpoint::load(&existing(cfg.seg_checkpoint_path(), "seg_checkpoint")?)
}

fn load_generator(cfg: &RunConfig) -> CliResult<InpaintGenerator> {
    checkpoint::load(&existing(cfg.gen_checkpoint_path(), "gen_checkpoint")?)
}

fn feature_extractor(cfg: &RunConfig) -> CliResult<FeatureExtractor> {
    let net = match &cfg.feature_weights {
        Some(p) => checkpoint::load::<DilatedConvNet>(&existing(p.clone(), "feature_weights")?)?,
        None => DilatedConvNet::new(cfg.features.clone())
            .map_err(|e| CliError::config(format!("features: {e}")))?,
    };
    Ok(FeatureExtractor::Dilated(net))
}

pub fn train_seg(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let (train, val) = datasets(cfg)?;
    let run = train_segmentation(
        &train,
        &val,
        &cfg.seg_model_config(),
        &cfg.seg_train_config(),
        &cfg.augment,
    )?;
    let out = cfg.output_dir();
    let ckpt = cfg.seg_checkpoint_path();
    let hist = out.join(SEG_HISTORY);
    checkpoint::save(&ckpt, &run.model)?;
    io::write_text(&hist, &to_json(&run.history)?)?;
    println!(
        "trained {} epochs, best val IoU {:.4} at epoch {}",
        run.history.epochs.len(),
        run.history.best_val_iou,
        run.history.best_epoch
    );
    Ok(vec![ckpt, hist])
}

pub fn train_inpaint(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let seg = load_seg(cfg)?;
    let phi = feature_extractor(cfg)?;
    let (train, val) = datasets(cfg)?;
    let run = train_inpainting(
        &train,
        &val,
        &cfg.generator_config(),
        &cfg.discriminator_config(),
        &phi,
        Some(&seg),
        &cfg.inpaint_train_config(),
    )?;
    let out = cfg.output_dir();
    let gen = cfg.gen_checkpoint_path();
    let disc = out.join(DISC_CHECKPOINT);
    let hist = out.join(INPAINT_HISTORY);
    checkpoint::save(&gen, &run.models.generator)?;
    checkpoint::save::<PatchDiscriminator>(&disc, &run.models.discriminator)?;
    io::write_text(&hist, &to_json(&run.history)?)?;
    let mut written = vec![gen, disc, hist];
    for (id, img) in &run.previews {
        let p = out.join("previews").join(format!("{id}.png"));
        io::save_image(&p, img)?;
        written.push(p);
    }
    if let Some(last) = run.history.epochs.last() {
        println!(
            "trained {} epochs, final losses: {}",
            run.history.epochs.len(),
            last.terms.breakdown()
        );
    }
    Ok(written)
}

/// Stands in for the segmenter when a mask override makes it unnecessary.
struct NoSegmenter;

impl Segmenter for NoSegmenter {
    fn segment(&self, x: &Image) -> wrinkle_core::Result<ProbMap> {
        Ok(ProbMap::new(
            x.height(),
            x.width(),
            vec![0.0; x.height() * x.width()],
        )?)
    }
}

/// `<dir>/<stem>_mask.png` next to `output`.
pub fn mask_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    output.with_file_name(format!("{stem}_mask.png"))
}

pub fn infer(
    cfg: &RunConfig,
    input: &Path,
    output: Option<&Path>,
    mask_override: Option<&Path>,
) -> CliResult<Vec<PathBuf>> {
    let x = io::load_image(input)?;
    let mut opts = cfg.pipeline.clone();
    let seg: Box<dyn Segmenter> = match mask_override {
        Some(p) => {
            let m = io::load_mask(p)?;
            if (m.height(), m.width()) != (x.height(), x.width()) {
                return Err(CliError::config(format!(
                    "mask override {} is {}x{}, image is {}x{}",
                    p.display(),
                    m.height(),
                    m.width(),
                    x.height(),
                    x.width()
                )));
            }
            opts.mask_override = Some(m);
            Box::new(NoSegmenter)
        }
        None => Box::new(load_seg(cfg)?),
    };
    let generator = load_generator(cfg)?;
    let (out, mask) = remove_wrinkles(&x, seg.as_ref(), &generator, &opts)?;
    let out_path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            cfg.output_dir().join(format!("{stem}_clean.png"))
        }
    };
    let mpath = mask_path(&out_path);
    io::save_image(&out_path, &out)?;
    io::save_mask(&mpath, &mask)?;
    println!(
        "mask covers {} pixels; wrote {}",
        mask.count(),
        out_path.display()
    );
    Ok(vec![out_path, mpath])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTarget {
    Segmentation,
    Inpainting,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

/// Metrics in a fixed row order.
pub fn report_table(r: &MetricsReport) -> String {
    let rows = [
        ("iou", fmt_opt(r.iou)),
        ("lpips_mean", fmt_opt(r.lpips_mean)),
        ("fid", fmt_opt(r.fid)),
        ("n_samples", r.n_samples.to_string()),
        ("n_skipped", r.n_skipped.to_string()),
        ("mask_seed", r.mask_seed.to_string()),
        ("config_hash", r.config_hash.clone()),
    ];
    rows.iter().map(|(k, v)| format!("{k:<12} {v}\n")).collect()
}

pub fn eval(cfg: &RunConfig, config_hash: &str, target: EvalTarget) -> CliResult<Vec<PathBuf>> {
    let data = eval_dataset(cfg)?;
    let (mut report, name) = match target {
        EvalTarget::Segmentation => (evaluate_segmentation(&load_seg(cfg)?, &data)?, SEG_REPORT),
        EvalTarget::Inpainting => {
            let generator = load_generator(cfg)?;
            let phi = feature_extractor(cfg)?;
            let r = evaluate_inpainting(
                &generator,
                &data,
                &cfg.mask_policy,
                &phi,
                cfg.eval_mask_seed(),
            )?;
            (r, INPAINT_REPORT)
        }
    };
    report.mask_seed = cfg.eval_mask_seed();
    report.config_hash = config_hash.to_string();
    let path = cfg.output_dir().join(name);
    io::write_text(&path, &to_json(&report)?)?;
    print!("{}", report_table(&report));
    Ok(vec![path])
}

pub fn make_toy(dir: &Path, count: usize, size: usize, seed: u64) -> CliResult<Vec<PathBuf>> {
    if count == 0 || size < 32 {
        return Err(CliError::config(
            "make-toy needs --count >= 1 and --size >= 32",
        ));
    }
    io::save_dataset(dir, &toy_samples(count, size, seed))?;
    println!(
        "wrote {count} samples of {size}x{size} to {}",
        dir.display()
    );
    Ok(vec![dir.to_path_buf()])
}
