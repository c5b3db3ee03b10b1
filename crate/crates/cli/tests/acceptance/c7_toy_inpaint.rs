//! Three inpainting runs on the toy set that differ only in one loss weight.

use wrinkle_core::eval::{masked_psnr, spectral_error};
use wrinkle_core::features::{DilatedConvNet, FeatureExtractor};
use wrinkle_core::inpaint::InpaintGenerator;
use wrinkle_core::losses::{wrinkle_loss, LossWeights};
use wrinkle_core::maskgen::synth_eval_masks;
use wrinkle_core::math::derive_seed;
use wrinkle_core::pipeline::Inpainter;
use wrinkle_core::segnet::SegModel;
use wrinkle_core::toy::toy_samples;
use wrinkle_core::trainer::{train_inpainting, InpaintTrainConfig};
use wrinkle_core::Sample;

use crate::common::{ensure, toy_config, toy_data, trained_segmenter};

struct Scores {
    psnr: f64,
    spectral: f64,
    wrinkle: f64,
}

fn err(e: impl ToString) -> String {
    e.to_string()
}

/// Eval-mask fills of `data`: mean masked PSNR and mean spectral error.
fn fill_scores(
    g: &InpaintGenerator,
    data: &[Sample],
    mask_seed: u64,
) -> Result<(f64, f64), String> {
    let (mut psnr, mut spectral, mut n) = (0.0, 0.0, 0);
    for (i, s) in data.iter().enumerate() {
        if let Ok(m) = synth_eval_masks(
            &s.wrinkle_mask,
            &toy_config().mask_policy,
            derive_seed(mask_seed, &[i as u64]),
        ) {
            let out = g.inpaint(&s.image, &m).map_err(err)?;
            psnr += masked_psnr(&s.image, &out, &m).map_err(err)?;
            spectral += spectral_error(&s.image, &out).map_err(err)?;
            n += 1;
        }
    }
    ensure(n >= data.len() / 2, || {
        format!("only {n} eval masks could be placed")
    })?;
    Ok((psnr / n as f64, spectral / n as f64))
}

/// PSNR on the training images, spectral error on held-out crops, and the
/// wrinkle loss of outputs that fill the dilated wrinkle annotations.
fn score(
    g: &InpaintGenerator,
    seg: &SegModel,
    train: &[Sample],
    held: &[Sample],
) -> Result<Scores, String> {
    let cfg = toy_config();
    let (psnr, _) = fill_scores(g, train, cfg.eval_mask_seed())?;
    let (_, spectral) = fill_scores(g, held, cfg.eval_mask_seed())?;
    let mut wrinkle = 0.0;
    for s in train {
        let out = g
            .inpaint(&s.image, &s.wrinkle_mask.dilate(cfg.pipeline.dilate_px))
            .map_err(err)?;
        wrinkle += wrinkle_loss(seg, &out.to_tensor()).map_err(err)?;
    }
    Ok(Scores {
        psnr,
        spectral,
        wrinkle: wrinkle / train.len() as f64,
    })
}

pub fn run() -> Result<String, String> {
    let cfg = toy_config();
    let seg = trained_segmenter()?;
    let data: Vec<Sample> = toy_data().iter().map(|t| t.sample.clone()).collect();
    let held = toy_samples(8, 64, derive_seed(cfg.seed, &[0x68656c64]));
    let phi = FeatureExtractor::Dilated(DilatedConvNet::new(cfg.features.clone()).map_err(err)?);
    let base = cfg.inpaint_train_config();
    let w = base.weights.clone();
    ensure(w.ffl > 0.0 && w.wrinkle > 0.0, || {
        "toy config must enable both FFL and wrinkle loss".into()
    })?;

    let train = |weights: LossWeights| -> Result<Scores, String> {
        let run_cfg = InpaintTrainConfig {
            weights,
            ..base.clone()
        };
        let run = train_inpainting(
            &data,
            &[],
            &cfg.generator_config(),
            &cfg.discriminator_config(),
            &phi,
            Some(seg),
            &run_cfg,
        )
        .map_err(err)?;
        score(&run.models.generator, seg, &data, &held)
    };
    let full = train(w.clone())?;
    let no_ffl = train(LossWeights {
        ffl: 0.0,
        ..w.clone()
    })?;
    let no_wrinkle = train(LossWeights { wrinkle: 0.0, ..w })?;

    let summary = format!(
        "PSNR {:.2} dB; held-out spectral error {:.5} vs {:.5} without FFL; wrinkle loss {:.6} vs {:.6} without",
        full.psnr, full.spectral, no_ffl.spectral, full.wrinkle, no_wrinkle.wrinkle
    );
    let mut failures = Vec::new();
    if full.psnr < 25.0 {
        failures.push("masked PSNR < 25 dB");
    }
    if full.spectral >= no_ffl.spectral {
        failures.push("FFL did not lower spectral error");
    }
    if full.wrinkle >= no_wrinkle.wrinkle {
        failures.push("wrinkle term did not lower wrinkle loss");
    }
    ensure(failures.is_empty(), || {
        format!("{}: {summary}", failures.join(", "))
    })?;
    Ok(summary)
}
