//! The segmenter stays frozen while the inpainter trains.

use std::collections::BTreeSet;

use wrinkle_core::features::FeatureExtractor;
use wrinkle_core::inpaint::{DiscConfig, GeneratorConfig};
use wrinkle_core::losses::{wrinkle_loss_var, LossWeights};
use wrinkle_core::maskgen::MaskPolicy;
use wrinkle_core::math::derive_seed;
use wrinkle_core::nn::Module;
use wrinkle_core::segnet::{SegModel, SegModelConfig};
use wrinkle_core::toy::toy_samples;
use wrinkle_core::trainer::{
    generator_gradients, train_step, InpaintModels, InpaintOptimizers, InpaintTrainConfig,
    PreparedBatch,
};
use wrinkle_core::Tape;

use crate::common::ensure;

pub fn run() -> Result<String, String> {
    let seg = SegModel::new(SegModelConfig {
        encoder_depth: 2,
        base_channels: 3,
        seed: 9,
    })
    .unwrap();
    let before = seg.state_dict();
    let mut models = InpaintModels::new(
        GeneratorConfig {
            base_channels: 4,
            n_blocks: 1,
            ..GeneratorConfig::default()
        },
        DiscConfig {
            base_channels: 4,
            n_layers: 1,
            ..DiscConfig::default()
        },
    )
    .unwrap();
    let cfg = InpaintTrainConfig {
        lr_gen: 1e-3,
        lr_disc: 1e-3,
        ..InpaintTrainConfig::default()
    };
    let mut opt = InpaintOptimizers::new(&cfg);
    let weights = LossWeights {
        wrinkle: 1.0,
        ..LossWeights::default()
    };
    let policy = MaskPolicy {
        thickness_px: [1.0, 3.0],
        ..MaskPolicy::default()
    };
    let phi = FeatureExtractor::Identity;
    let data = toy_samples(4, 32, 1);
    for step in 0..100 {
        let batch = PreparedBatch::new(
            &data[step % 2 * 2..][..2],
            &policy,
            derive_seed(3, &[step as u64]),
        )
        .map_err(|e| e.to_string())?;
        train_step(
            &batch,
            &mut models,
            &mut opt,
            Some(&seg),
            &phi,
            &weights,
            step,
        )
        .map_err(|e| e.to_string())?;
    }
    ensure(seg.state_dict() == before, || {
        "segmenter weights changed during inpainting training".into()
    })?;

    // The wrinkle loss puts no segmenter parameter on the tape as a trainable leaf.
    let mut tape = Tape::new();
    let x_hat = tape.variable(data[0].image.to_tensor());
    let l = wrinkle_loss_var(&mut tape, &seg, x_hat).map_err(|e| e.to_string())?;
    ensure(tape.trainable_leaves() == vec![x_hat], || {
        "segmenter parameters are trainable leaves".into()
    })?;
    let grads = tape.backward(l).map_err(|e| e.to_string())?;
    ensure(grads.get(x_hat).is_some_and(|g| g.sq_norm() > 0.0), || {
        "no gradient reaches x_hat".into()
    })?;

    // Generator updates name only generator parameters.
    let batch = PreparedBatch::new(&data[..2], &policy, 0).map_err(|e| e.to_string())?;
    let (_, _, g) = generator_gradients(
        &models.generator,
        &models.discriminator,
        Some(&seg),
        &phi,
        &weights,
        &batch,
    )
    .map_err(|e| e.to_string())?;
    let gen_names: BTreeSet<&str> = models
        .generator
        .params()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let grad_names: BTreeSet<&str> = g.keys().map(String::as_str).collect();
    ensure(grad_names.is_subset(&gen_names), || {
        "gradient step names non-generator parameters".into()
    })?;
    Ok("segmenter bit-identical after 100 steps; no gradient path into its parameters".into())
}
