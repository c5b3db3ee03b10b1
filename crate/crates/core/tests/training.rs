use wrinkle_core::data::AugmentConfig;
use wrinkle_core::features::FeatureExtractor;
use wrinkle_core::inpaint::{DiscConfig, GeneratorConfig};
use wrinkle_core::losses::LossWeights;
use wrinkle_core::maskgen::MaskPolicy;
use wrinkle_core::math::derive_seed;
use wrinkle_core::nn::Module;
use wrinkle_core::segnet::{train_segmentation, SegModel, SegModelConfig, SegTrainConfig};
use wrinkle_core::toy::toy_samples;
use wrinkle_core::trainer::{
    render_batch, train_inpainting, train_step, InpaintModels, InpaintOptimizers,
    InpaintTrainConfig, PreparedBatch,
};

fn tiny_models() -> InpaintModels {
    InpaintModels::new(
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
    .unwrap()
}

fn thin_policy() -> MaskPolicy {
    MaskPolicy {
        thickness_px: [1.0, 3.0],
        ..MaskPolicy::default()
    }
}

#[test]
fn seg_loss_falls_over_first_twenty_epochs() {
    let data = toy_samples(8, 32, 3);
    let cfg = SegTrainConfig {
        epochs: 20,
        lr: 3e-3,
        input_size: None,
        batch_size: 4,
        ..SegTrainConfig::default()
    };
    let model = SegModelConfig {
        encoder_depth: 3,
        base_channels: 4,
        seed: 0,
    };
    let run = train_segmentation(&data, &[], &model, &cfg, &AugmentConfig::default()).unwrap();
    let loss: Vec<f64> = run.history.epochs.iter().map(|e| e.train_loss).collect();
    let smooth: Vec<f64> = loss
        .windows(5)
        .map(|w| w.iter().sum::<f64>() / 5.0)
        .collect();
    assert!(smooth.last().unwrap() < smooth.first().unwrap(), "{loss:?}");
    assert_eq!(run.history.epochs[0].train_loss, {
        let again = train_segmentation(
            &data,
            &[],
            &model,
            &SegTrainConfig { epochs: 1, ..cfg },
            &AugmentConfig::default(),
        );
        again.unwrap().history.epochs[0].train_loss
    });
}

#[test]
fn rendered_batches_keep_unmasked_pixels() {
    let models = tiny_models();
    let data = toy_samples(2, 32, 8);
    let batch = PreparedBatch::new(&data, &thin_policy(), 1).unwrap();
    let out = render_batch(&models.generator, &batch).unwrap();
    let plane = 32 * 32;
    for (i, v) in out.data().iter().enumerate() {
        let n = i / (3 * plane);
        if batch.holes.data()[n * plane + i % plane] == 0.0 {
            assert_eq!(v.to_bits(), batch.images.data()[i].to_bits());
        }
    }
}

#[test]
fn default_weights_give_finite_logs_for_a_hundred_steps() {
    let mut models = tiny_models();
    let seg = SegModel::new(SegModelConfig {
        encoder_depth: 2,
        base_channels: 2,
        seed: 4,
    })
    .unwrap();
    let cfg = InpaintTrainConfig::default();
    let mut opt = InpaintOptimizers::new(&cfg);
    let data = toy_samples(4, 32, 2);
    let phi = FeatureExtractor::default();
    for step in 0..100 {
        let batch = PreparedBatch::new(
            &data[step % 4..][..1],
            &thin_policy(),
            derive_seed(0, &[step as u64]),
        )
        .unwrap();
        let log = train_step(
            &batch,
            &mut models,
            &mut opt,
            Some(&seg),
            &phi,
            &LossWeights::default(),
            step,
        )
        .unwrap();
        assert!(
            log.terms.named().iter().all(|(_, v)| v.is_finite()),
            "{}",
            log.terms.breakdown()
        );
    }
}

#[test]
fn inpainting_history_records_weights_and_is_deterministic() {
    let data = toy_samples(4, 32, 6);
    let weights = LossWeights {
        ffl: 0.25,
        wrinkle: 0.0,
        ..LossWeights::default()
    };
    let cfg = InpaintTrainConfig {
        epochs: 2,
        batch_size: 2,
        crop_size: 32,
        mask_policy: thin_policy(),
        weights: weights.clone(),
        val_every: 1,
        ..InpaintTrainConfig::default()
    };
    let gen = GeneratorConfig {
        base_channels: 4,
        n_blocks: 1,
        ..GeneratorConfig::default()
    };
    let disc = DiscConfig {
        base_channels: 4,
        n_layers: 1,
        ..DiscConfig::default()
    };
    let phi = FeatureExtractor::default();
    let a = train_inpainting(&data, &data[..2], &gen, &disc, &phi, None, &cfg).unwrap();
    let b = train_inpainting(&data, &data[..2], &gen, &disc, &phi, None, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(
        a.models.generator.state_dict(),
        b.models.generator.state_dict()
    );
    assert!(a
        .history
        .epochs
        .iter()
        .all(|e| e.weights == weights && e.val_lpips.is_some()));
    assert_eq!(a.previews.len(), 2);
}

#[test]
fn wrinkle_weight_without_segmenter_is_an_error() {
    let mut models = tiny_models();
    let cfg = InpaintTrainConfig::default();
    let mut opt = InpaintOptimizers::new(&cfg);
    let data = toy_samples(1, 32, 0);
    let batch = PreparedBatch::new(&data, &thin_policy(), 0).unwrap();
    let w = LossWeights {
        wrinkle: 1.0,
        ..LossWeights::default()
    };
    assert!(train_step(
        &batch,
        &mut models,
        &mut opt,
        None,
        &FeatureExtractor::Identity,
        &w,
        0
    )
    .is_err());
}
