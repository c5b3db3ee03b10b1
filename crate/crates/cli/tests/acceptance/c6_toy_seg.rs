//! The shipped toy config overfits 16 synthetic 64x64 samples.

use wrinkle_core::nn::Module;
use wrinkle_core::segnet::{mean_iou, train_segmentation, SegTrainConfig};

use crate::common::{ensure, toy_config, toy_data, trained_segmenter};

pub fn run() -> Result<String, String> {
    let cfg = toy_config();
    let train: Vec<_> = toy_data().iter().map(|t| t.sample.clone()).collect();
    ensure(train.len() == 16 && train[0].height() == 64, || {
        "toy set is not 16 x 64x64".into()
    })?;

    // Same seed, same result: compare two short runs bit for bit.
    let short = SegTrainConfig {
        epochs: 2,
        ..cfg.seg_train_config()
    };
    let a = train_segmentation(&train, &[], &cfg.seg_model_config(), &short, &cfg.augment)
        .map_err(|e| e.to_string())?;
    let b = train_segmentation(&train, &[], &cfg.seg_model_config(), &short, &cfg.augment)
        .map_err(|e| e.to_string())?;
    ensure(a.history == b.history, || {
        "histories differ between identical runs".into()
    })?;
    ensure(a.model.state_dict() == b.model.state_dict(), || {
        "weights differ between identical runs".into()
    })?;

    let model = trained_segmenter()?;
    let score = mean_iou(model, &train).map_err(|e| e.to_string())?;
    ensure(score >= 0.9, || format!("train IoU {score:.4} < 0.9"))?;
    Ok(format!(
        "train IoU {score:.4} after {} epochs; reruns identical",
        cfg.seg_train.epochs
    ))
}
