use std::path::PathBuf;
use std::sync::OnceLock;

use wrinkle_cli::config::RunConfig;
use wrinkle_core::segnet::{train_segmentation, SegModel, SegTraining};
use wrinkle_core::toy::{toy_set, ToySample};

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    let err = (got - want).abs() / want.abs().max(1.0);
    ensure(err <= tol, || {
        format!("{what}: got {got}, want {want} (err {err:.2e} > {tol:.0e})")
    })
}

pub fn toy_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

pub fn toy_config() -> RunConfig {
    RunConfig::load(&toy_config_path()).expect("shipped toy config parses")
}

/// The 16-sample, 64x64 toy set `make-toy --config configs/toy.toml` writes.
pub fn toy_data() -> &'static [ToySample] {
    static DATA: OnceLock<Vec<ToySample>> = OnceLock::new();
    DATA.get_or_init(|| toy_set(16, 64, toy_config().seed))
}

/// Segmenter trained with the shipped toy config; shared by criteria 6 and 7.
pub fn toy_segmenter() -> &'static Result<SegTraining, String> {
    static SEG: OnceLock<Result<SegTraining, String>> = OnceLock::new();
    SEG.get_or_init(|| {
        let cfg = toy_config();
        let train: Vec<_> = toy_data().iter().map(|t| t.sample.clone()).collect();
        train_segmentation(
            &train,
            &[],
            &cfg.seg_model_config(),
            &cfg.seg_train_config(),
            &cfg.augment,
        )
        .map_err(|e| e.to_string())
    })
}

pub fn trained_segmenter() -> Result<&'static SegModel, String> {
    toy_segmenter()
        .as_ref()
        .map(|t| &t.model)
        .map_err(Clone::clone)
}
