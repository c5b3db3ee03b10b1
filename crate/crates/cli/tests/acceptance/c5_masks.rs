//! Evaluation masks avoid annotated wrinkles; training masks are unions.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use wrinkle_core::maskgen::{
    build_inpaint_mask, generate_polyline_mask, synth_eval_masks, MaskPolicy,
};
use wrinkle_core::toy::toy_samples;
use wrinkle_core::Mask;

use crate::common::ensure;

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    (1usize..24, 1usize..24).prop_flat_map(|(h, w)| {
        let m = move || {
            proptest::collection::vec(0u8..2, h * w).prop_map(move |d| Mask::new(h, w, d).unwrap())
        };
        (m(), m())
    })
}

fn properties() -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 256,
        ..Config::default()
    });
    runner
        .run(&mask_pair(), |(a, b)| {
            let ab = build_inpaint_mask(&a, &b).unwrap();
            prop_assert_eq!(&ab, &build_inpaint_mask(&b, &a).unwrap());
            prop_assert_eq!(&build_inpaint_mask(&a, &a).unwrap(), &a);
            prop_assert_eq!(&build_inpaint_mask(&ab, &b).unwrap(), &ab);
            for i in 0..a.data().len() {
                prop_assert_eq!(ab.data()[i], a.data()[i] | b.data()[i]);
            }
            Ok(())
        })
        .map_err(|e| format!("union property: {e}"))
}

pub fn run() -> Result<String, String> {
    let policy = MaskPolicy::default();
    let radius = policy.exclusion_radius();
    let samples = toy_samples(10, 128, 5);
    let mut pixels = 0;
    for trial in 0..100u64 {
        let wrinkles = &samples[trial as usize % samples.len()].wrinkle_mask;
        let m = synth_eval_masks(wrinkles, &policy, trial)
            .map_err(|e| format!("trial {trial}: {e}"))?;
        let zone = wrinkles.dilate(radius);
        let overlap = m.intersect(&zone).unwrap().count();
        ensure(overlap == 0, || {
            format!("trial {trial}: {overlap} pixels overlap the dilated wrinkles")
        })?;
        ensure(!m.is_empty(), || {
            format!("trial {trial}: empty evaluation mask")
        })?;
        pixels += m.count();
    }
    // Training masks always contain the annotation.
    for (i, s) in samples.iter().enumerate() {
        let g = generate_polyline_mask(128, 128, &policy, i as u64).map_err(|e| e.to_string())?;
        let m = build_inpaint_mask(&s.wrinkle_mask, &g).unwrap();
        ensure(
            m.intersect(&s.wrinkle_mask).unwrap() == s.wrinkle_mask,
            || "union lost wrinkle pixels".into(),
        )?;
    }
    properties()?;
    Ok(format!("100 trials, {pixels} masked pixels, none within {radius}px of a wrinkle; union properties hold"))
}
