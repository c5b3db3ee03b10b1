//! Pixels outside the edit mask are never touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrinkle_core::inpaint::{composite, GeneratorConfig, InpaintGenerator};
use wrinkle_core::pipeline::{predict_mask, remove_wrinkles, PipelineOptions, Segmenter};
use wrinkle_core::segnet::{SegModel, SegModelConfig};
use wrinkle_core::toy::toy_set;
use wrinkle_core::{Image, Mask, ProbMap};

use crate::common::ensure;

struct Blank;

impl Segmenter for Blank {
    fn segment(&self, x: &Image) -> wrinkle_core::Result<ProbMap> {
        ProbMap::new(x.height(), x.width(), vec![0.0; x.height() * x.width()])
    }
}

/// Every pixel outside `m` equals `x` bit for bit.
fn untouched(x: &Image, out: &Image, m: &Mask) -> Result<(), String> {
    for c in 0..3 {
        for y in 0..x.height() {
            for xx in 0..x.width() {
                if !m.get(y, xx) && x.get(c, y, xx).to_bits() != out.get(c, y, xx).to_bits() {
                    return Err(format!("pixel ({c},{y},{xx}) changed outside the mask"));
                }
            }
        }
    }
    Ok(())
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gen = InpaintGenerator::new(GeneratorConfig {
        base_channels: 8,
        n_blocks: 2,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let seg = SegModel::new(SegModelConfig {
        encoder_depth: 3,
        base_channels: 4,
        seed: 2,
    })
    .unwrap();
    let opts = PipelineOptions {
        seg_input_size: None,
        ..PipelineOptions::default()
    };
    let mut checked = 0;
    for (i, t) in toy_set(10, 64, 77).iter().enumerate() {
        let x = &t.sample.image;
        let raw = Image::new(
            64,
            64,
            (0..3 * 64 * 64).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let m = Mask::new(
            64,
            64,
            (0..64 * 64)
                .map(|_| (rng.random::<f64>() < 0.2) as u8)
                .collect(),
        )
        .unwrap();
        let out = composite(x, &raw, &m).map_err(|e| e.to_string())?;
        untouched(x, &out, &m)?;
        for c in 0..3 {
            for y in 0..64 {
                for xx in 0..64 {
                    if m.get(y, xx) {
                        ensure(out.get(c, y, xx) == raw.get(c, y, xx), || {
                            "hole not filled from raw".into()
                        })?;
                    }
                }
            }
        }

        let (id, empty) = remove_wrinkles(x, &Blank, &gen, &opts).map_err(|e| e.to_string())?;
        ensure(empty.is_empty() && id == *x, || {
            format!("image {i}: empty mask is not the identity")
        })?;
        let over = PipelineOptions {
            mask_override: Some(Mask::zeros(64, 64)),
            ..opts.clone()
        };
        let (id, _) = remove_wrinkles(x, &seg, &gen, &over).map_err(|e| e.to_string())?;
        ensure(id == *x, || {
            format!("image {i}: empty override is not the identity")
        })?;

        // Predicted and overridden masks: changes stay inside the dilated mask.
        let predicted = predict_mask(x, &seg, &opts).map_err(|e| e.to_string())?;
        let (out, fin) = remove_wrinkles(x, &seg, &gen, &opts).map_err(|e| e.to_string())?;
        ensure(fin == predicted, || {
            "returned mask differs from the dilated prediction".into()
        })?;
        untouched(x, &out, &fin)?;
        let over = PipelineOptions {
            mask_override: Some(t.sample.wrinkle_mask.clone()),
            ..opts.clone()
        };
        let (out, fin) = remove_wrinkles(x, &seg, &gen, &over).map_err(|e| e.to_string())?;
        ensure(fin == t.sample.wrinkle_mask.dilate(opts.dilate_px), || {
            "override not dilated".into()
        })?;
        untouched(x, &out, &fin)?;
        checked += 1;
    }
    Ok(format!("{checked} toy images checked pixel by pixel"))
}
