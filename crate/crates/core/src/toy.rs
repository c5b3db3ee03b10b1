//! Synthetic data: a smooth periodic "skin" texture with dark line wrinkles.
//!
//! Every wrinkle pixel is darkened by a fixed factor, so the clean image is
//! known exactly and the annotation is pixel-perfect.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, Mask, Sample};
use crate::maskgen::rasterize_polyline;
use crate::math::derive_seed;

/// Wrinkle pixels are multiplied by this.
pub const WRINKLE_DARKEN: f64 = 0.55;

pub struct ToySample {
    pub sample: Sample,
    pub clean: Image,
}

fn texture(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let base = [
        rng.random_range(0.70..0.85),
        rng.random_range(0.52..0.64),
        rng.random_range(0.42..0.54),
    ];
    // Periods divide common crop sizes so crops stay periodic too.
    let periods = [8.0, 16.0];
    let px = periods[rng.random_range(0..2)];
    let py = periods[rng.random_range(0..2)];
    let (phx, phy) = (
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    );
    let amp = rng.random_range(0.04..0.08);
    Image::from_fn(size, size, |c, y, x| {
        let t = libm::sin(2.0 * PI * x as f64 / px + phx)
            * libm::sin(2.0 * PI * y as f64 / py + phy)
            + 0.5 * libm::cos(2.0 * PI * (x + y) as f64 / 16.0);
        (base[c] + amp * t * (1.0 - 0.2 * c as f64)).clamp(0.0, 1.0)
    })
    .expect("texture is a valid image")
}

fn wrinkles(rng: &mut ChaCha8Rng, size: usize) -> Mask {
    let mut m = Mask::zeros(size, size);
    let n = rng.random_range(1..=3);
    let s = size as f64;
    for _ in 0..n {
        let y0 = rng.random_range(0.15 * s..0.85 * s);
        let x0 = rng.random_range(0.1 * s..0.5 * s);
        let len = rng.random_range(0.3 * s..0.5 * s);
        let angle = rng.random_range(-0.5..0.5);
        let bend = rng.random_range(-0.1 * s..0.1 * s);
        let mid = (
            y0 + 0.5 * len * libm::sin(angle) + bend,
            x0 + 0.5 * len * libm::cos(angle),
        );
        let end = (y0 + len * libm::sin(angle), x0 + len * libm::cos(angle));
        for p in rasterize_polyline(&[(y0, x0), mid, end], 1.2, size, size) {
            m.set(p / size, p % size, true);
        }
    }
    m
}

/// One `size x size` sample with its wrinkle-free counterpart.
pub fn toy_sample(size: usize, seed: u64) -> ToySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = texture(&mut rng, size);
    let mask = wrinkles(&mut rng, size);
    let plane = size * size;
    let data: Vec<f64> = (0..3 * plane)
        .map(|i| {
            let v = clean.data()[i];
            if mask.data()[i % plane] == 1 {
                v * WRINKLE_DARKEN
            } else {
                v
            }
        })
        .collect();
    let image = Image::new(size, size, data).expect("darkened texture stays in range");
    let sample = Sample::new(alloc::format!("toy{seed:04}"), image, mask).expect("dims agree");
    ToySample { sample, clean }
}

/// `n` samples with seeds derived from `seed`.
pub fn toy_set(n: usize, size: usize, seed: u64) -> Vec<ToySample> {
    (0..n)
        .map(|i| toy_sample(size, derive_seed(seed, &[i as u64])))
        .collect()
}

pub fn toy_samples(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    toy_set(n, size, seed)
        .into_iter()
        .map(|t| t.sample)
        .collect()
}
