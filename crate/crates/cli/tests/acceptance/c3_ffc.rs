//! Fourier round trip, the zero-global limit of an FFC, and generator sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrinkle_core::fft::{irfft2, rfft2};
use wrinkle_core::inpaint::{inpaint_forward, Ffc, GeneratorConfig, InpaintGenerator};
use wrinkle_core::kernels::{conv2d, ConvGeom};
use wrinkle_core::nn::{Binder, RELU_GAIN};
use wrinkle_core::{Image, Mask, Tape, Tensor};

use crate::common::ensure;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_rel(a: &Tensor, b: &Tensor) -> f64 {
    let scale = b
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
        / scale
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for shape in [[2, 3, 16, 12], [1, 2, 9, 7], [1, 1, 64, 64], [1, 4, 5, 1]] {
        let x = rand_tensor(&mut rng, &shape);
        let back = irfft2(&rfft2(&x).unwrap(), shape[3]).unwrap();
        let err = max_rel(&back, &x);
        ensure(err < 1e-5, || {
            format!("FFT round trip {shape:?}: {err:.2e}")
        })?;
    }

    for (local, global) in [(3, 2), (8, 8), (1, 5)] {
        let mut ffc = Ffc::new(
            "f",
            local,
            global,
            RELU_GAIN,
            &mut ChaCha8Rng::seed_from_u64(local as u64),
        );
        ffc.zero_global();
        let xl = rand_tensor(&mut rng, &[2, local, 10, 12]);
        let xg = rand_tensor(&mut rng, &[2, global, 10, 12]);
        let mut tape = Tape::new();
        let (vl, vg) = (tape.constant(xl.clone()), tape.constant(xg));
        let (yl, yg) = ffc
            .forward(&mut tape, &mut Binder::frozen(), vl, vg)
            .unwrap();
        let plain = conv2d(
            &xl,
            &ffc.l2l.weight,
            ffc.l2l.bias.as_ref(),
            ConvGeom::new(3, 1, 1, 1),
        )
        .unwrap();
        let err = max_rel(tape.value(yl), &plain);
        ensure(err < 1e-6, || {
            format!("zeroed global branch ({local},{global}) differs from conv by {err:.2e}")
        })?;
        ensure(
            tape.value(yg).data().iter().all(|v| v.abs() < 1e-12),
            || "global output not zero".into(),
        )?;
    }

    let g = InpaintGenerator::new(GeneratorConfig {
        base_channels: 8,
        ..GeneratorConfig::default()
    })
    .unwrap();
    for size in [256, 512] {
        let x = Image::from_fn(size, size, |c, y, x| {
            ((c + y * 3 + x * 5) % 17) as f64 / 16.0
        })
        .unwrap();
        let m = Mask::from_fn(size, size, |y, x| (y / 16 + x / 16) % 5 == 0);
        let out =
            inpaint_forward(&g, &x, &m).map_err(|e| format!("{size}px input rejected: {e}"))?;
        ensure((out.height(), out.width()) == (size, size), || {
            format!("{size}px input gave {}x{}", out.height(), out.width())
        })?;
    }
    Ok("FFT round trip, zero-global FFC and 256/512 generator shapes".into())
}
