//! Analytic gradients against central finite differences on 8x8 inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrinkle_core::features::FeatureExtractor;
use wrinkle_core::inpaint::{DiscConfig, Discriminator, PatchDiscriminator};
use wrinkle_core::losses::{
    dice_loss_var, disc_feature_matching_var, ffl_var, gen_adv_loss_var, hrfpl_var,
    wrinkle_loss_var,
};
use wrinkle_core::nn::Binder;
use wrinkle_core::segnet::{SegModel, SegModelConfig};
use wrinkle_core::{Tape, Tensor, Var};

use crate::common::ensure;

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;

type Loss<'a> = dyn Fn(&mut Tape, Var) -> Var + 'a;

fn analytic(f: &Loss, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.variable(x.clone());
    let l = f(&mut tape, v);
    let grads = tape.backward(l).unwrap();
    grads
        .get(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()))
}

fn value(f: &Loss, x: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let l = f(&mut tape, v);
    tape.value(l).item()
}

fn numeric(f: &Loss, x: &Tensor) -> Vec<f64> {
    (0..x.numel())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += H;
            let mut m = x.clone();
            m.data_mut()[i] -= H;
            (value(f, &p) - value(f, &m)) / (2.0 * H)
        })
        .collect()
}

/// Relative error `|a - n| / |n|` over the whole gradient; `scale` maps the
/// numeric gradient onto the analytic one.
fn check(name: &str, f: &Loss, x: &Tensor, scale: f64) -> Result<f64, String> {
    let a = analytic(f, x);
    let n: Vec<f64> = numeric(f, x).into_iter().map(|v| v * scale).collect();
    let norm = n.iter().map(|v| v * v).sum::<f64>().sqrt();
    ensure(norm > 1e-9, || format!("{name}: numeric gradient vanishes"))?;
    let diff = a
        .data()
        .iter()
        .zip(&n)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let rel = diff / norm;
    ensure(rel < TOL, || format!("{name}: relative error {rel:.2e}"))?;
    Ok(rel)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// One stride-2 stage with 2x2 kernels: receptive field 6, so 8x8 inputs fit.
fn small_disc() -> PatchDiscriminator {
    PatchDiscriminator::new(DiscConfig {
        base_channels: 3,
        n_layers: 1,
        kernel: 2,
        seed: 11,
    })
    .unwrap()
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = [1, 3, 8, 8];
    let mut worst: f64 = 0.0;

    let target = Tensor::new(
        &[1, 1, 8, 8],
        (0..64).map(|_| rng.random_range(0..2) as f64).collect(),
    )
    .unwrap();
    let pred = rand_tensor(&mut rng, &[1, 1, 8, 8], 0.05, 0.95);
    let dice = |t: &mut Tape, v: Var| {
        let m = t.constant(target.clone());
        dice_loss_var(t, m, v).unwrap()
    };
    worst = worst.max(check("dice", &dice, &pred, 1.0)?);

    let x = rand_tensor(&mut rng, &img, 0.0, 1.0);
    let x_hat = rand_tensor(&mut rng, &img, 0.0, 1.0);
    let wrinkles = Tensor::new(
        &[1, 1, 8, 8],
        (0..64)
            .map(|_| (rng.random::<f64>() < 0.3) as u8 as f64)
            .collect(),
    )
    .unwrap();
    let phi = FeatureExtractor::Identity;
    let hrfpl = |t: &mut Tape, v: Var| {
        let a = t.constant(x.clone());
        hrfpl_var(t, &phi, a, v, &wrinkles).unwrap()
    };
    worst = worst.max(check("hrfpl", &hrfpl, &x_hat, 1.0)?);

    // With w frozen the gradient of Σ w |D|² is 2|D|² d|D|, two thirds of the
    // gradient of the unfrozen Σ |D|³.
    let ffl = |t: &mut Tape, v: Var| {
        let a = t.constant(x.clone());
        ffl_var(t, a, v).unwrap()
    };
    worst = worst.max(check("ffl", &ffl, &x_hat, 2.0 / 3.0)?);

    let d = small_disc();
    let dpl = |t: &mut Tape, v: Var| {
        let mut b = Binder::frozen();
        let a = t.constant(x.clone());
        let real = d.forward(t, &mut b, a).unwrap().features;
        let fake = d.forward(t, &mut b, v).unwrap().features;
        disc_feature_matching_var(t, &real, &fake).unwrap()
    };
    worst = worst.max(check("disc_feature_matching", &dpl, &x_hat, 1.0)?);

    let seg = SegModel::new(SegModelConfig {
        encoder_depth: 2,
        base_channels: 3,
        seed: 5,
    })
    .unwrap();
    let ws = |t: &mut Tape, v: Var| wrinkle_loss_var(t, &seg, v).unwrap();
    worst = worst.max(check("wrinkle_loss", &ws, &x_hat, 1.0)?);

    let lg = |t: &mut Tape, v: Var| {
        let mut b = Binder::frozen();
        let out = d.forward(t, &mut b, v).unwrap();
        gen_adv_loss_var(t, out.logits)
    };
    worst = worst.max(check("L_G", &lg, &x_hat, 1.0)?);

    Ok(format!("6 gradients, worst relative error {worst:.2e}"))
}
