//! Losses and metrics against direct arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrinkle_core::eval::compute_fid;
use wrinkle_core::losses::{dice_loss, ffl, total_loss, LossTerms, LossWeights, DICE_EPS};
use wrinkle_core::segnet::iou;
use wrinkle_core::{Mask, ProbMap, Tensor};

use crate::common::{close, ensure};

const TOL: f64 = 1e-6;

fn dice_oracle(m: &[f64], p: &[f64]) -> f64 {
    let (mut inter, mut mm, mut pp) = (0.0, 0.0, 0.0);
    for (a, b) in m.iter().zip(p) {
        inter += a * b;
        mm += a * a;
        pp += b * b;
    }
    1.0 - (2.0 * inter + DICE_EPS) / (mm + pp + DICE_EPS)
}

fn dice(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let pm = |v: &[f64]| ProbMap::new(1, v.len(), v.to_vec()).unwrap();
    close(
        "dice [1,1,0,0] vs [1,0,1,0]",
        dice_loss(&pm(&[1., 1., 0., 0.]), &pm(&[1., 0., 1., 0.])).unwrap(),
        0.5,
        TOL,
    )?;
    close(
        "dice identical",
        dice_loss(&pm(&[1., 0., 1., 1.]), &pm(&[1., 0., 1., 1.])).unwrap(),
        0.0,
        TOL,
    )?;
    close(
        "dice disjoint",
        dice_loss(&pm(&[1., 1., 0., 0.]), &pm(&[0., 0., 1., 1.])).unwrap(),
        1.0,
        TOL,
    )?;
    for _ in 0..20 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let m: Vec<f64> = (0..h * w).map(|_| rng.random_range(0..2) as f64).collect();
        let p: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let got = dice_loss(
            &ProbMap::new(h, w, m.clone()).unwrap(),
            &ProbMap::new(h, w, p.clone()).unwrap(),
        )
        .unwrap();
        close("dice random", got, dice_oracle(&m, &p), TOL)?;
    }
    Ok(())
}

fn iou_check(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let mk = |v: &[u8]| Mask::new(1, v.len(), v.to_vec()).unwrap();
    close(
        "iou [1,1,0,0] vs [1,0,1,0]",
        iou(&mk(&[1, 1, 0, 0]), &mk(&[1, 0, 1, 0])).unwrap(),
        1.0 / 3.0,
        TOL,
    )?;
    close(
        "iou empty/empty",
        iou(&mk(&[0, 0]), &mk(&[0, 0])).unwrap(),
        1.0,
        TOL,
    )?;
    for _ in 0..20 {
        let n = rng.random_range(1..200);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let inter = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| **x == 1 && **y == 1)
            .count();
        let union = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| **x == 1 || **y == 1)
            .count();
        let want = if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
        close("iou random", iou(&mk(&a), &mk(&b)).unwrap(), want, TOL)?;
    }
    Ok(())
}

/// Direct O(H²W²) evaluation: per plane `(1/HW) Σ |D(u,v)|³` with `D` the
/// unnormalized DFT of `x - x_hat`, averaged over planes.
fn ffl_oracle(x: &Tensor, y: &Tensor) -> f64 {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let tau = std::f64::consts::TAU;
    let mut total = 0.0;
    for p in 0..planes {
        let d =
            |i: usize, j: usize| x.data()[p * h * w + i * w + j] - y.data()[p * h * w + i * w + j];
        let mut sum = 0.0;
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let ang = -tau * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        re += d(i, j) * ang.cos();
                        im += d(i, j) * ang.sin();
                    }
                }
                sum += (re * re + im * im).powf(1.5);
            }
        }
        total += sum / (h * w) as f64;
    }
    total / planes as f64
}

fn ffl_check(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let x = Tensor::new(&[1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
    let z = Tensor::zeros(&[1, 1, 1, 2]);
    close("ffl 1x2 hand example", ffl(&x, &z).unwrap(), 1.0, TOL)?;
    close("ffl identical", ffl(&x, &x).unwrap(), 0.0, TOL)?;
    for &(n, c, h, w) in &[(1, 3, 4, 4), (2, 3, 5, 6), (1, 2, 7, 3), (1, 1, 8, 8)] {
        let mut r = || {
            Tensor::new(
                &[n, c, h, w],
                (0..n * c * h * w).map(|_| rng.random::<f64>()).collect(),
            )
            .unwrap()
        };
        let (a, b) = (r(), r());
        close(
            &format!("ffl {n}x{c}x{h}x{w}"),
            ffl(&a, &b).unwrap(),
            ffl_oracle(&a, &b),
            TOL,
        )?;
    }
    Ok(())
}

fn moments2(set: &[Vec<f64>]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = set.len() as f64;
    let mu = [0, 1].map(|k| set.iter().map(|v| v[k]).sum::<f64>() / n);
    let mut cov = [[0.0; 2]; 2];
    for v in set {
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += (v[i] - mu[i]) * (v[j] - mu[j]) / (n - 1.0);
            }
        }
    }
    (mu, cov)
}

/// Closed form in two dimensions: for PSD `A`, `B` the eigenvalues of `AB`
/// are real and non-negative, so `tr √(AB) = √(tr AB + 2 √det(AB))`.
fn fid2_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ma, ca) = moments2(a);
    let (mb, cb) = moments2(b);
    let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let tr_ab = (0..2)
        .map(|i| (0..2).map(|k| ca[i][k] * cb[k][i]).sum::<f64>())
        .sum::<f64>();
    let tr_sqrt = (tr_ab + 2.0 * (det(ca) * det(cb)).max(0.0).sqrt()).sqrt();
    let dmu = (ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2);
    dmu + ca[0][0] + ca[1][1] + cb[0][0] + cb[1][1] - 2.0 * tr_sqrt
}

fn fid_check(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let tol = 1e-3;
    // One dimension: (μa - μb)² + (σa - σb)².
    let a: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| vec![v]).collect();
    let b: Vec<Vec<f64>> = [2.0, 4.0, 6.0, 8.0].iter().map(|&v| vec![v]).collect();
    let var_a: f64 = 5.0 / 3.0;
    close(
        "fid 1-D",
        compute_fid(&a, &b).unwrap(),
        2.5f64.powi(2) + var_a,
        tol,
    )?;
    for trial in 0..10 {
        let n = rng.random_range(5..40);
        let mut gen = |s: f64, t: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let (u, v): (f64, f64) =
                        (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    vec![s * u + t, s * (0.5 * u + v) - t]
                })
                .collect()
        };
        let (a, b) = (
            gen(1.0, 0.0),
            gen(1.0 + trial as f64 * 0.3, 0.2 * trial as f64),
        );
        close(
            "fid 2-D",
            compute_fid(&a, &b).unwrap(),
            fid2_oracle(&a, &b),
            tol,
        )?;
    }
    // Scaled copy in many dimensions: Σb = c² Σa, so tr √(Σa Σb) = c tr Σa.
    let d = 6;
    let a: Vec<Vec<f64>> = (0..30)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let (c, t) = (1.7, 0.4);
    let b: Vec<Vec<f64>> = a
        .iter()
        .map(|v| v.iter().map(|x| c * x + t).collect())
        .collect();
    let (mean, _) = (0..d).fold((vec![0.0; d], ()), |(mut m, _), k| {
        m[k] = a.iter().map(|v| v[k]).sum::<f64>() / a.len() as f64;
        (m, ())
    });
    let tr_a: f64 = (0..d)
        .map(|k| a.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / (a.len() - 1) as f64)
        .sum();
    let dmu: f64 = mean.iter().map(|m| ((c - 1.0) * m + t).powi(2)).sum();
    close(
        "fid scaled copy",
        compute_fid(&a, &b).unwrap(),
        dmu + (1.0 - c).powi(2) * tr_a,
        tol,
    )?;
    Ok(())
}

fn total_check(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let zero = LossWeights {
        adv: 0.0,
        hrfpl: 0.0,
        discpl: 0.0,
        r1: 0.0,
        ffl: 0.0,
        wrinkle: 0.0,
    };
    let terms = LossTerms {
        adv: 2.0,
        hrfpl: 5.0,
        discpl: 1.0,
        r1: 9.0,
        ffl: 4.0,
        wrinkle: 3.0,
    };
    close(
        "total all-zero weights",
        total_loss(&terms, &zero).unwrap(),
        0.0,
        TOL,
    )?;
    let single = LossWeights {
        adv: 3.0,
        ..zero.clone()
    };
    let lone = LossTerms {
        adv: 2.0,
        ..LossTerms::default()
    };
    close(
        "total single term",
        total_loss(&lone, &single).unwrap(),
        6.0,
        TOL,
    )?;
    for _ in 0..50 {
        let t: [f64; 6] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        let w: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..100.0));
        let terms = LossTerms {
            adv: t[0],
            hrfpl: t[1],
            discpl: t[2],
            r1: t[3],
            ffl: t[4],
            wrinkle: t[5],
        };
        let weights = LossWeights {
            adv: w[0],
            hrfpl: w[1],
            discpl: w[2],
            r1: w[3],
            ffl: w[4],
            wrinkle: w[5],
        };
        let want: f64 = t.iter().zip(&w).map(|(a, b)| a * b).sum();
        close(
            "total random",
            total_loss(&terms, &weights).unwrap(),
            want,
            TOL,
        )?;
    }
    let bad = LossTerms {
        ffl: f64::NAN,
        ..terms
    };
    let err = total_loss(&bad, &LossWeights::default())
        .err()
        .map(|e| e.to_string())
        .unwrap_or_default();
    ensure(err.contains("ffl"), || {
        format!("non-finite term not named: `{err}`")
    })
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    dice(&mut rng)?;
    iou_check(&mut rng)?;
    ffl_check(&mut rng)?;
    fid_check(&mut rng)?;
    total_check(&mut rng)?;
    Ok("dice, iou, ffl, fid, total_loss match their oracles".into())
}
