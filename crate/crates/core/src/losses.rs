//! Training objectives.
//!
//! Every loss has a tape form (used by the trainers) and most have a plain
//! value form for reporting and tests.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::{Mask, ProbMap};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::fft;
use crate::inpaint::Discriminator;
use crate::kernels;
use crate::nn::{Binder, Module};
use crate::segnet::SegModel;
use crate::tensor::Tensor;

pub const DICE_EPS: f64 = 1e-6;
pub const LOG_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub adv: f64,
    pub hrfpl: f64,
    pub discpl: f64,
    pub r1: f64,
    pub ffl: f64,
    pub wrinkle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            adv: 10.0,
            hrfpl: 30.0,
            discpl: 100.0,
            r1: 0.001,
            ffl: 1.0,
            wrinkle: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(alloc::format!(
                    "loss weight {name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("adv", self.adv),
            ("hrfpl", self.hrfpl),
            ("discpl", self.discpl),
            ("r1", self.r1),
            ("ffl", self.ffl),
            ("wrinkle", self.wrinkle),
        ]
    }
}

/// Unweighted values of every term for one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub adv: f64,
    pub hrfpl: f64,
    pub discpl: f64,
    pub r1: f64,
    pub ffl: f64,
    pub wrinkle: f64,
}

impl LossTerms {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("adv", self.adv),
            ("hrfpl", self.hrfpl),
            ("discpl", self.discpl),
            ("r1", self.r1),
            ("ffl", self.ffl),
            ("wrinkle", self.wrinkle),
        ]
    }

    pub fn breakdown(&self) -> String {
        let parts: Vec<String> = self
            .named()
            .iter()
            .map(|(n, v)| alloc::format!("{n}={v}"))
            .collect();
        parts.join(", ")
    }
}

/// Weighted sum of the terms; the first non-finite term is named in the error.
pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for ((name, v), (_, lambda)) in terms.named().into_iter().zip(w.named()) {
        if !v.is_finite() {
            return Err(Error::NonFiniteTerm(name));
        }
        total += lambda * v;
    }
    Ok(total)
}

/// `1 - (2 sum(m p) + eps) / (sum(m^2) + sum(p^2) + eps)`, pooled over the batch.
pub fn dice_loss_var(tape: &mut Tape, target: Var, pred: Var) -> Result<Var> {
    let inter = tape.mul(target, pred)?;
    let inter = tape.sum(inter);
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, DICE_EPS);
    let t2 = tape.mul(target, target)?;
    let t2 = tape.sum(t2);
    let p2 = tape.mul(pred, pred)?;
    let p2 = tape.sum(p2);
    let den = tape.add(t2, p2)?;
    let den = tape.add_scalar(den, DICE_EPS);
    let ratio = tape.div(num, den)?;
    Ok(tape.one_minus(ratio))
}

pub fn dice_loss(m: &ProbMap, m_hat: &ProbMap) -> Result<f64> {
    if (m.height(), m.width()) != (m_hat.height(), m_hat.width()) {
        return Err(Error::DimMismatch {
            left_h: m.height(),
            left_w: m.width(),
            right_h: m_hat.height(),
            right_w: m_hat.width(),
        });
    }
    let mut tape = Tape::new();
    let a = tape.constant(m.to_tensor());
    let b = tape.constant(m_hat.to_tensor());
    let l = dice_loss_var(&mut tape, a, b)?;
    Ok(tape.value(l).item())
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::invalid("no feature layers to average"))?;
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

/// Mean of `(a - b)^2 * weight` over every element; `weight` is `[N,1,H,W]` or absent.
fn weighted_mse(tape: &mut Tape, a: Var, b: Var, weight: Option<&Tensor>) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    let sq = match weight {
        Some(wt) => {
            let c = tape.value(a).dims4()?.1;
            let wv = tape.constant(wt.clone());
            let wv = tape.broadcast_channels(wv, c)?;
            tape.mul(sq, wv)?
        }
        None => sq,
    };
    Ok(tape.mean(sq))
}

/// Perceptual loss on frozen features with wrinkle pixels excluded: per
/// layer, the mean of squared feature differences weighted by
/// `1 - resize(m_w)`, then averaged over layers.
pub fn hrfpl_var(
    tape: &mut Tape,
    phi: &FeatureExtractor,
    x: Var,
    x_hat: Var,
    wrinkles: &Tensor,
) -> Result<Var> {
    let fx = phi.features(tape, x)?;
    let fy = phi.features(tape, x_hat)?;
    let keep = wrinkles.map(|v| 1.0 - v);
    let mut per_layer = Vec::with_capacity(fx.len());
    for (&a, &b) in fx.iter().zip(&fy) {
        let (_, _, h, w) = tape.value(a).dims4()?;
        let wt = kernels::resize_nearest(&keep, h, w)?;
        per_layer.push(weighted_mse(tape, a, b, Some(&wt))?);
    }
    mean_of(tape, &per_layer)
}

pub fn hrfpl(phi: &FeatureExtractor, x: &Tensor, x_hat: &Tensor, wrinkles: &Mask) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(x_hat.clone());
    let l = hrfpl_var(&mut tape, phi, a, b, &wrinkles.to_tensor())?;
    Ok(tape.value(l).item())
}

/// Discriminator loss: real patches labelled 1, fake patches labelled 0
/// where the hole mask is set and 1 elsewhere.
/// `-mean log D(x) - mean[(1-m) log D(x^)] - mean[m log(1 - D(x^))]`
/// with `m` resized (nearest) to the score grid.
pub fn disc_loss_var(
    tape: &mut Tape,
    real_logits: Var,
    fake_logits: Var,
    hole: &Tensor,
) -> Result<Var> {
    let (_, _, h, w) = tape.value(fake_logits).dims4()?;
    let m = kernels::resize_nearest(hole, h, w)?;
    let keep = tape.constant(m.map(|v| 1.0 - v));
    let m = tape.constant(m);
    let pr = tape.sigmoid(real_logits);
    let lr = tape.log(pr, LOG_EPS);
    let real = tape.mean(lr);
    let pf = tape.sigmoid(fake_logits);
    let lf = tape.log(pf, LOG_EPS);
    let lf = tape.mul(lf, keep)?;
    let fake_real = tape.mean(lf);
    let qf = tape.one_minus(pf);
    let lq = tape.log(qf, LOG_EPS);
    let lq = tape.mul(lq, m)?;
    let fake_fake = tape.mean(lq);
    let s = tape.add(real, fake_real)?;
    let s = tape.add(s, fake_fake)?;
    Ok(tape.scale(s, -1.0))
}

/// Generator adversarial loss `-mean log D(x^)`.
pub fn gen_adv_loss_var(tape: &mut Tape, fake_logits: Var) -> Var {
    let p = tape.sigmoid(fake_logits);
    let l = tape.log(p, LOG_EPS);
    let m = tape.mean(l);
    tape.scale(m, -1.0)
}

/// `(L_D, L_G)` for a discriminator on real `x`, generated `x_hat` and hole mask `m`.
pub fn adversarial_losses(
    d: &dyn Discriminator,
    x: &Tensor,
    x_hat: &Tensor,
    m: &Tensor,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let mut binder = Binder::frozen();
    let xr = tape.constant(x.clone());
    let xf = tape.constant(x_hat.clone());
    let real = d.forward(&mut tape, &mut binder, xr)?;
    let fake = d.forward(&mut tape, &mut binder, xf)?;
    let ld = disc_loss_var(&mut tape, real.logits, fake.logits, m)?;
    let lg = gen_adv_loss_var(&mut tape, fake.logits);
    Ok((tape.value(ld).item(), tape.value(lg).item()))
}

/// Gradient of the summed logits w.r.t. the input, with `D` frozen.
fn input_grad(d: &dyn Discriminator, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut binder = Binder::frozen();
    let xv = tape.variable(x.clone());
    let out = d.forward(&mut tape, &mut binder, xv)?;
    let s = tape.sum(out.logits);
    let mut g = tape.backward(s)?;
    Ok(g.take(xv).unwrap_or_else(|| Tensor::zeros(x.shape())))
}

fn per_sample_sq_mean(g: &Tensor) -> Result<f64> {
    let n = g.dims4()?.0;
    let per = g.numel() / n;
    Ok(g.data()
        .chunks(per)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n as f64)
}

/// R1 gradient penalty on real images: batch mean of `||grad_x sum D(x)||^2`,
/// taken on the raw scores.
pub fn r1_penalty(d: &dyn Discriminator, x: &Tensor) -> Result<f64> {
    per_sample_sq_mean(&input_grad(d, x)?)
}

/// R1 value and its gradient w.r.t. the discriminator parameters.
///
/// The parameter gradient is a Hessian-vector product, evaluated as a
/// central difference of parameter gradients along the input gradient `g`:
/// `(2/N) d/dθ <g, grad_x S> ≈ (1/(N ε)) [∇θ S(x + ε g) - ∇θ S(x - ε g)]`.
pub fn r1_with_param_grads<D: Discriminator + Module>(
    d: &D,
    x: &Tensor,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let g = input_grad(d, x)?;
    let value = per_sample_sq_mean(&g)?;
    let n = g.dims4()?.0 as f64;
    let rms = crate::math::sqrt(g.sq_norm() / g.numel() as f64);
    let eps = 1e-3 / (rms + 1e-12);
    let param_grads = |sign: f64| -> Result<BTreeMap<String, Tensor>> {
        let shifted = x.zip_map(&g, |a, b| a + sign * eps * b);
        let mut tape = Tape::new();
        let mut binder = Binder::trainable();
        let xv = tape.constant(shifted);
        let out = d.forward(&mut tape, &mut binder, xv)?;
        let s = tape.sum(out.logits);
        Ok(binder.collect(&tape.backward(s)?))
    };
    let plus = param_grads(1.0)?;
    let minus = param_grads(-1.0)?;
    let grads = plus
        .into_iter()
        .map(|(name, p)| {
            let m = &minus[&name];
            let v = p.zip_map(m, |a, b| (a - b) / (n * eps));
            (name, v)
        })
        .collect();
    Ok((value, grads))
}

/// Feature matching on discriminator activations: per layer mean squared
/// difference, averaged over layers. `real` is treated as a constant.
pub fn disc_feature_matching_var(tape: &mut Tape, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::shape("disc_feature_matching", "layer count differs"));
    }
    let mut per_layer = Vec::with_capacity(real.len());
    for (&r, &f) in real.iter().zip(fake) {
        let r = tape.detach(r);
        per_layer.push(weighted_mse(tape, r, f, None)?);
    }
    mean_of(tape, &per_layer)
}

pub fn disc_feature_matching(d: &dyn Discriminator, x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let mut binder = Binder::frozen();
    let a = tape.constant(x.clone());
    let b = tape.constant(x_hat.clone());
    let fa = d.forward(&mut tape, &mut binder, a)?.features;
    let fb = d.forward(&mut tape, &mut binder, b)?.features;
    let l = disc_feature_matching_var(&mut tape, &fa, &fb)?;
    Ok(tape.value(l).item())
}

/// Focal frequency loss: the spectrum error `|F(x) - F(x^)|^2` weighted by
/// its own (detached) magnitude, averaged over frequencies, channels and batch.
pub fn ffl_var(tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let d = tape.sub(x, x_hat)?;
    let spec = tape.rfft2(d)?;
    let re = tape.narrow(spec, 0, c)?;
    let im = tape.narrow(spec, c, c)?;
    let re2 = tape.mul(re, re)?;
    let im2 = tape.mul(im, im)?;
    let power = tape.add(re2, im2)?;
    let wf = fft::half_width(w);
    let scale = 1.0 / ((h * w) as f64 * (n * c) as f64);
    let weights = {
        let p = tape.value(power);
        let mut out = p.map(crate::math::sqrt);
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= fft::column_multiplicity(i % wf, w) * scale;
        }
        out
    };
    let weights = tape.constant(weights);
    let weighted = tape.mul(power, weights)?;
    Ok(tape.sum(weighted))
}

pub fn ffl(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(x_hat.clone());
    let l = ffl_var(&mut tape, a, b)?;
    Ok(tape.value(l).item())
}

/// Mean wrinkle probability the frozen segmenter assigns to `x_hat`.
pub fn wrinkle_loss_var(tape: &mut Tape, seg: &SegModel, x_hat: Var) -> Result<Var> {
    let mut binder = Binder::frozen();
    let logits = seg.forward(tape, &mut binder, x_hat)?;
    let p = tape.sigmoid(logits);
    Ok(tape.mean(p))
}

pub fn wrinkle_loss(seg: &SegModel, x_hat: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(x_hat.clone());
    let l = wrinkle_loss_var(&mut tape, seg, v)?;
    Ok(tape.value(l).item())
}
