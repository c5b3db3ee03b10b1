//! Adversarial training of the inpainting generator.
//!
//! Each step builds hole masks on the fly (annotated wrinkles plus random
//! strokes), takes one discriminator step and then one generator step. The
//! segmentation model only supplies the wrinkle loss and is never updated.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::{augment, AugmentConfig, Image, Mask, Sample};
use crate::error::{Error, Result};
use crate::eval;
use crate::features::FeatureExtractor;
use crate::inpaint::{
    self, composite_var, stack_input, DiscConfig, Discriminator, GeneratorConfig, InpaintGenerator,
    PatchDiscriminator,
};
use crate::losses::{self, LossTerms, LossWeights};
use crate::maskgen::{build_inpaint_mask, generate_polyline_mask, synth_eval_masks, MaskPolicy};
use crate::math::derive_seed;
use crate::nn::{Binder, Module};
use crate::optim::{Adam, AdamConfig};
use crate::segnet::SegModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintTrainConfig {
    pub epochs: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub batch_size: usize,
    pub crop_size: usize,
    pub seed: u64,
    pub mask_policy: MaskPolicy,
    pub weights: LossWeights,
    /// Frozen segmentation checkpoint feeding the wrinkle loss.
    pub seg_checkpoint: Option<String>,
    /// Validate every this many epochs (the last epoch always validates).
    pub val_every: usize,
}

impl Default for InpaintTrainConfig {
    fn default() -> Self {
        InpaintTrainConfig {
            epochs: 300,
            lr_gen: 1e-4,
            lr_disc: 1e-4,
            batch_size: 16,
            crop_size: 256,
            seed: 0,
            mask_policy: MaskPolicy::default(),
            weights: LossWeights::default(),
            seg_checkpoint: None,
            val_every: 10,
        }
    }
}

impl InpaintTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::invalid(
                "epochs, batch_size and val_every must be at least 1",
            ));
        }
        if self.crop_size == 0 || self.crop_size % 8 != 0 {
            return Err(Error::invalid(alloc::format!(
                "crop_size {} must be a positive multiple of 8",
                self.crop_size
            )));
        }
        if !(self.lr_gen > 0.0 && self.lr_disc > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        self.mask_policy.validate()?;
        self.weights.validate()
    }
}

/// Tensors for one step: images, wrinkle masks, hole masks and generator input.
pub struct PreparedBatch {
    pub images: Tensor,
    pub wrinkles: Tensor,
    pub holes: Tensor,
    pub input: Tensor,
}

impl PreparedBatch {
    /// Draw stroke masks for every sample and union them with the wrinkles.
    pub fn new(batch: &[Sample], policy: &MaskPolicy, seed: u64) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut images = Vec::new();
        let mut wrinkles = Vec::new();
        let mut holes = Vec::new();
        let mut inputs = Vec::new();
        for (i, s) in batch.iter().enumerate() {
            let strokes = generate_polyline_mask(
                s.height(),
                s.width(),
                policy,
                derive_seed(seed, &[i as u64]),
            )?;
            let hole = build_inpaint_mask(&s.wrinkle_mask, &strokes)?;
            images.push(s.image.to_tensor());
            wrinkles.push(s.wrinkle_mask.to_tensor());
            inputs.push(stack_input(&s.image, &hole)?);
            holes.push(hole.to_tensor());
        }
        Ok(PreparedBatch {
            images: Tensor::stack_batch(&images)?,
            wrinkles: Tensor::stack_batch(&wrinkles)?,
            holes: Tensor::stack_batch(&holes)?,
            input: Tensor::stack_batch(&inputs)?,
        })
    }
}

pub struct InpaintModels {
    pub generator: InpaintGenerator,
    pub discriminator: PatchDiscriminator,
}

impl InpaintModels {
    pub fn new(gen_cfg: GeneratorConfig, disc_cfg: DiscConfig) -> Result<Self> {
        Ok(InpaintModels {
            generator: InpaintGenerator::new(gen_cfg)?,
            discriminator: PatchDiscriminator::new(disc_cfg)?,
        })
    }
}

pub struct InpaintOptimizers {
    pub generator: Adam,
    pub discriminator: Adam,
}

impl InpaintOptimizers {
    pub fn new(cfg: &InpaintTrainConfig) -> Self {
        InpaintOptimizers {
            generator: Adam::new(AdamConfig::with_lr(cfg.lr_gen)),
            discriminator: Adam::new(AdamConfig::with_lr(cfg.lr_disc)),
        }
    }
}

/// Unweighted loss values of one step. `terms.adv` is `disc + gen_adv`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub terms: LossTerms,
    pub disc: f64,
    pub gen_adv: f64,
}

/// Composited generator output for a prepared batch, without gradients.
pub fn render_batch(generator: &InpaintGenerator, batch: &PreparedBatch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut binder = Binder::frozen();
    let (x, raw, _) = generator_pass(&mut tape, &mut binder, generator, batch)?;
    let out = raw_composite(&mut tape, x, raw, &batch.holes)?;
    Ok(tape.value(out).clone())
}

fn generator_pass(
    tape: &mut Tape,
    binder: &mut Binder,
    generator: &InpaintGenerator,
    batch: &PreparedBatch,
) -> Result<(Var, Var, Var)> {
    let x = tape.constant(batch.images.clone());
    let input = tape.constant(batch.input.clone());
    let raw = generator.forward(tape, binder, input)?;
    Ok((x, raw, input))
}

fn raw_composite(tape: &mut Tape, x: Var, raw: Var, holes: &Tensor) -> Result<Var> {
    let m = tape.constant(holes.clone());
    composite_var(tape, x, raw, m)
}

/// Generator objective and its gradients w.r.t. generator parameters.
/// Discriminator, segmenter and feature extractor are all frozen here.
pub fn generator_gradients(
    generator: &InpaintGenerator,
    disc: &dyn Discriminator,
    seg: Option<&SegModel>,
    phi: &FeatureExtractor,
    weights: &LossWeights,
    batch: &PreparedBatch,
) -> Result<(LossTerms, f64, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let mut gen_binder = Binder::trainable();
    let mut frozen = Binder::frozen();
    let (x, raw, _) = generator_pass(&mut tape, &mut gen_binder, generator, batch)?;
    let x_hat = raw_composite(&mut tape, x, raw, &batch.holes)?;

    let real = disc.forward(&mut tape, &mut frozen, x)?;
    let fake = disc.forward(&mut tape, &mut frozen, x_hat)?;
    let l_g = losses::gen_adv_loss_var(&mut tape, fake.logits);
    let l_hrfpl = losses::hrfpl_var(&mut tape, phi, x, x_hat, &batch.wrinkles)?;
    let l_discpl = losses::disc_feature_matching_var(&mut tape, &real.features, &fake.features)?;
    let l_ffl = losses::ffl_var(&mut tape, x, x_hat)?;
    let l_s = match seg {
        Some(s) => Some(losses::wrinkle_loss_var(&mut tape, s, x_hat)?),
        None if weights.wrinkle > 0.0 => {
            return Err(Error::invalid(
                "wrinkle loss weight > 0 needs a segmentation model",
            ))
        }
        None => None,
    };

    let mut parts = alloc::vec![
        (l_g, weights.adv),
        (l_hrfpl, weights.hrfpl),
        (l_discpl, weights.discpl),
        (l_ffl, weights.ffl),
    ];
    if let Some(l) = l_s {
        parts.push((l, weights.wrinkle));
    }
    let mut total: Option<Var> = None;
    for (v, lambda) in parts {
        if lambda == 0.0 {
            continue;
        }
        let s = tape.scale(v, lambda);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let terms = LossTerms {
        adv: 0.0,
        hrfpl: tape.value(l_hrfpl).item(),
        discpl: tape.value(l_discpl).item(),
        r1: 0.0,
        ffl: tape.value(l_ffl).item(),
        wrinkle: l_s.map_or(0.0, |l| tape.value(l).item()),
    };
    let gen_adv = tape.value(l_g).item();
    let grads = match total {
        Some(t) => gen_binder.collect(&tape.backward(t)?),
        None => BTreeMap::new(),
    };
    Ok((terms, gen_adv, grads))
}

/// Discriminator loss value and its parameter gradients on (real, fake).
fn discriminator_gradients(
    disc: &PatchDiscriminator,
    batch: &PreparedBatch,
    fake: &Tensor,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let mut binder = Binder::trainable();
    let xr = tape.constant(batch.images.clone());
    let xf = tape.constant(fake.clone());
    let real = disc.forward(&mut tape, &mut binder, xr)?;
    let fake = disc.forward(&mut tape, &mut binder, xf)?;
    let l_d = losses::disc_loss_var(&mut tape, real.logits, fake.logits, &batch.holes)?;
    let value = tape.value(l_d).item();
    Ok((value, binder.collect(&tape.backward(l_d)?)))
}

fn check_finite(log: &StepLog, values: &[(&'static str, f64)]) -> Result<()> {
    for &(term, v) in values {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term,
                step: log.step,
                breakdown: log.terms.breakdown(),
            });
        }
    }
    Ok(())
}

/// One discriminator step followed by one generator step.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    batch: &PreparedBatch,
    models: &mut InpaintModels,
    opt: &mut InpaintOptimizers,
    seg: Option<&SegModel>,
    phi: &FeatureExtractor,
    weights: &LossWeights,
    step: usize,
) -> Result<StepLog> {
    let mut log = StepLog {
        step,
        ..StepLog::default()
    };

    let fake = render_batch(&models.generator, batch)?;
    let (l_d, mut d_grads) = discriminator_gradients(&models.discriminator, batch, &fake)?;
    let (r1, r1_grads) = losses::r1_with_param_grads(&models.discriminator, &batch.images)?;
    log.disc = l_d;
    log.terms.r1 = r1;
    check_finite(&log, &[("disc", l_d), ("r1", r1)])?;
    if weights.r1 > 0.0 {
        for (name, g) in d_grads.iter_mut() {
            if let Some(extra) = r1_grads.get(name) {
                g.add_assign(&extra.scale(weights.r1));
            }
        }
    }
    opt.discriminator.step(&mut models.discriminator, &d_grads);

    let (terms, gen_adv, g_grads) = generator_gradients(
        &models.generator,
        &models.discriminator,
        seg,
        phi,
        weights,
        batch,
    )?;
    log.gen_adv = gen_adv;
    log.terms = LossTerms {
        adv: l_d + gen_adv,
        r1,
        ..terms
    };
    let named = log.terms.named();
    check_finite(&log, &named)?;
    opt.generator.step(&mut models.generator, &g_grads);
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintEpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Per-term means over the epoch's steps.
    pub terms: LossTerms,
    pub disc: f64,
    pub gen_adv: f64,
    pub weights: LossWeights,
    pub val_lpips: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InpaintHistory {
    pub epochs: Vec<InpaintEpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_lpips: Option<f64>,
}

pub struct InpaintTraining {
    pub models: InpaintModels,
    pub history: InpaintHistory,
    /// Validation renders of the retained weights, keyed by sample id.
    pub previews: Vec<(String, Image)>,
}

struct ValItem {
    id: String,
    image: Image,
    mask: Mask,
}

fn center_crop(s: &Sample, size: usize) -> Result<Sample> {
    if s.height() < size || s.width() < size {
        return Err(Error::invalid(alloc::format!(
            "sample `{}` ({}x{}) is smaller than crop_size {size}",
            s.id,
            s.height(),
            s.width()
        )));
    }
    let (top, left) = ((s.height() - size) / 2, (s.width() - size) / 2);
    Sample::new(
        s.id.clone(),
        s.image.crop(top, left, size, size)?,
        s.wrinkle_mask.crop(top, left, size, size),
    )
}

/// Fixed validation crops and clean-skin masks; samples whose masks cannot be
/// placed are dropped.
fn validation_set(val: &[Sample], cfg: &InpaintTrainConfig) -> Result<Vec<ValItem>> {
    let mut out = Vec::new();
    for (j, s) in val.iter().enumerate() {
        let s = center_crop(s, cfg.crop_size)?;
        match synth_eval_masks(
            &s.wrinkle_mask,
            &cfg.mask_policy,
            derive_seed(cfg.seed, &[j as u64, 0x7661_6c]),
        ) {
            Ok(mask) => out.push(ValItem {
                id: s.id,
                image: s.image,
                mask,
            }),
            Err(Error::Placement { .. } | Error::Coverage { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn validate(
    generator: &InpaintGenerator,
    items: &[ValItem],
    phi: &FeatureExtractor,
) -> Result<(f64, Vec<(String, Image)>)> {
    let mut total = 0.0;
    let mut renders = Vec::with_capacity(items.len());
    for it in items {
        let out = inpaint::inpaint_forward(generator, &it.image, &it.mask)?;
        total += eval::compute_lpips(&it.image, &out, phi, None)?;
        renders.push((it.id.clone(), out));
    }
    Ok((total / items.len() as f64, renders))
}

fn add_terms(acc: &mut LossTerms, t: &LossTerms) {
    acc.adv += t.adv;
    acc.hrfpl += t.hrfpl;
    acc.discpl += t.discpl;
    acc.r1 += t.r1;
    acc.ffl += t.ffl;
    acc.wrinkle += t.wrinkle;
}

fn scale_terms(t: &LossTerms, s: f64) -> LossTerms {
    LossTerms {
        adv: t.adv * s,
        hrfpl: t.hrfpl * s,
        discpl: t.discpl * s,
        r1: t.r1 * s,
        ffl: t.ffl * s,
        wrinkle: t.wrinkle * s,
    }
}

/// Full training run. With a non-empty validation set the returned weights
/// are those with the lowest validation LPIPS; otherwise the final weights.
#[allow(clippy::too_many_arguments)]
pub fn train_inpainting(
    train: &[Sample],
    val: &[Sample],
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscConfig,
    phi: &FeatureExtractor,
    seg: Option<&SegModel>,
    cfg: &InpaintTrainConfig,
) -> Result<InpaintTraining> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.weights.wrinkle > 0.0 && seg.is_none() {
        return Err(Error::invalid(
            "wrinkle loss weight > 0 needs a segmentation model",
        ));
    }
    let mut models = InpaintModels::new(gen_cfg.clone(), disc_cfg.clone())?;
    let mut opt = InpaintOptimizers::new(cfg);
    let crop = AugmentConfig {
        crop_size: Some(cfg.crop_size),
        ..AugmentConfig::default()
    };
    let val_items = validation_set(val, cfg)?;
    let mut history = InpaintHistory::default();
    let mut best: Option<(BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)> = None;
    let mut previews = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[epoch as u64],
        )));
        let mut acc = LossTerms::default();
        let (mut disc, mut gen_adv) = (0.0, 0.0);
        let mut n_steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    augment(
                        &train[i],
                        &crop,
                        derive_seed(cfg.seed, &[epoch as u64, i as u64, 1]),
                    )
                })
                .collect::<Result<_>>()?;
            let batch = PreparedBatch::new(
                &samples,
                &cfg.mask_policy,
                derive_seed(cfg.seed, &[step as u64, 2]),
            )?;
            let log = train_step(&batch, &mut models, &mut opt, seg, phi, &cfg.weights, step)?;
            add_terms(&mut acc, &log.terms);
            disc += log.disc;
            gen_adv += log.gen_adv;
            n_steps += 1;
            step += 1;
        }
        let inv = 1.0 / n_steps as f64;
        let last = epoch + 1 == cfg.epochs;
        let val_lpips = if !val_items.is_empty() && ((epoch + 1) % cfg.val_every == 0 || last) {
            let (score, renders) = validate(&models.generator, &val_items, phi)?;
            if history.best_val_lpips.is_none_or(|b| score < b) {
                history.best_val_lpips = Some(score);
                history.best_epoch = Some(epoch);
                best = Some((
                    models.generator.state_dict(),
                    models.discriminator.state_dict(),
                ));
                previews = renders;
            }
            Some(score)
        } else {
            None
        };
        history.epochs.push(InpaintEpochRecord {
            epoch,
            steps: n_steps,
            terms: scale_terms(&acc, inv),
            disc: disc * inv,
            gen_adv: gen_adv * inv,
            weights: cfg.weights.clone(),
            val_lpips,
        });
    }
    if let Some((g, d)) = best {
        models.generator.load_state_dict(&g)?;
        models.discriminator.load_state_dict(&d)?;
    }
    Ok(InpaintTraining {
        models,
        history,
        previews,
    })
}
