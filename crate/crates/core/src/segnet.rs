//! Wrinkle segmentation: an encoder-decoder with nested, densely connected
//! skip pathways, trained with the Dice objective.
//!
//! Node `X[i][j]` sits at depth `i` (resolution `1 / 2^i`) and decoder column
//! `j`. Column 0 is the encoder. Every other node convolves the concatenation
//! of all earlier nodes at its depth with the upsampled node `X[i+1][j-1]`.
//! The head reads `X[0][depth]`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::{augment, AugmentConfig, Image, Mask, ProbMap, Sample};
use crate::error::{Error, Result};
use crate::losses;
use crate::math::{self, derive_seed};
use crate::nn::{Binder, Conv2d, Module, RELU_GAIN};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegModelConfig {
    /// Number of 2x downsamplings; inputs must be divisible by `2^encoder_depth`.
    pub encoder_depth: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl Default for SegModelConfig {
    fn default() -> Self {
        SegModelConfig {
            encoder_depth: 5,
            base_channels: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ConvBlock {
    fn forward(&self, tape: &mut Tape, binder: &mut Binder, x: Var) -> Result<Var> {
        let h = self.a.forward(tape, binder, x)?;
        let h = tape.relu(h);
        let h = self.b.forward(tape, binder, h)?;
        Ok(tape.relu(h))
    }
}

#[derive(Clone, Debug)]
pub struct SegModel {
    cfg: SegModelConfig,
    /// Row-major over `(i, j)` with `i + j <= depth`.
    nodes: Vec<ConvBlock>,
    head: Conv2d,
}

impl SegModel {
    pub fn new(cfg: SegModelConfig) -> Result<Self> {
        if cfg.encoder_depth == 0 || cfg.encoder_depth > 8 || cfg.base_channels == 0 {
            return Err(Error::invalid(
                "segmentation model needs 1..=8 levels and at least one channel",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let depth = cfg.encoder_depth;
        let ch = |i: usize| cfg.base_channels << i;
        let mut nodes = Vec::new();
        for i in 0..=depth {
            for j in 0..=(depth - i) {
                let cin = match (i, j) {
                    (0, 0) => 3,
                    (_, 0) => ch(i - 1),
                    _ => j * ch(i) + ch(i + 1),
                };
                let name = alloc::format!("x{i}{j}");
                nodes.push(ConvBlock {
                    a: Conv2d::same(
                        &alloc::format!("{name}.a"),
                        cin,
                        ch(i),
                        3,
                        RELU_GAIN,
                        &mut rng,
                    ),
                    b: Conv2d::same(
                        &alloc::format!("{name}.b"),
                        ch(i),
                        ch(i),
                        3,
                        RELU_GAIN,
                        &mut rng,
                    ),
                });
            }
        }
        let head = Conv2d::same("head", ch(0), 1, 1, 1.0, &mut rng);
        Ok(SegModel { cfg, nodes, head })
    }

    pub fn config(&self) -> &SegModelConfig {
        &self.cfg
    }

    /// Total downsampling factor; spatial dims must be multiples of it.
    pub fn factor(&self) -> usize {
        1 << self.cfg.encoder_depth
    }

    fn node_index(&self, i: usize, j: usize) -> usize {
        let depth = self.cfg.encoder_depth;
        (0..i).map(|r| depth - r + 1).sum::<usize>() + j
    }

    pub fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        let f = self.factor();
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::NotDivisible {
                height: h,
                width: w,
                factor: f,
            });
        }
        Ok(())
    }

    /// Logits `[N, 1, H, W]` for images `[N, 3, H, W]`.
    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, x: Var) -> Result<Var> {
        let (_, _, h, w) = tape.value(x).dims4()?;
        self.check_dims(h, w)?;
        let depth = self.cfg.encoder_depth;
        let mut out: Vec<Vec<Var>> = (0..=depth).map(|_| Vec::new()).collect();
        for i in 0..=depth {
            let input = if i == 0 {
                x
            } else {
                tape.max_pool2(out[i - 1][0])?
            };
            let v = self.nodes[self.node_index(i, 0)].forward(tape, binder, input)?;
            out[i].push(v);
        }
        for j in 1..=depth {
            for i in 0..=(depth - j) {
                let up = tape.upsample2(out[i + 1][j - 1])?;
                let mut parts = out[i][..j].to_vec();
                parts.push(up);
                let cat = tape.concat(&parts)?;
                let v = self.nodes[self.node_index(i, j)].forward(tape, binder, cat)?;
                out[i].push(v);
            }
        }
        self.head.forward(tape, binder, out[0][depth])
    }

    /// Probabilities for a batch tensor, without gradients.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen();
        let x = tape.constant(images.clone());
        let logits = self.forward(&mut tape, &mut binder, x)?;
        Ok(tape.value(logits).map(math::sigmoid))
    }
}

impl Module for SegModel {
    fn params(&self) -> Vec<(&str, &Tensor)> {
        let mut out = Vec::new();
        for n in &self.nodes {
            out.extend(n.a.params());
            out.extend(n.b.params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        let mut out = Vec::new();
        for n in &mut self.nodes {
            out.extend(n.a.params_mut());
            out.extend(n.b.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}

/// Probability map for one image; dims must be multiples of the model factor.
pub fn seg_forward(model: &SegModel, image: &Image) -> Result<ProbMap> {
    model.check_dims(image.height(), image.width())?;
    let p = model.predict(&image.to_tensor())?;
    ProbMap::new(image.height(), image.width(), p.into_data())
}

/// Pixels strictly above `t` become 1.
pub fn threshold_mask(p: &ProbMap, t: f64) -> Mask {
    Mask::from_fn(p.height(), p.width(), |y, x| {
        p.data()[y * p.width() + x] > t
    })
}

/// Intersection over union; two empty masks score 1.
pub fn iou(m: &Mask, m_hat: &Mask) -> Result<f64> {
    m.same_dims(m_hat)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in m.data().iter().zip(m_hat.data()) {
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    /// Square side samples are resized to before training; `None` (written `0`) keeps native size.
    #[serde(with = "crate::data::size_or_native")]
    pub input_size: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            epochs: 200,
            lr: 1e-3,
            lr_decay_epoch: 100,
            lr_decay_factor: 0.5,
            input_size: Some(512),
            batch_size: 8,
            seed: 0,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::invalid("lr_decay_factor must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based): one decay at `lr_decay_epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegHistory {
    pub epochs: Vec<SegEpochRecord>,
    pub best_epoch: usize,
    pub best_val_iou: f64,
}

pub struct SegTraining {
    /// Weights from the epoch with the best validation IoU.
    pub model: SegModel,
    pub history: SegHistory,
}

fn resize_sample(s: &Sample, size: Option<usize>) -> Result<Sample> {
    match size {
        Some(n) if (s.height(), s.width()) != (n, n) => Sample::new(
            s.id.clone(),
            s.image.resize_bilinear(n, n)?,
            s.wrinkle_mask.resize_nearest(n, n),
        ),
        _ => Ok(s.clone()),
    }
}

/// Mean IoU at threshold 0.5 over `samples`.
pub fn mean_iou(model: &SegModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let p = seg_forward(model, &s.image)?;
        total += iou(&s.wrinkle_mask, &threshold_mask(&p, 0.5))?;
    }
    Ok(total / samples.len() as f64)
}

/// One optimization step on a batch; returns the Dice loss.
fn seg_step(model: &mut SegModel, adam: &mut Adam, batch: &[Sample]) -> Result<f64> {
    let images: Vec<Tensor> = batch.iter().map(|s| s.image.to_tensor()).collect();
    let masks: Vec<Tensor> = batch.iter().map(|s| s.wrinkle_mask.to_tensor()).collect();
    let mut tape = Tape::new();
    let mut binder = Binder::trainable();
    let x = tape.constant(Tensor::stack_batch(&images)?);
    let target = tape.constant(Tensor::stack_batch(&masks)?);
    let logits = model.forward(&mut tape, &mut binder, x)?;
    let prob = tape.sigmoid(logits);
    let loss = losses::dice_loss_var(&mut tape, target, prob)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    adam.step(model, &binder.collect(&grads));
    Ok(value)
}

/// Train with the Dice objective and Adam. Validation IoU (train IoU when
/// `val` is empty) selects the returned weights.
pub fn train_segmentation(
    train: &[Sample],
    val: &[Sample],
    model_cfg: &SegModelConfig,
    cfg: &SegTrainConfig,
    aug: &AugmentConfig,
) -> Result<SegTraining> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let train: Vec<Sample> = train
        .iter()
        .map(|s| resize_sample(s, cfg.input_size))
        .collect::<Result<_>>()?;
    let val: Vec<Sample> = val
        .iter()
        .map(|s| resize_sample(s, cfg.input_size))
        .collect::<Result<_>>()?;
    let mut model = SegModel::new(model_cfg.clone())?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut history = SegHistory {
        best_val_iou: f64::NEG_INFINITY,
        ..SegHistory::default()
    };
    let mut best: Option<BTreeMap<String, Tensor>> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        adam.set_lr(lr);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[epoch as u64],
        )));
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    augment(
                        &train[i],
                        aug,
                        derive_seed(cfg.seed, &[epoch as u64, i as u64, 1]),
                    )
                })
                .collect::<Result<_>>()?;
            let loss = seg_step(&mut model, &mut adam, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss;
            n_batches += 1;
        }
        let val_iou = mean_iou(&model, if val.is_empty() { &train } else { &val })?;
        if val_iou > history.best_val_iou {
            history.best_val_iou = val_iou;
            history.best_epoch = epoch;
            best = Some(model.state_dict());
        }
        history.epochs.push(SegEpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n_batches as f64,
            val_iou,
        });
    }
    if let Some(state) = best {
        model.load_state_dict(&state)?;
    }
    Ok(SegTraining { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SegModel {
        SegModel::new(SegModelConfig {
            encoder_depth: 3,
            base_channels: 2,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn output_shape_and_range() {
        let m = SegModel::new(SegModelConfig {
            encoder_depth: 5,
            base_channels: 2,
            seed: 0,
        })
        .unwrap();
        let img = Image::from_fn(64, 96, |c, y, x| ((c + y * x) % 13) as f64 / 12.0).unwrap();
        let p = seg_forward(&m, &img).unwrap();
        assert_eq!((p.height(), p.width()), (64, 96));
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn non_divisible_input_is_rejected() {
        let m = SegModel::new(SegModelConfig {
            encoder_depth: 5,
            base_channels: 2,
            seed: 0,
        })
        .unwrap();
        let img = Image::from_fn(50, 64, |_, _, _| 0.5).unwrap();
        assert!(matches!(
            seg_forward(&m, &img),
            Err(Error::NotDivisible { factor: 32, .. })
        ));
    }

    #[test]
    fn threshold_is_strict() {
        let p = ProbMap::new(1, 3, alloc::vec![0.51, 0.5, 0.0]).unwrap();
        assert_eq!(threshold_mask(&p, 0.5).data(), &[1, 0, 0]);
    }

    #[test]
    fn iou_examples() {
        let a = Mask::new(1, 4, alloc::vec![1, 1, 0, 0]).unwrap();
        let b = Mask::new(1, 4, alloc::vec![1, 0, 1, 0]).unwrap();
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&Mask::zeros(2, 2), &Mask::zeros(2, 2)).unwrap(), 1.0);
        assert!(iou(&a, &Mask::zeros(2, 2)).is_err());
    }

    #[test]
    fn node_indexing_covers_triangle() {
        let m = tiny();
        let depth = 3;
        let mut seen = alloc::vec![false; m.nodes.len()];
        for i in 0..=depth {
            for j in 0..=(depth - i) {
                seen[m.node_index(i, j)] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn lr_schedule_single_decay() {
        let cfg = SegTrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(99), 1e-3);
        assert_eq!(cfg.lr_at(100), 5e-4);
        assert_eq!(cfg.lr_at(199), 5e-4);
    }
}
