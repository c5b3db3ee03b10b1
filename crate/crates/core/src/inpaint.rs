//! Inpainting generator built from fast Fourier convolutions, and the patch
//! discriminator it is trained against.
//!
//! A fast Fourier convolution splits channels into a local part, processed by
//! ordinary 3x3 convolutions, and a global part, processed in the frequency
//! domain where every output pixel sees the whole image.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::{Image, Mask};
use crate::error::{Error, Result};
use crate::nn::{Binder, Conv2d, ConvTranspose2d, Module, RELU_GAIN};
use crate::tensor::Tensor;

/// Generator input `[1, 4, H, W]`: the image with holes zeroed, then the mask.
pub fn stack_input(x: &Image, m: &Mask) -> Result<Tensor> {
    m.matches_image(x)?;
    let plane = x.height() * x.width();
    let mut data = Vec::with_capacity(4 * plane);
    for c in 0..3 {
        let src = &x.data()[c * plane..(c + 1) * plane];
        data.extend(
            src.iter()
                .zip(m.data())
                .map(|(&v, &k)| if k == 1 { 0.0 } else { v }),
        );
    }
    data.extend(m.data().iter().map(|&k| k as f64));
    Tensor::new(&[1, 4, x.height(), x.width()], data)
}

/// Generated pixels inside the hole, original pixels elsewhere.
pub fn composite(x: &Image, raw: &Image, m: &Mask) -> Result<Image> {
    m.matches_image(x)?;
    m.matches_image(raw)?;
    let plane = x.height() * x.width();
    let data = (0..3 * plane)
        .map(|i| {
            if m.data()[i % plane] == 1 {
                raw.data()[i]
            } else {
                x.data()[i]
            }
        })
        .collect();
    Image::new(x.height(), x.width(), data)
}

/// Batched compositing on the tape: `x + m * (raw - x)` with `m` `[N, 1, H, W]`.
pub fn composite_var(tape: &mut Tape, x: Var, raw: Var, m: Var) -> Result<Var> {
    let channels = tape.value(x).dims4()?.1;
    let m = tape.broadcast_channels(m, channels)?;
    let diff = tape.sub(raw, x)?;
    let masked = tape.mul(m, diff)?;
    tape.add(x, masked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_downsample: usize,
    pub n_blocks: usize,
    /// Share of bottleneck channels routed through the spectral branch.
    pub global_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 64,
            n_downsample: 3,
            n_blocks: 9,
            global_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Global-branch operator: 1x1 reduce, a pointwise convolution over the real
/// and imaginary parts of the 2-D real FFT, inverse FFT, residual, 1x1 expand.
#[derive(Clone, Debug)]
pub struct SpectralTransform {
    reduce: Conv2d,
    fourier: Conv2d,
    expand: Conv2d,
}

impl SpectralTransform {
    fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = (cout / 2).max(1);
        SpectralTransform {
            reduce: Conv2d::new(
                &alloc::format!("{name}.reduce"),
                cin,
                hidden,
                1,
                1,
                0,
                1,
                false,
                RELU_GAIN,
                rng,
            ),
            fourier: Conv2d::new(
                &alloc::format!("{name}.fourier"),
                2 * hidden,
                2 * hidden,
                1,
                1,
                0,
                1,
                false,
                RELU_GAIN,
                rng,
            ),
            expand: Conv2d::new(
                &alloc::format!("{name}.expand"),
                hidden,
                cout,
                1,
                1,
                0,
                1,
                false,
                1.0,
                rng,
            ),
        }
    }

    fn forward(&self, tape: &mut Tape, binder: &mut Binder, x: Var) -> Result<Var> {
        let w = tape.value(x).dims4()?.3;
        let r = self.reduce.forward(tape, binder, x)?;
        let r = tape.relu(r);
        let spec = tape.rfft2(r)?;
        let spec = self.fourier.forward(tape, binder, spec)?;
        let spec = tape.relu(spec);
        let back = tape.irfft2(spec, w)?;
        let sum = tape.add(r, back)?;
        self.expand.forward(tape, binder, sum)
    }

    fn modules(&self) -> [&Conv2d; 3] {
        [&self.reduce, &self.fourier, &self.expand]
    }

    fn modules_mut(&mut self) -> [&mut Conv2d; 3] {
        [&mut self.reduce, &mut self.fourier, &mut self.expand]
    }
}

/// One fast Fourier convolution with four paths: local->local, local->global,
/// global->local (3x3 convolutions) and global->global (spectral).
#[derive(Clone, Debug)]
pub struct Ffc {
    pub l2l: Conv2d,
    pub l2g: Conv2d,
    pub g2l: Conv2d,
    pub g2g: SpectralTransform,
}

impl Ffc {
    pub fn new(name: &str, local: usize, global: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let conv = |path: &str, cin, cout, bias, rng: &mut ChaCha8Rng| {
            Conv2d::new(
                &alloc::format!("{name}.{path}"),
                cin,
                cout,
                3,
                1,
                1,
                1,
                bias,
                gain,
                rng,
            )
        };
        Ffc {
            l2l: conv("l2l", local, local, true, rng),
            l2g: conv("l2g", local, global, false, rng),
            g2l: conv("g2l", global, local, false, rng),
            g2g: SpectralTransform::new(&alloc::format!("{name}.g2g"), global, global, rng),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        xl: Var,
        xg: Var,
    ) -> Result<(Var, Var)> {
        let ll = self.l2l.forward(tape, binder, xl)?;
        let gl = self.g2l.forward(tape, binder, xg)?;
        let lg = self.l2g.forward(tape, binder, xl)?;
        let gg = self.g2g.forward(tape, binder, xg)?;
        Ok((tape.add(ll, gl)?, tape.add(lg, gg)?))
    }

    fn convs(&self) -> Vec<&Conv2d> {
        let mut v = alloc::vec![&self.l2l, &self.l2g, &self.g2l];
        v.extend(self.g2g.modules());
        v
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut v = alloc::vec![&mut self.l2l, &mut self.l2g, &mut self.g2l];
        v.extend(self.g2g.modules_mut());
        v
    }

    /// Zero every weight that touches the global branch.
    pub fn zero_global(&mut self) {
        for c in [&mut self.l2g, &mut self.g2l]
            .into_iter()
            .chain(self.g2g.modules_mut())
        {
            c.weight = Tensor::zeros(c.weight.shape());
        }
    }
}

/// `x + FFC(ReLU(FFC(x)))` on both branches.
#[derive(Clone, Debug)]
pub struct FfcResBlock {
    pub first: Ffc,
    pub second: Ffc,
}

impl FfcResBlock {
    /// The second FFC's output layers start at zero, so a fresh block is the
    /// identity. Without normalization a deep stack otherwise starts with
    /// saturated output logits.
    pub fn new(name: &str, local: usize, global: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut second = Ffc::new(&alloc::format!("{name}.ffc2"), local, global, 1.0, rng);
        for c in [
            &mut second.l2l,
            &mut second.l2g,
            &mut second.g2l,
            &mut second.g2g.expand,
        ] {
            c.weight = Tensor::zeros(c.weight.shape());
        }
        FfcResBlock {
            first: Ffc::new(
                &alloc::format!("{name}.ffc1"),
                local,
                global,
                RELU_GAIN,
                rng,
            ),
            second,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        xl: Var,
        xg: Var,
    ) -> Result<(Var, Var)> {
        let (l, g) = self.first.forward(tape, binder, xl, xg)?;
        let (l, g) = (tape.relu(l), tape.relu(g));
        let (l, g) = self.second.forward(tape, binder, l, g)?;
        Ok((tape.add(xl, l)?, tape.add(xg, g)?))
    }
}

#[derive(Clone, Debug)]
pub struct InpaintGenerator {
    cfg: GeneratorConfig,
    stem: Conv2d,
    down: Vec<Conv2d>,
    blocks: Vec<FfcResBlock>,
    up: Vec<ConvTranspose2d>,
    head: Conv2d,
    local: usize,
}

impl InpaintGenerator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        if cfg.base_channels == 0 || cfg.n_downsample > 6 {
            return Err(Error::invalid(
                "generator needs positive channels and at most 6 downsamplings",
            ));
        }
        let bottleneck = cfg.base_channels << cfg.n_downsample;
        let global = crate::math::round(bottleneck as f64 * cfg.global_fraction) as usize;
        if !(cfg.global_fraction > 0.0 && cfg.global_fraction < 1.0)
            || global == 0
            || global >= bottleneck
        {
            return Err(Error::invalid(alloc::format!(
                "global_fraction {} leaves an empty branch at {bottleneck} channels",
                cfg.global_fraction
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ngf = cfg.base_channels;
        let stem = Conv2d::same("stem", 4, ngf, 7, RELU_GAIN, &mut rng);
        let down = (0..cfg.n_downsample)
            .map(|i| {
                Conv2d::new(
                    &alloc::format!("down{i}"),
                    ngf << i,
                    ngf << (i + 1),
                    3,
                    2,
                    1,
                    1,
                    true,
                    RELU_GAIN,
                    &mut rng,
                )
            })
            .collect();
        let local = bottleneck - global;
        let blocks = (0..cfg.n_blocks)
            .map(|b| FfcResBlock::new(&alloc::format!("block{b}"), local, global, &mut rng))
            .collect();
        let up = (0..cfg.n_downsample)
            .map(|i| {
                let cin = bottleneck >> i;
                ConvTranspose2d::new(
                    &alloc::format!("up{i}"),
                    cin,
                    cin / 2,
                    3,
                    2,
                    RELU_GAIN,
                    &mut rng,
                )
            })
            .collect();
        let mut head = Conv2d::same("head", ngf, 3, 7, 1.0, &mut rng);
        // Starts from a flat 0.5 output.
        head.weight = Tensor::zeros(head.weight.shape());
        Ok(InpaintGenerator {
            cfg,
            stem,
            down,
            blocks,
            up,
            head,
            local,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn factor(&self) -> usize {
        1 << self.cfg.n_downsample
    }

    pub fn blocks_mut(&mut self) -> &mut [FfcResBlock] {
        &mut self.blocks
    }

    pub fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        let f = self.factor();
        if h % f != 0 || w % f != 0 {
            return Err(Error::NotDivisible {
                height: h,
                width: w,
                factor: f,
            });
        }
        Ok(())
    }

    /// Raw prediction `[N, 3, H, W]` in (0, 1) from a stacked `[N, 4, H, W]` input.
    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, input: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(input).dims4()?;
        if c != 4 {
            return Err(Error::shape(
                "generator",
                alloc::format!("expected 4 input channels, got {c}"),
            ));
        }
        self.check_dims(h, w)?;
        let x = self.stem.forward(tape, binder, input)?;
        let mut x = tape.relu(x);
        for d in &self.down {
            x = d.forward(tape, binder, x)?;
            x = tape.relu(x);
        }
        let total = tape.value(x).dims4()?.1;
        let mut xl = tape.narrow(x, 0, self.local)?;
        let mut xg = tape.narrow(x, self.local, total - self.local)?;
        for b in &self.blocks {
            (xl, xg) = b.forward(tape, binder, xl, xg)?;
        }
        let mut x = tape.concat(&[xl, xg])?;
        for u in &self.up {
            x = u.forward(tape, binder, x)?;
            x = tape.relu(x);
        }
        let x = self.head.forward(tape, binder, x)?;
        Ok(tape.sigmoid(x))
    }
}

impl Module for InpaintGenerator {
    fn params(&self) -> Vec<(&str, &Tensor)> {
        let mut out = self.stem.params();
        out.extend(self.down.iter().flat_map(|d| d.params()));
        for b in &self.blocks {
            for c in b.first.convs().into_iter().chain(b.second.convs()) {
                out.extend(c.params());
            }
        }
        out.extend(self.up.iter().flat_map(|u| u.params()));
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        let mut out = self.stem.params_mut();
        out.extend(self.down.iter_mut().flat_map(|d| d.params_mut()));
        for b in &mut self.blocks {
            for c in b.first.convs_mut().into_iter().chain(b.second.convs_mut()) {
                out.extend(c.params_mut());
            }
        }
        out.extend(self.up.iter_mut().flat_map(|u| u.params_mut()));
        out.extend(self.head.params_mut());
        out
    }
}

/// Inpaint one image; output equals `x` wherever `m` is 0.
pub fn inpaint_forward(generator: &InpaintGenerator, x: &Image, m: &Mask) -> Result<Image> {
    generator.check_dims(x.height(), x.width())?;
    let input = stack_input(x, m)?;
    let mut tape = Tape::new();
    let mut binder = Binder::frozen();
    let v = tape.constant(input);
    let raw = generator.forward(&mut tape, &mut binder, v)?;
    let raw = Image::from_tensor(tape.value(raw))?;
    composite(x, &raw, m)
}

/// Score logits and the intermediate activations used for feature matching.
pub struct DiscOutput {
    pub logits: Var,
    pub features: Vec<Var>,
}

pub trait Discriminator {
    fn forward(&self, tape: &mut Tape, binder: &mut Binder, x: Var) -> Result<DiscOutput>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    pub base_channels: usize,
    /// Number of stride-2 stages.
    pub n_layers: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            base_channels: 64,
            n_layers: 3,
            kernel: 4,
            seed: 1,
        }
    }
}

impl DiscConfig {
    /// Receptive field of one score, in input pixels.
    pub fn receptive_field(&self) -> usize {
        let (mut rf, mut jump) = (1, 1);
        for stride in core::iter::repeat_n(2, self.n_layers).chain([1, 1]) {
            rf += (self.kernel - 1) * jump;
            jump *= stride;
        }
        rf
    }
}

/// Fully convolutional patch discriminator: stride-2 stages, one stride-1
/// stage, then a stride-1 score convolution. LeakyReLU(0.2) between stages.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    cfg: DiscConfig,
    stages: Vec<Conv2d>,
    score: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(cfg: DiscConfig) -> Result<Self> {
        if cfg.base_channels == 0 || !(2..=7).contains(&cfg.kernel) {
            return Err(Error::invalid(
                "discriminator needs channels > 0 and kernel in 2..=7",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let pad = (cfg.kernel - 1) / 2;
        let gain = crate::math::sqrt(2.0 / (1.0 + 0.04));
        let ch = |i: usize| cfg.base_channels << i.min(3);
        let mut stages = Vec::new();
        let mut cin = 3;
        for i in 0..=cfg.n_layers {
            let stride = if i < cfg.n_layers { 2 } else { 1 };
            stages.push(Conv2d::new(
                &alloc::format!("stage{i}"),
                cin,
                ch(i),
                cfg.kernel,
                stride,
                pad,
                1,
                true,
                gain,
                &mut rng,
            ));
            cin = ch(i);
        }
        let score = Conv2d::new("score", cin, 1, cfg.kernel, 1, pad, 1, true, 1.0, &mut rng);
        Ok(PatchDiscriminator { cfg, stages, score })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.cfg
    }
}

impl Discriminator for PatchDiscriminator {
    fn forward(&self, tape: &mut Tape, binder: &mut Binder, x: Var) -> Result<DiscOutput> {
        let (_, _, h, w) = tape.value(x).dims4()?;
        let rf = self.cfg.receptive_field();
        if h < rf || w < rf {
            return Err(Error::shape(
                "discriminator",
                alloc::format!("input {h}x{w} smaller than receptive field {rf}"),
            ));
        }
        let mut features = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for s in &self.stages {
            h = s.forward(tape, binder, h)?;
            h = tape.leaky_relu(h, 0.2);
            features.push(h);
        }
        let logits = self.score.forward(tape, binder, h)?;
        Ok(DiscOutput { logits, features })
    }
}

impl Module for PatchDiscriminator {
    fn params(&self) -> Vec<(&str, &Tensor)> {
        let mut out: Vec<_> = self.stages.iter().flat_map(|s| s.params()).collect();
        out.extend(self.score.params());
        out
    }

    fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        let mut out: Vec<_> = self
            .stages
            .iter_mut()
            .flat_map(|s| s.params_mut())
            .collect();
        out.extend(self.score.params_mut());
        out
    }
}

/// Patch probabilities `[N, 1, h, w]` and stage features for a batch.
pub fn disc_forward(d: &dyn Discriminator, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let mut binder = Binder::frozen();
    let v = tape.constant(x.clone());
    let out = d.forward(&mut tape, &mut binder, v)?;
    let scores = tape.value(out.logits).map(crate::math::sigmoid);
    Ok((
        scores,
        out.features
            .iter()
            .map(|&f| tape.value(f).clone())
            .collect(),
    ))
}
