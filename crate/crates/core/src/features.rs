//! Frozen feature extractors for perceptual losses and metrics.
//!
//! The dilated network keeps a large receptive field at full resolution
//! except for one stride-2 stage. Weights are seeded and never trained; real
//! pretrained weights can be loaded through [`Module::load_state_dict`].

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Binder, Conv2d, Module, RELU_GAIN};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayer {
    pub channels: usize,
    pub stride: usize,
    pub dilation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureNetConfig {
    pub layers: Vec<FeatureLayer>,
    /// Also report the raw input as the first feature map.
    pub include_input: bool,
    pub seed: u64,
}

impl Default for FeatureNetConfig {
    fn default() -> Self {
        let l = |channels, stride, dilation| FeatureLayer {
            channels,
            stride,
            dilation,
        };
        FeatureNetConfig {
            layers: alloc::vec![l(16, 1, 1), l(16, 2, 1), l(32, 1, 2), l(32, 1, 4)],
            include_input: false,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DilatedConvNet {
    cfg: FeatureNetConfig,
    convs: Vec<Conv2d>,
}

impl DilatedConvNet {
    pub fn new(cfg: FeatureNetConfig) -> Result<Self> {
        if cfg.layers.is_empty() && !cfg.include_input {
            return Err(Error::invalid("feature network has no outputs"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut cin = 3;
        let mut convs = Vec::new();
        for (i, l) in cfg.layers.iter().enumerate() {
            if l.channels == 0 || l.stride == 0 || l.dilation == 0 {
                return Err(Error::invalid("feature layer fields must be positive"));
            }
            convs.push(Conv2d::new(
                &alloc::format!("feat{i}"),
                cin,
                l.channels,
                3,
                l.stride,
                l.dilation,
                l.dilation,
                true,
                RELU_GAIN,
                &mut rng,
            ));
            cin = l.channels;
        }
        Ok(DilatedConvNet { cfg, convs })
    }

    pub fn config(&self) -> &FeatureNetConfig {
        &self.cfg
    }
}

impl Module for DilatedConvNet {
    fn params(&self) -> Vec<(&str, &Tensor)> {
        self.convs.iter().flat_map(|c| c.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}

#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    /// The image itself is the only feature map.
    Identity,
    Dilated(DilatedConvNet),
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::Dilated(
            DilatedConvNet::new(FeatureNetConfig::default()).expect("default config is valid"),
        )
    }
}

impl FeatureExtractor {
    /// Feature maps `[N, C_l, H_l, W_l]`, differentiable w.r.t. `x` only.
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        match self {
            FeatureExtractor::Identity => Ok(alloc::vec![x]),
            FeatureExtractor::Dilated(net) => {
                let mut binder = Binder::frozen();
                let mut out = Vec::new();
                if net.cfg.include_input {
                    out.push(x);
                }
                let mut h = x;
                for conv in &net.convs {
                    h = conv.forward(tape, &mut binder, h)?;
                    h = tape.relu(h);
                    out.push(h);
                }
                Ok(out)
            }
        }
    }

    /// Feature values without gradient tracking.
    pub fn eval(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let feats = self.features(&mut tape, v)?;
        Ok(feats.into_iter().map(|f| tape.value(f).clone()).collect())
    }

    /// Global average pool of the last feature map, one vector per batch item.
    pub fn pooled(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let feats = self.eval(x)?;
        let last = feats
            .last()
            .ok_or_else(|| Error::invalid("no feature maps"))?;
        let (n, c, h, w) = last.dims4()?;
        let plane = h * w;
        Ok((0..n)
            .map(|b| {
                (0..c)
                    .map(|ch| {
                        let off = (b * c + ch) * plane;
                        last.data()[off..off + plane].iter().sum::<f64>() / plane as f64
                    })
                    .collect()
            })
            .collect())
    }
}
