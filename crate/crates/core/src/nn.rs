//! Parameterized layers and the glue that puts their weights on a tape.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::math;
use crate::tensor::Tensor;

/// Anything with named parameters.
pub trait Module {
    fn params(&self) -> Vec<(&str, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Owned copy of every parameter, keyed by name.
    fn state_dict(&self) -> BTreeMap<String, Tensor> {
        self.params()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    /// Overwrite parameters from `state`; names and shapes must match exactly.
    fn load_state_dict(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != state.len() {
            return Err(Error::Param {
                name: String::from("*"),
                detail: alloc::format!(
                    "model has {} tensors, state has {}",
                    params.len(),
                    state.len()
                ),
            });
        }
        for (name, slot) in params.iter_mut() {
            let src = state.get(*name).ok_or_else(|| Error::Param {
                name: name.to_string(),
                detail: String::from("missing from state"),
            })?;
            if src.shape() != slot.shape() {
                return Err(Error::Param {
                    name: name.to_string(),
                    detail: alloc::format!("shape {:?} vs {:?}", src.shape(), slot.shape()),
                });
            }
            **slot = src.clone();
        }
        Ok(())
    }
}

/// Maps parameter names to tape nodes for one forward/backward pass.
///
/// Binding the same name twice returns the same node, so a network evaluated
/// on several inputs accumulates one gradient per parameter.
pub struct Binder {
    trainable: bool,
    bound: BTreeMap<String, Var>,
}

impl Binder {
    pub fn trainable() -> Self {
        Binder {
            trainable: true,
            bound: BTreeMap::new(),
        }
    }

    /// Parameters enter the tape as constants and receive no gradient.
    pub fn frozen() -> Self {
        Binder {
            trainable: false,
            bound: BTreeMap::new(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn bind(&mut self, tape: &mut Tape, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = if self.trainable {
            tape.variable(value.clone())
        } else {
            tape.constant(value.clone())
        };
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients of every bound parameter that received one.
    pub fn collect(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

/// Uniform He initialization, `U(-b, b)` with `b = gain * sqrt(3 / fan_in)`.
pub fn he_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    let bound = gain * math::sqrt(3.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape/product agree")
}

/// Gain for ReLU-family activations.
pub const RELU_GAIN: f64 = core::f64::consts::SQRT_2;

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight_name: String,
    bias_name: String,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub geom: ConvGeom,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Conv2d {
            weight_name: alloc::format!("{name}.weight"),
            bias_name: alloc::format!("{name}.bias"),
            weight: he_uniform(rng, &[cout, cin, kernel, kernel], fan_in, gain),
            bias: bias.then(|| Tensor::zeros(&[cout])),
            geom: ConvGeom::new(kernel, stride, padding, dilation),
        }
    }

    /// A `kernel x kernel` convolution with stride 1 and "same" zero padding.
    pub fn same<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        Self::new(name, cin, cout, kernel, 1, kernel / 2, 1, true, gain, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, x: Var) -> Result<Var> {
        let w = binder.bind(tape, &self.weight_name, &self.weight);
        let b = self
            .bias
            .as_ref()
            .map(|b| binder.bind(tape, &self.bias_name, b));
        tape.conv2d(x, w, b, self.geom)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<(&str, &Tensor)> {
        let mut out = alloc::vec![(self.weight_name.as_str(), &self.weight)];
        if let Some(b) = &self.bias {
            out.push((self.bias_name.as_str(), b));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        let mut out = alloc::vec![(self.weight_name.as_str(), &mut self.weight)];
        if let Some(b) = &mut self.bias {
            out.push((self.bias_name.as_str(), b));
        }
        out
    }
}

/// Transposed convolution whose output is exactly `stride` times its input.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    weight_name: String,
    bias_name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub geom: ConvGeom,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        // Each output pixel sees roughly cin * k^2 / stride^2 taps.
        let fan_in = (cin * kernel * kernel / (stride * stride)).max(1);
        ConvTranspose2d {
            weight_name: alloc::format!("{name}.weight"),
            bias_name: alloc::format!("{name}.bias"),
            weight: he_uniform(rng, &[cin, cout, kernel, kernel], fan_in, gain),
            bias: Tensor::zeros(&[cout]),
            geom: ConvGeom::new(kernel, stride, kernel / 2, 1),
        }
    }

    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, x: Var) -> Result<Var> {
        let w = binder.bind(tape, &self.weight_name, &self.weight);
        let b = binder.bind(tape, &self.bias_name, &self.bias);
        tape.conv_transpose2d(x, w, Some(b), self.geom)
    }
}

impl Module for ConvTranspose2d {
    fn params(&self) -> Vec<(&str, &Tensor)> {
        alloc::vec![
            (self.weight_name.as_str(), &self.weight),
            (self.bias_name.as_str(), &self.bias)
        ]
    }

    fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        alloc::vec![
            (self.weight_name.as_str(), &mut self.weight),
            (self.bias_name.as_str(), &mut self.bias)
        ]
    }
}
