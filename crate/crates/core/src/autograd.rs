//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its value; nodes are created in
//! topological order, so the backward sweep is a single reverse pass. Leaves
//! are either trainable variables or constants. Constants, and anything
//! computed only from constants, never receive gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fft;
use crate::kernels::{self, ConvGeom};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var, f64),
    Sum(Var),
    Mean(Var),
    BroadcastChannels(Var),
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
        len: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Rfft2(Var),
    Irfft2(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            alloc::format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Every leaf created with [`Tape::variable`].
    pub fn trainable_leaves(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf) && n.requires_grad)
            .map(|(i, _)| Var(i))
            .collect()
    }

    /// Copy of `v`'s value as a constant: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Constant subgraphs keep no backward bookkeeping.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(math::sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// `ln(a + eps)`.
    pub fn log(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).map(|x| math::ln(x + eps));
        self.push(v, Op::Log(a, eps), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a), &[a])
    }

    /// Repeat a `[N, 1, H, W]` map across `channels`.
    pub fn broadcast_channels(&mut self, a: Var, channels: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if c != 1 {
            return Err(Error::shape(
                "broadcast_channels",
                "expected a single channel",
            ));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * channels * h * w);
        for b in 0..n {
            for _ in 0..channels {
                out.extend_from_slice(&src[b * h * w..(b + 1) * h * w]);
            }
        }
        let v = Tensor::new(&[n, channels, h, w], out)?;
        Ok(self.push(v, Op::BroadcastChannels(a), &[a]))
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let (n, _, h, w) = self.value(parts[0]).dims4()?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(
                    "concat",
                    alloc::format!(
                        "{:?} vs {:?}",
                        self.value(parts[0]).shape(),
                        self.value(p).shape()
                    ),
                ));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(n * total * h * w);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                out.extend_from_slice(&t.data()[b * pc * h * w..(b + 1) * pc * h * w]);
            }
        }
        let v = Tensor::new(&[n, total, h, w], out)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    /// Channels `start..start + len`.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if start + len > c {
            return Err(Error::shape(
                "narrow",
                alloc::format!("{}..{} of {}", start, start + len, c),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * h * w);
        for b in 0..n {
            let off = (b * c + start) * h * w;
            out.extend_from_slice(&src[off..off + len * h * w]);
        }
        let v = Tensor::new(&[n, len, h, w], out)?;
        Ok(self.push(v, Op::Narrow { x, start, len }, &[x]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let v = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(v, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Transposed convolution; the output padding is fixed so `stride` exactly scales the size.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    ) -> Result<Var> {
        let output_padding = geom.stride - 1;
        let v = kernels::conv_transpose2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            geom,
            output_padding,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(v, Op::ConvTranspose2d { x, w, b, geom }, &inputs))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (v, argmax) = kernels::max_pool2(self.value(x))?;
        Ok(self.push(v, Op::MaxPool2 { x, argmax }, &[x]))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let v = kernels::upsample2(self.value(x))?;
        Ok(self.push(v, Op::Upsample2(x), &[x]))
    }

    /// Real 2-D FFT: `[N, C, H, W] -> [N, 2C, H, W/2+1]` (real parts, then imaginary parts).
    pub fn rfft2(&mut self, x: Var) -> Result<Var> {
        let v = fft::rfft2(self.value(x))?;
        Ok(self.push(v, Op::Rfft2(x), &[x]))
    }

    /// Inverse of [`Tape::rfft2`] back to width `w`.
    pub fn irfft2(&mut self, y: Var, w: usize) -> Result<Var> {
        let (_, _, _, wf) = self.value(y).dims4()?;
        if fft::half_width(w) != wf {
            return Err(Error::shape(
                "irfft2",
                alloc::format!("width {} vs {} bins", w, wf),
            ));
        }
        let v = fft::irfft2(self.value(y), w)?;
        Ok(self.push(v, Op::Irfft2(y), &[y]))
    }

    /// Gradients of the scalar `root` with respect to every node that requires them.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        if self.value(root).numel() != 1 {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x / y));
                }
                if needs(*b) {
                    let q = node.value.zip_map(val(*b), |o, y| o / y);
                    self.accumulate(grads, *b, g.zip_map(&q, |x, q| -x * q));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let d = g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { s * gv });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Log(a, eps) => {
                let e = *eps;
                let d = g.zip_map(val(*a), |gv, x| gv / (x + e));
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item()));
            }
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::BroadcastChannels(a) => {
                let (n, c, h, w) = g.dims4()?;
                let mut out = vec![0.0; n * h * w];
                for b in 0..n {
                    for ci in 0..c {
                        let src = &g.data()[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                        for (o, s) in out[b * h * w..(b + 1) * h * w].iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(&[n, 1, h, w], out)?);
            }
            Op::Concat(parts) => {
                let (n, c, h, w) = g.dims4()?;
                let mut start = 0;
                for &p in parts {
                    let pc = val(p).shape()[1];
                    if needs(p) {
                        let mut out = Vec::with_capacity(n * pc * h * w);
                        for b in 0..n {
                            let off = (b * c + start) * h * w;
                            out.extend_from_slice(&g.data()[off..off + pc * h * w]);
                        }
                        self.accumulate(grads, p, Tensor::new(&[n, pc, h, w], out)?);
                    }
                    start += pc;
                }
            }
            Op::Narrow { x, start, len } => {
                let (n, c, h, w) = val(*x).dims4()?;
                let mut out = vec![0.0; n * c * h * w];
                for b in 0..n {
                    let dst = (b * c + start) * h * w;
                    let src = b * len * h * w;
                    out[dst..dst + len * h * w].copy_from_slice(&g.data()[src..src + len * h * w]);
                }
                self.accumulate(grads, *x, Tensor::new(&[n, c, h, w], out)?);
            }
            Op::Conv2d { x, w, b, geom } => {
                if needs(*x) {
                    let (_, _, h, wd) = val(*x).dims4()?;
                    let dx = kernels::conv2d_input_grad(g, val(*w), *geom, h, wd)?;
                    self.accumulate(grads, *x, dx);
                }
                if needs(*w) {
                    let dw = kernels::conv2d_weight_grad(val(*x), g, *geom)?;
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        self.accumulate(grads, *b, kernels::bias_grad(g)?);
                    }
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                if needs(*x) {
                    let dx = kernels::conv2d(g, val(*w), None, *geom)?;
                    self.accumulate(grads, *x, dx);
                }
                if needs(*w) {
                    let dw = kernels::conv2d_weight_grad(g, val(*x), *geom)?;
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        self.accumulate(grads, *b, kernels::bias_grad(g)?);
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(val(*x).shape());
                let d = dx.data_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    d[src] += g.data()[o];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample2(x) => self.accumulate(grads, *x, kernels::upsample2_grad(g)?),
            Op::Rfft2(x) => {
                let (_, _, _, w) = val(*x).dims4()?;
                self.accumulate(grads, *x, fft::rfft2_adjoint(g, w)?);
            }
            Op::Irfft2(y) => self.accumulate(grads, *y, fft::irfft2_adjoint(g)?),
        }
        Ok(())
    }
}
