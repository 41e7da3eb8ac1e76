//! Dynamic reverse-mode tape over a fixed vocabulary of real and complex ops.
//!
//! Complex values are differentiated through their real/imaginary parts: the
//! gradient stored for a complex node is `∂L/∂Re + i·∂L/∂Im`. For a real loss
//! this is twice the conjugate Wirtinger derivative, and it makes the backward
//! rule of any complex-linear map `M` simply `Mᴴ`.

use std::sync::Arc;

use num_complex::Complex64;

use super::conv::{self, ConvDims};
use super::fft::fft2c_slices;
use super::params::ParameterStore;
use super::tensor::{CTensor, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Value {
    Real(Tensor),
    Complex(CTensor),
}

impl Value {
    fn shape(&self) -> &[usize] {
        match self {
            Value::Real(t) => t.shape(),
            Value::Complex(t) => t.shape(),
        }
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Conv2d { x: Var, kernel: Var, bias: Var, dims: ConvDims },
    ScaleChannels(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Pad { x: Var, top: usize, left: usize },
    Crop { x: Var, top: usize, left: usize },
    BoxMean { x: Var, k: usize },
    CAdd(Var, Var),
    CSub(Var, Var),
    CScaleBy(Var, Var),
    Fft2c(Var),
    Ifft2c(Var),
    Expand { x: Var, maps: Arc<CTensor> },
    Reduce { x: Var, maps: Arc<CTensor> },
    Mask { x: Var, mask: Arc<Vec<f64>> },
    CAbs(Var),
    ToChannels(Var),
    FromChannels(Var),
}

struct Node {
    value: Value,
    op: Op,
}

/// Records a computation for one reverse sweep. Single-threaded; build a
/// fresh tape per sample.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }

    pub fn real(&self, v: Var) -> Result<&Tensor> {
        match &self.nodes[v.0].value {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::Contract(format!("node {} is complex, expected real", v.0))),
        }
    }

    pub fn complex(&self, v: Var) -> Result<&CTensor> {
        match &self.nodes[v.0].value {
            Value::Complex(t) => Ok(t),
            Value::Real(_) => Err(Error::Contract(format!("node {} is real, expected complex", v.0))),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Value::Real(t), Op::Constant)
    }

    pub fn constant_complex(&mut self, t: CTensor) -> Var {
        self.push(Value::Complex(t), Op::Constant)
    }

    /// Leaf bound to a named entry of `store`; its gradient flows back there.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let t = store
            .value(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))?
            .clone();
        Ok(self.push(Value::Real(t), Op::Param(name.to_string())))
    }

    fn same_real(&self, a: Var, b: Var, what: &str) -> Result<(&Tensor, &Tensor)> {
        let (ta, tb) = (self.real(a)?, self.real(b)?);
        if ta.shape() != tb.shape() {
            return shape_err(format!("{what}: {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        Ok((ta, tb))
    }

    fn zip_real(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = self.same_real(a, b, what)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Value::Real(t), op))
    }

    fn map_real(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.real(a)?.map(f);
        Ok(self.push(Value::Real(t), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_real(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_real(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_real(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_real(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map_real(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map_real(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map_real(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map_real(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map_real(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map_real(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map_real(a, |x| x * x, Op::Square(a))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        self.conv2d_dilated(x, kernel, bias, 1)
    }

    pub fn conv2d_dilated(&mut self, x: Var, kernel: Var, bias: Var, dilation: usize) -> Result<Var> {
        let dims = conv::check_dims(self.real(x)?, self.real(kernel)?, self.real(bias)?, dilation)?;
        let out = conv::forward(
            self.real(x)?.data(),
            self.real(kernel)?.data(),
            self.real(bias)?.data(),
            dims,
        );
        let t = Tensor::new(vec![dims.c_out, dims.h, dims.w], out)?;
        Ok(self.push(Value::Real(t), Op::Conv2d { x, kernel, bias, dims }))
    }

    /// `[c,h,w]` times a per-channel weight vector `[c]`.
    pub fn scale_channels(&mut self, x: Var, u: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "scale_channels")?;
        let tu = self.real(u)?;
        if tu.shape() != [c] {
            return shape_err(format!("scale_channels: weights {:?} for {c} channels", tu.shape()));
        }
        let plane = h * w;
        let data = self
            .real(x)?
            .data()
            .chunks_exact(plane)
            .zip(tu.data())
            .flat_map(|(ch, &s)| ch.iter().map(move |v| v * s))
            .collect();
        let t = Tensor::new(vec![c, h, w], data)?;
        Ok(self.push(Value::Real(t), Op::ScaleChannels(x, u)))
    }

    /// Concatenate real tensors along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let tail = self.real(*first)?.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.real(p)?;
            if t.shape().len() != tail.len() + 1 || t.shape()[1..] != tail[..] {
                return shape_err(format!("concat: {:?} vs trailing {:?}", t.shape(), tail));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Value::Real(t), Op::Concat(parts.to_vec())))
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.real(x)?;
        let s = t.shape();
        if s.is_empty() || start + len > s[0] {
            return shape_err(format!("slice {start}..{} of {:?}", start + len, s));
        }
        let inner: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = len;
        let t = Tensor::new(shape, t.data()[start * inner..(start + len) * inner].to_vec())?;
        Ok(self.push(Value::Real(t), Op::Slice { x, start }))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.real(a)?.clone().reshape(shape)?;
        Ok(self.push(Value::Real(t), Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.real(a)?.data().iter().sum();
        Ok(self.push(Value::Real(Tensor::scalar(s)), Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.real(a)?;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Value::Real(Tensor::scalar(s)), Op::Mean(a)))
    }

    fn chw(&self, a: Var, what: &str) -> Result<(usize, usize, usize)> {
        let s = self.real(a)?.shape();
        match s {
            [c, h, w] => Ok((*c, *h, *w)),
            _ => shape_err(format!("{what} expects [c,h,w], got {s:?}")),
        }
    }

    /// 2×2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.chw(a, "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("avg_pool2 needs even dims, got {h}x{w}"));
        }
        let src = self.real(a)?.data();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * x;
                    out[(ch * oh + y) * ow + x] =
                        0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                }
            }
        }
        let t = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Value::Real(t), Op::AvgPool2(a)))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.chw(a, "upsample2")?;
        let src = self.real(a)?.data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    out[(ch * oh + y) * ow + x] = src[(ch * h + y / 2) * w + x / 2];
                }
            }
        }
        let t = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Value::Real(t), Op::Upsample2(a)))
    }

    /// Zero-pad a `[c,h,w]` tensor to `[c,out_h,out_w]`, placing it at (top, left).
    pub fn pad(&mut self, a: Var, top: usize, left: usize, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = self.chw(a, "pad")?;
        if top + h > out_h || left + w > out_w {
            return shape_err(format!("pad {h}x{w} at ({top},{left}) into {out_h}x{out_w}"));
        }
        let src = self.real(a)?.data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            for y in 0..h {
                let d = (ch * out_h + y + top) * out_w + left;
                out[d..d + w].copy_from_slice(&src[(ch * h + y) * w..(ch * h + y + 1) * w]);
            }
        }
        let t = Tensor::new(vec![c, out_h, out_w], out)?;
        Ok(self.push(Value::Real(t), Op::Pad { x: a, top, left }))
    }

    /// Inverse of [`Tape::pad`]: take the `[c,h,w]` window at (top, left).
    pub fn crop(&mut self, a: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let (c, ih, iw) = self.chw(a, "crop")?;
        if top + h > ih || left + w > iw {
            return shape_err(format!("crop {h}x{w} at ({top},{left}) from {ih}x{iw}"));
        }
        let src = self.real(a)?.data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                let s = (ch * ih + y + top) * iw + left;
                out[(ch * h + y) * w..(ch * h + y + 1) * w].copy_from_slice(&src[s..s + w]);
            }
        }
        let t = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push(Value::Real(t), Op::Crop { x: a, top, left }))
    }

    /// Mean over every fully contained `k×k` window: `[c,h,w] → [c,h-k+1,w-k+1]`.
    pub fn box_mean(&mut self, a: Var, k: usize) -> Result<Var> {
        let (c, h, w) = self.chw(a, "box_mean")?;
        if k == 0 || k > h || k > w {
            return shape_err(format!("box_mean window {k} on {h}x{w}"));
        }
        let src = self.real(a)?.data();
        let (oh, ow) = (h - k + 1, w - k + 1);
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        let row = (ch * h + y + dy) * w + x;
                        acc += src[row..row + k].iter().sum::<f64>();
                    }
                    out[(ch * oh + y) * ow + x] = acc * norm;
                }
            }
        }
        let t = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Value::Real(t), Op::BoxMean { x: a, k }))
    }

    fn same_complex(&self, a: Var, b: Var, what: &str) -> Result<(&CTensor, &CTensor)> {
        let (ta, tb) = (self.complex(a)?, self.complex(b)?);
        if ta.shape() != tb.shape() {
            return shape_err(format!("{what}: {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        Ok((ta, tb))
    }

    pub fn cadd(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.same_complex(a, b, "cadd")?;
        let t = ta.add(tb);
        Ok(self.push(Value::Complex(t), Op::CAdd(a, b)))
    }

    pub fn csub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.same_complex(a, b, "csub")?;
        let t = ta.sub(tb);
        Ok(self.push(Value::Complex(t), Op::CSub(a, b)))
    }

    /// Complex tensor times a real scalar node.
    pub fn cscale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let st = self.real(s)?;
        if !st.is_scalar() {
            return shape_err(format!("cscale_by expects a scalar, got {:?}", st.shape()));
        }
        let t = self.complex(a)?.scale(st.item());
        Ok(self.push(Value::Complex(t), Op::CScaleBy(a, s)))
    }

    pub fn fft2c(&mut self, a: Var) -> Result<Var> {
        let t = super::fft::fft2c(self.complex(a)?)?;
        Ok(self.push(Value::Complex(t), Op::Fft2c(a)))
    }

    pub fn ifft2c(&mut self, a: Var) -> Result<Var> {
        let t = super::fft::ifft2c(self.complex(a)?)?;
        Ok(self.push(Value::Complex(t), Op::Ifft2c(a)))
    }

    /// `[h,w] → [c,h,w]`, coil `i` = `maps[i] ⊙ x`.
    pub fn expand(&mut self, x: Var, maps: &Arc<CTensor>) -> Result<Var> {
        let t = expand_kernel(self.complex(x)?, maps)?;
        Ok(self.push(Value::Complex(t), Op::Expand { x, maps: Arc::clone(maps) }))
    }

    /// `[c,h,w] → [h,w]`, `Σᵢ conj(maps[i]) ⊙ xᵢ`.
    pub fn reduce(&mut self, x: Var, maps: &Arc<CTensor>) -> Result<Var> {
        let t = reduce_kernel(self.complex(x)?, maps)?;
        Ok(self.push(Value::Complex(t), Op::Reduce { x, maps: Arc::clone(maps) }))
    }

    /// Multiply every trailing `h×w` slice by a real mask.
    pub fn mask(&mut self, x: Var, mask: &Arc<Vec<f64>>) -> Result<Var> {
        let t = mask_kernel(self.complex(x)?, mask)?;
        Ok(self.push(Value::Complex(t), Op::Mask { x, mask: Arc::clone(mask) }))
    }

    pub fn cabs(&mut self, a: Var) -> Result<Var> {
        let t = self.complex(a)?.abs();
        Ok(self.push(Value::Real(t), Op::CAbs(a)))
    }

    /// Complex `[h,w]` → real `[2,h,w]` holding (Re, Im).
    pub fn to_channels(&mut self, a: Var) -> Result<Var> {
        let t = self.complex(a)?;
        let s = t.shape();
        if s.len() != 2 {
            return shape_err(format!("to_channels expects [h,w], got {s:?}"));
        }
        let mut data: Vec<f64> = t.data().iter().map(|v| v.re).collect();
        data.extend(t.data().iter().map(|v| v.im));
        let out = Tensor::new(vec![2, s[0], s[1]], data)?;
        Ok(self.push(Value::Real(out), Op::ToChannels(a)))
    }

    /// Real `[2,h,w]` → complex `[h,w]`.
    pub fn from_channels(&mut self, a: Var) -> Result<Var> {
        let t = self.real(a)?;
        let s = t.shape();
        if s.len() != 3 || s[0] != 2 {
            return shape_err(format!("from_channels expects [2,h,w], got {s:?}"));
        }
        let n = s[1] * s[2];
        let (re, im) = t.data().split_at(n);
        let data = re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        let out = CTensor::new(vec![s[1], s[2]], data)?;
        Ok(self.push(Value::Complex(out), Op::FromChannels(a)))
    }

    /// Reverse sweep from a real scalar `loss`; parameter gradients are
    /// accumulated into `params`.
    pub fn backward(&self, loss: Var, params: &mut ParameterStore) -> Result<()> {
        match &self.nodes[loss.0].value {
            Value::Real(t) if t.is_scalar() => {}
            v => {
                return Err(Error::Contract(format!(
                    "backward needs a real scalar loss, got shape {:?}",
                    v.shape()
                )))
            }
        }
        let mut grads: Vec<Option<Value>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Value::Real(Tensor::scalar(1.0)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match (&node.op, g) {
                (Op::Constant, _) => {}
                (Op::Param(name), Value::Real(g)) => params.accumulate(name, &g)?,
                (op, g) => self.propagate(op, id, g, &mut grads)?,
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, id: usize, g: Value, grads: &mut [Option<Value>]) -> Result<()> {
        let out = &self.nodes[id].value;
        match (op, g) {
            (Op::Add(a, b), Value::Real(g)) => {
                acc_real(grads, *a, g.clone());
                acc_real(grads, *b, g);
            }
            (Op::Sub(a, b), Value::Real(g)) => {
                acc_real(grads, *b, g.map(|v| -v));
                acc_real(grads, *a, g);
            }
            (Op::Mul(a, b), Value::Real(g)) => {
                let (ta, tb) = (self.real(*a)?, self.real(*b)?);
                acc_real(grads, *a, zip(&g, tb, |g, y| g * y));
                acc_real(grads, *b, zip(&g, ta, |g, x| g * x));
            }
            (Op::Div(a, b), Value::Real(g)) => {
                let (ta, tb) = (self.real(*a)?, self.real(*b)?);
                acc_real(grads, *a, zip(&g, tb, |g, y| g / y));
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .zip(tb.data())
                    .map(|((g, x), y)| -g * x / (y * y))
                    .collect();
                acc_real(grads, *b, Tensor::new(g.shape().to_vec(), gb)?);
            }
            (Op::Scale(a, s), Value::Real(g)) => acc_real(grads, *a, g.map(|v| v * s)),
            (Op::AddScalar(a), Value::Real(g)) => acc_real(grads, *a, g),
            (Op::Sigmoid(a), Value::Real(g)) => {
                let y = as_real(out);
                acc_real(grads, *a, zip(&g, y, |g, y| g * y * (1.0 - y)));
            }
            (Op::Tanh(a), Value::Real(g)) => {
                let y = as_real(out);
                acc_real(grads, *a, zip(&g, y, |g, y| g * (1.0 - y * y)));
            }
            (Op::Relu(a), Value::Real(g)) => {
                let x = self.real(*a)?;
                acc_real(grads, *a, zip(&g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            (Op::Abs(a), Value::Real(g)) => {
                let x = self.real(*a)?;
                acc_real(grads, *a, zip(&g, x, |g, x| g * x.signum() * (x != 0.0) as u8 as f64));
            }
            (Op::Square(a), Value::Real(g)) => {
                let x = self.real(*a)?;
                acc_real(grads, *a, zip(&g, x, |g, x| 2.0 * g * x));
            }
            (Op::Conv2d { x, kernel, bias, dims }, Value::Real(g)) => {
                let (tx, tk) = (self.real(*x)?, self.real(*kernel)?);
                if needs_grad(&self.nodes[x.0].op) {
                    let gx = conv::backward_input(g.data(), tk.data(), *dims);
                    acc_real(grads, *x, Tensor::new(tx.shape().to_vec(), gx)?);
                }
                let (gk, gb) = conv::backward_params(g.data(), tx.data(), *dims);
                acc_real(grads, *kernel, Tensor::new(tk.shape().to_vec(), gk)?);
                acc_real(grads, *bias, Tensor::new(vec![dims.c_out], gb)?);
            }
            (Op::ScaleChannels(x, u), Value::Real(g)) => {
                let (tx, tu) = (self.real(*x)?, self.real(*u)?);
                let plane = g.len() / tu.len();
                let mut gx = Vec::with_capacity(g.len());
                let mut gu = Vec::with_capacity(tu.len());
                for ((gc, xc), &s) in g.data().chunks_exact(plane).zip(tx.data().chunks_exact(plane)).zip(tu.data()) {
                    gx.extend(gc.iter().map(|v| v * s));
                    gu.push(gc.iter().zip(xc).map(|(a, b)| a * b).sum());
                }
                acc_real(grads, *x, Tensor::new(tx.shape().to_vec(), gx)?);
                acc_real(grads, *u, Tensor::new(tu.shape().to_vec(), gu)?);
            }
            (Op::Concat(parts), Value::Real(g)) => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.real(p)?;
                    let n = t.len();
                    let part = Tensor::new(t.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                    acc_real(grads, p, part);
                    offset += n;
                }
            }
            (Op::Slice { x, start }, Value::Real(g)) => {
                let t = self.real(*x)?;
                let inner: usize = t.shape()[1..].iter().product();
                let mut full = Tensor::zeros(t.shape());
                full.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                acc_real(grads, *x, full);
            }
            (Op::Reshape(a), Value::Real(g)) => {
                let s = self.real(*a)?.shape().to_vec();
                acc_real(grads, *a, g.reshape(&s)?);
            }
            (Op::Sum(a), Value::Real(g)) => {
                let t = self.real(*a)?;
                acc_real(grads, *a, Tensor::full(t.shape(), g.item()));
            }
            (Op::Mean(a), Value::Real(g)) => {
                let t = self.real(*a)?;
                acc_real(grads, *a, Tensor::full(t.shape(), g.item() / t.len() as f64));
            }
            (Op::AvgPool2(a), Value::Real(g)) => {
                let s = self.real(*a)?.shape().to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            gx[(ch * h + y) * w + x] = 0.25 * g.data()[(ch * oh + y / 2) * ow + x / 2];
                        }
                    }
                }
                acc_real(grads, *a, Tensor::new(s, gx)?);
            }
            (Op::Upsample2(a), Value::Real(g)) => {
                let s = self.real(*a)?.shape().to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let ow = 2 * w;
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..2 * h {
                        for x in 0..ow {
                            gx[(ch * h + y / 2) * w + x / 2] += g.data()[(ch * 2 * h + y) * ow + x];
                        }
                    }
                }
                acc_real(grads, *a, Tensor::new(s, gx)?);
            }
            (Op::Pad { x, top, left }, Value::Real(g)) => {
                let s = self.real(*x)?.shape().to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (ph, pw) = (g.shape()[1], g.shape()[2]);
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        let src = (ch * ph + y + top) * pw + left;
                        gx[(ch * h + y) * w..(ch * h + y + 1) * w].copy_from_slice(&g.data()[src..src + w]);
                    }
                }
                acc_real(grads, *x, Tensor::new(s, gx)?);
            }
            (Op::Crop { x, top, left }, Value::Real(g)) => {
                let s = self.real(*x)?.shape().to_vec();
                let (c, ih, iw) = (s[0], s[1], s[2]);
                let (h, w) = (g.shape()[1], g.shape()[2]);
                let mut gx = vec![0.0; c * ih * iw];
                for ch in 0..c {
                    for y in 0..h {
                        let dst = (ch * ih + y + top) * iw + left;
                        gx[dst..dst + w].copy_from_slice(&g.data()[(ch * h + y) * w..(ch * h + y + 1) * w]);
                    }
                }
                acc_real(grads, *x, Tensor::new(s, gx)?);
            }
            (Op::BoxMean { x, k }, Value::Real(g)) => {
                let s = self.real(*x)?.shape().to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h - k + 1, w - k + 1);
                let norm = 1.0 / (k * k) as f64;
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let gv = g.data()[(ch * oh + y) * ow + xx] * norm;
                            for dy in 0..*k {
                                let row = (ch * h + y + dy) * w + xx;
                                gx[row..row + k].iter_mut().for_each(|v| *v += gv);
                            }
                        }
                    }
                }
                acc_real(grads, *x, Tensor::new(s, gx)?);
            }
            (Op::CAdd(a, b), Value::Complex(g)) => {
                acc_complex(grads, *a, g.clone());
                acc_complex(grads, *b, g);
            }
            (Op::CSub(a, b), Value::Complex(g)) => {
                acc_complex(grads, *b, g.scale(-1.0));
                acc_complex(grads, *a, g);
            }
            (Op::CScaleBy(a, s), Value::Complex(g)) => {
                let sv = self.real(*s)?.item();
                let ta = self.complex(*a)?;
                acc_real(grads, *s, Tensor::scalar(ta.real_dot(&g)));
                acc_complex(grads, *a, g.scale(sv));
            }
            (Op::Fft2c(a), Value::Complex(mut g)) => {
                let (h, w) = g.grid()?;
                fft2c_slices(g.data_mut(), h, w, true);
                acc_complex(grads, *a, g);
            }
            (Op::Ifft2c(a), Value::Complex(mut g)) => {
                let (h, w) = g.grid()?;
                fft2c_slices(g.data_mut(), h, w, false);
                acc_complex(grads, *a, g);
            }
            (Op::Expand { x, maps }, Value::Complex(g)) => {
                acc_complex(grads, *x, reduce_kernel(&g, maps)?);
            }
            (Op::Reduce { x, maps }, Value::Complex(g)) => {
                acc_complex(grads, *x, expand_kernel(&g, maps)?);
            }
            (Op::Mask { x, mask }, Value::Complex(g)) => {
                acc_complex(grads, *x, mask_kernel(&g, mask)?);
            }
            (Op::CAbs(a), Value::Real(g)) => {
                let z = self.complex(*a)?;
                let data = g
                    .data()
                    .iter()
                    .zip(z.data())
                    .map(|(&g, z)| {
                        let r = z.norm();
                        if r > 0.0 {
                            z * (g / r)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect();
                acc_complex(grads, *a, CTensor::new(z.shape().to_vec(), data)?);
            }
            (Op::ToChannels(a), Value::Real(g)) => {
                let n = g.len() / 2;
                let (re, im) = g.data().split_at(n);
                let data = re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect();
                acc_complex(grads, *a, CTensor::new(self.complex(*a)?.shape().to_vec(), data)?);
            }
            (Op::FromChannels(a), Value::Complex(g)) => {
                let mut data: Vec<f64> = g.data().iter().map(|v| v.re).collect();
                data.extend(g.data().iter().map(|v| v.im));
                acc_real(grads, *a, Tensor::new(self.real(*a)?.shape().to_vec(), data)?);
            }
            (op, _) => {
                return Err(Error::Contract(format!(
                    "gradient kind does not match op {op:?} at node {id}"
                )))
            }
        }
        Ok(())
    }
}

fn needs_grad(op: &Op) -> bool {
    !matches!(op, Op::Constant)
}

fn as_real(v: &Value) -> &Tensor {
    match v {
        Value::Real(t) => t,
        Value::Complex(_) => unreachable!("real op produced complex value"),
    }
}

fn zip(g: &Tensor, t: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(t.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.shape().to_vec(), data).expect("same shape")
}

fn acc_real(grads: &mut [Option<Value>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        slot @ None => *slot = Some(Value::Real(g)),
        Some(Value::Real(acc)) => acc.add_assign(&g),
        Some(Value::Complex(_)) => unreachable!("real gradient into complex node"),
    }
}

fn acc_complex(grads: &mut [Option<Value>], v: Var, g: CTensor) {
    match &mut grads[v.0] {
        slot @ None => *slot = Some(Value::Complex(g)),
        Some(Value::Complex(acc)) => acc.add_assign(&g),
        Some(Value::Real(_)) => unreachable!("complex gradient into real node"),
    }
}

fn check_maps(h: usize, w: usize, maps: &CTensor) -> Result<usize> {
    match maps.shape() {
        [c, mh, mw] if *mh == h && *mw == w && *c >= 1 => Ok(*c),
        s => shape_err(format!("sensitivity maps {s:?} do not match image {h}x{w}")),
    }
}

pub(crate) fn expand_kernel(x: &CTensor, maps: &CTensor) -> Result<CTensor> {
    let (h, w) = match x.shape() {
        [h, w] => (*h, *w),
        s => return shape_err(format!("expand expects [h,w], got {s:?}")),
    };
    let c = check_maps(h, w, maps)?;
    let n = h * w;
    let mut out = Vec::with_capacity(c * n);
    for coil in maps.data().chunks_exact(n) {
        out.extend(coil.iter().zip(x.data()).map(|(s, v)| s * v));
    }
    CTensor::new(vec![c, h, w], out)
}

pub(crate) fn reduce_kernel(x: &CTensor, maps: &CTensor) -> Result<CTensor> {
    let (c, h, w) = match x.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return shape_err(format!("reduce expects [c,h,w], got {s:?}")),
    };
    if check_maps(h, w, maps)? != c {
        return shape_err(format!("{} coils in data, {} maps", c, maps.shape()[0]));
    }
    let n = h * w;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (coil, map) in x.data().chunks_exact(n).zip(maps.data().chunks_exact(n)) {
        for ((o, v), s) in out.iter_mut().zip(coil).zip(map) {
            *o += s.conj() * v;
        }
    }
    CTensor::new(vec![h, w], out)
}

pub(crate) fn mask_kernel(x: &CTensor, mask: &[f64]) -> Result<CTensor> {
    let (h, w) = x.grid()?;
    if mask.len() != h * w {
        return shape_err(format!("mask of {} samples on {h}x{w} grid", mask.len()));
    }
    let data = x
        .data()
        .chunks_exact(h * w)
        .flat_map(|img| img.iter().zip(mask).map(|(v, m)| v * m))
        .collect();
    CTensor::new(x.shape().to_vec(), data)
}
