//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Values live on
//! the tape and are addressed by [`Var`] handles; [`Tape::backward`] walks the
//! records in reverse and returns the gradients of every leaf that requires
//! them. A tape supports exactly one backward pass.
//!
//! Layout conventions: 1-D convolutions take `[channels, time]` inputs,
//! kernels are `[out, in / groups, k]` for [`Tape::conv1d`] and
//! `[in, out, k]` for [`Tape::conv1d_transpose`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signal::{istft_parts, istft_parts_adjoint, StftConfig};

/// Floor added inside logarithms and normalisations.
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} does not hold {} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Self { shape, data })
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::raw(shape.to_vec(), vec![value; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![], vec![value])
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Self::raw(vec![data.len()], data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        groups: usize,
    },
    ConvTranspose1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
    },
    Relu(Var),
    Prelu(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    GlobalLayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: f64,
    },
    Sum(Var),
    Mean(Var),
    Log10(Var),
    Pad {
        input: Var,
        left: usize,
        right: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Transpose(Var),
    Istft {
        re: Var,
        im: Var,
        num_frames: usize,
        config: StftConfig,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Option<Vec<usize>>>,
}

impl Gradients {
    /// Gradient of a leaf; zero when the leaf did not influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match self.grads.get(var.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes.get(var.0).and_then(|s| s.as_deref()).unwrap_or(&[])),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads.get_mut(var.0).and_then(|g| g.take()) {
            Some(g) => g,
            None => Tensor::zeros(self.shapes.get(var.0).and_then(|s| s.as_deref()).unwrap_or(&[])),
        }
    }
}

/// Right-aligned broadcast of `rhs` into `lhs`; `None` when shapes are equal.
fn broadcast_map(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Option<Vec<usize>>> {
    if lhs == rhs {
        return Ok(None);
    }
    let mismatch = || Error::shape(op, format!("cannot broadcast {rhs:?} into {lhs:?}"));
    if rhs.len() > lhs.len() {
        return Err(mismatch());
    }
    let offset = lhs.len() - rhs.len();
    for (i, &r) in rhs.iter().enumerate() {
        if r != 1 && r != lhs[offset + i] {
            return Err(mismatch());
        }
    }
    // Stride of each lhs axis inside rhs (zero on broadcast axes).
    let mut strides = vec![0usize; lhs.len()];
    let mut acc = 1;
    for i in (0..rhs.len()).rev() {
        if rhs[i] != 1 {
            strides[offset + i] = acc;
        }
        acc *= rhs[i];
    }
    let n: usize = lhs.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; lhs.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for ax in (0..lhs.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < lhs[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(Some(map))
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn conv_out_len(op: &'static str, len: usize, k: usize, stride: usize, dilation: usize) -> Result<usize> {
    let span = dilation * (k - 1) + 1;
    if len < span {
        return Err(Error::shape(op, format!("input length {len} shorter than kernel span {span}")));
    }
    Ok((len - span) / stride + 1)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].value.shape
    }

    fn data(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value.data
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let map = broadcast_map(name, self.shape(a), self.shape(b))?;
        let (x, y) = (self.data(a), self.data(b));
        let data: Vec<f64> = match &map {
            None => x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect(),
            Some(m) => x.iter().zip(m).map(|(p, j)| f(*p, y[*j])).collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::raw(shape, data), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = &self.nodes[a.0].value;
        let v = Tensor::raw(t.shape.clone(), t.data.iter().map(|x| x * factor).collect());
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, factor), rg)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::Matmul(a, b), rg))
    }

    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 2 || sk.len() != 3 || stride == 0 || dilation == 0 || groups == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("input {si:?}, kernel {sk:?}, stride {stride}, dilation {dilation}, groups {groups}"),
            ));
        }
        let (cin, len) = (si[0], si[1]);
        let (cout, cin_g, k) = (sk[0], sk[1], sk[2]);
        if cin % groups != 0 || cout % groups != 0 || cin_g * groups != cin || k == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("groups {groups} incompatible with input {si:?} and kernel {sk:?}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::shape("conv1d", format!("bias {:?} for {cout} channels", self.shape(b))));
            }
        }
        let lout = conv_out_len("conv1d", len, k, stride, dilation)?;
        let x = self.data(input);
        let w = self.data(kernel);
        let cout_g = cout / groups;
        let mut out = vec![0.0; cout * lout];
        for o in 0..cout {
            let grp = o / cout_g;
            let row = &mut out[o * lout..(o + 1) * lout];
            if let Some(b) = bias {
                row.fill(self.nodes[b.0].value.data[o]);
            }
            for ci in 0..cin_g {
                let c = grp * cin_g + ci;
                let xin = &x[c * len..(c + 1) * len];
                for kk in 0..k {
                    let wv = w[(o * cin_g + ci) * k + kk];
                    let off = kk * dilation;
                    if stride == 1 {
                        for (r, xv) in row.iter_mut().zip(&xin[off..off + lout]) {
                            *r += wv * xv;
                        }
                    } else {
                        for (t, r) in row.iter_mut().enumerate() {
                            *r += wv * xin[off + t * stride];
                        }
                    }
                }
            }
        }
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let rg = self.rg(&parents);
        Ok(self.push(
            Tensor::raw(vec![cout, lout], out),
            Op::Conv1d {
                input,
                kernel,
                bias,
                stride,
                dilation,
                groups,
            },
            rg,
        ))
    }

    /// Transposed convolution: `[cin, len] -> [cout, (len - 1) * stride + k]`.
    pub fn conv1d_transpose(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 2 || sk.len() != 3 || si[0] != sk[0] || stride == 0 || si[1] == 0 {
            return Err(Error::shape(
                "conv1d_transpose",
                format!("input {si:?}, kernel {sk:?}, stride {stride}"),
            ));
        }
        let (cin, len) = (si[0], si[1]);
        let (cout, k) = (sk[1], sk[2]);
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::shape(
                    "conv1d_transpose",
                    format!("bias {:?} for {cout} channels", self.shape(b)),
                ));
            }
        }
        let lout = (len - 1) * stride + k;
        let x = self.data(input);
        let w = self.data(kernel);
        let mut out = vec![0.0; cout * lout];
        for o in 0..cout {
            let row = &mut out[o * lout..(o + 1) * lout];
            if let Some(b) = bias {
                row.fill(self.nodes[b.0].value.data[o]);
            }
            for i in 0..cin {
                let xin = &x[i * len..(i + 1) * len];
                for kk in 0..k {
                    let wv = w[(i * cout + o) * k + kk];
                    for (t, xv) in xin.iter().enumerate() {
                        row[t * stride + kk] += wv * xv;
                    }
                }
            }
        }
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let rg = self.rg(&parents);
        Ok(self.push(
            Tensor::raw(vec![cout, lout], out),
            Op::ConvTranspose1d {
                input,
                kernel,
                bias,
                stride,
            },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[a.0].value;
        let v = Tensor::raw(t.shape.clone(), t.data.iter().map(|x| f(*x)).collect());
        let rg = self.rg(&[a]);
        self.push(v, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// `log10(x + EPSILON)`.
    pub fn log10(&mut self, a: Var) -> Var {
        self.unary(a, |x| (x + EPSILON).log10(), Op::Log10(a))
    }

    /// Parametric ReLU with one slope per leading-axis channel (or one shared).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x).to_vec(), self.shape(slope).to_vec());
        let channels = sx.first().copied().unwrap_or(1);
        if ss.len() != 1 || (ss[0] != 1 && ss[0] != channels) {
            return Err(Error::shape("prelu", format!("slope {ss:?} for input {sx:?}")));
        }
        let per = self.value(x).numel() / channels.max(1);
        let a = self.data(slope);
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if *v > 0.0 {
                    *v
                } else {
                    a[if a.len() == 1 { 0 } else { i / per }] * v
                }
            })
            .collect();
        let rg = self.rg(&[x, slope]);
        Ok(self.push(Tensor::raw(sx, data), Op::Prelu(x, slope), rg))
    }

    /// Normalises `[C, T]` over all elements, then applies per-channel
    /// `gain` and `bias`.
    pub fn global_layer_norm(&mut self, input: Var, gain: Var, bias: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || self.shape(gain) != [s[0]] || self.shape(bias) != [s[0]] {
            return Err(Error::shape(
                "global_layer_norm",
                format!("input {s:?}, gain {:?}, bias {:?}", self.shape(gain), self.shape(bias)),
            ));
        }
        let x = self.data(input);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + EPSILON).sqrt();
        let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
        let (g, b) = (self.data(gain), self.data(bias));
        let t = s[1];
        let out: Vec<f64> = normalized
            .iter()
            .enumerate()
            .map(|(i, v)| g[i / t] * v + b[i / t])
            .collect();
        let rg = self.rg(&[input, gain, bias]);
        Ok(self.push(
            Tensor::raw(s, out),
            Op::GlobalLayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.data(a).iter().sum::<f64>();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(v), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let v = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(v), Op::Mean(a), rg)
    }

    /// Zero padding along the last axis.
    pub fn pad(&mut self, a: Var, left: usize, right: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let Some(&last) = s.last() else {
            return Err(Error::shape("pad", "cannot pad a scalar"));
        };
        let rows = self.value(a).numel() / last.max(1);
        let width = last + left + right;
        let mut out = vec![0.0; rows * width];
        let x = self.data(a);
        for r in 0..rows {
            out[r * width + left..r * width + left + last].copy_from_slice(&x[r * last..(r + 1) * last]);
        }
        let mut shape = s;
        *shape.last_mut().expect("non-empty") = width;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::raw(shape, out), Op::Pad { input: a, left, right }, rg))
    }

    /// `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::shape("slice", format!("[{start}, {end}) on axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let x = self.data(a);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner;
            out.extend_from_slice(&x[base + start * inner..base + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::raw(shape, out), Op::Slice { input: a, axis, start }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(first) = inputs.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {s0:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != s0.len() || s.iter().enumerate().any(|(i, d)| i != axis && *d != s0[i]) {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {s0:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let w = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.data(*v)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::raw(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", t.shape)));
        }
        let v = Tensor::raw(shape.to_vec(), t.data.clone());
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected 2-D, got {s:?}")));
        }
        let out = transpose_raw(self.data(a), s[0], s[1]);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::raw(vec![s[1], s[0]], out), Op::Transpose(a), rg))
    }

    /// Differentiable inverse STFT of `[frames, bins]` real and imaginary
    /// planes, producing a `[out_len]` waveform.
    pub fn istft(&mut self, re: Var, im: Var, config: StftConfig, out_len: usize) -> Result<Var> {
        let s = self.shape(re).to_vec();
        if s.len() != 2 || s[1] != config.num_bins() || self.shape(im) != s.as_slice() {
            return Err(Error::shape(
                "istft",
                format!("planes {s:?} / {:?} for {} bins", self.shape(im), config.num_bins()),
            ));
        }
        let out = istft_parts(self.data(re), self.data(im), s[0], config, out_len)?;
        let rg = self.rg(&[re, im]);
        Ok(self.push(
            Tensor::raw(vec![out_len], out),
            Op::Istft {
                re,
                im,
                num_frames: s[0],
                config,
            },
            rg,
        ))
    }

    /// Hash of the sign pattern of every ReLU/PReLU input, used to detect
    /// finite-difference probes that straddle a kink.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(x) | Op::Prelu(x, _) = node.op {
                for v in &self.nodes[x.0].value.data {
                    (*v > 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar `loss`. The tape cannot be reused afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
        }
        let mut out = Vec::with_capacity(n);
        let mut shapes = Vec::with_capacity(n);
        for (node, g) in self.nodes.iter().zip(grads) {
            let is_leaf = matches!(node.op, Op::Leaf) && node.requires_grad;
            shapes.push(is_leaf.then(|| node.value.shape.clone()));
            out.push(match (is_leaf, g) {
                (true, Some(g)) => Some(Tensor::raw(node.value.shape.clone(), g)),
                _ => None,
            });
        }
        Ok(Gradients { grads: out, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.len(), |d| add_into(d, g, 1.0));
                }
                if self.wants(*b) {
                    let map = broadcast_map("add", self.shape(*a), self.shape(*b))?;
                    let nb = self.value(*b).numel();
                    accumulate(&mut grads[b.0], nb, |d| match &map {
                        None => add_into(d, g, sign),
                        Some(m) => {
                            for (gv, j) in g.iter().zip(m) {
                                d[*j] += sign * gv;
                            }
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let map = broadcast_map("mul", self.shape(*a), self.shape(*b))?;
                let (xa, xb) = (self.data(*a), self.data(*b));
                let bidx = |k: usize| map.as_ref().map_or(k, |m| m[k]);
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.len(), |d| {
                        for (k, (dv, gv)) in d.iter_mut().zip(g).enumerate() {
                            *dv += gv * xb[bidx(k)];
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], xb.len(), |d| {
                        for (k, gv) in g.iter().enumerate() {
                            d[bidx(k)] += gv * xa[k];
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[a.0], g.len(), |d| add_into(d, g, *c));
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    // dA = G * B^T
                    let bt = transpose_raw(self.data(*b), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    accumulate(&mut grads[a.0], m * k, |d| add_into(d, &da, 1.0));
                }
                if self.wants(*b) {
                    // dB = A^T * G
                    let at = transpose_raw(self.data(*a), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    accumulate(&mut grads[b.0], k * n, |d| add_into(d, &db, 1.0));
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                stride,
                dilation,
                groups,
            } => {
                let (si, sk) = (self.shape(*input), self.shape(*kernel));
                let (len, cout, cin_g, k) = (si[1], sk[0], sk[1], sk[2]);
                let lout = node.value.shape[1];
                let cout_g = cout / groups;
                let (x, w) = (self.data(*input), self.data(*kernel));
                let (stride, dilation) = (*stride, *dilation);
                if self.wants(*input) {
                    accumulate(&mut grads[input.0], x.len(), |dx| {
                        for o in 0..cout {
                            let grp = o / cout_g;
                            let grow = &g[o * lout..(o + 1) * lout];
                            for ci in 0..cin_g {
                                let c = grp * cin_g + ci;
                                let drow = &mut dx[c * len..(c + 1) * len];
                                for kk in 0..k {
                                    let wv = w[(o * cin_g + ci) * k + kk];
                                    let off = kk * dilation;
                                    if stride == 1 {
                                        for (dv, gv) in drow[off..off + lout].iter_mut().zip(grow) {
                                            *dv += wv * gv;
                                        }
                                    } else {
                                        for (t, gv) in grow.iter().enumerate() {
                                            drow[off + t * stride] += wv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if self.wants(*kernel) {
                    accumulate(&mut grads[kernel.0], w.len(), |dw| {
                        for o in 0..cout {
                            let grp = o / cout_g;
                            let grow = &g[o * lout..(o + 1) * lout];
                            for ci in 0..cin_g {
                                let c = grp * cin_g + ci;
                                let xin = &x[c * len..(c + 1) * len];
                                for kk in 0..k {
                                    let off = kk * dilation;
                                    let s: f64 = if stride == 1 {
                                        dot(grow, &xin[off..off + lout])
                                    } else {
                                        grow.iter().enumerate().map(|(t, gv)| gv * xin[off + t * stride]).sum()
                                    };
                                    dw[(o * cin_g + ci) * k + kk] += s;
                                }
                            }
                        }
                    });
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    accumulate(&mut grads[b.0], cout, |db| {
                        for (o, dv) in db.iter_mut().enumerate() {
                            *dv += g[o * lout..(o + 1) * lout].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::ConvTranspose1d {
                input,
                kernel,
                bias,
                stride,
            } => {
                let (si, sk) = (self.shape(*input), self.shape(*kernel));
                let (cin, len, cout, k) = (si[0], si[1], sk[1], sk[2]);
                let lout = node.value.shape[1];
                let (x, w) = (self.data(*input), self.data(*kernel));
                let stride = *stride;
                if self.wants(*input) {
                    accumulate(&mut grads[input.0], x.len(), |dx| {
                        for i in 0..cin {
                            let drow = &mut dx[i * len..(i + 1) * len];
                            for o in 0..cout {
                                let grow = &g[o * lout..(o + 1) * lout];
                                for kk in 0..k {
                                    let wv = w[(i * cout + o) * k + kk];
                                    for (t, dv) in drow.iter_mut().enumerate() {
                                        *dv += wv * grow[t * stride + kk];
                                    }
                                }
                            }
                        }
                    });
                }
                if self.wants(*kernel) {
                    accumulate(&mut grads[kernel.0], w.len(), |dw| {
                        for i in 0..cin {
                            let xin = &x[i * len..(i + 1) * len];
                            for o in 0..cout {
                                let grow = &g[o * lout..(o + 1) * lout];
                                for kk in 0..k {
                                    dw[(i * cout + o) * k + kk] +=
                                        xin.iter().enumerate().map(|(t, xv)| xv * grow[t * stride + kk]).sum::<f64>();
                                }
                            }
                        }
                    });
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    accumulate(&mut grads[b.0], cout, |db| {
                        for (o, dv) in db.iter_mut().enumerate() {
                            *dv += g[o * lout..(o + 1) * lout].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                accumulate(&mut grads[a.0], g.len(), |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::Prelu(a, slope) => {
                let x = self.data(*a);
                let s = self.data(*slope);
                let per = x.len() / self.shape(*a).first().copied().unwrap_or(1).max(1);
                let ch = |k: usize| if s.len() == 1 { 0 } else { k / per };
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.len(), |d| {
                        for (k, (dv, gv)) in d.iter_mut().zip(g).enumerate() {
                            *dv += if x[k] > 0.0 { *gv } else { s[ch(k)] * gv };
                        }
                    });
                }
                if self.wants(*slope) {
                    accumulate(&mut grads[slope.0], s.len(), |d| {
                        for (k, gv) in g.iter().enumerate() {
                            if x[k] <= 0.0 {
                                d[ch(k)] += gv * x[k];
                            }
                        }
                    });
                }
            }
            Op::Sigmoid(a) => accumulate(&mut grads[a.0], g.len(), |d| {
                for ((dv, gv), yv) in d.iter_mut().zip(g).zip(y) {
                    *dv += gv * yv * (1.0 - yv);
                }
            }),
            Op::Tanh(a) => accumulate(&mut grads[a.0], g.len(), |d| {
                for ((dv, gv), yv) in d.iter_mut().zip(g).zip(y) {
                    *dv += gv * (1.0 - yv * yv);
                }
            }),
            Op::Log10(a) => {
                let x = self.data(*a);
                let ln10 = std::f64::consts::LN_10;
                accumulate(&mut grads[a.0], g.len(), |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(g).zip(x) {
                        *dv += gv / ((xv + EPSILON) * ln10);
                    }
                });
            }
            Op::GlobalLayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let t = self.shape(*input)[1];
                let gn = self.data(*gain);
                if self.wants(*gain) {
                    accumulate(&mut grads[gain.0], gn.len(), |d| {
                        for (k, gv) in g.iter().enumerate() {
                            d[k / t] += gv * normalized[k];
                        }
                    });
                }
                if self.wants(*bias) {
                    accumulate(&mut grads[bias.0], gn.len(), |d| {
                        for (k, gv) in g.iter().enumerate() {
                            d[k / t] += gv;
                        }
                    });
                }
                if self.wants(*input) {
                    let n = g.len() as f64;
                    let dn: Vec<f64> = g.iter().enumerate().map(|(k, gv)| gv * gn[k / t]).collect();
                    let mean_dn = dn.iter().sum::<f64>() / n;
                    let mean_dn_x = dn.iter().zip(normalized).map(|(a, b)| a * b).sum::<f64>() / n;
                    accumulate(&mut grads[input.0], g.len(), |d| {
                        for (k, dv) in d.iter_mut().enumerate() {
                            *dv += inv_std * (dn[k] - mean_dn - normalized[k] * mean_dn_x);
                        }
                    });
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let n = self.value(*a).numel();
                let scale = if matches!(node.op, Op::Mean(_)) { 1.0 / n as f64 } else { 1.0 };
                accumulate(&mut grads[a.0], n, |d| {
                    for dv in d.iter_mut() {
                        *dv += g[0] * scale;
                    }
                });
            }
            Op::Pad { input, left, right } => {
                let last = *self.shape(*input).last().expect("padded tensor has an axis");
                let width = last + left + right;
                let n = self.value(*input).numel();
                accumulate(&mut grads[input.0], n, |d| {
                    for r in 0..n / last.max(1) {
                        add_into(
                            &mut d[r * last..(r + 1) * last],
                            &g[r * width + left..r * width + left + last],
                            1.0,
                        );
                    }
                });
            }
            Op::Slice { input, axis, start } => {
                let s = self.shape(*input);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let width = node.value.shape[*axis] * inner;
                let n = self.value(*input).numel();
                accumulate(&mut grads[input.0], n, |d| {
                    for o in 0..outer {
                        let base = o * s[*axis] * inner + start * inner;
                        add_into(&mut d[base..base + width], &g[o * width..(o + 1) * width], 1.0);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let s0 = &node.value.shape;
                let outer: usize = s0[..*axis].iter().product();
                let inner: usize = s0[axis + 1..].iter().product();
                let total = s0[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let w = self.shape(*v)[*axis] * inner;
                    if self.wants(*v) {
                        let n = self.value(*v).numel();
                        accumulate(&mut grads[v.0], n, |d| {
                            for o in 0..outer {
                                add_into(
                                    &mut d[o * w..(o + 1) * w],
                                    &g[o * total + offset..o * total + offset + w],
                                    1.0,
                                );
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::Reshape(a) => accumulate(&mut grads[a.0], g.len(), |d| add_into(d, g, 1.0)),
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let gt = transpose_raw(g, s[1], s[0]);
                accumulate(&mut grads[a.0], g.len(), |d| add_into(d, &gt, 1.0));
            }
            Op::Istft {
                re,
                im,
                num_frames,
                config,
            } => {
                let (g_re, g_im) = istft_parts_adjoint(g, *num_frames, *config)?;
                if self.wants(*re) {
                    accumulate(&mut grads[re.0], g_re.len(), |d| add_into(d, &g_re, 1.0));
                }
                if self.wants(*im) {
                    accumulate(&mut grads[im.0], g_im.len(), |d| add_into(d, &g_im, 1.0));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            add_into(row, &b[p * n..(p + 1) * n], av);
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate, analytic, numeric)` per probe.
    pub probes: Vec<(usize, usize, f64, f64)>,
    /// Probes discarded because the perturbation crossed a ReLU kink.
    pub skipped_kinks: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(EPSILON)
}

/// Compares reverse-mode gradients of a scalar function of several tensors
/// with central differences at `n_coords` random coordinates. Coordinates
/// whose `+-step` probes change the ReLU/PReLU activation pattern are
/// re-drawn (up to `20 * n_coords` draws).
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], n_coords: usize, step: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item().ok_or_else(|| Error::Tape("function is not scalar".into()))?;
        Ok((v, tape.kink_signature()))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();

    let total: usize = inputs.iter().map(|t| t.numel()).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("grad_check needs at least one coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: Vec::with_capacity(n_coords),
        skipped_kinks: 0,
    };
    let mut values = inputs.to_vec();
    let mut draws = 0;
    while report.probes.len() < n_coords && draws < 20 * n_coords.max(1) {
        draws += 1;
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= values[which].numel() {
            flat -= values[which].numel();
            which += 1;
        }
        let orig = values[which].data[flat];
        values[which].data[flat] = orig + step;
        let (plus, sig_plus) = eval(&values)?;
        values[which].data[flat] = orig - step;
        let (minus, sig_minus) = eval(&values)?;
        values[which].data[flat] = orig;
        if sig_plus != sig_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[which].data[flat];
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        report.probes.push((which, flat, a, numeric));
    }
    Ok(report)
}

/// Single-tensor form of [`grad_check_many`]; returns the worst relative error.
pub fn grad_check<F>(f: F, x: &Tensor, n_coords: usize, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), n_coords, step, 0)
        .map(|r| r.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn inner(a: &Tensor, b: &Tensor) -> f64 {
        dot(a.data(), b.data())
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
        assert_eq!(Tensor::scalar(2.0).item(), Some(2.0));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[3, 4], 1));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn square_gradient_is_two_x() {
        let t = rand_tensor(&[10], 2);
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap().get(x);
        for (gv, xv) in g.data().iter().zip(t.data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[3], 3));
        assert!(tape.backward(x).is_err());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Tape(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[3], 4));
        let unused = tape.leaf(rand_tensor(&[2, 2], 5));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(rand_tensor(&[2, 3], 1));
        let b = tape.leaf(rand_tensor(&[3, 2], 2));
        match tape.add(a, b) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "add"),
            other => panic!("{other:?}"),
        }
        let k = tape.leaf(rand_tensor(&[4, 3, 1], 3));
        assert!(matches!(tape.conv1d(a, k, None, 1, 1, 2), Err(Error::Shape { op: "conv1d", .. })));
    }

    #[test]
    fn unit_kernel_conv_is_identity() {
        let x = rand_tensor(&[1, 20], 6);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let k = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv1d(xv, k, None, 1, 1, 1).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        for (cin, cout, k, stride, lout) in [(3, 4, 5, 2, 9), (1, 8, 8, 4, 13), (2, 2, 3, 1, 7)] {
            let len = (lout - 1) * stride + k;
            let x = rand_tensor(&[cin, len], 7);
            let y = rand_tensor(&[cout, lout], 8);
            let w = rand_tensor(&[cout, cin, k], 9);
            let mut tape = Tape::new();
            let (xv, yv, wv) = (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(w));
            let cx = tape.conv1d(xv, wv, None, stride, 1, 1).unwrap();
            let ty = tape.conv1d_transpose(yv, wv, None, stride).unwrap();
            assert_eq!(tape.shape(cx), y.shape());
            assert_eq!(tape.shape(ty), x.shape());
            let lhs = inner(tape.value(cx), &y);
            let rhs = inner(&x, tape.value(ty));
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn global_layer_norm_standardises() {
        // Scaled input keeps EPSILON's effect on the variance below 1e-9.
        let mut x = rand_tensor(&[4, 50], 10);
        x.data_mut().iter_mut().for_each(|v| *v = 10.0 * *v + 3.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::full(&[4], 1.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.global_layer_norm(xv, g, b).unwrap();
        let d = tape.value(y).data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9, "{var}");
    }

    #[test]
    fn broadcasting_rules() {
        let mut tape = Tape::new();
        let a = tape.leaf(rand_tensor(&[3, 4], 11));
        let row = tape.leaf(rand_tensor(&[4], 12));
        let col = tape.leaf(rand_tensor(&[3, 1], 13));
        let s = tape.leaf(rand_tensor(&[1], 14));
        assert!(tape.add(a, row).is_ok());
        assert!(tape.mul(a, col).is_ok());
        assert!(tape.sub(a, s).is_ok());
        let bad = tape.leaf(rand_tensor(&[3], 15));
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn simple_function_checks() {
        let x = rand_tensor(&[30], 16);
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &x,
            20,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "{err}");
        let err = grad_check(
            |t, x| {
                let s = t.sigmoid(x);
                Ok(t.sum(s))
            },
            &x,
            20,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
        // Bounded away from zero by more than 10 steps.
        let mut y = rand_tensor(&[30], 17);
        y.data_mut().iter_mut().for_each(|v| *v += v.signum() * 1e-3);
        let err = grad_check(
            |t, x| {
                let r = t.relu(x);
                Ok(t.sum(r))
            },
            &y,
            20,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn accumulation_order_independent() {
        // x feeds two branches; recording order of the branches differs.
        let x = rand_tensor(&[8], 18);
        let run = |swap: bool| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let (a, b) = if swap {
                let b = tape.tanh(xv);
                let a = tape.sigmoid(xv);
                (a, b)
            } else {
                let a = tape.sigmoid(xv);
                let b = tape.tanh(xv);
                (a, b)
            };
            let p = tape.mul(a, b).unwrap();
            let s = tape.sum(p);
            tape.backward(s).unwrap().get(xv)
        };
        let (g1, g2) = (run(false), run(true));
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let x = rand_tensor(&[2, 40], 19);
        let w = rand_tensor(&[3, 2, 4], 20);
        let run = || {
            let mut tape = Tape::new();
            let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
            let y = tape.conv1d(xv, wv, None, 2, 1, 1).unwrap();
            let z = tape.tanh(y);
            tape.value(z).clone()
        };
        assert_eq!(run(), run());
    }
}
