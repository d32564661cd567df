//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every op appends one node holding its output value and the ids of its
//! inputs. `backward` walks the nodes in exact reverse order and accumulates
//! gradients additively into every node that requires them; only leaf
//! gradients are kept afterwards.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv;
use crate::error::{Error, Result};
use crate::fft;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulChannel(Var, Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    TransposeLast2(Var),
    Reshape(Var),
    ConvPw {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    ConvDw {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv3x3 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        w: Var,
        b: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Softmax(Var),
    L2Normalize {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    PixelUnshuffle(Var, usize),
    PixelShuffle(Var, usize),
    Concat(Var, Var),
    Slice {
        x: Var,
        start: usize,
    },
    FftMagnitude {
        x: Var,
        re: Vec<T>,
        im: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed ops.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backpropagated: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn gelu_cdf<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::ONE + (x * T::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backpropagated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clears gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backpropagated = false;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<[usize; 4]> {
        match self.shape(v) {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(shape_err(op, other, &[0, 0, 0, 0])),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg, name)
    }

    fn unary(&mut self, a: Var, op: Op<T>, name: &'static str, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary(a, Op::Scale(a, s), "scale", |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), "add_scalar", |x| x + s)
    }

    /// Multiplies `x` (N×C×…) by a per-channel vector `v` of length C.
    pub fn mul_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(v) != [shape[1]] {
            return Err(shape_err("mul_channel", &shape, self.shape(v)));
        }
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let vd = self.data(v);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &xv)| xv * vd[(i / inner) % c])
            .collect();
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(&[x, v]);
        self.push(value, Op::MulChannel(x, v), rg, "mul_channel")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), "abs", |x| x.abs())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.data(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.data(a).len();
        let s: T = self.data(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s / T::from_usize(n)), Op::Mean(a), rg, "mean")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Reshape(a), rg, "reshape")
    }

    fn matmul_dims(&self, a: Var, b: Var) -> Result<(usize, usize, usize, usize, Vec<usize>)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() < 2 || sb.len() != sa.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = sa[..sa.len() - 2].to_vec();
        out.push(m);
        out.push(n);
        Ok((batch, m, k, n, out))
    }

    /// Batched matrix product over matching leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n, shape) = self.matmul_dims(a, b)?;
        let mut out = vec![T::ZERO; batch * m * n];
        matmul_acc(self.data(a), self.data(b), &mut out, batch, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(shape_err("transpose", &s, &[0, 0]));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let mut out_shape = s.clone();
        out_shape.swap(s.len() - 2, s.len() - 1);
        let out = transpose_blocks(self.data(a), r, c);
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&out_shape, out)?, Op::TransposeLast2(a), rg, "transpose")
    }

    /// 1×1 convolution with weights Cout×C and optional bias Cout.
    pub fn conv_pw(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, c, h, wd] = self.dims4(x, "conv_pw")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[1] != c || ws[0] == 0 {
            return Err(shape_err("conv_pw", self.shape(x), &ws));
        }
        let cout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv_pw", &ws, self.shape(b)));
            }
        }
        let out = conv::pointwise(self.data(x), n, c, h * wd, self.data(w), cout, b.map(|b| self.data(b)));
        let mut vars = vec![x, w];
        vars.extend(b);
        let rg = self.rg(&vars);
        self.push(Tensor::new(&[n, cout, h, wd], out)?, Op::ConvPw { x, w, b }, rg, "conv_pw")
    }

    /// Depth-wise 3×3 convolution with kernels C×3×3, padding 1, stride 1.
    pub fn conv_dw(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, c, h, wd] = self.dims4(x, "conv_dw")?;
        if self.shape(w) != [c, 3, 3] {
            return Err(shape_err("conv_dw", self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [c] {
                return Err(shape_err("conv_dw", self.shape(w), self.shape(b)));
            }
        }
        let out = conv::depthwise(self.data(x), n, c, h, wd, self.data(w), b.map(|b| self.data(b)));
        let mut vars = vec![x, w];
        vars.extend(b);
        let rg = self.rg(&vars);
        self.push(Tensor::new(&[n, c, h, wd], out)?, Op::ConvDw { x, w, b }, rg, "conv_dw")
    }

    /// Dense 3×3 convolution with kernels Cout×C×3×3, padding 1, stride 1.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, c, h, wd] = self.dims4(x, "conv3x3")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != c || ws[2] != 3 || ws[3] != 3 || ws[0] == 0 {
            return Err(shape_err("conv3x3", self.shape(x), &ws));
        }
        let cout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv3x3", &ws, self.shape(b)));
            }
        }
        let out = conv::dense3x3(self.data(x), n, c, h, wd, self.data(w), cout, b.map(|b| self.data(b)));
        let mut vars = vec![x, w];
        vars.extend(b);
        let rg = self.rg(&vars);
        self.push(Tensor::new(&[n, cout, h, wd], out)?, Op::Conv3x3 { x, w, b }, rg, "conv3x3")
    }

    /// Normalizes across channels at every spatial location, then applies a
    /// per-channel affine transform.
    pub fn layer_norm(&mut self, x: Var, w: Var, b: Var, eps: T) -> Result<Var> {
        let [n, c, h, wd] = self.dims4(x, "layer_norm")?;
        if self.shape(w) != [c] || self.shape(b) != [c] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(w)));
        }
        if !(eps > T::ZERO) {
            return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let hw = h * wd;
        let xd = self.data(x);
        let (wv, bv) = (self.data(w), self.data(b));
        let inv_c = T::ONE / T::from_usize(c);
        let mut mean = vec![T::ZERO; n * hw];
        let mut rstd = vec![T::ZERO; n * hw];
        let mut out = vec![T::ZERO; xd.len()];
        for bi in 0..n {
            let base = bi * c * hw;
            for p in 0..hw {
                let mut mu = T::ZERO;
                for ch in 0..c {
                    mu += xd[base + ch * hw + p];
                }
                mu *= inv_c;
                let mut var = T::ZERO;
                for ch in 0..c {
                    let d = xd[base + ch * hw + p] - mu;
                    var += d * d;
                }
                var *= inv_c;
                let r = T::ONE / (var + eps).sqrt();
                mean[bi * hw + p] = mu;
                rstd[bi * hw + p] = r;
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    out[i] = (xd[i] - mu) * r * wv[ch] + bv[ch];
                }
            }
        }
        let rg = self.rg(&[x, w, b]);
        self.push(
            Tensor::new(&[n, c, h, wd], out)?,
            Op::LayerNorm { x, w, b, mean, rstd },
            rg,
            "layer_norm",
        )
    }

    /// Exact (erf-based) Gaussian error linear unit.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Gelu(a), "gelu", |x| x * gelu_cdf(x))
    }

    /// Softmax along the last axis, shifted by the slice maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let len = *s.last().ok_or_else(|| shape_err("softmax", &s, &[0]))?;
        let mut out = self.data(a).to_vec();
        for row in out.chunks_exact_mut(len) {
            let m = row.iter().copied().fold(row[0], T::max);
            let mut z = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&s, out)?, Op::Softmax(a), rg, "softmax")
    }

    /// Scales every last-axis slice to unit L2 norm (norm floored at `eps`).
    pub fn l2_normalize(&mut self, a: Var, eps: T) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let len = *s.last().ok_or_else(|| shape_err("l2_normalize", &s, &[0]))?;
        let mut out = self.data(a).to_vec();
        let mut norms = Vec::with_capacity(out.len() / len.max(1));
        for row in out.chunks_exact_mut(len) {
            let nrm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(nrm);
            let d = nrm.max(eps);
            for v in row.iter_mut() {
                *v /= d;
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&s, out)?, Op::L2Normalize { x: a, norms, eps }, rg, "l2_normalize")
    }

    /// N×C×H×W → N×(C·r²)×(H/r)×(W/r). Output channel `c·r² + i·r + j` holds
    /// the pixels at row offset `i`, column offset `j` of source channel `c`.
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "pixel_unshuffle")?;
        for extent in [h, w] {
            if r == 0 || extent % r != 0 {
                return Err(Error::Indivisible {
                    op: "pixel_unshuffle",
                    extent,
                    factor: r,
                });
            }
        }
        let out = unshuffle(self.data(x), n, c, h, w, r);
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(&[n, c * r * r, h / r, w / r], out)?,
            Op::PixelUnshuffle(x, r),
            rg,
            "pixel_unshuffle",
        )
    }

    /// Inverse of [`Tape::pixel_unshuffle`].
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "pixel_shuffle")?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::Indivisible {
                op: "pixel_shuffle",
                extent: c,
                factor: r * r,
            });
        }
        let out = shuffle(self.data(x), n, c / (r * r), h * r, w * r, r);
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(&[n, c / (r * r), h * r, w * r], out)?,
            Op::PixelShuffle(x, r),
            rg,
            "pixel_shuffle",
        )
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.dims4(a, "concat")?;
        let [nb, cb, hb, wb] = self.dims4(b, "concat")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err("concat", self.shape(a), self.shape(b)));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for bi in 0..n {
            out.extend_from_slice(&self.data(a)[bi * ca * hw..(bi + 1) * ca * hw]);
            out.extend_from_slice(&self.data(b)[bi * cb * hw..(bi + 1) * cb * hw]);
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&[n, ca + cb, h, w], out)?, Op::Concat(a, b), rg, "concat")
    }

    /// Channels `start..start+len` of an N×C×H×W tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "slice_channels")?;
        if len == 0 || start + len > c {
            return Err(shape_err("slice_channels", self.shape(x), &[start, len]));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        for bi in 0..n {
            let off = (bi * c + start) * hw;
            out.extend_from_slice(&self.data(x)[off..off + len * hw]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&[n, len, h, w], out)?, Op::Slice { x, start }, rg, "slice_channels")
    }

    /// Magnitude of the unnormalized 2-D DFT over the last two axes.
    pub fn fft2_magnitude(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(shape_err("fft2_magnitude", &s, &[0, 0]));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let (re, im) = fft::fft2_real(self.data(x), h, w);
        let mag = re.iter().zip(&im).map(|(&r, &i)| (r * r + i * i).sqrt()).collect();
        let rg = self.rg(&[x]);
        let (re, im) = if rg { (re, im) } else { (Vec::new(), Vec::new()) };
        self.push(Tensor::new(&s, mag)?, Op::FftMagnitude { x, re, im }, rg, "fft2_magnitude")
    }

    /// Populates gradients of `loss` with respect to every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backpropagated {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.backpropagated = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g)?;
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [T], &Self)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut buf = self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![T::ZERO; self.nodes[v.0].value.numel()]);
        f(&mut buf, self);
        self.grads[v.0] = Some(buf);
    }

    fn acc_vec(&mut self, v: Var, src: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => {
                for (b, s) in buf.iter_mut().zip(src) {
                    *b += s;
                }
            }
            slot => *slot = Some(src),
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) -> Result<()> {
        // Ops only read from `nodes` and write into `grads`, so taking the op
        // out temporarily keeps the borrow checker happy without cloning.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(*a, |d, _| add_into(d, g));
                self.acc(*b, |d, _| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |d, _| add_into(d, g));
                self.acc(*b, |d, _| {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |d, t| {
                    for ((d, &gv), &bv) in d.iter_mut().zip(g).zip(t.data(b)) {
                        *d += gv * bv;
                    }
                });
                self.acc(b, |d, t| {
                    for ((d, &gv), &av) in d.iter_mut().zip(g).zip(t.data(a)) {
                        *d += gv * av;
                    }
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(*a, |d, _| {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d += gv * s;
                    }
                });
            }
            Op::AddScalar(a) => self.acc(*a, |d, _| add_into(d, g)),
            Op::MulChannel(x, v) => {
                let (x, v) = (*x, *v);
                let shape = self.shape(x).to_vec();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                self.acc(x, |d, t| {
                    let vd = t.data(v);
                    for (idx, (d, &gv)) in d.iter_mut().zip(g).enumerate() {
                        *d += gv * vd[(idx / inner) % c];
                    }
                });
                self.acc(v, |d, t| {
                    for (idx, (&gv, &xv)) in g.iter().zip(t.data(x)).enumerate() {
                        d[(idx / inner) % c] += gv * xv;
                    }
                });
            }
            Op::Abs(a) => {
                self.acc(*a, |d, t| {
                    for ((d, &gv), &av) in d.iter_mut().zip(g).zip(t.data(*a)) {
                        *d += gv * av.signum0();
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g[0];
                self.acc(*a, |d, _| d.iter_mut().for_each(|d| *d += gv));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let gv = g[0] / T::from_usize(n);
                self.acc(*a, |d, _| d.iter_mut().for_each(|d| *d += gv));
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (batch, m, k, n, _) = self.matmul_dims(a, b)?;
                if self.requires_grad(a) {
                    // dA = G·Bᵀ
                    let bt = transpose_blocks(self.data(b), k, n);
                    let mut da = vec![T::ZERO; batch * m * k];
                    matmul_acc(g, &bt, &mut da, batch, m, n, k);
                    self.acc_vec(a, da);
                }
                if self.requires_grad(b) {
                    // dB = Aᵀ·G
                    let at = transpose_blocks(self.data(a), m, k);
                    let mut db = vec![T::ZERO; batch * k * n];
                    matmul_acc(&at, g, &mut db, batch, k, m, n);
                    self.acc_vec(b, db);
                }
            }
            Op::TransposeLast2(a) => {
                let s = self.shape(*a).to_vec();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                // g has shape (..., c, r)
                let back = transpose_blocks(g, c, r);
                self.acc_vec(*a, back);
            }
            Op::Reshape(a) => self.acc(*a, |d, _| add_into(d, g)),
            Op::ConvPw { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let [n, c, h, wd] = self.dims4(x, "conv_pw")?;
                let cout = self.shape(w)[0];
                let want = (
                    self.requires_grad(x),
                    self.requires_grad(w),
                    b.is_some_and(|b| self.requires_grad(b)),
                );
                let gr = conv::pointwise_backward(g, self.data(x), n, c, h * wd, self.data(w), cout, want);
                self.apply_conv_grads(x, w, b, gr);
            }
            Op::ConvDw { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let [n, c, h, wd] = self.dims4(x, "conv_dw")?;
                let want = (
                    self.requires_grad(x),
                    self.requires_grad(w),
                    b.is_some_and(|b| self.requires_grad(b)),
                );
                let gr = conv::depthwise_backward(g, self.data(x), n, c, h, wd, self.data(w), want);
                self.apply_conv_grads(x, w, b, gr);
            }
            Op::Conv3x3 { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let [n, c, h, wd] = self.dims4(x, "conv3x3")?;
                let cout = self.shape(w)[0];
                let want = (
                    self.requires_grad(x),
                    self.requires_grad(w),
                    b.is_some_and(|b| self.requires_grad(b)),
                );
                let gr = conv::dense3x3_backward(g, self.data(x), n, c, h, wd, self.data(w), cout, want);
                self.apply_conv_grads(x, w, b, gr);
            }
            Op::LayerNorm { x, w, b, mean, rstd } => {
                let (x, w, b) = (*x, *w, *b);
                let [n, c, h, wd] = self.dims4(x, "layer_norm")?;
                let hw = h * wd;
                let xd = self.data(x);
                let wv = self.data(w);
                let inv_c = T::ONE / T::from_usize(c);
                let mut dx = vec![T::ZERO; xd.len()];
                let mut dw = vec![T::ZERO; c];
                let mut db = vec![T::ZERO; c];
                let mut dxhat = vec![T::ZERO; c];
                for bi in 0..n {
                    let base = bi * c * hw;
                    for p in 0..hw {
                        let mu = mean[bi * hw + p];
                        let r = rstd[bi * hw + p];
                        let mut s1 = T::ZERO;
                        let mut s2 = T::ZERO;
                        for ch in 0..c {
                            let idx = base + ch * hw + p;
                            let xh = (xd[idx] - mu) * r;
                            dw[ch] += g[idx] * xh;
                            db[ch] += g[idx];
                            let dh = g[idx] * wv[ch];
                            dxhat[ch] = dh;
                            s1 += dh;
                            s2 += dh * xh;
                        }
                        s1 *= inv_c;
                        s2 *= inv_c;
                        for ch in 0..c {
                            let idx = base + ch * hw + p;
                            let xh = (xd[idx] - mu) * r;
                            dx[idx] = r * (dxhat[ch] - s1 - xh * s2);
                        }
                    }
                }
                self.acc_vec(x, dx);
                self.acc_vec(w, dw);
                self.acc_vec(b, db);
            }
            Op::Gelu(a) => {
                let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
                let half = T::from_f64(0.5);
                self.acc(*a, |d, t| {
                    for ((d, &gv), &x) in d.iter_mut().zip(g).zip(t.data(*a)) {
                        let pdf = (-(x * x) * half).exp() * inv_sqrt_2pi;
                        *d += gv * (gelu_cdf(x) + x * pdf);
                    }
                });
            }
            Op::Softmax(a) => {
                let len = *self.shape(*a).last().unwrap_or(&1);
                let y = self.nodes[i].value.data().to_vec();
                self.acc(*a, |d, _| {
                    for ((drow, grow), yrow) in d.chunks_exact_mut(len).zip(g.chunks_exact(len)).zip(y.chunks_exact(len)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::L2Normalize { x, norms, eps } => {
                let len = *self.shape(*x).last().unwrap_or(&1);
                let eps = *eps;
                let y = self.nodes[i].value.data().to_vec();
                self.acc(*x, |d, _| {
                    for (((drow, grow), yrow), &nrm) in d
                        .chunks_exact_mut(len)
                        .zip(g.chunks_exact(len))
                        .zip(y.chunks_exact(len))
                        .zip(norms)
                    {
                        if nrm > eps {
                            let dot: T = grow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                            for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += (gv - yv * dot) / nrm;
                            }
                        } else {
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += gv / eps;
                            }
                        }
                    }
                });
            }
            Op::PixelUnshuffle(x, r) => {
                let [n, c, h, w] = self.dims4(*x, "pixel_unshuffle")?;
                let back = shuffle(g, n, c, h, w, *r);
                self.acc_vec(*x, back);
            }
            Op::PixelShuffle(x, r) => {
                let [n, _, _, _] = self.dims4(*x, "pixel_shuffle")?;
                let [_, co, ho, wo] = self.nodes[i].value.dims4()?;
                let back = unshuffle(g, n, co, ho, wo, *r);
                self.acc_vec(*x, back);
            }
            Op::Concat(a, b) => {
                let (a, b) = (*a, *b);
                let [n, ca, h, w] = self.dims4(a, "concat")?;
                let cb = self.shape(b)[1];
                let hw = h * w;
                let ct = ca + cb;
                self.acc(a, |d, _| {
                    for bi in 0..n {
                        add_into(&mut d[bi * ca * hw..(bi + 1) * ca * hw], &g[bi * ct * hw..(bi * ct + ca) * hw]);
                    }
                });
                self.acc(b, |d, _| {
                    for bi in 0..n {
                        add_into(
                            &mut d[bi * cb * hw..(bi + 1) * cb * hw],
                            &g[(bi * ct + ca) * hw..(bi + 1) * ct * hw],
                        );
                    }
                });
            }
            Op::Slice { x, start } => {
                let [n, c, h, w] = self.dims4(*x, "slice_channels")?;
                let len = self.nodes[i].value.shape()[1];
                let hw = h * w;
                let start = *start;
                self.acc(*x, |d, _| {
                    for bi in 0..n {
                        let off = (bi * c + start) * hw;
                        add_into(&mut d[off..off + len * hw], &g[bi * len * hw..(bi + 1) * len * hw]);
                    }
                });
            }
            Op::FftMagnitude { x, re, im } => {
                let s = self.shape(*x).to_vec();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let mag = self.nodes[i].value.data();
                // d|F_k|/dx = Re(Σ_k G_k e^{+iθ}) with G_k = g_k·F_k/|F_k|, which is
                // the real part of the forward transform of conj(G).
                let mut gre = Vec::with_capacity(mag.len());
                let mut gim = Vec::with_capacity(mag.len());
                for k in 0..mag.len() {
                    if mag[k] > T::ZERO {
                        let sc = g[k] / mag[k];
                        gre.push(re[k] * sc);
                        gim.push(-(im[k] * sc));
                    } else {
                        gre.push(T::ZERO);
                        gim.push(T::ZERO);
                    }
                }
                fft::fft2_planes(&mut gre, &mut gim, h, w);
                self.acc_vec(*x, gre);
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }

    fn apply_conv_grads(&mut self, x: Var, w: Var, b: Option<Var>, gr: conv::PointwiseGrads<T>) {
        if let Some(dx) = gr.dx {
            self.acc_vec(x, dx);
        }
        if let Some(dw) = gr.dw {
            self.acc_vec(w, dw);
        }
        if let (Some(b), Some(db)) = (b, gr.db) {
            self.acc_vec(b, db);
        }
    }
}

fn add_into<T: Real>(d: &mut [T], g: &[T]) {
    for (d, &gv) in d.iter_mut().zip(g) {
        *d += gv;
    }
}

/// `out[b] += a[b]·bm[b]` for `batch` independent m×k by k×n products.
fn matmul_acc<T: Real>(a: &[T], bm: &[T], out: &mut [T], batch: usize, m: usize, k: usize, n: usize) {
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &bm[bi * k * n..(bi + 1) * k * n];
        let ob = &mut out[bi * m * n..(bi + 1) * m * n];
        for r in 0..m {
            let orow = &mut ob[r * n..(r + 1) * n];
            for kk in 0..k {
                let av = ab[r * k + kk];
                let brow = &bb[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// Transposes each trailing r×c block.
fn transpose_blocks<T: Real>(src: &[T], r: usize, c: usize) -> Vec<T> {
    let block = r * c;
    let mut out = vec![T::ZERO; src.len()];
    if block == 0 {
        return out;
    }
    for (sb, ob) in src.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
        for i in 0..r {
            for j in 0..c {
                ob[j * r + i] = sb[i * c + j];
            }
        }
    }
    out
}

/// N×C×H×W → N×(C·r²)×(H/r)×(W/r).
fn unshuffle<T: Real>(x: &[T], n: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let (ho, wo) = (h / r, w / r);
    let mut out = vec![T::ZERO; x.len()];
    let mut idx = 0;
    for bi in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    for y in 0..ho {
                        let row = ((bi * c + ch) * h + y * r + i) * w;
                        for xo in 0..wo {
                            out[idx] = x[row + xo * r + j];
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`unshuffle`]: `c`, `h`, `w` describe the *output* (shuffled) tensor.
fn shuffle<T: Real>(x: &[T], n: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let (hi, wi) = (h / r, w / r);
    let mut out = vec![T::ZERO; x.len()];
    let mut idx = 0;
    for bi in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    for y in 0..hi {
                        let row = ((bi * c + ch) * h + y * r + i) * w;
                        for xo in 0..wi {
                            out[row + xo * r + j] = x[idx];
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    out
}
