use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities used by the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// ELU with alpha = 1.
    Elu,
    Tanh,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    AvgPool2(Var),
    Upsample2(Var),
    Activation(Activation, Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape(Var),
    ConcatChannels(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    L1Mean(Var, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
            }
            | Op::Linear {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::AvgPool2(a)
            | Op::Upsample2(a)
            | Op::Activation(_, a)
            | Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::Sum(a) => vec![a],
            Op::ConcatChannels(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::L1Mean(a, b) => {
                vec![a, b]
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool2(_) => "avg_pool2",
            Op::Upsample2(_) => "upsample_nearest2",
            Op::Activation(Activation::Elu, _) => "elu",
            Op::Activation(Activation::Tanh, _) => "tanh",
            Op::Linear { .. } => "fully_connected",
            Op::Reshape(_) => "reshape",
            Op::ConcatChannels(..) => "concat_channels",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::L1Mean(..) => "l1_mean",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    tag: u32,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// operation's inputs precede it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    tag: u32,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            tag: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tag attached to every node recorded from now on.
    pub fn set_tag(&mut self, tag: u32) {
        self.tag = tag;
    }

    pub fn tag_of(&self, v: Var) -> u32 {
        self.nodes[v.0].tag
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        value.ensure_finite("leaf tensor")?;
        Ok(self.push_unchecked(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            tag: self.tag,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Result<Var> {
        value.ensure_finite(op.name())?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    /// 2-D cross-correlation with stride 1 and "same" zero padding. The
    /// kernel must be square with odd size (3x3 in the network, 1x1 for
    /// channel projections).
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let geom = ConvGeom::new(x.shape(), w.shape(), b.shape())?;
        let mut out = vec![T::zero(); geom.n * geom.c2 * geom.hw()];
        let mut col = vec![T::zero(); geom.col_len()];
        for s in 0..geom.n {
            let xs = &x.data()[s * geom.c1 * geom.hw()..(s + 1) * geom.c1 * geom.hw()];
            let cols = geom.im2col(xs, &mut col);
            let os = &mut out[s * geom.c2 * geom.hw()..(s + 1) * geom.c2 * geom.hw()];
            for (c, chunk) in os.chunks_mut(geom.hw()).enumerate() {
                chunk.fill(b.data()[c]);
            }
            T::gemm(
                geom.c2,
                geom.ck(),
                geom.hw(),
                T::one(),
                w.data(),
                geom.ck() as isize,
                1,
                cols,
                geom.hw() as isize,
                1,
                T::one(),
                os,
                geom.hw() as isize,
                1,
            );
        }
        let value = Tensor::new(vec![geom.n, geom.c2, geom.h, geom.w], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
        )
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = rank4(x.shape(), "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "avg_pool2 needs even spatial size, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let src = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let p = &src[plane * h * w..(plane + 1) * h * w];
            for y in 0..ho {
                let r0 = &p[2 * y * w..2 * y * w + w];
                let r1 = &p[(2 * y + 1) * w..(2 * y + 1) * w + w];
                for xo in 0..wo {
                    // Pairwise sums keep pooling of replicated values exact.
                    out.push(
                        ((r0[2 * xo] + r0[2 * xo + 1]) + (r1[2 * xo] + r1[2 * xo + 1])) * quarter,
                    );
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        self.push(value, Op::AvgPool2(input))
    }

    /// Nearest-neighbour upsampling by a factor of two.
    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = rank4(x.shape(), "upsample_nearest2")?;
        let (ho, wo) = (2 * h, 2 * w);
        let src = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let p = &src[plane * h * w..(plane + 1) * h * w];
            for y in 0..ho {
                let row = &p[(y / 2) * w..(y / 2) * w + w];
                for xo in 0..wo {
                    out.push(row[xo / 2]);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        self.push(value, Op::Upsample2(input))
    }

    pub fn activation(&mut self, kind: Activation, input: Var) -> Result<Var> {
        let x = self.value(input);
        let value = match kind {
            Activation::Elu => x.map(|v| if v >= T::zero() { v } else { v.exp_m1() }),
            Activation::Tanh => x.map(|v| v.tanh()),
        };
        self.push(value, Op::Activation(kind, input))
    }

    pub fn elu(&mut self, input: Var) -> Result<Var> {
        self.activation(Activation::Elu, input)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.activation(Activation::Tanh, input)
    }

    /// Affine map `input[N,D1] * weight[D2,D1]^T + bias[D2]`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (n, d1) = match x.shape() {
            [n, d] => (*n, *d),
            s => {
                return Err(Error::Shape(format!(
                    "fully_connected input must be [N, D], got {s:?}"
                )))
            }
        };
        let d2 = match w.shape() {
            [d2, k] if *k == d1 => *d2,
            s => {
                return Err(Error::Shape(format!(
                    "fully_connected weight must be [D2, {d1}], got {s:?}"
                )))
            }
        };
        if b.shape() != [d2] {
            return Err(Error::Shape(format!(
                "fully_connected bias must be [{d2}], got {:?}",
                b.shape()
            )));
        }
        let mut out = Vec::with_capacity(n * d2);
        for _ in 0..n {
            out.extend_from_slice(b.data());
        }
        T::gemm(
            n,
            d1,
            d2,
            T::one(),
            x.data(),
            d1 as isize,
            1,
            w.data(),
            1,
            d1 as isize,
            T::one(),
            &mut out,
            d2 as isize,
            1,
        );
        let value = Tensor::new(vec![n, d2], out)?;
        self.push(value, Op::Linear {
            input,
            weight,
            bias,
        })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push(value, Op::Reshape(input))
    }

    /// Joins two `[N, C, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (n, c1, h, w) = rank4(x.shape(), "concat_channels")?;
        let (n2, c2, h2, w2) = rank4(y.shape(), "concat_channels")?;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::Shape(format!(
                "concat_channels operands differ outside the channel axis: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let (sa, sb) = (c1 * h * w, c2 * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for s in 0..n {
            out.extend_from_slice(&x.data()[s * sa..(s + 1) * sa]);
            out.extend_from_slice(&y.data()[s * sb..(s + 1) * sb]);
        }
        let value = Tensor::new(vec![n, c1 + c2, h, w], out)?;
        self.push(value, Op::ConcatChannels(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "add", |x, y| x + y)?;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "sub", |x, y| x - y)?;
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64(factor);
        let value = self.value(input).map(|v| v * f);
        self.push(value, Op::Scale(input, factor))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        // Reductions accumulate in f64 so single-precision losses stay exact to rounding.
        let total: f64 = self.value(input).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
        self.push(Tensor::scalar(T::from_f64(total)), Op::Sum(input))
    }

    /// Mean absolute difference over all elements.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "l1_mean operands differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.is_empty() {
            return Err(Error::Shape("l1_mean of empty tensors".into()));
        }
        let total: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| (p.to_f64().unwrap_or(f64::NAN) - q.to_f64().unwrap_or(f64::NAN)).abs())
            .sum();
        let mean = T::from_f64(total / x.len() as f64);
        self.push(Tensor::scalar(mean), Op::L1Mean(a, b))
    }

    fn zip(&self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "{what} operands differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    /// Back-propagates from a scalar `loss`. Every recorded operation that
    /// lies between a grad-requiring leaf and the loss is visited exactly
    /// once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = 0;
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            visited += 1;
            self.backprop_node(node, g, &mut grads)?;
        }
        Ok(Gradients { grads, visited })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
            } => self.conv2d_backward(input, weight, bias, &g, grads)?,
            Op::AvgPool2(a) => {
                if self.wants(a) {
                    let (n, c, h, w) = rank4(self.value(a).shape(), "avg_pool2")?;
                    let quarter = T::from_f64(0.25);
                    let (ho, wo) = (h / 2, w / 2);
                    let mut dx = vec![T::zero(); n * c * h * w];
                    for plane in 0..n * c {
                        let gp = &g.data()[plane * ho * wo..(plane + 1) * ho * wo];
                        let dp = &mut dx[plane * h * w..(plane + 1) * h * w];
                        for y in 0..h {
                            for x in 0..w {
                                dp[y * w + x] = gp[(y / 2) * wo + x / 2] * quarter;
                            }
                        }
                    }
                    accumulate(grads, a, Tensor::new(vec![n, c, h, w], dx)?);
                }
            }
            Op::Upsample2(a) => {
                if self.wants(a) {
                    let (n, c, h, w) = rank4(self.value(a).shape(), "upsample_nearest2")?;
                    let wo = 2 * w;
                    let mut dx = vec![T::zero(); n * c * h * w];
                    for plane in 0..n * c {
                        let gp = &g.data()[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                        let dp = &mut dx[plane * h * w..(plane + 1) * h * w];
                        for y in 0..2 * h {
                            for x in 0..wo {
                                dp[(y / 2) * w + x / 2] += gp[y * wo + x];
                            }
                        }
                    }
                    accumulate(grads, a, Tensor::new(vec![n, c, h, w], dx)?);
                }
            }
            Op::Activation(kind, a) => {
                if self.wants(a) {
                    let x = self.value(a);
                    let y = &node.value;
                    let data = match kind {
                        Activation::Elu => x
                            .data()
                            .iter()
                            .zip(y.data())
                            .zip(g.data())
                            .map(|((&xi, &yi), &gi)| {
                                if xi >= T::zero() {
                                    gi
                                } else {
                                    gi * (yi + T::one())
                                }
                            })
                            .collect(),
                        Activation::Tanh => y
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&yi, &gi)| gi * (T::one() - yi * yi))
                            .collect(),
                    };
                    accumulate(grads, a, Tensor::new(x.shape().to_vec(), data)?);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(input);
                let w = self.value(weight);
                let (n, d1) = (x.shape()[0], x.shape()[1]);
                let d2 = w.shape()[0];
                if self.wants(input) {
                    let mut dx = vec![T::zero(); n * d1];
                    T::gemm(
                        n,
                        d2,
                        d1,
                        T::one(),
                        g.data(),
                        d2 as isize,
                        1,
                        w.data(),
                        d1 as isize,
                        1,
                        T::zero(),
                        &mut dx,
                        d1 as isize,
                        1,
                    );
                    accumulate(grads, input, Tensor::new(vec![n, d1], dx)?);
                }
                if self.wants(weight) {
                    let mut dw = vec![T::zero(); d2 * d1];
                    T::gemm(
                        d2,
                        n,
                        d1,
                        T::one(),
                        g.data(),
                        1,
                        d2 as isize,
                        x.data(),
                        d1 as isize,
                        1,
                        T::zero(),
                        &mut dw,
                        d1 as isize,
                        1,
                    );
                    accumulate(grads, weight, Tensor::new(vec![d2, d1], dw)?);
                }
                if self.wants(bias) {
                    let mut db = vec![T::zero(); d2];
                    for row in g.data().chunks(d2) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, bias, Tensor::new(vec![d2], db)?);
                }
            }
            Op::Reshape(a) => {
                if self.wants(a) {
                    let shape = self.value(a).shape().to_vec();
                    accumulate(grads, a, g.reshape(&shape)?);
                }
            }
            Op::ConcatChannels(a, b) => {
                let (sa, sb) = (self.value(a).len(), self.value(b).len());
                let n = self.value(a).shape()[0];
                let (pa, pb) = (sa / n, sb / n);
                for (v, offset, per) in [(a, 0, pa), (b, pa, pb)] {
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(n * per);
                        for s in 0..n {
                            let start = s * (pa + pb) + offset;
                            d.extend_from_slice(&g.data()[start..start + per]);
                        }
                        accumulate(grads, v, Tensor::new(self.value(v).shape().to_vec(), d)?);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.wants(b) {
                    accumulate(grads, b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.wants(b) {
                    accumulate(grads, b, g.map(|v| -v));
                }
            }
            Op::Scale(a, factor) => {
                if self.wants(a) {
                    let f = T::from_f64(factor);
                    accumulate(grads, a, g.map(|v| v * f));
                }
            }
            Op::Sum(a) => {
                if self.wants(a) {
                    accumulate(grads, a, Tensor::full(self.value(a).shape(), g.item()));
                }
            }
            Op::L1Mean(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let scale = g.item() / T::from_f64(x.len() as f64);
                // Subgradient of |v| at v = 0 is taken as 0.
                let sign: Vec<T> = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&p, &q)| {
                        let d = p - q;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let shape = x.shape().to_vec();
                if self.wants(b) {
                    let neg = sign.iter().map(|&v| -v).collect();
                    accumulate(grads, b, Tensor::new(shape.clone(), neg)?);
                }
                if self.wants(a) {
                    accumulate(grads, a, Tensor::new(shape, sign)?);
                }
            }
        }
        Ok(())
    }

    fn conv2d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let x = self.value(input);
        let w = self.value(weight);
        let geom = ConvGeom::new(x.shape(), w.shape(), self.value(bias).shape())?;
        let hw = geom.hw();
        let ck = geom.ck();
        let (want_x, want_w, want_b) = (self.wants(input), self.wants(weight), self.wants(bias));

        if want_b {
            let mut db = vec![T::zero(); geom.c2];
            for s in 0..geom.n {
                for (c, acc) in db.iter_mut().enumerate() {
                    let start = (s * geom.c2 + c) * hw;
                    *acc += g.data()[start..start + hw].iter().copied().sum::<T>();
                }
            }
            accumulate(grads, bias, Tensor::new(vec![geom.c2], db)?);
        }
        if !want_x && !want_w {
            return Ok(());
        }
        let mut col = vec![T::zero(); geom.col_len()];
        let mut dw = if want_w { vec![T::zero(); geom.c2 * ck] } else { vec![] };
        let mut dx = if want_x { vec![T::zero(); geom.n * geom.c1 * hw] } else { vec![] };
        let mut dcol = if want_x { vec![T::zero(); ck * hw] } else { vec![] };
        for s in 0..geom.n {
            let gs = &g.data()[s * geom.c2 * hw..(s + 1) * geom.c2 * hw];
            if want_w {
                let xs = &x.data()[s * geom.c1 * hw..(s + 1) * geom.c1 * hw];
                let cols = geom.im2col(xs, &mut col);
                T::gemm(
                    geom.c2,
                    hw,
                    ck,
                    T::one(),
                    gs,
                    hw as isize,
                    1,
                    cols,
                    1,
                    hw as isize,
                    T::one(),
                    &mut dw,
                    ck as isize,
                    1,
                );
            }
            if want_x {
                let dxs = &mut dx[s * geom.c1 * hw..(s + 1) * geom.c1 * hw];
                if geom.k == 1 {
                    T::gemm(
                        ck,
                        geom.c2,
                        hw,
                        T::one(),
                        w.data(),
                        1,
                        ck as isize,
                        gs,
                        hw as isize,
                        1,
                        T::zero(),
                        dxs,
                        hw as isize,
                        1,
                    );
                } else {
                    T::gemm(
                        ck,
                        geom.c2,
                        hw,
                        T::one(),
                        w.data(),
                        1,
                        ck as isize,
                        gs,
                        hw as isize,
                        1,
                        T::zero(),
                        &mut dcol,
                        hw as isize,
                        1,
                    );
                    geom.col2im(&dcol, dxs);
                }
            }
        }
        if want_w {
            accumulate(grads, weight, Tensor::new(w.shape().to_vec(), dw)?);
        }
        if want_x {
            accumulate(grads, input, Tensor::new(x.shape().to_vec(), dx)?);
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn rank4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Shape(format!(
            "{what} expects a rank-4 [N, C, H, W] tensor, got {shape:?}"
        ))),
    }
}

struct ConvGeom {
    n: usize,
    c1: usize,
    c2: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], b: &[usize]) -> Result<Self> {
        let (n, c1, h, wd) = rank4(x, "conv2d input")?;
        let (c2, wc1, k, k2) = rank4(w, "conv2d weight")?;
        if wc1 != c1 {
            return Err(Error::Shape(format!(
                "conv2d weight expects {wc1} input channels but input has {c1}"
            )));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d kernel must be square with odd size, got {k}x{k2}"
            )));
        }
        if b != [c2] {
            return Err(Error::Shape(format!(
                "conv2d bias must have {c2} entries, got shape {b:?}"
            )));
        }
        Ok(ConvGeom {
            n,
            c1,
            c2,
            h,
            w: wd,
            k,
        })
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn ck(&self) -> usize {
        self.c1 * self.k * self.k
    }

    fn col_len(&self) -> usize {
        if self.k == 1 {
            0
        } else {
            self.ck() * self.hw()
        }
    }

    /// Unfolds one sample into a `[C1*k*k, H*W]` patch matrix. A 1x1 kernel
    /// needs no unfolding and borrows the input directly.
    fn im2col<'a, T: Scalar>(&self, xs: &'a [T], col: &'a mut [T]) -> &'a [T] {
        if self.k == 1 {
            return xs;
        }
        let (h, w, k) = (self.h as isize, self.w as isize, self.k);
        let pad = (k / 2) as isize;
        let hw = self.hw();
        for c in 0..self.c1 {
            let plane = &xs[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y + dy;
                        let dst = &mut row[(y * w) as usize..((y + 1) * w) as usize];
                        if sy < 0 || sy >= h {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                        let lo = (-dx).max(0);
                        let hi = (w - dx).min(w);
                        dst[..lo.min(w) as usize].fill(T::zero());
                        if hi > lo {
                            dst[lo as usize..hi as usize]
                                .copy_from_slice(&src[(lo + dx) as usize..(hi + dx) as usize]);
                        }
                        dst[hi.max(0) as usize..].fill(T::zero());
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`ConvGeom::im2col`]: folds patch gradients back onto the input.
    fn col2im<T: Scalar>(&self, col: &[T], dxs: &mut [T]) {
        let (h, w, k) = (self.h as isize, self.w as isize, self.k);
        let pad = (k / 2) as isize;
        let hw = self.hw();
        for c in 0..self.c1 {
            let plane = &mut dxs[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y + dy;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        let src = &row[(y * w) as usize..((y + 1) * w) as usize];
                        let dst = &mut plane[(sy * w) as usize..((sy + 1) * w) as usize];
                        let lo = (-dx).max(0);
                        let hi = (w - dx).min(w);
                        for x in lo..hi {
                            dst[(x + dx) as usize] += src[x as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` does not influence the loss or
    /// was recorded without `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, materialising zeros for unreachable nodes.
    pub fn get_or_zeros(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Number of operations whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}
