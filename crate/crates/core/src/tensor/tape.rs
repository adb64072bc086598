use super::kernels::{self, ConvGeom, LayerNormCache};
use super::{Scalar, Tensor};
use crate::error::{dim_err, MstError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    AddConst(Var),
    MulScalar { x: Var, s: Var },
    MatMul(Var, Var),
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose { x: Var, w: Var },
    ChannelBias { x: Var, b: Var },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, axis: usize, cache: LayerNormCache<T> },
    Gelu(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    ShiftWindow { x: Var, step: usize, period: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed after their inputs, so the push order is a topological
/// order; [`Tape::backward`] walks it in reverse, visiting each node once.
/// Leaf gradients accumulate across repeated `backward` calls until
/// [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    macs: u64,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), macs: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates performed by the matrix products and
    /// convolutions recorded so far (forward only).
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a trainable leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // -- elementwise ---------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|e| e * c);
        let rg = self.rg(&[x]);
        self.push(v, Op::Scale(x, c), rg)
    }

    pub fn add_const(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|e| e + c);
        let rg = self.rg(&[x]);
        self.push(v, Op::AddConst(x), rg)
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(dim_err!("mul_scalar expects a one-element factor, got {:?}", self.shape(s)));
        }
        let c = self.value(s).data()[0];
        let v = self.value(x).map(|e| e * c);
        let rg = self.rg(&[x, s]);
        Ok(self.push(v, Op::MulScalar { x, s }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(kernels::gelu);
        let rg = self.rg(&[x]);
        self.push(v, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(kernels::sigmoid);
        let rg = self.rg(&[x]);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.sqrt());
        let rg = self.rg(&[x]);
        self.push(v, Op::Sqrt(x), rg)
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.value(x).numel() as f64);
        let v = Tensor::scalar(self.value(x).sum() / n);
        let rg = self.rg(&[x]);
        self.push(v, Op::Mean(x), rg)
    }

    // -- linear algebra and layout -------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        self.macs += (v.numel() * self.shape(a)[1]) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = kernels::permute(self.value(x), perm)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = kernels::narrow(self.value(x), axis, start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Narrow { x, axis, start }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let v = kernels::concat(&refs, axis)?;
        let rg = self.rg(xs);
        Ok(self.push(v, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    pub fn shift_window(&mut self, x: Var, step: usize, period: usize, out_w: usize) -> Result<Var> {
        let v = kernels::shift_window(self.value(x), step, period, out_w)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::ShiftWindow { x, step, period }, rg))
    }

    // -- convolution ---------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize, groups: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad, groups)?;
        let v = kernels::conv2d(self.value(x), self.value(w), stride, pad, groups)?;
        self.macs += geom.macs();
        let rg = self.rg(&[x, w]);
        Ok(self.push(v, Op::Conv2d { x, w, geom }, rg))
    }

    pub fn conv2d_transpose(&mut self, x: Var, w: Var, stride: usize, k: usize) -> Result<Var> {
        let v = kernels::conv2d_transpose(self.value(x), self.value(w), stride, k)?;
        self.macs += (self.value(x).numel() * self.shape(w)[1] * k * k) as u64;
        let rg = self.rg(&[x, w]);
        Ok(self.push(v, Op::ConvTranspose { x, w }, rg))
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let v = kernels::add_channel_bias(self.value(x), self.value(b))?;
        let rg = self.rg(&[x, b]);
        Ok(self.push(v, Op::ChannelBias { x, b }, rg))
    }

    // -- normalisation -------------------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = kernels::softmax(self.value(x), axis)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Softmax { x, axis }, rg))
    }

    pub fn layer_norm(&mut self, x: Var, axis: usize, gamma: Var, beta: Var) -> Result<Var> {
        let (v, cache) = kernels::layer_norm(self.value(x), axis, self.value(gamma), self.value(beta))?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, axis, cache }, rg))
    }

    // -- differentiation -----------------------------------------------------

    /// Propagates d`loss` to every trainable leaf and adds it to that leaf's
    /// gradient buffer.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(MstError::Contract(format!("backward needs a scalar root, got shape {:?}", self.shape(loss))));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor<T>| -> Result<()> {
                if !self.nodes[v.0].requires_grad {
                    return Ok(());
                }
                match &mut adj[v.0] {
                    Some(acc) => acc.accumulate(&t),
                    slot => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => match &mut self.grads[i] {
                    Some(acc) => acc.accumulate(&g)?,
                    slot => *slot = Some(g),
                },
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g.map(|e| -e))?;
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(val(*b), |d, y| d * y)?)?;
                    send(*b, g.zip_map(val(*a), |d, x| d * x)?)?;
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    send(*x, g.map(|e| e * c))?;
                }
                Op::AddConst(x) => send(*x, g)?,
                Op::MulScalar { x, s } => {
                    let c = val(*s).data()[0];
                    let ds = g.dot(val(*x))?;
                    send(*s, Tensor::full(val(*s).shape(), ds))?;
                    send(*x, g.map(|e| e * c))?;
                }
                Op::Gelu(x) => send(*x, g.zip_map(val(*x), |d, e| d * kernels::gelu_grad(e))?)?,
                Op::Sigmoid(x) => {
                    send(*x, g.zip_map(&node.value, |d, y| d * y * (T::one() - y))?)?;
                }
                Op::Sqrt(x) => {
                    let half = T::lit(0.5);
                    send(*x, g.zip_map(&node.value, |d, y| d * half / y)?)?;
                }
                Op::Sum(x) => {
                    let d = g.data()[0];
                    send(*x, Tensor::full(val(*x).shape(), d))?;
                }
                Op::Mean(x) => {
                    let n = T::lit(val(*x).numel() as f64);
                    send(*x, Tensor::full(val(*x).shape(), g.data()[0] / n))?;
                }
                Op::MatMul(a, b) => {
                    let bt = kernels::transpose2(val(*b))?;
                    let at = kernels::transpose2(val(*a))?;
                    send(*a, kernels::matmul(&g, &bt)?)?;
                    send(*b, kernels::matmul(&at, &g)?)?;
                }
                Op::Permute { x, perm } => {
                    send(*x, kernels::permute(&g, &kernels::inverse_permutation(perm))?)?;
                }
                Op::Reshape(x) => send(*x, g.reshape(val(*x).shape())?)?,
                Op::Narrow { x, axis, start } => {
                    send(*x, kernels::narrow_backward(&g, val(*x).shape(), *axis, *start)?)?;
                }
                Op::Concat { xs, axis } => {
                    let mut start = 0;
                    for &x in xs {
                        let len = val(x).shape()[*axis];
                        send(x, kernels::narrow(&g, *axis, start, len)?)?;
                        start += len;
                    }
                }
                Op::ShiftWindow { x, step, period } => {
                    let in_w = val(*x).shape()[2];
                    send(*x, kernels::shift_window_backward(&g, *step, *period, in_w)?)?;
                }
                Op::Conv2d { x, w, geom } => {
                    if self.nodes[x.0].requires_grad {
                        send(*x, kernels::conv2d_grad_input(&g, val(*w), geom)?)?;
                    }
                    if self.nodes[w.0].requires_grad {
                        send(*w, kernels::conv2d_grad_weight(&g, val(*x), geom)?)?;
                    }
                }
                Op::ConvTranspose { x, w } => {
                    if self.nodes[x.0].requires_grad {
                        send(*x, kernels::conv2d_transpose_grad_input(&g, val(*x), val(*w))?)?;
                    }
                    if self.nodes[w.0].requires_grad {
                        send(*w, kernels::conv2d_transpose_grad_weight(&g, val(*x), val(*w))?)?;
                    }
                }
                Op::ChannelBias { x, b } => {
                    send(*b, kernels::channel_sums(&g))?;
                    send(*x, g)?;
                }
                Op::Softmax { x, axis } => {
                    send(*x, kernels::softmax_backward(&node.value, &g, *axis)?)?;
                }
                Op::LayerNorm { x, gamma, beta, axis, cache } => {
                    let (dx, dg, db) = kernels::layer_norm_backward(&g, cache, *axis, val(*gamma))?;
                    send(*x, dx)?;
                    send(*gamma, dg)?;
                    send(*beta, db)?;
                }
            }
        }
        Ok(())
    }
}
