//! Reverse-mode tape. Nodes are appended in evaluation order, so the node
//! vector is already a topological order and the backward sweep visits each
//! node once, from the loss down to the leaves.

use super::gemm::{gemm, Transpose};
use super::ops::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this module (the training
/// losses use this). `backward` returns one gradient per input, `None` for
/// inputs it does not differentiate.
pub trait Function<F: Scalar>: Send {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        output: &Tensor<F>,
        grad_output: &Tensor<F>,
    ) -> Vec<Option<Vec<F>>>;
}

enum Op<F: Scalar> {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Option<Vec<F>>,
    },
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    ScaledExp { input: Var, max_arg: F },
    Scale(Var, F),
    Sum(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    SoftmaxCols { input: Var, scale: F },
    Custom { inputs: Vec<Var>, func: Box<dyn Function<F>> },
}

impl<F: Scalar> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d",
            Op::Matmul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::ScaledExp { .. } => "scaled_exp",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Reshape(_) => "reshape",
            Op::Concat(_) => "concat",
            Op::SoftmaxCols { .. } => "softmax_columns",
            Op::Custom { func, .. } => func.name(),
        }
    }
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Expression tape over tensors of precision `F`.
pub struct Graph<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
    track: bool,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    /// A tape that records what is needed for [`Graph::backward`].
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            track: true,
        }
    }

    /// A forward-only tape: no gradient bookkeeping is kept.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            track: false,
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.track
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite output from {} with shape {:?}",
            op.name(),
            value.shape()
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.track,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input that receives a gradient.
    pub fn variable(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let keep_cols = self.track && self.requires_grad(kernel) && !geom.is_pointwise();
        let bias_data = bias.map(|b| self.value(b).data());
        let (out, cols) = if geom.is_pointwise() {
            let x = self.value(input).data();
            (ops::conv_from_cols(&geom, x, self.value(kernel).data(), bias_data), None)
        } else {
            let cols = ops::im2col(&geom, self.value(input).data());
            let out = ops::conv_from_cols(&geom, &cols, self.value(kernel).data(), bias_data);
            (out, keep_cols.then_some(cols))
        };
        let value = Tensor::new(&[geom.c_out, geom.h_out, geom.w_out], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = ops::transpose(self.value(a))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::add(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::invalid(format!(
                "mul: shapes differ ({:?} vs {:?})",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| *p * *q).collect();
        let value = Tensor::new(x.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = ops::relu(self.value(a));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(ops::sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// `scale * exp(min(x, max_arg))`.
    pub fn scaled_exp(&mut self, a: Var, scale: F, max_arg: F) -> Var {
        let value = self.value(a).map(|v| scale * v.min(max_arg).exp());
        let rg = self.any_grad(&[a]);
        self.push(
            value,
            Op::ScaledExp { input: a, max_arg },
            rg,
        )
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|v| v * c);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = ops::concat_leading(&tensors)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::concat_channels(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat(vec![a, b]), rg))
    }

    pub fn softmax_columns(&mut self, a: Var, scale: F) -> Result<Var> {
        let value = ops::softmax_columns(self.value(a), scale)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SoftmaxCols { input: a, scale }, rg))
    }

    /// Applies an externally defined operation whose forward value has
    /// already been computed.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<F>,
        func: Box<dyn Function<F>>,
    ) -> Var {
        let rg = self.any_grad(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                func,
            },
            rg,
        )
    }

    /// Gradients of the single-element node `loss` with respect to every
    /// node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if !self.track {
            return Err(Error::invalid("backward on an inference graph"));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must hold one element, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape(), d).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let p = geom.out_pixels();
                let r = geom.patch_len();
                if wants(*kernel) {
                    let recomputed;
                    let cols: &[F] = match cols {
                        Some(c) => c,
                        None if geom.is_pointwise() => self.value(*input).data(),
                        None => {
                            recomputed = ops::im2col(geom, self.value(*input).data());
                            &recomputed
                        }
                    };
                    let mut dk = vec![F::zero(); geom.c_out * r];
                    gemm(Transpose::No, Transpose::Yes, geom.c_out, r, p, F::one(), g, cols, F::zero(), &mut dk);
                    accumulate(grads, *kernel, dk);
                }
                if let Some(b) = bias {
                    if wants(*b) {
                        let db = g.chunks(p).map(|c| c.iter().copied().sum()).collect();
                        accumulate(grads, *b, db);
                    }
                }
                if wants(*input) {
                    let mut dcols = vec![F::zero(); r * p];
                    gemm(
                        Transpose::Yes,
                        Transpose::No,
                        r,
                        p,
                        geom.c_out,
                        F::one(),
                        self.value(*kernel).data(),
                        g,
                        F::zero(),
                        &mut dcols,
                    );
                    let dx = if geom.is_pointwise() {
                        dcols
                    } else {
                        ops::col2im(geom, &dcols)
                    };
                    accumulate(grads, *input, dx);
                }
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    let mut da = vec![F::zero(); m * k];
                    gemm(Transpose::No, Transpose::Yes, m, k, n, F::one(), g, bv.data(), F::zero(), &mut da);
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = vec![F::zero(); k * n];
                    gemm(Transpose::Yes, Transpose::No, k, n, m, F::one(), av.data(), g, F::zero(), &mut db);
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let mut d = vec![F::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[j * m + i] = g[i * n + j];
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(bv).map(|(d, y)| *d * *y).collect());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.iter().zip(av).map(|(d, x)| *d * *x).collect());
                }
            }
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(d, x)| if *x > F::zero() { *d } else { F::zero() })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(d, y)| *d * *y * (F::one() - *y))
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::ScaledExp { input, max_arg, .. } => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .zip(self.value(*input).data())
                    .map(|((d, y), x)| if *x < *max_arg { *d * *y } else { F::zero() })
                    .collect();
                accumulate(grads, *input, d);
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, g.iter().map(|d| *d * *c).collect());
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if wants(*p) {
                        accumulate(grads, *p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::SoftmaxCols { input, scale } => {
                let y = node.value.data();
                let k = node.value.shape()[1];
                let mut dots = vec![F::zero(); k];
                for (yr, gr) in y.chunks(k).zip(g.chunks(k)) {
                    for ((acc, yv), gv) in dots.iter_mut().zip(yr).zip(gr) {
                        *acc = *acc + *yv * *gv;
                    }
                }
                let inv = F::one() / *scale;
                let mut d = vec![F::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(k).zip(y.chunks(k)).zip(g.chunks(k)) {
                    for (((dv, yv), gv), dot) in dr.iter_mut().zip(yr).zip(gr).zip(&dots) {
                        *dv = inv * *yv * (*gv - *dot);
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::Custom { inputs, func } => {
                let vals: Vec<&Tensor<F>> = inputs.iter().map(|v| self.value(*v)).collect();
                let gt = Tensor::new(node.value.shape(), g.to_vec()).expect("gradient shape");
                for (v, d) in inputs.iter().zip(func.backward(&vals, &node.value, &gt)) {
                    if let (true, Some(d)) = (wants(*v), d) {
                        accumulate(grads, *v, d);
                    }
                }
            }
        }
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, d: Vec<F>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a = *a + b),
        slot @ None => *slot = Some(d),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F: Scalar = f32> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
