//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in execution
//! order. [`Graph::backward`] walks that record from the end, so operations are
//! visited in exact reverse order and a node that feeds several consumers
//! receives the sum of their contributions.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::kernels;
use crate::tensor::{split_axis, Tensor};

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Gelu(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        target: usize,
        probs: Vec<f64>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Mean {
        x: usize,
        axis: usize,
    },
    Max {
        x: usize,
        argmax: Vec<usize>,
    },
    SumAll(usize),
    Embedding {
        table: usize,
        indices: Vec<usize>,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    Reshape(usize),
    Transpose(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward/backward pass.
///
/// A graph is confined to one thread. In training mode dropout draws from a
/// generator seeded at construction; in eval mode dropout is the identity.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::eval()
    }
}

impl Graph {
    pub fn eval() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            train: false,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            train: true,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse sweep from a single-element `loss`. Returns the gradient of the
    /// loss with respect to every node that requires one.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(dim_err!(
                "backward needs a single-element loss, got shape {:?}",
                nodes[loss.id].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match (&node.op, grads[id].as_ref()) {
                (Op::Leaf, _) | (_, None) => continue,
                // Interior gradients are no longer needed once propagated.
                (_, Some(_)) => grads[id].take().unwrap(),
            };
            backprop(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            accumulate(grads, nodes, a, |ga| kernels::matmul_nt(g, bv.data(), ga, m, n, k));
            accumulate(grads, nodes, b, |gb| kernels::matmul_tn(av.data(), g, gb, m, k, n));
        }
        &Op::MatMulNt(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
            accumulate(grads, nodes, a, |ga| kernels::matmul(g, bv.data(), ga, m, n, k));
            accumulate(grads, nodes, b, |gb| kernels::matmul_tn(g, av.data(), gb, m, n, k));
        }
        &Op::Add(a, b) => {
            accumulate(grads, nodes, a, |ga| add_into(ga, g));
            accumulate(grads, nodes, b, |gb| add_into(gb, g));
        }
        &Op::Sub(a, b) => {
            accumulate(grads, nodes, a, |ga| add_into(ga, g));
            accumulate(grads, nodes, b, |gb| {
                for (x, y) in gb.iter_mut().zip(g) {
                    *x -= y;
                }
            });
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            accumulate(grads, nodes, a, |ga| {
                for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                    *x += gi * bi;
                }
            });
            accumulate(grads, nodes, b, |gb| {
                for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                    *x += gi * ai;
                }
            });
        }
        &Op::AddRow(a, bias) => {
            accumulate(grads, nodes, a, |ga| add_into(ga, g));
            accumulate(grads, nodes, bias, |gb| {
                for row in g.chunks_exact(gb.len()) {
                    add_into(gb, row);
                }
            });
        }
        &Op::Scale(a, c) => accumulate(grads, nodes, a, |ga| {
            for (x, gi) in ga.iter_mut().zip(g) {
                *x += c * gi;
            }
        }),
        &Op::Relu(a) => {
            let av = nodes[a].value.data();
            accumulate(grads, nodes, a, |ga| {
                for ((x, gi), ai) in ga.iter_mut().zip(g).zip(av) {
                    if *ai > 0.0 {
                        *x += gi;
                    }
                }
            })
        }
        &Op::Gelu(a) => {
            let av = nodes[a].value.data();
            accumulate(grads, nodes, a, |ga| {
                for ((x, gi), &v) in ga.iter_mut().zip(g).zip(av) {
                    let cdf = 0.5 * (1.0 + libm::erf(v * INV_SQRT_2));
                    let pdf = INV_SQRT_2PI * libm::exp(-0.5 * v * v);
                    *x += gi * (cdf + v * pdf);
                }
            })
        }
        &Op::Softmax { x, axis } => {
            let (outer, len, inner) = split_axis(node.value.shape(), axis);
            accumulate(grads, nodes, x, |gx| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let s: f64 = (0..len).map(|l| g[at(l)] * out[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] += out[at(l)] * (g[at(l)] - s);
                        }
                    }
                }
            })
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let n = nodes[*gain].value.numel();
            let gv = nodes[*gain].value.data();
            accumulate(grads, nodes, *x, |gx| {
                let mut dxhat = vec![0.0; n];
                for (r, ((grow, xrow), gxrow)) in g
                    .chunks_exact(n)
                    .zip(xhat.chunks_exact(n))
                    .zip(gx.chunks_exact_mut(n))
                    .enumerate()
                {
                    for j in 0..n {
                        dxhat[j] = grow[j] * gv[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gxrow[j] += inv_std[r] * (dxhat[j] - mean_d - xrow[j] * mean_dx);
                    }
                }
            });
            accumulate(grads, nodes, *gain, |gg| {
                for (grow, xrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                    for j in 0..n {
                        gg[j] += grow[j] * xrow[j];
                    }
                }
            });
            accumulate(grads, nodes, *bias, |gb| {
                for grow in g.chunks_exact(n) {
                    add_into(gb, grow);
                }
            });
        }
        Op::CrossEntropy {
            logits,
            target,
            probs,
        } => accumulate(grads, nodes, *logits, |gl| {
            for (j, (x, p)) in gl.iter_mut().zip(probs).enumerate() {
                let onehot = if j == *target { 1.0 } else { 0.0 };
                *x += g[0] * (p - onehot);
            }
        }),
        Op::Concat { inputs, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis] * inner;
            let mut offset = 0;
            for &inp in inputs {
                let chunk = nodes[inp].value.shape()[*axis] * inner;
                accumulate(grads, nodes, inp, |gi| {
                    for o in 0..outer {
                        add_into(
                            &mut gi[o * chunk..(o + 1) * chunk],
                            &g[o * total + offset..o * total + offset + chunk],
                        );
                    }
                });
                offset += chunk;
            }
        }
        &Op::Narrow { x, axis, start } => {
            let src = nodes[x].value.shape();
            let (outer, len, inner) = split_axis(src, axis);
            let chunk = node.value.shape()[axis] * inner;
            accumulate(grads, nodes, x, |gx| {
                for o in 0..outer {
                    let base = o * len * inner + start * inner;
                    add_into(&mut gx[base..base + chunk], &g[o * chunk..(o + 1) * chunk]);
                }
            });
        }
        &Op::Mean { x, axis } => {
            let (outer, len, inner) = split_axis(nodes[x].value.shape(), axis);
            accumulate(grads, nodes, x, |gx| {
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gx[(o * len + l) * inner + i] += g[o * inner + i] / len as f64;
                        }
                    }
                }
            });
        }
        Op::Max { x, argmax } => accumulate(grads, nodes, *x, |gx| {
            for (gi, &src) in g.iter().zip(argmax) {
                gx[src] += gi;
            }
        }),
        &Op::SumAll(a) => accumulate(grads, nodes, a, |ga| {
            for x in ga.iter_mut() {
                *x += g[0];
            }
        }),
        Op::Embedding { table, indices } => {
            let d = nodes[*table].value.shape()[1];
            accumulate(grads, nodes, *table, |gt| {
                for (r, &idx) in indices.iter().enumerate() {
                    add_into(&mut gt[idx * d..(idx + 1) * d], &g[r * d..(r + 1) * d]);
                }
            });
        }
        Op::Dropout { x, mask } => accumulate(grads, nodes, *x, |gx| {
            for ((a, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                *a += gi * m;
            }
        }),
        &Op::Reshape(a) => accumulate(grads, nodes, a, |ga| add_into(ga, g)),
        &Op::Transpose(a) => {
            let (r, c) = (nodes[a].value.shape()[0], nodes[a].value.shape()[1]);
            accumulate(grads, nodes, a, |ga| {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients produced by [`Graph::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `var` does not require a gradient or the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value(self.id).shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.graph.value(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs_grad(&[self.id])
    }

    fn same_graph(&self, other: Var<'g>) {
        debug_assert!(core::ptr::eq(self.graph, other.graph));
    }

    fn emit(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'g> {
        let rg = self.graph.needs_grad(inputs);
        self.graph.push(value, op, rg)
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        let v = self.graph.value(self.id);
        match v.shape() {
            &[r, c] => Ok((r, c)),
            s => Err(dim_err!("expected a matrix, got shape {:?}", s)),
        }
    }

    /// `self[m x k] * other[k x n]`
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(other);
        let (m, k) = self.matrix_dims()?;
        let (k2, n) = other.matrix_dims()?;
        if k != k2 {
            return Err(dim_err!("matmul inner dimensions {} and {} differ", k, k2));
        }
        let mut out = vec![0.0; m * n];
        {
            let (a, b) = (self.graph.value(self.id), self.graph.value(other.id));
            kernels::matmul(a.data(), b.data(), &mut out, m, k, n);
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.emit(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    /// `self[m x k] * other[n x k]^T`
    pub fn matmul_nt(self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(other);
        let (m, k) = self.matrix_dims()?;
        let (n, k2) = other.matrix_dims()?;
        if k != k2 {
            return Err(dim_err!("matmul_nt inner dimensions {} and {} differ", k, k2));
        }
        let mut out = vec![0.0; m * n];
        {
            let (a, b) = (self.graph.value(self.id), self.graph.value(other.id));
            kernels::matmul_nt(a.data(), b.data(), &mut out, m, k, n);
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.emit(value, Op::MatMulNt(self.id, other.id), &[self.id, other.id]))
    }

    fn zip_with(&self, other: Var<'g>, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_graph(other);
        let (a, b) = (self.graph.value(self.id), self.graph.value(other.id));
        if a.shape() != b.shape() {
            return Err(dim_err!("{}: shapes {:?} and {:?} differ", name, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.emit(v, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.emit(v, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.emit(v, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    /// Adds a vector of length `n` to every row of a tensor whose last axis is `n`.
    pub fn add_row(self, bias: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(bias);
        let value = {
            let (a, b) = (self.graph.value(self.id), self.graph.value(bias.id));
            let n = b.numel();
            if b.rank() != 1 || a.shape().last() != Some(&n) {
                return Err(dim_err!("add_row: {:?} + row {:?}", a.shape(), b.shape()));
            }
            let mut data = a.data().to_vec();
            for row in data.chunks_exact_mut(n) {
                add_into(row, b.data());
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.emit(value, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let a = self.graph.value(self.id);
        let data = a.data().iter().map(|&x| f(x)).collect();
        Tensor::new(a.shape().to_vec(), data).expect("same shape")
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let v = self.map(|x| c * x);
        self.emit(v, Op::Scale(self.id, c), &[self.id])
    }

    pub fn relu(self) -> Var<'g> {
        let v = self.map(|x| if x > 0.0 { x } else { 0.0 });
        self.emit(v, Op::Relu(self.id), &[self.id])
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(self) -> Var<'g> {
        let v = self.map(|x| 0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2)));
        self.emit(v, Op::Gelu(self.id), &[self.id])
    }

    fn check_axis(&self, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(dim_err!("axis {} out of range for shape {:?}", axis, shape));
        }
        Ok(shape)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        let shape = self.check_axis(axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let value = {
            let a = self.graph.value(self.id);
            let x = a.data();
            let mut out = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let m = (0..len).map(|l| x[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for l in 0..len {
                        let e = libm::exp(x[at(l)] - m);
                        out[at(l)] = e;
                        s += e;
                    }
                    for l in 0..len {
                        out[at(l)] /= s;
                    }
                }
            }
            Tensor::new(shape, out)?
        };
        Ok(self.emit(value, Op::Softmax { x: self.id, axis }, &[self.id]))
    }

    /// Layer normalization over the last axis with affine `gain` and `bias`.
    pub fn layer_norm(self, gain: Var<'g>, bias: Var<'g>, eps: f64) -> Result<Var<'g>> {
        self.same_graph(gain);
        self.same_graph(bias);
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Argument(alloc::format!("layer_norm eps must be positive, got {eps}")));
        }
        let (value, xhat, inv_std) = {
            let (a, gv, bv) = (
                self.graph.value(self.id),
                self.graph.value(gain.id),
                self.graph.value(bias.id),
            );
            let n = gv.numel();
            if a.shape().last() != Some(&n) || bv.numel() != n || gv.rank() != 1 || bv.rank() != 1 {
                return Err(dim_err!(
                    "layer_norm: input {:?}, gain {:?}, bias {:?}",
                    a.shape(),
                    gv.shape(),
                    bv.shape()
                ));
            }
            let rows = a.numel() / n;
            let mut out = vec![0.0; a.numel()];
            let mut xhat = vec![0.0; a.numel()];
            let mut inv_std = vec![0.0; rows];
            for r in 0..rows {
                let row = &a.data()[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let is = 1.0 / libm::sqrt(var + eps);
                inv_std[r] = is;
                for j in 0..n {
                    let h = (row[j] - mean) * is;
                    xhat[r * n + j] = h;
                    out[r * n + j] = h * gv.data()[j] + bv.data()[j];
                }
            }
            (Tensor::new(a.shape().to_vec(), out)?, xhat, inv_std)
        };
        let inputs = [self.id, gain.id, bias.id];
        let rg = self.graph.needs_grad(&inputs);
        let op = if rg {
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            }
        } else {
            Op::Leaf
        };
        Ok(self.graph.push(value, op, rg))
    }

    /// `-log softmax(self)[target]` for a logit vector.
    pub fn cross_entropy(self, target: usize) -> Result<Var<'g>> {
        let (value, probs) = {
            let a = self.graph.value(self.id);
            if a.rank() != 1 {
                return Err(dim_err!("cross_entropy expects a vector, got {:?}", a.shape()));
            }
            if target >= a.numel() {
                return Err(Error::Index {
                    index: target,
                    len: a.numel(),
                });
            }
            let x = a.data();
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = x.iter().map(|v| libm::exp(v - m)).collect();
            let s: f64 = exps.iter().sum();
            let loss = m + libm::log(s) - x[target];
            let probs = exps.iter().map(|e| e / s).collect::<Vec<_>>();
            (Tensor::scalar(loss), probs)
        };
        Ok(self.emit(
            value,
            Op::CrossEntropy {
                logits: self.id,
                target,
                probs,
            },
            &[self.id],
        ))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let shape = self.check_axis(axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(dim_err!(
                "narrow [{}, {}) out of range for axis {} of {:?}",
                start,
                start + len,
                axis,
                shape
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = {
            let a = self.graph.value(self.id);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * full * inner + start * inner;
                out.extend_from_slice(&a.data()[base..base + len * inner]);
            }
            Tensor::new(out_shape, out)?
        };
        Ok(self.emit(
            value,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        let shape = self.check_axis(axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let value = {
            let a = self.graph.value(self.id);
            let x = a.data();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let mut s = x[o * len * inner + i];
                    for l in 1..len {
                        s += x[(o * len + l) * inner + i];
                    }
                    out[o * inner + i] = s / len as f64;
                }
            }
            let mut out_shape = shape;
            out_shape.remove(axis);
            Tensor::new(out_shape, out)?
        };
        Ok(self.emit(value, Op::Mean { x: self.id, axis }, &[self.id]))
    }

    /// Max along `axis`, which is removed from the shape. Ties route the
    /// gradient to the first maximal element.
    pub fn max_axis(self, axis: usize) -> Result<Var<'g>> {
        let shape = self.check_axis(axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let (value, argmax) = {
            let a = self.graph.value(self.id);
            let x = a.data();
            let mut out = vec![0.0; outer * inner];
            let mut argmax = vec![0usize; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = o * len * inner + i;
                    for l in 1..len {
                        let at = (o * len + l) * inner + i;
                        if x[at] > x[best] {
                            best = at;
                        }
                    }
                    out[o * inner + i] = x[best];
                    argmax[o * inner + i] = best;
                }
            }
            let mut out_shape = shape;
            out_shape.remove(axis);
            (Tensor::new(out_shape, out)?, argmax)
        };
        Ok(self.emit(
            value,
            Op::Max {
                x: self.id,
                argmax,
            },
            &[self.id],
        ))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.graph.value(self.id).data().iter().sum();
        self.emit(Tensor::scalar(s), Op::SumAll(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.graph.value(self.id).numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Inverted dropout: zeroes each element with probability `p` and rescales
    /// survivors by `1 / (1 - p)`. Identity outside training mode.
    pub fn dropout(self, p: f64) -> Result<Var<'g>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Argument(alloc::format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.graph.train || p == 0.0 {
            return Ok(self);
        }
        let (value, mask) = {
            let a = self.graph.value(self.id);
            let mut rng = self.graph.rng.borrow_mut();
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..a.numel())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let data = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            (Tensor::new(a.shape().to_vec(), data)?, mask)
        };
        Ok(self.emit(value, Op::Dropout { x: self.id, mask }, &[self.id]))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.graph.value(self.id).clone().reshaped(shape)?;
        Ok(self.emit(value, Op::Reshape(self.id), &[self.id]))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let (r, c) = self.matrix_dims()?;
        let value = {
            let a = self.graph.value(self.id);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = a.data()[i * c + j];
                }
            }
            Tensor::new(vec![c, r], out)?
        };
        Ok(self.emit(value, Op::Transpose(self.id), &[self.id]))
    }

    /// Rows of a `[vocab x d]` table selected by `indices`, giving `[len x d]`.
    pub fn embedding(self, indices: &[usize]) -> Result<Var<'g>> {
        let (vocab, d) = self.matrix_dims()?;
        if indices.is_empty() {
            return Err(Error::Argument("embedding lookup with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index {
                index: bad,
                len: vocab,
            });
        }
        let value = {
            let t = self.graph.value(self.id);
            let mut out = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
            }
            Tensor::new(vec![indices.len(), d], out)?
        };
        Ok(self.emit(
            value,
            Op::Embedding {
                table: self.id,
                indices: indices.to_vec(),
            },
            &[self.id],
        ))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'g>(vars: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
    let first = vars
        .first()
        .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
    let graph = first.graph;
    let base = first.check_axis(axis)?;
    let mut out_shape = base.clone();
    out_shape[axis] = 0;
    for v in vars {
        first.same_graph(*v);
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(dim_err!("concat: {:?} incompatible with {:?} on axis {}", s, base, axis));
        }
        out_shape[axis] += s[axis];
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let value = {
        let mut out = Vec::with_capacity(out_shape.iter().product());
        let values: Vec<_> = vars.iter().map(|v| graph.value(v.id)).collect();
        for o in 0..outer {
            for t in &values {
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Tensor::new(out_shape, out)?
    };
    let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
    let rg = graph.needs_grad(&ids);
    Ok(graph.push(value, Op::Concat { inputs: ids, axis }, rg))
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack<'g>(vars: &[Var<'g>]) -> Result<Var<'g>> {
    let lifted = vars
        .iter()
        .map(|v| {
            let mut s = v.shape();
            s.insert(0, 1);
            v.reshape(&s)
        })
        .collect::<Result<Vec<_>>>()?;
    concat(&lifted, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, random_tensor};
    use rand::SeedableRng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let g = Graph::eval();
        let id = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(id.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let b = g.constant(t(&[2, 1], &[0.0, 5.0]));
        assert_eq!(a.matmul(b).unwrap().value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let g = Graph::eval();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(b), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let g = Graph::eval();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(x.softmax(0).unwrap().value().data(), &[0.5, 0.5]);
        let y = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
        assert_eq!(y.softmax(0).unwrap().value().data(), &[0.5, 0.5]);
        assert!(y.softmax(1).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let g = Graph::eval();
        let gain = g.constant(Tensor::vector(vec![1.0; 3]));
        let bias = g.constant(Tensor::vector(vec![0.0; 3]));
        let c = g.constant(Tensor::vector(vec![4.0; 3]));
        let out = c.layer_norm(gain, bias, 1e-5).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let gain = g.constant(Tensor::vector(vec![1.0; 2]));
        let bias = g.constant(Tensor::vector(vec![0.0; 2]));
        let x = g.constant(Tensor::vector(vec![1.0, -1.0]));
        let out = x.layer_norm(gain, bias, 1e-12).unwrap().value();
        assert!((out.data()[0] - 1.0).abs() < 1e-9 && (out.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_cases() {
        let g = Graph::eval();
        let l = g.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!((l.cross_entropy(0).unwrap().item() - core::f64::consts::LN_2).abs() < 1e-12);
        let s = g.constant(Tensor::vector(vec![1000.0, 0.0]));
        assert!(s.cross_entropy(0).unwrap().item().abs() < 1e-12);
        assert!(matches!(l.cross_entropy(2), Err(Error::Index { index: 2, len: 2 })));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let g = Graph::eval();
        let l = g.param(Tensor::vector(vec![0.3, -1.2, 2.0]));
        let loss = l.cross_entropy(1).unwrap();
        let grads = g.backward(loss).unwrap();
        let p = l.softmax(0).unwrap().value();
        let gl = grads.get(l).unwrap();
        for j in 0..3 {
            let expect = p.data()[j] - if j == 1 { 1.0 } else { 0.0 };
            assert!((gl[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_over_singleton_axis_is_identity() {
        let g = Graph::eval();
        let x = g.constant(t(&[1, 3], &[1.5, -2.0, 0.1]));
        assert_eq!(x.mean_axis(0).unwrap().value().data(), &[1.5, -2.0, 0.1]);
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_train() {
        let g = Graph::eval();
        let x = g.constant(Tensor::full(&[4, 4], 1.0));
        assert_eq!(x.dropout(0.5).unwrap().value(), x.value());

        let run = |seed| {
            let g = Graph::train(seed);
            let x = g.constant(Tensor::full(&[8, 8], 1.0));
            x.dropout(0.5).unwrap().value()
        };
        assert_eq!(run(3), run(3));
        let v = run(3);
        assert!(v.data().iter().all(|&x| x == 0.0 || x == 2.0));
        assert!(v.data().contains(&0.0));
    }

    #[test]
    fn backward_visits_in_reverse_and_accumulates_fanout() {
        // y = a*a + 3a feeds `a` to three consumers.
        let g = Graph::eval();
        let a = g.param(Tensor::scalar(2.0));
        let sq = a.mul(a).unwrap();
        let y = sq.add(a.scale(3.0)).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[7.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let g = Graph::eval();
        let a = g.param(Tensor::vector(vec![1.0, 2.0]));
        let c = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let y = a.mul(c).unwrap().sum();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[3.0, 4.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn finite_difference_matmul_3x4_by_4x2() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = random_tensor(&mut rng, &[3, 4]);
        let b = random_tensor(&mut rng, &[4, 2]);
        check_gradients(&[a, b], 1e-6, |_, v| v[0].matmul(v[1]).map(|p| p.sum()));
    }

    #[test]
    fn finite_difference_concat_narrow_transpose() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let a = random_tensor(&mut rng, &[2, 3]);
        let b = random_tensor(&mut rng, &[2, 2]);
        let w = random_tensor(&mut rng, &[2, 5]);
        check_gradients(&[a, b, w], 1e-6, |_, v| {
            let c = concat(&[v[0], v[1]], 1)?;
            let n = c.narrow(1, 1, 3)?;
            let tr = v[2].transpose()?.narrow(0, 0, 3)?;
            Ok(n.matmul(tr)?.softmax(0)?.mul(n.matmul(tr)?)?.sum())
        });
    }
}
