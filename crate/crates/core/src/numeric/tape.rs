//! Dynamic reverse-mode tape.
//!
//! Every primitive applied to a [`Var`] appends one node holding its output value and
//! whatever the backward rule needs. [`Tape::backward`] walks the nodes in reverse
//! record order, so replaying it on the same tape always yields the same gradients.

use std::cell::RefCell;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{
    broadcast_rows, broadcast_shapes, reduce_to_shape, split_axis, strides, BroadcastMap, Tensor,
};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Relu(usize),
    SumAll(usize),
    MeanAll(usize),
    SumAxis {
        input: usize,
        axis: usize,
    },
    MaxAxis {
        input: usize,
        argmax: Vec<usize>,
    },
    Normalize {
        input: usize,
        eps: f64,
        norms: Vec<f64>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Narrow {
        input: usize,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        input: usize,
        indices: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive applications for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Result of one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it was reachable.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_node.get(var.id).and_then(Option::as_ref)
    }

    /// Per-parameter gradients gathered from parameter leaves.
    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that participates in differentiation.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Records a parameter as a leaf; its gradient is reported under `id`.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let p = store.get(id);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::clone(p.value_arc()),
            op: Op::Leaf { param: Some(id) },
            requires_grad: p.trainable(),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::from_parts(root.value.shape().to_vec(), vec![1.0]));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backward_node(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        let mut params = Vec::new();
        for (id, node) in nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = node.op {
                if let Some(g) = &grads[id] {
                    params.push((pid, g.clone()));
                }
            }
        }
        Ok(Gradients {
            by_node: grads,
            params,
        })
    }
}

/// Like [`accumulate`] for a gradient of the broadcast output shape; skips the copy when
/// the shapes already agree and a gradient is present.
fn accumulate_reduced(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: &Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    let shape = nodes[id].value.shape();
    match &mut grads[id] {
        Some(existing) if shape == g.shape() => existing.add_assign(g),
        Some(existing) => existing.add_assign(&reduce_to_shape(g, shape)),
        slot @ None => *slot = Some(reduce_to_shape(g, shape)),
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backward_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf { .. } => {}
        &Op::Add(a, b) => {
            accumulate_reduced(nodes, grads, a, g);
            accumulate_reduced(nodes, grads, b, g);
        }
        &Op::Sub(a, b) => {
            accumulate_reduced(nodes, grads, a, g);
            let neg = g.map(|v| -v);
            accumulate(
                nodes,
                grads,
                b,
                reduce_to_shape(&neg, nodes[b].value.shape()),
            );
        }
        &Op::Mul(a, b) => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            if nodes[a].requires_grad {
                let full = broadcast_zip(g, bv, g.shape().to_vec(), |x, y| x * y);
                accumulate(nodes, grads, a, reduce_to_shape(&full, av.shape()));
            }
            if nodes[b].requires_grad {
                let full = broadcast_zip(g, av, g.shape().to_vec(), |x, y| x * y);
                accumulate(nodes, grads, b, reduce_to_shape(&full, bv.shape()));
            }
        }
        &Op::Scale(a, factor) => accumulate(nodes, grads, a, g.map(|v| v * factor)),
        &Op::MatMul(a, b) => {
            let (need_a, need_b) = (nodes[a].requires_grad, nodes[b].requires_grad);
            let (ga, gb) = matmul_backward(&nodes[a].value, &nodes[b].value, g, need_a, need_b);
            if let Some(ga) = ga {
                accumulate(nodes, grads, a, ga);
            }
            if let Some(gb) = gb {
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::Permute(a, perm) => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            accumulate(nodes, grads, *a, permute_values(g, &inverse));
        }
        &Op::Reshape(a) => {
            let shape = nodes[a].value.shape().to_vec();
            let g = g.clone().reshape(shape).expect("same element count");
            accumulate(nodes, grads, a, g);
        }
        &Op::Softmax { input, axis } => {
            let (outer, len, inner) = split_axis(out.shape(), axis);
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len)
                        .map(|j| g.data()[base + j * inner] * y[base + j * inner])
                        .sum();
                    for j in 0..len {
                        let k = base + j * inner;
                        dx[k] = y[k] * (g.data()[k] - dot);
                    }
                }
            }
            accumulate(
                nodes,
                grads,
                input,
                Tensor::from_parts(out.shape().to_vec(), dx),
            );
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let gv = nodes[*gain].value.data();
            let d = gv.len();
            let rows = xhat.len() / d;
            let mut dx = vec![0.0; xhat.len()];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            for r in 0..rows {
                let gr = &g.data()[r * d..(r + 1) * d];
                let xr = &xhat[r * d..(r + 1) * d];
                let mut mean_dxhat = 0.0;
                let mut mean_dxhat_xhat = 0.0;
                for j in 0..d {
                    let dxhat = gr[j] * gv[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xr[j];
                    dgain[j] += gr[j] * xr[j];
                    dbias[j] += gr[j];
                }
                mean_dxhat /= d as f64;
                mean_dxhat_xhat /= d as f64;
                for j in 0..d {
                    let dxhat = gr[j] * gv[j];
                    dx[r * d + j] = rstd[r] * (dxhat - mean_dxhat - xr[j] * mean_dxhat_xhat);
                }
            }
            accumulate(
                nodes,
                grads,
                *x,
                Tensor::from_parts(out.shape().to_vec(), dx),
            );
            accumulate(nodes, grads, *gain, Tensor::from_parts(vec![d], dgain));
            accumulate(nodes, grads, *bias, Tensor::from_parts(vec![d], dbias));
        }
        &Op::Relu(a) => {
            let dx = g
                .data()
                .iter()
                .zip(out.data())
                .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                .collect();
            accumulate(
                nodes,
                grads,
                a,
                Tensor::from_parts(out.shape().to_vec(), dx),
            );
        }
        &Op::SumAll(a) => {
            let shape = nodes[a].value.shape().to_vec();
            accumulate(nodes, grads, a, Tensor::full(shape, g.item()));
        }
        &Op::MeanAll(a) => {
            let input = &nodes[a].value;
            let v = g.item() / input.len() as f64;
            accumulate(nodes, grads, a, Tensor::full(input.shape().to_vec(), v));
        }
        &Op::SumAxis { input, axis } => {
            let shape = nodes[input].value.shape().to_vec();
            let (outer, len, inner) = split_axis(&shape, axis);
            let mut dx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for j in 0..len {
                    let dst = (o * len + j) * inner;
                    dx[dst..dst + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(nodes, grads, input, Tensor::from_parts(shape, dx));
        }
        Op::MaxAxis { input, argmax } => {
            let shape = nodes[*input].value.shape().to_vec();
            let mut dx = Tensor::zeros(shape);
            for (gv, &src) in g.data().iter().zip(argmax) {
                dx.data_mut()[src] += gv;
            }
            accumulate(nodes, grads, *input, dx);
        }
        Op::Normalize { input, eps, norms } => {
            let d = *out.shape().last().expect("normalize on rank >= 1");
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for (r, &norm) in norms.iter().enumerate() {
                let span = r * d..(r + 1) * d;
                let gr = &g.data()[span.clone()];
                let yr = &y[span];
                if norm > *eps {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                } else {
                    for j in 0..d {
                        dx[r * d + j] = gr[j] / eps;
                    }
                }
            }
            accumulate(
                nodes,
                grads,
                *input,
                Tensor::from_parts(out.shape().to_vec(), dx),
            );
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for &id in inputs {
                let shape = nodes[id].value.shape().to_vec();
                let len = shape[*axis];
                if nodes[id].requires_grad {
                    let mut dx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        dx.extend_from_slice(&g.data()[start..start + len * inner]);
                    }
                    accumulate(nodes, grads, id, Tensor::from_parts(shape, dx));
                }
                offset += len;
            }
        }
        &Op::Narrow { input, axis, start } => {
            let shape = nodes[input].value.shape().to_vec();
            let (outer, total, inner) = split_axis(&shape, axis);
            let len = out.shape()[axis];
            let mut dx = vec![0.0; outer * total * inner];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * len * inner;
                dx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            accumulate(nodes, grads, input, Tensor::from_parts(shape, dx));
        }
        Op::IndexSelect { input, indices } => {
            let shape = nodes[*input].value.shape().to_vec();
            let row: usize = shape[1..].iter().product();
            let mut dx = Tensor::zeros(shape);
            for (i, &src) in indices.iter().enumerate() {
                let dst = &mut dx.data_mut()[src * row..(src + 1) * row];
                for (d, gv) in dst.iter_mut().zip(&g.data()[i * row..(i + 1) * row]) {
                    *d += gv;
                }
            }
            accumulate(nodes, grads, *input, dx);
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let shape = nodes[*logits].value.shape().to_vec();
            let classes = shape[1];
            let scale = g.item() / targets.len() as f64;
            let mut dx = probs.clone();
            for (r, &t) in targets.iter().enumerate() {
                dx[r * classes + t] -= 1.0;
            }
            dx.iter_mut().for_each(|v| *v *= scale);
            accumulate(nodes, grads, *logits, Tensor::from_parts(shape, dx));
        }
    }
}

/// `c = a @ b` on row-major blocks with arbitrary element strides for a and b.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!((m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
        assert!((k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    }
    // SAFETY: the asserts above bound every element dgemm reads from a and b and
    // writes to c (c is m x n with row stride n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatMulPlan {
    p: usize,
    q: usize,
    r: usize,
    out_shape: Vec<usize>,
    a_blocks: Vec<usize>,
    b_blocks: Vec<usize>,
}

fn plan_matmul(a: &[usize], b: &[usize]) -> Result<MatMulPlan> {
    if a.len() < 2 || b.len() < 2 || a[a.len() - 1] != b[b.len() - 2] {
        return Err(Error::shape("matmul", a, b));
    }
    let (p, q) = (a[a.len() - 2], a[a.len() - 1]);
    let r = b[b.len() - 1];
    let a_batch = &a[..a.len() - 2];
    let b_batch = &b[..b.len() - 2];
    let batch =
        broadcast_shapes("matmul", a_batch, b_batch).map_err(|_| Error::shape("matmul", a, b))?;
    let count: usize = batch.iter().product();
    let a_blocks = BroadcastMap::new(a_batch, &batch).indices(count);
    let b_blocks = BroadcastMap::new(b_batch, &batch).indices(count);
    let mut out_shape = batch;
    out_shape.extend([p, r]);
    Ok(MatMulPlan {
        p,
        q,
        r,
        out_shape,
        a_blocks,
        b_blocks,
    })
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let plan = plan_matmul(a.shape(), b.shape())?;
    let (p, q, r) = (plan.p, plan.q, plan.r);
    let mut out = vec![0.0; plan.out_shape.iter().product()];
    for (i, (&ab, &bb)) in plan.a_blocks.iter().zip(&plan.b_blocks).enumerate() {
        gemm(
            p,
            q,
            r,
            &a.data()[ab * p * q..(ab + 1) * p * q],
            (q, 1),
            &b.data()[bb * q * r..(bb + 1) * q * r],
            (r, 1),
            &mut out[i * p * r..(i + 1) * p * r],
            0.0,
        );
    }
    Ok(Tensor::from_parts(plan.out_shape, out))
}

fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    g: &Tensor,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let plan = plan_matmul(a.shape(), b.shape()).expect("shapes validated in forward");
    let (p, q, r) = (plan.p, plan.q, plan.r);
    let mut ga = need_a.then(|| Tensor::zeros(a.shape().to_vec()));
    let mut gb = need_b.then(|| Tensor::zeros(b.shape().to_vec()));
    for (i, (&ab, &bb)) in plan.a_blocks.iter().zip(&plan.b_blocks).enumerate() {
        let gi = &g.data()[i * p * r..(i + 1) * p * r];
        if let Some(ga) = ga.as_mut() {
            // dA = G @ B^T
            let bi = &b.data()[bb * q * r..(bb + 1) * q * r];
            gemm(
                p,
                r,
                q,
                gi,
                (r, 1),
                bi,
                (1, r),
                &mut ga.data_mut()[ab * p * q..(ab + 1) * p * q],
                1.0,
            );
        }
        if let Some(gb) = gb.as_mut() {
            // dB = A^T @ G
            let ai = &a.data()[ab * p * q..(ab + 1) * p * q];
            gemm(
                q,
                p,
                r,
                ai,
                (1, q),
                gi,
                (r, 1),
                &mut gb.data_mut()[bb * q * r..(bb + 1) * q * r],
                1.0,
            );
        }
    }
    (ga, gb)
}

fn permute_values(x: &Tensor, perm: &[usize]) -> Tensor {
    let shape = x.shape();
    let rank = shape.len();
    if rank == 0 || x.is_empty() {
        return Tensor::from_parts(perm.iter().map(|&p| shape[p]).collect(), x.data().to_vec());
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let walk: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let data = x.data();
    let mut out = Vec::with_capacity(x.len());
    // innermost output axis handled as a run: contiguous copy or a strided gather
    let run = out_shape[rank - 1];
    let step = walk[rank - 1];
    let outer = rank - 1;
    let mut counter = vec![0usize; outer];
    let mut flat = 0usize;
    for _ in 0..x.len() / run {
        if step == 1 {
            out.extend_from_slice(&data[flat..flat + run]);
        } else {
            out.extend((0..run).map(|j| data[flat + j * step]));
        }
        for d in (0..outer).rev() {
            counter[d] += 1;
            flat += walk[d];
            if counter[d] < out_shape[d] {
                break;
            }
            flat -= walk[d] * counter[d];
            counter[d] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

fn elementwise(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let shape = broadcast_shapes(op, a.shape(), b.shape())?;
    Ok(broadcast_zip(a, b, shape, f))
}

/// `f` applied over both inputs broadcast to `shape`, one innermost row at a time.
fn broadcast_zip(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let run = shape.last().copied().unwrap_or(1);
    let (a_rows, a_step) = broadcast_rows(a.shape(), &shape);
    let (b_rows, b_step) = broadcast_rows(b.shape(), &shape);
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(n);
    if run > 0 {
        for (&ao, &bo) in a_rows.iter().zip(&b_rows) {
            match (a_step, b_step) {
                (1, 1) => data.extend(
                    ad[ao..ao + run]
                        .iter()
                        .zip(&bd[bo..bo + run])
                        .map(|(x, y)| f(*x, *y)),
                ),
                (1, 0) => data.extend(ad[ao..ao + run].iter().map(|x| f(*x, bd[bo]))),
                (0, 1) => data.extend(bd[bo..bo + run].iter().map(|y| f(ad[ao], *y))),
                _ => data.extend((0..run).map(|_| f(ad[ao], bd[bo]))),
            }
        }
    }
    Tensor::from_parts(shape, data)
}

fn check_axis(shape: &[usize], axis: usize, op: &str) {
    assert!(
        axis < shape.len(),
        "{op}: axis {axis} out of range for shape {shape:?}"
    );
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = elementwise("add", &self.value(), &other.value(), |x, y| x + y)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = elementwise("sub", &self.value(), &other.value(), |x, y| x - y)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = elementwise("mul", &self.value(), &other.value(), |x, y| x * y)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let v = self.value().map(|x| x * factor);
        self.unary(v, Op::Scale(self.id, factor))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = matmul_forward(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn permute(&self, perm: &[usize]) -> Var<'t> {
        let value = self.value();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        assert!(
            sorted.iter().enumerate().all(|(i, &p)| i == p) && perm.len() == value.rank(),
            "invalid permutation {perm:?} for shape {:?}",
            value.shape()
        );
        let v = permute_values(&value, perm);
        self.unary(v, Op::Permute(self.id, perm.to_vec()))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Var<'t> {
        let rank = self.shape().len();
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = (*self.value()).clone().reshape(shape.to_vec())?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis(x.shape(), axis, "softmax");
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len)
                    .map(|j| x.data()[base + j * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x.data()[base + j * inner] - max).exp();
                    y[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    y[base + j * inner] /= sum;
                }
            }
        }
        let v = Tensor::from_parts(x.shape().to_vec(), y);
        Ok(self.unary(
            v,
            Op::Softmax {
                input: self.id,
                axis,
            },
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let gv = gain.value();
        let bv = bias.value();
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", x.shape(), gv.shape()))?;
        if gv.shape() != [d] || bv.shape() != [d] || d == 0 {
            return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
        }
        let rows = x.len() / d;
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), y),
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().data().iter().sum());
        self.unary(v, Op::SumAll(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64);
        self.unary(v, Op::MeanAll(self.id))
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Var<'t> {
        let x = self.value();
        check_axis(x.shape(), axis, "sum_axis");
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = (o * len + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x.data()[src + i];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        self.unary(
            Tensor::from_parts(shape, out),
            Op::SumAxis {
                input: self.id,
                axis,
            },
        )
    }

    /// Maximum over `axis`, dropping it from the shape. Ties resolve to the lowest index.
    pub fn max_axis(&self, axis: usize) -> Var<'t> {
        let x = self.value();
        check_axis(x.shape(), axis, "max_axis");
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                for j in 0..len {
                    let src = (o * len + j) * inner + i;
                    if x.data()[src] > out[o * inner + i] || j == 0 {
                        out[o * inner + i] = x.data()[src];
                        argmax[o * inner + i] = src;
                    }
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        self.unary(
            Tensor::from_parts(shape, out),
            Op::MaxAxis {
                input: self.id,
                argmax,
            },
        )
    }

    /// Scales each last-axis vector to unit length; norms below `eps` divide by `eps`.
    pub fn normalize(&self, eps: f64) -> Var<'t> {
        let x = self.value();
        let d = *x.shape().last().expect("normalize on rank >= 1");
        let rows = x.len() / d.max(1);
        let mut norms = Vec::with_capacity(rows);
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            for j in 0..d {
                y[r * d + j] = row[j] / denom;
            }
            norms.push(norm);
        }
        self.unary(
            Tensor::from_parts(x.shape().to_vec(), y),
            Op::Normalize {
                input: self.id,
                eps,
                norms,
            },
        )
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        check_axis(x.shape(), axis, "narrow");
        let (outer, total, inner) = split_axis(x.shape(), axis);
        assert!(
            start + len <= total,
            "narrow {start}+{len} exceeds extent {total}"
        );
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * total + start) * inner;
            out.extend_from_slice(&x.data()[src..src + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        self.unary(
            Tensor::from_parts(shape, out),
            Op::Narrow {
                input: self.id,
                axis,
                start,
            },
        )
    }

    /// Gathers rows (entries of axis 0).
    pub fn index_select(&self, indices: &[usize]) -> Var<'t> {
        let x = self.value();
        assert!(x.rank() >= 1, "index_select on a scalar");
        let row: usize = x.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            assert!(
                i < x.shape()[0],
                "index {i} out of range for {:?}",
                x.shape()
            );
            out.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        self.unary(
            Tensor::from_parts(shape, out),
            Op::IndexSelect {
                input: self.id,
                indices: indices.to_vec(),
            },
        )
    }

    /// Mean cross-entropy of `[rows, classes]` logits against integer targets.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 2 || x.shape()[0] != targets.len() || x.shape()[1] == 0 {
            return Err(Error::shape("cross_entropy", x.shape(), &[targets.len()]));
        }
        let classes = x.shape()[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Usage(format!(
                "target {t} out of range for {classes} classes"
            )));
        }
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &x.data()[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            for j in 0..classes {
                probs[r * classes + j] = (row[j] - log_z).exp();
            }
            total += log_z - row[t];
        }
        let v = Tensor::scalar(total / targets.len() as f64);
        Ok(self.unary(
            v,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }
}

/// Joins vars along `axis`; all other extents must agree.
pub fn concat<'t>(vars: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = vars
        .first()
        .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
    let tape = first.tape;
    let values: Vec<Arc<Tensor>> = vars.iter().map(Var::value).collect();
    let base = values[0].shape().to_vec();
    check_axis(&base, axis, "concat");
    for v in &values[1..] {
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", &base, s));
        }
    }
    let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
    let (outer, _, inner) = split_axis(&base, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis] * inner;
            out.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    let rg = vars.iter().any(Var::requires_grad);
    Ok(tape.push(
        Tensor::from_parts(shape, out),
        Op::Concat {
            inputs: vars.iter().map(|v| v.id).collect(),
            axis,
        },
        rg,
    ))
}
