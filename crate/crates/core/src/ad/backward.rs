//! Reverse sweeps over the tape.
//!
//! [`Tape::backward`] accumulates plain numeric adjoints. [`Tape::grad`]
//! records the adjoint computation itself on the tape, so the returned
//! gradients can be differentiated again. The schemes rely on the latter: the
//! Z process is an input gradient of the network and the loss is then
//! differentiated with respect to the parameters through it.

use std::collections::HashMap;

use super::tape::{NodeId, Node, Op, Tape, Var};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Gradients of a scalar output keyed by leaf node.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    grads: HashMap<NodeId, Tensor>,
}

impl GradientMap {
    pub fn get(&self, leaf: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(&leaf.id)
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

// Nodes whose value depends on at least one of `sources`.
fn reachable(nodes: &[Node], upto: NodeId, sources: &[NodeId]) -> Vec<bool> {
    let mut reach = vec![false; upto + 1];
    for &s in sources {
        if s <= upto {
            reach[s] = true;
        }
    }
    for i in 0..=upto {
        if reach[i] {
            continue;
        }
        let (p, n) = nodes[i].op.parents();
        reach[i] = p[..n].iter().any(|&q| reach[q]);
    }
    reach
}

fn reduce_to(g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        g
    } else {
        Tensor::filled(shape, g.data().iter().sum())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    tensor::broadcast_zip("vjp", a, b, f).expect("shapes validated on the forward pass")
}

impl Tape {
    /// Gradient of a scalar `output` with respect to each of `leaves`, by
    /// reverse accumulation. Leaves that `output` does not depend on map to
    /// zero tensors.
    pub fn backward(&self, output: Var<'_>, leaves: &[Var<'_>]) -> Result<GradientMap> {
        let nodes = self.nodes.borrow();
        let out = output.id;
        if !nodes[out].value.is_scalar() {
            return Err(Error::NotScalar(nodes[out].value.shape().to_vec()));
        }
        let sources: Vec<NodeId> = leaves.iter().map(|v| v.id).collect();
        let reach = reachable(&nodes, out, &sources);

        let mut adj: Vec<Option<Tensor>> = vec![None; out + 1];
        if reach[out] {
            adj[out] = Some(Tensor::filled(nodes[out].value.shape(), 1.0));
        }
        for id in (0..=out).rev() {
            let Some(g) = adj[id].take() else { continue };
            if matches!(nodes[id].op, Op::Leaf) {
                adj[id] = Some(g);
                continue;
            }
            let mut emit = |p: NodeId, contrib: Tensor| {
                if !reach[p] {
                    return;
                }
                match &mut adj[p] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            numeric_vjp(&nodes, id, &g, &reach, &mut emit);
        }

        let mut grads = HashMap::new();
        for leaf in leaves {
            let g = if leaf.id <= out { adj[leaf.id].clone() } else { None };
            let g = g.unwrap_or_else(|| Tensor::zeros(nodes[leaf.id].value.shape()));
            grads.insert(leaf.id, g);
        }
        Ok(GradientMap { grads })
    }

    /// Numeric gradient of a scalar `output` with respect to the leaf `input`.
    pub fn grad_wrt_input(&self, output: Var<'_>, input: Var<'_>) -> Result<Tensor> {
        if !self.is_leaf(input.id) {
            return Err(Error::NotLeaf(input.id));
        }
        let map = self.backward(output, &[input])?;
        Ok(map.by_id(input.id).cloned().expect("requested leaf present"))
    }

    /// Differentiable gradient of a scalar `output` with respect to the
    /// leaves `wrt`. The adjoint computation is recorded on this tape.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        for w in wrt {
            if !self.is_leaf(w.id) {
                return Err(Error::NotLeaf(w.id));
            }
        }
        let out = output.id;
        let out_shape = output.shape();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(out_shape));
        }
        let sources: Vec<NodeId> = wrt.iter().map(|v| v.id).collect();
        let reach = reachable(&self.nodes.borrow(), out, &sources);

        let mut adj: Vec<Option<Var<'t>>> = vec![None; out + 1];
        if reach[out] {
            adj[out] = Some(self.constant(Tensor::filled(&out_shape, 1.0)));
        }
        for id in (0..=out).rev() {
            let Some(g) = adj[id] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let contribs = symbolic_vjp(self, id, &op, g, &reach)?;
            for (p, c) in contribs {
                adj[p] = Some(match adj[p] {
                    Some(acc) => acc.add(c)?,
                    None => c,
                });
            }
        }
        wrt.iter()
            .map(|w| match adj.get(w.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Tensor::zeros(&w.shape()))),
            })
            .collect()
    }
}

fn numeric_vjp(
    nodes: &[Node],
    id: NodeId,
    g: &Tensor,
    reach: &[bool],
    emit: &mut impl FnMut(NodeId, Tensor),
) {
    let val = |i: NodeId| &nodes[i].value;
    match nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if reach[a] {
                emit(a, reduce_to(g.clone(), val(a).shape()));
            }
            if reach[b] {
                emit(b, reduce_to(g.clone(), val(b).shape()));
            }
        }
        Op::Sub(a, b) => {
            if reach[a] {
                emit(a, reduce_to(g.clone(), val(a).shape()));
            }
            if reach[b] {
                emit(b, reduce_to(g.map(|x| -x), val(b).shape()));
            }
        }
        Op::Mul(a, b) => {
            if reach[a] {
                emit(a, reduce_to(zip(g, val(b), |x, y| x * y), val(a).shape()));
            }
            if reach[b] {
                emit(b, reduce_to(zip(g, val(a), |x, y| x * y), val(b).shape()));
            }
        }
        Op::Scale(a, c) => emit(a, g.map(|x| c * x)),
        Op::AddScalar(a) => emit(a, g.clone()),
        Op::MatMul(a, b) => {
            if reach[a] {
                emit(a, tensor::matmul_nt(g, val(b)));
            }
            if reach[b] {
                emit(b, tensor::matmul_tn(val(a), g));
            }
        }
        Op::Transpose(a) => emit(a, tensor::transpose(g)),
        Op::Sum(a) => emit(a, Tensor::filled(val(a).shape(), g.data()[0])),
        Op::Expand(a) => emit(a, reduce_to(g.clone(), val(a).shape())),
        Op::SumRows(a) => emit(a, tensor::broadcast_rows(g, val(a).shape()[0])),
        Op::BroadcastRows(a) => emit(a, tensor::sum_rows(g)),
        Op::SumCols(a) => emit(a, tensor::broadcast_cols(g, val(a).shape()[1])),
        Op::BroadcastCols(a) => emit(a, tensor::sum_cols(g)),
        Op::Square(a) => emit(a, zip(g, val(a), |x, y| 2.0 * x * y)),
        Op::Abs(a) => emit(a, zip(g, val(a), |x, y| x * sign(y))),
        Op::Tanh(a) => emit(a, zip(g, val(id), |x, y| x * (1.0 - y * y))),
        Op::Sin(a) => emit(a, zip(g, val(a), |x, y| x * y.cos())),
        Op::Cos(a) => emit(a, zip(g, val(a), |x, y| -x * y.sin())),
        Op::Relu(a) => emit(a, zip(g, val(a), |x, y| if y > 0.0 { x } else { 0.0 })),
        Op::Powf(a, p) => emit(a, zip(g, val(a), |x, y| x * p * y.powf(p - 1.0))),
        Op::Reshape(a) => emit(a, g.clone().with_shape(val(a).shape())),
        Op::SliceRows(a, start) => emit(a, tensor::pad_rows(g, start, val(a).shape()[0])),
        Op::PadRows(a, start) => emit(a, tensor::slice_rows(g, start, val(a).shape()[0])),
        Op::SliceCols(a, start) => emit(a, tensor::pad_cols(g, start, val(a).shape()[1])),
        Op::PadCols(a, start) => emit(a, tensor::slice_cols(g, start, val(a).shape()[1])),
        Op::RowVecMat {
            src,
            ref mats,
            transpose,
        } => emit(src, tensor::row_vec_mat(g, mats, !transpose)),
    }
}

fn sign(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else if y < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn reduce_var<'t>(g: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
    if g.shape() == shape {
        Ok(g)
    } else {
        g.sum().reshape(shape)
    }
}

fn symbolic_vjp<'t>(
    tape: &'t Tape,
    id: NodeId,
    op: &Op,
    g: Var<'t>,
    reach: &[bool],
) -> Result<Vec<(NodeId, Var<'t>)>> {
    let var = |i: NodeId| Var { tape, id: i };
    let shape = |i: NodeId| tape.nodes.borrow()[i].value.shape().to_vec();
    let mut out = Vec::with_capacity(2);
    match *op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if reach[a] {
                out.push((a, reduce_var(g, &shape(a))?));
            }
            if reach[b] {
                out.push((b, reduce_var(g, &shape(b))?));
            }
        }
        Op::Sub(a, b) => {
            if reach[a] {
                out.push((a, reduce_var(g, &shape(a))?));
            }
            if reach[b] {
                out.push((b, reduce_var(g.neg(), &shape(b))?));
            }
        }
        Op::Mul(a, b) => {
            if reach[a] {
                out.push((a, reduce_var(g.mul(var(b))?, &shape(a))?));
            }
            if reach[b] {
                out.push((b, reduce_var(g.mul(var(a))?, &shape(b))?));
            }
        }
        Op::Scale(a, c) => out.push((a, g.scale(c))),
        Op::AddScalar(a) => out.push((a, g)),
        Op::MatMul(a, b) => {
            if reach[a] {
                out.push((a, g.matmul(var(b).t()?)?));
            }
            if reach[b] {
                out.push((b, var(a).t()?.matmul(g)?));
            }
        }
        Op::Transpose(a) => out.push((a, g.t()?)),
        Op::Sum(a) => out.push((a, g.expand(&shape(a))?)),
        Op::Expand(a) => out.push((a, reduce_var(g, &shape(a))?)),
        Op::SumRows(a) => out.push((a, g.broadcast_rows(shape(a)[0])?)),
        Op::BroadcastRows(a) => out.push((a, g.sum_rows()?)),
        Op::SumCols(a) => out.push((a, g.broadcast_cols(shape(a)[1])?)),
        Op::BroadcastCols(a) => out.push((a, g.sum_cols()?)),
        Op::Square(a) => out.push((a, g.mul(var(a).scale(2.0))?)),
        Op::Abs(a) => {
            let s = tape.value(a).map(sign);
            out.push((a, g.mul(tape.constant(s))?));
        }
        Op::Tanh(a) => {
            let dy = var(id).square().neg().add_scalar(1.0);
            out.push((a, g.mul(dy)?));
        }
        Op::Sin(a) => out.push((a, g.mul(var(a).cos())?)),
        Op::Cos(a) => out.push((a, g.mul(var(a).sin().neg())?)),
        Op::Relu(a) => {
            let mask = tape.value(a).map(|y| if y > 0.0 { 1.0 } else { 0.0 });
            out.push((a, g.mul(tape.constant(mask))?));
        }
        Op::Powf(a, p) => out.push((a, g.mul(var(a).powf(p - 1.0).scale(p))?)),
        Op::Reshape(a) => out.push((a, g.reshape(&shape(a))?)),
        Op::SliceRows(a, start) => out.push((a, g.pad_rows(start, shape(a)[0])?)),
        Op::PadRows(a, start) => out.push((a, g.slice_rows(start, shape(a)[0])?)),
        Op::SliceCols(a, start) => out.push((a, g.pad_cols(start, shape(a)[1])?)),
        Op::PadCols(a, start) => out.push((a, g.slice_cols(start, shape(a)[1])?)),
        Op::RowVecMat {
            src,
            ref mats,
            transpose,
        } => out.push((src, g.row_vec_mat(mats.clone(), !transpose)?)),
    }
    Ok(out)
}
