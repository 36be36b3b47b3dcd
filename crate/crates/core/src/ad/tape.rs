use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    Expand(NodeId),
    SumRows(NodeId),
    BroadcastRows(NodeId),
    SumCols(NodeId),
    BroadcastCols(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Tanh(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Relu(NodeId),
    Powf(NodeId, f64),
    Reshape(NodeId),
    SliceRows(NodeId, usize),
    PadRows(NodeId, usize),
    SliceCols(NodeId, usize),
    PadCols(NodeId, usize),
    RowVecMat {
        src: NodeId,
        mats: Rc<[f64]>,
        transpose: bool,
    },
}

impl Op {
    pub(crate) fn parents(&self) -> ([NodeId; 2], usize) {
        use Op::*;
        match *self {
            Leaf => ([0, 0], 0),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => ([a, b], 2),
            Scale(a, _) | AddScalar(a) | Transpose(a) | Sum(a) | Expand(a) | SumRows(a)
            | BroadcastRows(a) | SumCols(a) | BroadcastCols(a) | Square(a) | Abs(a) | Tanh(a)
            | Sin(a) | Cos(a) | Relu(a) | Powf(a, _) | Reshape(a) | SliceRows(a, _)
            | PadRows(a, _) | SliceCols(a, _) | PadCols(a, _) => ([a, 0], 1),
            RowVecMat { src, .. } => ([src, 0], 1),
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Tensor,
}

/// Append-only record of every operation evaluated through a [`Var`].
///
/// Parents always precede children, so a reverse sweep over node ids is a
/// valid topological order.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

/// Activation functions supported by the networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sin,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sin => x.sin(),
            Activation::Relu => x.max(0.0),
        }
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

    /// Records `value` as a leaf. Leaves are either differentiable inputs
    /// (parameters, network inputs) or constants, depending only on whether
    /// gradients are later requested for them.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes.borrow().get(id).map(|n| &n.op), Some(Op::Leaf))
    }

    pub(crate) fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op, value });
        Var { tape: self, id }
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            let (p, _) = op.parents();
            f(&nodes[p[0]].value)
        };
        self.push(op, value)
    }

    fn try_unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let (p, _) = op.parents();
            f(&nodes[p[0]].value)?
        };
        Ok(self.push(op, value))
    }

    fn binary(&self, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let (p, _) = op.parents();
            f(&nodes[p[0]].value, &nodes[p[1]].value)?
        };
        Ok(self.push(op, value))
    }
}

/// A handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    /// Borrow the value without copying it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn item(&self) -> Result<f64> {
        self.with_value(|t| t.item())
    }

    fn check_same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes cannot be combined"
        );
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape.binary(Op::Add(self.id, rhs.id), |a, b| {
            tensor::broadcast_zip("add", a, b, |x, y| x + y)
        })
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape.binary(Op::Sub(self.id, rhs.id), |a, b| {
            tensor::broadcast_zip("sub", a, b, |x, y| x - y)
        })
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape.binary(Op::Mul(self.id, rhs.id), |a, b| {
            tensor::broadcast_zip("mul", a, b, |x, y| x * y)
        })
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape
            .binary(Op::MatMul(self.id, rhs.id), tensor::matmul)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(Op::Scale(self.id, c), |a| a.map(|x| c * x))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape.unary(Op::AddScalar(self.id), |a| a.map(|x| x + c))
    }

    pub fn t(self) -> Result<Var<'t>> {
        self.tape.try_unary(Op::Transpose(self.id), |a| {
            a.dims2("transpose")?;
            Ok(tensor::transpose(a))
        })
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(Op::Sum(self.id), |a| Tensor::scalar(a.data().iter().sum()))
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'t>> {
        self.tape.try_unary(Op::Expand(self.id), |a| {
            if !a.is_scalar() {
                return Err(Error::Shape {
                    op: "expand",
                    lhs: a.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Ok(Tensor::filled(shape, a.data()[0]))
        })
    }

    /// `m x n -> 1 x n`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        self.tape.try_unary(Op::SumRows(self.id), |a| {
            a.dims2("sum_rows")?;
            Ok(tensor::sum_rows(a))
        })
    }

    /// `1 x n -> m x n`.
    pub fn broadcast_rows(self, m: usize) -> Result<Var<'t>> {
        self.tape.try_unary(Op::BroadcastRows(self.id), |a| {
            let (r, _) = a.dims2("broadcast_rows")?;
            if r != 1 {
                return Err(Error::Shape {
                    op: "broadcast_rows",
                    lhs: a.shape().to_vec(),
                    rhs: vec![m, a.shape()[1]],
                });
            }
            Ok(tensor::broadcast_rows(a, m))
        })
    }

    /// `m x n -> m x 1`.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        self.tape.try_unary(Op::SumCols(self.id), |a| {
            a.dims2("sum_cols")?;
            Ok(tensor::sum_cols(a))
        })
    }

    /// `m x 1 -> m x n`.
    pub fn broadcast_cols(self, n: usize) -> Result<Var<'t>> {
        self.tape.try_unary(Op::BroadcastCols(self.id), |a| {
            let (_, c) = a.dims2("broadcast_cols")?;
            if c != 1 {
                return Err(Error::Shape {
                    op: "broadcast_cols",
                    lhs: a.shape().to_vec(),
                    rhs: vec![a.shape()[0], n],
                });
            }
            Ok(tensor::broadcast_cols(a, n))
        })
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(Op::Square(self.id), |a| a.map(|x| x * x))
    }

    pub fn abs(self) -> Var<'t> {
        self.tape.unary(Op::Abs(self.id), |a| a.map(f64::abs))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.unary(Op::Sin(self.id), |a| a.map(f64::sin))
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.unary(Op::Cos(self.id), |a| a.map(f64::cos))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(Op::Relu(self.id), |a| a.map(|x| x.max(0.0)))
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.tape.unary(Op::Powf(self.id, p), |a| a.map(|x| x.powf(p)))
    }

    pub fn activation(self, kind: Activation) -> Var<'t> {
        match kind {
            Activation::Tanh => self.tanh(),
            Activation::Sin => self.sin(),
            Activation::Relu => self.relu(),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.tape.try_unary(Op::Reshape(self.id), |a| {
            if shape.iter().product::<usize>() != a.numel() {
                return Err(Error::Shape {
                    op: "reshape",
                    lhs: a.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Ok(a.clone().with_shape(shape))
        })
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        self.tape.try_unary(Op::SliceRows(self.id, start), |a| {
            let (m, _) = a.dims2("slice_rows")?;
            if start + len > m {
                return Err(Error::invalid(format!(
                    "slice_rows: rows {start}..{} out of range for shape {:?}",
                    start + len,
                    a.shape()
                )));
            }
            Ok(tensor::slice_rows(a, start, len))
        })
    }

    pub fn pad_rows(self, start: usize, total: usize) -> Result<Var<'t>> {
        self.tape.try_unary(Op::PadRows(self.id, start), |a| {
            let (m, _) = a.dims2("pad_rows")?;
            if start + m > total {
                return Err(Error::invalid("pad_rows: block does not fit"));
            }
            Ok(tensor::pad_rows(a, start, total))
        })
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        self.tape.try_unary(Op::SliceCols(self.id, start), |a| {
            let (_, n) = a.dims2("slice_cols")?;
            if start + len > n {
                return Err(Error::invalid(format!(
                    "slice_cols: cols {start}..{} out of range for shape {:?}",
                    start + len,
                    a.shape()
                )));
            }
            Ok(tensor::slice_cols(a, start, len))
        })
    }

    pub fn pad_cols(self, start: usize, total: usize) -> Result<Var<'t>> {
        self.tape.try_unary(Op::PadCols(self.id, start), |a| {
            let (_, n) = a.dims2("pad_cols")?;
            if start + n > total {
                return Err(Error::invalid("pad_cols: block does not fit"));
            }
            Ok(tensor::pad_cols(a, start, total))
        })
    }

    /// Multiplies every row `r` of an `m x d` tensor by its own constant
    /// `d x d` matrix, `mats[r * d * d..]` in row-major order.
    pub fn row_vec_mat(self, mats: Rc<[f64]>, transpose: bool) -> Result<Var<'t>> {
        let op = Op::RowVecMat {
            src: self.id,
            mats: mats.clone(),
            transpose,
        };
        self.tape.try_unary(op, |a| {
            let (m, d) = a.dims2("row_vec_mat")?;
            if mats.len() != m * d * d {
                return Err(Error::Shape {
                    op: "row_vec_mat",
                    lhs: a.shape().to_vec(),
                    rhs: vec![mats.len()],
                });
            }
            Ok(tensor::row_vec_mat(a, &mats, transpose))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::row(vec![3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);

        let v = tape.leaf(Tensor::column(vec![0.3, -1.0, 2.5]));
        let eye = tape.leaf(Tensor::identity(3));
        assert_eq!(eye.matmul(v).unwrap().value(), v.value());

        let x = tape.leaf(Tensor::row(vec![3.0, 4.0]));
        assert_eq!(x.square().sum().item().unwrap(), 25.0);
    }

    #[test]
    fn activations() {
        let tape = Tape::new();
        assert_eq!(tape.scalar(0.0).tanh().item().unwrap(), 0.0);
        assert_eq!(
            tape.scalar(std::f64::consts::FRAC_PI_2).sin().item().unwrap(),
            1.0
        );
        let r = tape.leaf(Tensor::row(vec![-1.0, 2.0])).relu();
        assert_eq!(r.value().data(), &[0.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_the_op_and_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 2]));
        let msg = a.add(b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[2, 2]"));
        let msg = a.matmul(a).unwrap_err().to_string();
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn scalar_broadcasts_against_tensors() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        let s = tape.scalar(2.0);
        assert_eq!(a.mul(s).unwrap().value().data(), &[2.0, 4.0, 6.0]);
        assert_eq!(s.sub(a).unwrap().value().data(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn repeated_evaluation_is_bitwise_identical() {
        let eval = || {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::matrix(2, 2, vec![0.1, -0.7, 1.3, 0.2]).unwrap());
            let w = tape.leaf(Tensor::matrix(2, 2, vec![0.5, 0.25, -1.5, 2.0]).unwrap());
            let y = x.matmul(w).unwrap().tanh().sin().square().sum();
            y.item().unwrap().to_bits()
        };
        assert_eq!(eval(), eval());
    }
}
