//! Reverse-mode differentiation over a tape of vector-valued nodes.
//!
//! Operations append nodes to a [`Graph`] and are evaluated eagerly; calling
//! [`Graph::backward`] on a scalar node then fills in adjoints for every node
//! by a single reverse sweep. This is the differentiation mechanism behind
//! the training objective: gradients are exact partial derivatives of the
//! recorded computation, with all stochastic draws entering as fixed leaves.

use crate::error::{Error, Result};

/// Index of a node on the tape.
pub type NodeId = usize;

/// Elementwise unary operations.
#[derive(Debug, Clone, Copy)]
pub enum Unary {
    Relu,
    LeakyRelu(f64),
    Selu,
    Sigmoid,
    Exp,
    Square,
    Neg,
    Clamp(f64, f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `y = W x + b`; `w` is row-major `out×in`.
    Affine { w: NodeId, b: NodeId, x: NodeId },
    Unary { kind: Unary, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Offset { x: NodeId },
    Concat { parts: Vec<NodeId> },
    Slice { x: NodeId, start: usize },
    Sum { x: NodeId },
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Tape of eagerly evaluated vector nodes.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    adjoints: Vec<Vec<f64>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current tape position, for later [`rewind`](Graph::rewind).
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node added after `mark`. Adjoints are invalidated.
    pub fn rewind(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.adjoints.clear();
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.adjoints.clear();
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    /// Scalar value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// Adds an input node. Leaves receive adjoints but propagate nothing.
    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> NodeId {
        self.leaf(vec![value])
    }

    /// `W x + b` with `W` row-major `(b.len() × x.len())`.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> NodeId {
        let out = self.nodes[b].value.len();
        let inp = self.nodes[x].value.len();
        assert_eq!(
            self.nodes[w].value.len(),
            out * inp,
            "affine weight length {} does not match {out}x{inp}",
            self.nodes[w].value.len()
        );
        let mut value = Vec::with_capacity(out);
        {
            let wv = &self.nodes[w].value;
            let bv = &self.nodes[b].value;
            let xv = &self.nodes[x].value;
            for o in 0..out {
                let row = &wv[o * inp..(o + 1) * inp];
                let mut acc = bv[o];
                for (wi, xi) in row.iter().zip(xv) {
                    acc += wi * xi;
                }
                value.push(acc);
            }
        }
        self.push(Op::Affine { w, b, x }, value)
    }

    pub fn unary(&mut self, kind: Unary, x: NodeId) -> NodeId {
        let value = self.nodes[x]
            .value
            .iter()
            .map(|&v| match kind {
                Unary::Relu => v.max(0.0),
                Unary::LeakyRelu(s) => {
                    if v >= 0.0 {
                        v
                    } else {
                        s * v
                    }
                }
                Unary::Selu => super::mlp::selu(v),
                Unary::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                Unary::Exp => v.exp(),
                Unary::Square => v * v,
                Unary::Neg => -v,
                Unary::Clamp(lo, hi) => v.clamp(lo, hi),
            })
            .collect();
        self.push(Op::Unary { kind, x }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add { a, b }, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub { a, b }, value)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul { a, b }, value)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.nodes[x].value.iter().map(|&v| c * v).collect();
        self.push(Op::Scale { x, c }, value)
    }

    pub fn offset(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.nodes[x].value.iter().map(|&v| v + c).collect();
        self.push(Op::Offset { x }, value)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(&self.nodes[p].value);
        }
        self.push(Op::Concat { parts: parts.to_vec() }, value)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        assert!(start + len <= self.nodes[x].value.len(), "slice out of range");
        let value = self.nodes[x].value[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, value)
    }

    /// Sum of all elements, as a length-1 node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = vec![self.nodes[x].value.iter().sum()];
        self.push(Op::Sum { x }, value)
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        assert_eq!(av.len(), bv.len(), "elementwise op on mismatched lengths");
        av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
    }

    /// Checks that a node's value is finite, naming `what` on failure.
    pub fn ensure_finite(&self, id: NodeId, what: &str) -> Result<()> {
        if self.nodes[id].value.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value in {what}")))
        }
    }

    /// Reverse sweep from a scalar root; fills adjoints for every node.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.nodes[root].value.len(), 1, "backward root must be scalar");
        self.adjoints.clear();
        self.adjoints
            .extend(self.nodes.iter().map(|n| vec![0.0; n.value.len()]));
        self.adjoints[root][0] = 1.0;

        for id in (0..=root).rev() {
            if self.adjoints[id].iter().all(|&a| a == 0.0) {
                continue;
            }
            // Take the node's adjoint out to satisfy the borrow checker while
            // accumulating into input adjoints.
            let grad = std::mem::take(&mut self.adjoints[id]);
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Affine { w, b, x } => {
                    let (w, b, x) = (*w, *b, *x);
                    let inp = self.nodes[x].value.len();
                    for (o, &g) in grad.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        self.adjoints[b][o] += g;
                        let row = o * inp;
                        for i in 0..inp {
                            self.adjoints[w][row + i] += g * self.nodes[x].value[i];
                            self.adjoints[x][i] += g * self.nodes[w].value[row + i];
                        }
                    }
                }
                Op::Unary { kind, x } => {
                    let (kind, x) = (*kind, *x);
                    for (i, &g) in grad.iter().enumerate() {
                        let xin = self.nodes[x].value[i];
                        let yout = self.nodes[id].value[i];
                        let d = match kind {
                            Unary::Relu => {
                                if xin > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::LeakyRelu(s) => {
                                if xin >= 0.0 {
                                    1.0
                                } else {
                                    s
                                }
                            }
                            Unary::Selu => {
                                if xin > 0.0 {
                                    super::mlp::SELU_LAMBDA
                                } else {
                                    super::mlp::SELU_LAMBDA
                                        * super::mlp::SELU_ALPHA
                                        * xin.exp()
                                }
                            }
                            Unary::Sigmoid => yout * (1.0 - yout),
                            Unary::Exp => yout,
                            Unary::Square => 2.0 * xin,
                            Unary::Neg => -1.0,
                            Unary::Clamp(lo, hi) => {
                                if xin > lo && xin < hi {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        self.adjoints[x][i] += g * d;
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (i, &g) in grad.iter().enumerate() {
                        self.adjoints[a][i] += g;
                        self.adjoints[b][i] += g;
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    for (i, &g) in grad.iter().enumerate() {
                        self.adjoints[a][i] += g;
                        self.adjoints[b][i] -= g;
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    for (i, &g) in grad.iter().enumerate() {
                        self.adjoints[a][i] += g * self.nodes[b].value[i];
                        self.adjoints[b][i] += g * self.nodes[a].value[i];
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    for (i, &g) in grad.iter().enumerate() {
                        self.adjoints[x][i] += g * c;
                    }
                }
                Op::Offset { x } => {
                    let x = *x;
                    for (i, &g) in grad.iter().enumerate() {
                        self.adjoints[x][i] += g;
                    }
                }
                Op::Concat { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p].value.len();
                        for i in 0..len {
                            self.adjoints[p][i] += grad[offset + i];
                        }
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let (x, start) = (*x, *start);
                    for (i, &g) in grad.iter().enumerate() {
                        self.adjoints[x][start + i] += g;
                    }
                }
                Op::Sum { x } => {
                    let x = *x;
                    let g = grad[0];
                    for a in self.adjoints[x].iter_mut() {
                        *a += g;
                    }
                }
            }
            self.adjoints[id] = grad;
        }
    }

    /// Adjoint of `id` after [`backward`](Graph::backward).
    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        &self.adjoints[id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_gradient() {
        // p -> p^2 at p=3 has gradient 6
        let mut g = Graph::new();
        let p = g.scalar_leaf(3.0);
        let y = g.unary(Unary::Square, p);
        g.backward(y);
        assert_eq!(g.adjoint(p), &[6.0]);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let mut g = Graph::new();
        let p = g.leaf(vec![1.0, -2.0, 0.5]);
        let c = g.leaf(vec![7.0]);
        let y = g.sum(c);
        g.backward(y);
        assert_eq!(g.adjoint(p), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn chain_through_affine_and_sigmoid() {
        // y = sum(sigmoid(W x + b)); checked against hand derivative for 1x1.
        let mut g = Graph::new();
        let w = g.leaf(vec![2.0]);
        let b = g.leaf(vec![-1.0]);
        let x = g.leaf(vec![0.5]);
        let lin = g.affine(w, b, x);
        let s = g.unary(Unary::Sigmoid, lin);
        let y = g.sum(s);
        g.backward(y);
        // lin = 2*0.5 - 1 = 0, sigmoid(0) = 0.5
        assert_relative_eq!(g.scalar(s), 0.5, epsilon = 1e-12);
        let ds = 0.25;
        assert_relative_eq!(g.adjoint(w)[0], ds * 0.5, epsilon = 1e-12);
        assert_relative_eq!(g.adjoint(b)[0], ds, epsilon = 1e-12);
        assert_relative_eq!(g.adjoint(x)[0], ds * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn slice_and_concat_route_adjoints() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0]);
        let lo = g.slice(x, 0, 2);
        let hi = g.slice(x, 2, 2);
        let swapped = g.concat(&[hi, lo]);
        let doubled = g.scale(swapped, 2.0);
        let y = g.sum(doubled);
        g.backward(y);
        assert_eq!(g.adjoint(x), &[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(g.value(swapped), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn rewind_drops_new_nodes() {
        let mut g = Graph::new();
        let a = g.leaf(vec![1.0]);
        let mark = g.mark();
        let b = g.unary(Unary::Exp, a);
        assert_eq!(g.len(), 2);
        let _ = b;
        g.rewind(mark);
        assert_eq!(g.len(), 1);
        let c = g.unary(Unary::Neg, a);
        assert_eq!(g.value(c), &[-1.0]);
    }

    #[test]
    fn mul_sub_offset_gradients() {
        // y = sum((a-b) * a + 3): dy/da = 2a - b, dy/db = -a
        let mut g = Graph::new();
        let a = g.leaf(vec![2.0, -1.0]);
        let b = g.leaf(vec![0.5, 4.0]);
        let d = g.sub(a, b);
        let m = g.mul(d, a);
        let o = g.offset(m, 3.0);
        let y = g.sum(o);
        g.backward(y);
        assert_eq!(g.adjoint(a), &[3.5, -6.0]);
        assert_eq!(g.adjoint(b), &[-2.0, 1.0]);
    }
}
