use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::Float;

use super::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Constant,
    Input,
    Parameter,
    Add(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Recip(usize),
    Powf(usize, f64),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Tanh(usize),
    Sigmoid(usize),
    Sum(Vec<usize>),
    Dot(Vec<usize>, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: f64,
}

/// An append-only expression graph of scalar nodes.
///
/// Nodes only reference earlier nodes, so the graph is acyclic by
/// construction and the node order is a valid topological order. Every node
/// produces one scalar, which makes any [`Var`] a valid root for [`Graph::grad`].
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    index: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("index", &self.index)
            .field("value", &self.value())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            graph: self,
            index: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Constant, value)
    }

    pub fn input(&self, value: f64) -> Var<'_> {
        self.push(Op::Input, value)
    }

    pub fn parameter(&self, value: f64) -> Var<'_> {
        self.push(Op::Parameter, value)
    }

    /// A single node summing all of `xs`.
    pub fn sum<'g>(&'g self, xs: &[Var<'g>]) -> Var<'g> {
        let value = xs.iter().map(Var::value).sum();
        self.push(Op::Sum(xs.iter().map(|x| x.index).collect()), value)
    }

    /// A single node holding the inner product of `a` and `b`.
    ///
    /// # Panics
    /// If the slices differ in length.
    pub fn dot<'g>(&'g self, a: &[Var<'g>], b: &[Var<'g>]) -> Var<'g> {
        assert_eq!(a.len(), b.len(), "dot of unequal lengths");
        let value = a.iter().zip(b).map(|(x, y)| x.value() * y.value()).sum();
        self.push(
            Op::Dot(
                a.iter().map(|x| x.index).collect(),
                b.iter().map(|x| x.index).collect(),
            ),
            value,
        )
    }

    /// Overwrites the value of an input or parameter node. Call
    /// [`Graph::recompute`] afterwards to refresh dependent nodes.
    ///
    /// # Panics
    /// If `leaf` is not an input or parameter node.
    pub fn set_leaf(&self, leaf: Var<'_>, value: f64) {
        let mut nodes = self.nodes.borrow_mut();
        let node = &mut nodes[leaf.index];
        assert!(
            matches!(node.op, Op::Input | Op::Parameter),
            "set_leaf on an interior node"
        );
        node.value = value;
    }

    /// Re-evaluates every interior node from the current leaf values.
    pub fn recompute(&self) {
        let mut nodes = self.nodes.borrow_mut();
        for i in 0..nodes.len() {
            let v = |j: usize| nodes[j].value;
            let value = match &nodes[i].op {
                Op::Constant | Op::Input | Op::Parameter => continue,
                Op::Add(a, b) => v(*a) + v(*b),
                Op::Mul(a, b) => v(*a) * v(*b),
                Op::Neg(a) => -v(*a),
                Op::Recip(a) => 1.0 / v(*a),
                Op::Powf(a, c) => Float::powf(v(*a), *c),
                Op::Exp(a) => Float::exp(v(*a)),
                Op::Log(a) => Float::ln(v(*a)),
                Op::Sin(a) => Float::sin(v(*a)),
                Op::Tanh(a) => Float::tanh(v(*a)),
                Op::Sigmoid(a) => sigmoid(v(*a)),
                Op::Sum(xs) => xs.iter().map(|&x| v(x)).sum(),
                Op::Dot(xs, ys) => xs.iter().zip(ys).map(|(&x, &y)| v(x) * v(y)).sum(),
            };
            nodes[i].value = value;
        }
    }

    /// Reverse accumulation of `d root / d p` for every `p` in `wrt`.
    ///
    /// Variables created after `root` (and so unable to influence it)
    /// receive a zero gradient. NaN primals propagate into the result.
    pub fn grad(&self, root: Var<'_>, wrt: &[Var<'_>]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; root.index + 1];
        adj[root.index] = 1.0;
        for i in (0..=root.index).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let v = |j: usize| nodes[j].value;
            match &nodes[i].op {
                Op::Constant | Op::Input | Op::Parameter => {}
                Op::Add(a, b) => {
                    adj[*a] += g;
                    adj[*b] += g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (v(*a), v(*b));
                    adj[*a] += g * vb;
                    adj[*b] += g * va;
                }
                Op::Neg(a) => adj[*a] -= g,
                Op::Recip(a) => {
                    let r = nodes[i].value;
                    adj[*a] -= g * r * r;
                }
                Op::Powf(a, c) => adj[*a] += g * c * Float::powf(v(*a), c - 1.0),
                Op::Exp(a) => adj[*a] += g * nodes[i].value,
                Op::Log(a) => adj[*a] += g / v(*a),
                Op::Sin(a) => adj[*a] += g * Float::cos(v(*a)),
                Op::Tanh(a) => {
                    let t = nodes[i].value;
                    adj[*a] += g * (1.0 - t * t);
                }
                Op::Sigmoid(a) => {
                    let s = nodes[i].value;
                    adj[*a] += g * s * (1.0 - s);
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        adj[x] += g;
                    }
                }
                Op::Dot(xs, ys) => {
                    for (&x, &y) in xs.iter().zip(ys) {
                        let (vx, vy) = (v(x), v(y));
                        adj[x] += g * vy;
                        adj[y] += g * vx;
                    }
                }
            }
        }
        wrt.iter()
            .map(|p| adj.get(p.index).copied().unwrap_or(0.0))
            .collect()
    }
}

impl<'g> Var<'g> {
    pub fn value(&self) -> f64 {
        self.graph.nodes.borrow()[self.index].value
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    fn unary(self, op: Op, value: f64) -> Self {
        self.graph.push(op, value)
    }

    fn same_graph(&self, other: &Var<'g>) {
        debug_assert!(
            core::ptr::eq(self.graph, other.graph),
            "mixing nodes of different graphs"
        );
    }
}

impl<'g> Add for Var<'g> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.same_graph(&rhs);
        self.graph
            .push(Op::Add(self.index, rhs.index), self.value() + rhs.value())
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.same_graph(&rhs);
        self.graph
            .push(Op::Mul(self.index, rhs.index), self.value() * rhs.value())
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Op::Neg(self.index), -self.value())
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<'g> Div for Var<'g> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<'g> Scalar for Var<'g> {
    fn lift(&self, c: f64) -> Self {
        self.graph.constant(c)
    }
    fn value(&self) -> f64 {
        Var::value(self)
    }
    fn recip(self) -> Self {
        self.unary(Op::Recip(self.index), 1.0 / self.value())
    }
    fn powf(self, exponent: f64) -> Self {
        self.unary(Op::Powf(self.index, exponent), Float::powf(self.value(), exponent))
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp(self.index), Float::exp(self.value()))
    }
    fn ln(self) -> Self {
        self.unary(Op::Log(self.index), Float::ln(self.value()))
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin(self.index), Float::sin(self.value()))
    }
    fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.index), Float::tanh(self.value()))
    }
    fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid(self.index), sigmoid(self.value()))
    }
}
