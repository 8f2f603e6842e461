//! Tape-based reverse-mode automatic differentiation over scalar graphs.
//!
//! Every node stores its value and the local partial derivatives with respect
//! to its inputs, computed eagerly during the forward pass. A single reverse
//! sweep then accumulates adjoints.
//!
//! ```
//! use sievelab::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = tape.mul(x, x);
//! let grad = tape.gradient(y);
//! assert_eq!(tape.value(y), 9.0);
//! assert_eq!(grad[x.index()], 6.0);
//! ```

use crate::{log_sigmoid, sigmoid};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Unary { a: u32, da: f64 },
    Binary { a: u32, da: f64, b: u32, db: f64 },
    /// Inputs and partials live in `Tape::args[start..start + len]`.
    Nary { start: u32, len: u32 },
}

#[derive(Default, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<f64>,
    args: Vec<(u32, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, args: usize) -> Self {
        Self {
            ops: Vec::with_capacity(nodes),
            values: Vec::with_capacity(nodes),
            args: Vec::with_capacity(args),
        }
    }

    /// Drops all nodes, keeping allocations.
    pub fn clear(&mut self) {
        self.ops.clear();
        self.values.clear();
        self.args.clear();
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: f64) -> Var {
        let id = self.ops.len() as u32;
        self.ops.push(op);
        self.values.push(value);
        Var(id)
    }

    /// Input variable. Constants are also leaves; their adjoint is ignored.
    pub fn var(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, value)
    }

    #[inline]
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn unary(&mut self, a: Var, value: f64, da: f64) -> Var {
        self.push(Op::Unary { a: a.0, da }, value)
    }

    pub fn binary(&mut self, a: Var, b: Var, value: f64, da: f64, db: f64) -> Var {
        self.push(
            Op::Binary {
                a: a.0,
                da,
                b: b.0,
                db,
            },
            value,
        )
    }

    /// Node with an arbitrary number of inputs and given local partials.
    pub fn nary(&mut self, value: f64, inputs: impl IntoIterator<Item = (Var, f64)>) -> Var {
        let start = self.args.len();
        self.args.extend(inputs.into_iter().map(|(v, d)| (v.0, d)));
        let len = self.args.len() - start;
        self.push(
            Op::Nary {
                start: start as u32,
                len: len as u32,
            },
            value,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, 1.0, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, 1.0, -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.binary(a, b, x * y, y, x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.unary(a, v, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.unary(a, v, c)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.unary(a, v, 1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.unary(a, v, v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(a, x.ln(), 1.0 / x)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(a, x * x, 2.0 * x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let s = sigmoid(self.value(a));
        self.unary(a, s, s * (1.0 - s))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(a, log_sigmoid(x), sigmoid(-x))
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|&x| self.value(x)).sum();
        self.nary(v, xs.iter().map(|&x| (x, 1.0)))
    }

    /// `Σ cᵢ xᵢ`.
    pub fn linear(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|&(x, c)| c * self.value(x)).sum();
        self.nary(v, terms.iter().copied())
    }

    /// Soft-label Bernoulli log-likelihood in logit form:
    /// `z ln σ(x) + (1 − z) ln σ(−x)`, with derivative `z − σ(x)`.
    pub fn soft_bernoulli_logit(&mut self, logit: Var, z: f64) -> Var {
        let x = self.value(logit);
        let v = z * log_sigmoid(x) + (1.0 - z) * log_sigmoid(-x);
        self.unary(logit, v, z - sigmoid(x))
    }

    /// Adjoints of every node with respect to `output`.
    pub fn gradient(&self, output: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.ops.len()];
        self.backward_into(output, &mut adj);
        adj
    }

    /// Like [`Tape::gradient`] but reuses `adj`, which is resized and zeroed.
    pub fn backward_into(&self, output: Var, adj: &mut Vec<f64>) {
        adj.clear();
        adj.resize(self.ops.len(), 0.0);
        adj[output.index()] = 1.0;
        for i in (0..=output.index()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Leaf => {}
                Op::Unary { a, da } => adj[a as usize] += g * da,
                Op::Binary { a, da, b, db } => {
                    adj[a as usize] += g * da;
                    adj[b as usize] += g * db;
                }
                Op::Nary { start, len } => {
                    let s = start as usize;
                    for &(a, d) in &self.args[s..s + len as usize] {
                        adj[a as usize] += g * d;
                    }
                }
            }
        }
    }
}
