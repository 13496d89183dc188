//! Scalar reverse-mode automatic differentiation.
//!
//! Every numeric routine that participates in training is written against the
//! [`Scalar`] trait, so the same code runs on plain `f64` (inference, finite
//! difference oracles) and on [`Var`] (recorded onto a [`Tape`] for the
//! backward pass). Constants never touch the tape: a `Var` without a slot is
//! just a number, and operations between constants fold eagerly.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the model code.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    /// True only for zeros that carry no derivative, which products may skip.
    fn is_constant_zero(self) -> bool;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn relu(self) -> Self {
        if self.value() > 0.0 {
            self
        } else {
            Self::zero()
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn constant(value: f64) -> Self {
        value
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn is_constant_zero(self) -> bool {
        self == 0.0
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    lhs: u32,
    rhs: u32,
    d_lhs: f64,
    d_rhs: f64,
}

/// Wengert list of recorded operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            lhs: NONE,
            rhs: NONE,
            d_lhs: 0.0,
            d_rhs: 0.0,
        });
        Var {
            value,
            slot: Some((self, idx)),
        }
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(node);
        idx
    }

    /// Adjoints of `output` with respect to every recorded node.
    pub fn gradient(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        let Some((tape, root)) = output.slot else {
            return Gradients { adjoint };
        };
        debug_assert!(std::ptr::eq(tape, self), "output recorded on another tape");
        adjoint[root as usize] = 1.0;
        for i in (0..=root as usize).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            if node.lhs != NONE {
                adjoint[node.lhs as usize] += a * node.d_lhs;
            }
            if node.rhs != NONE {
                adjoint[node.rhs as usize] += a * node.d_rhs;
            }
        }
        Gradients { adjoint }
    }
}

pub struct Gradients {
    adjoint: Vec<f64>,
}

impl Gradients {
    /// Derivative of the output with respect to `var`; zero for constants.
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        match var.slot {
            Some((_, idx)) => self.adjoint[idx as usize],
            None => 0.0,
        }
    }
}

/// A value that may be recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    value: f64,
    slot: Option<(&'t Tape, u32)>,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some((_, idx)) => write!(f, "Var({} @{})", self.value, idx),
            None => write!(f, "Const({})", self.value),
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.slot.is_none()
    }

    fn unary(self, value: f64, d: f64) -> Self {
        match self.slot {
            None => Var { value, slot: None },
            Some((tape, idx)) => Var {
                value,
                slot: Some((
                    tape,
                    tape.push(Node {
                        lhs: idx,
                        rhs: NONE,
                        d_lhs: d,
                        d_rhs: 0.0,
                    }),
                )),
            },
        }
    }

    fn binary(self, other: Self, value: f64, d_self: f64, d_other: f64) -> Self {
        match (self.slot, other.slot) {
            (None, None) => Var { value, slot: None },
            (Some(_), None) => self.unary(value, d_self),
            (None, Some(_)) => other.unary(value, d_other),
            (Some((tape, a)), Some((other_tape, b))) => {
                debug_assert!(std::ptr::eq(tape, other_tape), "mixing tapes");
                Var {
                    value,
                    slot: Some((
                        tape,
                        tape.push(Node {
                            lhs: a,
                            rhs: b,
                            d_lhs: d_self,
                            d_rhs: d_other,
                        }),
                    )),
                }
            }
        }
    }
}

impl Scalar for Var<'_> {
    fn constant(value: f64) -> Self {
        Var { value, slot: None }
    }
    fn value(self) -> f64 {
        self.value
    }
    fn is_constant_zero(self) -> bool {
        self.slot.is_none() && self.value == 0.0
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = tape.var(-2.0);
        let z = x * y + x * 2.0;
        let g = tape.gradient(z);
        assert_eq!(z.value(), -6.0 + 6.0);
        assert_eq!(g.wrt(x), -2.0 + 2.0);
        assert_eq!(g.wrt(y), 3.0);
    }

    #[test]
    fn quotient_exp_ln() {
        let tape = Tape::new();
        let x = tape.var(0.5);
        let z = (x.exp() / (x + 1.0)).ln();
        let g = tape.gradient(z);
        // d/dx [x - ln(x+1)] = 1 - 1/(x+1)
        assert!((g.wrt(x) - (1.0 - 1.0 / 1.5)).abs() < 1e-15);
    }

    #[test]
    fn constants_do_not_record() {
        let tape = Tape::new();
        let a = Var::constant(2.0);
        let b = Var::constant(5.0);
        let c = a * b - a / b + (-a);
        assert!(c.is_constant());
        assert!(tape.is_empty());
        assert_eq!(c.value(), 10.0 - 0.4 - 2.0);
    }

    #[test]
    fn reused_node_accumulates() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = x * x * x;
        assert_eq!(tape.gradient(y).wrt(x), 12.0);
    }

    #[test]
    fn relu_passes_or_blocks() {
        let tape = Tape::new();
        let x = tape.var(1.5);
        let n = tape.var(-1.5);
        let out = x.relu() + n.relu();
        let g = tape.gradient(out);
        assert_eq!(g.wrt(x), 1.0);
        assert_eq!(g.wrt(n), 0.0);
    }
}
