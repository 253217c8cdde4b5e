//! Expression trees over a fixed variable space.
//!
//! An [`Expression`] is an immutable tree of 64-bit float literals,
//! variables (`x1..xn`, `t`, `w1..wm`), the unary functions
//! `exp, log, sin, cos, sqrt, neg` and the binary operations
//! `+ - * / ^`. Trees are shared through `Arc`, so cloning is cheap and
//! expressions can move freely across worker threads.
//!
//! Simplification is a terminating rewrite pass, not a canonical form:
//! equality of values is decided by sampled evaluation, never by syntax.

mod diff;
mod eval;
mod integrate;
mod parse;
mod print;
mod simplify;

pub use eval::{CompiledExpr, EvalStack};
pub use integrate::integrate_rule_based;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::Arc;

/// A variable of the expression language.
///
/// Indices are zero-based internally; the printed names are one-based
/// (`State(0)` is `x1`, `Noise(1)` is `w2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    State(usize),
    Time,
    Noise(usize),
}

impl std::fmt::Display for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Var::State(i) => write!(f, "x{}", i + 1),
            Var::Time => write!(f, "t"),
            Var::Noise(k) => write!(f, "w{}", k + 1),
        }
    }
}

/// Declares how many state variables and noise variables are in scope.
///
/// Every parse and every evaluation happens relative to one of these;
/// names outside the space are rejected at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableSpace {
    pub n: usize,
    pub m: usize,
}

impl VariableSpace {
    pub fn new(n: usize, m: usize) -> Self {
        VariableSpace { n, m }
    }

    /// Total number of scalar slots: states, time, noises.
    pub fn dim(&self) -> usize {
        self.n + 1 + self.m
    }

    /// Flat slot index used by compiled evaluation: `x1..xn, t, w1..wm`.
    pub fn slot(&self, v: Var) -> usize {
        match v {
            Var::State(i) => i,
            Var::Time => self.n,
            Var::Noise(k) => self.n + 1 + k,
        }
    }

    pub fn contains(&self, v: Var) -> bool {
        match v {
            Var::State(i) => i < self.n,
            Var::Time => true,
            Var::Noise(k) => k < self.m,
        }
    }

    /// Maps an identifier like `x2`, `t`, `w1` to a variable of this space.
    pub fn lookup(&self, name: &str) -> Option<Var> {
        if name == "t" {
            return Some(Var::Time);
        }
        let (head, digits) = name.split_at(1);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        // reject leading zeros: x01 is not a variable name
        if digits.starts_with('0') {
            return None;
        }
        let idx: usize = digits.parse().ok()?;
        let v = match head {
            "x" => Var::State(idx - 1),
            "w" => Var::Noise(idx - 1),
            _ => return None,
        };
        self.contains(v).then_some(v)
    }

    /// All variables of the space in slot order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.n)
            .map(Var::State)
            .chain(std::iter::once(Var::Time))
            .chain((0..self.m).map(Var::Noise))
    }
}

/// A point of the extended state space (states, time, noise values).
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: Vec<f64>,
    pub t: f64,
    pub w: Vec<f64>,
}

impl Point {
    pub fn new(x: Vec<f64>, t: f64, w: Vec<f64>) -> Self {
        Point { x, t, w }
    }

    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::State(i) => self.x[i],
            Var::Time => self.t,
            Var::Noise(k) => self.w[k],
        }
    }

    /// Writes the point into a flat slot buffer (`x.., t, w..`).
    pub fn write_flat(&self, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(&self.x);
        buf.push(self.t);
        buf.extend_from_slice(&self.w);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnOp {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl UnOp {
    pub fn name(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Exp => "exp",
            UnOp::Log => "log",
            UnOp::Sin => "sin",
            UnOp::Cos => "cos",
            UnOp::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// One node of an expression tree.
#[derive(Debug)]
pub enum Node {
    Num(f64),
    Var(Var),
    Un(UnOp, Expression),
    Bin(BinOp, Expression, Expression),
}

/// An immutable, cheaply clonable expression.
#[derive(Clone)]
pub struct Expression(Arc<Node>);

impl std::fmt::Debug for Expression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self}")
    }
}

impl Expression {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn num(v: f64) -> Self {
        Expression(Arc::new(Node::Num(v)))
    }

    pub fn var(v: Var) -> Self {
        Expression(Arc::new(Node::Var(v)))
    }

    pub fn state(i: usize) -> Self {
        Self::var(Var::State(i))
    }

    pub fn time() -> Self {
        Self::var(Var::Time)
    }

    pub fn noise(k: usize) -> Self {
        Self::var(Var::Noise(k))
    }

    pub fn zero() -> Self {
        Self::num(0.0)
    }

    pub fn one() -> Self {
        Self::num(1.0)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self.node() {
            Node::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_num() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_num() == Some(1.0)
    }

    fn un(op: UnOp, a: Expression) -> Self {
        Expression(Arc::new(Node::Un(op, a)))
    }

    fn bin(op: BinOp, a: Expression, b: Expression) -> Self {
        Expression(Arc::new(Node::Bin(op, a, b)))
    }

    /// `a + b` with constant folding and zero elision.
    pub fn add(a: Expression, b: Expression) -> Self {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Self::num(x + y),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => Self::bin(BinOp::Add, a, b),
        }
    }

    /// `a - b` with constant folding and zero elision.
    pub fn sub(a: Expression, b: Expression) -> Self {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Self::num(x - y),
            (_, Some(0.0)) => a,
            (Some(0.0), _) => Self::neg(b),
            _ => Self::bin(BinOp::Sub, a, b),
        }
    }

    /// `a * b` with constant folding, zero and one elision.
    pub fn mul(a: Expression, b: Expression) -> Self {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Self::num(x * y),
            (Some(0.0), _) | (_, Some(0.0)) => Self::zero(),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            _ => Self::bin(BinOp::Mul, a, b),
        }
    }

    /// `a / b` with constant folding and one elision.
    pub fn div(a: Expression, b: Expression) -> Self {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) if y != 0.0 => Self::num(x / y),
            (Some(0.0), _) => Self::zero(),
            (_, Some(1.0)) => a,
            _ => Self::bin(BinOp::Div, a, b),
        }
    }

    /// `a ^ b`; numeric bases fold only for integer exponents so printed
    /// forms like `2^0.5` stay exact.
    pub fn pow(a: Expression, b: Expression) -> Self {
        match (a.as_num(), b.as_num()) {
            (_, Some(0.0)) => Self::one(),
            (_, Some(1.0)) => a,
            (Some(1.0), _) => Self::one(),
            (Some(x), Some(y)) if y.fract() == 0.0 && x.powf(y).is_finite() => {
                Self::num(x.powf(y))
            }
            _ => Self::bin(BinOp::Pow, a, b),
        }
    }

    pub fn neg(a: Expression) -> Self {
        match a.node() {
            Node::Num(v) => Self::num(-v),
            Node::Un(UnOp::Neg, inner) => inner.clone(),
            _ => Self::un(UnOp::Neg, a),
        }
    }

    pub fn exp(a: Expression) -> Self {
        if a.is_zero() {
            return Self::one();
        }
        Self::un(UnOp::Exp, a)
    }

    pub fn log(a: Expression) -> Self {
        if a.is_one() {
            return Self::zero();
        }
        Self::un(UnOp::Log, a)
    }

    pub fn sin(a: Expression) -> Self {
        if a.is_zero() {
            return Self::zero();
        }
        Self::un(UnOp::Sin, a)
    }

    pub fn cos(a: Expression) -> Self {
        if a.is_zero() {
            return Self::one();
        }
        Self::un(UnOp::Cos, a)
    }

    pub fn sqrt(a: Expression) -> Self {
        match a.as_num() {
            Some(0.0) => Self::zero(),
            Some(1.0) => Self::one(),
            _ => Self::un(UnOp::Sqrt, a),
        }
    }

    /// Applies a unary operation by tag; used by the parser and rewriters.
    pub fn apply_un(op: UnOp, a: Expression) -> Self {
        match op {
            UnOp::Neg => Self::neg(a),
            UnOp::Exp => Self::exp(a),
            UnOp::Log => Self::log(a),
            UnOp::Sin => Self::sin(a),
            UnOp::Cos => Self::cos(a),
            UnOp::Sqrt => Self::sqrt(a),
        }
    }

    /// Applies a binary operation by tag.
    pub fn apply_bin(op: BinOp, a: Expression, b: Expression) -> Self {
        match op {
            BinOp::Add => Self::add(a, b),
            BinOp::Sub => Self::sub(a, b),
            BinOp::Mul => Self::mul(a, b),
            BinOp::Div => Self::div(a, b),
            BinOp::Pow => Self::pow(a, b),
        }
    }

    /// True if `v` occurs anywhere in the tree.
    pub fn depends_on(&self, v: Var) -> bool {
        match self.node() {
            Node::Num(_) => false,
            Node::Var(u) => *u == v,
            Node::Un(_, a) => a.depends_on(v),
            Node::Bin(_, a, b) => a.depends_on(v) || b.depends_on(v),
        }
    }

    /// True if any noise variable occurs in the tree.
    pub fn has_noise(&self) -> bool {
        match self.node() {
            Node::Num(_) => false,
            Node::Var(u) => matches!(u, Var::Noise(_)),
            Node::Un(_, a) => a.has_noise(),
            Node::Bin(_, a, b) => a.has_noise() || b.has_noise(),
        }
    }

    /// Collects every variable occurring in the tree.
    pub fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self.node() {
            Node::Num(_) => {}
            Node::Var(u) => {
                out.insert(*u);
            }
            Node::Un(_, a) => a.collect_vars(out),
            Node::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Replaces every occurrence of `v` by `repl`, folding constants as the
    /// tree is rebuilt.
    pub fn substitute(&self, v: Var, repl: &Expression) -> Expression {
        match self.node() {
            Node::Num(_) => self.clone(),
            Node::Var(u) => {
                if *u == v {
                    repl.clone()
                } else {
                    self.clone()
                }
            }
            Node::Un(op, a) => {
                if !self.depends_on(v) {
                    return self.clone();
                }
                Self::apply_un(*op, a.substitute(v, repl))
            }
            Node::Bin(op, a, b) => {
                if !self.depends_on(v) {
                    return self.clone();
                }
                Self::apply_bin(*op, a.substitute(v, repl), b.substitute(v, repl))
            }
        }
    }

    /// Replaces every state variable simultaneously: `x_i` becomes
    /// `repls[i]`. One pass, so replacement expressions may themselves
    /// mention state variables (of their own frame) without colliding.
    pub fn substitute_states(&self, repls: &[Expression]) -> Expression {
        match self.node() {
            Node::Num(_) => self.clone(),
            Node::Var(Var::State(i)) => repls[*i].clone(),
            Node::Var(_) => self.clone(),
            Node::Un(op, a) => Self::apply_un(*op, a.substitute_states(repls)),
            Node::Bin(op, a, b) => Self::apply_bin(
                *op,
                a.substitute_states(repls),
                b.substitute_states(repls),
            ),
        }
    }

    /// Renames variables wholesale via a mapping function.
    ///
    /// Used when a system changes coordinates: the new expression is over
    /// the same tree with each variable replaced by `f(var)`.
    pub fn rename_vars(&self, f: &impl Fn(Var) -> Var) -> Expression {
        match self.node() {
            Node::Num(_) => self.clone(),
            Node::Var(u) => Expression::var(f(*u)),
            Node::Un(op, a) => Self::apply_un(*op, a.rename_vars(f)),
            Node::Bin(op, a, b) => Self::apply_bin(*op, a.rename_vars(f), b.rename_vars(f)),
        }
    }

    /// Node count; a cheap size measure for rewrite bookkeeping.
    pub fn size(&self) -> usize {
        match self.node() {
            Node::Num(_) | Node::Var(_) => 1,
            Node::Un(_, a) => 1 + a.size(),
            Node::Bin(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    /// Total order used to sort factors and terms into a stable layout.
    ///
    /// The order has no semantic meaning; it only makes rewrites and
    /// printed output deterministic.
    pub fn cmp_structural(&self, other: &Expression) -> Ordering {
        fn rank(n: &Node) -> u8 {
            match n {
                Node::Num(_) => 0,
                Node::Var(_) => 1,
                Node::Un(..) => 2,
                Node::Bin(..) => 3,
            }
        }
        if Arc::ptr_eq(&self.0, &other.0) {
            return Ordering::Equal;
        }
        let (a, b) = (self.node(), other.node());
        rank(a).cmp(&rank(b)).then_with(|| match (a, b) {
            (Node::Num(x), Node::Num(y)) => x.total_cmp(y),
            (Node::Var(x), Node::Var(y)) => x.cmp(y),
            (Node::Un(op1, a1), Node::Un(op2, a2)) => {
                op1.cmp(op2).then_with(|| a1.cmp_structural(a2))
            }
            (Node::Bin(op1, a1, b1), Node::Bin(op2, a2, b2)) => op1
                .cmp(op2)
                .then_with(|| a1.cmp_structural(a2))
                .then_with(|| b1.cmp_structural(b2)),
            _ => unreachable!("rank() separates node kinds"),
        })
    }
}

/// Structural equality (same shape, bitwise-equal literals).
///
/// Value equality is a different notion and is always decided by sampling.
impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_structural(other) == Ordering::Equal
    }
}

impl Eq for Expression {}

impl From<f64> for Expression {
    fn from(v: f64) -> Self {
        Expression::num(v)
    }
}

impl From<Var> for Expression {
    fn from(v: Var) -> Self {
        Expression::var(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_maps_names_to_variables() {
        let sp = VariableSpace::new(2, 1);
        assert_eq!(sp.lookup("x1"), Some(Var::State(0)));
        assert_eq!(sp.lookup("x2"), Some(Var::State(1)));
        assert_eq!(sp.lookup("t"), Some(Var::Time));
        assert_eq!(sp.lookup("w1"), Some(Var::Noise(0)));
        assert_eq!(sp.lookup("x3"), None);
        assert_eq!(sp.lookup("w2"), None);
        assert_eq!(sp.lookup("x01"), None);
        assert_eq!(sp.lookup("y1"), None);
        assert_eq!(sp.lookup("x"), None);
    }

    #[test]
    fn slots_are_contiguous() {
        let sp = VariableSpace::new(2, 2);
        let slots: Vec<usize> = sp.vars().map(|v| sp.slot(v)).collect();
        assert_eq!(slots, vec![0, 1, 2, 3, 4]);
        assert_eq!(sp.dim(), 5);
    }

    #[test]
    fn smart_constructors_fold() {
        let x = Expression::state(0);
        assert!(Expression::add(x.clone(), Expression::zero()) == x);
        assert!(Expression::mul(x.clone(), Expression::one()) == x);
        assert!(Expression::mul(x.clone(), Expression::zero()).is_zero());
        assert!(Expression::pow(x.clone(), Expression::zero()).is_one());
        assert_eq!(
            Expression::add(Expression::num(2.0), Expression::num(3.0)).as_num(),
            Some(5.0)
        );
        assert!(Expression::neg(Expression::neg(x.clone())) == x);
    }

    #[test]
    fn substitute_replaces_and_folds() {
        let sp = VariableSpace::new(1, 0);
        let e = Expression::parse("x1^2 + t", &sp).unwrap();
        let s = e.substitute(Var::State(0), &Expression::num(3.0));
        assert_eq!(s.substitute(Var::Time, &Expression::num(1.0)).as_num(), Some(10.0));
    }

    #[test]
    fn structural_order_is_total_and_stable() {
        let sp = VariableSpace::new(2, 1);
        let items = ["1", "x1", "x2", "t", "w1", "exp(x1)", "x1+t", "x1*x2"]
            .map(|s| Expression::parse(s, &sp).unwrap());
        for a in &items {
            for b in &items {
                let ab = a.cmp_structural(b);
                let ba = b.cmp_structural(a);
                assert_eq!(ab, ba.reverse());
            }
            assert_eq!(a.cmp_structural(a), Ordering::Equal);
        }
    }
}
