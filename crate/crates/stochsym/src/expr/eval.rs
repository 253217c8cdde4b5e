//! Expression evaluation: a checked tree walker and a compiled form for
//! hot loops.
//!
//! The checked walker reports which subexpression left its domain; the
//! compiled form flattens the tree to a postfix program once and then
//! evaluates with raw IEEE semantics (domain violations surface as NaN or
//! infinity, which simulation loops already treat as blow-up).

use super::{BinOp, Expression, Node, Point, UnOp, Var, VariableSpace};
use crate::error::Error;

fn domain_err(reason: &str, e: &Expression) -> Error {
    Error::Domain { reason: reason.to_string(), expr: e.to_string() }
}

impl Expression {
    /// Evaluates at a point, reporting the offending subexpression when an
    /// operation leaves its domain.
    pub fn eval(&self, p: &Point) -> Result<f64, Error> {
        let v = self.eval_inner(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(domain_err("non-finite result", self))
        }
    }

    fn eval_inner(&self, p: &Point) -> Result<f64, Error> {
        match self.node() {
            Node::Num(v) => Ok(*v),
            Node::Var(v) => Ok(p.get(*v)),
            Node::Un(op, a) => {
                let x = a.eval_inner(p)?;
                match op {
                    UnOp::Neg => Ok(-x),
                    UnOp::Exp => Ok(x.exp()),
                    UnOp::Sin => Ok(x.sin()),
                    UnOp::Cos => Ok(x.cos()),
                    UnOp::Log => {
                        if x <= 0.0 {
                            Err(domain_err("log of a non-positive value", self))
                        } else {
                            Ok(x.ln())
                        }
                    }
                    UnOp::Sqrt => {
                        if x < 0.0 {
                            Err(domain_err("sqrt of a negative value", self))
                        } else {
                            Ok(x.sqrt())
                        }
                    }
                }
            }
            Node::Bin(op, a, b) => {
                let x = a.eval_inner(p)?;
                let y = b.eval_inner(p)?;
                match op {
                    BinOp::Add => Ok(x + y),
                    BinOp::Sub => Ok(x - y),
                    BinOp::Mul => Ok(x * y),
                    BinOp::Div => {
                        if y == 0.0 {
                            Err(domain_err("division by zero", self))
                        } else {
                            Ok(x / y)
                        }
                    }
                    BinOp::Pow => {
                        let v = x.powf(y);
                        if v.is_nan() {
                            Err(domain_err(
                                "power with negative base and non-integer exponent",
                                self,
                            ))
                        } else {
                            Ok(v)
                        }
                    }
                }
            }
        }
    }

    /// Evaluation for samplers: `None` on any domain violation, plus a
    /// guard band that rejects points too close to a singular locus
    /// (denominators, log and sqrt arguments within `guard` of zero).
    pub fn eval_guarded(&self, p: &Point, guard: f64) -> Option<f64> {
        let v = self.eval_guarded_inner(p, guard)?;
        v.is_finite().then_some(v)
    }

    fn eval_guarded_inner(&self, p: &Point, guard: f64) -> Option<f64> {
        match self.node() {
            Node::Num(v) => Some(*v),
            Node::Var(v) => Some(p.get(*v)),
            Node::Un(op, a) => {
                let x = a.eval_guarded_inner(p, guard)?;
                match op {
                    UnOp::Neg => Some(-x),
                    UnOp::Exp => Some(x.exp()),
                    UnOp::Sin => Some(x.sin()),
                    UnOp::Cos => Some(x.cos()),
                    UnOp::Log => (x > guard).then(|| x.ln()),
                    UnOp::Sqrt => (x >= 0.0).then(|| x.sqrt()),
                }
            }
            Node::Bin(op, a, b) => {
                let x = a.eval_guarded_inner(p, guard)?;
                let y = b.eval_guarded_inner(p, guard)?;
                match op {
                    BinOp::Add => Some(x + y),
                    BinOp::Sub => Some(x - y),
                    BinOp::Mul => Some(x * y),
                    BinOp::Div => (y.abs() > guard).then(|| x / y),
                    BinOp::Pow => {
                        let v = x.powf(y);
                        (!v.is_nan()).then_some(v)
                    }
                }
            }
        }
    }

    /// Compiles to a flat postfix program over the space's slot layout.
    pub fn compile(&self, space: &VariableSpace) -> CompiledExpr {
        let mut prog = Vec::with_capacity(self.size());
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        emit(self, space, &mut prog, &mut depth, &mut max_depth);
        CompiledExpr { prog, max_depth }
    }
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Load(usize),
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

fn emit(
    e: &Expression,
    space: &VariableSpace,
    prog: &mut Vec<Instr>,
    depth: &mut usize,
    max_depth: &mut usize,
) {
    match e.node() {
        Node::Num(v) => {
            prog.push(Instr::Const(*v));
            *depth += 1;
        }
        Node::Var(v) => {
            debug_assert!(space.contains(*v), "variable outside compile space");
            prog.push(Instr::Load(space.slot(*v)));
            *depth += 1;
        }
        Node::Un(op, a) => {
            emit(a, space, prog, depth, max_depth);
            prog.push(match op {
                UnOp::Neg => Instr::Neg,
                UnOp::Exp => Instr::Exp,
                UnOp::Log => Instr::Log,
                UnOp::Sin => Instr::Sin,
                UnOp::Cos => Instr::Cos,
                UnOp::Sqrt => Instr::Sqrt,
            });
        }
        Node::Bin(op, a, b) => {
            emit(a, space, prog, depth, max_depth);
            emit(b, space, prog, depth, max_depth);
            prog.push(match op {
                BinOp::Add => Instr::Add,
                BinOp::Sub => Instr::Sub,
                BinOp::Mul => Instr::Mul,
                BinOp::Div => Instr::Div,
                BinOp::Pow => Instr::Pow,
            });
            *depth -= 1;
        }
    }
    *max_depth = (*max_depth).max(*depth);
}

/// A flattened expression for repeated evaluation.
///
/// Evaluation never allocates when used with [`EvalStack`]; domain issues
/// propagate as NaN / infinity instead of errors.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    prog: Vec<Instr>,
    max_depth: usize,
}

/// Reusable evaluation stack for [`CompiledExpr::eval_with`].
#[derive(Debug, Default)]
pub struct EvalStack(Vec<f64>);

impl CompiledExpr {
    /// Evaluates against a flat slot buffer (`x.., t, w..`).
    pub fn eval_with(&self, slots: &[f64], stack: &mut EvalStack) -> f64 {
        let st = &mut stack.0;
        st.clear();
        st.reserve(self.max_depth);
        for instr in &self.prog {
            match instr {
                Instr::Const(v) => st.push(*v),
                Instr::Load(i) => st.push(slots[*i]),
                Instr::Neg => {
                    let a = st.last_mut().unwrap();
                    *a = -*a;
                }
                Instr::Exp => {
                    let a = st.last_mut().unwrap();
                    *a = a.exp();
                }
                Instr::Log => {
                    let a = st.last_mut().unwrap();
                    *a = a.ln();
                }
                Instr::Sin => {
                    let a = st.last_mut().unwrap();
                    *a = a.sin();
                }
                Instr::Cos => {
                    let a = st.last_mut().unwrap();
                    *a = a.cos();
                }
                Instr::Sqrt => {
                    let a = st.last_mut().unwrap();
                    *a = a.sqrt();
                }
                Instr::Add => {
                    let b = st.pop().unwrap();
                    *st.last_mut().unwrap() += b;
                }
                Instr::Sub => {
                    let b = st.pop().unwrap();
                    *st.last_mut().unwrap() -= b;
                }
                Instr::Mul => {
                    let b = st.pop().unwrap();
                    *st.last_mut().unwrap() *= b;
                }
                Instr::Div => {
                    let b = st.pop().unwrap();
                    *st.last_mut().unwrap() /= b;
                }
                Instr::Pow => {
                    let b = st.pop().unwrap();
                    let a = st.last_mut().unwrap();
                    *a = a.powf(b);
                }
            }
        }
        debug_assert_eq!(st.len(), 1);
        st[0]
    }
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<Expression>();
    check::<CompiledExpr>();
    check::<Var>();
}
