//! Expression printing.
//!
//! Output re-parses under the expression grammar to the same values.
//! Unary minus binds looser than `^` (the grammar reads `-x1^2` as
//! `-(x1^2)`), so a negated power prints bare (`-x1^2`) while a negated
//! base is parenthesized (`(-x1)^2`); negative numeric literals are
//! parenthesized wherever a bare leading `-` would change the parse.

use super::{BinOp, Expression, Node, UnOp};
use std::fmt;

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_POW: u8 = 3;
const PREC_ATOM: u8 = 4;

fn prec(e: &Expression) -> u8 {
    match e.node() {
        // anything printed with a leading `-` re-parses at factor level,
        // below `^`, so it must not pose as an atom
        Node::Num(v) if v.is_sign_negative() => PREC_MUL,
        Node::Un(UnOp::Neg, _) => PREC_MUL,
        Node::Num(_) | Node::Var(_) | Node::Un(..) => PREC_ATOM,
        Node::Bin(BinOp::Add | BinOp::Sub, ..) => PREC_ADD,
        Node::Bin(BinOp::Mul | BinOp::Div, ..) => PREC_MUL,
        Node::Bin(BinOp::Pow, ..) => PREC_POW,
    }
}

fn write_child(
    f: &mut fmt::Formatter<'_>,
    child: &Expression,
    min_prec: u8,
) -> fmt::Result {
    if prec(child) < min_prec {
        write!(f, "(")?;
        write_expr(f, child)?;
        write!(f, ")")
    } else {
        write_expr(f, child)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expression) -> fmt::Result {
    match e.node() {
        Node::Num(v) => write!(f, "{v}"),
        Node::Var(v) => write!(f, "{v}"),
        Node::Un(UnOp::Neg, a) => {
            write!(f, "-")?;
            // `-` binds looser than `^`: powers print bare; anything
            // looser than a power is parenthesized to re-parse exactly
            write_child(f, a, PREC_POW)
        }
        Node::Un(op, a) => {
            write!(f, "{}(", op.name())?;
            write_expr(f, a)?;
            write!(f, ")")
        }
        Node::Bin(op, a, b) => {
            let (sym, p) = match op {
                BinOp::Add => ("+", PREC_ADD),
                BinOp::Sub => ("-", PREC_ADD),
                BinOp::Mul => ("*", PREC_MUL),
                BinOp::Div => ("/", PREC_MUL),
                BinOp::Pow => ("^", PREC_POW),
            };
            if *op == BinOp::Pow {
                // both sides must be atoms: `^` neither chains nor nests bare
                write_child(f, a, PREC_ATOM)?;
                write!(f, "^")?;
                write_child(f, b, PREC_ATOM)
            } else {
                write_child(f, a, p)?;
                // sums breathe, products stay tight: `a + b`, `a*b`, `a/b`
                if p == PREC_ADD {
                    write!(f, " {sym} ")?;
                } else {
                    write!(f, "{sym}")?;
                }
                // - and / do not associate rightward: a - (b - c), a / (b*c)
                write_child(f, b, p + 1)
            }
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}
