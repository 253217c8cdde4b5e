//! Symbolic differentiation.
//!
//! Derivatives are built through the folding constructors, so the common
//! zero branches collapse immediately instead of inflating the tree; a
//! full `simplify` pass afterwards is still worthwhile for nested results.

use super::{BinOp, Expression, Node, UnOp, Var};

impl Expression {
    /// Partial derivative with respect to `v`.
    pub fn derivative(&self, v: Var) -> Expression {
        match self.node() {
            Node::Num(_) => Expression::zero(),
            Node::Var(u) => {
                if *u == v {
                    Expression::one()
                } else {
                    Expression::zero()
                }
            }
            Node::Un(op, a) => {
                if !a.depends_on(v) {
                    return Expression::zero();
                }
                let da = a.derivative(v);
                match op {
                    UnOp::Neg => Expression::neg(da),
                    UnOp::Exp => Expression::mul(da, self.clone()),
                    UnOp::Log => Expression::div(da, a.clone()),
                    UnOp::Sin => Expression::mul(da, Expression::cos(a.clone())),
                    UnOp::Cos => {
                        Expression::neg(Expression::mul(da, Expression::sin(a.clone())))
                    }
                    UnOp::Sqrt => Expression::div(
                        da,
                        Expression::mul(Expression::num(2.0), self.clone()),
                    ),
                }
            }
            Node::Bin(op, a, b) => {
                let dep_a = a.depends_on(v);
                let dep_b = b.depends_on(v);
                if !dep_a && !dep_b {
                    return Expression::zero();
                }
                match op {
                    BinOp::Add => Expression::add(a.derivative(v), b.derivative(v)),
                    BinOp::Sub => Expression::sub(a.derivative(v), b.derivative(v)),
                    BinOp::Mul => Expression::add(
                        Expression::mul(a.derivative(v), b.clone()),
                        Expression::mul(a.clone(), b.derivative(v)),
                    ),
                    BinOp::Div => {
                        if !dep_b {
                            // quotient with constant denominator: da / b
                            return Expression::div(a.derivative(v), b.clone());
                        }
                        Expression::div(
                            Expression::sub(
                                Expression::mul(a.derivative(v), b.clone()),
                                Expression::mul(a.clone(), b.derivative(v)),
                            ),
                            Expression::pow(b.clone(), Expression::num(2.0)),
                        )
                    }
                    BinOp::Pow => {
                        // constant exponent: n * a^(n-1) * da
                        if !dep_b {
                            let n = b.clone();
                            let nm1 = Expression::sub(b.clone(), Expression::one());
                            return Expression::mul(
                                Expression::mul(n, Expression::pow(a.clone(), nm1)),
                                a.derivative(v),
                            );
                        }
                        // general case: a^b * (db*log(a) + b*da/a)
                        let da = a.derivative(v);
                        let db = b.derivative(v);
                        Expression::mul(
                            self.clone(),
                            Expression::add(
                                Expression::mul(db, Expression::log(a.clone())),
                                Expression::div(
                                    Expression::mul(b.clone(), da),
                                    a.clone(),
                                ),
                            ),
                        )
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Point, VariableSpace};
    use super::*;

    /// Central finite difference, the oracle for every symbolic derivative.
    fn fd(e: &Expression, v: Var, p: &Point, h: f64) -> f64 {
        let shift = |delta: f64| {
            let mut q = p.clone();
            match v {
                Var::State(i) => q.x[i] += delta,
                Var::Time => q.t += delta,
                Var::Noise(k) => q.w[k] += delta,
            }
            e.eval(&q).unwrap()
        };
        (shift(h) - shift(-h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let sp = VariableSpace::new(2, 1);
        let cases = [
            "x1^2*t + 1/2",
            "exp(-x1) - 0.5*exp(-2*x1)",
            "exp(x1*t)/(1 + x1^2)",
            "sin(x1)*cos(x2) + sqrt(1 + x1^2)",
            "log(1 + x1^2) + w1*x1",
            "x1^t",
            "(1 + x2^2)^2/(2*x2)",
            "2^x1",
        ];
        // deterministic low-discrepancy-ish points, away from singularities
        let pts: Vec<Point> = (0..40)
            .map(|i| {
                let u = |k: u64| {
                    let mut z = (i as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(k);
                    z ^= z >> 29;
                    z = z.wrapping_mul(0xbf58476d1ce4e5b9);
                    z ^= z >> 32;
                    (z >> 11) as f64 / (1u64 << 53) as f64
                };
                Point::new(
                    vec![0.3 + 1.5 * u(1), 0.3 + 1.5 * u(2)],
                    0.2 + 1.5 * u(3),
                    vec![-1.0 + 2.0 * u(4)],
                )
            })
            .collect();
        for text in cases {
            let e = Expression::parse(text, &sp).unwrap();
            for v in sp.vars() {
                let d = e.derivative(v);
                for p in &pts {
                    let exact = d.eval(p).unwrap();
                    let approx = fd(&e, v, p, 1e-5);
                    let scale = 1.0 + exact.abs();
                    assert!(
                        (exact - approx).abs() < 1e-6 * scale,
                        "d/d{v} of {text} at {p:?}: {exact} vs {approx}"
                    );
                }
            }
        }
    }

    #[test]
    fn derivative_of_independent_variable_is_zero() {
        let sp = VariableSpace::new(1, 1);
        let e = Expression::parse("exp(-x1)*t", &sp).unwrap();
        assert!(e.derivative(Var::Noise(0)).is_zero());
    }

    #[test]
    fn linearity_of_differentiation() {
        let sp = VariableSpace::new(1, 0);
        let a = Expression::parse("exp(x1^2)", &sp).unwrap();
        let b = Expression::parse("log(1 + x1^2)", &sp).unwrap();
        let combo = Expression::add(
            Expression::mul(Expression::num(3.0), a.clone()),
            Expression::mul(Expression::num(-2.0), b.clone()),
        );
        let dcombo = combo.derivative(Var::State(0)).simplify();
        let manual = Expression::add(
            Expression::mul(Expression::num(3.0), a.derivative(Var::State(0))),
            Expression::mul(Expression::num(-2.0), b.derivative(Var::State(0))),
        )
        .simplify();
        for i in 0..20 {
            let p = Point::new(vec![0.05 + 0.1 * i as f64], 0.0, vec![]);
            let u = dcombo.eval(&p).unwrap();
            let v = manual.eval(&p).unwrap();
            assert!((u - v).abs() < 1e-9 * (1.0 + v.abs()));
        }
    }
}
