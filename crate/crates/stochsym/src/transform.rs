//! Changes of variables and how SDE systems transform under them.
//!
//! The stochastic transformation rule differs from the deterministic chain
//! rule by second-order terms. For a scalar map `u = Phi(x, t, w)` over a
//! system `dx = f dt + s_k dw_k`, the mapped process obeys
//!
//! ```text
//! s_new_k = dPhi/dw_k + s_k dPhi/dx                    (push direction)
//! f_new   = dPhi/dt + f dPhi/dx + Delta(Phi) / 2
//! ```
//!
//! with `Delta` the diffusion Laplacian, both sides then rewritten in the
//! new coordinate through the inverse map. The pull direction solves the
//! same relations for the source-side system given the target-side one —
//! diffusion first, since the second-order correction of the drift needs
//! it — and requires no inversion at all. Multi-state systems transform
//! the same way componentwise under maps free of noise variables.
//!
//! The module also constructs the straightening map of a symmetry
//! (`Phi = integral of dx / phi`, which rewrites the generator as a plain
//! translation), inverts maps symbolically where a pattern applies (with a
//! numeric quadrature/bisection fallback), completes random maps with the
//! additive noise term they need, and verifies any claimed source/target
//! pair by sampled comparison.

use serde::Serialize;

use crate::error::Error;
use crate::expr::{Expression, Node, Point, Var, VariableSpace};
use crate::model::{ito_laplacian, sample_points, Domain, Sde, VectorField};
use crate::model::file::MapSpec;
use crate::symcheck::CheckOptions;

/// Which way a map is applied to a system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// The system is given in the map's source frame; produce the system
    /// satisfied by the mapped coordinates.
    Push,
    /// The system is given in the map's target frame; produce the system
    /// in the source frame whose image it is.
    Pull,
}

/// A coordinate change on state space, possibly involving time and noise.
///
/// `forward[i]` expresses the i-th target coordinate in the source frame;
/// `inverse[i]`, when known, expresses the i-th source coordinate in the
/// target frame. Each side writes states as `x1..xn` in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeOfVariables {
    space: VariableSpace,
    forward: Vec<Expression>,
    inverse: Option<Vec<Expression>>,
}

impl ChangeOfVariables {
    pub fn new(
        space: VariableSpace,
        forward: Vec<Expression>,
        inverse: Option<Vec<Expression>>,
    ) -> Result<ChangeOfVariables, Error> {
        if forward.len() != space.n {
            return Err(Error::Dimension(format!(
                "{} map components for {} states",
                forward.len(),
                space.n
            )));
        }
        if let Some(inv) = &inverse {
            if inv.len() != space.n {
                return Err(Error::Dimension(format!(
                    "{} inverse components for {} states",
                    inv.len(),
                    space.n
                )));
            }
        }
        Ok(ChangeOfVariables { space, forward, inverse })
    }

    /// Builds from a model-file map section. A `beta` entry is the
    /// additive noise completion of a scalar map: it joins the first
    /// forward component, and any supplied inverse must invert the
    /// completed map.
    pub fn from_map_spec(
        space: VariableSpace,
        spec: &MapSpec,
    ) -> Result<ChangeOfVariables, Error> {
        let mut forward = spec.forward.clone();
        if let Some(beta) = &spec.beta {
            if space.n != 1 {
                return Err(Error::Dimension(
                    "an additive beta term only applies to scalar maps".into(),
                ));
            }
            forward[0] = Expression::add(forward[0].clone(), beta.clone()).simplify();
        }
        ChangeOfVariables::new(space, forward, spec.inverse.clone())
    }

    pub fn space(&self) -> VariableSpace {
        self.space
    }

    pub fn forward(&self) -> &[Expression] {
        &self.forward
    }

    pub fn inverse(&self) -> Option<&[Expression]> {
        self.inverse.as_deref()
    }

    pub fn with_inverse(mut self, inverse: Vec<Expression>) -> Result<Self, Error> {
        if inverse.len() != self.space.n {
            return Err(Error::Dimension("inverse has wrong length".into()));
        }
        self.inverse = Some(inverse);
        Ok(self)
    }

    /// The map uses noise variables (in either direction).
    pub fn is_random(&self) -> bool {
        self.forward.iter().any(|e| e.has_noise())
            || self
                .inverse
                .as_ref()
                .is_some_and(|inv| inv.iter().any(|e| e.has_noise()))
    }

    /// The reverse map: requires the inverse side to be known.
    pub fn swapped(&self) -> Result<ChangeOfVariables, Error> {
        let Some(inv) = &self.inverse else {
            return Err(Error::Missing(
                "cannot reverse a map whose inverse is unknown".into(),
            ));
        };
        Ok(ChangeOfVariables {
            space: self.space,
            forward: inv.clone(),
            inverse: Some(self.forward.clone()),
        })
    }

    /// Applies the forward map to a numeric point.
    pub fn apply_point(&self, p: &Point) -> Result<Point, Error> {
        let mut x = Vec::with_capacity(self.space.n);
        for e in &self.forward {
            x.push(e.eval(p)?);
        }
        Ok(Point::new(x, p.t, p.w.clone()))
    }

    /// State-Jacobian of the forward map as expressions.
    pub fn forward_jacobian(&self) -> Vec<Vec<Expression>> {
        (0..self.space.n)
            .map(|k| {
                (0..self.space.n)
                    .map(|j| self.forward[k].derivative(Var::State(j)))
                    .collect()
            })
            .collect()
    }
}

/// Sampled lower bound on the forward Jacobian determinant magnitude
/// below which a map is rejected as non-invertible.
const MIN_JACOBIAN_DET: f64 = 1e-6;
/// Tolerance for the sampled `J_forward * J_inverse = I` consistency check.
const INVERSE_CONSISTENCY_TOL: f64 = 1e-6;
/// Points used for the Jacobian and inverse-consistency preconditions.
const PRECONDITION_POINTS: usize = 50;

/// Transforms a system under a change of variables, dispatching on shape:
/// scalar systems take the full (possibly noise-involving) rule,
/// multi-state systems the componentwise rule for deterministic maps.
pub fn transform(
    sys: &Sde,
    cov: &ChangeOfVariables,
    dir: Direction,
) -> Result<Sde, Error> {
    if sys.space() != cov.space() {
        return Err(Error::Dimension(
            "map and system live in different spaces".into(),
        ));
    }
    if sys.n() == 1 {
        transform_scalar(sys, cov, dir)
    } else {
        transform_system(sys, cov, dir)
    }
}

/// Scalar transform. Deterministic maps work for any number of noises;
/// maps that involve noise variables require a single noise.
pub fn transform_scalar(
    sys: &Sde,
    cov: &ChangeOfVariables,
    dir: Direction,
) -> Result<Sde, Error> {
    if sys.n() != 1 {
        return Err(Error::Dimension("scalar transform on a multi-state system".into()));
    }
    if cov.is_random() && sys.m() != 1 {
        return Err(Error::Dimension(
            "maps involving noise variables support a single noise only".into(),
        ));
    }
    let space = sys.space();
    let m = sys.m();
    let x = Var::State(0);
    let phi = &cov.forward[0];
    let phi_x = phi.derivative(x);

    match dir {
        Direction::Push => {
            // new diffusion row, still written in the source frame
            let mut sigma_new = Vec::with_capacity(m);
            for k in 0..m {
                sigma_new.push(
                    Expression::add(
                        phi.derivative(Var::Noise(k)),
                        Expression::mul(sys.diffusion(0, k).clone(), phi_x.clone()),
                    )
                    .simplify(),
                );
            }
            // drift: first-order transport plus half the diffusion Laplacian
            let f_new = Expression::add(
                Expression::add(
                    phi.derivative(Var::Time),
                    Expression::mul(sys.drift(0).clone(), phi_x.clone()),
                ),
                Expression::mul(Expression::num(0.5), ito_laplacian(sys, phi)),
            )
            .simplify();
            let coeffs: Vec<Expression> = std::iter::once(f_new)
                .chain(sigma_new)
                .collect();
            let rewritten = rewrite_in_target_frame(sys, cov, coeffs)?;
            let (f_new, sigma_new) = (rewritten[0].clone(), rewritten[1..].to_vec());
            Sde::new(space, vec![f_new], vec![sigma_new], None)
        }
        Direction::Pull => {
            // diffusion first: the drift's second-order correction needs it
            let compose = |e: &Expression| e.substitute_states(std::slice::from_ref(phi));
            let mut s_hat = Vec::with_capacity(m);
            for k in 0..m {
                s_hat.push(
                    Expression::div(
                        Expression::sub(
                            compose(sys.diffusion(0, k)),
                            phi.derivative(Var::Noise(k)),
                        ),
                        phi_x.clone(),
                    )
                    .simplify(),
                );
            }
            let phi_xx = phi_x.derivative(x);
            let mut delta = Expression::zero();
            for (k, s_hat_k) in s_hat.iter().enumerate() {
                let wk = Var::Noise(k);
                delta = Expression::add(
                    delta,
                    Expression::add(
                        phi.derivative(wk).derivative(wk),
                        Expression::add(
                            Expression::mul(
                                Expression::mul(Expression::num(2.0), s_hat_k.clone()),
                                phi_x.derivative(wk),
                            ),
                            Expression::mul(
                                Expression::mul(s_hat_k.clone(), s_hat_k.clone()),
                                phi_xx.clone(),
                            ),
                        ),
                    ),
                );
            }
            let f_hat = Expression::div(
                Expression::sub(
                    Expression::sub(compose(sys.drift(0)), phi.derivative(Var::Time)),
                    Expression::mul(Expression::num(0.5), delta),
                ),
                phi_x,
            )
            .simplify();
            Sde::new(space, vec![f_hat], vec![s_hat], None)
        }
    }
}

/// Componentwise transform of a multi-state system under a map free of
/// noise variables. The push direction needs the inverse map (built on
/// the fly for scalar components when absent); pull swaps the directions.
pub fn transform_system(
    sys: &Sde,
    cov: &ChangeOfVariables,
    dir: Direction,
) -> Result<Sde, Error> {
    if cov.is_random() {
        return Err(Error::Invalid(
            "multi-state transforms require a map free of noise variables".into(),
        ));
    }
    let cov = match dir {
        Direction::Push => cov.clone(),
        Direction::Pull => cov.swapped()?,
    };
    let space = sys.space();
    let n = sys.n();
    let m = sys.m();

    check_forward_jacobian(sys.domain(), &cov)?;
    if cov.inverse().is_some() {
        check_inverse_consistency(sys.domain(), &cov)?;
    }

    let mut coeffs = Vec::with_capacity(n * (1 + m));
    for k in 0..n {
        let phi_k = &cov.forward()[k];
        let grad: Vec<Expression> =
            (0..n).map(|j| phi_k.derivative(Var::State(j))).collect();
        let mut f_new = phi_k.derivative(Var::Time);
        for j in 0..n {
            f_new = Expression::add(
                f_new,
                Expression::mul(grad[j].clone(), sys.drift(j).clone()),
            );
        }
        f_new = Expression::add(
            f_new,
            Expression::mul(Expression::num(0.5), ito_laplacian(sys, phi_k)),
        );
        coeffs.push(f_new.simplify());
        for q in 0..m {
            let mut s_new = Expression::zero();
            for j in 0..n {
                s_new = Expression::add(
                    s_new,
                    Expression::mul(grad[j].clone(), sys.diffusion(j, q).clone()),
                );
            }
            coeffs.push(s_new.simplify());
        }
    }
    let rewritten = rewrite_in_target_frame(sys, &cov, coeffs)?;
    let mut it = rewritten.into_iter();
    let mut drift = Vec::with_capacity(n);
    let mut diffusion = Vec::with_capacity(n);
    for _ in 0..n {
        drift.push(it.next().expect("coefficient count"));
        diffusion.push((0..m).map(|_| it.next().expect("coefficient count")).collect());
    }
    Sde::new(space, drift, diffusion, None)
}

/// Rewrites push-direction coefficients (functions on the source frame)
/// in the target frame through the inverse map. Coefficients free of
/// state variables pass through unchanged; otherwise the inverse is
/// taken from the map or, for scalar maps, derived symbolically.
fn rewrite_in_target_frame(
    sys: &Sde,
    cov: &ChangeOfVariables,
    coeffs: Vec<Expression>,
) -> Result<Vec<Expression>, Error> {
    let n = sys.n();
    let needs_states = coeffs
        .iter()
        .any(|e| (0..n).any(|i| e.depends_on(Var::State(i))));
    if !needs_states {
        return Ok(coeffs);
    }
    let inverse: Vec<Expression> = match cov.inverse() {
        Some(inv) => inv.to_vec(),
        None if n == 1 => {
            vec![invert_symbolic(&cov.forward()[0], &sys.space(), sys.domain())?]
        }
        None => {
            return Err(Error::Missing(
                "transform needs the inverse map to rewrite coefficients in the \
                 new coordinates"
                    .into(),
            ))
        }
    };
    Ok(coeffs
        .into_iter()
        .map(|e| e.substitute_states(&inverse).simplify())
        .collect())
}

/// Precondition: the forward map must be invertible where we sample.
fn check_forward_jacobian(
    domain: &Domain,
    cov: &ChangeOfVariables,
) -> Result<(), Error> {
    let n = cov.space().n;
    let jac = cov.forward_jacobian();
    let mut guards: Vec<&Expression> = Vec::new();
    guards.extend(cov.forward().iter());
    guards.extend(jac.iter().flatten());
    let pts = sample_points(domain, &cov.space(), PRECONDITION_POINTS, &guards)?;
    for p in &pts {
        let mut vals = Vec::with_capacity(n * n);
        for row in &jac {
            for e in row {
                vals.push(e.eval(p)?);
            }
        }
        let det = nalgebra::DMatrix::from_row_slice(n, n, &vals).determinant();
        if det.abs() <= MIN_JACOBIAN_DET {
            return Err(Error::Inversion(format!(
                "forward map is singular near a sampled point (|det J| = {:.3e})",
                det.abs()
            )));
        }
    }
    Ok(())
}

/// Precondition: a supplied inverse must actually invert the forward map
/// (`J_forward(p) * J_inverse(forward(p))` close to the identity).
fn check_inverse_consistency(
    domain: &Domain,
    cov: &ChangeOfVariables,
) -> Result<(), Error> {
    let n = cov.space().n;
    let inv = cov.inverse().expect("checked by caller");
    let jac_fwd = cov.forward_jacobian();
    let jac_inv: Vec<Vec<Expression>> = (0..n)
        .map(|k| (0..n).map(|j| inv[k].derivative(Var::State(j))).collect())
        .collect();
    let mut guards: Vec<&Expression> = Vec::new();
    guards.extend(cov.forward().iter());
    guards.extend(jac_fwd.iter().flatten());
    let pts = sample_points(domain, &cov.space(), PRECONDITION_POINTS, &guards)?;
    let mut checked = 0usize;
    for p in &pts {
        let q = match cov.apply_point(p) {
            Ok(q) => q,
            Err(_) => continue,
        };
        let mut a = Vec::with_capacity(n * n);
        for row in &jac_fwd {
            for e in row {
                a.push(e.eval(p)?);
            }
        }
        let mut b = Vec::with_capacity(n * n);
        let mut ok = true;
        'rows: for row in &jac_inv {
            for e in row {
                match e.eval_guarded(&q, 1e-9) {
                    Some(v) => b.push(v),
                    None => {
                        ok = false;
                        break 'rows;
                    }
                }
            }
        }
        if !ok {
            continue;
        }
        let a = nalgebra::DMatrix::from_row_slice(n, n, &a);
        let b = nalgebra::DMatrix::from_row_slice(n, n, &b);
        let prod = a * b;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (prod[(i, j)] - expect).abs() > INVERSE_CONSISTENCY_TOL {
                    return Err(Error::Inversion(format!(
                        "supplied inverse does not invert the forward map \
                         (J_fwd * J_inv deviates from identity by {:.3e})",
                        (prod[(i, j)] - expect).abs()
                    )));
                }
            }
        }
        checked += 1;
    }
    if checked < PRECONDITION_POINTS / 2 {
        return Err(Error::DegenerateSampling(
            "too few points survived the inverse-consistency check".into(),
        ));
    }
    Ok(())
}

/// Symbolically inverts a scalar map `X = Phi(x, t, w)` for `x`, writing
/// the result in the target frame (its `x1` is the mapped coordinate).
///
/// Two pattern families are tried: peeling (each layer of the expression
/// tree is undone when the state lives in exactly one operand) and a
/// quadratic in `exp(x1)` (terms of the form `c2 e^{2x} + c1 e^x + c0`
/// with state-free `c_i`, solved by the positive quadratic root). Every
/// candidate is verified by sampled round-trip before being returned.
pub fn invert_symbolic(
    phi: &Expression,
    space: &VariableSpace,
    domain: &Domain,
) -> Result<Expression, Error> {
    if space.n != 1 {
        return Err(Error::Dimension(
            "symbolic inversion solves scalar maps only".into(),
        ));
    }
    let simplified = phi.simplify();
    let mut candidates = Vec::new();
    if let Ok(inv) = peel(&simplified, Expression::state(0)) {
        candidates.push(inv.simplify());
    }
    if let Some(inv) = quadratic_exp_inverse(&simplified) {
        candidates.push(inv.simplify());
    }
    for cand in candidates {
        if verify_inverse_roundtrip(&simplified, &cand, space, domain)? {
            return Ok(cand);
        }
    }
    Err(Error::NoSymbolicInverse(phi.to_string()))
}

struct NoPattern;

/// Undoes one tree layer at a time: `Phi(x) = rhs` becomes a condition on
/// the subtree containing `x`. Branch choices (log, sqrt, even roots) take
/// the principal/positive branch; the sampled round-trip check rejects
/// inversions where that branch is the wrong one.
fn peel(e: &Expression, rhs: Expression) -> Result<Expression, NoPattern> {
    let x = Var::State(0);
    let dep = |u: &Expression| u.depends_on(x);
    match e.node() {
        Node::Var(Var::State(0)) => Ok(rhs),
        Node::Bin(crate::expr::BinOp::Add, a, b) => {
            if !dep(b) {
                peel(a, Expression::sub(rhs, b.clone()))
            } else if !dep(a) {
                peel(b, Expression::sub(rhs, a.clone()))
            } else {
                Err(NoPattern)
            }
        }
        Node::Bin(crate::expr::BinOp::Sub, a, b) => {
            if !dep(b) {
                peel(a, Expression::add(rhs, b.clone()))
            } else if !dep(a) {
                peel(b, Expression::sub(a.clone(), rhs))
            } else {
                Err(NoPattern)
            }
        }
        Node::Bin(crate::expr::BinOp::Mul, a, b) => {
            if !dep(b) {
                peel(a, Expression::div(rhs, b.clone()))
            } else if !dep(a) {
                peel(b, Expression::div(rhs, a.clone()))
            } else {
                Err(NoPattern)
            }
        }
        Node::Bin(crate::expr::BinOp::Div, a, b) => {
            if !dep(b) {
                peel(a, Expression::mul(rhs, b.clone()))
            } else if !dep(a) {
                peel(b, Expression::div(a.clone(), rhs))
            } else {
                Err(NoPattern)
            }
        }
        Node::Bin(crate::expr::BinOp::Pow, a, b) => {
            if dep(a) && !dep(b) {
                match b.as_num() {
                    Some(k) if k == 2.0 => peel(a, Expression::sqrt(rhs)),
                    Some(k) if k == -1.0 => {
                        peel(a, Expression::div(Expression::one(), rhs))
                    }
                    Some(k) if k != 0.0 => {
                        peel(a, Expression::pow(rhs, Expression::num(1.0 / k)))
                    }
                    _ => Err(NoPattern),
                }
            } else if !dep(a) && dep(b) {
                // a^g = rhs  =>  g = log(rhs) / log(a)
                peel(
                    b,
                    Expression::div(Expression::log(rhs), Expression::log(a.clone())),
                )
            } else {
                Err(NoPattern)
            }
        }
        Node::Un(crate::expr::UnOp::Neg, a) => peel(a, Expression::neg(rhs)),
        Node::Un(crate::expr::UnOp::Exp, a) => peel(a, Expression::log(rhs)),
        Node::Un(crate::expr::UnOp::Log, a) => peel(a, Expression::exp(rhs)),
        Node::Un(crate::expr::UnOp::Sqrt, a) => {
            peel(a, Expression::pow(rhs, Expression::num(2.0)))
        }
        _ => Err(NoPattern),
    }
}

/// Matches `c2 e^{2x} + c1 e^{x} + c0` with state-free coefficients and
/// returns `x = log((-c1 + sqrt(c1^2 + 4 c2 (X - c0))) / (2 c2))`.
fn quadratic_exp_inverse(phi: &Expression) -> Option<Expression> {
    let x = Var::State(0);
    let mut c: [Vec<Expression>; 3] = [Vec::new(), Vec::new(), Vec::new()];

    // walk the sum spine with signs
    fn terms(e: &Expression, sign: f64, out: &mut Vec<(f64, Expression)>) {
        match e.node() {
            Node::Bin(crate::expr::BinOp::Add, a, b) => {
                terms(a, sign, out);
                terms(b, sign, out);
            }
            Node::Bin(crate::expr::BinOp::Sub, a, b) => {
                terms(a, sign, out);
                terms(b, -sign, out);
            }
            Node::Un(crate::expr::UnOp::Neg, a) => terms(a, -sign, out),
            _ => out.push((sign, e.clone())),
        }
    }
    let mut flat = Vec::new();
    terms(phi, 1.0, &mut flat);

    for (sign, term) in flat {
        let (degree, coeff) = exp_degree(&term, x)?;
        if degree > 2 {
            return None;
        }
        let signed = if sign < 0.0 { Expression::neg(coeff) } else { coeff };
        c[degree].push(signed);
    }
    if c[2].is_empty() {
        return None;
    }
    let sum = |v: Vec<Expression>| {
        v.into_iter()
            .reduce(Expression::add)
            .unwrap_or_else(Expression::zero)
    };
    let c0 = sum(c[0].drain(..).collect());
    let c1 = sum(c[1].drain(..).collect());
    let c2 = sum(c[2].drain(..).collect());
    // c2 u^2 + c1 u + c0 = X with u = e^x > 0: positive root
    let xnew = Expression::state(0);
    let disc = Expression::add(
        Expression::mul(c1.clone(), c1.clone()),
        Expression::mul(
            Expression::mul(Expression::num(4.0), c2.clone()),
            Expression::sub(xnew, c0),
        ),
    );
    let u = Expression::div(
        Expression::add(Expression::neg(c1), Expression::sqrt(disc)),
        Expression::mul(Expression::num(2.0), c2),
    );
    Some(Expression::log(u))
}

/// Splits a product term into `(k, coefficient)` where the term equals
/// `coefficient * e^{k x}` with a state-free coefficient. Terms free of
/// the state return `(0, term)`.
fn exp_degree(term: &Expression, x: Var) -> Option<(usize, Expression)> {
    if !term.depends_on(x) {
        return Some((0, term.clone()));
    }
    match term.node() {
        Node::Un(crate::expr::UnOp::Exp, arg) => {
            // exp(x) or exp(k*x) for integer k
            if let Node::Var(v) = arg.node() {
                if *v == x {
                    return Some((1, Expression::one()));
                }
            }
            if let Node::Bin(crate::expr::BinOp::Mul, a, b) = arg.node() {
                if let (Some(k), Node::Var(v)) = (a.as_num(), b.node()) {
                    if *v == x && k.fract() == 0.0 && k > 0.0 && k <= 2.0 {
                        return Some((k as usize, Expression::one()));
                    }
                }
            }
            None
        }
        Node::Bin(crate::expr::BinOp::Mul, a, b) => {
            let (ka, ca) = exp_degree(a, x)?;
            let (kb, cb) = exp_degree(b, x)?;
            let k = ka + kb;
            if k > 2 {
                return None;
            }
            Some((k, Expression::mul(ca, cb)))
        }
        Node::Bin(crate::expr::BinOp::Div, a, b) => {
            if b.depends_on(x) {
                return None;
            }
            let (k, ca) = exp_degree(a, x)?;
            Some((k, Expression::div(ca, b.clone())))
        }
        Node::Un(crate::expr::UnOp::Neg, a) => {
            let (k, ca) = exp_degree(a, x)?;
            Some((k, Expression::neg(ca)))
        }
        _ => None,
    }
}

/// Round-trip check `inverse(Phi(x, t, w), t, w) = x` on sampled points.
fn verify_inverse_roundtrip(
    phi: &Expression,
    inverse: &Expression,
    space: &VariableSpace,
    domain: &Domain,
) -> Result<bool, Error> {
    let guards = [phi];
    let guard_refs: Vec<&Expression> = guards.to_vec();
    let pts = sample_points(domain, space, PRECONDITION_POINTS, &guard_refs)?;
    let mut checked = 0usize;
    for p in &pts {
        let mapped = match phi.eval_guarded(p, 1e-9) {
            Some(v) => v,
            None => continue,
        };
        let q = Point::new(vec![mapped], p.t, p.w.clone());
        let back = match inverse.eval_guarded(&q, 1e-9) {
            Some(v) => v,
            None => continue,
        };
        if (back - p.x[0]).abs() > 1e-8 * (1.0 + p.x[0].abs()) {
            return Ok(false);
        }
        checked += 1;
    }
    Ok(checked >= PRECONDITION_POINTS / 2)
}

/// The straightening map of a scalar symmetry, in both representations:
/// a closed form when the rule-based integrator finds one, and a numeric
/// quadrature that always works for evaluation.
#[derive(Debug, Clone)]
pub struct BuiltMap {
    /// Closed-form antiderivative of `1/phi` in the state, when found.
    pub symbolic: Option<Expression>,
    /// Numeric evaluation path, always available.
    pub quadrature: QuadratureMap,
}

impl BuiltMap {
    /// Completes the closed form into a full change of variables, adding
    /// the optional `beta` term and attempting a symbolic inverse.
    pub fn into_cov(
        self,
        beta: Option<Expression>,
        space: &VariableSpace,
        domain: &Domain,
    ) -> Result<ChangeOfVariables, Error> {
        let Some(xi) = self.symbolic else {
            return Err(Error::NoAntiderivative(
                "the straightening map has no closed form; only numeric \
                 evaluation is available"
                    .into(),
            ));
        };
        let forward = match beta {
            Some(b) => Expression::add(xi, b).simplify(),
            None => xi,
        };
        let inverse = invert_symbolic(&forward, space, domain).ok();
        ChangeOfVariables::new(*space, vec![forward], inverse.map(|i| vec![i]))
    }
}

/// Builds the straightening map `Phi = integral of dx1 / phi` for a
/// scalar symmetry: in the mapped coordinate the generator becomes the
/// plain translation `d/dx1`.
pub fn build_straightening_map(
    sys: &Sde,
    field: &VectorField,
) -> Result<BuiltMap, Error> {
    if sys.n() != 1 {
        return Err(Error::Dimension(
            "straightening maps are built from scalar symmetries".into(),
        ));
    }
    if sys.space() != field.space() {
        return Err(Error::Dimension(
            "field and system live in different spaces".into(),
        ));
    }
    let integrand =
        Expression::div(Expression::one(), field.component(0).clone()).simplify();
    let symbolic = crate::expr::integrate_rule_based(&integrand, Var::State(0)).ok();
    let (lo, hi) = sys.domain().x[0];
    let quadrature = QuadratureMap {
        integrand,
        y0: 0.5 * (lo + hi),
        bracket: (lo, hi),
    };
    Ok(BuiltMap { symbolic, quadrature })
}

/// Numeric representation of a scalar map through its state derivative:
/// `Phi(x, t, w) = integral of integrand from y0 to x`.
#[derive(Debug, Clone)]
pub struct QuadratureMap {
    integrand: Expression,
    y0: f64,
    bracket: (f64, f64),
}

/// Absolute tolerance of the adaptive quadrature.
const QUADRATURE_TOL: f64 = 1e-10;

impl QuadratureMap {
    pub fn new(integrand: Expression, y0: f64, bracket: (f64, f64)) -> QuadratureMap {
        QuadratureMap { integrand, y0, bracket }
    }

    fn integrand_at(&self, y: f64, t: f64, w: &[f64]) -> Result<f64, Error> {
        self.integrand.eval(&Point::new(vec![y], t, w.to_vec()))
    }

    /// Evaluates the map by adaptive Simpson quadrature.
    pub fn eval(&self, y: f64, t: f64, w: &[f64]) -> Result<f64, Error> {
        let f = |s: f64| self.integrand_at(s, t, w);
        adaptive_simpson(&f, self.y0, y, QUADRATURE_TOL, 40)
    }

    /// Solves `eval(y) = target` for `y` inside the bracket by bisection
    /// with Newton acceleration (the integrand is the exact derivative).
    pub fn invert(&self, target: f64, t: f64, w: &[f64]) -> Result<f64, Error> {
        let (mut lo, mut hi) = self.bracket;
        let g = |y: f64| -> Result<f64, Error> { Ok(self.eval(y, t, w)? - target) };
        let mut glo = g(lo)?;
        let ghi = g(hi)?;
        if glo == 0.0 {
            return Ok(lo);
        }
        if ghi == 0.0 {
            return Ok(hi);
        }
        if glo.signum() == ghi.signum() {
            return Err(Error::Inversion(format!(
                "no sign change over [{lo}, {hi}]; target {target} out of range"
            )));
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let gm = g(mid)?;
            if gm == 0.0 || hi - lo < 1e-14 * (1.0 + mid.abs()) {
                break;
            }
            // Newton step from the midpoint; fall back to bisection when it
            // leaves the bracket or the derivative degenerates
            let d = self.integrand_at(mid, t, w)?;
            if d.abs() > 1e-12 {
                let newton = mid - gm / d;
                if newton > lo && newton < hi {
                    let gn = g(newton)?;
                    if gn.abs() < gm.abs() {
                        if gn.signum() == glo.signum() {
                            lo = newton;
                            glo = gn;
                        } else {
                            hi = newton;
                        }
                        if (hi - lo).abs() < 1e-14 * (1.0 + mid.abs()) {
                            break;
                        }
                        continue;
                    }
                }
            }
            if gm.signum() == glo.signum() {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
            }
        }
        Ok(mid)
    }
}

pub(crate) fn adaptive_simpson(
    f: &dyn Fn(f64) -> Result<f64, Error>,
    a: f64,
    b: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, Error> {
    fn simpson(
        f: &dyn Fn(f64) -> Result<f64, Error>,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
    ) -> Result<(f64, f64, f64), Error> {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        Ok((m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)))
    }
    fn recurse(
        f: &dyn Fn(f64) -> Result<f64, Error>,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64, Error> {
        let (lm, flm, left) = simpson(f, a, fa, m, fm)?;
        let (rm, frm, right) = simpson(f, m, fm, b, fb)?;
        let err = left + right - whole;
        if err.abs() <= 15.0 * tol || depth == 0 {
            return Ok(left + right + err / 15.0);
        }
        Ok(recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)?
            + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let (m, fm, whole) = simpson(f, a, fa, b, fb)?;
    recurse(f, a, fa, b, fb, m, fm, whole, tol, depth)
}

/// Options for the additive completion of a random straightening map.
#[derive(Debug, Clone)]
pub struct BetaOptions {
    /// Coefficient of the free linear noise term `c1 * w1`.
    pub c1: f64,
    /// Free additive function of time.
    pub b_of_t: Option<Expression>,
}

impl Default for BetaOptions {
    fn default() -> Self {
        BetaOptions { c1: 0.0, b_of_t: None }
    }
}

/// Result of the additive completion.
#[derive(Debug, Clone, Serialize)]
pub struct BetaSolution {
    /// The noise-derivative the completion must cancel, `beta_hat(t, w)`.
    #[serde(serialize_with = "ser_expr")]
    pub beta_hat: Expression,
    /// The additive completion `B(t, w)` itself.
    #[serde(serialize_with = "ser_expr")]
    pub b: Expression,
}

fn ser_expr<S: serde::Serializer>(e: &Expression, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&e.to_string())
}

/// Completes a random straightening map: given the state antiderivative
/// `xi` (so the full map is `xi + B(t, w)`), determines the additive term
/// that keeps the mapped equation within plain calculus. With
/// `psi = d(xi)/dw`, the increments of the correction are
///
/// ```text
/// rhs_w = psi_w + s psi_x
/// rhs_t = psi_t + f psi_x + (s psi_xw + s^2 psi_xx) / 2
/// ```
///
/// which are state-free exactly when the symmetry passes its
/// compatibility condition. The correction integrates those increments
/// from the origin; the returned additive term is its negative plus the
/// free `c1 w + b(t)` family.
pub fn solve_beta(
    sys: &Sde,
    xi: &Expression,
    opts: &BetaOptions,
) -> Result<BetaSolution, Error> {
    if sys.n() != 1 || sys.m() != 1 {
        return Err(Error::Dimension(
            "the additive completion applies to scalar single-noise systems".into(),
        ));
    }
    let x = Var::State(0);
    let w = Var::Noise(0);
    let t = Var::Time;
    let free = free_terms(opts);

    let psi = xi.derivative(w).simplify();
    if psi.is_zero() {
        return Ok(BetaSolution { beta_hat: Expression::zero(), b: free.simplify() });
    }
    let s = sys.diffusion(0, 0);
    let f = sys.drift(0);
    let rhs_w = Expression::add(
        psi.derivative(w),
        Expression::mul(s.clone(), psi.derivative(x)),
    )
    .simplify();
    let rhs_t = Expression::add(
        psi.derivative(t),
        Expression::add(
            Expression::mul(f.clone(), psi.derivative(x)),
            Expression::mul(
                Expression::num(0.5),
                Expression::add(
                    Expression::mul(s.clone(), psi.derivative(x).derivative(w)),
                    Expression::mul(
                        Expression::mul(s.clone(), s.clone()),
                        psi.derivative(x).derivative(x),
                    ),
                ),
            ),
        ),
    )
    .simplify();

    let rhs_w = force_state_free(sys, rhs_w, "noise increment")?;
    let rhs_t = force_state_free(sys, rhs_t, "time increment")?;

    // beta_hat(t, w) = [W(t, w) - W(t, 0)] + integral of rhs_t(s, 0) ds
    let big_w = crate::expr::integrate_rule_based(&rhs_w, w)?;
    let w_part = Expression::sub(
        big_w.clone(),
        big_w.substitute(w, &Expression::zero()),
    );
    let rhs_t0 = rhs_t.substitute(w, &Expression::zero()).simplify();
    let big_t = crate::expr::integrate_rule_based(&rhs_t0, t)?;
    let t_part = Expression::sub(
        big_t.clone(),
        big_t.substitute(t, &Expression::zero()),
    );
    let beta_hat = Expression::add(w_part, t_part).simplify();

    // B(t, w) = -integral of beta_hat dw from 0 + c1 w + b(t)
    let big_u = crate::expr::integrate_rule_based(&beta_hat, w)?;
    let b = Expression::add(
        Expression::neg(Expression::sub(
            big_u.clone(),
            big_u.substitute(w, &Expression::zero()),
        )),
        free,
    )
    .simplify();
    Ok(BetaSolution { beta_hat, b })
}

fn free_terms(opts: &BetaOptions) -> Expression {
    let mut e = Expression::mul(Expression::num(opts.c1), Expression::noise(0));
    if let Some(b) = &opts.b_of_t {
        e = Expression::add(e, b.clone());
    }
    e
}

/// Replaces a structurally state-dependent expression by its value at the
/// domain's state midpoint — after confirming by sampling that the value
/// does not actually vary with the state.
fn force_state_free(
    sys: &Sde,
    e: Expression,
    what: &str,
) -> Result<Expression, Error> {
    let x = Var::State(0);
    if !e.depends_on(x) {
        return Ok(e);
    }
    let space = sys.space();
    let guards = [&e];
    let pts = sample_points(sys.domain(), &space, 60, &guards)?;
    let (lo, hi) = sys.domain().x[0];
    let probe = [lo + 0.17 * (hi - lo), 0.5 * (lo + hi), lo + 0.83 * (hi - lo)];
    let mut max_spread = 0.0f64;
    let mut scale = 1.0f64;
    for p in pts.iter().take(20) {
        let mut vals = Vec::new();
        for &y in &probe {
            let q = Point::new(vec![y], p.t, p.w.clone());
            if let Some(v) = e.eval_guarded(&q, 1e-9) {
                vals.push(v);
            }
        }
        if vals.len() < 2 {
            continue;
        }
        let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max_spread = max_spread.max(mx - mn);
        scale = scale.max(1.0 + mx.abs());
    }
    if max_spread > 1e-8 * scale {
        return Err(Error::CompatibilityFailed(format!(
            "the {what} of the additive completion varies with the state \
             (spread {max_spread:.3e}); the symmetry does not satisfy the \
             compatibility condition"
        )));
    }
    let mid = Expression::num(0.5 * (lo + hi));
    Ok(e.substitute(x, &mid).simplify())
}

/// Rewrites a state vector field in the map's target coordinates:
/// `phi_new^k = (sum_j dPhi^k/dx_j phi^j)` composed with the inverse map.
/// Both the field and the map must be free of noise variables.
pub fn push_field(
    field: &VectorField,
    cov: &ChangeOfVariables,
) -> Result<VectorField, Error> {
    if field.space() != cov.space() {
        return Err(Error::Dimension("field and map live in different spaces".into()));
    }
    if field.is_random() || cov.is_random() {
        return Err(Error::Invalid(
            "rewriting a vector field requires both field and map to be free \
             of noise variables"
                .into(),
        ));
    }
    let Some(inverse) = cov.inverse() else {
        return Err(Error::Missing(
            "rewriting a vector field needs the inverse map".into(),
        ));
    };
    let n = cov.space().n;
    let mut comps = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Expression::zero();
        for j in 0..n {
            acc = Expression::add(
                acc,
                Expression::mul(
                    cov.forward()[k].derivative(Var::State(j)),
                    field.component(j).clone(),
                ),
            );
        }
        comps.push(acc.substitute_states(inverse).simplify());
    }
    VectorField::new(cov.space(), comps)
}

/// Sampled confirmation that pushing `source` through `cov` reproduces
/// `target`.
#[derive(Debug, Clone, Serialize)]
pub struct PreservationCheck {
    pub points: usize,
    pub tol: f64,
    pub max_mismatch: f64,
    pub passes: bool,
}

/// Pushes `source` through the map and compares every coefficient of the
/// result against `target` on sampled points of the target domain.
pub fn verify_preservation(
    source: &Sde,
    target: &Sde,
    cov: &ChangeOfVariables,
    opts: &CheckOptions,
) -> Result<PreservationCheck, Error> {
    if source.space() != target.space() {
        return Err(Error::Dimension("source and target spaces differ".into()));
    }
    let pushed = transform(source, cov, Direction::Push)?;
    let space = target.space();
    let mut guards: Vec<&Expression> = Vec::new();
    guards.extend(target.coefficients());
    guards.extend(pushed.coefficients());
    let pts = sample_points(target.domain(), &space, opts.points, &guards)?;
    let mut max_mismatch = 0.0f64;
    for p in &pts {
        for (a, b) in pushed.coefficients().zip(target.coefficients()) {
            let va = a.eval(p)?;
            let vb = b.eval(p)?;
            max_mismatch = max_mismatch.max((va - vb).abs() / (1.0 + vb.abs()));
        }
    }
    Ok(PreservationCheck {
        points: pts.len(),
        tol: opts.tol,
        max_mismatch,
        passes: max_mismatch < opts.tol,
    })
}
