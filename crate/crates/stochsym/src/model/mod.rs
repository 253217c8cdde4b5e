//! SDE systems, vector fields and the differential operators on them.
//!
//! An Ito system is
//!
//! ```text
//! dx_i = f_i(x, t) dt + s_ik(x, t) dw_k        (i = 1..n, k = 1..m)
//! ```
//!
//! with drift `f`, diffusion matrix `s`, and independent Wiener processes
//! `w_k`. A generalized system allows `f` and `s` to depend on the `w_k`
//! sample values as well. Both share coefficient storage ([`Sde`]); the
//! wrapper types enforce their invariants at construction.

pub mod file;

use crate::error::Error;
use crate::expr::{Expression, Point, Var, VariableSpace};

/// Rectangular sampling domain: a box per state, one for time, one per
/// noise variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub x: Vec<(f64, f64)>,
    pub t: (f64, f64),
    pub w: Vec<(f64, f64)>,
}

/// Guard band half-width around singular loci; sample points whose
/// denominators (or log/sqrt arguments) come closer than this are skipped.
pub const GUARD_BAND: f64 = 1e-3;

const DEFAULT_X: (f64, f64) = (-2.0, 2.0);
const SHIFTED_X: (f64, f64) = (0.1, 2.1);
const DEFAULT_T: (f64, f64) = (0.1, 2.0);
const DEFAULT_W: (f64, f64) = (-2.0, 2.0);

impl Domain {
    /// The default box: `x_i` in `[-2, 2]`, `t` in `[0.1, 2]`, `w_k` in
    /// `[-2, 2]`. A state axis moves to `[0.1, 2.1]` when the supplied
    /// expressions have a pole or a log/sqrt domain edge at a coordinate
    /// `<= 0` on that axis but none on the positive part.
    pub fn default_for(space: &VariableSpace, exprs: &[&Expression]) -> Domain {
        let mut dom = Domain {
            x: vec![DEFAULT_X; space.n],
            t: DEFAULT_T,
            w: vec![DEFAULT_W; space.m],
        };
        for i in 0..space.n {
            if axis_needs_shift(space, exprs, &dom, i) {
                dom.x[i] = SHIFTED_X;
            }
        }
        dom
    }

    pub fn midpoint(&self) -> Point {
        Point::new(
            self.x.iter().map(|(a, b)| 0.5 * (a + b)).collect(),
            0.5 * (self.t.0 + self.t.1),
            self.w.iter().map(|(a, b)| 0.5 * (a + b)).collect(),
        )
    }

    fn bounds(&self, space: &VariableSpace) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(space.dim());
        out.extend_from_slice(&self.x);
        out.push(self.t);
        out.extend_from_slice(&self.w);
        out
    }
}

/// Probes one state axis: a grid value is "bad" when every probe setting
/// of the other variables fails to evaluate. The axis shifts when bad
/// values exist at coordinates `<= 0` and none at `>= 0.1`.
fn axis_needs_shift(
    space: &VariableSpace,
    exprs: &[&Expression],
    dom: &Domain,
    axis: usize,
) -> bool {
    let mid = dom.midpoint();
    let mut bad_nonpositive = false;
    for step in 0..=40 {
        let v = -2.0 + 0.1 * step as f64;
        let mut any_ok = false;
        'settings: for setting in [0.0f64, 0.7, -0.7] {
            let mut p = mid.clone();
            for j in 0..space.n {
                let (a, b) = dom.x[j];
                p.x[j] = 0.5 * (a + b) + setting * 0.5 * (b - a);
            }
            for k in 0..space.m {
                let (a, b) = dom.w[k];
                p.w[k] = 0.5 * (a + b) + setting * 0.5 * (b - a);
            }
            p.x[axis] = v;
            for e in exprs {
                if e.eval_guarded(&p, GUARD_BAND).is_none() {
                    continue 'settings;
                }
            }
            any_ok = true;
            break;
        }
        if !any_ok {
            if v <= 0.0 {
                bad_nonpositive = true;
            } else if v >= 0.1 {
                return false;
            }
        }
    }
    bad_nonpositive
}

/// Shared coefficient storage: drift vector, diffusion matrix, domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Sde {
    space: VariableSpace,
    drift: Vec<Expression>,
    diffusion: Vec<Vec<Expression>>,
    domain: Domain,
}

impl Sde {
    pub fn new(
        space: VariableSpace,
        drift: Vec<Expression>,
        diffusion: Vec<Vec<Expression>>,
        domain: Option<Domain>,
    ) -> Result<Sde, Error> {
        if drift.len() != space.n {
            return Err(Error::Dimension(format!(
                "{} drift components for {} states",
                drift.len(),
                space.n
            )));
        }
        if diffusion.len() != space.n
            || diffusion.iter().any(|row| row.len() != space.m)
        {
            return Err(Error::Dimension(format!(
                "diffusion must be {}x{}",
                space.n, space.m
            )));
        }
        let domain = domain.unwrap_or_else(|| {
            let all: Vec<&Expression> =
                drift.iter().chain(diffusion.iter().flatten()).collect();
            Domain::default_for(&space, &all)
        });
        if domain.x.len() != space.n || domain.w.len() != space.m {
            return Err(Error::Dimension("domain box does not match space".into()));
        }
        Ok(Sde { space, drift, diffusion, domain })
    }

    pub fn space(&self) -> VariableSpace {
        self.space
    }

    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn m(&self) -> usize {
        self.space.m
    }

    pub fn drift(&self, i: usize) -> &Expression {
        &self.drift[i]
    }

    pub fn diffusion(&self, i: usize, k: usize) -> &Expression {
        &self.diffusion[i][k]
    }

    pub fn drift_all(&self) -> &[Expression] {
        &self.drift
    }

    pub fn diffusion_all(&self) -> &[Vec<Expression>] {
        &self.diffusion
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn with_domain(mut self, domain: Domain) -> Sde {
        self.domain = domain;
        self
    }

    /// All coefficient expressions, drift first.
    pub fn coefficients(&self) -> impl Iterator<Item = &Expression> {
        self.drift.iter().chain(self.diffusion.iter().flatten())
    }

    pub fn coefficients_have_noise(&self) -> bool {
        self.coefficients().any(|e| e.has_noise())
    }
}

/// An Ito system: coefficients may depend on states and time only.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoSystem(Sde);

impl ItoSystem {
    pub fn new(sde: Sde) -> Result<ItoSystem, Error> {
        if sde.coefficients_have_noise() {
            return Err(Error::Invalid(
                "coefficients reference noise variables; this is a generalized \
                 system, not an Ito system"
                    .into(),
            ));
        }
        Ok(ItoSystem(sde))
    }

    pub fn sde(&self) -> &Sde {
        &self.0
    }

    pub fn into_sde(self) -> Sde {
        self.0
    }
}

/// A system whose coefficients may also depend on the sampled noise values.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedSystem(Sde);

impl GeneralizedSystem {
    pub fn new(sde: Sde) -> GeneralizedSystem {
        GeneralizedSystem(sde)
    }

    pub fn sde(&self) -> &Sde {
        &self.0
    }

    pub fn into_sde(self) -> Sde {
        self.0
    }
}

/// Either system type, as loaded from a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnySystem {
    Ito(ItoSystem),
    Generalized(GeneralizedSystem),
}

impl AnySystem {
    pub fn sde(&self) -> &Sde {
        match self {
            AnySystem::Ito(s) => s.sde(),
            AnySystem::Generalized(s) => s.sde(),
        }
    }

    pub fn is_ito(&self) -> bool {
        matches!(self, AnySystem::Ito(_))
    }
}

/// A vector field `X = phi_i(x, t[, w]) d/dx_i` acting on state space.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    space: VariableSpace,
    phi: Vec<Expression>,
}

impl VectorField {
    pub fn new(space: VariableSpace, phi: Vec<Expression>) -> Result<VectorField, Error> {
        if phi.len() != space.n {
            return Err(Error::Dimension(format!(
                "{} field components for {} states",
                phi.len(),
                space.n
            )));
        }
        Ok(VectorField { space, phi })
    }

    pub fn scalar(space: VariableSpace, phi: Expression) -> Result<VectorField, Error> {
        VectorField::new(space, vec![phi])
    }

    pub fn space(&self) -> VariableSpace {
        self.space
    }

    pub fn component(&self, i: usize) -> &Expression {
        &self.phi[i]
    }

    pub fn components(&self) -> &[Expression] {
        &self.phi
    }

    /// Random fields depend on at least one noise variable.
    pub fn is_random(&self) -> bool {
        self.phi.iter().any(|e| e.has_noise())
    }
}

/// An ordered chain of generators; solvability is checked in `symcheck`.
#[derive(Debug, Clone)]
pub struct SolvableChain {
    fields: Vec<VectorField>,
}

impl SolvableChain {
    pub fn new(fields: Vec<VectorField>) -> Result<SolvableChain, Error> {
        let Some(first) = fields.first() else {
            return Err(Error::Invalid("empty generator chain".into()));
        };
        let space = first.space();
        if fields.iter().any(|f| f.space() != space) {
            return Err(Error::Dimension(
                "chain generators live in different spaces".into(),
            ));
        }
        Ok(SolvableChain { fields })
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// The Ito Laplacian of a scalar expression under a system's diffusion:
///
/// ```text
/// Delta e = sum_k [ d2e/dwk2
///                 + sum_{j,p} s_jk s_pk d2e/dxj dxp
///                 + 2 sum_j s_jk d2e/dxj dwk ]
/// ```
///
/// For expressions and coefficients free of `w` only the middle block
/// survives; the general form is what the random determining equations
/// and random change-of-variable formulas need.
pub fn ito_laplacian(sys: &Sde, e: &Expression) -> Expression {
    let n = sys.n();
    let m = sys.m();
    let dx: Vec<Expression> = (0..n).map(|j| e.derivative(Var::State(j))).collect();
    let mut total = Expression::zero();
    for k in 0..m {
        let wk = Var::Noise(k);
        // d2e/dwk2
        total = Expression::add(total, e.derivative(wk).derivative(wk));
        // sum_{j,p} s_jk s_pk d2e/dxj dxp
        for j in 0..n {
            let d2_jx = &dx[j];
            for p in 0..n {
                let term = Expression::mul(
                    Expression::mul(
                        sys.diffusion(j, k).clone(),
                        sys.diffusion(p, k).clone(),
                    ),
                    d2_jx.derivative(Var::State(p)),
                );
                total = Expression::add(total, term);
            }
        }
        // 2 sum_j s_jk d2e/dxj dwk
        for j in 0..n {
            let term = Expression::mul(
                Expression::mul(Expression::num(2.0), sys.diffusion(j, k).clone()),
                dx[j].derivative(wk),
            );
            total = Expression::add(total, term);
        }
    }
    total.simplify()
}

/// Lie bracket of two vector fields: `[X, Y]_i = X_j dY_i/dx_j - Y_j dX_i/dx_j`.
///
/// Only state derivatives enter; time and noise are parameters here.
pub fn commutator(x: &VectorField, y: &VectorField) -> Result<VectorField, Error> {
    if x.space() != y.space() {
        return Err(Error::Dimension("bracket of fields in different spaces".into()));
    }
    let n = x.space().n;
    let mut comps = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = Expression::zero();
        for j in 0..n {
            acc = Expression::add(
                acc,
                Expression::sub(
                    Expression::mul(
                        x.component(j).clone(),
                        y.component(i).derivative(Var::State(j)),
                    ),
                    Expression::mul(
                        y.component(j).clone(),
                        x.component(i).derivative(Var::State(j)),
                    ),
                ),
            );
        }
        comps.push(acc.simplify());
    }
    VectorField::new(x.space(), comps)
}

/// Scalar-case transport operator `L = d/dt + (f - s*s_x/2) d/dx`.
///
/// Requires `n = m = 1`; membership of a scalar observable in `Ker L` and
/// `Ker M` jointly signals a multi-parameter family of random symmetries.
pub fn operator_l(sys: &Sde, e: &Expression) -> Result<Expression, Error> {
    require_scalar(sys)?;
    let x = Var::State(0);
    let s = sys.diffusion(0, 0);
    let coef = Expression::sub(
        sys.drift(0).clone(),
        Expression::mul(
            Expression::num(0.5),
            Expression::mul(s.clone(), s.derivative(x)),
        ),
    );
    Ok(Expression::add(
        e.derivative(Var::Time),
        Expression::mul(coef, e.derivative(x)),
    )
    .simplify())
}

/// Scalar-case noise operator `M = d/dw + s d/dx`; see [`operator_l`].
pub fn operator_m(sys: &Sde, e: &Expression) -> Result<Expression, Error> {
    require_scalar(sys)?;
    Ok(Expression::add(
        e.derivative(Var::Noise(0)),
        Expression::mul(sys.diffusion(0, 0).clone(), e.derivative(Var::State(0))),
    )
    .simplify())
}

fn require_scalar(sys: &Sde) -> Result<(), Error> {
    if sys.n() != 1 || sys.m() != 1 {
        return Err(Error::Dimension(format!(
            "operator needs a scalar single-noise system, got n={} m={}",
            sys.n(),
            sys.m()
        )));
    }
    Ok(())
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical-inverse (Halton) low-discrepancy value for one dimension.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Draws `count` quasi-random points of the domain, skipping points where
/// any guard expression fails to evaluate (singularity guard band included).
///
/// The stream is deterministic: same domain, guards and count give the
/// same points. Fails with [`Error::DegenerateSampling`] when fewer than
/// `count` valid points exist among `50 * count` candidates.
pub fn sample_points(
    domain: &Domain,
    space: &VariableSpace,
    count: usize,
    guards: &[&Expression],
) -> Result<Vec<Point>, Error> {
    let bounds = domain.bounds(space);
    if bounds.len() > PRIMES.len() {
        return Err(Error::Dimension(format!(
            "sampling supports up to {} dimensions",
            PRIMES.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut index = 1u64;
    let limit = 50 * count as u64;
    while out.len() < count && index <= limit {
        let mut coords = Vec::with_capacity(bounds.len());
        for (d, (lo, hi)) in bounds.iter().enumerate() {
            let u = halton(index, PRIMES[d]);
            coords.push(lo + (hi - lo) * u);
        }
        let p = Point::new(
            coords[..space.n].to_vec(),
            coords[space.n],
            coords[space.n + 1..].to_vec(),
        );
        index += 1;
        if guards
            .iter()
            .all(|g| g.eval_guarded(&p, GUARD_BAND).is_some())
        {
            out.push(p);
        }
    }
    if out.len() < count {
        return Err(Error::DegenerateSampling(format!(
            "only {} of {count} requested points were usable",
            out.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;

    fn parse(text: &str, sp: &VariableSpace) -> Expression {
        Expression::parse(text, sp).unwrap()
    }

    fn scalar_system(f: &str, s: &str) -> Sde {
        let sp = VariableSpace::new(1, 1);
        Sde::new(
            sp,
            vec![parse(f, &sp)],
            vec![vec![parse(s, &sp)]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn ito_system_rejects_noise_in_coefficients() {
        let sp = VariableSpace::new(1, 1);
        let sde = Sde::new(
            sp,
            vec![parse("w1", &sp)],
            vec![vec![parse("1", &sp)]],
            None,
        )
        .unwrap();
        assert!(ItoSystem::new(sde.clone()).is_err());
        let _ = GeneralizedSystem::new(sde);
    }

    #[test]
    fn default_domain_shifts_on_poles() {
        let sp = VariableSpace::new(1, 1);
        // pole at x1 = 0 forces the positive box
        let sde = scalar_system("1/x1", "1");
        assert_eq!(sde.domain().x[0], (0.1, 2.1));
        // smooth coefficients keep the centered box
        let sde = scalar_system("exp(-x1)", "exp(-x1)");
        assert_eq!(sde.domain().x[0], (-2.0, 2.0));
        assert_eq!(sde.domain().t, (0.1, 2.0));
        assert_eq!(sde.domain().w[0], (-2.0, 2.0));
        // log forces the shift too
        let sde = scalar_system("log(x1)", "1");
        assert_eq!(sde.domain().x[0], (0.1, 2.1));
        let _ = sp;
    }

    #[test]
    fn off_axis_singularities_do_not_shift() {
        let sp = VariableSpace::new(2, 1);
        let sde = Sde::new(
            sp,
            vec![parse("1/(x1 - x2)", &sp), parse("0", &sp)],
            vec![vec![parse("1", &sp)], vec![parse("1", &sp)]],
            None,
        )
        .unwrap();
        assert_eq!(sde.domain().x[0], (-2.0, 2.0));
        assert_eq!(sde.domain().x[1], (-2.0, 2.0));
    }

    #[test]
    fn laplacian_reduces_to_second_derivative_without_noise_deps() {
        // for w-free e and scalar s: Delta e = s^2 e_xx
        let sys = scalar_system("0", "exp(-x1)");
        let sp = sys.space();
        let e = parse("x1^3", &sp);
        let lap = ito_laplacian(&sys, &e);
        let expect = parse("exp(-2*x1)*6*x1", &sp).simplify();
        let pts = sample_points(sys.domain(), &sp, 50, &[]).unwrap();
        for p in &pts {
            let a = lap.eval(p).unwrap();
            let b = expect.eval(p).unwrap();
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn laplacian_matches_finite_differences_with_noise_terms() {
        // full operator on an expression with x-w mixing
        let sys = scalar_system("0", "x1");
        let sp = VariableSpace::new(1, 1);
        let e = parse("exp(x1)*w1 + w1^2*x1", &sp);
        let lap = ito_laplacian(&sys, &e);
        let h = 1e-4;
        let pts = sample_points(sys.domain(), &sp, 30, &[]).unwrap();
        for p in &pts {
            let f = |dx: f64, dw: f64| {
                let q = Point::new(vec![p.x[0] + dx], p.t, vec![p.w[0] + dw]);
                e.eval(&q).unwrap()
            };
            let s = p.x[0];
            let e_ww = (f(0.0, h) - 2.0 * f(0.0, 0.0) + f(0.0, -h)) / (h * h);
            let e_xx = (f(h, 0.0) - 2.0 * f(0.0, 0.0) + f(-h, 0.0)) / (h * h);
            let e_xw = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
            let expect = e_ww + s * s * e_xx + 2.0 * s * e_xw;
            let got = lap.eval(p).unwrap();
            assert!(
                (got - expect).abs() < 1e-4 * (1.0 + expect.abs()),
                "{got} vs {expect}"
            );
        }
    }

    #[test]
    fn laplacian_is_linear() {
        let sys = scalar_system("0", "x1 + t");
        let sp = sys.space();
        let a = parse("exp(x1)*w1", &sp);
        let b = parse("x1^2*t", &sp);
        let combo = Expression::add(
            Expression::mul(Expression::num(2.0), a.clone()),
            Expression::mul(Expression::num(-3.0), b.clone()),
        );
        let lhs = ito_laplacian(&sys, &combo);
        let rhs = Expression::add(
            Expression::mul(Expression::num(2.0), ito_laplacian(&sys, &a)),
            Expression::mul(Expression::num(-3.0), ito_laplacian(&sys, &b)),
        )
        .simplify();
        let pts = sample_points(sys.domain(), &sp, 40, &[]).unwrap();
        for p in &pts {
            let u = lhs.eval(p).unwrap();
            let v = rhs.eval(p).unwrap();
            assert!((u - v).abs() < 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn commutator_of_rotation_pair() {
        // [x1 d2, x2 d1] = x1 d1 - x2 d2
        let sp = VariableSpace::new(2, 1);
        let x = VectorField::new(sp, vec![parse("0", &sp), parse("x1", &sp)]).unwrap();
        let y = VectorField::new(sp, vec![parse("x2", &sp), parse("0", &sp)]).unwrap();
        let b = commutator(&x, &y).unwrap();
        assert_eq!(b.component(0).to_string(), "x1");
        assert_eq!(b.component(1).to_string(), "-x2");
    }

    #[test]
    fn commutator_antisymmetry_and_jacobi() {
        let sp = VariableSpace::new(2, 0);
        let fields = [
            VectorField::new(sp, vec![parse("x1*x2", &sp), parse("x2^2", &sp)]).unwrap(),
            VectorField::new(sp, vec![parse("x2", &sp), parse("x1", &sp)]).unwrap(),
            VectorField::new(sp, vec![parse("1", &sp), parse("x1^2", &sp)]).unwrap(),
        ];
        let dom = Domain { x: vec![(-2.0, 2.0); 2], t: DEFAULT_T, w: vec![] };
        let pts = sample_points(&dom, &sp, 30, &[]).unwrap();
        let value_zero = |f: &VectorField| {
            for p in &pts {
                for c in f.components() {
                    assert!(c.eval(p).unwrap().abs() < 1e-8);
                }
            }
        };
        let add = |a: &VectorField, b: &VectorField| {
            VectorField::new(
                sp,
                (0..2)
                    .map(|i| {
                        Expression::add(a.component(i).clone(), b.component(i).clone())
                    })
                    .collect(),
            )
            .unwrap()
        };
        let (x, y, z) = (&fields[0], &fields[1], &fields[2]);
        // antisymmetry
        value_zero(&add(&commutator(x, y).unwrap(), &commutator(y, x).unwrap()));
        // Jacobi identity
        let j = add(
            &add(
                &commutator(x, &commutator(y, z).unwrap()).unwrap(),
                &commutator(y, &commutator(z, x).unwrap()).unwrap(),
            ),
            &commutator(z, &commutator(x, y).unwrap()).unwrap(),
        );
        value_zero(&j);
    }

    #[test]
    fn transport_operators_require_scalar_systems() {
        let sp = VariableSpace::new(2, 1);
        let sys = Sde::new(
            sp,
            vec![parse("0", &sp), parse("0", &sp)],
            vec![vec![parse("1", &sp)], vec![parse("1", &sp)]],
            None,
        )
        .unwrap();
        assert!(operator_l(&sys, &parse("x1", &sp)).is_err());
        assert!(operator_m(&sys, &parse("x1", &sp)).is_err());
    }

    #[test]
    fn transport_operators_scalar_forms() {
        // L e = e_t + (f - s s_x / 2) e_x ; M e = e_w + s e_x
        let sys = scalar_system("x1", "x1");
        let sp = sys.space();
        let e = parse("x1*exp(-w1 - t/2)", &sp);
        // L: e_t = -e/2; (f - s s_x/2) = x1 - x1/2 = x1/2; e_x = e/x1
        let l = operator_l(&sys, &e).unwrap();
        let m = operator_m(&sys, &e).unwrap();
        let pts = sample_points(sys.domain(), &sp, 30, &[&parse("1/x1", &sp)]).unwrap();
        for p in &pts {
            assert!(l.eval(p).unwrap().abs() < 1e-10);
            assert!(m.eval(p).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn halton_sampling_respects_domain_and_guards() {
        let sp = VariableSpace::new(1, 1);
        let dom = Domain { x: vec![(0.1, 2.1)], t: DEFAULT_T, w: vec![DEFAULT_W] };
        let guard = parse("1/(x1 - 1)", &sp);
        let pts = sample_points(&dom, &sp, 200, &[&guard]).unwrap();
        assert_eq!(pts.len(), 200);
        for p in &pts {
            assert!(p.x[0] >= 0.1 && p.x[0] <= 2.1);
            assert!(p.t >= 0.1 && p.t <= 2.0);
            assert!((p.x[0] - 1.0).abs() > GUARD_BAND);
        }
        // same call, same stream
        let again = sample_points(&dom, &sp, 200, &[&guard]).unwrap();
        assert_eq!(pts, again);
    }

    #[test]
    fn degenerate_sampling_is_reported() {
        let sp = VariableSpace::new(1, 0);
        let dom = Domain { x: vec![(0.0, 1e-9)], t: DEFAULT_T, w: vec![] };
        let guard = parse("1/x1", &sp);
        match sample_points(&dom, &sp, 50, &[&guard]) {
            Err(Error::DegenerateSampling(_)) => {}
            other => panic!("expected degenerate sampling, got {other:?}"),
        }
    }
}
