//! Symmetry verification.
//!
//! A vector field `X = phi_i d/dx_i` generates a symmetry of an SDE when
//! two families of residuals vanish identically:
//!
//! ```text
//! res1_i    = d(phi_i)/dt + f_j d(phi_i)/dx_j - phi_j d(f_i)/dx_j
//!             + Delta(phi_i) / 2
//! res2_i_k  = d(phi_i)/dw_k + s_jk d(phi_i)/dx_j - phi_j d(s_ik)/dx_j
//! ```
//!
//! with `Delta` the diffusion Laplacian from [`crate::model::ito_laplacian`].
//! For fields and coefficients free of noise variables the `w`-derivative
//! terms vanish on their own, so the same formulas cover deterministic and
//! random candidates.
//!
//! Verification is by sampling: residuals are evaluated on a guarded
//! low-discrepancy point set and compared against `tol * (1 + max|phi|)`.
//! This module also searches coefficient combinations of an ansatz basis
//! (null space of the sampled residual matrix), checks the compatibility
//! condition a random symmetry needs before it can straighten an equation,
//! tests kernel membership under the scalar transport operators, and
//! verifies that an ordered generator chain closes bracket-wise onto its
//! leading part (solvability).

use serde::Serialize;

use crate::error::Error;
use crate::expr::{Expression, Point, Var};
use crate::model::{
    commutator, ito_laplacian, operator_l, operator_m, sample_points, Domain, Sde,
    SolvableChain, VectorField,
};

/// Sampling parameters shared by every check in this module.
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Number of sample points for direct checks.
    pub points: usize,
    /// Relative residual tolerance.
    pub tol: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { points: 200, tol: 1e-8 }
    }
}

/// Outcome of a direct symmetry check.
#[derive(Debug, Clone, Serialize)]
pub struct SymmetryCheck {
    /// Whether the candidate (or the system) involves noise variables.
    pub random: bool,
    /// Sample points used.
    pub points: usize,
    /// Relative tolerance the verdict used.
    pub tol: f64,
    /// `1 + max |phi_i|` over the sample, the residual scale.
    pub scale: f64,
    /// Per-state maxima of the drift-side residuals.
    pub drift_residual_max: Vec<f64>,
    /// Per-(state, noise) maxima of the diffusion-side residuals.
    pub diffusion_residual_max: Vec<Vec<f64>>,
    /// Largest residual overall.
    pub max_residual: f64,
    /// `max_residual < tol * scale`.
    pub passes: bool,
}

/// The residual expressions whose identical vanishing makes `field` a
/// symmetry of `sys`: one drift-side residual per state, one
/// diffusion-side residual per (state, noise) pair.
pub fn symmetry_residuals(
    sys: &Sde,
    field: &VectorField,
) -> Result<(Vec<Expression>, Vec<Vec<Expression>>), Error> {
    if sys.space() != field.space() {
        return Err(Error::Dimension(
            "field and system live in different spaces".into(),
        ));
    }
    let n = sys.n();
    let m = sys.m();
    let mut res1 = Vec::with_capacity(n);
    for i in 0..n {
        let phi_i = field.component(i);
        let mut acc = phi_i.derivative(Var::Time);
        for j in 0..n {
            acc = Expression::add(
                acc,
                Expression::sub(
                    Expression::mul(
                        sys.drift(j).clone(),
                        phi_i.derivative(Var::State(j)),
                    ),
                    Expression::mul(
                        field.component(j).clone(),
                        sys.drift(i).derivative(Var::State(j)),
                    ),
                ),
            );
        }
        acc = Expression::add(
            acc,
            Expression::mul(Expression::num(0.5), ito_laplacian(sys, phi_i)),
        );
        res1.push(acc.simplify());
    }
    let mut res2 = Vec::with_capacity(n);
    for i in 0..n {
        let phi_i = field.component(i);
        let mut row = Vec::with_capacity(m);
        for k in 0..m {
            let mut acc = phi_i.derivative(Var::Noise(k));
            for j in 0..n {
                acc = Expression::add(
                    acc,
                    Expression::sub(
                        Expression::mul(
                            sys.diffusion(j, k).clone(),
                            phi_i.derivative(Var::State(j)),
                        ),
                        Expression::mul(
                            field.component(j).clone(),
                            sys.diffusion(i, k).derivative(Var::State(j)),
                        ),
                    ),
                );
            }
            row.push(acc.simplify());
        }
        res2.push(row);
    }
    Ok((res1, res2))
}

/// Checks one candidate field against the system by sampled residuals.
pub fn check_symmetry(
    sys: &Sde,
    field: &VectorField,
    opts: &CheckOptions,
) -> Result<SymmetryCheck, Error> {
    let (res1, res2) = symmetry_residuals(sys, field)?;
    let space = sys.space();

    let mut guards: Vec<&Expression> = Vec::new();
    guards.extend(sys.coefficients());
    guards.extend(field.components());
    guards.extend(res1.iter());
    guards.extend(res2.iter().flatten());
    let pts = sample_points(sys.domain(), &space, opts.points, &guards)?;

    let max_abs = |e: &Expression, pts: &[Point]| -> Result<f64, Error> {
        let mut max = 0.0f64;
        for p in pts {
            max = max.max(e.eval(p)?.abs());
        }
        Ok(max)
    };

    let mut scale = 1.0f64;
    for c in field.components() {
        scale = scale.max(1.0 + max_abs(c, &pts)?);
    }
    let drift_residual_max: Vec<f64> = res1
        .iter()
        .map(|e| max_abs(e, &pts))
        .collect::<Result<_, _>>()?;
    let diffusion_residual_max: Vec<Vec<f64>> = res2
        .iter()
        .map(|row| row.iter().map(|e| max_abs(e, &pts)).collect())
        .collect::<Result<_, _>>()?;

    let max_residual = drift_residual_max
        .iter()
        .chain(diffusion_residual_max.iter().flatten())
        .fold(0.0f64, |a, &b| a.max(b));
    Ok(SymmetryCheck {
        random: field.is_random() || sys.coefficients_have_noise(),
        points: pts.len(),
        tol: opts.tol,
        scale,
        drift_residual_max,
        diffusion_residual_max,
        max_residual,
        passes: max_residual < opts.tol * scale,
    })
}

/// One coefficient vector found by [`search_symmetry_ansatz`], with the
/// combined field it generates and that field's own verification.
#[derive(Debug, Clone, Serialize)]
pub struct AnsatzCandidate {
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub field: VectorField,
    pub check: SymmetryCheck,
}

/// Outcome of a coefficient search over an ansatz basis.
#[derive(Debug, Clone, Serialize)]
pub struct AnsatzSearch {
    pub basis_size: usize,
    pub rows: usize,
    pub candidates: Vec<AnsatzCandidate>,
}

/// Singular values below this fraction of the largest count as zero when
/// extracting the sampled null space.
const NULLSPACE_CUTOFF: f64 = 1e-8;
/// Candidates from the null space are re-verified at this looser tolerance
/// (they carry accumulated floating error from the SVD).
const REVERIFY_TOL: f64 = 1e-7;

/// Searches for coefficient vectors `c` making `sum_a c_a * basis_a` a
/// symmetry of the system.
///
/// Residuals are linear in the field, so candidates are exactly the null
/// space of the matrix of per-basis residual samples (`50 * basis_size`
/// points, every residual component a row). Each null vector is normalized
/// (unit length, first significant entry positive), its combined field is
/// re-verified directly, and combinations that cancel to the zero field
/// are dropped.
pub fn search_symmetry_ansatz(
    sys: &Sde,
    basis: &[VectorField],
    opts: &CheckOptions,
) -> Result<AnsatzSearch, Error> {
    let k = basis.len();
    if k == 0 {
        return Err(Error::Invalid("empty ansatz basis".into()));
    }
    let space = sys.space();
    for b in basis {
        if b.space() != space {
            return Err(Error::Dimension(
                "ansatz basis field does not match the system's space".into(),
            ));
        }
    }
    let n = sys.n();
    let m = sys.m();
    let comps_per_point = n + n * m;

    // residual expressions per basis field, flattened
    let mut residuals: Vec<Vec<Expression>> = Vec::with_capacity(k);
    for b in basis {
        let (res1, res2) = symmetry_residuals(sys, b)?;
        let mut flat = res1;
        flat.extend(res2.into_iter().flatten());
        residuals.push(flat);
    }

    let mut guards: Vec<&Expression> = Vec::new();
    guards.extend(sys.coefficients());
    for b in basis {
        guards.extend(b.components());
    }
    guards.extend(residuals.iter().flatten());
    let count = 50 * k;
    let pts = sample_points(sys.domain(), &space, count, &guards)?;

    let rows = pts.len() * comps_per_point;
    if rows < k {
        return Err(Error::DegenerateSampling(format!(
            "{rows} residual rows for {k} unknowns"
        )));
    }
    let mut data = Vec::with_capacity(rows * k);
    for p in &pts {
        for c in 0..comps_per_point {
            for flat in &residuals {
                data.push(flat[c].eval(p)?);
            }
        }
    }
    let a = nalgebra::DMatrix::from_row_slice(rows, k, &data);
    let svd = a.svd(false, true);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().fold(0.0f64, |acc, &s| acc.max(s));
    let v_t = svd
        .v_t
        .as_ref()
        .expect("SVD with right singular vectors requested");

    let mut raw: Vec<Vec<f64>> = Vec::new();
    if sigma_max <= 0.0 {
        // every direction annihilates the residuals: the basis fields are
        // all symmetries already
        for i in 0..k {
            let mut c = vec![0.0; k];
            c[i] = 1.0;
            raw.push(c);
        }
    } else {
        for (i, &s) in sigma.iter().enumerate() {
            if s < NULLSPACE_CUTOFF * sigma_max {
                raw.push(v_t.row(i).iter().copied().collect());
            }
        }
    }

    let mut candidates = Vec::new();
    for mut c in raw {
        normalize_direction(&mut c);
        let field = combine(&space, basis, &c)?;
        // skip combinations that cancel to the zero field
        let zero_guards: Vec<&Expression> = field.components().iter().collect();
        let probe = sample_points(sys.domain(), &space, 20, &zero_guards)?;
        let mag = field
            .components()
            .iter()
            .flat_map(|e| probe.iter().map(move |p| e.eval(p).map(f64::abs)))
            .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))?;
        if mag < 1e-9 {
            continue;
        }
        let check = check_symmetry(
            sys,
            &field,
            &CheckOptions { points: opts.points, tol: REVERIFY_TOL },
        )?;
        if check.passes {
            candidates.push(AnsatzCandidate { coefficients: c, field, check });
        }
    }
    Ok(AnsatzSearch { basis_size: k, rows, candidates })
}

fn normalize_direction(c: &mut [f64]) {
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in c.iter_mut() {
            *v /= norm;
        }
    }
    if let Some(first) = c.iter().find(|v| v.abs() > 1e-9) {
        if *first < 0.0 {
            for v in c.iter_mut() {
                *v = -*v;
            }
        }
    }
}

fn combine(
    space: &crate::expr::VariableSpace,
    basis: &[VectorField],
    c: &[f64],
) -> Result<VectorField, Error> {
    let n = space.n;
    let mut comps = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = Expression::zero();
        for (b, &coeff) in basis.iter().zip(c) {
            acc = Expression::add(
                acc,
                Expression::mul(Expression::num(coeff), b.component(i).clone()),
            );
        }
        comps.push(acc.simplify());
    }
    VectorField::new(*space, comps)
}

/// Outcome of the compatibility check for a scalar random symmetry.
#[derive(Debug, Clone, Serialize)]
pub struct CompatibilityCheck {
    pub points: usize,
    pub tol: f64,
    /// `1 + max |gamma|`, the residual scale (`gamma = d(1/phi)/dw`).
    pub scale: f64,
    pub max_residual: f64,
    pub passes: bool,
    /// True when `gamma` vanishes identically (noise-free `phi`), which
    /// satisfies the condition with no sampling needed.
    pub trivial: bool,
}

/// Checks whether a scalar symmetry's noise dependence is integrable —
/// the condition for the straightening construction to stay within
/// standard (non-anticipating) changes of variables:
///
/// ```text
/// gamma := d(1/phi)/dw
/// 0 =? s*g_t + s_t*g - f*g_w - (s*g_ww + s^2*g_xw) / 2
/// ```
///
/// Fields free of noise give `gamma = 0` and pass trivially.
pub fn check_compatibility(
    sys: &Sde,
    field: &VectorField,
    opts: &CheckOptions,
) -> Result<CompatibilityCheck, Error> {
    if sys.n() != 1 || sys.m() != 1 {
        return Err(Error::Dimension(
            "compatibility check needs a scalar single-noise system".into(),
        ));
    }
    if sys.space() != field.space() {
        return Err(Error::Dimension(
            "field and system live in different spaces".into(),
        ));
    }
    let phi = field.component(0);
    let gamma = Expression::div(Expression::one(), phi.clone())
        .derivative(Var::Noise(0))
        .simplify();
    if gamma.is_zero() {
        return Ok(CompatibilityCheck {
            points: 0,
            tol: opts.tol,
            scale: 1.0,
            max_residual: 0.0,
            passes: true,
            trivial: true,
        });
    }
    let s = sys.diffusion(0, 0);
    let f = sys.drift(0);
    let x = Var::State(0);
    let w = Var::Noise(0);
    let residual = Expression::sub(
        Expression::add(
            Expression::mul(s.clone(), gamma.derivative(Var::Time)),
            Expression::mul(s.derivative(Var::Time), gamma.clone()),
        ),
        Expression::add(
            Expression::mul(f.clone(), gamma.derivative(w)),
            Expression::mul(
                Expression::num(0.5),
                Expression::add(
                    Expression::mul(s.clone(), gamma.derivative(w).derivative(w)),
                    Expression::mul(
                        Expression::mul(s.clone(), s.clone()),
                        gamma.derivative(x).derivative(w),
                    ),
                ),
            ),
        ),
    )
    .simplify();

    let guards: Vec<&Expression> = vec![s, f, phi, &gamma, &residual];
    let pts = sample_points(sys.domain(), &sys.space(), opts.points, &guards)?;
    let mut scale = 1.0f64;
    let mut max_residual = 0.0f64;
    for p in &pts {
        scale = scale.max(1.0 + gamma.eval(p)?.abs());
        max_residual = max_residual.max(residual.eval(p)?.abs());
    }
    Ok(CompatibilityCheck {
        points: pts.len(),
        tol: opts.tol,
        scale,
        max_residual,
        passes: max_residual < opts.tol * scale,
        trivial: false,
    })
}

/// Outcome of the scalar transport-kernel membership test.
#[derive(Debug, Clone, Serialize)]
pub struct KernelCheck {
    pub points: usize,
    pub tol: f64,
    pub scale: f64,
    /// Largest sampled value of the time-transport image.
    pub l_residual_max: f64,
    /// Largest sampled value of the noise-transport image.
    pub m_residual_max: f64,
    /// Observable is annihilated by the time-transport operator.
    pub in_l_kernel: bool,
    /// Observable is annihilated by the noise-transport operator.
    pub in_m_kernel: bool,
}

/// Tests whether a scalar observable lies in the kernels of the two
/// transport operators `L = d/dt + (f - s s_x / 2) d/dx` and
/// `M = d/dw + s d/dx`. Joint membership signals that the observable is
/// conserved along every realization, the seed of a multi-parameter
/// family of random symmetries.
pub fn check_kernels(
    sys: &Sde,
    observable: &Expression,
    opts: &CheckOptions,
) -> Result<KernelCheck, Error> {
    let l_img = operator_l(sys, observable)?.simplify();
    let m_img = operator_m(sys, observable)?.simplify();
    let guards: Vec<&Expression> = vec![observable, &l_img, &m_img];
    let pts = sample_points(sys.domain(), &sys.space(), opts.points, &guards)?;
    let mut scale = 1.0f64;
    let mut l_max = 0.0f64;
    let mut m_max = 0.0f64;
    for p in &pts {
        scale = scale.max(1.0 + observable.eval(p)?.abs());
        l_max = l_max.max(l_img.eval(p)?.abs());
        m_max = m_max.max(m_img.eval(p)?.abs());
    }
    Ok(KernelCheck {
        points: pts.len(),
        tol: opts.tol,
        scale,
        l_residual_max: l_max,
        m_residual_max: m_max,
        in_l_kernel: l_max < opts.tol * scale,
        in_m_kernel: m_max < opts.tol * scale,
    })
}

/// Least-squares fit of one bracket onto the leading generators.
#[derive(Debug, Clone, Serialize)]
pub struct BracketFit {
    /// Bracket `[chain[a], chain[b]]`, zero-based indices with `a < b`.
    pub a: usize,
    pub b: usize,
    /// The bracket must lie in the span of `chain[..span]`.
    pub span: usize,
    pub coefficients: Vec<f64>,
    pub residual_max: f64,
    pub ok: bool,
}

/// Outcome of the chain solvability check.
#[derive(Debug, Clone, Serialize)]
pub struct ChainCheck {
    pub size: usize,
    pub points: usize,
    pub tol: f64,
    pub brackets: Vec<BracketFit>,
    pub passes: bool,
}

/// Bracket fits use a looser tolerance than direct residual checks: the
/// fitted coefficients carry least-squares conditioning error.
const CHAIN_FIT_TOL: f64 = 1e-6;

/// Verifies the ordered chain condition: for every `k`, brackets of the
/// first `k` generators with generator `k+1` stay in the span of the
/// first `k`. Span membership is decided by least squares over sampled
/// field values, and the fitted structure coefficients are reported.
pub fn check_solvable_chain(
    chain: &SolvableChain,
    domain: &Domain,
    opts: &CheckOptions,
) -> Result<ChainCheck, Error> {
    let fields = chain.fields();
    let r = fields.len();
    let space = fields[0].space();
    let n = space.n;

    let mut guards: Vec<Expression> = Vec::new();
    for f in fields {
        guards.extend(f.components().iter().cloned());
    }
    let mut brackets_exprs: Vec<(usize, usize, VectorField)> = Vec::new();
    for b in 1..r {
        for a in 0..b {
            let br = commutator(&fields[a], &fields[b])?;
            guards.extend(br.components().iter().cloned());
            brackets_exprs.push((a, b, br));
        }
    }
    let guard_refs: Vec<&Expression> = guards.iter().collect();
    let count = opts.points.max(50 * r);
    let pts = sample_points(domain, &space, count, &guard_refs)?;

    // sampled values of every chain field, reused across fits
    let mut field_vals: Vec<Vec<f64>> = Vec::with_capacity(r);
    for f in fields {
        let mut vals = Vec::with_capacity(pts.len() * n);
        for p in &pts {
            for i in 0..n {
                vals.push(f.component(i).eval(p)?);
            }
        }
        field_vals.push(vals);
    }

    let mut fits = Vec::new();
    let mut passes = true;
    for (a, b, br) in &brackets_exprs {
        let span = *b; // span of chain[..b]
        let rows = pts.len() * n;
        let mut rhs = Vec::with_capacity(rows);
        for p in &pts {
            for i in 0..n {
                rhs.push(br.component(i).eval(p)?);
            }
        }
        let rhs_scale = 1.0 + rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mut data = Vec::with_capacity(rows * span);
        for row in 0..rows {
            for fv in field_vals.iter().take(span) {
                data.push(fv[row]);
            }
        }
        let mat = nalgebra::DMatrix::from_row_slice(rows, span, &data);
        let bvec = nalgebra::DVector::from_vec(rhs.clone());
        let svd = mat.clone().svd(true, true);
        let sigma_max = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
        let coeffs = svd
            .solve(&bvec, 1e-12 * sigma_max.max(1.0))
            .map_err(|e| Error::Invalid(format!("bracket fit failed: {e}")))?;
        let resid = &mat * &coeffs - &bvec;
        let residual_max = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ok = residual_max < CHAIN_FIT_TOL * rhs_scale;
        passes &= ok;
        fits.push(BracketFit {
            a: *a,
            b: *b,
            span,
            coefficients: coeffs.iter().copied().collect(),
            residual_max,
            ok,
        });
    }
    Ok(ChainCheck {
        size: r,
        points: pts.len(),
        tol: CHAIN_FIT_TOL,
        brackets: fits,
        passes,
    })
}
