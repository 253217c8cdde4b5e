//! The worked-example registry.
//!
//! Eight model files ship with the crate (under `fixtures/`), each a
//! small stochastic system with named symmetries and, where one exists,
//! the straightening map and the transformed coefficients it produces.
//! Every recorded verdict re-verifies on load: [`run_case`] replays the
//! symmetry check, the compatibility check, the golden transform, and
//! the kernel memberships, and reports whether each outcome matches the
//! registry.
//!
//! The registry doubles as machine-checked documentation: copying a
//! fixture file and editing the coefficients is the intended way to set
//! up a new analysis.

use serde::Serialize;

use crate::error::Error;
use crate::expr::Expression;
use crate::model::file::ModelFile;
use crate::model::sample_points;
use crate::symcheck::{
    check_compatibility, check_kernels, check_symmetry, CheckOptions,
    CompatibilityCheck, KernelCheck, SymmetryCheck,
};
use crate::transform::{
    build_straightening_map, solve_beta, transform, BetaOptions, ChangeOfVariables,
    Direction,
};

/// Sampled-equality tolerance for golden transformed coefficients.
pub const GOLDEN_TOL: f64 = 1e-7;
/// Points drawn for each golden comparison.
const GOLDEN_POINTS: usize = 60;

/// A scalar observable with its expected transport-kernel memberships.
#[derive(Debug, Clone, Copy)]
pub struct KernelExpectation {
    pub observable: &'static str,
    pub in_time_kernel: bool,
    pub in_noise_kernel: bool,
}

/// One registered worked example.
#[derive(Debug, Clone, Copy)]
pub struct FixtureCase {
    /// Registry key (also the file stem).
    pub name: &'static str,
    /// One-line description of what the case exercises.
    pub title: &'static str,
    /// The model file content.
    pub text: &'static str,
    /// The symmetry the recorded verdicts are about.
    pub symmetry: &'static str,
    /// Map used for the golden transform; `None` builds the map from the
    /// symmetry (straightening integral plus solved completion).
    pub map: Option<&'static str>,
    /// Linear completion coefficient when the map is built.
    pub beta_c1: f64,
    /// Recorded verdict of the symmetry check.
    pub expect_symmetry: bool,
    /// Recorded verdict of the compatibility check; `None` when the
    /// check does not apply (multi-state systems).
    pub expect_compatibility: Option<bool>,
    /// Golden transformed drift, one expression per state, written in
    /// the target frame. `None` skips the transform stage.
    pub transformed_drift: Option<&'static [&'static str]>,
    /// Golden transformed diffusion rows, same frame.
    pub transformed_diffusion: Option<&'static [&'static [&'static str]]>,
    /// Observable with expected kernel memberships, where recorded.
    pub kernel: Option<KernelExpectation>,
    /// Start state for simulation-based validation.
    pub start: &'static [f64],
    /// Horizon for simulation-based validation.
    pub t_end: f64,
}

/// All registered cases, in registry order.
pub fn all() -> Vec<FixtureCase> {
    vec![
        FixtureCase {
            name: "ex1",
            title: "scalar exponential equation, deterministic shift symmetry",
            text: include_str!("../fixtures/ex1.sde"),
            symmetry: "shift",
            map: Some("integrating"),
            beta_c1: 0.0,
            expect_symmetry: true,
            expect_compatibility: Some(true),
            transformed_drift: Some(&["1"]),
            transformed_diffusion: Some(&[&["1"]]),
            kernel: None,
            start: &[1.0],
            t_end: 1.0,
        },
        FixtureCase {
            name: "ex2",
            title: "involved scalar equation collapsing to exp(-t) drift",
            text: include_str!("../fixtures/ex2.sde"),
            symmetry: "bend",
            map: Some("integrating"),
            beta_c1: 0.0,
            expect_symmetry: true,
            expect_compatibility: Some(true),
            transformed_drift: Some(&["exp(-t)"]),
            transformed_diffusion: Some(&[&["1"]]),
            kernel: None,
            start: &[1.0],
            t_end: 1.0,
        },
        FixtureCase {
            name: "ex3",
            title: "two-state system splitting off a reconstruction equation",
            text: include_str!("../fixtures/ex3.sde"),
            symmetry: "vertical",
            map: Some("integrating"),
            beta_c1: 0.0,
            expect_symmetry: true,
            expect_compatibility: None,
            transformed_drift: Some(&["x1^2", "-x1"]),
            transformed_diffusion: Some(&[&["1", "0"], &["x1", "1"]]),
            kernel: None,
            start: &[0.0, 0.0],
            t_end: 0.25,
        },
        FixtureCase {
            name: "ex4",
            title: "constant-coefficient linear system, abelian symmetry pair",
            text: include_str!("../fixtures/ex4.sde"),
            symmetry: "lift",
            map: Some("integrating"),
            beta_c1: 0.0,
            expect_symmetry: true,
            expect_compatibility: None,
            transformed_drift: Some(&["exp(-t)", "2"]),
            transformed_diffusion: Some(&[&["exp(-t)", "exp(-t)/2"], &["0", "1"]]),
            kernel: None,
            start: &[0.0, 0.0],
            t_end: 1.0,
        },
        FixtureCase {
            name: "ex5",
            title: "time-decaying shift symmetry with a tuned linear completion",
            text: include_str!("../fixtures/ex5.sde"),
            symmetry: "timefall",
            map: Some("integrating"),
            beta_c1: -1.0,
            expect_symmetry: true,
            expect_compatibility: Some(true),
            transformed_drift: Some(&["t^2/2"]),
            transformed_diffusion: Some(&[&["t"]]),
            kernel: None,
            start: &[1.0],
            t_end: 1.0,
        },
        FixtureCase {
            name: "ex6",
            title: "noise-involving symmetry with a solved additive completion",
            text: include_str!("../fixtures/ex6.sde"),
            symmetry: "drifting",
            map: None,
            beta_c1: 0.0,
            expect_symmetry: true,
            expect_compatibility: Some(true),
            transformed_drift: Some(&["-1 - t"]),
            transformed_diffusion: Some(&[&["1"]]),
            kernel: None,
            start: &[1.0],
            t_end: 1.0,
        },
        FixtureCase {
            name: "ex7",
            title: "geometric equation with a whole family of symmetries",
            text: include_str!("../fixtures/ex7.sde"),
            symmetry: "family",
            map: None,
            beta_c1: 0.0,
            expect_symmetry: true,
            expect_compatibility: Some(true),
            transformed_drift: None,
            transformed_diffusion: None,
            kernel: Some(KernelExpectation {
                observable: "x1*exp(-w1 - t/2)",
                in_time_kernel: true,
                in_noise_kernel: true,
            }),
            start: &[1.0],
            t_end: 1.0,
        },
        FixtureCase {
            name: "ex8",
            title: "single symmetry obstructed by the compatibility condition",
            text: include_str!("../fixtures/ex8.sde"),
            symmetry: "lone",
            map: None,
            beta_c1: 0.0,
            expect_symmetry: true,
            expect_compatibility: Some(false),
            transformed_drift: None,
            transformed_diffusion: None,
            kernel: Some(KernelExpectation {
                observable: "(x1 - 2)*exp(t/2)",
                in_time_kernel: true,
                in_noise_kernel: false,
            }),
            start: &[1.0],
            t_end: 1.0,
        },
    ]
}

/// Looks a case up by registry key.
pub fn by_name(name: &str) -> Result<FixtureCase, Error> {
    all()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Missing(format!("no fixture named `{name}`")))
}

/// Outcome of the golden-transform stage of a case run.
#[derive(Debug, Clone, Serialize)]
pub struct GoldenComparison {
    pub points: usize,
    pub tol: f64,
    pub max_mismatch: f64,
    pub matches: bool,
}

/// Outcome of replaying one registered case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub name: String,
    pub title: String,
    pub symmetry: SymmetryCheck,
    pub symmetry_as_recorded: bool,
    pub compatibility: Option<CompatibilityCheck>,
    pub compatibility_as_recorded: bool,
    pub golden: Option<GoldenComparison>,
    pub kernel: Option<KernelCheck>,
    pub kernel_as_recorded: bool,
    /// Every stage reproduced its recorded verdict.
    pub ok: bool,
}

/// The change of variables a case uses for its golden transform: the
/// named map when the file ships one, otherwise the straightening map
/// built from the symmetry with the solved additive completion.
pub fn case_cov(
    case: &FixtureCase,
    file: &ModelFile,
) -> Result<ChangeOfVariables, Error> {
    let sys = file.sde();
    let space = sys.space();
    match case.map {
        Some(name) => ChangeOfVariables::from_map_spec(space, file.map(Some(name))?),
        None => {
            let field = file.symmetry(Some(case.symmetry))?;
            let built = build_straightening_map(sys, field)?;
            let Some(xi) = built.symbolic.clone() else {
                return Err(Error::NoAntiderivative(format!(
                    "fixture `{}` needs a closed-form straightening map",
                    case.name
                )));
            };
            let opts = BetaOptions { c1: case.beta_c1, b_of_t: None };
            let completion = solve_beta(sys, &xi, &opts)?;
            built.into_cov(Some(completion.b), &space, sys.domain())
        }
    }
}

/// Replays every recorded verdict of one case.
pub fn run_case(case: &FixtureCase, opts: &CheckOptions) -> Result<CaseOutcome, Error> {
    let file = ModelFile::parse(case.text)?;
    let sys = file.sde();
    let field = file.symmetry(Some(case.symmetry))?;

    let symmetry = check_symmetry(sys, field, opts)?;
    let symmetry_as_recorded = symmetry.passes == case.expect_symmetry;

    let (compatibility, compatibility_as_recorded) = match case.expect_compatibility {
        Some(expected) => {
            let check = check_compatibility(sys, field, opts)?;
            let as_recorded = check.passes == expected;
            (Some(check), as_recorded)
        }
        None => (None, true),
    };

    let golden = match (case.transformed_drift, case.transformed_diffusion) {
        (Some(drift), Some(diffusion)) => {
            let cov = case_cov(case, &file)?;
            Some(compare_golden(sys, &cov, drift, diffusion)?)
        }
        _ => None,
    };

    let (kernel, kernel_as_recorded) = match case.kernel {
        Some(expected) => {
            let obs = Expression::parse(expected.observable, &sys.space())?;
            let check = check_kernels(sys, &obs, opts)?;
            let as_recorded = check.in_l_kernel == expected.in_time_kernel
                && check.in_m_kernel == expected.in_noise_kernel;
            (Some(check), as_recorded)
        }
        None => (None, true),
    };

    let ok = symmetry_as_recorded
        && compatibility_as_recorded
        && golden.as_ref().is_none_or(|g| g.matches)
        && kernel_as_recorded;
    Ok(CaseOutcome {
        name: case.name.into(),
        title: case.title.into(),
        symmetry,
        symmetry_as_recorded,
        compatibility,
        compatibility_as_recorded,
        golden,
        kernel,
        kernel_as_recorded,
        ok,
    })
}

/// Transforms the system through `cov` and compares the result with the
/// golden coefficients by sampled equality: source-domain points are
/// mapped through the forward map and both sides are evaluated there, in
/// the same (target) variables.
pub fn compare_golden(
    sys: &crate::model::Sde,
    cov: &ChangeOfVariables,
    golden_drift: &[&str],
    golden_diffusion: &[&[&str]],
) -> Result<GoldenComparison, Error> {
    let n = sys.n();
    let m = sys.m();
    if golden_drift.len() != n || golden_diffusion.len() != n {
        return Err(Error::Dimension(
            "golden coefficient table does not match the system".into(),
        ));
    }
    let out = transform(sys, cov, Direction::Push)?;
    let space = sys.space();
    let mut golden: Vec<(Expression, &Expression)> = Vec::with_capacity(n * (1 + m));
    for i in 0..n {
        golden.push((Expression::parse(golden_drift[i], &space)?, out.drift(i)));
        for k in 0..m {
            golden.push((
                Expression::parse(golden_diffusion[i][k], &space)?,
                out.diffusion(i, k),
            ));
        }
    }

    let mut guards: Vec<&Expression> = Vec::new();
    guards.extend(cov.forward().iter());
    guards.extend(sys.coefficients());
    let pts = sample_points(sys.domain(), &space, GOLDEN_POINTS, &guards)?;
    let mut max_mismatch = 0.0f64;
    let mut compared = 0usize;
    for p in &pts {
        let Ok(q) = cov.apply_point(p) else { continue };
        let mut ok = true;
        let mut local = 0.0f64;
        for (want, got) in &golden {
            let (Some(wv), Some(gv)) =
                (want.eval_guarded(&q, 0.0), got.eval_guarded(&q, 0.0))
            else {
                ok = false;
                break;
            };
            if !wv.is_finite() || !gv.is_finite() {
                ok = false;
                break;
            }
            local = local.max((gv - wv).abs() / (1.0 + wv.abs()));
        }
        if ok {
            compared += 1;
            max_mismatch = max_mismatch.max(local);
        }
    }
    if compared < GOLDEN_POINTS / 2 {
        return Err(Error::DegenerateSampling(format!(
            "only {compared} points survived the golden comparison"
        )));
    }
    Ok(GoldenComparison {
        points: compared,
        tol: GOLDEN_TOL,
        max_mismatch,
        matches: max_mismatch < GOLDEN_TOL,
    })
}

/// Parses a case's model file; a convenience for callers that need the
/// system or the named objects alongside the registry data.
pub fn load(case: &FixtureCase) -> Result<ModelFile, Error> {
    ModelFile::parse(case.text)
}

/// Parses golden coefficients in the case's own space (helper for
/// simulation-based validations that need the transformed system).
pub fn golden_system(case: &FixtureCase) -> Result<Option<crate::model::Sde>, Error> {
    let (Some(drift), Some(diffusion)) =
        (case.transformed_drift, case.transformed_diffusion)
    else {
        return Ok(None);
    };
    let file = ModelFile::parse(case.text)?;
    let sys = file.sde();
    let space = sys.space();
    let drift: Vec<Expression> = drift
        .iter()
        .map(|s| Expression::parse(s, &space))
        .collect::<Result<_, _>>()?;
    let diffusion: Vec<Vec<Expression>> = diffusion
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| Expression::parse(s, &space))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(Some(crate::model::Sde::new(space, drift, diffusion, None)?))
}
