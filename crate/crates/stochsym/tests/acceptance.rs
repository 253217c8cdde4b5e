//! Acceptance gate: one test per shipped guarantee, so `cargo test --test
//! acceptance` prints exactly one pass/fail line per guarantee.
//!
//! 1. The bundled examples reproduce their recorded verdicts within the
//!    stated residual bounds, in under 30 s.
//! 2. The golden transformed systems match by sampled coefficient
//!    equality at 1e-7, compared in the target variables.
//! 3. Twenty randomized monotone scrambles of integrable scalar seeds
//!    admit the pushed-forward symmetry and integrate back to the seed
//!    (diffusion exactly, drift up to the additive-time-function freedom
//!    of the straightening map), in under 60 s.
//! 4. Shared-noise pathwise validation converges over the halving ladder
//!    dt = 1e-2 .. 1.25e-3 with factor >= 1.2 and a finest median below
//!    1e-2; the transformed laws pass a KS test at 10^4 paths while a
//!    corrupted-variance control fails it; all in under 120 s.
//! 5. The separable multiplicative form is detected exactly for the
//!    proportional cases and rejected otherwise, and the conserved-
//!    observable kernel verdicts reproduce.
//! 6. Two runs of the full machine-readable suite at the same seed are
//!    byte-identical.

use std::time::{Duration, Instant};

use stochsym::expr::{Expression, Point, Var, VariableSpace};
use stochsym::fixtures::{self, FixtureCase};
use stochsym::mc::{
    law_check, pathwise_check, simulate, ExactLaw, PathwiseOptions, SimGrid,
};
use stochsym::model::{Domain, Sde, VectorField};
use stochsym::reduce::{integrate_scalar, separable_detect, ScalarTail};
use stochsym::symcheck::{check_symmetry, CheckOptions};
use stochsym::transform::{
    push_field, transform, BetaOptions, ChangeOfVariables, Direction,
};

fn parse(text: &str, sp: &VariableSpace) -> Expression {
    Expression::parse(text, sp).unwrap()
}

fn case(name: &str) -> FixtureCase {
    fixtures::by_name(name).unwrap()
}

// ---- 1: recorded verdicts ---------------------------------------------------

#[test]
fn example_suite_reproduces_recorded_verdicts() {
    let started = Instant::now();
    let opts = CheckOptions::default();
    for c in fixtures::all() {
        let outcome = fixtures::run_case(&c, &opts).unwrap();
        assert!(
            outcome.symmetry.passes,
            "{}: symmetry residual {:.3e}",
            c.name, outcome.symmetry.max_residual
        );
        if c.name == "ex8" {
            // the lone obstructed case: the symmetry holds but the
            // compatibility condition fails decisively
            let compat = outcome.compatibility.as_ref().unwrap();
            assert!(!compat.passes, "{}: compatibility unexpectedly passed", c.name);
            assert!(
                compat.max_residual > 0.1,
                "{}: obstruction residual {:.3e} is not decisive",
                c.name, compat.max_residual
            );
        } else {
            assert!(
                outcome.symmetry.max_residual < 1e-8 * outcome.symmetry.scale,
                "{}: residual {:.3e} vs scale {:.3e}",
                c.name, outcome.symmetry.max_residual, outcome.symmetry.scale
            );
            if let Some(compat) = &outcome.compatibility {
                assert!(compat.passes, "{}: compatibility failed", c.name);
            }
        }
        assert!(outcome.ok, "{}: some recorded verdict did not reproduce", c.name);
    }
    assert!(
        started.elapsed() < Duration::from_secs(30),
        "suite took {:?}",
        started.elapsed()
    );
}

// ---- 2: golden transforms ---------------------------------------------------

#[test]
fn transform_goldens_match_in_target_variables() {
    let opts = CheckOptions::default();
    for name in ["ex1", "ex2", "ex3", "ex4", "ex5", "ex6"] {
        let outcome = fixtures::run_case(&case(name), &opts).unwrap();
        let golden = outcome
            .golden
            .unwrap_or_else(|| panic!("{name}: no golden comparison ran"));
        assert!(
            golden.matches && golden.max_mismatch < 1e-7,
            "{name}: transformed coefficients deviate by {:.3e} over {} points",
            golden.max_mismatch, golden.points
        );
    }
}

// ---- 3: randomized monotone scrambles ---------------------------------------
//
// Generator family: a seed equation dy = f(t) dt + s(t) dw (f, s drawn
// from fixed pools) is pushed through x = M(y, t), a composition of one
// to three monotone stages drawn from
//   affine   x = a(t) y + b(t)   with a > 0 on the time window,
//   exp      x = exp(y),
//   log      x = log(y)          (only when the running image is positive).
// Stage validity is tracked through per-time image intervals; a stage
// whose draw is invalid falls back to the always-valid doubling map, and
// a scramble whose final image intersection is too thin is redrawn. All
// draws come from one fixed-seed splitmix64 stream.

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Stage {
    fwd: Expression,
    inv: Expression,
}

const T_RANGE: (f64, f64) = (0.2, 1.5);
const Y_RANGE: (f64, f64) = (-1.2, 1.2);
const W_RANGE: (f64, f64) = (-2.0, 2.0);
const SLICES: usize = 33;

fn slice_times() -> Vec<f64> {
    (0..SLICES)
        .map(|i| T_RANGE.0 + (T_RANGE.1 - T_RANGE.0) * i as f64 / (SLICES - 1) as f64)
        .collect()
}

fn affine_stage(a: &str, b: &str, sp: &VariableSpace) -> Stage {
    let a = parse(a, sp);
    let b = parse(b, sp);
    Stage {
        fwd: Expression::add(
            Expression::mul(a.clone(), Expression::state(0)),
            b.clone(),
        )
        .simplify(),
        inv: Expression::div(Expression::sub(Expression::state(0), b), a).simplify(),
    }
}

/// Applies one stage to the per-time image slices, in place.
fn map_slices(stage: &Stage, slices: &mut [(f64, f64)], times: &[f64]) {
    for (slice, &t) in slices.iter_mut().zip(times) {
        let at = |y: f64| {
            stage
                .fwd
                .eval(&Point::new(vec![y], t, vec![0.0]))
                .expect("stage evaluates on its validity window")
        };
        *slice = (at(slice.0), at(slice.1));
    }
}

struct Scramble {
    cov: ChangeOfVariables,
    forward: Expression,
    x_range: (f64, f64),
}

fn draw_scramble(rng: &mut u64, sp: &VariableSpace) -> Option<Scramble> {
    const A_CHOICES: [&str; 3] = ["2", "1 + t/2", "exp(t/2)"];
    const B_CHOICES: [&str; 4] = ["0", "t/4", "-t/4", "sin(t)/4"];
    let times = slice_times();
    let mut slices = vec![Y_RANGE; SLICES];
    let depth = 1 + (splitmix(rng) % 3) as usize;
    let mut fwd = Expression::state(0);
    let mut inv = Expression::state(0);
    for _ in 0..depth {
        let min_lo = slices.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let max_hi = slices.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let kind = splitmix(rng) % 3;
        let stage = match kind {
            0 => {
                let a = A_CHOICES[(splitmix(rng) % 3) as usize];
                let b = B_CHOICES[(splitmix(rng) % 4) as usize];
                affine_stage(a, b, sp)
            }
            1 if max_hi <= 3.5 => Stage {
                fwd: Expression::exp(Expression::state(0)),
                inv: Expression::log(Expression::state(0)),
            },
            2 if min_lo >= 0.05 => Stage {
                fwd: Expression::log(Expression::state(0)),
                inv: Expression::exp(Expression::state(0)),
            },
            // invalid nonlinear draw: fall back to the doubling map
            _ => affine_stage("2", "0", sp),
        };
        map_slices(&stage, &mut slices, &times);
        fwd = stage.fwd.substitute(Var::State(0), &fwd).simplify();
        inv = inv.substitute(Var::State(0), &stage.inv).simplify();
    }
    let lo = slices.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let hi = slices.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    if !(hi - lo >= 0.2) {
        return None; // image intersection too thin for sampling
    }
    let cov =
        ChangeOfVariables::new(*sp, vec![fwd.clone()], Some(vec![inv])).unwrap();
    Some(Scramble { cov, forward: fwd, x_range: (lo, hi) })
}

#[test]
fn scrambled_equations_recover_their_seed() {
    const DRIFTS: [&str; 7] = ["0", "1", "t", "sin(t)", "exp(-t)", "t^2/2", "2 - t"];
    const SIGMAS: [&str; 5] = ["1", "2", "exp(-t/2)", "1 + t^2/4", "t"];
    let started = Instant::now();
    let sp = VariableSpace::new(1, 1);
    let opts = CheckOptions::default();
    let mut rng: u64 = 42;
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < 20 {
        attempts += 1;
        assert!(attempts <= 200, "scramble generator starved");
        let f = parse(DRIFTS[(splitmix(&mut rng) % 7) as usize], &sp);
        let s = parse(SIGMAS[(splitmix(&mut rng) % 5) as usize], &sp);
        let Some(scr) = draw_scramble(&mut rng, &sp) else { continue };

        let seed_sys = Sde::new(
            sp,
            vec![f.clone()],
            vec![vec![s.clone()]],
            Some(Domain { x: vec![Y_RANGE], t: T_RANGE, w: vec![W_RANGE] }),
        )
        .unwrap();
        let pushed_sys = transform(&seed_sys, &scr.cov, Direction::Push).unwrap();
        let scrambled = Sde::new(
            sp,
            pushed_sys.drift_all().to_vec(),
            pushed_sys.diffusion_all().to_vec(),
            Some(Domain { x: vec![scr.x_range], t: T_RANGE, w: vec![W_RANGE] }),
        )
        .unwrap();
        let unit = VectorField::scalar(sp, Expression::one()).unwrap();
        let pushed = push_field(&unit, &scr.cov).unwrap();

        let label = scr.forward.to_string();
        let sym = check_symmetry(&scrambled, &pushed, &opts).unwrap();
        assert!(
            sym.passes,
            "map {label}: pushed symmetry residual {:.3e}",
            sym.max_residual
        );

        let result =
            integrate_scalar(&scrambled, &pushed, &BetaOptions::default(), &opts)
                .unwrap_or_else(|e| panic!("map {label}: integration failed: {e}"));
        let ScalarTail::Integrable(form) = &result.tail else {
            panic!("map {label}: tail {:?}", result.tail);
        };

        // the recovered map may differ from the un-scramble by an additive
        // function of time: the diffusion must match exactly, the drift up
        // to the derivative of that offset, measured along t at the fixed
        // seed state y0 = 0
        let phi_hat = result.stages[0].cov.forward()[0].clone();
        let m_y0 = scr
            .forward
            .substitute(Var::State(0), &Expression::num(0.0))
            .simplify();
        let offset = phi_hat.substitute(Var::State(0), &m_y0).simplify();
        let offset_rate = offset.derivative(Var::Time).simplify();
        let x_mid = 0.5 * (scr.x_range.0 + scr.x_range.1);
        for i in 0..60 {
            let t = T_RANGE.0 + (T_RANGE.1 - T_RANGE.0) * i as f64 / 59.0;
            let p = Point::new(vec![x_mid], t, vec![0.0]);
            let sv = s.eval(&p).unwrap();
            let sh = form.sigmas[0].eval(&p).unwrap();
            assert!(
                (sh - sv).abs() <= 1e-7 * (1.0 + sv.abs()),
                "map {label}: recovered diffusion {sh} vs seed {sv} at t={t}"
            );
            let fv = f.eval(&p).unwrap();
            let fh = form.f.eval(&p).unwrap();
            let rate = offset_rate.eval(&p).unwrap();
            // 1e-6 leaves room for the sampled-dependence cleanup pass
            assert!(
                (fh - fv - rate).abs() <= 1e-6 * (1.0 + fv.abs() + fh.abs()),
                "map {label}: recovered drift {fh} vs seed {fv} + offset {rate} \
                 at t={t}"
            );
        }
        done += 1;
    }
    assert!(
        started.elapsed() < Duration::from_secs(60),
        "{done} scrambles took {:?}",
        started.elapsed()
    );
}

// ---- 4: shared-noise Monte Carlo --------------------------------------------

#[test]
fn pathwise_convergence_and_law_checks() {
    let started = Instant::now();

    // pathwise: simulate original and reduced with identical increments,
    // compare mapped paths over the halving ladder
    for name in ["ex1", "ex2", "ex3", "ex6"] {
        let c = case(name);
        let file = fixtures::load(&c).unwrap();
        let sys = file.sde();
        let cov = fixtures::case_cov(&c, &file).unwrap();
        let reduced = fixtures::golden_system(&c).unwrap().unwrap();
        let mut opts = PathwiseOptions::default();
        opts.t_end = c.t_end;
        let check = pathwise_check(sys, &cov, &reduced, c.start, &opts).unwrap();
        for pair in check.levels.windows(2) {
            assert!(
                pair[1].median < pair[0].median,
                "{name}: medians did not decrease: {:?}",
                check.levels
            );
        }
        assert!(check.monotone, "{name}: shrink factor < 1.2: {:?}", check.levels);
        assert!(
            check.final_median < 1e-2,
            "{name}: finest median {:.3e}",
            check.final_median
        );
        assert!(check.passes, "{name}: pathwise verdict failed");
    }

    // in law: the transformed equations are explicitly Gaussian; the
    // simulated ensembles must pass a KS test against that law, and a
    // doubled-diffusion control must fail it
    for name in ["ex1", "ex2"] {
        let c = case(name);
        let file = fixtures::load(&c).unwrap();
        let sys = file.sde();
        let cov = fixtures::case_cov(&c, &file).unwrap();
        let golden = fixtures::golden_system(&c).unwrap().unwrap();
        let t0 = sys.domain().t.0;
        let p0 = Point::new(c.start.to_vec(), t0, vec![0.0; sys.m()]);
        let y0 = cov.apply_point(&p0).unwrap().x[0];

        let law = ExactLaw::gaussian(
            golden.drift(0),
            golden.diffusion(0, 0),
            y0,
            t0,
            c.t_end,
        )
        .unwrap();
        let grid = SimGrid::spanning(t0, c.t_end, 5e-3).unwrap();
        let ens = simulate(&golden, &[y0], &grid, 42, 10_000).unwrap();
        let lc = law_check(&ens, &law).unwrap();
        assert!(
            lc.passes && lc.p_value > 0.01,
            "{name}: KS p = {:.4} (D = {:.4})",
            lc.p_value, lc.ks_statistic
        );

        let corrupted = Sde::new(
            golden.space(),
            vec![golden.drift(0).clone()],
            vec![vec![Expression::mul(
                Expression::num(2.0),
                golden.diffusion(0, 0).clone(),
            )]],
            Some(golden.domain().clone()),
        )
        .unwrap();
        let bad = simulate(&corrupted, &[y0], &grid, 42, 10_000).unwrap();
        let bad_lc = law_check(&bad, &law).unwrap();
        assert!(
            !bad_lc.passes && bad_lc.p_value < 0.01,
            "{name}: corrupted control slipped through with p = {:.4}",
            bad_lc.p_value
        );
    }

    assert!(
        started.elapsed() < Duration::from_secs(120),
        "validation took {:?}",
        started.elapsed()
    );
}

// ---- 5: separable detection and kernel membership ---------------------------

#[test]
fn separable_detection_and_kernel_membership() {
    let sp = VariableSpace::new(1, 1);
    let dom = Domain { x: vec![(0.5, 2.0)], t: (0.1, 2.0), w: vec![(-2.0, 2.0)] };
    let f = parse("1 + t/2", &sp);
    let s = parse("1", &sp);
    let cases: [(&str, Option<f64>); 5] = [
        ("x1", Some(1.0)),
        ("3*x1", Some(3.0)),
        ("x1^2", None),
        ("1", None),
        ("exp(x1)", None),
    ];
    for (beta_text, expected) in cases {
        let beta = parse(beta_text, &sp);
        let sys = Sde::new(
            sp,
            vec![Expression::mul(beta.clone(), f.clone()).simplify()],
            vec![vec![Expression::mul(beta.clone(), s.clone()).simplify()]],
            Some(dom.clone()),
        )
        .unwrap();
        let got = separable_detect(&sys, &beta, &f, &s).unwrap();
        match expected {
            Some(b0) => {
                let red = got.unwrap_or_else(|| {
                    panic!("beta = {beta_text}: scaling symmetry not detected")
                });
                assert!(
                    (red.b0 - b0).abs() < 1e-9,
                    "beta = {beta_text}: proportionality {} vs {b0}",
                    red.b0
                );
                // the detected field is the scaling x d/dx
                let at = red
                    .field
                    .component(0)
                    .eval(&Point::new(vec![0.7], 1.0, vec![0.0]))
                    .unwrap();
                assert!((at - 0.7).abs() < 1e-12, "field is not the scaling: {at}");
            }
            None => assert!(
                got.is_none(),
                "beta = {beta_text}: spurious scaling symmetry"
            ),
        }
    }

    // conserved-observable kernels: one case passing both operator tests,
    // one passing only the time-operator test
    let opts = CheckOptions::default();
    let o7 = fixtures::run_case(&case("ex7"), &opts).unwrap();
    let k7 = o7.kernel.unwrap();
    assert!(k7.in_l_kernel && k7.in_m_kernel, "ex7 kernel verdicts changed");
    let o8 = fixtures::run_case(&case("ex8"), &opts).unwrap();
    let k8 = o8.kernel.unwrap();
    assert!(k8.in_l_kernel && !k8.in_m_kernel, "ex8 kernel verdicts changed");
}

// ---- 6: determinism ----------------------------------------------------------

#[test]
fn repeated_runs_render_byte_identical_reports() {
    let args = [
        "stochsym", "fixtures", "--run", "all", "--format", "json", "--seed", "42",
    ];
    let mut first = Vec::new();
    let mut second = Vec::new();
    let code_a = stochsym::cli::run(args.iter().copied(), &mut first);
    let code_b = stochsym::cli::run(args.iter().copied(), &mut second);
    assert_eq!(code_a, 0);
    assert_eq!(code_b, 0);
    assert!(!first.is_empty());
    assert_eq!(first, second, "reports differ between identical runs");
}
