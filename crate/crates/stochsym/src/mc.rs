//! Monte Carlo ground truth: Euler–Maruyama simulation with shared Wiener
//! increments, pathwise map-consistency checks, the Gaussian law of the
//! integrable form, and distributional tests.
//!
//! Determinism is load-bearing here. Every Wiener increment is produced by
//! a stateless counter-based generator keyed by `(seed, path, counter)`,
//! so the ensemble is a pure function of its parameters: worker count,
//! scheduling and platform do not change a single bit. Normal variates
//! come from the inverse CDF applied to a 53-bit uniform.
//!
//! Increments multiply coefficients evaluated at the LEFT endpoint of each
//! step (the Ito convention); a regression test pins this by checking that
//! the sampled mean of `sum W dW` is near 0 rather than T/2.
//!
//! Binary ensemble export layout (all integers and floats little-endian):
//! magic `STOCHENS`, `u32` version (1), `u64` paths, steps, n, m, `f64`
//! t0, dt, then states as `paths * (steps+1) * n` f64 (path-major,
//! step-minor, component-innermost), then increments as
//! `paths * steps * m` f64 in the same order, then one `u8` per path
//! (1 = completed, 0 = stopped by the blow-up guard).

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::Error;
use crate::expr::{CompiledExpr, EvalStack, Expression, Point, Var};
use crate::model::Sde;
use crate::transform::{adaptive_simpson, ChangeOfVariables};

/// Uniform time grid `t_k = t0 + k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl SimGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<SimGrid, Error> {
        if !(dt > 0.0) || steps == 0 {
            return Err(Error::Invalid("grid needs dt > 0 and at least one step".into()));
        }
        Ok(SimGrid { t0, dt, steps })
    }

    /// Grid reaching from `t0` to (approximately) `t_end` in steps of `dt`.
    pub fn spanning(t0: f64, t_end: f64, dt: f64) -> Result<SimGrid, Error> {
        if !(t_end > t0) {
            return Err(Error::Invalid("grid needs t_end > t0".into()));
        }
        let steps = ((t_end - t0) / dt).round().max(1.0) as usize;
        SimGrid::new(t0, dt, steps)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps)
    }
}

/// Paths stop (and are flagged incomplete) once any state component
/// exceeds this magnitude or turns non-finite.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Simulated paths with their driving increments.
///
/// States are stored path-major (`paths x (steps+1) x n`), increments
/// likewise (`paths x steps x m`). A path flagged incomplete keeps its
/// last finite state frozen over the remaining steps so exports stay
/// rectangular.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: SimGrid,
    n: usize,
    m: usize,
    paths: usize,
    seed: u64,
    states: Vec<f64>,
    increments: Vec<f64>,
    completed: Vec<bool>,
}

impl PathEnsemble {
    pub fn grid(&self) -> &SimGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self, path: usize, step: usize, i: usize) -> f64 {
        self.states[(path * (self.grid.steps + 1) + step) * self.n + i]
    }

    pub fn increment(&self, path: usize, step: usize, j: usize) -> f64 {
        self.increments[(path * self.grid.steps + step) * self.m + j]
    }

    pub fn is_completed(&self, path: usize) -> bool {
        self.completed[path]
    }

    pub fn completion_fraction(&self) -> f64 {
        self.completed.iter().filter(|c| **c).count() as f64 / self.paths as f64
    }

    /// Final value of component `i` over completed paths.
    pub fn final_states(&self, i: usize) -> Vec<f64> {
        (0..self.paths)
            .filter(|p| self.completed[*p])
            .map(|p| self.state(p, self.grid.steps, i))
            .collect()
    }

    /// Noise value `w_j(t_k)` as the running sum of stored increments
    /// (`w(t0) = 0`).
    pub fn wiener(&self, path: usize, step: usize, j: usize) -> f64 {
        (0..step).map(|k| self.increment(path, k, j)).sum()
    }

    /// Columnar text export: header `t` then one column per path and
    /// state component, one row per grid time.
    pub fn to_columnar_text(&self) -> String {
        let mut out = String::new();
        out.push('t');
        for p in 0..self.paths {
            for i in 0..self.n {
                out.push_str(&format!(" x{}p{}", i + 1, p + 1));
            }
        }
        out.push('\n');
        for k in 0..=self.grid.steps {
            out.push_str(&format!("{}", self.grid.time(k)));
            for p in 0..self.paths {
                for i in 0..self.n {
                    out.push_str(&format!(" {}", self.state(p, k, i)));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Compact binary export; layout documented in the module header.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            48 + 8 * (self.states.len() + self.increments.len()) + self.paths,
        );
        out.extend_from_slice(b"STOCHENS");
        out.extend_from_slice(&1u32.to_le_bytes());
        for v in [
            self.paths as u64,
            self.grid.steps as u64,
            self.n as u64,
            self.m as u64,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.grid.t0.to_le_bytes());
        out.extend_from_slice(&self.grid.dt.to_le_bytes());
        for v in &self.states {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.increments {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.completed {
            out.push(u8::from(*c));
        }
        out
    }
}

/// An ensemble of bare Wiener increments (no states, `n = 0`): the
/// driving noise for a fully reduced block. The increments for a given
/// `(seed, path)` are identical to those [`simulate`] would draw, so
/// ensembles over the same seed share their noise.
pub fn increments_only(
    m: usize,
    grid: &SimGrid,
    seed: u64,
    paths: usize,
) -> Result<PathEnsemble, Error> {
    if m == 0 {
        return Err(Error::Dimension("need at least one noise".into()));
    }
    if paths == 0 {
        return Err(Error::Invalid("need at least one path".into()));
    }
    let steps = grid.steps;
    let mut increments = vec![0.0f64; paths * steps * m];
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    let sqrt_dt = grid.dt.sqrt();
    increments
        .par_chunks_mut(steps * m)
        .enumerate()
        .for_each(|(p, inc)| {
            for k in 0..steps {
                for j in 0..m {
                    inc[k * m + j] = sqrt_dt
                        * normal_draw(&dist, seed, p as u64, (k * m + j) as u64);
                }
            }
        });
    Ok(PathEnsemble {
        grid: *grid,
        n: 0,
        m,
        paths,
        seed,
        states: Vec::new(),
        increments,
        completed: vec![true; paths],
    })
}

impl PathEnsemble {
    /// Assembles an ensemble from raw buffers (used by reconstruction,
    /// which derives new state trajectories over existing increments).
    pub(crate) fn from_parts(
        grid: SimGrid,
        n: usize,
        m: usize,
        paths: usize,
        seed: u64,
        states: Vec<f64>,
        increments: Vec<f64>,
        completed: Vec<bool>,
    ) -> PathEnsemble {
        debug_assert_eq!(states.len(), paths * (grid.steps + 1) * n);
        debug_assert_eq!(increments.len(), paths * grid.steps * m);
        debug_assert_eq!(completed.len(), paths);
        PathEnsemble { grid, n, m, paths, seed, states, increments, completed }
    }
}

/// SplitMix-style 64-bit finalizer used as a stateless PRF stage.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 53-bit uniform in the open interval (0, 1).
fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw for `(seed, path, counter)` — a pure function.
fn normal_draw(dist: &Normal, seed: u64, path: u64, counter: u64) -> f64 {
    let h = mix64(mix64(mix64(seed) ^ path) ^ counter);
    dist.inverse_cdf(unit_open(h))
}

/// Euler–Maruyama simulation: `x_{k+1} = x_k + f(x_k, t_k) dt
/// + sum_j s_j(x_k, t_k) dW_k^j`, coefficients at the left endpoint.
/// Coefficients may reference noise variables; they are then evaluated at
/// the running sums `w(t_k)` of the path's own increments.
pub fn simulate(
    sys: &Sde,
    x0: &[f64],
    grid: &SimGrid,
    seed: u64,
    paths: usize,
) -> Result<PathEnsemble, Error> {
    let n = sys.n();
    let m = sys.m();
    if n == 0 {
        return increments_only(m, grid, seed, paths);
    }
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "initial state has {} components for {} states",
            x0.len(),
            n
        )));
    }
    if paths == 0 {
        return Err(Error::Invalid("need at least one path".into()));
    }
    let space = sys.space();
    let drift: Vec<CompiledExpr> =
        (0..n).map(|i| sys.drift(i).compile(&space)).collect();
    let diffusion: Vec<Vec<CompiledExpr>> = (0..n)
        .map(|i| (0..m).map(|j| sys.diffusion(i, j).compile(&space)).collect())
        .collect();

    let steps = grid.steps;
    let mut states = vec![0.0f64; paths * (steps + 1) * n];
    let mut increments = vec![0.0f64; paths * steps * m];
    let mut completed = vec![true; paths];
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    let sqrt_dt = grid.dt.sqrt();
    let grid = *grid;

    states
        .par_chunks_mut((steps + 1) * n)
        .zip(increments.par_chunks_mut(steps * m))
        .zip(completed.par_iter_mut())
        .enumerate()
        .for_each(|(p, ((st, inc), done))| {
            let mut stack = EvalStack::default();
            let mut slots = vec![0.0f64; n + 1 + m];
            st[..n].copy_from_slice(x0);
            // running noise values start at 0
            for s in slots[n + 1..].iter_mut() {
                *s = 0.0;
            }
            let mut alive = true;
            for k in 0..steps {
                for j in 0..m {
                    inc[k * m + j] = sqrt_dt
                        * normal_draw(&dist, seed, p as u64, (k * m + j) as u64);
                }
                let (prev, next) = st.split_at_mut((k + 1) * n);
                let xk = &prev[k * n..];
                let xk1 = &mut next[..n];
                if !alive {
                    xk1.copy_from_slice(xk);
                    continue;
                }
                slots[..n].copy_from_slice(xk);
                slots[n] = grid.time(k);
                for i in 0..n {
                    let mut v = xk[i] + grid.dt * drift[i].eval_with(&slots, &mut stack);
                    for j in 0..m {
                        v += inc[k * m + j]
                            * diffusion[i][j].eval_with(&slots, &mut stack);
                    }
                    xk1[i] = v;
                }
                if xk1.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT) {
                    // freeze the path at its last finite state
                    xk1.copy_from_slice(xk);
                    alive = false;
                    *done = false;
                }
                for j in 0..m {
                    slots[n + 1 + j] += inc[k * m + j];
                }
            }
        });

    Ok(PathEnsemble {
        grid,
        n,
        m,
        paths,
        seed,
        states,
        increments,
        completed,
    })
}

/// Median of a sample (empty input gives NaN).
fn median(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Options for [`pathwise_check`].
#[derive(Debug, Clone)]
pub struct PathwiseOptions {
    /// Halving sequence of step sizes, coarsest first.
    pub dts: Vec<f64>,
    pub t_end: f64,
    pub paths: usize,
    pub seed: u64,
    /// Required error-shrink factor per halving.
    pub min_factor: f64,
    /// Required median error at the finest step size.
    pub final_median_max: f64,
}

impl Default for PathwiseOptions {
    fn default() -> Self {
        PathwiseOptions {
            dts: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            t_end: 1.0,
            paths: 200,
            seed: 42,
            min_factor: 1.2,
            final_median_max: 1e-2,
        }
    }
}

/// Error statistics of one step size in a pathwise comparison.
#[derive(Debug, Clone, Serialize)]
pub struct PathwiseLevel {
    pub dt: f64,
    pub median: f64,
    pub p95: f64,
    pub compared_paths: usize,
}

/// Result of [`pathwise_check`].
#[derive(Debug, Clone, Serialize)]
pub struct PathwiseCheck {
    pub levels: Vec<PathwiseLevel>,
    /// Median errors shrink by at least the required factor per halving.
    pub monotone: bool,
    pub final_median: f64,
    pub passes: bool,
}

/// Simulates `original` and `reduced` on the same grid with identical
/// Wiener increments, maps the original paths through the forward map,
/// and reports the per-path sup-distance to the reduced paths for each
/// step size. Passes when the medians shrink monotonically (by
/// `min_factor` per halving) and the finest median is small enough.
pub fn pathwise_check(
    original: &Sde,
    cov: &ChangeOfVariables,
    reduced: &Sde,
    x0: &[f64],
    opts: &PathwiseOptions,
) -> Result<PathwiseCheck, Error> {
    if original.m() != reduced.m() {
        return Err(Error::EnsembleMismatch(
            "original and reduced systems drive different noise counts".into(),
        ));
    }
    if original.n() != cov.space().n || reduced.n() != cov.space().n {
        return Err(Error::Dimension(
            "map dimension does not match the systems".into(),
        ));
    }
    if opts.dts.is_empty() {
        return Err(Error::Invalid("need at least one step size".into()));
    }
    let n = original.n();
    let t0 = original.domain().t.0;

    // initial state of the reduced system: the mapped initial state
    let p0 = Point::new(x0.to_vec(), t0, vec![0.0; original.m()]);
    let y0pt = cov.apply_point(&p0)?;
    let y0 = y0pt.x;

    let mut levels = Vec::with_capacity(opts.dts.len());
    for &dt in &opts.dts {
        let grid = SimGrid::spanning(t0, opts.t_end, dt)?;
        let ens_orig = simulate(original, x0, &grid, opts.seed, opts.paths)?;
        let ens_red = simulate(reduced, &y0, &grid, opts.seed, opts.paths)?;
        let mut sups = Vec::with_capacity(opts.paths);
        let mut point = Point::new(vec![0.0; n], t0, vec![0.0; original.m()]);
        for p in 0..opts.paths {
            if !ens_orig.is_completed(p) || !ens_red.is_completed(p) {
                continue;
            }
            let mut sup = 0.0f64;
            for w in point.w.iter_mut() {
                *w = 0.0;
            }
            for k in 0..=grid.steps {
                for i in 0..n {
                    point.x[i] = ens_orig.state(p, k, i);
                }
                point.t = grid.time(k);
                let mut ok = true;
                for i in 0..n {
                    match cov.forward()[i].eval(&point) {
                        Ok(v) if v.is_finite() => {
                            sup = sup.max((v - ens_red.state(p, k, i)).abs());
                        }
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    sup = f64::NAN;
                    break;
                }
                if k < grid.steps {
                    for (j, w) in point.w.iter_mut().enumerate() {
                        *w += ens_orig.increment(p, k, j);
                    }
                }
            }
            if sup.is_finite() {
                sups.push(sup);
            }
        }
        sups.sort_by(f64::total_cmp);
        levels.push(PathwiseLevel {
            dt,
            median: median(&sups),
            p95: percentile(&sups, 0.95),
            compared_paths: sups.len(),
        });
    }

    let monotone = levels
        .windows(2)
        .all(|w| w[0].median >= opts.min_factor * w[1].median);
    let final_median = levels.last().map(|l| l.median).unwrap_or(f64::NAN);
    let passes =
        monotone && final_median.is_finite() && final_median < opts.final_median_max;
    Ok(PathwiseCheck { levels, monotone, final_median, passes })
}

/// Gaussian law of the integrable scalar form at a fixed time:
/// `mean = x0 + integral of f`, `variance = integral of sigma^2`.
#[derive(Debug, Clone, Serialize)]
pub struct ExactLaw {
    pub mean: f64,
    pub variance: f64,
}

impl ExactLaw {
    /// Quadrature of t-only coefficients over `[t0, t_end]`.
    pub fn gaussian(
        f: &Expression,
        sigma: &Expression,
        x0: f64,
        t0: f64,
        t_end: f64,
    ) -> Result<ExactLaw, Error> {
        for (name, e) in [("drift", f), ("diffusion", sigma)] {
            let simplified = e.simplify();
            let state_free = !simplified.depends_on(Var::State(0))
                && !simplified.has_noise();
            if !state_free {
                return Err(Error::Invalid(format!(
                    "{name} must depend on t only for the exact law (got {e})"
                )));
            }
        }
        let at = |e: &Expression, s: f64| e.eval(&Point::new(vec![], s, vec![]));
        let mean_shift =
            adaptive_simpson(&|s| at(f, s), t0, t_end, 1e-12, 40)?;
        let variance =
            adaptive_simpson(&|s| Ok(at(sigma, s)?.powi(2)), t0, t_end, 1e-12, 40)?;
        if variance < 0.0 {
            return Err(Error::Invalid("variance came out negative".into()));
        }
        Ok(ExactLaw { mean: x0 + mean_shift, variance })
    }
}

/// Result of [`law_check`].
#[derive(Debug, Clone, Serialize)]
pub struct LawCheck {
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub passes: bool,
}

/// Minimum completed paths for a meaningful distributional test.
pub const LAW_CHECK_MIN_PATHS: usize = 1000;

/// One-sample Kolmogorov–Smirnov test of the ensemble's final states
/// (component 0) against the Gaussian `law`. Passes iff p > 0.01.
pub fn law_check(ens: &PathEnsemble, law: &ExactLaw) -> Result<LawCheck, Error> {
    let mut samples = ens.final_states(0);
    if samples.len() < LAW_CHECK_MIN_PATHS {
        return Err(Error::Invalid(format!(
            "law check needs at least {LAW_CHECK_MIN_PATHS} completed paths, \
             got {}",
            samples.len()
        )));
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let sd = law.variance.sqrt();
    if !(sd > 0.0) {
        return Err(Error::Invalid("law has zero variance; KS needs spread".into()));
    }
    let dist = Normal::new(law.mean, sd)
        .map_err(|e| Error::Invalid(format!("bad law parameters: {e}")))?;
    let mut d = 0.0f64;
    for (i, x) in samples.iter().enumerate() {
        let cdf = dist.cdf(*x);
        d = d.max(cdf - i as f64 / n as f64);
        d = d.max((i + 1) as f64 / n as f64 - cdf);
    }
    let p_value = ks_p_value(d, n);
    Ok(LawCheck {
        samples: n,
        mean: law.mean,
        variance: law.variance,
        ks_statistic: d,
        p_value,
        passes: p_value > 0.01,
    })
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample
/// correction: `p = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2)`.
pub(crate) fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for k in 1..=100u32 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VariableSpace;
    use crate::model::Domain;

    fn parse(text: &str, sp: &VariableSpace) -> Expression {
        Expression::parse(text, sp).unwrap()
    }

    fn scalar_system(f: &str, s: &str) -> Sde {
        let sp = VariableSpace::new(1, 1);
        Sde::new(sp, vec![parse(f, &sp)], vec![vec![parse(s, &sp)]], None).unwrap()
    }

    #[test]
    fn increments_are_deterministic_and_normal() {
        let sys = scalar_system("0", "1");
        let grid = SimGrid::new(0.0, 1e-2, 10).unwrap();
        let a = simulate(&sys, &[0.0], &grid, 42, 1000).unwrap();
        let b = simulate(&sys, &[0.0], &grid, 42, 1000).unwrap();
        assert_eq!(a.increments, b.increments, "same seed, same bits");
        let c = simulate(&sys, &[0.0], &grid, 43, 1000).unwrap();
        assert_ne!(a.increments, c.increments, "different seed differs");

        // moments over 10^4 draws: mean within 5 sigma, variance within 10%
        let draws: Vec<f64> = a.increments.clone();
        assert!(draws.len() == 10_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var =
            draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (draws.len() - 1) as f64;
        let dt = grid.dt;
        let mean_tol = 5.0 * (dt / draws.len() as f64).sqrt();
        assert!(mean.abs() < mean_tol, "increment mean {mean}");
        assert!((var - dt).abs() < 0.1 * dt, "increment variance {var} vs {dt}");
    }

    #[test]
    fn prefix_stability_under_path_count() {
        // the first paths of a bigger ensemble are the small ensemble
        let sys = scalar_system("0", "1");
        let grid = SimGrid::new(0.0, 1e-2, 5).unwrap();
        let small = simulate(&sys, &[0.0], &grid, 7, 3).unwrap();
        let big = simulate(&sys, &[0.0], &grid, 7, 10).unwrap();
        for p in 0..3 {
            for k in 0..5 {
                assert_eq!(small.increment(p, k, 0), big.increment(p, k, 0));
            }
        }
    }

    #[test]
    fn zero_drift_zero_diffusion_is_constant() {
        let sys = scalar_system("0", "0");
        let grid = SimGrid::new(0.0, 0.1, 20).unwrap();
        let ens = simulate(&sys, &[1.5], &grid, 1, 10).unwrap();
        for p in 0..10 {
            for k in 0..=20 {
                assert_eq!(ens.state(p, k, 0), 1.5);
            }
        }
        assert_eq!(ens.completion_fraction(), 1.0);
    }

    #[test]
    fn brownian_motion_with_drift_moments() {
        // dx = dt + dw from 0: x(T) ~ Normal(T, T)
        let sys = scalar_system("1", "1");
        let grid = SimGrid::new(0.0, 1e-2, 100).unwrap();
        let paths = 4000;
        let ens = simulate(&sys, &[0.0], &grid, 42, paths).unwrap();
        let finals = ens.final_states(0);
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (finals.len() - 1) as f64;
        // estimator tolerances: 3 sigma
        let mean_tol = 3.0 * (1.0f64 / paths as f64).sqrt();
        assert!((mean - 1.0).abs() < mean_tol, "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0f64 / paths as f64).sqrt(), "var {var}");
    }

    #[test]
    fn left_endpoint_convention() {
        // sum W dW over [0,1] has mean 0 under the Ito convention
        // (T/2 under Stratonovich); W is simulated as dx = dw
        let sys = scalar_system("0", "1");
        let grid = SimGrid::new(0.0, 1e-2, 100).unwrap();
        let paths = 10_000;
        let ens = simulate(&sys, &[0.0], &grid, 11, paths).unwrap();
        let mut total = 0.0;
        for p in 0..paths {
            let mut acc = 0.0;
            for k in 0..grid.steps {
                acc += ens.state(p, k, 0) * ens.increment(p, k, 0);
            }
            total += acc;
        }
        let mean = total / paths as f64;
        // std of the integral is sqrt(T^2/2) ~ 0.707
        assert!(mean.abs() < 0.05, "Ito mean {mean} (Stratonovich would be 0.5)");
    }

    #[test]
    fn blowup_freezes_and_flags() {
        let sys = scalar_system("x1^3", "0");
        let grid = SimGrid::new(0.0, 0.5, 30).unwrap();
        let ens = simulate(&sys, &[3.0], &grid, 1, 4).unwrap();
        assert_eq!(ens.completion_fraction(), 0.0);
        for p in 0..4 {
            let last = ens.state(p, 30, 0);
            assert!(last.is_finite(), "frozen state stays finite");
        }
    }

    #[test]
    fn pathwise_identity_map_is_exact() {
        let sys = scalar_system("1", "1");
        let sp = sys.space();
        let cov = ChangeOfVariables::new(
            sp,
            vec![parse("x1", &sp)],
            Some(vec![parse("x1", &sp)]),
        )
        .unwrap();
        let opts = PathwiseOptions {
            dts: vec![1e-2, 5e-3],
            paths: 50,
            ..PathwiseOptions::default()
        };
        let out = pathwise_check(&sys, &cov, &sys, &[0.0], &opts).unwrap();
        for level in &out.levels {
            assert_eq!(level.median, 0.0);
        }
    }

    #[test]
    fn pathwise_exponential_map_converges() {
        // messy equation and its straightened image share increments
        let messy = scalar_system("exp(-x1) - exp(-2*x1)/2", "exp(-x1)");
        let sp = messy.space();
        let cov = ChangeOfVariables::new(
            sp,
            vec![parse("exp(x1)", &sp)],
            Some(vec![parse("log(x1)", &sp)]),
        )
        .unwrap();
        let flat = scalar_system("1", "1");
        let opts = PathwiseOptions { paths: 100, ..PathwiseOptions::default() };
        let out = pathwise_check(&messy, &cov, &flat, &[1.0], &opts).unwrap();
        assert!(out.monotone, "levels: {:?}", out.levels);
        assert!(out.passes, "final {}", out.final_median);
    }

    #[test]
    fn law_check_accepts_true_law_and_rejects_corruption() {
        let sys = scalar_system("1", "1");
        let grid = SimGrid::new(0.0, 1e-3, 1000).unwrap();
        let ens = simulate(&sys, &[0.0], &grid, 42, 10_000).unwrap();
        let sp = sys.space();
        let one = parse("1", &sp);
        let law = ExactLaw::gaussian(&one, &one, 0.0, 0.0, 1.0).unwrap();
        assert!((law.mean - 1.0).abs() < 1e-10);
        assert!((law.variance - 1.0).abs() < 1e-10);
        let ok = law_check(&ens, &law).unwrap();
        assert!(ok.passes, "p = {}", ok.p_value);

        // doubled diffusion must be detected
        let bad = ExactLaw { mean: law.mean, variance: 4.0 * law.variance };
        let rejected = law_check(&ens, &bad).unwrap();
        assert!(!rejected.passes, "p = {}", rejected.p_value);
    }

    #[test]
    fn law_check_needs_enough_paths() {
        let sys = scalar_system("1", "1");
        let grid = SimGrid::new(0.0, 1e-2, 100).unwrap();
        let ens = simulate(&sys, &[0.0], &grid, 42, 100).unwrap();
        let law = ExactLaw { mean: 1.0, variance: 1.0 };
        assert!(law_check(&ens, &law).is_err());
    }

    #[test]
    fn exact_law_rejects_state_dependence() {
        let sp = VariableSpace::new(1, 1);
        let f = parse("x1", &sp);
        let s = parse("1", &sp);
        assert!(ExactLaw::gaussian(&f, &s, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn generalized_coefficients_see_running_noise() {
        // dx = w1 dt + 0 dw: x(T) = integral of w dt, so the path depends
        // on the increments even though diffusion is zero
        let sp = VariableSpace::new(1, 1);
        let sys = Sde::new(
            sp,
            vec![parse("w1", &sp)],
            vec![vec![parse("0", &sp)]],
            Some(Domain { x: vec![(-2.0, 2.0)], t: (0.1, 2.0), w: vec![(-2.0, 2.0)] }),
        )
        .unwrap();
        let grid = SimGrid::new(0.0, 0.25, 4).unwrap();
        let ens = simulate(&sys, &[0.0], &grid, 9, 1).unwrap();
        // hand-rolled left-point integration of the same increments
        let mut w = 0.0;
        let mut x = 0.0;
        for k in 0..4 {
            x += w * 0.25;
            w += ens.increment(0, k, 0);
        }
        assert!((ens.state(0, 4, 0) - x).abs() < 1e-14);
    }

    #[test]
    fn binary_export_layout() {
        let sys = scalar_system("0", "1");
        let grid = SimGrid::new(0.0, 0.5, 2).unwrap();
        let ens = simulate(&sys, &[0.0], &grid, 5, 2).unwrap();
        let bin = ens.to_binary();
        assert_eq!(&bin[..8], b"STOCHENS");
        assert_eq!(u32::from_le_bytes(bin[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bin[12..20].try_into().unwrap()), 2); // paths
        assert_eq!(u64::from_le_bytes(bin[20..28].try_into().unwrap()), 2); // steps
        assert_eq!(u64::from_le_bytes(bin[28..36].try_into().unwrap()), 1); // n
        assert_eq!(u64::from_le_bytes(bin[36..44].try_into().unwrap()), 1); // m
        // header 44 + 16 bytes f64 grid + states 2*3*1*8 + incs 2*2*1*8 + 2 flags
        assert_eq!(bin.len(), 44 + 16 + 48 + 32 + 2);
        let text = ens.to_columnar_text();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t x1p1 x1p2");
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn ks_p_value_reference_points() {
        // lambda = 1.0 gives Q ~ 0.270; lambda = 0.5 gives ~0.9639
        // (classical Kolmogorov distribution values)
        let q = |lambda: f64| {
            let mut sum = 0.0;
            let mut sign = 1.0;
            for k in 1..=100u32 {
                sum += sign * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
                sign = -sign;
            }
            2.0 * sum
        };
        assert!((q(1.0) - 0.26999967).abs() < 1e-6);
        assert!((q(0.5) - 0.9639452436).abs() < 1e-6);
    }
}
