//! Command-line surface.
//!
//! One subcommand per pipeline: `check`, `search`, `compat`, `transform`,
//! `build-map`, `reduce`, `integrate`, `validate`, and `fixtures`. Every
//! command prints a [`Report`] (human text by default, JSON with
//! `--format json`) and exits `0` when its verdict passes, `1` when the
//! verdict fails, and `2` on usage, I/O, or construction errors.
//!
//! The global flags `--seed`, `--tol`, and `--points` govern every random
//! choice, residual tolerance, and sampling density; with equal arguments
//! two runs render byte-identical reports.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::expr::{Expression, Var, VariableSpace};
use crate::fixtures;
use crate::mc::{simulate, pathwise_check, PathwiseOptions, SimGrid};
use crate::model::file::{MapSpec, ModelFile};
use crate::model::{
    AnySystem, GeneralizedSystem, ItoSystem, Sde, SolvableChain, VectorField,
};
use crate::reduce::{
    integrate_scalar, reduce_chain, scalar_completion, IntegrableScalarForm,
    ReductionResult, ScalarTail,
};
use crate::report::{Report, Section};
use crate::symcheck::{
    check_compatibility, check_solvable_chain, check_symmetry,
    search_symmetry_ansatz, CheckOptions, CompatibilityCheck, SymmetryCheck,
};
use crate::transform::{
    build_straightening_map, transform, BetaOptions, ChangeOfVariables, Direction,
};

/// Report rendering target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Human-readable sections.
    Text,
    /// Machine-readable JSON (parses back into an equal report).
    Json,
}

/// Which side of a map the model is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dir {
    /// The model is in the map's source frame; produce the mapped system.
    Push,
    /// The model is in the map's target frame; produce its preimage.
    Pull,
}

impl From<Dir> for Direction {
    fn from(d: Dir) -> Direction {
        match d {
            Dir::Push => Direction::Push,
            Dir::Pull => Direction::Pull,
        }
    }
}

/// Ensemble export encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    /// Columnar text: a `t` column, then per-path state columns.
    Text,
    /// Little-endian 64-bit floats with a documented fixed layout.
    Binary,
}

#[derive(Debug, Parser)]
#[command(
    name = "stochsym",
    version,
    about = "Symmetry analysis, changes of variables and Monte Carlo \
             validation for Ito stochastic differential equations"
)]
struct Cli {
    /// Seed governing every random choice of the run.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Relative residual tolerance for all checks.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    /// Sample points drawn for residual checks.
    #[arg(long, global = true, default_value_t = 200)]
    points: usize,
    /// Report rendering.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify a named symmetry candidate by sampled residuals of its
    /// determining equations.
    Check {
        /// Model file to load.
        #[arg(long)]
        model: PathBuf,
        /// Symmetry section to check (defaults to the only one).
        #[arg(long)]
        symmetry: Option<String>,
    },
    /// Search the span of the model's symmetry sections for coefficient
    /// combinations that are symmetries.
    Search {
        /// Model file to load.
        #[arg(long)]
        model: PathBuf,
        /// Basis field names (defaults to every symmetry section).
        #[arg(long, value_delimiter = ',')]
        basis: Vec<String>,
    },
    /// Check the compatibility condition of a noise-involving scalar
    /// symmetry (the obstruction to an Ito-to-Ito integrating map).
    Compat {
        /// Model file to load.
        #[arg(long)]
        model: PathBuf,
        /// Symmetry section to check (defaults to the only one).
        #[arg(long)]
        symmetry: Option<String>,
    },
    /// Apply a named change of variables to the model's system.
    Transform {
        /// Model file to load.
        #[arg(long)]
        model: PathBuf,
        /// Map section to apply (defaults to the only one).
        #[arg(long)]
        map: Option<String>,
        /// Which side of the map the model is on.
        #[arg(long, value_enum, default_value_t = Dir::Push)]
        direction: Dir,
        /// Write the transformed system as a model file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build the straightening map of a scalar symmetry (the coordinate
    /// in which the symmetry becomes the plain translation).
    BuildMap {
        /// Model file to load.
        #[arg(long)]
        model: PathBuf,
        /// Symmetry section to straighten (defaults to the only one).
        #[arg(long)]
        symmetry: Option<String>,
        /// Coefficient of the free linear noise term in the completion.
        #[arg(long, default_value_t = 0.0)]
        beta_c1: f64,
        /// Free additive function of time in the completion.
        #[arg(long)]
        beta_b: Option<String>,
        /// Write the input file plus the built map (named `built`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Reduce a system stage by stage along a solvable chain of
    /// symmetries, splitting off one reconstruction equation per stage.
    Reduce {
        /// Model file to load.
        #[arg(long)]
        model: PathBuf,
        /// Chain generator names, innermost first (defaults to every
        /// symmetry section in file order).
        #[arg(long, value_delimiter = ',')]
        chain: Vec<String>,
        /// Stage map names, one per splitting stage (defaults to every
        /// map section in file order). A final scalar stage needs none.
        #[arg(long, value_delimiter = ',')]
        maps: Vec<String>,
    },
    /// Integrate a scalar equation along one of its symmetries: build
    /// the straightening map and verify the mapped coefficients depend
    /// on time alone.
    Integrate {
        /// Model file to load.
        #[arg(long)]
        model: PathBuf,
        /// Symmetry section to integrate along (defaults to the only one).
        #[arg(long)]
        symmetry: Option<String>,
        /// Coefficient of the free linear noise term in the completion.
        #[arg(long, default_value_t = 0.0)]
        beta_c1: f64,
        /// Free additive function of time in the completion.
        #[arg(long)]
        beta_b: Option<String>,
    },
    /// Validate a change of variables pathwise: simulate the model and
    /// the reduced system with shared noise and compare mapped paths
    /// over a ladder of step sizes.
    Validate {
        /// Model file with the original system.
        #[arg(long)]
        model: PathBuf,
        /// Map section of the model file (defaults to the only one).
        #[arg(long)]
        map: Option<String>,
        /// Model file with the reduced system.
        #[arg(long)]
        reduced: PathBuf,
        /// Step sizes, coarsest first (repeatable; defaults to the
        /// standard halving ladder 1e-2 .. 1.25e-3).
        #[arg(long)]
        dt: Vec<f64>,
        /// Simulated paths per step size.
        #[arg(long, default_value_t = 200)]
        paths: usize,
        /// Horizon (defaults to the model domain's upper time bound).
        #[arg(long)]
        t_end: Option<f64>,
        /// Initial state, comma-separated (defaults to the domain midpoint).
        #[arg(long, value_delimiter = ',')]
        x0: Vec<f64>,
        /// Export the original-system ensemble at the finest step size.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Export encoding.
        #[arg(long, value_enum, default_value_t = ExportFormat::Text)]
        export_format: ExportFormat,
    },
    /// Replay the bundled worked examples against their recorded verdicts.
    Fixtures {
        /// `all` or one case name.
        #[arg(long, default_value = "all")]
        run: String,
    },
}

/// Parses `args` (including the program name), runs the command, writes
/// the rendered report (or a one-line error) to `out`, and returns the
/// process exit code: `0` pass, `1` verdict failure, `2` usage or error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders usage/help itself; help and version displays
            // are successful exits
            let _ = write!(out, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let opts = CheckOptions { points: cli.points, tol: cli.tol };
    let result = dispatch(&cli.command, &opts, cli.seed);
    match result {
        Ok(report) => {
            let rendered = match cli.format {
                Format::Text => report.to_text(),
                Format::Json => report.to_json(),
            };
            let _ = out.write_all(rendered.as_bytes());
            match report.passes {
                Some(false) => 1,
                _ => 0,
            }
        }
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command, opts: &CheckOptions, seed: u64) -> Result<Report, Error> {
    match cmd {
        Command::Check { model, symmetry } => {
            cmd_check(model, symmetry.as_deref(), opts, seed)
        }
        Command::Search { model, basis } => cmd_search(model, basis, opts, seed),
        Command::Compat { model, symmetry } => {
            cmd_compat(model, symmetry.as_deref(), opts, seed)
        }
        Command::Transform { model, map, direction, output } => {
            cmd_transform(model, map.as_deref(), *direction, output.as_deref(), seed)
        }
        Command::BuildMap { model, symmetry, beta_c1, beta_b, output } => cmd_build_map(
            model,
            symmetry.as_deref(),
            *beta_c1,
            beta_b.as_deref(),
            output.as_deref(),
            opts,
            seed,
        ),
        Command::Reduce { model, chain, maps } => {
            cmd_reduce(model, chain, maps, opts, seed)
        }
        Command::Integrate { model, symmetry, beta_c1, beta_b } => {
            cmd_integrate(model, symmetry.as_deref(), *beta_c1, beta_b.as_deref(), opts, seed)
        }
        Command::Validate {
            model,
            map,
            reduced,
            dt,
            paths,
            t_end,
            x0,
            export,
            export_format,
        } => cmd_validate(
            model,
            map.as_deref(),
            reduced,
            dt,
            *paths,
            *t_end,
            x0,
            export.as_deref(),
            *export_format,
            seed,
        ),
        Command::Fixtures { run } => cmd_fixtures(run, opts, seed),
    }
}

// ---- named-object lookup ---------------------------------------------------

fn named<'a, T>(
    what: &str,
    items: &'a [(String, T)],
    want: Option<&str>,
) -> Result<(&'a str, &'a T), Error> {
    let available = || {
        items
            .iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    match want {
        Some(name) => items
            .iter()
            .find(|(n, _)| n == name)
            .map(|(n, v)| (n.as_str(), v))
            .ok_or_else(|| {
                Error::Missing(format!(
                    "no {what} named `{name}` (available: {})",
                    available()
                ))
            }),
        None => match items {
            [] => Err(Error::Missing(format!("the file has no {what} section"))),
            [(n, v)] => Ok((n.as_str(), v)),
            _ => Err(Error::Missing(format!(
                "the file has several {what} sections ({}); pick one with \
                 --{what}",
                available()
            ))),
        },
    }
}

fn named_symmetry<'a>(
    file: &'a ModelFile,
    want: Option<&str>,
) -> Result<(&'a str, &'a VectorField), Error> {
    named("symmetry", &file.symmetries, want)
}

fn named_map<'a>(
    file: &'a ModelFile,
    want: Option<&str>,
) -> Result<(&'a str, &'a MapSpec), Error> {
    named("map", &file.maps, want)
}

/// Parses a `--beta-b` argument: a function of time alone.
fn parse_time_function(text: &str, space: &VariableSpace) -> Result<Expression, Error> {
    let e = Expression::parse(text, space)?;
    for i in 0..space.n {
        if e.depends_on(Var::State(i)) {
            return Err(Error::Invalid(format!(
                "--beta-b must be a function of t alone, but uses x{}",
                i + 1
            )));
        }
    }
    if e.has_noise() {
        return Err(Error::Invalid(
            "--beta-b must be a function of t alone, but uses noise variables"
                .into(),
        ));
    }
    Ok(e)
}

// ---- report building blocks -------------------------------------------------

fn input_section(model: &Path, file: &ModelFile) -> Section {
    let sys = file.sde();
    Section::new("input")
        .with("model", model.display().to_string())
        .with("kind", if file.system.is_ito() { "ito" } else { "generalized" })
        .with("states", sys.n())
        .with("noises", sys.m())
}

fn system_section(title: &str, sys: &Sde) -> Section {
    let mut s = Section::new(title);
    for i in 0..sys.n() {
        s.push(format!("f{}", i + 1), sys.drift(i).to_string());
    }
    for i in 0..sys.n() {
        for k in 0..sys.m() {
            s.push(format!("s{}{}", i + 1, k + 1), sys.diffusion(i, k).to_string());
        }
    }
    s
}

fn map_section(title: &str, cov: &ChangeOfVariables) -> Section {
    let mut s = Section::new(title);
    for (i, e) in cov.forward().iter().enumerate() {
        s.push(format!("Phi{}", i + 1), e.to_string());
    }
    match cov.inverse() {
        Some(inv) => {
            for (i, e) in inv.iter().enumerate() {
                s.push(format!("F{}", i + 1), e.to_string());
            }
        }
        None => s.push("inverse", Option::<String>::None),
    }
    s
}

fn symmetry_section(title: &str, name: &str, check: &SymmetryCheck) -> Section {
    Section::new(title)
        .with("symmetry", name)
        .with("random", check.random)
        .with("points", check.points)
        .with("tol", check.tol)
        .with("scale", check.scale)
        .with("drift_residual_max", &check.drift_residual_max)
        .with("diffusion_residual_max", &check.diffusion_residual_max)
        .with("max_residual", check.max_residual)
        .with("passes", check.passes)
}

fn compat_section(title: &str, check: &CompatibilityCheck) -> Section {
    Section::new(title)
        .with("trivial", check.trivial)
        .with("points", check.points)
        .with("tol", check.tol)
        .with("scale", check.scale)
        .with("max_residual", check.max_residual)
        .with("passes", check.passes)
}

fn integrable_section(form: &IntegrableScalarForm) -> Section {
    let mut s = Section::new("integrable form").with("f", form.f.to_string());
    for (k, sigma) in form.sigmas.iter().enumerate() {
        s.push(format!("sigma{}", k + 1), sigma.to_string());
    }
    s.push(
        "drift_antiderivative",
        form.drift_antiderivative.as_ref().map(|e| e.to_string()),
    );
    s.push(
        "variance_antiderivative",
        form.variance_antiderivative.as_ref().map(|e| e.to_string()),
    );
    s
}

fn tail_sections(report: &mut Report, result: &ReductionResult) -> bool {
    match &result.tail {
        ScalarTail::Integrable(form) => {
            report.add(integrable_section(form));
            true
        }
        ScalarTail::NotIntegrable { offending } => {
            report.add(
                Section::new("not integrable")
                    .with("offending_coefficient", offending.as_str()),
            );
            false
        }
        ScalarTail::NotScalar => {
            report.add(
                Section::new("remaining block")
                    .with("states", result.reduced_dim()),
            );
            true
        }
    }
}

// ---- subcommands -------------------------------------------------------------

fn cmd_check(
    model: &Path,
    symmetry: Option<&str>,
    opts: &CheckOptions,
    seed: u64,
) -> Result<Report, Error> {
    let file = ModelFile::load(model)?;
    let sys = file.sde();
    let (name, field) = named_symmetry(&file, symmetry)?;
    let check = check_symmetry(sys, field, opts)?;
    let mut report = Report::new("check", seed);
    report.add(input_section(model, &file));
    report.add(symmetry_section("residuals", name, &check));
    report.set_verdict(check.passes);
    Ok(report)
}

fn cmd_search(
    model: &Path,
    basis_names: &[String],
    opts: &CheckOptions,
    seed: u64,
) -> Result<Report, Error> {
    let file = ModelFile::load(model)?;
    let sys = file.sde();
    let (names, basis): (Vec<&str>, Vec<VectorField>) = if basis_names.is_empty() {
        file.symmetries
            .iter()
            .map(|(n, f)| (n.as_str(), f.clone()))
            .unzip()
    } else {
        let mut names = Vec::with_capacity(basis_names.len());
        let mut fields = Vec::with_capacity(basis_names.len());
        for want in basis_names {
            let (n, f) = named_symmetry(&file, Some(want))?;
            names.push(n);
            fields.push(f.clone());
        }
        (names, fields)
    };
    let search = search_symmetry_ansatz(sys, &basis, opts)?;
    let mut report = Report::new("search", seed);
    report.add(input_section(model, &file));
    report.add(
        Section::new("ansatz")
            .with("basis", names.join(", "))
            .with("basis_size", search.basis_size)
            .with("sampled_rows", search.rows)
            .with("candidates", search.candidates.len()),
    );
    for (i, cand) in search.candidates.iter().enumerate() {
        report.add(
            Section::new(format!("candidate {}", i + 1))
                .with("coefficients", &cand.coefficients)
                .with("max_residual", cand.check.max_residual)
                .with("passes", cand.check.passes),
        );
    }
    report.set_verdict(!search.candidates.is_empty());
    Ok(report)
}

fn cmd_compat(
    model: &Path,
    symmetry: Option<&str>,
    opts: &CheckOptions,
    seed: u64,
) -> Result<Report, Error> {
    let file = ModelFile::load(model)?;
    let sys = file.sde();
    let (name, field) = named_symmetry(&file, symmetry)?;
    let check = check_compatibility(sys, field, opts)?;
    let mut report = Report::new("compat", seed);
    report.add(input_section(model, &file).with("symmetry", name));
    report.add(compat_section("compatibility", &check));
    report.set_verdict(check.passes);
    Ok(report)
}

/// Wraps a transformed system in the matching file-level kind.
fn as_any_system(sys: Sde) -> Result<AnySystem, Error> {
    if sys.coefficients_have_noise() {
        Ok(AnySystem::Generalized(GeneralizedSystem::new(sys)))
    } else {
        Ok(AnySystem::Ito(ItoSystem::new(sys)?))
    }
}

fn cmd_transform(
    model: &Path,
    map: Option<&str>,
    direction: Dir,
    output: Option<&Path>,
    seed: u64,
) -> Result<Report, Error> {
    let file = ModelFile::load(model)?;
    let sys = file.sde();
    let (name, spec) = named_map(&file, map)?;
    let cov = ChangeOfVariables::from_map_spec(sys.space(), spec)?;
    let transformed = transform(sys, &cov, direction.into())?;

    let mut report = Report::new("transform", seed);
    report.add(input_section(model, &file).with("map", name).with(
        "direction",
        match direction {
            Dir::Push => "push",
            Dir::Pull => "pull",
        },
    ));
    report.add(map_section("map", &cov));
    report.add(system_section("transformed", &transformed));
    if let Some(path) = output {
        let out_file = ModelFile {
            system: as_any_system(transformed)?,
            symmetries: Vec::new(),
            maps: Vec::new(),
        };
        std::fs::write(path, out_file.render())?;
        report.add(
            Section::new("output").with("written", path.display().to_string()),
        );
    }
    Ok(report)
}

fn cmd_build_map(
    model: &Path,
    symmetry: Option<&str>,
    beta_c1: f64,
    beta_b: Option<&str>,
    output: Option<&Path>,
    opts: &CheckOptions,
    seed: u64,
) -> Result<Report, Error> {
    let file = ModelFile::load(model)?;
    let sys = file.sde();
    let (name, field) = named_symmetry(&file, symmetry)?;

    let check = check_symmetry(sys, field, opts)?;
    if !check.passes {
        return Err(Error::NotASymmetry(format!(
            "`{name}` is not a symmetry (max residual {:.3e}); a \
             straightening map needs a verified symmetry",
            check.max_residual
        )));
    }
    let beta = BetaOptions {
        c1: beta_c1,
        b_of_t: beta_b
            .map(|t| parse_time_function(t, &sys.space()))
            .transpose()?,
    };
    let built = build_straightening_map(sys, field)?;
    let Some(xi) = built.symbolic.clone() else {
        return Err(Error::NoAntiderivative(format!(
            "no closed form for the straightening map of {}",
            field.component(0)
        )));
    };
    let (completion, solution) = scalar_completion(sys, &xi, field, &beta)?;
    let cov = built.into_cov(completion, &sys.space(), sys.domain())?;

    let mut report = Report::new("build-map", seed);
    report.add(input_section(model, &file));
    report.add(symmetry_section("symmetry", name, &check));
    if let Some(sol) = &solution {
        report.add(
            Section::new("completion")
                .with("noise_derivative", sol.beta_hat.to_string())
                .with("additive_term", sol.b.to_string()),
        );
    }
    report.add(map_section("map", &cov));
    if let Some(path) = output {
        let mut out_file = file.clone();
        if out_file.maps.iter().any(|(n, _)| n == "built") {
            return Err(Error::Invalid(
                "the file already has a map named `built`".into(),
            ));
        }
        out_file.maps.push((
            "built".into(),
            MapSpec {
                forward: cov.forward().to_vec(),
                inverse: cov.inverse().map(|inv| inv.to_vec()),
                beta: None,
            },
        ));
        std::fs::write(path, out_file.render())?;
        report.add(
            Section::new("output").with("written", path.display().to_string()),
        );
    }
    Ok(report)
}

/// Re-scopes a named (full-dimension) map to a stage's block: keeps the
/// leading `block_n` components and requires them to reference only the
/// block's states.
fn stage_cov(
    name: &str,
    spec: &MapSpec,
    block_n: usize,
    m: usize,
) -> Result<ChangeOfVariables, Error> {
    if spec.forward.len() < block_n {
        return Err(Error::Dimension(format!(
            "map `{name}` has {} components; the stage needs {block_n}",
            spec.forward.len()
        )));
    }
    let check_block = |e: &Expression| -> Result<(), Error> {
        for i in block_n..spec.forward.len() {
            if e.depends_on(Var::State(i)) {
                return Err(Error::Invalid(format!(
                    "map `{name}` references x{} outside the {block_n}-state \
                     stage block",
                    i + 1
                )));
            }
        }
        Ok(())
    };
    let mut forward = spec.forward[..block_n].to_vec();
    for e in &forward {
        check_block(e)?;
    }
    if let Some(beta) = &spec.beta {
        if block_n != 1 {
            return Err(Error::Dimension(
                "an additive beta term only applies to scalar maps".into(),
            ));
        }
        forward[0] = Expression::add(forward[0].clone(), beta.clone()).simplify();
    }
    let inverse = match &spec.inverse {
        Some(inv) => {
            if inv.len() < block_n {
                return Err(Error::Dimension(format!(
                    "map `{name}` has {} inverse components; the stage needs \
                     {block_n}",
                    inv.len()
                )));
            }
            let trimmed = inv[..block_n].to_vec();
            for e in &trimmed {
                check_block(e)?;
            }
            Some(trimmed)
        }
        None => None,
    };
    ChangeOfVariables::new(VariableSpace::new(block_n, m), forward, inverse)
}

fn cmd_reduce(
    model: &Path,
    chain_names: &[String],
    map_names: &[String],
    opts: &CheckOptions,
    seed: u64,
) -> Result<Report, Error> {
    let file = ModelFile::load(model)?;
    let sys = file.sde();

    let (gen_names, fields): (Vec<&str>, Vec<VectorField>) = if chain_names.is_empty()
    {
        file.symmetries
            .iter()
            .map(|(n, f)| (n.as_str(), f.clone()))
            .unzip()
    } else {
        let mut names = Vec::with_capacity(chain_names.len());
        let mut out = Vec::with_capacity(chain_names.len());
        for want in chain_names {
            let (n, f) = named_symmetry(&file, Some(want))?;
            names.push(n);
            out.push(f.clone());
        }
        (names, out)
    };
    let chain = SolvableChain::new(fields)?;

    let mut report = Report::new("reduce", seed);
    report.add(
        input_section(model, &file).with("chain", gen_names.join(", ")),
    );

    let chain_check = check_solvable_chain(&chain, sys.domain(), opts)?;
    let mut section = Section::new("chain solvability")
        .with("generators", chain_check.size)
        .with("points", chain_check.points);
    for fit in &chain_check.brackets {
        section.push(
            format!("bracket_{}_{}", fit.a + 1, fit.b + 1),
            format!(
                "span {} residual {:.3e} {}",
                fit.span,
                fit.residual_max,
                if fit.ok { "ok" } else { "OUTSIDE" }
            ),
        );
    }
    section.push("passes", chain_check.passes);
    report.add(section);
    if !chain_check.passes {
        report.set_verdict(false);
        return Ok(report);
    }

    let specs: Vec<(&str, &MapSpec)> = if map_names.is_empty() {
        file.maps.iter().map(|(n, s)| (n.as_str(), s)).collect()
    } else {
        let mut out = Vec::with_capacity(map_names.len());
        for want in map_names {
            out.push(named_map(&file, Some(want))?);
        }
        out
    };
    let n = sys.n();
    let covs: Vec<ChangeOfVariables> = specs
        .iter()
        .enumerate()
        .map(|(s, (name, spec))| stage_cov(name, spec, n - s, sys.m()))
        .collect::<Result<_, _>>()?;

    let result = reduce_chain(sys, &chain, &covs, opts)?;
    for (s, stage) in result.stages.iter().enumerate() {
        report.add(map_section(&format!("stage {} map", s + 1), &stage.cov));
        let mut sec = Section::new(format!("stage {} output", s + 1));
        if let Some(recon) = &stage.reconstruction {
            sec.push("split_drift", recon.drift.to_string());
            for (k, d) in recon.diffusion.iter().enumerate() {
                sec.push(format!("split_s{}", k + 1), d.to_string());
            }
            sec.push("block_states", recon.block_dim);
        }
        for (c, carried) in stage.carried_symmetries.iter().enumerate() {
            sec.push(
                format!("carried_{}_residual", c + 1),
                carried.max_residual,
            );
            sec.push(format!("carried_{}_passes", c + 1), carried.passes);
        }
        report.add(sec);
    }
    if let Some(reduced) = &result.reduced {
        report.add(system_section("reduced block", reduced));
    }
    let ok = tail_sections(&mut report, &result);
    report.set_verdict(ok);
    Ok(report)
}

fn cmd_integrate(
    model: &Path,
    symmetry: Option<&str>,
    beta_c1: f64,
    beta_b: Option<&str>,
    opts: &CheckOptions,
    seed: u64,
) -> Result<Report, Error> {
    let file = ModelFile::load(model)?;
    let sys = file.sde();
    let (name, field) = named_symmetry(&file, symmetry)?;
    let beta = BetaOptions {
        c1: beta_c1,
        b_of_t: beta_b
            .map(|t| parse_time_function(t, &sys.space()))
            .transpose()?,
    };
    let result = integrate_scalar(sys, field, &beta, opts)?;
    let stage = result.stages.first().expect("scalar integration has a stage");

    let mut report = Report::new("integrate", seed);
    report.add(input_section(model, &file).with("symmetry", name));
    report.add(map_section("map", &stage.cov));
    report.add(system_section("transformed", &stage.transformed));
    let ok = tail_sections(&mut report, &result);
    report.set_verdict(ok);
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_validate(
    model: &Path,
    map: Option<&str>,
    reduced_path: &Path,
    dts: &[f64],
    paths: usize,
    t_end: Option<f64>,
    x0: &[f64],
    export: Option<&Path>,
    export_format: ExportFormat,
    seed: u64,
) -> Result<Report, Error> {
    let file = ModelFile::load(model)?;
    let sys = file.sde();
    let (name, spec) = named_map(&file, map)?;
    let cov = ChangeOfVariables::from_map_spec(sys.space(), spec)?;
    let reduced_file = ModelFile::load(reduced_path)?;
    let reduced = reduced_file.sde();

    let mut opts = PathwiseOptions::default();
    if !dts.is_empty() {
        opts.dts = dts.to_vec();
    }
    opts.t_end = t_end.unwrap_or(sys.domain().t.1);
    opts.paths = paths;
    opts.seed = seed;
    let x0: Vec<f64> = if x0.is_empty() {
        sys.domain().midpoint().x
    } else {
        if x0.len() != sys.n() {
            return Err(Error::Dimension(format!(
                "--x0 has {} components for {} states",
                x0.len(),
                sys.n()
            )));
        }
        x0.to_vec()
    };

    let check = pathwise_check(sys, &cov, reduced, &x0, &opts)?;

    let mut report = Report::new("validate", seed);
    report.add(
        input_section(model, &file)
            .with("map", name)
            .with("reduced", reduced_path.display().to_string())
            .with("paths", opts.paths)
            .with("t_end", opts.t_end)
            .with("x0", &x0),
    );
    let mut levels = Section::new("pathwise errors");
    for level in &check.levels {
        levels.push(
            format!("dt={}", level.dt),
            format!(
                "median {:.3e} p95 {:.3e} over {} paths",
                level.median, level.p95, level.compared_paths
            ),
        );
    }
    levels.push("monotone", check.monotone);
    levels.push("final_median", check.final_median);
    levels.push("passes", check.passes);
    report.add(levels);

    if let Some(path) = export {
        let finest = opts
            .dts
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let grid = SimGrid::spanning(sys.domain().t.0, opts.t_end, finest)?;
        let ens = simulate(sys, &x0, &grid, seed, opts.paths)?;
        match export_format {
            ExportFormat::Text => std::fs::write(path, ens.to_columnar_text())?,
            ExportFormat::Binary => std::fs::write(path, ens.to_binary())?,
        }
        report.add(
            Section::new("export")
                .with("written", path.display().to_string())
                .with(
                    "format",
                    match export_format {
                        ExportFormat::Text => "text",
                        ExportFormat::Binary => "binary",
                    },
                )
                .with("completed_paths_fraction", ens.completion_fraction()),
        );
    }
    report.set_verdict(check.passes);
    Ok(report)
}

fn cmd_fixtures(run: &str, opts: &CheckOptions, seed: u64) -> Result<Report, Error> {
    let cases = if run == "all" {
        fixtures::all()
    } else {
        vec![fixtures::by_name(run)?]
    };
    let mut report = Report::new("fixtures", seed);
    let mut all_ok = true;
    let mut passed = 0usize;
    for case in &cases {
        let outcome = fixtures::run_case(case, opts)?;
        let mut sec = Section::new(case.name)
            .with("title", case.title)
            .with("symmetry_max_residual", outcome.symmetry.max_residual)
            .with("symmetry_scale", outcome.symmetry.scale)
            .with("symmetry_passes", outcome.symmetry.passes)
            .with("symmetry_as_recorded", outcome.symmetry_as_recorded);
        if let Some(compat) = &outcome.compatibility {
            sec.push("compatibility_max_residual", compat.max_residual);
            sec.push("compatibility_passes", compat.passes);
            sec.push("compatibility_as_recorded", outcome.compatibility_as_recorded);
        }
        if let Some(golden) = &outcome.golden {
            sec.push("transform_max_mismatch", golden.max_mismatch);
            sec.push("transform_tol", golden.tol);
            sec.push("transform_matches", golden.matches);
        }
        if let Some(kernel) = &outcome.kernel {
            sec.push("kernel_time_residual", kernel.l_residual_max);
            sec.push("kernel_noise_residual", kernel.m_residual_max);
            sec.push("kernel_time_member", kernel.in_l_kernel);
            sec.push("kernel_noise_member", kernel.in_m_kernel);
            sec.push("kernel_as_recorded", outcome.kernel_as_recorded);
        }
        sec.push("ok", outcome.ok);
        report.add(sec);
        all_ok &= outcome.ok;
        passed += usize::from(outcome.ok);
    }
    report.add(
        Section::new("summary")
            .with("cases", cases.len())
            .with("as_recorded", passed),
    );
    report.set_verdict(all_ok);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn run_capture(args: &[&str]) -> (i32, String) {
        let mut buf = Cursor::new(Vec::new());
        let code = run(args.iter().copied(), &mut buf);
        (code, String::from_utf8(buf.into_inner()).unwrap())
    }

    fn fixture_path(name: &str) -> String {
        format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
    }

    #[test]
    fn check_passes_on_a_shipped_model() {
        let model = fixture_path("ex1.sde");
        let (code, out) =
            run_capture(&["stochsym", "check", "--model", &model, "--symmetry", "shift"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("verdict: PASS"), "{out}");
        assert!(out.contains("max_residual"), "{out}");
    }

    #[test]
    fn check_fails_with_residuals_on_a_non_symmetry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wrong.sde");
        std::fs::write(
            &path,
            "[space]\nn = 1\nm = 1\n[drift]\nf1 = exp(-x1) - exp(-2*x1)/2\n\
             [diffusion]\ns11 = exp(-x1)\n[symmetry wrong]\nphi1 = x1\n",
        )
        .unwrap();
        let (code, out) = run_capture(&[
            "stochsym",
            "check",
            "--model",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code, 1, "{out}");
        assert!(out.contains("verdict: FAIL"), "{out}");
        assert!(out.contains("max_residual"), "{out}");
    }

    #[test]
    fn usage_errors_exit_2_with_grammar() {
        let (code, out) = run_capture(&["stochsym", "nonsense"]);
        assert_eq!(code, 2);
        assert!(out.contains("Usage"), "{out}");
        let (code, _) = run_capture(&["stochsym"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_model_file_exits_2() {
        let (code, out) =
            run_capture(&["stochsym", "check", "--model", "/nonexistent/x.sde"]);
        assert_eq!(code, 2);
        assert!(out.starts_with("error:"), "{out}");
    }

    #[test]
    fn transform_prints_the_mapped_system_and_writes_a_loadable_file() {
        let dir = tempfile::tempdir().unwrap();
        let out_path = dir.path().join("flat.sde");
        let model = fixture_path("ex1.sde");
        let (code, out) = run_capture(&[
            "stochsym",
            "transform",
            "--model",
            &model,
            "--map",
            "integrating",
            "--output",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("transformed"), "{out}");
        let written = ModelFile::load(&out_path).unwrap();
        assert_eq!(written.sde().n(), 1);
    }

    #[test]
    fn integrate_reports_the_integrable_form() {
        let model = fixture_path("ex1.sde");
        let (code, out) = run_capture(&[
            "stochsym",
            "integrate",
            "--model",
            &model,
            "--symmetry",
            "shift",
            "--format",
            "json",
        ]);
        assert_eq!(code, 0, "{out}");
        let report = Report::from_json(&out).unwrap();
        assert_eq!(report.passes, Some(true));
        assert!(report.sections.iter().any(|s| s.title == "integrable form"));
    }

    #[test]
    fn fixtures_all_replays_every_recorded_verdict() {
        let (code, out) =
            run_capture(&["stochsym", "fixtures", "--run", "all", "--format", "json"]);
        assert_eq!(code, 0, "{out}");
        let report = Report::from_json(&out).unwrap();
        assert_eq!(report.passes, Some(true));
        // one section per case plus the summary
        assert_eq!(report.sections.len(), 9);
    }

    #[test]
    fn fixtures_json_is_byte_identical_across_runs() {
        let args = ["stochsym", "fixtures", "--run", "all", "--format", "json"];
        let (code_a, out_a) = run_capture(&args);
        let (code_b, out_b) = run_capture(&args);
        assert_eq!(code_a, 0);
        assert_eq!(code_b, 0);
        assert_eq!(out_a, out_b);
    }

    #[test]
    fn build_map_solves_the_completion_and_extends_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let out_path = dir.path().join("extended.sde");
        let model = fixture_path("ex6.sde");
        let (code, out) = run_capture(&[
            "stochsym",
            "build-map",
            "--model",
            &model,
            "--symmetry",
            "drifting",
            "--output",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("completion"), "{out}");
        let written = ModelFile::load(&out_path).unwrap();
        assert!(written.maps.iter().any(|(n, _)| n == "built"));
    }

    #[test]
    fn validate_passes_on_a_shipped_reduction() {
        let dir = tempfile::tempdir().unwrap();
        let reduced_path = dir.path().join("reduced.sde");
        std::fs::write(
            &reduced_path,
            "[space]\nn = 1\nm = 1\n[domain]\nx1 = 0.5, 6\nt = 0.01, 1\n\
             [drift]\nf1 = 1\n[diffusion]\ns11 = 1\n",
        )
        .unwrap();
        let model = fixture_path("ex1.sde");
        let (code, out) = run_capture(&[
            "stochsym",
            "validate",
            "--model",
            &model,
            "--map",
            "integrating",
            "--reduced",
            reduced_path.to_str().unwrap(),
            "--dt",
            "0.005",
            "--dt",
            "0.0025",
            "--dt",
            "0.00125",
            "--paths",
            "60",
            "--t-end",
            "0.5",
            "--x0",
            "1.0",
        ]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("pathwise errors"), "{out}");
        assert!(out.contains("verdict: PASS"), "{out}");
    }

    #[test]
    fn validate_exports_both_ensemble_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let reduced_path = dir.path().join("reduced.sde");
        std::fs::write(
            &reduced_path,
            "[space]\nn = 1\nm = 1\n[domain]\nx1 = 0.5, 6\nt = 0.01, 1\n\
             [drift]\nf1 = 1\n[diffusion]\ns11 = 1\n",
        )
        .unwrap();
        let model = fixture_path("ex1.sde");
        let text_path = dir.path().join("paths.txt");
        let bin_path = dir.path().join("paths.bin");
        for (fmt, path) in
            [("text", &text_path), ("binary", &bin_path)]
        {
            let (code, out) = run_capture(&[
                "stochsym",
                "validate",
                "--model",
                &model,
                "--map",
                "integrating",
                "--reduced",
                reduced_path.to_str().unwrap(),
                "--dt",
                "0.01",
                "--paths",
                "30",
                "--t-end",
                "0.2",
                "--x0",
                "1.0",
                "--export",
                path.to_str().unwrap(),
                "--export-format",
                fmt,
            ]);
            assert_eq!(code, 0, "{out}");
        }
        let text = std::fs::read_to_string(&text_path).unwrap();
        assert!(text.starts_with('t'), "{text}");
        let bin = std::fs::read(&bin_path).unwrap();
        assert!(!bin.is_empty());
    }

    #[test]
    fn reduce_runs_a_two_stage_chain_from_one_file() {
        let model = fixture_path("ex4.sde");
        let (code, out) = run_capture(&[
            "stochsym",
            "reduce",
            "--model",
            &model,
            "--chain",
            "grow,lift",
            "--maps",
            "identity",
            "--format",
            "json",
        ]);
        assert_eq!(code, 0, "{out}");
        let report = Report::from_json(&out).unwrap();
        assert_eq!(report.passes, Some(true));
        assert!(report
            .sections
            .iter()
            .any(|s| s.title == "integrable form"));
    }

    #[test]
    fn compat_detects_the_obstructed_case() {
        let model = fixture_path("ex8.sde");
        let (code, out) = run_capture(&[
            "stochsym",
            "compat",
            "--model",
            &model,
            "--symmetry",
            "lone",
        ]);
        assert_eq!(code, 1, "{out}");
        assert!(out.contains("verdict: FAIL"), "{out}");
    }

    #[test]
    fn search_finds_combinations_within_the_listed_fields() {
        let model = fixture_path("ex6.sde");
        let (code, out) = run_capture(&[
            "stochsym",
            "search",
            "--model",
            &model,
            "--format",
            "json",
        ]);
        assert_eq!(code, 0, "{out}");
        let report = Report::from_json(&out).unwrap();
        assert_eq!(report.passes, Some(true));
    }

    #[test]
    fn model_round_trip_is_value_stable() {
        // load -> save -> load: the rendered file parses back equal
        for case in fixtures::all() {
            let file = ModelFile::parse(case.text).unwrap();
            let rendered = file.render();
            let back = ModelFile::parse(&rendered)
                .unwrap_or_else(|e| panic!("{}: {e}\n{rendered}", case.name));
            assert_eq!(file, back, "{}", case.name);
        }
    }
}
