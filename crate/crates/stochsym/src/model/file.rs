//! The model file format.
//!
//! A model file is a line-oriented text format describing one SDE system
//! together with optional symmetry candidates and changes of variables:
//!
//! ```text
//! # anything after a hash is a comment
//! [space]
//! n = 1
//! m = 1
//! kind = ito            # or `generalized`; default ito
//!
//! [domain]              # optional; listed axes override the defaults
//! x1 = 0.1, 2.1
//! t = 0.1, 2
//! w1 = -2, 2
//!
//! [drift]
//! f1 = exp(-x1) - exp(-2*x1)/2
//!
//! [diffusion]
//! s11 = exp(-x1)
//!
//! [symmetry scaling]    # any number of named symmetry sections
//! phi1 = exp(-x1)
//!
//! [map straighten]      # any number of named map sections
//! Phi1 = exp(x1)        # new coordinates in terms of the current ones
//! F1 = log(x1)          # current coordinates in terms of the new ones
//! ```
//!
//! Expressions on both sides of a map are written with `x1..xn` denoting
//! the states of that side's own frame; `t` and `w1..wm` are shared.
//! Under `kind = ito` the drift/diffusion entries must not mention noise
//! variables; symmetries and maps always may.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Error;
use crate::expr::{Expression, Var, VariableSpace};
use crate::model::{AnySystem, Domain, GeneralizedSystem, ItoSystem, Sde, SolvableChain, VectorField};

/// One change of variables as read from a `[map]` section.
///
/// `forward[i]` is the i-th new coordinate as an expression in the current
/// frame. `inverse[i]`, when present, is the i-th current coordinate as an
/// expression in the new frame. `beta`, when present, is an additive term
/// in `t` and `w` only, completing a random-map construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    pub forward: Vec<Expression>,
    pub inverse: Option<Vec<Expression>>,
    pub beta: Option<Expression>,
}

/// A parsed model file: the system plus named symmetries and maps in
/// file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub system: AnySystem,
    pub symmetries: Vec<(String, VectorField)>,
    pub maps: Vec<(String, MapSpec)>,
}

struct RawSection {
    kind: String,
    arg: Option<String>,
    line: usize,
    entries: Vec<(usize, String, String)>,
}

fn err(section: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::ModelFile { section: section.to_string(), line, msg: msg.into() }
}

fn split_sections(text: &str) -> Result<Vec<RawSection>, Error> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let Some(inner) = inner.strip_suffix(']') else {
                return Err(err("header", line_no, format!("unterminated section header `{line}`")));
            };
            let mut parts = inner.split_whitespace();
            let kind = parts.next().unwrap_or("").to_string();
            let arg = parts.next().map(str::to_string);
            if kind.is_empty() {
                return Err(err("header", line_no, "empty section header"));
            }
            if parts.next().is_some() {
                return Err(err(
                    &kind,
                    line_no,
                    "section header takes at most one name argument",
                ));
            }
            sections.push(RawSection { kind, arg, line: line_no, entries: Vec::new() });
            continue;
        }
        let Some(section) = sections.last_mut() else {
            return Err(err("header", line_no, format!("`{line}` appears before any [section]")));
        };
        let Some(eq) = line.find('=') else {
            return Err(err(
                &section.kind,
                line_no,
                format!("expected `key = value`, got `{line}`"),
            ));
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(err(&section.kind, line_no, "empty key or value"));
        }
        if section.entries.iter().any(|(_, k, _)| *k == key) {
            return Err(err(&section.kind, line_no, format!("duplicate key `{key}`")));
        }
        section.entries.push((line_no, key, value));
    }
    Ok(sections)
}

/// Indexed-key table (`f1`, `s12`, `phi3`, …) with exhaustiveness checks.
fn take_indexed(
    section: &RawSection,
    prefix: &str,
    count: usize,
) -> Result<Vec<(usize, String)>, Error> {
    let mut found: BTreeMap<usize, (usize, String)> = BTreeMap::new();
    for (line, key, value) in &section.entries {
        let Some(tail) = key.strip_prefix(prefix) else {
            return Err(err(&section.kind, *line, format!("unexpected key `{key}`")));
        };
        let Ok(i) = tail.parse::<usize>() else {
            return Err(err(&section.kind, *line, format!("unexpected key `{key}`")));
        };
        if i == 0 || i > count {
            return Err(err(
                &section.kind,
                *line,
                format!("`{key}` is out of range (expected {prefix}1..{prefix}{count})"),
            ));
        }
        if found.insert(i, (*line, value.clone())).is_some() {
            return Err(err(&section.kind, *line, format!("duplicate key `{key}`")));
        }
    }
    for i in 1..=count {
        if !found.contains_key(&i) {
            return Err(err(&section.kind, section.line, format!("missing key `{prefix}{i}`")));
        }
    }
    Ok(found.into_values().collect())
}

fn parse_expr(
    section: &str,
    line: usize,
    text: &str,
    space: &VariableSpace,
) -> Result<Expression, Error> {
    Expression::parse(text, space)
        .map_err(|e| err(section, line, format!("in `{text}`: {e}")))
}

fn parse_bounds(section: &str, line: usize, text: &str) -> Result<(f64, f64), Error> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(err(section, line, format!("expected `lo, hi`, got `{text}`")));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| err(section, line, format!("bad number `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| err(section, line, format!("bad number `{}`", parts[1])))?;
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(err(section, line, format!("need lo < hi in `{text}`")));
    }
    Ok((lo, hi))
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<ModelFile, Error> {
        let sections = split_sections(text)?;
        let Some(first) = sections.first() else {
            return Err(err("space", 1, "file has no sections"));
        };
        if first.kind != "space" {
            return Err(err(&first.kind, first.line, "the first section must be [space]"));
        }

        // ---- [space] -------------------------------------------------
        let mut n: Option<usize> = None;
        let mut m: Option<usize> = None;
        let mut kind_ito = true;
        for (line, key, value) in &first.entries {
            match key.as_str() {
                "n" | "m" => {
                    let v: usize = value.parse().map_err(|_| {
                        err("space", *line, format!("bad integer `{value}` for `{key}`"))
                    })?;
                    if v == 0 || v > 9 {
                        return Err(err("space", *line, format!("`{key}` must be in 1..=9")));
                    }
                    if key == "n" { n = Some(v) } else { m = Some(v) }
                }
                "kind" => match value.as_str() {
                    "ito" => kind_ito = true,
                    "generalized" => kind_ito = false,
                    other => {
                        return Err(err(
                            "space",
                            *line,
                            format!("kind must be `ito` or `generalized`, got `{other}`"),
                        ))
                    }
                },
                other => return Err(err("space", *line, format!("unexpected key `{other}`"))),
            }
        }
        let n = n.ok_or_else(|| err("space", first.line, "missing key `n`"))?;
        let m = m.ok_or_else(|| err("space", first.line, "missing key `m`"))?;
        let space = VariableSpace::new(n, m);

        // ---- remaining sections ---------------------------------------
        let mut drift_sec: Option<&RawSection> = None;
        let mut diffusion_sec: Option<&RawSection> = None;
        let mut domain_sec: Option<&RawSection> = None;
        let mut beta_sec: Option<&RawSection> = None;
        let mut symmetry_secs: Vec<&RawSection> = Vec::new();
        let mut map_secs: Vec<&RawSection> = Vec::new();
        for sec in &sections[1..] {
            let slot = match sec.kind.as_str() {
                "space" => {
                    return Err(err("space", sec.line, "duplicate [space] section"));
                }
                "drift" => &mut drift_sec,
                "diffusion" => &mut diffusion_sec,
                "domain" => &mut domain_sec,
                "beta" => &mut beta_sec,
                "symmetry" => {
                    symmetry_secs.push(sec);
                    continue;
                }
                "map" => {
                    map_secs.push(sec);
                    continue;
                }
                other => {
                    return Err(err(other, sec.line, format!("unknown section `[{other}]`")));
                }
            };
            if sec.arg.is_some() {
                return Err(err(&sec.kind, sec.line, "this section takes no name argument"));
            }
            if slot.is_some() {
                return Err(err(&sec.kind, sec.line, format!("duplicate [{}] section", sec.kind)));
            }
            *slot = Some(sec);
        }

        // ---- [drift] ---------------------------------------------------
        let drift_sec =
            drift_sec.ok_or_else(|| err("drift", first.line, "missing [drift] section"))?;
        let mut drift = Vec::with_capacity(n);
        for (line, value) in take_indexed(drift_sec, "f", n)? {
            let e = parse_expr("drift", line, &value, &space)?;
            if kind_ito && e.has_noise() {
                return Err(err(
                    "drift",
                    line,
                    "coefficient uses a noise variable; declare `kind = generalized`",
                ));
            }
            drift.push(e);
        }

        // ---- [diffusion] ------------------------------------------------
        let diffusion_sec = diffusion_sec
            .ok_or_else(|| err("diffusion", first.line, "missing [diffusion] section"))?;
        let mut diffusion = vec![vec![Expression::zero(); m]; n];
        let mut seen = vec![vec![false; m]; n];
        for (line, key, value) in &diffusion_sec.entries {
            let cell = key
                .strip_prefix('s')
                .and_then(|tail| {
                    let (i, k) = tail.split_once('_').or_else(|| {
                        if tail.len() == 2 { Some(tail.split_at(1)) } else { None }
                    })?;
                    Some((i.parse::<usize>().ok()?, k.parse::<usize>().ok()?))
                })
                .filter(|(i, k)| (1..=n).contains(i) && (1..=m).contains(k));
            let Some((i, k)) = cell else {
                return Err(err(
                    "diffusion",
                    *line,
                    format!("unexpected key `{key}` (expected s11..s{n}{m})"),
                ));
            };
            if seen[i - 1][k - 1] {
                return Err(err("diffusion", *line, format!("duplicate key `{key}`")));
            }
            let e = parse_expr("diffusion", *line, value, &space)?;
            if kind_ito && e.has_noise() {
                return Err(err(
                    "diffusion",
                    *line,
                    "coefficient uses a noise variable; declare `kind = generalized`",
                ));
            }
            diffusion[i - 1][k - 1] = e;
            seen[i - 1][k - 1] = true;
        }
        for i in 0..n {
            for k in 0..m {
                if !seen[i][k] {
                    return Err(err(
                        "diffusion",
                        diffusion_sec.line,
                        format!("missing key `s{}{}`", i + 1, k + 1),
                    ));
                }
            }
        }

        // ---- [domain] ----------------------------------------------------
        let all_coeffs: Vec<&Expression> =
            drift.iter().chain(diffusion.iter().flatten()).collect();
        let mut domain = Domain::default_for(&space, &all_coeffs);
        if let Some(sec) = domain_sec {
            for (line, key, value) in &sec.entries {
                let bounds = parse_bounds("domain", *line, value)?;
                match space.lookup(key) {
                    Some(Var::State(i)) => domain.x[i] = bounds,
                    Some(Var::Time) => domain.t = bounds,
                    Some(Var::Noise(k)) => domain.w[k] = bounds,
                    None => {
                        return Err(err("domain", *line, format!("unknown axis `{key}`")));
                    }
                }
            }
        }

        // ---- system -------------------------------------------------------
        let sde = Sde::new(space, drift, diffusion, Some(domain))
            .map_err(|e| err("space", first.line, e.to_string()))?;
        let system = if kind_ito {
            AnySystem::Ito(ItoSystem::new(sde).map_err(|e| err("drift", first.line, e.to_string()))?)
        } else {
            AnySystem::Generalized(GeneralizedSystem::new(sde))
        };

        // ---- [symmetry] sections --------------------------------------------
        let mut symmetries = Vec::new();
        for (idx, sec) in symmetry_secs.iter().enumerate() {
            let name = section_name(sec, "sym", idx, &symmetries)?;
            let mut phi = Vec::with_capacity(n);
            for (line, value) in take_indexed(sec, "phi", n)? {
                phi.push(parse_expr("symmetry", line, &value, &space)?);
            }
            let field = VectorField::new(space, phi)
                .map_err(|e| err("symmetry", sec.line, e.to_string()))?;
            symmetries.push((name, field));
        }

        // ---- [map] sections ---------------------------------------------------
        let mut maps: Vec<(String, MapSpec)> = Vec::new();
        for (idx, sec) in map_secs.iter().enumerate() {
            let name = section_name(sec, "map", idx, &maps)?;
            let mut forward: BTreeMap<usize, Expression> = BTreeMap::new();
            let mut inverse: BTreeMap<usize, Expression> = BTreeMap::new();
            let mut beta = None;
            for (line, key, value) in &sec.entries {
                if key == "beta" {
                    beta = Some(parse_state_free("map", *line, value, &space)?);
                    continue;
                }
                let (tail, table) = if let Some(tail) = key.strip_prefix("Phi") {
                    (tail, &mut forward)
                } else if let Some(tail) = key.strip_prefix('F') {
                    (tail, &mut inverse)
                } else {
                    return Err(err("map", *line, format!("unexpected key `{key}`")));
                };
                let i: usize = tail
                    .parse()
                    .ok()
                    .filter(|i| (1..=n).contains(i))
                    .ok_or_else(|| err("map", *line, format!("unexpected key `{key}`")))?;
                table.insert(i, parse_expr("map", *line, value, &space)?);
            }
            if forward.len() != n {
                return Err(err(
                    "map",
                    sec.line,
                    format!("expected Phi1..Phi{n}, found {}", forward.len()),
                ));
            }
            if !inverse.is_empty() && inverse.len() != n {
                return Err(err(
                    "map",
                    sec.line,
                    format!("expected all of F1..F{n} or none, found {}", inverse.len()),
                ));
            }
            maps.push((
                name,
                MapSpec {
                    forward: forward.into_values().collect(),
                    inverse: if inverse.is_empty() {
                        None
                    } else {
                        Some(inverse.into_values().collect())
                    },
                    beta,
                },
            ));
        }

        // ---- [beta] -----------------------------------------------------------
        if let Some(sec) = beta_sec {
            let (line, _, value) = sec
                .entries
                .iter()
                .find(|(_, k, _)| k == "b")
                .ok_or_else(|| err("beta", sec.line, "missing key `b`"))?;
            if sec.entries.len() != 1 {
                return Err(err("beta", sec.line, "the [beta] section takes only `b`"));
            }
            let e = parse_state_free("beta", *line, value, &space)?;
            match maps.len() {
                0 => return Err(err("beta", sec.line, "[beta] given but the file has no [map]")),
                1 => {
                    if maps[0].1.beta.is_some() {
                        return Err(err("beta", sec.line, "the map already sets `beta`"));
                    }
                    maps[0].1.beta = Some(e);
                }
                k => {
                    return Err(err(
                        "beta",
                        sec.line,
                        format!("[beta] is ambiguous with {k} maps; set `beta` inside one [map]"),
                    ))
                }
            }
        }

        Ok(ModelFile { system, symmetries, maps })
    }

    pub fn load(path: &Path) -> Result<ModelFile, Error> {
        let text = std::fs::read_to_string(path)?;
        ModelFile::parse(&text)
    }

    pub fn sde(&self) -> &Sde {
        self.system.sde()
    }

    /// Looks up a symmetry by name, or the only one when `name` is `None`.
    pub fn symmetry(&self, name: Option<&str>) -> Result<&VectorField, Error> {
        pick("symmetry", &self.symmetries, name)
    }

    /// Looks up a map by name, or the only one when `name` is `None`.
    pub fn map(&self, name: Option<&str>) -> Result<&MapSpec, Error> {
        pick("map", &self.maps, name)
    }

    /// All symmetries in file order as a candidate generator chain.
    pub fn chain(&self) -> Result<SolvableChain, Error> {
        SolvableChain::new(self.symmetries.iter().map(|(_, f)| f.clone()).collect())
    }

    /// Deterministic text form; `parse(render(f))` reproduces `f` exactly.
    pub fn render(&self) -> String {
        use std::fmt::Write;
        let sde = self.sde();
        let space = sde.space();
        let mut out = String::new();
        out.push_str("[space]\n");
        writeln!(out, "n = {}", space.n).unwrap();
        writeln!(out, "m = {}", space.m).unwrap();
        writeln!(
            out,
            "kind = {}",
            if self.system.is_ito() { "ito" } else { "generalized" }
        )
        .unwrap();
        out.push_str("\n[domain]\n");
        let dom = sde.domain();
        for (i, (lo, hi)) in dom.x.iter().enumerate() {
            writeln!(out, "x{} = {lo}, {hi}", i + 1).unwrap();
        }
        writeln!(out, "t = {}, {}", dom.t.0, dom.t.1).unwrap();
        for (k, (lo, hi)) in dom.w.iter().enumerate() {
            writeln!(out, "w{} = {lo}, {hi}", k + 1).unwrap();
        }
        out.push_str("\n[drift]\n");
        for i in 0..space.n {
            writeln!(out, "f{} = {}", i + 1, sde.drift(i)).unwrap();
        }
        out.push_str("\n[diffusion]\n");
        for i in 0..space.n {
            for k in 0..space.m {
                writeln!(out, "s{}{} = {}", i + 1, k + 1, sde.diffusion(i, k)).unwrap();
            }
        }
        for (name, field) in &self.symmetries {
            writeln!(out, "\n[symmetry {name}]").unwrap();
            for (i, c) in field.components().iter().enumerate() {
                writeln!(out, "phi{} = {c}", i + 1).unwrap();
            }
        }
        for (name, map) in &self.maps {
            writeln!(out, "\n[map {name}]").unwrap();
            for (i, c) in map.forward.iter().enumerate() {
                writeln!(out, "Phi{} = {c}", i + 1).unwrap();
            }
            if let Some(inv) = &map.inverse {
                for (i, c) in inv.iter().enumerate() {
                    writeln!(out, "F{} = {c}", i + 1).unwrap();
                }
            }
            if let Some(b) = &map.beta {
                writeln!(out, "beta = {b}").unwrap();
            }
        }
        out
    }
}

fn parse_state_free(
    section: &str,
    line: usize,
    text: &str,
    space: &VariableSpace,
) -> Result<Expression, Error> {
    let e = parse_expr(section, line, text, space)?;
    for i in 0..space.n {
        if e.depends_on(Var::State(i)) {
            return Err(err(
                section,
                line,
                format!("`beta` must depend on t and w only, but uses x{}", i + 1),
            ));
        }
    }
    Ok(e)
}

fn section_name<T>(
    sec: &RawSection,
    stem: &str,
    idx: usize,
    existing: &[(String, T)],
) -> Result<String, Error> {
    let name = sec.arg.clone().unwrap_or_else(|| format!("{stem}{}", idx + 1));
    if existing.iter().any(|(n, _)| *n == name) {
        return Err(err(&sec.kind, sec.line, format!("duplicate {} name `{name}`", sec.kind)));
    }
    Ok(name)
}

fn pick<'a, T>(
    what: &str,
    items: &'a [(String, T)],
    name: Option<&str>,
) -> Result<&'a T, Error> {
    match name {
        Some(n) => items
            .iter()
            .find(|(k, _)| k == n)
            .map(|(_, v)| v)
            .ok_or_else(|| {
                let known: Vec<&str> = items.iter().map(|(k, _)| k.as_str()).collect();
                Error::Missing(format!("no {what} named `{n}` (file has: {})", known.join(", ")))
            }),
        None => match items {
            [] => Err(Error::Missing(format!("the model file declares no {what}"))),
            [(_, only)] => Ok(only),
            _ => {
                let known: Vec<&str> = items.iter().map(|(k, _)| k.as_str()).collect();
                Err(Error::Missing(format!(
                    "several {what}s declared ({}); pick one by name",
                    known.join(", ")
                )))
            }
        },
    }
}
