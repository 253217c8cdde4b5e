//! Structured run reports.
//!
//! Every command produces a [`Report`]: an ordered list of sections,
//! each an ordered list of key/value entries. Reports render to human
//! text or to machine-readable JSON; the JSON form parses back into an
//! equal `Report`, so stored reports can be re-read and compared.
//!
//! Rendering is deterministic: entry order is insertion order, floats
//! print in shortest round-trip form, and no timestamps or paths of the
//! moment are ever included. Two runs with equal inputs and seeds render
//! byte-identical reports.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;

/// One key/value line of a report section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub key: String,
    pub value: Value,
}

/// A titled group of entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub title: String,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn new(title: impl Into<String>) -> Section {
        Section { title: title.into(), entries: Vec::new() }
    }

    /// Appends an entry; any serializable value works.
    pub fn push(&mut self, key: impl Into<String>, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.entries.push(Entry { key: key.into(), value });
    }

    /// Builder-style [`push`](Section::push).
    pub fn with(mut self, key: impl Into<String>, value: impl Serialize) -> Section {
        self.push(key, value);
        self
    }
}

/// A full run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// The command that produced the report.
    pub tool: String,
    /// Seed governing every random choice of the run.
    pub seed: u64,
    /// Overall verdict, when the command decides something.
    pub passes: Option<bool>,
    pub sections: Vec<Section>,
}

impl Report {
    pub fn new(tool: impl Into<String>, seed: u64) -> Report {
        Report { tool: tool.into(), seed, passes: None, sections: Vec::new() }
    }

    pub fn set_verdict(&mut self, passes: bool) {
        self.passes = Some(passes);
    }

    pub fn add(&mut self, section: Section) {
        self.sections.push(section);
    }

    /// Machine-readable rendering (pretty JSON, trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parses a rendering produced by [`to_json`](Report::to_json).
    pub fn from_json(text: &str) -> Result<Report, Error> {
        Ok(serde_json::from_str(text)?)
    }

    /// Human-readable rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("[{}] seed {}\n", self.tool, self.seed));
        for section in &self.sections {
            out.push_str(&format!("\n== {} ==\n", section.title));
            for Entry { key, value } in &section.entries {
                out.push_str(&format!("  {key}: {}\n", render_value(value)));
            }
        }
        if let Some(passes) = self.passes {
            out.push_str(&format!(
                "\nverdict: {}\n",
                if passes { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Plain scalars render bare; composites render as compact JSON.
fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        Value::Bool(_) | Value::Number(_) => v.to_string(),
        composite => serde_json::to_string(composite).unwrap_or_else(|_| "?".into()),
    }
}
