//! Check records, the report document and its digest.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Constant-recording check; never fails a run.
    Recorded,
}

/// One verified inequality or identity. Strict checks compare `lhs ≤ rhs`
/// with `margin = rhs - lhs` and fail when the margin is below
/// `-tolerance`; identities are stored as `lhs = |residual|`, `rhs = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub id: String,
    pub anchor: String,
    pub suite: String,
    pub model: Option<String>,
    pub inputs_digest: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub tolerance: Option<f64>,
    pub constants: BTreeMap<String, f64>,
    pub status: Status,
    pub notes: Vec<String>,
    /// Wall time in seconds; excluded from the digest.
    pub runtime: f64,
}

impl CheckReport {
    /// `lhs ≤ rhs` within `tolerance`.
    pub fn bound(anchor: &str, inputs: &impl Serialize, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let margin = rhs - lhs;
        let status = if margin >= -tolerance { Status::Pass } else { Status::Fail };
        Self::new(anchor, inputs, lhs, rhs, margin, Some(tolerance), status)
    }

    /// |residual| ≤ tolerance.
    pub fn identity(anchor: &str, inputs: &impl Serialize, residual: f64, tolerance: f64) -> Self {
        let r = if residual.is_nan() { f64::MAX } else { residual.abs() };
        Self::bound(anchor, inputs, r, 0.0, tolerance)
    }

    /// A boolean property; margin is ±1.
    pub fn holds(anchor: &str, inputs: &impl Serialize, ok: bool) -> Self {
        let margin = if ok { 0.0 } else { -1.0 };
        let status = if ok { Status::Pass } else { Status::Fail };
        Self::new(anchor, inputs, f64::from(u8::from(!ok)), 0.0, margin, Some(0.5), status)
    }

    pub fn recorded(anchor: &str, inputs: &impl Serialize, lhs: f64, rhs: f64) -> Self {
        Self::new(anchor, inputs, lhs, rhs, rhs - lhs, None, Status::Recorded)
    }

    fn new(
        anchor: &str,
        inputs: &impl Serialize,
        lhs: f64,
        rhs: f64,
        margin: f64,
        tolerance: Option<f64>,
        status: Status,
    ) -> Self {
        let value = serde_json::to_value(inputs).unwrap_or(Value::Null);
        Self {
            id: String::new(),
            anchor: anchor.to_string(),
            suite: String::new(),
            model: None,
            inputs_digest: sha256_hex(&canonical_json(&value)),
            lhs,
            rhs,
            margin,
            tolerance,
            constants: BTreeMap::new(),
            status,
            notes: Vec::new(),
            runtime: 0.0,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }

    pub fn is_failure(&self) -> bool {
        self.status == Status::Fail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub spec: crate::models::ModelSpec,
    pub mu: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub checks: usize,
    pub passed: usize,
    pub failed: usize,
    pub recorded: usize,
}

/// Timing lives apart from everything that enters the digest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub finished_unix: u64,
    pub suites: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub digest: String,
    pub config: RunConfig,
    pub models: Vec<ModelEntry>,
    pub suites: Vec<String>,
    pub summary: Summary,
    pub checks: Vec<CheckReport>,
    pub notes: Vec<String>,
    pub timing: Timing,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &CheckReport> {
        self.checks.iter().filter(|c| c.is_failure())
    }

    pub fn check(&self, id: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// SHA-256 of the canonical JSON of the report without `digest`,
    /// `timing` and per-check `runtime`.
    pub fn compute_digest(&self) -> String {
        let mut v = serde_json::to_value(self).unwrap_or(Value::Null);
        if let Value::Object(map) = &mut v {
            map.remove("digest");
            map.remove("timing");
            if let Some(Value::Array(checks)) = map.get_mut("checks") {
                for c in checks {
                    if let Value::Object(c) = c {
                        c.remove("runtime");
                    }
                }
            }
        }
        sha256_hex(&canonical_json(&v))
    }
}

pub fn summarize(checks: &[CheckReport]) -> Summary {
    let mut s = Summary {
        checks: checks.len(),
        ..Summary::default()
    };
    for c in checks {
        match c.status {
            Status::Pass => s.passed += 1,
            Status::Fail => s.failed += 1,
            Status::Recorded => s.recorded += 1,
        }
    }
    s
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Sorted keys, no whitespace, floats as `%.12e`, integers verbatim.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                let _ = write!(out, "{:.12e}", n.as_f64().unwrap_or(f64::NAN));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push(':');
                write_canonical(&map[k.as_str()], out);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_form_sorts_keys_and_fixes_floats() {
        let v = json!({"b": 1.5, "a": [1, -2, 0.1], "c": {"z": null, "y": "q\""}});
        assert_eq!(
            canonical_json(&v),
            r#"{"a":[1,-2,1.000000000000e-1],"b":1.500000000000e0,"c":{"y":"q\"","z":null}}"#
        );
    }

    #[test]
    fn status_follows_margin() {
        let ok = CheckReport::bound("a", &1, 1.0, 1.0 - 1e-9, 1e-8);
        assert_eq!(ok.status, Status::Pass);
        let bad = CheckReport::bound("a", &1, 1.0, 0.9, 1e-8);
        assert_eq!(bad.status, Status::Fail);
        assert!(bad.margin < -1e-8);
        assert_eq!(CheckReport::identity("a", &1, f64::NAN, 1.0).status, Status::Fail);
        assert_eq!(CheckReport::recorded("a", &1, 5.0, 0.0).status, Status::Recorded);
        assert_ne!(
            CheckReport::bound("a", &(1, 2), 0.0, 0.0, 1.0).inputs_digest,
            CheckReport::bound("a", &(1, 3), 0.0, 0.0, 1.0).inputs_digest
        );
    }
}
