//! Run configuration: which models, which suites, sample windows and
//! tolerances. Accepted as JSON or TOML; unknown fields are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heat::SampleWindow;
use crate::models::{full_catalog, ModelKind, ModelSpec};

/// Suite names accepted by `suites` and by `check <suite>`.
pub const SUITES: [&str; 12] = [
    "geometry",
    "flow",
    "rigidity",
    "entropy",
    "heat",
    "kernel",
    "concentration",
    "lgeo",
    "collapsing",
    "pseudo-locality",
    "gap",
    "curvature-integrals",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

/// Tolerances for the strict checks. Each one is the allowed amount by
/// which a margin may be negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub identity: f64,
    pub flow: f64,
    pub special_solution: f64,
    pub spectrum: f64,
    pub oracle: f64,
    pub entropy_constant: f64,
    pub carrillo_ni: f64,
    pub gaussian_entropy: f64,
    pub bounded_geometry: f64,
    pub log_sobolev: f64,
    pub equality: f64,
    pub kernel_relative: f64,
    pub mass: f64,
    pub semigroup: f64,
    pub heat_residual: f64,
    pub maximum_principle: f64,
    pub harnack: f64,
    pub harnack_flat: f64,
    pub consistency: f64,
    pub b_mean: f64,
    pub lattice: f64,
    pub volume: f64,
    pub ultracontractivity: f64,
    pub heat_mode: f64,
    pub conjugate_mass: f64,
    pub reduced_distance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-10,
            flow: 1e-10,
            special_solution: 1e-8,
            spectrum: 1e-12,
            oracle: 1e-9,
            entropy_constant: 1e-8,
            carrillo_ni: 1e-6,
            gaussian_entropy: 1e-5,
            bounded_geometry: 0.05,
            log_sobolev: 1e-8,
            equality: 1e-6,
            kernel_relative: 1e-5,
            mass: 1e-5,
            semigroup: 1e-6,
            heat_residual: 1e-6,
            maximum_principle: 1e-8,
            harnack: 1e-4,
            harnack_flat: 1e-8,
            consistency: 1e-5,
            b_mean: 1e-3,
            lattice: 1e-4,
            volume: 1e-8,
            ultracontractivity: 1e-9,
            heat_mode: 1e-4,
            conjugate_mass: 1e-6,
            reduced_distance: 1e-5,
        }
    }
}

impl Tolerances {
    fn all(&self) -> [(&'static str, f64); 26] {
        [
            ("identity", self.identity),
            ("flow", self.flow),
            ("special_solution", self.special_solution),
            ("spectrum", self.spectrum),
            ("oracle", self.oracle),
            ("entropy_constant", self.entropy_constant),
            ("carrillo_ni", self.carrillo_ni),
            ("gaussian_entropy", self.gaussian_entropy),
            ("bounded_geometry", self.bounded_geometry),
            ("log_sobolev", self.log_sobolev),
            ("equality", self.equality),
            ("kernel_relative", self.kernel_relative),
            ("mass", self.mass),
            ("semigroup", self.semigroup),
            ("heat_residual", self.heat_residual),
            ("maximum_principle", self.maximum_principle),
            ("harnack", self.harnack),
            ("harnack_flat", self.harnack_flat),
            ("consistency", self.consistency),
            ("b_mean", self.b_mean),
            ("lattice", self.lattice),
            ("volume", self.volume),
            ("ultracontractivity", self.ultracontractivity),
            ("heat_mode", self.heat_mode),
            ("conjugate_mass", self.conjugate_mass),
            ("reduced_distance", self.reduced_distance),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Report file name inside `dir`.
    #[serde(default = "default_report_name")]
    pub report: String,
    /// Write per-suite CSV files next to the report.
    #[serde(default = "default_true")]
    pub csv: bool,
}

fn default_report_name() -> String {
    "report.json".into()
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("shrinkerlab-out"),
            report: default_report_name(),
            csv: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub models: Vec<ModelSpec>,
    /// Empty selects every suite.
    pub suites: Vec<String>,
    pub tau_grid: TauGrid,
    pub window: SampleWindow,
    pub tolerances: Tolerances,
    /// Radii of the volume-growth checks.
    pub radii: Vec<f64>,
    /// Extent of the flat factor for ball volumes; radii beyond half of it
    /// are skipped.
    pub volume_extent: f64,
    /// User-supplied entropy threshold for the pseudo-locality scale.
    pub delta0: f64,
    /// Weight exponent of the curvature integral.
    pub lambda: f64,
    pub kernel_samples: usize,
    pub harnack_samples: usize,
    pub oracle_trials: usize,
    pub seed: u64,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            models: full_catalog(),
            suites: Vec::new(),
            tau_grid: TauGrid {
                min: 1e-2,
                max: 1e2,
                points: 20,
            },
            window: SampleWindow::default(),
            tolerances: Tolerances::default(),
            radii: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            volume_extent: 40.0,
            delta0: 0.1,
            lambda: 1.0,
            kernel_samples: 200,
            harnack_samples: 50,
            oracle_trials: 10_000,
            seed: 20_240_601,
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse JSON or TOML, chosen by file extension (JSON when unknown).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let config = if is_toml { Self::from_toml(&text) } else { Self::from_json(&text) }?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}: ")
                })
                .unwrap_or_default();
            Error::Config(format!("{at}{}", e.message()))
        })
    }

    /// The suites this run executes, in canonical order.
    pub fn selected_suites(&self) -> Vec<&'static str> {
        SUITES
            .iter()
            .copied()
            .filter(|s| self.suites.is_empty() || self.suites.iter().any(|x| x == s || x == "all"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.suites {
            if s != "all" && !SUITES.contains(&s.as_str()) {
                return Err(Error::Config(format!(
                    "unknown suite `{s}`; valid suites: {}",
                    SUITES.join(", ")
                )));
            }
        }
        for (name, v) in self.tolerances.all() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerances.{name} must be positive, got {v}")));
            }
        }
        let w = &self.window;
        if !(w.delta > 0.0 && w.delta < 1.0) {
            return Err(Error::Config(format!("window.delta must lie in (0, 1), got {}", w.delta)));
        }
        if !(w.reach > 0.0 && w.min_elapsed > 0.0 && w.min_elapsed < 2.0 && w.epsilon > 0.0 && w.epsilon < 4.0) {
            return Err(Error::Config(format!(
                "window needs reach > 0, 0 < min_elapsed < 2 and 0 < epsilon < 4, got {w:?}"
            )));
        }
        let g = &self.tau_grid;
        if !(g.min >= 1e-3 && g.max <= 1e3 && g.min < g.max && g.points >= 2) {
            return Err(Error::Config(format!(
                "tau_grid needs 1e-3 <= min < max <= 1e3 and at least 2 points, got {g:?}"
            )));
        }
        if self.radii.iter().any(|r| !(*r >= 1.0)) || self.radii.is_empty() {
            return Err(Error::Config("radii must be nonempty and >= 1".into()));
        }
        for (name, v) in [
            ("volume_extent", self.volume_extent),
            ("delta0", self.delta0),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.kernel_samples == 0 || self.harnack_samples == 0 || self.oracle_trials == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        for m in &self.models {
            m.build().map_err(|e| Error::Config(format!("model {m:?}: {e}")))?;
        }
        Ok(())
    }
}

/// Parse `gaussian:3`, `sphere:2` or `cylinder:4:2`.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| {
        usize::from_str(s).map_err(|_| Error::Config(format!("`{s}` in model `{text}` is not a dimension")))
    };
    let (kind, k) = match (parts.first().copied(), parts.len()) {
        (Some("gaussian"), 2) => (ModelKind::Gaussian, None),
        (Some("sphere"), 2) => (ModelKind::Sphere, None),
        (Some("cylinder"), 3) => (ModelKind::Cylinder, Some(num(parts[2])?)),
        _ => {
            return Err(Error::Config(format!(
                "model `{text}` should look like gaussian:N, sphere:N or cylinder:N:K"
            )))
        }
    };
    Ok(ModelSpec {
        kind,
        n: num(parts[1])?,
        k,
        grid: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_names_the_valid_ones() {
        let cfg = RunConfig {
            suites: vec!["volumes".into()],
            ..RunConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("volumes") && msg.contains("collapsing") && msg.contains("lgeo"), "{msg}");
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let err = RunConfig::from_json("{\n  \"seed\": 3,\n  \"sead\": 4\n}").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("sead"), "{err}");
        let err = RunConfig::from_toml("seed = 3\n[window]\ndelta = 0.2\nwidth = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("width"), "{err}");
    }

    #[test]
    fn toml_and_json_agree() {
        let toml_cfg = RunConfig::from_toml(
            "suites = [\"gap\"]\nseed = 5\n[[models]]\nkind = \"cylinder\"\nn = 4\nk = 2\n",
        )
        .unwrap();
        let json_cfg = RunConfig::from_json(r#"{"suites":["gap"],"seed":5,"models":[{"kind":"cylinder","n":4,"k":2}]}"#).unwrap();
        assert_eq!(toml_cfg, json_cfg);
        assert_eq!(toml_cfg.selected_suites(), vec!["gap"]);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.window.delta = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.tolerances.mass = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("tolerances.mass"));
        let mut cfg = RunConfig::default();
        cfg.models = vec![parse_model("cylinder:4:4").unwrap()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn model_strings() {
        assert_eq!(parse_model("cylinder:4:2").unwrap().k, Some(2));
        assert_eq!(parse_model("sphere:3").unwrap().n, 3);
        assert!(parse_model("torus:2").is_err());
        assert!(parse_model("gaussian:x").is_err());
    }
}
