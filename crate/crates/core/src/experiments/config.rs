//! Versioned JSON experiment configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::nonlinearity::NonlinearitySpec;
use crate::solver::SolveConfig;

/// Schema version understood by this build.
pub const CONFIG_VERSION: u32 = 1;

/// The experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Solve,
    SweepRho,
    SweepBeta,
    Audit,
    Gn,
    Threshold,
    Bubbles,
    Refine,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Solve => "solve",
            Scenario::SweepRho => "sweep-rho",
            Scenario::SweepBeta => "sweep-beta",
            Scenario::Audit => "audit",
            Scenario::Gn => "gn",
            Scenario::Threshold => "threshold",
            Scenario::Bubbles => "bubbles",
            Scenario::Refine => "refine",
        }
    }

    /// Whether the scenario solves with the configured spec and is gated by the audit.
    pub fn uses_solver(self) -> bool {
        matches!(
            self,
            Scenario::Solve | Scenario::SweepRho | Scenario::SweepBeta | Scenario::Threshold | Scenario::Refine
        )
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Radial grid parameters. For a sweep row with bounds `ρ`, the radius is
/// `r_max · (max ρ / rho_ref)^rho_scaling`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub r_max: f64,
    pub nodes: usize,
    pub rho_scaling: f64,
    pub rho_ref: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_max: 10.0,
            nodes: 2000,
            rho_scaling: 0.0,
            rho_ref: 1.0,
        }
    }
}

impl GridConfig {
    pub fn radius_for(&self, rho: &[f64]) -> f64 {
        let top = rho.iter().cloned().fold(0.0, f64::max);
        self.r_max * (top / self.rho_ref).powf(self.rho_scaling)
    }
}

/// Sweep axes and per-scenario parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Axes {
    /// Mass-bound vectors for `sweep-rho`.
    pub rho: Vec<Vec<f64>>,
    /// Coupling strengths for `sweep-beta`.
    pub beta: Vec<f64>,
    /// Exponents for `gn`.
    pub p: Vec<f64>,
    /// Bubble scales for `bubbles` and `threshold`.
    pub eps: Vec<f64>,
    /// Node counts for `refine`.
    pub nodes: Vec<usize>,
}

fn default_bubble_nodes() -> usize {
    400_001
}

/// One experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub scenario: Scenario,
    /// Required by every scenario except `gn`.
    #[serde(default)]
    pub spec: Option<NonlinearitySpec>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub axes: Axes,
    /// Grid nodes on `[0, 2]` for bubble energies.
    #[serde(default = "default_bubble_nodes")]
    pub bubble_nodes: usize,
    /// Output directory used when `--out` is not given.
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentConfig {
    /// Parse and validate a JSON document.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.version != CONFIG_VERSION {
            return Err(format!("config version {} (expected {CONFIG_VERSION})", self.version));
        }
        let need_spec = self.scenario != Scenario::Gn;
        let spec = match (&self.spec, need_spec) {
            (None, true) => return Err(format!("scenario {} needs a spec", self.scenario)),
            (s, _) => s.as_ref(),
        };
        if !(self.grid.r_max > 0.0) || self.grid.nodes < 16 || !(self.grid.rho_ref > 0.0) {
            return Err("grid needs r_max > 0, nodes >= 16 and rho_ref > 0".into());
        }
        let empty = |name: &str| Err(format!("scenario {} needs a nonempty axes.{name}", self.scenario));
        match self.scenario {
            Scenario::SweepRho if self.axes.rho.is_empty() => return empty("rho"),
            Scenario::SweepBeta if self.axes.beta.is_empty() => return empty("beta"),
            Scenario::Gn if self.axes.p.is_empty() => return empty("p"),
            Scenario::Bubbles if self.axes.eps.len() < 2 => return empty("eps (two or more)"),
            Scenario::Refine if self.axes.nodes.len() < 3 => return empty("nodes (three or more)"),
            _ => {}
        }
        if let Some(spec) = spec {
            if self.scenario == Scenario::SweepRho {
                if let Some(r) = self.axes.rho.iter().find(|r| r.len() != spec.k()) {
                    return Err(format!("rho row {r:?} has the wrong length for K = {}", spec.k()));
                }
                for r in &self.axes.rho {
                    SolveConfig::with_rho(r).validate(spec.k()).map_err(|e| e.to_string())?;
                }
            } else if self.scenario.uses_solver() {
                self.solve.validate(spec.k()).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SOLVE: &str = r#"{
        "version": 1,
        "scenario": "solve",
        "spec": {"dimension": 3, "components": 1,
                 "terms": [{"type": "separable_power", "component": 0, "mu": 1.0, "p": 4.0}]},
        "grid": {"r_max": 1.2, "nodes": 400},
        "solve": {"rho": [1.0], "starts": 1}
    }"#;

    #[test]
    fn parses_minimal_solve() {
        let c = ExperimentConfig::from_json(SOLVE).unwrap();
        assert_eq!(c.scenario, Scenario::Solve);
        assert_eq!(c.grid.nodes, 400);
        assert_eq!(c.grid.rho_scaling, 0.0);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(ExperimentConfig::from_json("{").is_err());
        assert!(ExperimentConfig::from_json(&SOLVE.replace("\"version\": 1", "\"version\": 2")).is_err());
        assert!(ExperimentConfig::from_json(&SOLVE.replace("\"starts\": 1", "\"starts\": 1, \"bogus\": 0")).is_err());
        let no_axes = SOLVE.replace("\"scenario\": \"solve\"", "\"scenario\": \"sweep-rho\"");
        assert!(ExperimentConfig::from_json(&no_axes).is_err());
    }

    #[test]
    fn grid_radius_scaling() {
        let g = GridConfig {
            r_max: 1.2,
            nodes: 100,
            rho_scaling: 2.0,
            rho_ref: 1.0,
        };
        assert!((g.radius_for(&[0.5]) - 0.3).abs() < 1e-15);
    }
}
