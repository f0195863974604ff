use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::Result;
use crate::measures::{HolonomyMeasure, ANGLE_MERGE_TOL};
use crate::output::{fmt17, F17};

/// `git describe` of the build, or the package version outside a checkout.
pub const VERSION: &str = env!("HOLONOMY_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        }
    }
}

/// Plot-ready numeric table with a fixed column order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|&x| if x.is_finite() { fmt17(x) } else { "nan".into() })
                .collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

/// Outcome of one subcommand.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub verdict: Option<Verdict>,
    /// Free-form numbers and diagnostics; floats wrapped in [`F17`].
    pub summary: Value,
    pub tables: Vec<Table>,
    pub measures: Vec<(String, HolonomyMeasure)>,
    pub extra_csv: Vec<(String, String)>,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash,
            seed,
            verdict: None,
            summary: json!({}),
            tables: Vec::new(),
            measures: Vec::new(),
            extra_csv: Vec::new(),
            runtime_seconds: 0.0,
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> Value {
        let tables: Vec<Value> = self
            .tables
            .iter()
            .map(|t| {
                json!({
                    "name": t.name,
                    "columns": t.columns,
                    "rows": t.rows.iter().map(|r| r.iter().map(|&x| F17(x)).collect::<Vec<_>>()).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "command": self.command,
            "version": VERSION,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "verdict": self.verdict.map(Verdict::as_str),
            "circle_metric": "arc length on the unit circle (turns x 2 pi)",
            "tolerances": tolerances(),
            "summary": self.summary,
            "tables": tables,
            "measures": self.measures.iter().map(|(n, _)| format!("{n}.json")).collect::<Vec<_>>(),
            "runtime_seconds": F17(self.runtime_seconds),
        })
    }

    /// `report.json`, one CSV per table, one JSON file per measure.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), pretty(&self.to_json())?)?;
        for t in &self.tables {
            std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        for (name, m) in &self.measures {
            std::fs::write(dir.join(format!("{name}.json")), pretty(&m.to_json())?)?;
        }
        for (name, body) in &self.extra_csv {
            std::fs::write(dir.join(format!("{name}.csv")), body)?;
        }
        Ok(())
    }
}

pub fn pretty(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Numerical tolerances in force, grouped by module.
pub fn tolerances() -> Value {
    use crate::bridge::{LIFT_DEFECT_TOL, PROPOSAL_RETRY_CAP, WINDING_TAIL};
    use crate::connections::{CURVATURE_FD_STEP, SPHERE_POLE_MARGIN};
    use crate::geometry::{HEAT_KERNEL_TOL, SPECTRAL_SMALL_TIME};
    use crate::transport::{Steps, U1_VIEW_TOL};
    let rule = |s: Steps| match s {
        Steps::Rule {
            min_steps,
            max_h,
            max_phase,
        } => json!({"min_steps": min_steps, "max_h": F17(max_h), "max_phase": F17(max_phase)}),
        Steps::Fixed(n) => json!({"fixed": n}),
    };
    json!({
        "geometry": {"heat_kernel_tol": F17(HEAT_KERNEL_TOL), "spectral_small_time": F17(SPECTRAL_SMALL_TIME)},
        "connections": {"sphere_pole_margin": F17(SPHERE_POLE_MARGIN), "curvature_fd_step": F17(CURVATURE_FD_STEP)},
        "bridge": {"winding_tail": F17(WINDING_TAIL), "lift_defect_tol": F17(LIFT_DEFECT_TOL), "proposal_retry_cap": PROPOSAL_RETRY_CAP},
        "transport": {"default_steps": rule(Steps::DEFAULT), "stokes_steps": rule(Steps::STOKES), "u1_view_tol": F17(U1_VIEW_TOL)},
        "measures": {"angle_merge_tol": F17(ANGLE_MERGE_TOL)},
    })
}
