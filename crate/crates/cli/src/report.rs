//! Machine-readable experiment outcomes: a list of named checks with
//! values, thresholds and pass flags, mirrored to `summary.csv`.

use std::io;
use std::path::{Path, PathBuf};

use crate::csvio::{write_csv, Cell};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// Human-readable relation, e.g. ">=" or "<".
    pub relation: &'static str,
    pub pass: bool,
    /// Wall-clock measurements vary run to run; they land in `timings.csv`
    /// so `summary.csv` stays byte-identical across identical runs.
    pub volatile: bool,
}

impl CheckResult {
    fn new(
        name: impl Into<String>,
        value: f64,
        threshold: f64,
        relation: &'static str,
        pass: bool,
    ) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation,
            pass,
            volatile: false,
        }
    }

    pub fn ge(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, ">=", value >= threshold)
    }

    pub fn gt(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, ">", value > threshold)
    }

    pub fn lt(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, "<", value < threshold)
    }

    pub fn le(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, "<=", value <= threshold)
    }

    pub fn timing(name: impl Into<String>, seconds: f64, limit: f64) -> Self {
        let mut c = Self::new(name, seconds, limit, "<", seconds < limit);
        c.volatile = true;
        c
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: String,
    pub checks: Vec<CheckResult>,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            checks: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes `summary.csv` (stable checks) and, when any timing checks
    /// exist, `timings.csv` into `dir`.
    pub fn write_summary(&mut self, dir: &Path) -> io::Result<()> {
        let row = |c: &CheckResult| {
            vec![
                Cell::Text(self.experiment.clone()),
                Cell::Text(c.name.clone()),
                Cell::Float(c.value),
                Cell::Text(c.relation.to_string()),
                Cell::Float(c.threshold),
                Cell::from(c.pass),
            ]
        };
        let header = [
            "experiment",
            "check",
            "value",
            "relation",
            "threshold",
            "pass",
        ];
        let path = dir.join("summary.csv");
        write_csv(
            &path,
            &header,
            self.checks.iter().filter(|c| !c.volatile).map(row),
        )?;
        self.files.push(path);
        if self.checks.iter().any(|c| c.volatile) {
            let path = dir.join("timings.csv");
            write_csv(
                &path,
                &header,
                self.checks.iter().filter(|c| c.volatile).map(row),
            )?;
            self.files.push(path);
        }
        Ok(())
    }

    /// One line per check, suitable for terminal output.
    pub fn render_text(&self) -> String {
        let mut out = format!("experiment: {}\n", self.experiment);
        for c in &self.checks {
            out.push_str(&format!(
                "  [{}] {}: {:.6} {} {:.6}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.relation,
                c.threshold
            ));
        }
        out.push_str(if self.all_passed() {
            "all checks passed\n"
        } else {
            "CHECKS FAILED\n"
        });
        out
    }
}
