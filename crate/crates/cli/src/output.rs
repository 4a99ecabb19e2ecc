use std::fs;
use std::path::{Path, PathBuf};

use lmf_core::io::{fmt17, write_measure, CsvTable};
use lmf_core::MeasureCurve;
use serde::Serialize;

use crate::error::CliError;

/// One declared invariant check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `<=`, `>=`, `<` or `==`.
    pub relation: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, "<=", threshold, value <= threshold)
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, ">=", threshold, value >= threshold)
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self::new(name, ok as u8 as f64, "==", 1.0, ok)
    }

    fn new(name: &str, value: f64, relation: &'static str, threshold: f64, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            relation,
            threshold,
            pass,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{:<28} {:>14.6e} {} {:<12.4e} {}",
            self.name,
            self.value,
            self.relation,
            self.threshold,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Output directory that remembers what was written.
pub struct OutDir {
    root: PathBuf,
    pub files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
        self.write(name, &(text + "\n"))
    }

    /// One measure file pair per sample under `curve/`.
    pub fn write_curve(&mut self, curve: &MeasureCurve) -> Result<(), CliError> {
        let dir = self.root.join("curve");
        for (k, mu) in curve.states().iter().enumerate() {
            let stem = format!("mu_{k:05}");
            write_measure(&dir, &stem, mu)?;
            self.files.push(format!("curve/{stem}.csv"));
            self.files.push(format!("curve/{stem}.json"));
        }
        let mut times = CsvTable::new(&["k", "t"]);
        for (k, t) in curve.times().iter().enumerate() {
            times.push(vec![k.to_string(), fmt17(*t)]);
        }
        self.write("curve/times.csv", &times.render())
    }

    pub fn write_checks(&mut self, checks: &[Check]) -> Result<(), CliError> {
        let mut t = CsvTable::new(&["check", "value", "relation", "threshold", "pass"]);
        for c in checks {
            t.push(vec![
                c.name.clone(),
                fmt17(c.value),
                c.relation.to_string(),
                fmt17(c.threshold),
                c.pass.to_string(),
            ]);
        }
        self.write("checks.csv", &t.render())
    }
}
