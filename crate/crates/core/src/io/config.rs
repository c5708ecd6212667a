//! TOML run configuration.
//!
//! ```toml
//! builtin = "cantilever"          # optional; [problem] keys override it
//!
//! [problem]
//! mesh = [41, 21]
//! optimizer = { move_limit = 0.005 }
//!
//! [output]
//! directory = "cantilever"        # relative to $IGFEM_TOPO_OUTPUT_ROOT or the file
//! snapshot_every = 10
//!
//! [gradient_check]
//! enabled = true
//! ```
//!
//! Unknown keys are rejected and every violation is reported at once.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::driver::{builtin_problem, ProblemSpec, ResolutionOverrides};
use crate::mma::MmaSettings;
use crate::{Error, Result};

/// Replaces the base directory of relative output paths.
pub const OUTPUT_ROOT_ENV: &str = "IGFEM_TOPO_OUTPUT_ROOT";

const TOP_LEVEL_KEYS: [&str; 4] = ["builtin", "problem", "output", "gradient_check"];

fn default_snapshot_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Resolved after parsing; relative paths are taken against the output
    /// root.
    #[serde(default)]
    pub directory: PathBuf,
    /// Write a design snapshot every this many iterations (and the final one).
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientCheckConfig {
    /// Check the gradients of the initial design before `run`.
    pub enabled: bool,
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    pub tolerance: f64,
    /// Fraction of clean samples that must be within `tolerance`.
    pub required_fraction: f64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig {
            enabled: false,
            samples: 50,
            step: 1e-6,
            seed: 2024,
            tolerance: 1e-3,
            required_fraction: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub output: OutputConfig,
    pub gradient_check: GradientCheckConfig,
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base).map_err(|e| match e {
        Error::Config(list) => Error::Config(list.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    })
}

/// Parses configuration text; `base_dir` anchors relative output paths
/// unless the output-root variable is set.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    let mut errs = Vec::new();
    for key in root.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            errs.push(format!("unknown key '{key}'"));
        }
    }
    let user = match root.get("problem") {
        None => Table::new(),
        Some(Value::Table(t)) => t.clone(),
        Some(_) => {
            errs.push("'problem' must be a table".into());
            Table::new()
        }
    };
    let merged = match root.get("builtin") {
        None => Some(user.clone()),
        Some(Value::String(name)) => {
            let overrides = ResolutionOverrides {
                mesh: pair(&user, "mesh", &mut errs),
                rbf_grid: pair(&user, "rbf_grid", &mut errs),
            };
            match builtin_problem(name, overrides) {
                Ok(spec) => {
                    let mut base = match Value::try_from(&spec) {
                        Ok(Value::Table(t)) => t,
                        _ => unreachable!("problem specs serialize to tables"),
                    };
                    merge(&mut base, &user);
                    Some(base)
                }
                Err(Error::Config(list)) => {
                    errs.extend(list.into_iter().map(|m| format!("builtin: {m}")));
                    None
                }
                Err(e) => return Err(e),
            }
        }
        Some(_) => {
            errs.push("'builtin' must be a problem name".into());
            None
        }
    };
    errs.extend(unknown_problem_keys(&user));
    let problem = merged.and_then(|t| match Value::Table(t).try_into::<ProblemSpec>() {
        Ok(spec) => Some(spec),
        Err(e) => {
            errs.push(format!("problem: {}", e.to_string().trim()));
            None
        }
    });
    if let Some(p) = &problem {
        errs.extend(p.validate());
    }

    let mut output: OutputConfig = section(&root, "output", &mut errs).unwrap_or_default();
    if output.snapshot_every == 0 {
        errs.push("output.snapshot_every must be at least 1".into());
    }
    let gradient_check: GradientCheckConfig = section(&root, "gradient_check", &mut errs).unwrap_or_default();
    if gradient_check.samples == 0 {
        errs.push("gradient_check.samples must be at least 1".into());
    }
    if !(gradient_check.step > 0.0) {
        errs.push(format!("gradient_check.step must be positive, got {}", gradient_check.step));
    }
    if !(gradient_check.tolerance > 0.0) {
        errs.push(format!("gradient_check.tolerance must be positive, got {}", gradient_check.tolerance));
    }
    if !(0.0..=1.0).contains(&gradient_check.required_fraction) {
        errs.push("gradient_check.required_fraction must lie in [0, 1]".into());
    }

    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let problem = problem.expect("no errors implies a problem");
    if output.directory.as_os_str().is_empty() {
        output.directory = PathBuf::from(&problem.name);
    }
    if output.directory.is_relative() {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| base_dir.to_path_buf());
        output.directory = root.join(&output.directory);
    }
    Ok(RunConfig {
        problem,
        output,
        gradient_check,
    })
}

fn pair(t: &Table, key: &str, errs: &mut Vec<String>) -> Option<[usize; 2]> {
    let v = t.get(key)?;
    match v.clone().try_into::<[usize; 2]>() {
        Ok(p) => Some(p),
        Err(_) => {
            errs.push(format!("problem.{key} must be two non-negative integers"));
            None
        }
    }
}

fn section<T: for<'de> Deserialize<'de>>(root: &Table, key: &str, errs: &mut Vec<String>) -> Option<T> {
    let v = root.get(key)?;
    match v.clone().try_into::<T>() {
        Ok(s) => Some(s),
        Err(e) => {
            errs.push(format!("{key}: {}", e.to_string().trim()));
            None
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::new(),
            snapshot_every: default_snapshot_every(),
        }
    }
}

/// Tables merge key by key unless their `kind` tags differ; everything
/// else is replaced.
fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) if o.get("kind").is_none_or(|t| Some(t) == b.get("kind")) => {
                merge(b, o)
            }
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn table_keys<T: Serialize>(value: &T) -> BTreeSet<String> {
    match Value::try_from(value) {
        Ok(Value::Table(t)) => t.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// Unknown keys at the top of `[problem]` and in `[problem.optimizer]`.
/// Nested tables with variants are checked when deserializing.
fn unknown_problem_keys(user: &Table) -> Vec<String> {
    let spec = builtin_problem("cantilever", ResolutionOverrides::default()).expect("builtin");
    let known = table_keys(&spec);
    let known_opt = table_keys(&MmaSettings::default());
    let mut errs = Vec::new();
    for (k, v) in user {
        if !known.contains(k) {
            errs.push(format!("unknown key 'problem.{k}'"));
        } else if k == "optimizer" {
            if let Value::Table(t) = v {
                for k in t.keys().filter(|k| !known_opt.contains(*k)) {
                    errs.push(format!("unknown key 'problem.optimizer.{k}'"));
                }
            }
        }
    }
    errs
}
