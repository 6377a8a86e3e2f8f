//! Loading and validating sweep configurations from TOML.
//!
//! A file holds one `ExperimentConfig` at the top level plus optional
//! `[scale.<name>]` tables whose keys override the top level when that scale
//! is selected. Every problem found is reported, each tagged with the line it
//! comes from when that line can be located.

use std::fmt;
use std::path::{Path, PathBuf};

use rfconc_core::experiment::{Baseline, DataConfig, EllChoice, ExperimentConfig, Metric, TeacherConfig};
use rfconc_core::hermite::ActivationSpec;
use serde::de::DeserializeOwned;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    fn key(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Why a configuration could not be loaded.
#[derive(Debug)]
pub enum LoadError {
    Io { path: PathBuf, source: std::io::Error },
    Invalid { path: PathBuf, errors: Vec<ConfigError> },
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io { path, source } => write!(f, "cannot read config '{}': {source}", path.display()),
            LoadError::Invalid { path, errors } => {
                write!(f, "invalid config '{}' ({} error(s)):", path.display(), errors.len())?;
                for e in errors {
                    write!(f, "\n  {e}")?;
                }
                Ok(())
            }
        }
    }
}

const REQUIRED: [&str; 7] = ["data", "activation", "teacher", "lambda_grid", "N_grid", "root_seed", "metrics"];
const OPTIONAL: [&str; 7] = ["ell", "baseline", "trials", "B", "M", "k_max", "scale"];

pub fn load(path: &Path, scale: Scale) -> Result<ExperimentConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse(&text, scale).map_err(|errors| LoadError::Invalid {
        path: path.to_owned(),
        errors,
    })
}

/// Parses and validates a configuration, collecting every error.
pub fn parse(text: &str, scale: Scale) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| {
        vec![ConfigError {
            line: e.span().map(|s| line_at(text, s.start)),
            field: "<syntax>".into(),
            message: e.message().trim().to_string(),
        }]
    })?;
    let lines = LineIndex::new(text, scale);
    let mut errors = Vec::new();
    let err = |field: &str, message: String| ConfigError {
        line: lines.find(field),
        field: field.to_string(),
        message,
    };

    let scales = match table.remove("scale") {
        None => Table::new(),
        Some(Value::Table(t)) => t,
        Some(_) => return Err(vec![err("scale", "must be a table of [scale.<name>] overrides".into())]),
    };
    match scales.get(scale.key()) {
        Some(Value::Table(over)) => merge(&mut table, over),
        Some(_) => errors.push(err(&format!("scale.{}", scale.key()), "must be a table".into())),
        None if scale == Scale::Desk => {}
        None => errors.push(err("scale", format!("no [scale.{}] table in this file", scale.key()))),
    }

    for key in table.keys() {
        if !REQUIRED.contains(&key.as_str()) && !OPTIONAL.contains(&key.as_str()) {
            errors.push(err(key, "unknown field".into()));
        }
    }
    for key in REQUIRED {
        if !table.contains_key(key) {
            errors.push(ConfigError {
                line: None,
                field: key.into(),
                message: "missing required field".into(),
            });
        }
    }
    let mut check = |key: &str, f: fn(&Value) -> Option<String>| {
        if let Some(v) = table.get(key) {
            if let Some(m) = f(v) {
                errors.push(err(key, m));
            }
        }
    };
    check("data", field_error::<DataConfig>);
    check("activation", field_error::<ActivationSpec>);
    check("teacher", field_error::<TeacherConfig>);
    check("ell", field_error::<EllChoice>);
    check("baseline", field_error::<Baseline>);
    check("lambda_grid", field_error::<Vec<f64>>);
    check("N_grid", field_error::<Vec<usize>>);
    check("trials", field_error::<usize>);
    check("B", field_error::<usize>);
    check("M", field_error::<usize>);
    check("root_seed", field_error::<u64>);
    check("metrics", field_error::<Vec<Metric>>);
    check("k_max", field_error::<usize>);
    if !errors.is_empty() {
        return Err(errors);
    }

    let cfg: ExperimentConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        vec![ConfigError {
            line: None,
            field: "<config>".into(),
            message: e.message().trim().to_string(),
        }]
    })?;
    let issues: Vec<ConfigError> = cfg.validate().into_iter().map(|i| err(i.field, i.message)).collect();
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(issues)
    }
}

fn field_error<T: DeserializeOwned>(v: &Value) -> Option<String> {
    v.clone().try_into::<T>().err().map(|e| e.message().trim().to_string())
}

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

// Finds the line defining a dotted field by scanning `[table]` headers and
// `key =` lines. Overrides of the selected scale take precedence.
struct LineIndex {
    // (table path, key, 1-based line)
    keys: Vec<(String, String, usize)>,
    prefix: String,
}

impl LineIndex {
    fn new(text: &str, scale: Scale) -> Self {
        let mut keys = Vec::new();
        let mut table = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                table = h.trim_matches(|c| c == '[' || c == ']').trim().to_string();
                let (parent, key) = match table.rsplit_once('.') {
                    Some((p, k)) => (p.to_string(), k.to_string()),
                    None => (String::new(), table.clone()),
                };
                keys.push((parent, key, i + 1));
            } else if let Some((k, _)) = line.split_once('=') {
                let k = k.trim().trim_matches('"');
                let (t, key) = match k.rsplit_once('.') {
                    Some((p, k)) if table.is_empty() => (p.trim().to_string(), k.trim().to_string()),
                    Some((p, k)) => (format!("{table}.{}", p.trim()), k.trim().to_string()),
                    None => (table.clone(), k.to_string()),
                };
                keys.push((t, key, i + 1));
            }
        }
        LineIndex {
            keys,
            prefix: format!("scale.{}", scale.key()),
        }
    }

    fn find(&self, field: &str) -> Option<usize> {
        let (table, key) = match field.rsplit_once('.') {
            Some((t, k)) => (t.to_string(), k),
            None => (String::new(), field),
        };
        let scaled = if table.is_empty() {
            self.prefix.clone()
        } else {
            format!("{}.{table}", self.prefix)
        };
        let hit = |t: &str| self.keys.iter().find(|(tt, kk, _)| tt == t && kk == key).map(|e| e.2);
        hit(&scaled).or_else(|| hit(&table))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
activation = "poly5"
lambda_grid = [0.1, 1.0]
N_grid = [16, 32]
root_seed = 1
metrics = ["train", "gcv"]

[data]
dist = "sphere"
d = 20
n = 10

[teacher]
tau = "softplus"
sigma_eps = 0.3

[scale.paper]
N_grid = [64, 128, 256]
trials = 7

[scale.paper.data]
d = 500
"#;

    #[test]
    fn scales_override_the_top_level() {
        let desk = parse(GOOD, Scale::Desk).unwrap();
        assert_eq!(desk.n_grid, vec![16, 32]);
        assert_eq!(desk.trials, 5);
        let paper = parse(GOOD, Scale::Paper).unwrap();
        assert_eq!(paper.n_grid, vec![64, 128, 256]);
        assert_eq!(paper.trials, 7);
        assert_eq!(paper.data.d, Some(500));
        assert_eq!(paper.data.n, Some(10));
    }

    #[test]
    fn every_error_is_reported_with_its_line() {
        let bad = GOOD
            .replace("lambda_grid = [0.1, 1.0]", "lambda_grid = [0.0, 1.0]")
            .replace("N_grid = [16, 32]", "N_grid = [32, 16]");
        let errs = parse(&bad, Scale::Desk).unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
        assert_eq!(errs[0].field, "lambda_grid");
        assert_eq!(errs[0].line, Some(3));
        assert_eq!(errs[1].field, "N_grid");
        assert_eq!(errs[1].line, Some(4));
    }

    #[test]
    fn structural_errors_are_collected() {
        let bad = GOOD
            .replace("root_seed = 1", "root_seed = \"x\"\nbogus = 3")
            .replace("d = 20", "d = -4");
        let errs = parse(&bad, Scale::Desk).unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["bogus", "data", "root_seed"]);
        assert!(errs.iter().all(|e| e.line.is_some()), "{errs:?}");
    }

    #[test]
    fn syntax_errors_have_lines() {
        let errs = parse("a = [1,\nb = 2\n", Scale::Desk).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].line.is_some());
    }

    #[test]
    fn missing_scale_table() {
        let plain = GOOD.split("[scale.paper]").next().unwrap();
        let errs = parse(plain, Scale::Paper).unwrap_err();
        assert_eq!(errs[0].field, "scale");
    }
}
