//! Flag/config-file merging, validation errors and report output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or missing inputs. Exit code 1.
    #[error("{0}")]
    Invalid(String),
    /// Failure while computing. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Wraps any displayable error as a runtime failure.
pub fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Reads the `[section]` table of a TOML config file, if one was given.
pub fn load_section(path: Option<&Path>, section: &str) -> CliResult<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("--config: cannot read {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| invalid(format!("--config: {}: {e}", path.display())))?;
    for key in table.keys() {
        if !crate::SUBCOMMANDS.contains(&key.as_str()) {
            return Err(invalid(format!("{key}: unknown config section")));
        }
    }
    match table.get(section) {
        None => Ok(Map::new()),
        Some(toml::Value::Table(t)) => match serde_json::to_value(t).map_err(runtime)? {
            Value::Object(m) => Ok(m),
            _ => unreachable!("a table serializes to an object"),
        },
        Some(_) => Err(invalid(format!("{section}: expected a table"))),
    }
}

/// Overlays the flags that were given on the config file section. Values
/// are checked against `T`, and errors name the offending field path.
pub fn merge<T: Serialize + DeserializeOwned>(section: &str, file: Map<String, Value>, flags: &T) -> CliResult<T> {
    let mut merged = file;
    if let Value::Object(given) = serde_json::to_value(flags).map_err(runtime)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    let de = Value::Object(merged);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            invalid(format!("{section}: {}", e.inner()))
        } else {
            invalid(format!("{section}.{path}: {}", e.inner()))
        }
    })
}

/// A required path that must exist.
pub fn input_path(flag: &str, p: &Option<PathBuf>) -> CliResult<PathBuf> {
    let p = p.as_ref().ok_or_else(|| invalid(format!("missing required {flag}")))?;
    if !p.exists() {
        return Err(invalid(format!("{flag}: no such file or directory: {}", p.display())));
    }
    Ok(p.clone())
}

/// A path that must exist when given.
pub fn optional_input(flag: &str, p: &Option<PathBuf>) -> CliResult<Option<PathBuf>> {
    match p {
        None => Ok(None),
        some => input_path(flag, some).map(Some),
    }
}

pub fn output_path(flag: &str, p: &Option<PathBuf>) -> CliResult<PathBuf> {
    p.clone().ok_or_else(|| invalid(format!("missing required {flag}")))
}

pub fn check(cond: bool, field: &str, msg: &str) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(format!("{field}: {msg}")))
    }
}

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(sig9).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// A JSON report: the resolved config plus results.
pub fn report<C: Serialize>(command: &str, config: &C, results: Value) -> CliResult<Value> {
    let mut doc = Map::new();
    doc.insert("command".into(), Value::String(command.into()));
    doc.insert("config".into(), serde_json::to_value(config).map_err(runtime)?);
    match results {
        Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("results".into(), other);
        }
    }
    let mut v = Value::Object(doc);
    round_value(&mut v);
    Ok(v)
}

/// Writes `doc` to `out` if given, else to stdout.
pub fn emit(doc: &Value, out: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let text = serde_json::to_string_pretty(doc).map_err(runtime)? + "\n";
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => stdout.write_all(text.as_bytes()).map_err(runtime),
    }
}

pub fn write_file(p: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(p, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
}
