//! Merges a JSON config file into the argument vector.
//!
//! File entries are spliced in right after the subcommand name, ahead of
//! the user's own flags. Every subcommand lets a later occurrence of a flag
//! override an earlier one, so command-line values win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::CliError;

/// Value of `--config` if present anywhere in `argv`.
fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
        if s == "--" {
            break;
        }
    }
    None
}

fn flags_from(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let json: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(map) = json else {
        return Err(CliError::Usage(format!("config {} must hold a JSON object", path.display())));
    };
    let mut out = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if matches!(flag.as_str(), "--config" | "--help" | "--version") {
            return Err(CliError::Usage(format!("config key `{key}` is not allowed")));
        }
        match value {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => out.push(format!("{flag}={n}").into()),
            Value::String(s) => out.push(format!("{flag}={s}").into()),
            Value::Array(_) | Value::Object(_) => {
                return Err(CliError::Usage(format!("config key `{key}` must be a scalar")));
            }
        }
    }
    Ok(out)
}

/// `argv` with the config file's flags inserted after the subcommand.
pub fn expand(argv: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let extra = flags_from(Path::new(&path))?;
    let Some(pos) = argv
        .iter()
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
    else {
        // no subcommand: let the parser report it
        return Ok(argv);
    };
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}
