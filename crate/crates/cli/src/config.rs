//! Flat JSON configuration files.
//!
//! Every key names a flag of the chosen subcommand (`max_offset` or
//! `max-offset` for `--max-offset`). Keys are turned into command-line
//! arguments appended after the explicit ones, skipping any flag that was
//! given explicitly.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use serde_json::Value;

use crate::error::CliError;

fn config_path(argv: &[OsString]) -> Result<Option<PathBuf>, CliError> {
    let mut it = argv.iter().skip(1);
    while let Some(arg) = it.next() {
        let Some(s) = arg.to_str() else { continue };
        if s == "--config" {
            return match it.next() {
                Some(p) => Ok(Some(PathBuf::from(p))),
                None => Err(CliError::Validation("--config needs a path".into())),
            };
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(PathBuf::from(p)));
        }
    }
    Ok(None)
}

fn given(argv: &[OsString], flag: &str) -> bool {
    argv.iter().filter_map(|a| a.to_str()).any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

fn scalar(key: &str, v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(CliError::Validation(format!("config key `{key}` must be a string, number, boolean or array of those"))),
    }
}

/// Returns `argv` with the config file's entries appended as flags.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: not valid JSON: {e}", path.display())))?;
    let Value::Object(entries) = doc else {
        return Err(CliError::Validation(format!("{}: expected a flat JSON object", path.display())));
    };
    let mut out = argv.clone();
    for (key, value) in entries {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || given(&argv, &flag) {
            continue;
        }
        match &value {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts = items.iter().map(|v| scalar(&key, v)).collect::<Result<Vec<_>, _>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            v => {
                out.push(flag.into());
                out.push(scalar(&key, v)?.into());
            }
        }
    }
    Ok(out)
}
