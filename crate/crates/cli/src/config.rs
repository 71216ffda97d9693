//! `--config` files and the resolved-configuration echo.
//!
//! A config file holds `key = value` lines whose keys are the long flag names
//! of the chosen subcommand. Its entries are spliced into the argument list
//! right after the subcommand, so anything given on the command line later
//! overrides them.

use std::collections::BTreeMap;
use std::path::Path;

use clap::{ArgAction, ArgMatches, Command};

use crate::UsageError;

/// Keys left out of the echoed configuration: they affect neither results
/// nor output bytes.
const NOT_ECHOED: &[&str] = &["config", "workers"];

pub fn expand_config_file(cmd: &Command, argv: Vec<String>) -> Result<Vec<String>, UsageError> {
    let Some(sub_name) = argv.get(1).filter(|a| !a.starts_with('-')) else {
        return Ok(argv);
    };
    let Some(sub) = cmd.find_subcommand(sub_name) else {
        return Ok(argv);
    };
    let mut config_path = None;
    let mut i = 2;
    while i < argv.len() {
        if argv[i] == "--config" {
            config_path = argv.get(i + 1).cloned();
            i += 1;
        } else if let Some(p) = argv[i].strip_prefix("--config=") {
            config_path = Some(p.to_string());
        }
        i += 1;
    }
    let Some(config_path) = config_path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&config_path)
        .map_err(|e| UsageError(format!("cannot read config file {config_path}: {e}")))?;
    let injected = config_args(sub, &text, &config_path)?;
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

fn config_args(sub: &Command, text: &str, origin: &str) -> Result<Vec<String>, UsageError> {
    let mut args = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| UsageError(format!("{origin}:{}: expected `key = value`", lineno + 1)))?;
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key) && key != "config")
            .ok_or_else(|| UsageError(format!("{origin}:{}: unknown key `{key}` for `{}`", lineno + 1, sub.get_name())))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => args.push(format!("--{key}")),
                "false" => {}
                _ => return Err(UsageError(format!("{origin}:{}: `{key}` takes true or false", lineno + 1))),
            }
        } else {
            args.push(format!("--{key}"));
            args.push(value.to_string());
        }
    }
    Ok(args)
}

/// Every argument of the subcommand with its effective value (defaults
/// included), keyed by long flag name.
pub fn resolved(sub: &Command, matches: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        let key = arg.get_long().unwrap_or(id);
        if NOT_ECHOED.contains(&key) {
            continue;
        }
        if let Ok(Some(values)) = matches.try_get_raw(id) {
            let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
            out.insert(key.to_string(), joined.join(","));
        }
    }
    out
}

/// Write the resolved configuration as a config file next to an output, so
/// the run can be repeated with `--config`.
pub fn write_sidecar(path: &Path, config: &BTreeMap<String, String>) -> std::io::Result<()> {
    let mut text = String::new();
    for (k, v) in config {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text)
}
