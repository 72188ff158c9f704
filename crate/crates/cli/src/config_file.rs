//! `--config FILE` support: each `key = value` line of the file becomes
//! `--key value` unless that flag is also given on the command line.
//! Blank lines and `#` comments are ignored.

use std::ffi::OsString;
use std::path::Path;

fn find_config(argv: &[OsString]) -> Result<Option<OsString>, String> {
    for (i, arg) in argv.iter().enumerate() {
        let Some(text) = arg.to_str() else { continue };
        if text == "--" {
            break;
        }
        if text == "--config" {
            return argv
                .get(i + 1)
                .cloned()
                .map(Some)
                .ok_or_else(|| "--config needs a file".to_string());
        }
        if let Some(path) = text.strip_prefix("--config=") {
            return Ok(Some(path.into()));
        }
    }
    Ok(None)
}

/// Flag pairs read from a config file.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(format!("config line {}: invalid key", n + 1));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

/// Inserts the config file's flags right after the subcommand name.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = find_config(&argv)? else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config {}: {e}", Path::new(&path).display()))?;
    let given = |flag: &str| {
        argv.iter().filter_map(|a| a.to_str()).any(|a| {
            a == flag
                || a.strip_prefix(flag)
                    .is_some_and(|rest| rest.starts_with('='))
        })
    };
    let mut flags = Vec::new();
    for (key, value) in parse(&text)? {
        if given(&format!("--{key}")) {
            continue;
        }
        flags.push(OsString::from(format!("--{key}")));
        flags.push(OsString::from(value));
    }
    let at = argv.len().min(2);
    let mut out = argv[..at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
