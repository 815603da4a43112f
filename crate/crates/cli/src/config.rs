//! Flat `key = value` configuration files.
//!
//! Keys are long flag names without the leading dashes. Blank lines and lines
//! starting with `#` are ignored. Values are handed to the argument parser as
//! if typed before the command-line flags, so flags given on the command line
//! win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context};

pub fn parse_config(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key = value", i + 1);
        };
        let key = key.trim();
        if key.is_empty() || key.starts_with('-') || key.contains(char::is_whitespace) {
            bail!("line {}: bad key {key:?}", i + 1);
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// The value following `--config`, if any, without consuming anything.
pub fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(v.into());
        }
    }
    None
}

/// Insert the config entries as flags right after the subcommand at
/// `sub_index`, ahead of anything typed by the user.
pub fn inject(args: &[OsString], sub_index: usize, entries: &[(String, String)]) -> Vec<OsString> {
    let mut out: Vec<OsString> = args[..=sub_index].to_vec();
    for (k, v) in entries {
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend_from_slice(&args[sub_index + 1..]);
    out
}

pub fn read_config(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}
