//! Config-file overrides.
//!
//! A TOML file with one table per subcommand; keys are flag names without the
//! leading dashes (`window-ms` or `window_ms`). Lists become comma-joined
//! values. Flags given on the command line win over the file.
//!
//! ```toml
//! [preprocess]
//! window-ms = 150
//! norm = "minmax"
//!
//! [train]
//! data = ["w50.xtd", "w200.xtd"]
//! epochs = 30
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use crate::error::{AppError, AppResult};

/// Flag arguments for `subcommand` taken from the config file at `path`.
pub fn flags_from_file(path: &Path, subcommand: &str) -> AppResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    flags_from_str(&text, subcommand).map_err(|m| AppError::format(path, m))
}

pub fn flags_from_str(text: &str, subcommand: &str) -> Result<Vec<String>, String> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    for (k, v) in &doc {
        if !v.is_table() {
            return Err(format!("top-level key `{k}` must be a [subcommand] table"));
        }
    }
    let Some(table) = doc.get(subcommand) else {
        return Ok(Vec::new());
    };
    let table = table.as_table().expect("checked above");
    table
        .iter()
        .map(|(k, v)| {
            if k == "config" {
                return Err("`config` cannot be set from a config file".to_string());
            }
            Ok(format!("--{}={}", k.replace('_', "-"), scalar_or_list(k, v)?))
        })
        .collect()
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, String> {
    use toml::Value as V;
    Ok(match v {
        V::String(s) => s.clone(),
        V::Integer(i) => i.to_string(),
        V::Float(f) => f.to_string(),
        V::Boolean(b) => b.to_string(),
        _ => return Err(format!("`{key}`: unsupported value {v}")),
    })
}

fn scalar_or_list(key: &str, v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::Array(items) => Ok(items
            .iter()
            .map(|i| scalar(key, i))
            .collect::<Result<Vec<_>, _>>()?
            .join(",")),
        _ => scalar(key, v),
    }
}

/// Splices config-file flags in right after the subcommand name, so anything
/// the user typed later on the line overrides them. Returns `argv` unchanged
/// when no `--config` is present.
pub fn expand_args(argv: Vec<OsString>) -> AppResult<Vec<OsString>> {
    let mut config: Option<PathBuf> = None;
    let mut sub: Option<(usize, String)> = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--" {
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if a == "--config" {
            let p = argv
                .get(i + 1)
                .ok_or_else(|| AppError::Usage("--config needs a path".into()))?;
            config = Some(PathBuf::from(p));
            i += 1;
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some((i, a.into_owned()));
        }
        i += 1;
    }
    let (Some(path), Some((pos, name))) = (config, sub) else {
        return Ok(argv);
    };
    let flags = flags_from_file(&path, &name)?;
    let mut out = argv;
    out.splice(pos + 1..pos + 1, flags.into_iter().map(OsString::from));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_become_flags() {
        let text = "[train]\nepochs = 3\ndata = [\"a.xtd\", \"b.xtd\"]\nbatch_size = 8\n[eval]\nsplit = \"all\"\n";
        let flags = flags_from_str(text, "train").unwrap();
        assert_eq!(flags, vec!["--batch-size=8", "--data=a.xtd,b.xtd", "--epochs=3"]);
        assert_eq!(flags_from_str(text, "eval").unwrap(), vec!["--split=all"]);
        assert!(flags_from_str(text, "synth").unwrap().is_empty());
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(flags_from_str("epochs = 3", "train").is_err());
        assert!(flags_from_str("[train]\nx = { a = 1 }", "train").is_err());
        assert!(flags_from_str("[train", "train").is_err());
    }
}
