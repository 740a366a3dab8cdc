//! Run files: every command-line flag can also be given in a TOML file.
//!
//! Top-level keys apply to every command; a table named after the command
//! (for example `[autotune]`) overrides them for that command, and flags
//! given on the command line override both. Keys are the long flag names
//! with `-` replaced by `_`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Merges the run file at `path` (if any) under the flags in `args`.
pub fn resolve<A: Serialize + DeserializeOwned>(args: A, command: &str, path: Option<&Path>) -> Result<A, CliError> {
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let file = serde_json::to_value(table).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let flags = serde_json::to_value(&args).map_err(|e| CliError::Runtime(e.to_string()))?;
    let merged = merge(file, flags, command);
    serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn merge(file: Value, flags: Value, command: &str) -> Value {
    let mut out = Map::new();
    let Value::Object(file) = file else {
        return flags;
    };
    for (key, value) in &file {
        if !value.is_object() {
            out.insert(key.clone(), value.clone());
        }
    }
    if let Some(Value::Object(section)) = file.get(command) {
        out.extend(section.clone());
    }
    if let Value::Object(flags) = flags {
        for (key, value) in flags {
            // Unset options and absent switches leave the file's value.
            if !(value.is_null() || value == Value::Bool(false)) {
                out.insert(key, value);
            }
        }
    }
    Value::Object(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use std::io::Write;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    struct Args {
        k: Option<usize>,
        tree: Option<String>,
        target: Option<String>,
        #[serde(default)]
        quiet: bool,
    }

    fn run_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn flags_override_section_overrides_top_level() {
        let f = run_file("k = 5\ntree = \"rkd\"\nquiet = true\n[autotune]\ntree = \"pca\"\ntarget = \"recall=0.8\"\n");
        let args = Args {
            k: Some(7),
            ..Args::default()
        };
        let got = resolve(args, "autotune", Some(f.path())).unwrap();
        assert_eq!(
            got,
            Args {
                k: Some(7),
                tree: Some("pca".into()),
                target: Some("recall=0.8".into()),
                quiet: true,
            }
        );
    }

    #[test]
    fn other_sections_are_ignored() {
        let f = run_file("[bench]\nk = 3\n");
        let got = resolve(Args::default(), "autotune", Some(f.path())).unwrap();
        assert_eq!(got, Args::default());
    }

    #[test]
    fn bad_files_are_usage_errors() {
        let f = run_file("k = \"many\"\n");
        assert!(matches!(resolve(Args::default(), "query", Some(f.path())), Err(CliError::Usage(_))));
        let f = run_file("k = \n");
        assert!(matches!(resolve(Args::default(), "query", Some(f.path())), Err(CliError::Usage(_))));
        let missing = Path::new("/nonexistent/run.toml");
        assert!(matches!(resolve(Args::default(), "query", Some(missing)), Err(CliError::Usage(_))));
    }
}
