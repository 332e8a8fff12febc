//! TOML config files with one table per subcommand. Keys are the long flag
//! names; a flag given on the command line replaces the file's value.
//!
//! ```toml
//! [synth]
//! count = 100
//! min-objects = 5
//!
//! [decompose]
//! segmenter = "corrupted"
//! nonocc-threshold = 0.3
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const SECTIONS: [&str; 5] = ["synth", "decompose", "eval", "recompose", "serve"];

#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))?;
        if let Some(bad) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(CliError::invalid(format!(
                "config {}: unknown section [{bad}]; valid sections: {}",
                path.display(),
                SECTIONS.join(", ")
            )));
        }
        Ok(Self { table })
    }

    /// Overlays `flags` on the `[section]` table. Unset options and `false`
    /// switches on the command line leave the file's value in place.
    pub fn merge<T: Serialize + DeserializeOwned>(&self, section: &str, flags: &T) -> CliResult<T> {
        let mut merged = match self.table.get(section) {
            Some(v) => {
                let from_file: T = v
                    .clone()
                    .try_into()
                    .map_err(|e| CliError::invalid(format!("config [{section}]: {e}")))?;
                serde_json::to_value(from_file)?
            }
            None => serde_json::to_value(flags)?,
        };
        if let (Value::Object(base), Value::Object(over)) = (&mut merged, serde_json::to_value(flags)?) {
            for (k, v) in over {
                if !(v.is_null() || v == Value::Bool(false)) {
                    base.insert(k, v);
                }
            }
        }
        Ok(serde_json::from_value(merged)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(rename_all = "kebab-case", deny_unknown_fields)]
    struct Args {
        count: Option<u64>,
        seed: Option<u64>,
        dump_steps: bool,
    }

    fn file(text: &str) -> ConfigFile {
        ConfigFile {
            table: toml::from_str(text).unwrap(),
        }
    }

    #[test]
    fn flags_win_over_file() {
        let f = file("[synth]\ncount = 5\nseed = 9\ndump-steps = true\n");
        let flags = Args {
            count: Some(7),
            ..Args::default()
        };
        let m = f.merge("synth", &flags).unwrap();
        assert_eq!(
            m,
            Args {
                count: Some(7),
                seed: Some(9),
                dump_steps: true
            }
        );
    }

    #[test]
    fn missing_section_keeps_flags() {
        let flags = Args {
            seed: Some(3),
            ..Args::default()
        };
        assert_eq!(ConfigFile::default().merge("synth", &flags).unwrap(), flags);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = file("[synth]\ncuont = 5\n").merge("synth", &Args::default()).unwrap_err();
        assert_eq!(e.exit_code, crate::error::EXIT_INVALID_INPUT);
        assert!(e.message.contains("cuont"), "{e}");
    }
}
