//! Config files are TOML with one table per subcommand. Table keys are the
//! subcommand's long flag names, and a flag given on the command line wins
//! over the file.

use std::collections::BTreeSet;
use std::path::Path;

use clap::CommandFactory;

use crate::error::CliError;
use crate::Cli;

/// Declares an option set whose fields are both flags and config keys.
macro_rules! options {
    (
        $(#[$meta:meta])*
        pub struct $name:ident {
            $( $(#[$fmeta:meta])* pub $field:ident: Option<$ty:ty>, )*
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, clap::Args, serde::Deserialize, serde::Serialize)]
        #[serde(rename_all = "kebab-case")]
        pub struct $name {
            $( $(#[$fmeta])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            /// Fills every unset field from `file`.
            pub fn merge(self, file: Self) -> Self {
                $name { $( $field: self.$field.or(file.$field), )* }
            }
        }
    };
}
pub(crate) use options;

/// Top-level keys allowed outside the subcommand tables.
pub const GLOBAL_KEYS: &[&str] = &["log-level"];

pub const SUBCOMMANDS: &[&str] = &["synth", "build", "eval", "stats", "viz", "ablate"];

/// Long flag names a subcommand accepts, excluding `--config` and `--help`.
pub fn flag_names(subcommand: &str) -> BTreeSet<String> {
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(subcommand)
        .unwrap_or_else(|| panic!("unknown subcommand {subcommand}"));
    sub.get_arguments()
        .filter(|a| !a.is_global_set())
        .filter_map(|a| a.get_long())
        .filter(|l| !matches!(*l, "help" | "config" | "log-level"))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Default)]
pub struct ConfigFile {
    pub root: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            message: format!("cannot read {}: {e}", path.display()),
            keys: Vec::new(),
        })?;
        let root: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config {
            message: format!("{}: {}", path.display(), e.message()),
            keys: Vec::new(),
        })?;
        let file = ConfigFile { root };
        file.check_keys()?;
        Ok(file)
    }

    /// Rejects every key that no flag corresponds to, across all tables.
    fn check_keys(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        for (key, value) in &self.root {
            if GLOBAL_KEYS.contains(&key.as_str()) {
                continue;
            }
            match (SUBCOMMANDS.contains(&key.as_str()), value) {
                (true, toml::Value::Table(t)) => {
                    let known = flag_names(key);
                    bad.extend(t.keys().filter(|k| !known.contains(*k)).map(|k| format!("{key}.{k}")));
                }
                _ => bad.push(key.clone()),
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config {
                message: format!("unknown config keys: {}", bad.join(", ")),
                keys: bad,
            })
        }
    }

    pub fn global<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.root
            .get(key)
            .map(|v| {
                v.clone().try_into().map_err(|e: toml::de::Error| CliError::Config {
                    message: format!("{key}: {}", e.message()),
                    keys: vec![key.to_string()],
                })
            })
            .transpose()
    }

    /// Deserializes one subcommand table; a missing table is all defaults.
    pub fn section<T: serde::de::DeserializeOwned + Default>(&self, name: &str) -> Result<T, CliError> {
        let Some(table) = self.root.get(name).and_then(|v| v.as_table()) else {
            return Ok(T::default());
        };
        // Each key is checked on its own so every bad value is reported.
        let mut bad = Vec::new();
        let mut messages = Vec::new();
        for (k, v) in table {
            let mut one = toml::Table::new();
            one.insert(k.clone(), v.clone());
            if let Err(e) = toml::Value::Table(one).try_into::<T>() {
                bad.push(format!("{name}.{k}"));
                messages.push(format!("{name}.{k}: {}", e.message()));
            }
        }
        if !bad.is_empty() {
            return Err(CliError::Config {
                message: messages.join("; "),
                keys: bad,
            });
        }
        toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config {
                message: e.message().to_string(),
                keys: vec![name.to_string()],
            })
    }
}
