//! Parameter resolution: built-in defaults, then the command's section of the
//! `--config` file, then explicit flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

/// A parsed `--config` file. Each command reads the object stored under its
/// own name; a top-level `seed` applies to every command.
#[derive(Debug, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
            Value::Object(root) => Ok(Self { root }),
            _ => bail!("config {} must hold a JSON object", path.display()),
        }
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        match self.root.get("seed") {
            None => Ok(None),
            Some(v) => Ok(Some(v.as_u64().context("config seed must be a non-negative integer")?)),
        }
    }

    fn section(&self, command: &str) -> Result<Map<String, Value>> {
        match self.root.get(command) {
            None => Ok(Map::new()),
            Some(Value::Object(m)) => Ok(m.clone()),
            Some(_) => bail!("config section {command:?} must be an object"),
        }
    }

    /// `P::default()` overlaid with the command section and then with the
    /// non-null fields of `flags`.
    pub fn resolve<P, F>(&self, command: &str, flags: &F) -> Result<P>
    where
        P: Default + Serialize + DeserializeOwned,
        F: Serialize,
    {
        let mut value = serde_json::to_value(P::default())?;
        overlay(&mut value, self.section(command)?);
        if let Value::Object(m) = serde_json::to_value(flags)? {
            overlay(&mut value, m.into_iter().filter(|(_, v)| !v.is_null()).collect());
        }
        serde_json::from_value(value).with_context(|| format!("invalid {command} parameters"))
    }
}

fn overlay(base: &mut Value, patch: Map<String, Value>) {
    if let Value::Object(b) = base {
        for (k, v) in patch {
            b.insert(k, v);
        }
    }
}

/// Writes the resolved parameters of a run into `dir`.
pub fn write_effective(dir: &Path, command: &str, seed: u64, out: &Path, params: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut obj = Map::new();
    obj.insert("command".into(), Value::from(command));
    obj.insert("seed".into(), Value::from(seed));
    obj.insert("out".into(), Value::from(out.to_string_lossy().into_owned()));
    obj.insert("params".into(), serde_json::to_value(params)?);
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    fs::write(&path, serde_json::to_string_pretty(&Value::Object(obj))? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(default)]
    struct P {
        a: u32,
        b: String,
    }

    impl Default for P {
        fn default() -> Self {
            Self { a: 1, b: "x".into() }
        }
    }

    #[derive(Serialize)]
    struct Flags {
        a: Option<u32>,
    }

    #[test]
    fn flags_override_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 9, "cmd": {"a": 5, "b": "y"}}"#).unwrap();
        let cfg = ConfigFile::load(Some(&path)).unwrap();
        assert_eq!(cfg.seed().unwrap(), Some(9));
        let p: P = cfg.resolve("cmd", &Flags { a: None }).unwrap();
        assert_eq!(p, P { a: 5, b: "y".into() });
        let p: P = cfg.resolve("cmd", &Flags { a: Some(7) }).unwrap();
        assert_eq!(p.a, 7);
        let p: P = cfg.resolve("other", &Flags { a: None }).unwrap();
        assert_eq!(p, P::default());
    }

    #[test]
    fn non_object_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, "[1]").unwrap();
        assert!(ConfigFile::load(Some(&path)).is_err());
    }
}
