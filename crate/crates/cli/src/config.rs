//! `--config` overlay. File values fill every argument that was not given on
//! the command line; flags always win.

use std::fs;
use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use voxsr::{Error, Result};

/// Top-level keys that configure the global flags.
const GLOBAL_KEYS: [&str; 3] = ["seed", "threads", "overwrite"];

/// Stage blocks, each listed with the block names it reads, lowest
/// precedence first.
pub const BLOCKS: [(&str, &[&str]); 14] = [
    ("ingest", &["clip", "ingest"]),
    ("pyramid", &["pyramid"]),
    ("pack", &["store", "pack"]),
    ("register", &["register"]),
    ("match", &["match"]),
    ("sample", &["sampler", "sample"]),
    ("sr-fit", &["linear-sr", "sr-fit"]),
    ("sr-apply", &["infer", "sr-apply"]),
    ("sr-replay", &["sr-replay"]),
    ("eval", &["metrics", "eval"]),
    ("tv", &["tv"]),
    ("spectrum", &["spectrum"]),
    ("phantom", &["phantom"]),
    ("gap", &["gap"]),
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let root = match serde_json::from_str(&text)? {
            Value::Object(m) => m,
            _ => return Err(Error::Config(format!("{} must hold a JSON object", path.display()))),
        };
        let known = |k: &str| GLOBAL_KEYS.contains(&k) || BLOCKS.iter().any(|(_, names)| names.contains(&k));
        if let Some(bad) = root.keys().find(|k| !known(k)) {
            return Err(Error::Config(format!("unknown config block {bad:?}")));
        }
        Ok(Self { root })
    }

    pub fn globals(&self) -> Map<String, Value> {
        GLOBAL_KEYS
            .iter()
            .filter_map(|&k| self.root.get(k).map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    /// Merged block for a stage.
    pub fn block(&self, stage: &str) -> Result<Map<String, Value>> {
        let names = BLOCKS
            .iter()
            .find(|(s, _)| *s == stage)
            .map(|(_, n)| *n)
            .unwrap_or(&[]);
        let mut out = Map::new();
        for name in names {
            match self.root.get(*name) {
                None => {}
                Some(Value::Object(m)) => out.extend(m.iter().map(|(k, v)| (k.replace('-', "_"), v.clone()))),
                Some(_) => return Err(Error::Config(format!("config block {name:?} must be an object"))),
            }
        }
        Ok(out)
    }
}

/// Replaces every field of `args` named in `block` unless its flag came
/// from the command line.
pub fn overlay<T: Serialize + DeserializeOwned>(args: T, matches: &ArgMatches, block: &Map<String, Value>) -> Result<T> {
    if block.is_empty() {
        return Ok(args);
    }
    let mut value = serde_json::to_value(&args)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("arguments do not serialize to an object".into()))?;
    for (key, v) in block {
        if !obj.contains_key(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        if matches.value_source(key) == Some(ValueSource::CommandLine) {
            continue;
        }
        obj.insert(key.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}
