//! Layered configuration: built-in defaults, then a JSON config file, then
//! command-line flags. The resolved record is echoed into every report.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kdebias_core::QuadOptions;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Quadrature overrides; absent fields fall back to per-command defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_depth: Option<u32>,
}

impl QuadConfig {
    pub fn apply(&self, mut base: QuadOptions) -> Result<QuadOptions> {
        if let Some(r) = self.rel_tol {
            base.rel_tol = r;
        }
        if let Some(a) = self.abs_tol {
            base.abs_tol = a;
        }
        if let Some(m) = self.max_depth {
            base.max_depth = m;
        }
        if !(base.rel_tol >= 0.0 && base.abs_tol >= 0.0 && base.rel_tol + base.abs_tol > 0.0) {
            bail!(kdebias_core::Error::InvalidParameter(
                "quad.rel_tol and quad.abs_tol must be non-negative and not both zero".into()
            ));
        }
        Ok(base)
    }
}

/// The parts of a config file shared by all commands, plus the remaining
/// command-specific keys.
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub quad: QuadConfig,
    pub params: Map<String, Value>,
}

impl FileConfig {
    pub fn empty() -> Self {
        Self { seed: None, threads: None, quad: QuadConfig::default(), params: Map::new() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(map) = value else {
            bail!("config {} must be a JSON object", path.display());
        };
        let mut map = expand_dotted(map)?;
        let seed = map.remove("seed").map(serde_json::from_value).transpose().context("config key seed")?;
        let threads =
            map.remove("threads").map(serde_json::from_value).transpose().context("config key threads")?;
        let quad = map
            .remove("quad")
            .map(serde_json::from_value)
            .transpose()
            .context("config key quad")?
            .unwrap_or_default();
        Ok(Self { seed, threads, quad, params: map })
    }
}

/// Turns `{"quad.rel_tol": 1e-8}` into `{"quad": {"rel_tol": 1e-8}}`.
fn expand_dotted(map: Map<String, Value>) -> Result<Map<String, Value>> {
    let mut out = Map::new();
    for (key, value) in map {
        match key.split_once('.') {
            Some((head, tail)) => {
                let slot = out.entry(head.to_string()).or_insert_with(|| Value::Object(Map::new()));
                let Value::Object(inner) = slot else {
                    bail!("config key {head} is both a value and a section");
                };
                inner.insert(tail.to_string(), value);
            }
            None => {
                if let (Some(Value::Object(existing)), Value::Object(new)) = (out.get_mut(&key), &value) {
                    existing.extend(new.clone());
                } else {
                    out.insert(key, value);
                }
            }
        }
    }
    Ok(out)
}

/// Defaults ← file ← flags, key by key at the top level of the parameter
/// record. Nested records (kernel, density, …) are replaced whole.
pub fn resolve<P>(file: &Map<String, Value>, flags: Map<String, Value>) -> Result<P>
where
    P: Serialize + DeserializeOwned + Default,
{
    let Value::Object(mut merged) = serde_json::to_value(P::default())? else {
        unreachable!("parameter records serialize to objects");
    };
    for (k, v) in file.iter().map(|(k, v)| (k.clone(), v.clone())).chain(flags) {
        merged.insert(k, v);
    }
    serde_json::from_value(Value::Object(merged)).context("invalid parameters")
}

/// Collects flag values that were given on the command line.
#[derive(Default)]
pub struct Flags(pub Map<String, Value>);

impl Flags {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        if let Some(v) = value {
            self.0.insert(key.to_string(), serde_json::to_value(v)?);
        }
        Ok(())
    }

    /// A flag holding JSON, either inline or as a path to a file.
    pub fn set_json(&mut self, key: &str, arg: Option<&str>) -> Result<()> {
        if let Some(a) = arg {
            self.0.insert(key.to_string(), json_arg(a).with_context(|| format!("--{}", key.replace('_', "-")))?);
        }
        Ok(())
    }
}

/// Parses `arg` as inline JSON when it looks like JSON, otherwise reads it
/// as a file path.
pub fn json_arg(arg: &str) -> Result<Value> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        return Ok(serde_json::from_str(arg)?);
    }
    let text = fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))
}

/// Parses "a,b,c" into numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| anyhow::anyhow!(kdebias_core::Error::InvalidParameter(format!("cannot parse {p:?}: {e}")))))
        .collect()
}

/// Fails unless `path` is a readable file.
pub fn require_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!(kdebias_core::Error::InvalidParameter(format!("input file {} does not exist", path.display())));
    }
    Ok(())
}

/// Fails unless the directory that will hold `path` exists.
pub fn require_output(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!(kdebias_core::Error::InvalidParameter(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    if path.is_dir() {
        bail!(kdebias_core::Error::InvalidParameter(format!("output path {} is a directory", path.display())));
    }
    Ok(())
}

/// `out` with its extension replaced by `csv`.
pub fn sibling_csv(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct P {
        a: u32,
        b: Option<f64>,
        c: Vec<f64>,
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = json!({"a": 3, "c": [1.0]}).as_object().unwrap().clone();
        let mut flags = Flags::default();
        flags.set("a", Some(7)).unwrap();
        let p: P = resolve(&file, flags.0).unwrap();
        assert_eq!(p, P { a: 7, b: None, c: vec![1.0] });
        let bad = json!({"zzz": 1}).as_object().unwrap().clone();
        assert!(resolve::<P>(&bad, Map::new()).is_err());
    }

    #[test]
    fn dotted_keys_expand() {
        let m = json!({"quad.rel_tol": 1e-8, "quad": {"abs_tol": 1e-12}, "seed": 4})
            .as_object()
            .unwrap()
            .clone();
        let e = expand_dotted(m).unwrap();
        assert_eq!(e["quad"]["rel_tol"], json!(1e-8));
        assert_eq!(e["quad"]["abs_tol"], json!(1e-12));
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_list::<f64>("0.5, -1").unwrap(), vec![0.5, -1.0]);
        assert!(parse_list::<f64>("x").is_err());
    }
}
