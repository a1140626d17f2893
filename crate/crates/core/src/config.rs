//! Flat `key=value` run configuration with dotted namespaces and strict key
//! checking, merged from a config file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::SplitSpec;
use crate::train::TrainConfig;

/// Every key the engine understands. Anything else is rejected by name.
pub const ALLOWED_KEYS: &[&str] = &[
    "edges",
    "attrs",
    "labels",
    "epochs",
    "batch_size",
    "base_lr",
    "tau",
    "omega",
    "m_c",
    "fraction_t",
    "m",
    "k",
    "l",
    "hidden",
    "quant_hidden",
    "momentum",
    "max_hop",
    "seed",
    "no_rank_loss",
    "margin.mode",
    "margin.value",
    "split.val",
    "split.test",
    "split.seed",
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Config::default()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: "expected `key=value`".into(),
            })?;
            cfg.map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn set_kv(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
        self.map.insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    /// Reject any key outside [`ALLOWED_KEYS`], naming the first offender.
    pub fn validate_keys(&self) -> Result<()> {
        for key in self.map.keys() {
            if !ALLOWED_KEYS.contains(&key.as_str()) {
                return Err(Error::ConfigKey(key.clone()));
            }
        }
        Ok(())
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::Config(format!("cannot parse `{key}={raw}`"))
            }),
        }
    }

    fn parse_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.map.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => Err(Error::Config(format!(
                "cannot parse `{key}={other}` as a bool"
            ))),
        }
    }

    fn parse_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("cannot parse `{key}={raw}`")))
                })
                .collect(),
        }
    }

    pub fn graph_paths(&self) -> Result<(PathBuf, Option<PathBuf>, Option<PathBuf>)> {
        let edges = self
            .get("edges")
            .ok_or_else(|| Error::Config("config is missing `edges`".into()))?;
        Ok((
            PathBuf::from(edges),
            self.get("attrs").map(PathBuf::from),
            self.get("labels").map(PathBuf::from),
        ))
    }

    /// Build the training configuration, validating keys and values.
    pub fn train_config(&self) -> Result<TrainConfig> {
        self.validate_keys()?;
        let d = TrainConfig::default();
        let fixed_margin = match self.get("margin.mode").unwrap_or("adaptive") {
            "adaptive" => None,
            "fixed" => {
                let v = self
                    .get("margin.value")
                    .ok_or_else(|| Error::Config("margin.mode=fixed needs margin.value".into()))?;
                Some(v.parse::<f32>().map_err(|_| {
                    Error::Config(format!("cannot parse `margin.value={v}`"))
                })?)
            }
            other => {
                return Err(Error::Config(format!(
                    "margin.mode must be `adaptive` or `fixed`, got `{other}`"
                )))
            }
        };
        let cfg = TrainConfig {
            epochs: self.parse("epochs", d.epochs)?,
            batch_size: self.parse("batch_size", d.batch_size)?,
            base_lr: self.parse("base_lr", d.base_lr)?,
            tau: self.parse("tau", d.tau)?,
            omega: self.parse("omega", d.omega)?,
            m_c: self.parse("m_c", d.m_c)?,
            fraction_t: self.parse("fraction_t", d.fraction_t)?,
            m: self.parse("m", d.m)?,
            k: self.parse("k", d.k)?,
            l: self.parse("l", d.l)?,
            hidden: self.parse_list("hidden", &d.hidden)?,
            quant_hidden: self.parse_list("quant_hidden", &d.quant_hidden)?,
            momentum: self.parse("momentum", d.momentum)?,
            max_hop: self.parse("max_hop", d.max_hop)?,
            seed: self.parse("seed", d.seed)?,
            fixed_margin,
            no_rank_loss: self.parse_bool("no_rank_loss", d.no_rank_loss)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Optional edge split (present when any `split.*` key is set).
    pub fn split_spec(&self) -> Result<Option<SplitSpec>> {
        let has_split = self.map.keys().any(|k| k.starts_with("split."));
        if !has_split {
            return Ok(None);
        }
        let spec = SplitSpec {
            val_fraction: self.parse("split.val", 0.05)?,
            test_fraction: self.parse("split.test", 0.10)?,
            seed: self.parse("split.seed", self.parse("seed", 42u64)?)?,
        };
        spec.validate()?;
        Ok(Some(spec))
    }

    /// Canonical `key=value` lines (sorted), for manifests.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_parse_and_overrides() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# run config").unwrap();
        writeln!(f, "epochs = 5").unwrap();
        writeln!(f, "hidden=16,8,4").unwrap();
        writeln!(f, "l=4").unwrap();
        f.flush().unwrap();
        let mut cfg = Config::from_file(f.path()).unwrap();
        cfg.set_kv("epochs=7").unwrap();
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.epochs, 7);
        assert_eq!(tc.hidden, vec![16, 8, 4]);
        assert_eq!(tc.l, 4);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = Config::new();
        cfg.set_kv("epcohs=5").unwrap();
        match cfg.train_config() {
            Err(Error::ConfigKey(key)) => assert_eq!(key, "epcohs"),
            other => panic!("expected ConfigKey error, got {other:?}"),
        }
    }

    #[test]
    fn fixed_margin_needs_value() {
        let mut cfg = Config::new();
        cfg.set_kv("margin.mode=fixed").unwrap();
        assert!(cfg.train_config().is_err());
        cfg.set_kv("margin.value=50").unwrap();
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.fixed_margin, Some(50.0));
    }

    #[test]
    fn split_spec_defaults() {
        let mut cfg = Config::new();
        assert!(cfg.split_spec().unwrap().is_none());
        cfg.set_kv("split.test=0.2").unwrap();
        let spec = cfg.split_spec().unwrap().unwrap();
        assert_eq!(spec.test_fraction, 0.2);
        assert_eq!(spec.val_fraction, 0.05);
    }

    #[test]
    fn snapshot_is_sorted_and_stable() {
        let mut cfg = Config::new();
        cfg.set("seed", 1);
        cfg.set("epochs", 2);
        assert_eq!(cfg.snapshot(), "epochs=2\nseed=1\n");
    }
}
