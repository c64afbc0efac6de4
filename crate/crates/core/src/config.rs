//! Flat `key=value` configuration with dotted keys (`penalty.lambda=0.1`).
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected by name. Later assignments override earlier ones, which is how
//! command-line flags are layered over a file.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gpm::ThresholdPolicy;
use crate::penalty::{PenaltyConfig, PenaltyKind};
use crate::synthgen::{Family, GenSpec};
use crate::train::{BasisConfig, TrainConfig};

pub const DEFAULT_CHECKPOINT_EVERY: usize = 500;

/// Every accepted key with its default, as shown by `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("penalty.kind", "scad (l1, adaptive-l1, scad, mcp)"),
    ("penalty.lambda", "0.1"),
    ("penalty.scad_a", "3.7"),
    ("penalty.mcp_gamma", "3"),
    ("penalty.epsilon", "1e-6 (adaptive-l1 weight floor)"),
    ("basis.k", "min(n, 30)"),
    ("basis.alpha", "0.05"),
    ("basis.bandwidth_scale", "2"),
    ("basis.standardize", "true"),
    ("train.lr", "0.01"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps_adam", "1e-8"),
    ("train.max_iters", "2000"),
    ("train.tol", "1e-6"),
    ("train.batch", "full batch"),
    ("train.seed", "0"),
    ("train.smoothing", "0.01"),
    ("train.checkpoint_every", "500"),
    ("threshold.policy", "gap (gap, absolute)"),
    ("threshold.tau", "1e-3 (absolute policy only)"),
    ("gen.family", "butterfly-c"),
    ("gen.d", "4"),
    ("gen.n", "1000"),
    ("gen.seed", "0"),
    ("gen.edge_density", "0.3"),
    ("gen.mlp_width", "16"),
    ("gen.card_min", "2 (butterfly: 2)"),
    ("gen.card_max", "4 (butterfly: 2)"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

/// Everything a fit needs, resolved from a [`Config`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub basis: BasisConfig,
    pub penalty: PenaltyConfig,
    pub train: TrainConfig,
    pub checkpoint_every: usize,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                row: lineno + 1,
                col: 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse { row: lineno + 1, col: 1, msg: e.to_string() })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::pre(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Entries of `other` override those of `self`.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::pre(format!("invalid value '{v}' for {key}"))),
        }
    }

    pub fn fit_settings(&self) -> Result<FitSettings> {
        let mut basis = BasisConfig::default();
        let mut penalty = PenaltyConfig::default();
        let mut train = TrainConfig::default();
        if let Some(v) = self.get("penalty.kind") {
            penalty.kind = v.parse::<PenaltyKind>()?;
        }
        set(&mut penalty.lambda, self.parsed("penalty.lambda")?);
        set(&mut penalty.scad_a, self.parsed("penalty.scad_a")?);
        set(&mut penalty.mcp_gamma, self.parsed("penalty.mcp_gamma")?);
        set(&mut penalty.epsilon, self.parsed("penalty.epsilon")?);
        if let Some(k) = self.parsed("basis.k")? {
            basis.k = Some(k);
        }
        set(&mut basis.alpha, self.parsed("basis.alpha")?);
        set(&mut basis.bandwidth_scale, self.parsed("basis.bandwidth_scale")?);
        set(&mut basis.standardize, self.parsed("basis.standardize")?);
        set(&mut train.lr, self.parsed("train.lr")?);
        set(&mut train.beta1, self.parsed("train.beta1")?);
        set(&mut train.beta2, self.parsed("train.beta2")?);
        set(&mut train.eps_adam, self.parsed("train.eps_adam")?);
        set(&mut train.max_iters, self.parsed("train.max_iters")?);
        set(&mut train.tol, self.parsed("train.tol")?);
        if let Some(b) = self.parsed("train.batch")? {
            train.batch = Some(b);
        }
        set(&mut train.seed, self.parsed("train.seed")?);
        set(&mut train.smoothing, self.parsed("train.smoothing")?);
        let tau: f64 = self.parsed("threshold.tau")?.unwrap_or(1e-3);
        train.threshold = match self.get("threshold.policy").unwrap_or("gap") {
            "gap" => ThresholdPolicy::Gap,
            "absolute" => ThresholdPolicy::Absolute(tau),
            other => return Err(Error::pre(format!("unknown threshold policy '{other}' (gap, absolute)"))),
        };
        let checkpoint_every = self.parsed("train.checkpoint_every")?.unwrap_or(DEFAULT_CHECKPOINT_EVERY);
        penalty.validate()?;
        train.validate()?;
        if !(basis.alpha >= 0.0) || !(basis.bandwidth_scale > 0.0) || basis.k == Some(0) {
            return Err(Error::pre("basis needs k >= 1, alpha >= 0, bandwidth_scale > 0"));
        }
        Ok(FitSettings { basis, penalty, train, checkpoint_every })
    }

    pub fn gen_spec(&self) -> Result<GenSpec> {
        let family: Family = self.get("gen.family").unwrap_or("butterfly-c").parse()?;
        let d = self.parsed("gen.d")?.unwrap_or(4);
        let n = self.parsed("gen.n")?.unwrap_or(1000);
        let seed = self.parsed("gen.seed")?.unwrap_or(0);
        let mut spec = GenSpec::new(family, d, n, seed);
        set(&mut spec.edge_density, self.parsed("gen.edge_density")?);
        set(&mut spec.mlp_width, self.parsed("gen.mlp_width")?);
        set(&mut spec.cardinality.0, self.parsed("gen.card_min")?);
        set(&mut spec.cardinality.1, self.parsed("gen.card_max")?);
        spec.validate()?;
        Ok(spec)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut cfg = Config::parse("# comment\npenalty.lambda = 0.2\n\ntrain.max_iters=10\n").unwrap();
        let mut flags = Config::default();
        flags.set("penalty.lambda", "0.05").unwrap();
        cfg.merge(&flags);
        let s = cfg.fit_settings().unwrap();
        assert_eq!(s.penalty.lambda, 0.05);
        assert_eq!(s.train.max_iters, 10);
        assert_eq!(s.checkpoint_every, DEFAULT_CHECKPOINT_EVERY);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse("penalty.lamda=0.1").unwrap_err().to_string();
        assert!(err.contains("penalty.lamda"), "{err}");
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Config::parse("train.lr=fast").unwrap().fit_settings().is_err());
        assert!(Config::parse("no equals sign").is_err());
        assert!(Config::parse("gen.d=3").unwrap().gen_spec().is_err());
    }
}
