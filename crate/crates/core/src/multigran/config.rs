use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Training and model settings, readable from a `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Maximum joint gradient norm per step; 0 disables clipping.
    pub clip: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub margin: f64,
    pub heads: usize,
    pub head_dim: usize,
    pub embed_dim: usize,
    pub caam_heads: usize,
    pub head_hidden: usize,
    pub seed: u64,
    /// Loss weights for point, game, set and match samples.
    pub weights: [f64; 4],
    pub test_fraction: f64,
    pub folds: usize,
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            clip: 1.0,
            epochs: 5,
            dropout: 0.1,
            margin: 0.5,
            heads: 4,
            head_dim: 8,
            embed_dim: 32,
            caam_heads: 8,
            head_hidden: 32,
            seed: 0,
            weights: [1.0; 4],
            test_fraction: 0.2,
            folds: 5,
            data: None,
            out_dir: None,
        }
    }
}

const WEIGHT_KEYS: [&str; 4] = ["w_point", "w_game", "w_set", "w_match"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "lr" => self.lr = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "head_dim" => self.head_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "caam_heads" => self.caam_heads = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            k => match WEIGHT_KEYS.iter().position(|&w| w == k) {
                Some(i) => self.weights[i] = parse(key, value)?,
                None => return Err(Error::Config(format!("unknown config key {k:?}"))),
            },
        }
        Ok(())
    }

    /// Applies every setting of a `key=value` text over the current values.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("lr", self.lr.to_string());
        kv("clip", self.clip.to_string());
        kv("epochs", self.epochs.to_string());
        kv("dropout", self.dropout.to_string());
        kv("margin", self.margin.to_string());
        kv("heads", self.heads.to_string());
        kv("head_dim", self.head_dim.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("caam_heads", self.caam_heads.to_string());
        kv("head_hidden", self.head_hidden.to_string());
        kv("seed", self.seed.to_string());
        for (k, w) in WEIGHT_KEYS.iter().zip(self.weights) {
            kv(k, w.to_string());
        }
        kv("test_fraction", self.test_fraction.to_string());
        kv("folds", self.folds.to_string());
        if let Some(d) = &self.data {
            kv("data", d.display().to_string());
        }
        if let Some(d) = &self.out_dir {
            kv("out_dir", d.display().to_string());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.clip >= 0.0 && self.clip.is_finite()) {
            return bad(format!("clip must be non-negative, got {}", self.clip));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        for (name, v) in [
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("embed_dim", self.embed_dim),
            ("caam_heads", self.caam_heads),
            ("head_hidden", self.head_hidden),
            ("folds", self.folds),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.embed_dim.is_multiple_of(self.caam_heads) {
            return bad(format!("caam_heads {} must divide embed_dim {}", self.caam_heads, self.embed_dim));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad(format!("granularity weights must be non-negative, got {:?}", self.weights));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction));
        }
        Ok(())
    }
}
