use std::fmt::Write as _;
use std::path::Path;

use crate::data::record::PointRecord;
use crate::error::{Error, Result};

/// Maps a speed in mph onto `[-1, 1]` after clamping into `[x_min, x_max]`.
pub fn normalize_serve_speed(x: f64, x_min: f64, x_max: f64) -> Result<f64> {
    if x_min >= x_max || x_min.is_nan() || x_max.is_nan() {
        return Err(Error::Config(format!("speed range is empty: min {x_min} >= max {x_max}")));
    }
    let x = x.clamp(x_min, x_max);
    Ok((2.0 * (x - x_min) / (x_max - x_min) - 1.0).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub values: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    /// Set when the spread is zero and every output is 0.
    pub zero_spread: bool,
}

/// Population z-scores.
pub fn zscore_distance_run(values: &[f64]) -> ZScore {
    let n = values.len().max(1) as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma == 0.0 || values.len() < 2 {
        return ZScore { values: vec![0.0; values.len()], mu, sigma, zero_spread: true };
    }
    ZScore { values: values.iter().map(|v| (v - mu) / sigma).collect(), mu, sigma, zero_spread: false }
}

/// Statistics needed to normalize new data the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationMeta {
    pub speed_min: f64,
    pub speed_max: f64,
    pub dist_mu: f64,
    pub dist_sigma: f64,
}

impl NormalizationMeta {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("speed_min", self.speed_min),
            ("speed_max", self.speed_max),
            ("dist_mu", self.dist_mu),
            ("dist_sigma", self.dist_sigma),
        ] {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vals = [None; 4];
        let keys = ["speed_min", "speed_max", "dist_mu", "dist_sigma"];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            let i = keys
                .iter()
                .position(|&key| key == k.trim())
                .ok_or_else(|| Error::Config(format!("unknown normalization key {:?}", k.trim())))?;
            vals[i] = Some(v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number for {k}: {v:?}")))?);
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::Config(format!("missing normalization key {}", keys[i])));
        Ok(NormalizationMeta { speed_min: get(0)?, speed_max: get(1)?, dist_mu: get(2)?, dist_sigma: get(3)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Computes dataset statistics and normalizes speeds and running distances
/// in place. Returns the statistics and whether the distance spread was zero.
pub fn fit_normalization(records: &mut [PointRecord]) -> Result<(NormalizationMeta, bool)> {
    let speeds: Vec<f64> = records.iter().flat_map(|r| r.players.iter().filter_map(|p| p.serve_speed)).collect();
    let (speed_min, speed_max) = match speeds.iter().copied().reduce(f64::min) {
        Some(lo) => (lo, speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        None => (0.0, 1.0),
    };
    let dists: Vec<f64> = records.iter().flat_map(|r| r.players.iter().map(|p| p.distance_run)).collect();
    let z = zscore_distance_run(&dists);
    let meta = NormalizationMeta { speed_min, speed_max, dist_mu: z.mu, dist_sigma: z.sigma };
    apply_normalization(records, &meta)?;
    Ok((meta, z.zero_spread))
}

/// Normalizes with previously fitted statistics.
pub fn apply_normalization(records: &mut [PointRecord], meta: &NormalizationMeta) -> Result<()> {
    for r in records.iter_mut() {
        for p in r.players.iter_mut() {
            if let Some(v) = p.serve_speed {
                p.serve_speed = Some(if meta.speed_min < meta.speed_max {
                    normalize_serve_speed(v, meta.speed_min, meta.speed_max)?
                } else {
                    0.0
                });
            }
            p.distance_run =
                if meta.dist_sigma > 0.0 { (p.distance_run - meta.dist_mu) / meta.dist_sigma } else { 0.0 };
        }
    }
    Ok(())
}
