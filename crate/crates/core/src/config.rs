//! Pipeline tunables from flat `key = value` files and command-line overrides.
//!
//! Precedence, lowest first: defaults, config file, `EVTRACK_SEED`, `--set`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::dataset::synth::{Preset, SynthConfig};
use crate::harris::HarrisConfig;
use crate::matching::MatchConfig;
use crate::tracker::TrackerConfig;

pub const SEED_ENV: &str = "EVTRACK_SEED";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

/// Overrides applied on top of a synthetic preset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub preset: Preset,
    pub duration_s: Option<f64>,
    pub frame_rate: Option<f64>,
    pub contrast: Option<f64>,
    /// Velocity of the first shape.
    pub vx: Option<f64>,
    pub vy: Option<f64>,
    pub jitter_us: u64,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            preset: Preset::Square,
            duration_s: None,
            frame_rate: None,
            contrast: None,
            vx: None,
            vy: None,
            jitter_us: 0,
            seed: 42,
        }
    }
}

impl SynthSettings {
    pub fn to_config(&self) -> SynthConfig {
        let mut cfg = SynthConfig::preset(self.preset);
        if let Some(d) = self.duration_s {
            cfg.duration_s = d;
        }
        if let Some(f) = self.frame_rate {
            cfg.frame_rate = f;
        }
        if let Some(c) = self.contrast {
            cfg.contrast_threshold = c;
        }
        if let Some(first) = cfg.shapes.first_mut() {
            if let Some(vx) = self.vx {
                first.vx = vx;
            }
            if let Some(vy) = self.vy {
                first.vy = vy;
            }
        }
        cfg.jitter_us = self.jitter_us;
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub harris: HarrisConfig,
    pub matching: MatchConfig,
    pub tracker: TrackerConfig,
    pub synth: SynthSettings,
}

/// Every recognised key, in documentation order.
pub const KEYS: &[&str] = &[
    "harris.k",
    "harris.max_corners",
    "harris.rel_threshold",
    "harris.abs_threshold",
    "match.N",
    "match.threshold",
    "match.tolerance",
    "rht.vote_threshold",
    "rht.max_iters",
    "rht.seed",
    "rht.inlier_eps",
    "track.kappa",
    "track.r_assoc",
    "support.dt_max_ms",
    "synth.preset",
    "synth.duration_s",
    "synth.frame_rate",
    "synth.contrast",
    "synth.vx",
    "synth.vy",
    "synth.jitter_us",
    "synth.seed",
];

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn positive(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|_| bad(key, value, "not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, value, "must be positive"))
    }
}

fn finite(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|_| bad(key, value, "not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, value, "must be finite"))
    }
}

fn count(key: &str, value: &str, min: u64) -> Result<u64, ConfigError> {
    let v: u64 = value
        .parse()
        .map_err(|_| bad(key, value, "not a non-negative integer"))?;
    if v >= min {
        Ok(v)
    } else {
        Err(bad(key, value, format!("must be at least {min}")))
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "harris.k" => {
                self.harris.k = positive(key, value)?;
                self.matching.k = self.harris.k;
            }
            "harris.max_corners" => self.harris.max_corners = count(key, value, 1)? as usize,
            "harris.rel_threshold" => self.harris.relative_threshold = positive(key, value)?,
            "harris.abs_threshold" => {
                self.harris.absolute_threshold = if value == "none" {
                    None
                } else {
                    Some(finite(key, value)?)
                }
            }
            "match.N" => {
                let n = count(key, value, 1)?;
                if n > 48 {
                    return Err(bad(key, value, "a 7x7 window has 48 neighbours"));
                }
                self.matching.n_recent = n as usize;
            }
            "match.threshold" => self.matching.threshold = positive(key, value)?,
            "match.tolerance" => {
                let r = count(key, value, 0)?;
                if r > 3 {
                    return Err(bad(key, value, "must be at most 3"));
                }
                self.matching.tolerance = r as usize;
            }
            "rht.vote_threshold" => self.tracker.rht.vote_threshold = count(key, value, 2)? as u32,
            "rht.max_iters" => self.tracker.rht.max_iters = count(key, value, 1)? as usize,
            "rht.seed" => self.tracker.seed = count(key, value, 0)?,
            "rht.inlier_eps" => self.tracker.rht.inlier_eps = positive(key, value)?,
            "track.kappa" => self.tracker.kappa = positive(key, value)?,
            "track.r_assoc" => self.tracker.r_assoc = positive(key, value)?,
            "support.dt_max_ms" => {
                let ms = positive(key, value)?;
                self.tracker.rht.dt_max_us = (ms * 1000.0).round().max(1.0) as u64;
            }
            "synth.preset" => {
                self.synth.preset = value
                    .parse()
                    .map_err(|e: crate::dataset::DatasetError| bad(key, value, e.to_string()))?
            }
            "synth.duration_s" => {
                let d = finite(key, value)?;
                if d < 0.0 {
                    return Err(bad(key, value, "must not be negative"));
                }
                self.synth.duration_s = Some(d);
            }
            "synth.frame_rate" => self.synth.frame_rate = Some(positive(key, value)?),
            "synth.contrast" => self.synth.contrast = Some(positive(key, value)?),
            "synth.vx" => self.synth.vx = Some(finite(key, value)?),
            "synth.vy" => self.synth.vy = Some(finite(key, value)?),
            "synth.jitter_us" => self.synth.jitter_us = count(key, value, 0)?,
            "synth.seed" => self.synth.seed = count(key, value, 0)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a `key = value` text. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Parses one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: "--set".to_string(),
            line: 0,
        })?;
        self.set(k.trim(), v)
    }

    /// Defaults, then `file`, then `env_seed`, then `overrides`.
    pub fn load(
        file: Option<&Path>,
        env_seed: Option<&str>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        if let Some(seed) = env_seed {
            cfg.set("rht.seed", seed).map_err(|e| match e {
                ConfigError::BadValue { value, reason, .. } => ConfigError::BadValue {
                    key: SEED_ENV.to_string(),
                    value,
                    reason,
                },
                other => other,
            })?;
        }
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }
}
