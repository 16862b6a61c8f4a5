//! Tracker hyperparameters.
//!
//! The on-disk format is flat `key = value` text with `#` comments. Every
//! tunable lives in [`TrackerConfig`]; two named profiles ship with the crate.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("cannot parse value `{value}` for key `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invariant { key: &'static str, reason: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown profile `{0}` (expected synthehicle or cityflow)")]
    UnknownProfile(String),
    #[error("cannot read config file {path}: {message}")]
    Read { path: String, message: String },
}

/// Named hyperparameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Synthehicle,
    Cityflow,
}

impl FromStr for Profile {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "synthehicle" => Ok(Profile::Synthehicle),
            "cityflow" => Ok(Profile::Cityflow),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Appearance weight in the convex combination; position gets `1 - lambda`.
    pub lambda: f64,
    /// Cosine similarity that maps to a neutral (zero) appearance score.
    pub theta_feat: f64,
    /// Ground-plane distance that maps to a neutral positional score.
    pub theta_pos: f64,
    /// Distance gate for infeasible edges. `None` means "same as `theta_pos`".
    pub delta_pos: Option<f64>,
    /// Penalty assigned to infeasible edges.
    pub rho: f64,
    /// Fraction of box height used as the ground contact point.
    pub alpha_proj: f64,
    /// Retention factor of the track aggregates (features, positions, velocities).
    pub ema_gamma: f64,
    /// Per-frame decay base of a lost track's appearance similarity.
    pub beta_decay: f64,
    /// Frames a track stays inactive before it is declared lost.
    pub patience: u32,
    /// Frames a lost track is kept before it is killed.
    pub memory: u32,
    /// Bonus added to edges selected by IoU pre-matching.
    pub iou_bias: f64,
    pub enable_decay: bool,
    pub enable_prematch: bool,
    pub enable_prune: bool,
    /// Detections below this confidence never enter the graph.
    pub min_confidence: f64,
    /// Keep the positional term on edges incident to lost tracks. The
    /// distance gate is always waived for lost tracks.
    pub lost_position_term: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self::profile(Profile::Synthehicle)
    }
}

const KEYS: &[&str] = &[
    "lambda",
    "theta_feat",
    "theta_pos",
    "delta_pos",
    "rho",
    "alpha_proj",
    "ema_gamma",
    "beta_decay",
    "patience",
    "memory",
    "iou_bias",
    "enable_decay",
    "enable_prematch",
    "enable_prune",
    "min_confidence",
    "lost_position_term",
];

impl TrackerConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = TrackerConfig {
            lambda: 0.4,
            theta_feat: 0.8,
            theta_pos: 4.0,
            delta_pos: None,
            rho: -100.0,
            alpha_proj: 0.85,
            ema_gamma: 0.9,
            beta_decay: 0.9,
            patience: 1,
            memory: 15,
            iou_bias: 1.0,
            enable_decay: false,
            enable_prematch: true,
            enable_prune: true,
            min_confidence: 0.0,
            lost_position_term: true,
        };
        match profile {
            Profile::Synthehicle => base,
            Profile::Cityflow => TrackerConfig {
                lambda: 0.9,
                theta_feat: 0.7,
                theta_pos: 0.001,
                memory: 160,
                enable_decay: true,
                enable_prematch: false,
                enable_prune: false,
                ..base
            },
        }
    }

    /// Effective infeasibility gate.
    pub fn delta_pos(&self) -> f64 {
        self.delta_pos.unwrap_or(self.theta_pos)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, key: &'static str, reason: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invariant {
                    key,
                    reason: reason.to_string(),
                })
            }
        }
        check(
            (0.0..=1.0).contains(&self.lambda),
            "lambda",
            "must lie in [0, 1]",
        )?;
        check(
            self.theta_feat > -1.0 && self.theta_feat < 1.0,
            "theta_feat",
            "must lie in (-1, 1)",
        )?;
        check(
            self.theta_pos > 0.0 && self.theta_pos.is_finite(),
            "theta_pos",
            "must be positive",
        )?;
        if let Some(d) = self.delta_pos {
            check(d >= 0.0 && d.is_finite(), "delta_pos", "must be >= 0")?;
        }
        check(
            self.rho < -1.0 && self.rho.is_finite(),
            "rho",
            "must be < -1",
        )?;
        check(
            (0.0..=1.0).contains(&self.alpha_proj),
            "alpha_proj",
            "must lie in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.ema_gamma),
            "ema_gamma",
            "must lie in [0, 1]",
        )?;
        check(
            self.beta_decay > 0.0 && self.beta_decay < 1.0,
            "beta_decay",
            "must lie in (0, 1)",
        )?;
        check(
            self.iou_bias >= 0.0 && self.iou_bias.is_finite(),
            "iou_bias",
            "must be >= 0",
        )?;
        check(
            (0.0..=1.0).contains(&self.min_confidence),
            "min_confidence",
            "must lie in [0, 1]",
        )?;
        Ok(())
    }

    /// Set one field from its textual form. Does not validate invariants.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim();
        let value = value.trim();
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let float = || value.parse::<f64>().map_err(|_| bad());
        let uint = || value.parse::<u32>().map_err(|_| bad());
        let boolean = || match value.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(bad()),
        };
        match key {
            "lambda" => self.lambda = float()?,
            "theta_feat" => self.theta_feat = float()?,
            "theta_pos" => self.theta_pos = float()?,
            "delta_pos" => {
                self.delta_pos = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(float()?)
                }
            }
            "rho" => self.rho = float()?,
            "alpha_proj" => self.alpha_proj = float()?,
            "ema_gamma" => self.ema_gamma = float()?,
            "beta_decay" => self.beta_decay = float()?,
            "patience" => self.patience = uint()?,
            "memory" => self.memory = uint()?,
            "iou_bias" => self.iou_bias = float()?,
            "enable_decay" => self.enable_decay = boolean()?,
            "enable_prematch" => self.enable_prematch = boolean()?,
            "enable_prune" => self.enable_prune = boolean()?,
            "min_confidence" => self.min_confidence = float()?,
            "lost_position_term" => self.lost_position_term = boolean()?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Apply `key = value` text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: idx + 1 })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrackerConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Build a config from an optional profile, an optional file and
    /// `key=value` overrides, in that order of precedence (last wins).
    pub fn load(
        profile: Option<Profile>,
        path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut cfg = profile.map(Self::profile).unwrap_or_default();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }
}

/// Split a `key=value` override.
pub fn parse_override(arg: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = arg
        .split_once('=')
        .ok_or(ConfigError::Syntax { line: 0 })?;
    let k = k.trim();
    if !KEYS.contains(&k) {
        return Err(ConfigError::UnknownKey(k.to_string()));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

impl fmt::Display for TrackerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lambda = {:?}", self.lambda)?;
        writeln!(f, "theta_feat = {:?}", self.theta_feat)?;
        writeln!(f, "theta_pos = {:?}", self.theta_pos)?;
        if let Some(d) = self.delta_pos {
            writeln!(f, "delta_pos = {d:?}")?;
        }
        writeln!(f, "rho = {:?}", self.rho)?;
        writeln!(f, "alpha_proj = {:?}", self.alpha_proj)?;
        writeln!(f, "ema_gamma = {:?}", self.ema_gamma)?;
        writeln!(f, "beta_decay = {:?}", self.beta_decay)?;
        writeln!(f, "patience = {}", self.patience)?;
        writeln!(f, "memory = {}", self.memory)?;
        writeln!(f, "iou_bias = {:?}", self.iou_bias)?;
        writeln!(f, "enable_decay = {}", self.enable_decay)?;
        writeln!(f, "enable_prematch = {}", self.enable_prematch)?;
        writeln!(f, "enable_prune = {}", self.enable_prune)?;
        writeln!(f, "min_confidence = {:?}", self.min_confidence)?;
        writeln!(f, "lost_position_term = {}", self.lost_position_term)
    }
}
