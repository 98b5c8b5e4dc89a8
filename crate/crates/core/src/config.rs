//! Pipeline configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::DescriptorParams;
use crate::foldover::StepSizes;
use crate::segmentation::Polarity;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Threshold {
    Otsu,
    Fixed(u8),
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Threshold::Otsu => f.write_str("otsu"),
            Threshold::Fixed(t) => write!(f, "fixed:{t}"),
        }
    }
}

impl FromStr for Threshold {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "otsu" {
            return Ok(Threshold::Otsu);
        }
        let t = s.strip_prefix("fixed:").ok_or("expected `otsu` or `fixed:T`")?;
        t.trim()
            .parse::<u8>()
            .map(Threshold::Fixed)
            .map_err(|_| "threshold must be in 0..=255".to_string())
    }
}

/// Every tunable of the pipeline, defaulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub threshold: Threshold,
    pub polarity: Polarity,
    pub min_area: usize,
    pub gate: f64,
    pub miss_tolerance: usize,
    /// Lock radius around each barycenter.
    pub r: f64,
    pub nu_x: u32,
    pub nu_y: u32,
    pub nu_z: u32,
    pub e: usize,
    pub passes: usize,
    pub d: usize,
    pub um_per_px: f64,
    /// Overrides the source frame rate when set.
    pub fps: Option<f64>,
    /// Start-to-end displacement below which a foldover is not rotated.
    pub min_displacement: f64,
    /// Shortest track that gets a foldover and features.
    pub min_track_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: Threshold::Otsu,
            polarity: Polarity::BrightObject,
            min_area: 4,
            gate: 20.0,
            miss_tolerance: 0,
            r: 13.0,
            nu_x: 1,
            nu_y: 1,
            nu_z: 1,
            e: 3,
            passes: 2,
            d: 16,
            um_per_px: 1.0,
            fps: None,
            min_displacement: 1.0,
            min_track_len: 3,
        }
    }
}

/// Config keys with their value types, in echo order.
pub const SCHEMA: &[(&str, &str)] = &[
    ("threshold", "otsu|fixed:u8"),
    ("polarity", "bright-object|dark-object"),
    ("min_area", "usize>=1"),
    ("gate", "f64>0"),
    ("miss_tolerance", "usize"),
    ("r", "f64>0"),
    ("nu_x", "u32>=1"),
    ("nu_y", "u32>=1"),
    ("nu_z", "u32>=1"),
    ("e", "odd usize>=3"),
    ("passes", "usize>=1"),
    ("d", "usize>=1"),
    ("um_per_px", "f64>0"),
    ("fps", "auto|f64>0"),
    ("min_displacement", "f64>=0"),
    ("min_track_len", "usize>=1"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse::<T>().map_err(|_| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: "not a number".into(),
    })
}

impl PipelineConfig {
    pub fn steps(&self) -> StepSizes {
        StepSizes {
            x: self.nu_x,
            y: self.nu_y,
            z: self.nu_z,
        }
    }

    pub fn descriptor(&self) -> DescriptorParams {
        DescriptorParams {
            kernel: self.e,
            passes: self.passes,
            side: self.d,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = |reason: &str| ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
            reason: reason.into(),
        };
        match key {
            "threshold" => self.threshold = value.parse().map_err(|e: String| invalid(&e))?,
            "polarity" => {
                self.polarity = match value.trim() {
                    "bright-object" | "bright" => Polarity::BrightObject,
                    "dark-object" | "dark" => Polarity::DarkObject,
                    _ => return Err(invalid("expected bright-object or dark-object")),
                }
            }
            "min_area" => self.min_area = parse(key, value)?,
            "gate" => self.gate = parse(key, value)?,
            "miss_tolerance" => self.miss_tolerance = parse(key, value)?,
            "r" => self.r = parse(key, value)?,
            "nu_x" => self.nu_x = parse(key, value)?,
            "nu_y" => self.nu_y = parse(key, value)?,
            "nu_z" => self.nu_z = parse(key, value)?,
            "e" => self.e = parse(key, value)?,
            "passes" => self.passes = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "um_per_px" => self.um_per_px = parse(key, value)?,
            "fps" => {
                self.fps = match value.trim() {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "min_displacement" => self.min_displacement = parse(key, value)?,
            "min_track_len" => self.min_track_len = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Checks every field against its declared range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, value: String, reason: &str| {
            Err(ConfigError::InvalidValue {
                key: key.into(),
                value,
                reason: reason.into(),
            })
        };
        if self.min_area < 1 {
            return fail("min_area", self.min_area.to_string(), "must be >= 1");
        }
        if !(self.gate > 0.0 && self.gate.is_finite()) {
            return fail("gate", self.gate.to_string(), "must be > 0");
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return fail("r", self.r.to_string(), "must be > 0");
        }
        for (k, v) in [("nu_x", self.nu_x), ("nu_y", self.nu_y), ("nu_z", self.nu_z)] {
            if v < 1 {
                return fail(k, v.to_string(), "must be >= 1");
            }
        }
        if self.e < 3 || self.e % 2 == 0 {
            return fail("e", self.e.to_string(), "must be odd and >= 3");
        }
        if self.passes < 1 {
            return fail("passes", self.passes.to_string(), "must be >= 1");
        }
        if self.d < 1 {
            return fail("d", self.d.to_string(), "must be >= 1");
        }
        if !(self.um_per_px > 0.0 && self.um_per_px.is_finite()) {
            return fail("um_per_px", self.um_per_px.to_string(), "must be > 0");
        }
        if let Some(fps) = self.fps {
            if !(fps > 0.0 && fps.is_finite()) {
                return fail("fps", fps.to_string(), "must be > 0");
            }
        }
        if !(self.min_displacement >= 0.0) {
            return fail("min_displacement", self.min_displacement.to_string(), "must be >= 0");
        }
        if self.min_track_len < 1 {
            return fail("min_track_len", self.min_track_len.to_string(), "must be >= 1");
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(n + 1))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Effective config in `key = value` form, schema order.
    pub fn to_text(&self) -> String {
        let polarity = match self.polarity {
            Polarity::BrightObject => "bright-object",
            Polarity::DarkObject => "dark-object",
        };
        let fps = self.fps.map_or("auto".to_string(), |f| f.to_string());
        let values = [
            self.threshold.to_string(),
            polarity.to_string(),
            self.min_area.to_string(),
            self.gate.to_string(),
            self.miss_tolerance.to_string(),
            self.r.to_string(),
            self.nu_x.to_string(),
            self.nu_y.to_string(),
            self.nu_z.to_string(),
            self.e.to_string(),
            self.passes.to_string(),
            self.d.to_string(),
            self.um_per_px.to_string(),
            fps,
            self.min_displacement.to_string(),
            self.min_track_len.to_string(),
        ];
        let mut out = String::new();
        for ((key, _), value) in SCHEMA.iter().zip(values) {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
