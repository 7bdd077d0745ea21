//! Session configuration: which denoising steps and layers are active.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Inclusive range of denoising steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRange {
    pub lo: u32,
    pub hi: u32,
}

impl StepRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, t: u32) -> bool {
        self.lo <= t && t <= self.hi
    }
}

impl fmt::Display for StepRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}

impl FromStr for StepRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("expected 'lo,hi', got {s:?}")))?;
        Ok(Self::new(parse_u32(lo)?, parse_u32(hi)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub total_steps: u32,
    /// Steps at which matching, rearrangement and injection run.
    pub inject_t_range: StepRange,
    /// Up-block layers at which matching runs. An empty set disables injection.
    pub inject_layers: BTreeSet<u32>,
    pub adain_t_range: StepRange,
    /// Step and layer whose correspondence is exported as the dense matching result.
    pub readout_t: u32,
    pub readout_layer: u32,
    /// Guard for zero norms and zero variances.
    pub epsilon: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            total_steps: 100,
            inject_t_range: StepRange::new(42, 100),
            inject_layers: BTreeSet::from([2, 3]),
            adain_t_range: StepRange::new(82, 100),
            readout_t: 92,
            readout_layer: 2,
            epsilon: 1e-8,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be positive".into()));
        }
        for (name, r) in [
            ("inject_t_range", self.inject_t_range),
            ("adain_t_range", self.adain_t_range),
        ] {
            if r.lo > r.hi {
                return Err(Error::InvalidConfig(format!("{name} has lo > hi ({r})")));
            }
            if r.lo < 1 || r.hi > self.total_steps {
                return Err(Error::InvalidConfig(format!(
                    "{name} ({r}) outside [1, {}]",
                    self.total_steps
                )));
            }
        }
        if self.readout_t < 1 || self.readout_t > self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "readout_t {} outside [1, {}]",
                self.readout_t, self.total_steps
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn injection_active(&self, t: u32, layer: u32) -> bool {
        self.inject_t_range.contains(t) && self.inject_layers.contains(&layer)
    }

    pub fn adain_active(&self, t: u32) -> bool {
        self.adain_t_range.contains(t)
    }

    pub fn is_readout(&self, t: u32, layer: u32) -> bool {
        t == self.readout_t && layer == self.readout_layer
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored;
    /// missing keys keep their defaults. Ranges are written `lo,hi` and the
    /// layer set as a comma-separated list.
    pub fn parse_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let value = value.trim();
            match key.trim() {
                "total_steps" => cfg.total_steps = parse_u32(value)?,
                "inject_t_range" => cfg.inject_t_range = value.parse()?,
                "inject_layers" => {
                    cfg.inject_layers = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(parse_u32)
                        .collect::<Result<_>>()?
                }
                "adain_t_range" => cfg.adain_t_range = value.parse()?,
                "readout_t" => cfg.readout_t = parse_u32(value)?,
                "readout_layer" => cfg.readout_layer = parse_u32(value)?,
                "epsilon" => {
                    cfg.epsilon = value
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad epsilon {value:?}")))?
                }
                other => return Err(Error::Parse(format!("line {}: unknown key {other:?}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        let layers: Vec<String> = self.inject_layers.iter().map(u32::to_string).collect();
        format!(
            "total_steps={}\ninject_t_range={}\ninject_layers={}\nadain_t_range={}\nreadout_t={}\nreadout_layer={}\nepsilon={:e}\n",
            self.total_steps,
            self.inject_t_range,
            layers.join(","),
            self.adain_t_range,
            self.readout_t,
            self.readout_layer,
            self.epsilon
        )
    }
}

fn parse_u32(s: &str) -> Result<u32> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("expected unsigned integer, got {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = SessionConfig::default();
        cfg.validate().unwrap();
        assert!(cfg.injection_active(42, 2));
        assert!(cfg.injection_active(100, 3));
        assert!(!cfg.injection_active(41, 2));
        assert!(!cfg.injection_active(50, 1));
        assert!(cfg.adain_active(82));
        assert!(!cfg.adain_active(81));
        assert!(cfg.is_readout(92, 2));
    }

    #[test]
    fn inverted_range_rejected() {
        let cfg = SessionConfig {
            inject_t_range: StepRange::new(200, 10),
            ..SessionConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn out_of_bounds_and_epsilon_rejected() {
        let cfg = SessionConfig {
            adain_t_range: StepRange::new(0, 10),
            ..SessionConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SessionConfig {
            epsilon: 0.0,
            ..SessionConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn key_value_roundtrip() {
        let cfg = SessionConfig {
            inject_layers: BTreeSet::from([1, 2, 3]),
            readout_t: 60,
            epsilon: 1e-6,
            ..SessionConfig::default()
        };
        let parsed = SessionConfig::parse_key_values(&cfg.to_key_values()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn key_value_partial_and_comments() {
        let cfg = SessionConfig::parse_key_values("# ablation\nreadout_t = 70\n\ninject_layers=\n").unwrap();
        assert_eq!(cfg.readout_t, 70);
        assert!(cfg.inject_layers.is_empty());
        assert_eq!(cfg.inject_t_range, StepRange::new(42, 100));
        assert!(SessionConfig::parse_key_values("bogus=1").is_err());
        assert!(SessionConfig::parse_key_values("inject_t_range=90,50").is_err());
    }
}
