//! JSON experiment configuration.

use std::fmt;

use brw_core::models::OffspringLaw;
use brw_core::mogulskii::{ArraySpec, CorridorShape};
use brw_core::simulate::Coordinate;
use serde::{Deserialize, Deserializer};

/// Escape cap: a population threshold, or `inf` for none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EscapeCap(pub Option<usize>);

/// Default population threshold for the escape rule.
pub const DEFAULT_ESCAPE_CAP: usize = 10_000;

impl Default for EscapeCap {
    fn default() -> Self {
        EscapeCap(Some(DEFAULT_ESCAPE_CAP))
    }
}

impl fmt::Display for EscapeCap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(c) => write!(f, "{c}"),
            None => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for EscapeCap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "none" => Ok(EscapeCap(None)),
            other => match other.parse::<usize>() {
                Ok(0) => Err("escape cap must be at least 1".into()),
                Ok(c) => Ok(EscapeCap(Some(c))),
                Err(_) => Err(format!("escape cap `{other}` is neither a positive integer nor `inf`")),
            },
        }
    }
}

impl<'de> Deserialize<'de> for EscapeCap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(c) => c.to_string().parse().map_err(serde::de::Error::custom),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn default_coordinate() -> Coordinate {
    Coordinate::VUpper
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalConfig {
    #[serde(default = "default_coordinate")]
    pub coordinate: Coordinate,
    pub slopes: Vec<f64>,
    pub n: Vec<usize>,
    pub replicates: usize,
    /// Add exact rows when the law lives on the integers.
    #[serde(default = "default_true")]
    pub oracle: bool,
}

fn default_n_max() -> usize {
    1 << 15
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PemantleConfig {
    pub eps_u: Vec<f64>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

/// Endpoint window: a width, or `"default"` for `(g₂(1) − g₁(1)) / 4`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum EndpointB {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MogulskiiConfig {
    pub array: ArraySpec,
    pub corridor: CorridorShape,
    /// Diffusion scale; defaults to the family's limiting standard deviation.
    pub sigma: Option<f64>,
    pub n: Vec<usize>,
    pub endpoint_b: Option<EndpointB>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeSweepConfig {
    pub slope: f64,
    #[serde(default = "default_coordinate")]
    pub coordinate: Coordinate,
    pub n: usize,
    pub replicates: usize,
    pub caps: Vec<EscapeCap>,
}

/// Top-level experiment file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub law: OffspringLaw,
    pub seed: Option<u64>,
    #[serde(default)]
    pub escape_cap: EscapeCap,
    pub budget_ms: Option<u64>,
    pub survival: Option<SurvivalConfig>,
    pub pemantle: Option<PemantleConfig>,
    pub mogulskii: Option<MogulskiiConfig>,
    pub escape_sweep: Option<EscapeSweepConfig>,
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}
