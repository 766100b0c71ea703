use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which subject-level features feed the Deep & Cross branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Demographics {
    /// graph signals only
    Off,
    /// sex embedding and age
    AgeSex,
    /// sex, age, MMSE and CDR
    Full,
}

impl Demographics {
    pub const ALL: [Demographics; 3] = [Demographics::Off, Demographics::AgeSex, Demographics::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Demographics::Off => "off",
            Demographics::AgeSex => "age_sex",
            Demographics::Full => "full",
        }
    }

    pub fn dense_features(self) -> usize {
        match self {
            Demographics::Off => 0,
            Demographics::AgeSex => 1,
            Demographics::Full => 3,
        }
    }
}

impl fmt::Display for Demographics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Demographics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Demographics::Off),
            "age_sex" => Ok(Demographics::AgeSex),
            "full" => Ok(Demographics::Full),
            other => Err(Error::invalid(format!(
                "demographics must be off, age_sex or full (got {other:?})"
            ))),
        }
    }
}

/// Hyperparameters of one model and of the rotation driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub epochs: usize,
    pub lr: f64,
    pub beta: f64,
    pub spline_degree: usize,
    pub spline_knots: Vec<f64>,
    pub cheb_order: usize,
    pub cheb_layers: usize,
    pub cheb_hidden: usize,
    pub sex_levels: usize,
    pub sex_embed: usize,
    pub cross_layers: usize,
    pub deep_layers: usize,
    pub deep_hidden: usize,
    pub dcn_out: usize,
    pub vc_hidden: usize,
    pub grid_b: usize,
    pub demographics: Demographics,
    pub seed: u64,
    pub test_fraction: f64,
    pub repeats: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            epochs: 600,
            lr: 1e-4,
            beta: 0.5,
            spline_degree: 2,
            spline_knots: vec![1.0 / 3.0, 2.0 / 3.0],
            cheb_order: 3,
            cheb_layers: 2,
            cheb_hidden: 32,
            sex_levels: 2,
            sex_embed: 4,
            cross_layers: 2,
            deep_layers: 2,
            deep_hidden: 32,
            dcn_out: 16,
            vc_hidden: 16,
            grid_b: 10,
            demographics: Demographics::Full,
            seed: 0,
            test_fraction: 0.3,
            repeats: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value for {key}: {value:?}")))
}

impl Config {
    /// Reads `key = value` lines; `#` starts a comment. Keys not listed
    /// keep their defaults, unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!(
                    "config line {}: expected key = value",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "spline_degree" => self.spline_degree = parse(key, value)?,
            "spline_knots" => {
                self.spline_knots = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "cheb_order" => self.cheb_order = parse(key, value)?,
            "cheb_layers" => self.cheb_layers = parse(key, value)?,
            "cheb_hidden" => self.cheb_hidden = parse(key, value)?,
            "sex_levels" => self.sex_levels = parse(key, value)?,
            "sex_embed" => self.sex_embed = parse(key, value)?,
            "cross_layers" => self.cross_layers = parse(key, value)?,
            "deep_layers" => self.deep_layers = parse(key, value)?,
            "deep_hidden" => self.deep_hidden = parse(key, value)?,
            "dcn_out" => self.dcn_out = parse(key, value)?,
            "vc_hidden" => self.vc_hidden = parse(key, value)?,
            "grid_B" | "grid_b" => self.grid_b = parse(key, value)?,
            "demographics" => self.demographics = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cheb_order", self.cheb_order),
            ("cheb_layers", self.cheb_layers),
            ("cheb_hidden", self.cheb_hidden),
            ("sex_levels", self.sex_levels),
            ("sex_embed", self.sex_embed),
            ("deep_layers", self.deep_layers),
            ("deep_hidden", self.deep_hidden),
            ("dcn_out", self.dcn_out),
            ("vc_hidden", self.vc_hidden),
            ("repeats", self.repeats),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.grid_b < 2 {
            return Err(Error::invalid("grid_B must be at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        crate::vchead::SplineBasis::clamped(self.spline_degree, &self.spline_knots)?;
        Ok(())
    }

    /// Inverse of [`Config::parse`].
    pub fn to_text(&self) -> String {
        let knots: Vec<String> = self.spline_knots.iter().map(|k| k.to_string()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("beta", self.beta.to_string()),
            ("spline_degree", self.spline_degree.to_string()),
            ("spline_knots", knots.join(",")),
            ("cheb_order", self.cheb_order.to_string()),
            ("cheb_layers", self.cheb_layers.to_string()),
            ("cheb_hidden", self.cheb_hidden.to_string()),
            ("sex_levels", self.sex_levels.to_string()),
            ("sex_embed", self.sex_embed.to_string()),
            ("cross_layers", self.cross_layers.to_string()),
            ("deep_layers", self.deep_layers.to_string()),
            ("deep_hidden", self.deep_hidden.to_string()),
            ("dcn_out", self.dcn_out.to_string()),
            ("vc_hidden", self.vc_hidden.to_string()),
            ("grid_B", self.grid_b.to_string()),
            ("demographics", self.demographics.to_string()),
            ("seed", self.seed.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("repeats", self.repeats.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
