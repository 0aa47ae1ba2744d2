//! Per-stage guidance weights `ω(k)` and condition-annealing levels `α(k)`/`β(k)`.
//!
//! Stages are 1-based. Both schedule types parse from and print to compact
//! config strings:
//!
//! ```text
//! interp:cosine:w1=0:wK=3:kmax=5
//! piecewise:constant:w1=0:wK=2:kmin=1:kmax=4
//! cosine:sigma=1:kmax=4:target=text
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CfgVariant {
    /// Piecewise constant, `ω_1` inside `[k_min, k_max]`, `ω_K` outside.
    Constant,
    /// Piecewise constant with the weights swapped (`ω_1 = C`, `ω_K = 0`).
    ConstantInverse,
    Cosine,
    CosineInverse,
    Linear,
    LinearInverse,
    /// Interpolation with `γ = 0.5`.
    InterpConstant,
}

impl CfgVariant {
    pub const ALL: [CfgVariant; 7] = [
        CfgVariant::Constant,
        CfgVariant::ConstantInverse,
        CfgVariant::Cosine,
        CfgVariant::CosineInverse,
        CfgVariant::Linear,
        CfgVariant::LinearInverse,
        CfgVariant::InterpConstant,
    ];

    pub fn is_piecewise(self) -> bool {
        matches!(self, CfgVariant::Constant | CfgVariant::ConstantInverse)
    }

    fn name(self) -> &'static str {
        match self {
            CfgVariant::Constant => "constant",
            CfgVariant::ConstantInverse => "constant_inverse",
            CfgVariant::Cosine => "cosine",
            CfgVariant::CosineInverse => "cosine_inverse",
            CfgVariant::Linear => "linear",
            CfgVariant::LinearInverse => "linear_inverse",
            CfgVariant::InterpConstant => "constant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CfgSchedule {
    pub variant: CfgVariant,
    pub w1: f64,
    pub wk: f64,
    pub k_min: usize,
    pub k_max: usize,
}

impl CfgSchedule {
    /// Constant guidance `ω` at every stage.
    pub fn fixed(w: f64) -> Self {
        Self {
            variant: CfgVariant::Constant,
            w1: w,
            wk: w,
            k_min: 1,
            k_max: 1,
        }
    }

    /// Piecewise "Constant": guidance off inside `[k_min, k_max]`, `c` after.
    pub fn piecewise(c: f64, k_min: usize, k_max: usize) -> Self {
        Self {
            variant: CfgVariant::Constant,
            w1: 0.0,
            wk: c,
            k_min,
            k_max,
        }
    }

    /// Piecewise "Constant (Inverse)": `c` inside `[k_min, k_max]`, off after.
    pub fn piecewise_inverse(c: f64, k_min: usize, k_max: usize) -> Self {
        Self {
            variant: CfgVariant::ConstantInverse,
            w1: c,
            wk: 0.0,
            k_min,
            k_max,
        }
    }

    pub fn interpolation(variant: CfgVariant, w1: f64, wk: f64, k_max: usize) -> Self {
        Self {
            variant,
            w1,
            wk,
            k_min: 1,
            k_max,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.w1.is_finite() || !self.wk.is_finite() {
            return Err(Error::Config("guidance weights must be finite".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "need 1 <= k_min <= k_max, got k_min={} k_max={}",
                self.k_min, self.k_max
            )));
        }
        if !self.variant.is_piecewise() && self.k_max == 1 {
            return Err(Error::Config(
                "interpolation schedules need k_max >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Interpolation coefficient `γ(k)`; `None` for piecewise variants.
    pub fn gamma(&self, k: usize) -> Option<f64> {
        let ramp = |k: usize| {
            if k >= self.k_max {
                1.0
            } else {
                (k - 1) as f64 / (self.k_max - 1) as f64
            }
        };
        let cos_ramp = |k: usize| {
            if k >= self.k_max {
                1.0
            } else {
                1.0 - 0.5 * ((PI * (k - 1) as f64 / (self.k_max - 1) as f64).cos() + 1.0)
            }
        };
        match self.variant {
            CfgVariant::Constant | CfgVariant::ConstantInverse => None,
            CfgVariant::Cosine => Some(cos_ramp(k)),
            CfgVariant::CosineInverse => Some(1.0 - cos_ramp(k)),
            CfgVariant::Linear => Some(ramp(k)),
            CfgVariant::LinearInverse => Some(1.0 - ramp(k)),
            CfgVariant::InterpConstant => Some(0.5),
        }
    }

    /// Guidance weight at stage `k` of `total` stages.
    pub fn weight(&self, k: usize, total: usize) -> Result<f64> {
        self.validate()?;
        if k == 0 || k > total {
            return Err(Error::Range(format!("stage {k} outside 1..={total}")));
        }
        if self.variant.is_piecewise() {
            return Ok(if (self.k_min..=self.k_max).contains(&k) {
                self.w1
            } else {
                self.wk
            });
        }
        let g = self.gamma(k).expect("interpolation variant");
        Ok((1.0 - g) * self.w1 + g * self.wk)
    }
}

/// Free-function form of [`CfgSchedule::weight`].
pub fn cfg_weight(s: &CfgSchedule, k: usize, total: usize) -> Result<f64> {
    s.weight(k, total)
}

impl fmt::Display for CfgSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.variant.is_piecewise() {
            write!(
                f,
                "piecewise:{}:w1={}:wK={}:kmin={}:kmax={}",
                self.variant.name(),
                self.w1,
                self.wk,
                self.k_min,
                self.k_max
            )
        } else {
            write!(
                f,
                "interp:{}:w1={}:wK={}:kmax={}",
                self.variant.name(),
                self.w1,
                self.wk,
                self.k_max
            )
        }
    }
}

fn key_values<'a>(parts: impl Iterator<Item = &'a str>) -> Result<Vec<(&'a str, &'a str)>> {
    parts
        .map(|p| {
            p.split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {p:?}")))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}={v:?}")))
}

impl FromStr for CfgSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix("cfg=").unwrap_or(s);
        let mut parts = s.split(':');
        let family = parts.next().unwrap_or_default();
        let name = parts
            .next()
            .ok_or_else(|| Error::Config(format!("cfg schedule {s:?} lacks a variant")))?;
        let variant = match (family, name) {
            ("piecewise", "constant") => CfgVariant::Constant,
            ("piecewise", "constant_inverse") => CfgVariant::ConstantInverse,
            ("interp", "cosine") => CfgVariant::Cosine,
            ("interp", "cosine_inverse") => CfgVariant::CosineInverse,
            ("interp", "linear") => CfgVariant::Linear,
            ("interp", "linear_inverse") => CfgVariant::LinearInverse,
            ("interp", "constant") => CfgVariant::InterpConstant,
            _ => return Err(Error::Config(format!("unknown cfg schedule {family}:{name}"))),
        };
        let mut out = Self {
            variant,
            w1: 0.0,
            wk: 0.0,
            k_min: 1,
            k_max: 1,
        };
        for (k, v) in key_values(parts)? {
            match k {
                "w1" => out.w1 = parse_num(k, v)?,
                "wK" | "wk" => out.wk = parse_num(k, v)?,
                "kmin" => out.k_min = parse_num(k, v)?,
                "kmax" => out.k_max = parse_num(k, v)?,
                _ => return Err(Error::Config(format!("unknown cfg key {k:?}"))),
            }
        }
        out.validate()?;
        Ok(out)
    }
}

impl TryFrom<String> for CfgSchedule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CfgSchedule> for String {
    fn from(s: CfgSchedule) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealVariant {
    Linear,
    Cosine,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealTarget {
    TextEmbedding,
    SosToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AnnealSchedule {
    pub variant: AnnealVariant,
    pub sigma: f64,
    pub k_max: usize,
    pub target: AnnealTarget,
}

impl AnnealSchedule {
    pub fn new(variant: AnnealVariant, sigma: f64, k_max: usize, target: AnnealTarget) -> Result<Self> {
        let s = Self {
            variant,
            sigma,
            k_max,
            target,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::Config(format!("sigma {} outside [0, 1]", self.sigma)));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if self.k_max == 1 && self.variant != AnnealVariant::Constant {
            return Err(Error::Config(
                "linear and cosine annealing need k_max >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Noise level at stage `k`; zero beyond `k_max`.
    pub fn level(&self, k: usize) -> Result<f64> {
        self.validate()?;
        if k == 0 {
            return Err(Error::Range("stages start at 1".into()));
        }
        if k > self.k_max {
            return Ok(0.0);
        }
        let t = if self.k_max > 1 {
            (k - 1) as f64 / (self.k_max - 1) as f64
        } else {
            0.0
        };
        Ok(match self.variant {
            AnnealVariant::Linear => self.sigma * (1.0 - t),
            AnnealVariant::Cosine => 0.5 * self.sigma * ((PI * t).cos() + 1.0),
            AnnealVariant::Constant => self.sigma,
        })
    }
}

/// Free-function form of [`AnnealSchedule::level`].
pub fn anneal_level(s: &AnnealSchedule, k: usize) -> Result<f64> {
    s.level(k)
}

impl fmt::Display for AnnealSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.variant {
            AnnealVariant::Linear => "linear",
            AnnealVariant::Cosine => "cosine",
            AnnealVariant::Constant => "constant",
        };
        let t = match self.target {
            AnnealTarget::TextEmbedding => "text",
            AnnealTarget::SosToken => "sos",
        };
        write!(f, "{v}:sigma={}:kmax={}:target={t}", self.sigma, self.k_max)
    }
}

impl FromStr for AnnealSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix("anneal=").unwrap_or(s);
        let mut parts = s.split(':');
        let variant = match parts.next().unwrap_or_default() {
            "linear" => AnnealVariant::Linear,
            "cosine" => AnnealVariant::Cosine,
            "constant" => AnnealVariant::Constant,
            other => return Err(Error::Config(format!("unknown anneal variant {other:?}"))),
        };
        let mut sigma = 1.0;
        let mut k_max = 1;
        let mut target = AnnealTarget::TextEmbedding;
        for (k, v) in key_values(parts)? {
            match k {
                "sigma" => sigma = parse_num(k, v)?,
                "kmax" => k_max = parse_num(k, v)?,
                "target" => {
                    target = match v {
                        "text" => AnnealTarget::TextEmbedding,
                        "sos" => AnnealTarget::SosToken,
                        _ => return Err(Error::Config(format!("unknown anneal target {v:?}"))),
                    }
                }
                _ => return Err(Error::Config(format!("unknown anneal key {k:?}"))),
            }
        }
        Self::new(variant, sigma, k_max, target)
    }
}

impl TryFrom<String> for AnnealSchedule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AnnealSchedule> for String {
    fn from(s: AnnealSchedule) -> String {
        s.to_string()
    }
}
