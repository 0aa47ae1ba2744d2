use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binary::read_file;
use crate::error::{Error, Result};
use crate::grid::ScaleSchedule;
use crate::predictor::PrototypeParams;
use crate::sampler::GenerationConfig;
use crate::schedule::{AnnealSchedule, AnnealTarget, AnnealVariant, CfgSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Anneal,
    ScaleTravel,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Anneal, Method::ScaleTravel];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Anneal => "anneal",
            Method::ScaleTravel => "scale_travel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (baseline | anneal | scale_travel)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub conditions: usize,
    pub prototypes: usize,
    pub height: usize,
    pub width: usize,
    pub cond_dim: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            conditions: 8,
            prototypes: 4,
            height: 16,
            width: 16,
            cond_dim: 8,
        }
    }
}

/// Sampling settings shared by all methods; each method switches on the parts
/// it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationDefaults {
    pub cfg: CfgSchedule,
    pub tau: f64,
    pub top_p: f64,
    pub text_anneal: Option<AnnealSchedule>,
    pub sos_anneal: Option<AnnealSchedule>,
    /// `(l, m)`: anneal through stage `l`, travel back to `m`.
    pub scale_travel: (usize, usize),
    pub refine_guidance: f64,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        Self {
            cfg: CfgSchedule::fixed(2.0),
            tau: 1.0,
            top_p: 1.0,
            text_anneal: Some(
                AnnealSchedule::new(AnnealVariant::Cosine, 1.0, 3, AnnealTarget::TextEmbedding).expect("valid"),
            ),
            sos_anneal: None,
            scale_travel: (5, 2),
            refine_guidance: 2.0,
        }
    }
}

/// Values of each sweep axis; the sweep runs their cartesian product for
/// every method. Empty `omega`/`tau`/`top_p` fall back to the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub sigma: Vec<f64>,
    pub k_max: Vec<usize>,
    pub m: Vec<usize>,
    pub omega: Vec<f64>,
    pub tau: Vec<f64>,
    pub top_p: Vec<f64>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            sigma: vec![0.5, 1.0],
            k_max: vec![2, 3],
            m: vec![2, 3],
            omega: Vec::new(),
            tau: Vec::new(),
            top_p: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self { epochs: 30, lr: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub corpus: CorpusSpec,
    pub scales: Vec<(usize, usize)>,
    pub codebook_size: usize,
    pub codebook_iters: usize,
    pub model: PrototypeParams,
    pub methods: Vec<Method>,
    pub seeds: usize,
    pub generation: GenerationDefaults,
    pub sweep: SweepAxes,
    pub train: TrainSpec,
    pub seed: u64,
    /// Thread count; never affects results.
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: 16x16 images, seven scales, `l = 5`, `m = 2`,
    /// cosine text annealing with `k_max = 3`.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            corpus: CorpusSpec::default(),
            scales: ScaleSchedule::desk().scales().to_vec(),
            codebook_size: 256,
            codebook_iters: 20,
            model: PrototypeParams::default(),
            methods: Method::ALL.to_vec(),
            seeds: 10,
            generation: GenerationDefaults::default(),
            sweep: SweepAxes::default(),
            train: TrainSpec::default(),
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
        }
    }

    /// Thirteen scales up to 64x64, CFG 2, cosine annealing `σ = 1`,
    /// `k_max = 4`, travel from scale 8 to 3.
    pub fn paper_infinity() -> Self {
        let mut c = Self::desk();
        c.preset = "paper-infinity".into();
        c.corpus.height = 64;
        c.corpus.width = 64;
        c.scales = [1, 2, 4, 6, 8, 12, 16, 20, 24, 32, 40, 48, 64].iter().map(|&s| (s, s)).collect();
        c.generation.cfg = CfgSchedule::fixed(2.0);
        c.generation.text_anneal =
            Some(AnnealSchedule::new(AnnealVariant::Cosine, 1.0, 4, AnnealTarget::TextEmbedding).expect("valid"));
        c.generation.scale_travel = (8, 3);
        c.sweep.k_max = vec![2, 3, 4, 5, 6];
        c.sweep.m = vec![2, 3, 4];
        c
    }

    /// Ten scales up to 16x16, CFG 6, cosine annealing `σ = 1`, `k_max = 6`,
    /// travel from scale 8 to 4.
    pub fn paper_switti() -> Self {
        let mut c = Self::desk();
        c.preset = "paper-switti".into();
        c.scales = [1, 2, 3, 4, 5, 6, 8, 10, 13, 16].iter().map(|&s| (s, s)).collect();
        c.generation.cfg = CfgSchedule::fixed(6.0);
        c.generation.text_anneal =
            Some(AnnealSchedule::new(AnnealVariant::Cosine, 1.0, 6, AnnealTarget::TextEmbedding).expect("valid"));
        c.generation.scale_travel = (8, 4);
        c.sweep.k_max = vec![2, 3, 4, 5, 6];
        c.sweep.m = vec![2, 3, 4];
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-infinity" => Ok(Self::paper_infinity()),
            "paper-switti" => Ok(Self::paper_switti()),
            _ => Err(Error::Config(format!(
                "unknown preset {name:?} (desk | paper-infinity | paper-switti)"
            ))),
        }
    }

    /// Reads a JSON config. Fields left out take the values of the preset the
    /// file names (desk when it names none).
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path, "pass an existing --config file or omit the flag")?;
        let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", path.display()));
        let raw: serde_json::Value = serde_json::from_slice(&bytes).map_err(bad)?;
        let preset = raw.get("preset").and_then(|v| v.as_str()).unwrap_or("desk");
        let mut base = serde_json::to_value(Self::preset(preset)?).expect("config serializes");
        merge(&mut base, raw);
        let cfg: Self = serde_json::from_value(base).map_err(bad)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<ScaleSchedule> {
        ScaleSchedule::new(self.scales.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let schedule = self.schedule()?;
        if schedule.full() != (self.corpus.height, self.corpus.width) {
            return bad(format!(
                "last scale {:?} must equal the image size {}x{}",
                schedule.full(),
                self.corpus.height,
                self.corpus.width
            ));
        }
        if self.corpus.conditions == 0 || self.corpus.prototypes < 2 {
            return bad("the corpus needs C >= 1 conditions and P >= 2 prototypes".into());
        }
        if self.corpus.cond_dim == 0 {
            return bad("cond_dim must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("the method list is empty".into());
        }
        if self.seeds < 2 {
            return bad("diversity metrics need seeds >= 2".into());
        }
        if self.codebook_size == 0 {
            return bad("codebook_size must be positive".into());
        }
        let k = schedule.len();
        let (l, m) = self.generation.scale_travel;
        if !(1 <= m && m < l && l <= k) {
            return bad(format!("scale_travel needs 1 <= m < l <= K={k}, got l={l}, m={m}"));
        }
        if self.sweep.m.iter().any(|&mm| mm == 0 || mm >= l) {
            return bad(format!("sweep m values must lie in [1, {l})"));
        }
        if self.sweep.sigma.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return bad("sweep sigma values must lie in [0, 1]".into());
        }
        if self.sweep.k_max.iter().any(|&t| t < 2) {
            return bad("sweep k_max values must be >= 2".into());
        }
        for m in &self.methods {
            self.generation_config(*m, 0)?.validate()?;
        }
        Ok(())
    }

    /// Generation settings of `method` with the default (non-swept) values.
    pub fn generation_config(&self, method: Method, seed: u64) -> Result<GenerationConfig> {
        let g = &self.generation;
        let mut c = GenerationConfig::new(g.cfg, self.scales.len());
        c.tau = g.tau;
        c.top_p = g.top_p;
        c.seed = seed;
        c.refine_guidance = g.refine_guidance;
        if method != Method::Baseline {
            c.text_anneal = g.text_anneal;
            c.sos_anneal = g.sos_anneal;
        }
        if method == Method::ScaleTravel {
            c.scale_travel = Some(g.scale_travel);
        }
        Ok(c)
    }

    /// SHA-256 of the canonical JSON of everything that affects results.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("workers");
            o.remove("out");
        }
        digest_value(&v)
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Shortest `%.12g` rendering, as C's printf would produce.
pub fn format_g12(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-4..12).contains(&exp) {
        let m = trim(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim(format!("{x:.*}", (11 - exp) as usize))
    }
}

/// JSON with sorted keys, no whitespace and `%.12g` floats.
pub fn canonical_json(v: &serde_json::Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &serde_json::Value, out: &mut String) {
    use serde_json::Value;
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else {
                out.push_str(&format_g12(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        Value::Object(o) => {
            let mut keys: Vec<&String> = o.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push(':');
                write_canonical(&o[k], out);
            }
            out.push('}');
        }
    }
}

pub fn digest_value(v: &serde_json::Value) -> String {
    let hash = Sha256::digest(canonical_json(v).as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
