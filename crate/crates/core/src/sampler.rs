//! The next-scale generation loop with condition annealing, and the
//! diversify-then-refine pipeline built on scale-travel.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{accumulate_canvas, dequantize, scale_travel, TokenPyramid};
use crate::error::{Error, Result};
use crate::grid::{gaussian, mix_ids, FeatureGrid, RngStream};
use crate::image::Image;
use crate::predictor::{cfg_combine, sample_tokens, ConditionEmbedding, Predictor, SosToken};
use crate::schedule::{AnnealSchedule, AnnealTarget, CfgSchedule};

/// `ĉ = √(1-α) c + √α ε`; null conditions pass through.
pub fn anneal_condition(c: &ConditionEmbedding, alpha: f64, rng: RngStream) -> Result<ConditionEmbedding> {
    check_level(alpha)?;
    if c.is_null() || alpha == 0.0 {
        return Ok(c.clone());
    }
    let eps = gaussian(&[c.dim()], rng)?;
    c.with_values(mix(c.values(), &eps, alpha))
}

/// `ŝ = √(1-β) s + √β ε`.
pub fn anneal_sos(s: &SosToken, beta: f64, rng: RngStream) -> Result<SosToken> {
    check_level(beta)?;
    if beta == 0.0 || s.values().is_empty() {
        return Ok(s.clone());
    }
    let eps = gaussian(&[s.values().len()], rng)?;
    SosToken::new(mix(s.values(), &eps, beta))
}

fn check_level(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Range(format!("annealing level {a} outside [0, 1]")));
    }
    Ok(())
}

fn mix(x: &[f64], eps: &[f64], a: f64) -> Vec<f64> {
    let (keep, noise) = ((1.0 - a).sqrt(), a.sqrt());
    x.iter().zip(eps).map(|(x, e)| keep * x + noise * e).collect()
}

fn default_tau() -> f64 {
    1.0
}

fn default_top_p() -> f64 {
    1.0
}

fn default_refine_guidance() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub cfg: CfgSchedule,
    #[serde(default)]
    pub text_anneal: Option<AnnealSchedule>,
    #[serde(default)]
    pub sos_anneal: Option<AnnealSchedule>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default)]
    pub seed: u64,
    /// `(l, m)`: travel from stage `l` back to stage `m`.
    #[serde(default)]
    pub scale_travel: Option<(usize, usize)>,
    /// Number of stages `K`.
    pub stages: usize,
    /// Constant guidance weight used while refining.
    #[serde(default = "default_refine_guidance")]
    pub refine_guidance: f64,
    /// Skip the unconditional branch at stages where `ω(k) = 0`.
    #[serde(default)]
    pub skip_unguided_null: bool,
}

impl GenerationConfig {
    pub fn new(cfg: CfgSchedule, stages: usize) -> Self {
        Self {
            cfg,
            text_anneal: None,
            sos_anneal: None,
            tau: default_tau(),
            top_p: default_top_p(),
            seed: 0,
            scale_travel: None,
            stages,
            refine_guidance: default_refine_guidance(),
            skip_unguided_null: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("need at least one stage".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if let Some((l, m)) = self.scale_travel {
            if !(1 <= m && m < l && l <= self.stages) {
                return Err(Error::Config(format!(
                    "scale travel needs 1 <= m < l <= K, got l={l} m={m} K={}",
                    self.stages
                )));
            }
        }
        if self.text_anneal.is_some_and(|a| a.target != AnnealTarget::TextEmbedding)
            || self.sos_anneal.is_some_and(|a| a.target != AnnealTarget::SosToken)
        {
            return Err(Error::Config("annealing schedule target does not match its slot".into()));
        }
        if !self.refine_guidance.is_finite() {
            return Err(Error::Config("refine guidance must be finite".into()));
        }
        self.cfg.weight(1, self.stages)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Plain or annealed generation (stage A of refinement).
    Generate,
    /// The re-encoded prefix.
    Travel,
    /// Clean regeneration after travel.
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sampled,
    ScaleTravel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub phase: Phase,
    pub provenance: Provenance,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub prototype: Option<usize>,
    pub wall_ns: u64,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub pyramid: TokenPyramid,
    pub canvas: FeatureGrid,
    pub image: Image,
    /// Stage records in execution order; refinement records stage A first.
    pub trace: Vec<StageRecord>,
    /// `Z_l` before travel, when refinement ran.
    pub travel_source: Option<FeatureGrid>,
}

impl GenerationResult {
    /// Records that produced the returned pyramid, one per stage.
    pub fn final_records(&self) -> Vec<&StageRecord> {
        let k = self.pyramid.len();
        (1..=k)
            .map(|s| {
                self.trace
                    .iter()
                    .rev()
                    .find(|r| r.stage == s)
                    .expect("every stage has a record")
            })
            .collect()
    }
}

const ROLE_COND: u64 = 1;
const ROLE_SOS: u64 = 2;
const ROLE_TOKENS: u64 = 3;
const REFINE_ROLES: u64 = 16;

fn stream(cond: &ConditionEmbedding, seed: u64, stage: usize, role: u64) -> RngStream {
    RngStream::new(seed, mix_ids(&[cond.condition_id(), seed, stage as u64, role]))
}

struct Run<'a, M: Predictor + ?Sized> {
    model: &'a M,
    cond: &'a ConditionEmbedding,
    null: ConditionEmbedding,
    sos: SosToken,
    null_sos: SosToken,
    config: &'a GenerationConfig,
}

impl<M: Predictor + ?Sized> Run<'_, M> {
    /// Samples stages `from..=to` on top of `pyramid`, updating `canvas`.
    fn stages(
        &self,
        pyramid: &mut TokenPyramid,
        canvas: &mut FeatureGrid,
        from: usize,
        to: usize,
        phase: Phase,
        trace: &mut Vec<StageRecord>,
    ) -> Result<()> {
        let cb = self.model.codebook();
        let full = self.model.schedule().full();
        let refine = phase == Phase::Refine;
        let role = |r: u64| if refine { r + REFINE_ROLES } else { r };
        let seed = self.config.seed;
        for k in from..=to {
            let t0 = Instant::now();
            let level = |a: Option<AnnealSchedule>| -> Result<f64> {
                match a {
                    Some(a) if !refine => a.level(k),
                    _ => Ok(0.0),
                }
            };
            let alpha = level(self.config.text_anneal)?;
            let beta = level(self.config.sos_anneal)?;
            let c_hat = anneal_condition(self.cond, alpha, stream(self.cond, seed, k, role(ROLE_COND)))?;
            let s_hat = anneal_sos(&self.sos, beta, stream(self.cond, seed, k, role(ROLE_SOS)))?;
            let omega = if refine {
                self.config.refine_guidance
            } else {
                self.config.cfg.weight(k, self.config.stages)?
            };
            let cond = self.model.predict(canvas, &c_hat, &s_hat, k)?;
            let logits = if omega == 0.0 && self.config.skip_unguided_null {
                cond.logits
            } else {
                let null = self.model.predict(canvas, &self.null, &self.null_sos, k)?;
                cfg_combine(&cond.logits, &null.logits, omega)?
            };
            let tokens = sample_tokens(
                &logits,
                self.config.tau,
                self.config.top_p,
                k,
                stream(self.cond, seed, k, role(ROLE_TOKENS)),
            )?;
            canvas.add_assign(&dequantize(&tokens, cb)?.resample(full)?)?;
            pyramid.push(tokens)?;
            trace.push(StageRecord {
                stage: k,
                phase,
                provenance: Provenance::Sampled,
                omega,
                alpha,
                beta,
                prototype: cond.prototype,
                wall_ns: t0.elapsed().as_nanos() as u64,
            });
        }
        Ok(())
    }

    fn finish(
        &self,
        pyramid: TokenPyramid,
        canvas: FeatureGrid,
        trace: Vec<StageRecord>,
        travel_source: Option<FeatureGrid>,
    ) -> Result<GenerationResult> {
        let image = self.model.decoder().decode(&canvas)?;
        Ok(GenerationResult {
            pyramid,
            canvas,
            image,
            trace,
            travel_source,
        })
    }
}

fn start<'a, M: Predictor + ?Sized>(
    model: &'a M,
    condition: &'a ConditionEmbedding,
    config: &'a GenerationConfig,
) -> Result<Run<'a, M>> {
    config.validate()?;
    if model.schedule().len() != config.stages {
        return Err(Error::Config(format!(
            "model has {} stages, config asks for {}",
            model.schedule().len(),
            config.stages
        )));
    }
    let null = ConditionEmbedding::null(condition.condition_id(), condition.dim());
    Ok(Run {
        model,
        cond: condition,
        sos: model.sos(condition)?,
        null_sos: model.sos(&null)?,
        null,
        config,
    })
}

/// Samples all `K` stages. Scale travel in `config` is ignored here.
pub fn generate<M: Predictor + ?Sized>(
    model: &M,
    condition: &ConditionEmbedding,
    config: &GenerationConfig,
) -> Result<GenerationResult> {
    let run = start(model, condition, config)?;
    let (h, w) = model.schedule().full();
    let mut canvas = FeatureGrid::zeros(h, w, model.codebook().dim());
    let mut pyramid = TokenPyramid::empty(model.schedule().clone());
    let mut trace = Vec::with_capacity(config.stages);
    run.stages(&mut pyramid, &mut canvas, 1, config.stages, Phase::Generate, &mut trace)?;
    run.finish(pyramid, canvas, trace, None)
}

/// Annealed generation up to stage `l`, scale-travel back to `m`, then clean
/// regeneration of stages `m+1..K` with constant guidance.
pub fn diversify_then_refine<M: Predictor + ?Sized>(
    model: &M,
    condition: &ConditionEmbedding,
    config: &GenerationConfig,
) -> Result<GenerationResult> {
    let (l, m) = config
        .scale_travel
        .ok_or_else(|| Error::Config("diversify_then_refine needs scale_travel = (l, m)".into()))?;
    let run = start(model, condition, config)?;
    let schedule = model.schedule();
    let cb = model.codebook();
    let (h, w) = schedule.full();
    let mut canvas = FeatureGrid::zeros(h, w, cb.dim());
    let mut pyramid = TokenPyramid::empty(schedule.clone());
    let mut trace = Vec::with_capacity(l + config.stages);
    run.stages(&mut pyramid, &mut canvas, 1, l, Phase::Generate, &mut trace)?;

    let t0 = Instant::now();
    let mut refined = scale_travel(&canvas, schedule, m, cb)?;
    let mut z = accumulate_canvas(&refined, cb)?;
    let per_stage = t0.elapsed().as_nanos() as u64 / m as u64;
    for k in 1..=m {
        trace.push(StageRecord {
            stage: k,
            phase: Phase::Travel,
            provenance: Provenance::ScaleTravel,
            omega: 0.0,
            alpha: 0.0,
            beta: 0.0,
            prototype: None,
            wall_ns: per_stage,
        });
    }
    run.stages(&mut refined, &mut z, m + 1, config.stages, Phase::Refine, &mut trace)?;
    run.finish(refined, z, trace, Some(canvas))
}

/// Runs [`diversify_then_refine`] when `config.scale_travel` is set, otherwise
/// [`generate`].
pub fn run_config<M: Predictor + ?Sized>(
    model: &M,
    condition: &ConditionEmbedding,
    config: &GenerationConfig,
) -> Result<GenerationResult> {
    if config.scale_travel.is_some() {
        diversify_then_refine(model, condition, config)
    } else {
        generate(model, condition, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{fit_codebook, multi_scale_encode, residual_samples};
    use crate::grid::ScaleSchedule;
    use crate::image::Decoder;
    use crate::predictor::{PrototypeModel, PrototypeParams};
    use crate::schedule::AnnealVariant;

    fn blob(ci: f64, cj: f64, color: [f64; 3]) -> FeatureGrid {
        FeatureGrid::from_fn(16, 16, 3, |i, j, c| {
            let r2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
            color[c] * (-r2 / 40.0).exp()
        })
        .unwrap()
    }

    fn model() -> PrototypeModel {
        model_with(PrototypeParams::default())
    }

    fn model_with(params: PrototypeParams) -> PrototypeModel {
        let maps = vec![
            blob(3.0, 3.0, [0.9, 0.2, 0.1]),
            blob(12.0, 12.0, [0.1, 0.8, 0.3]),
            blob(3.0, 12.0, [0.2, 0.3, 0.9]),
            blob(12.0, 3.0, [0.8, 0.8, 0.1]),
        ];
        let schedule = ScaleSchedule::desk();
        let samples = residual_samples(&maps, &schedule).unwrap();
        let cb = fit_codebook(&samples, 48, 15, RngStream::new(4, 4)).unwrap();
        let c = ConditionEmbedding::new(vec![0.3, -1.0, 0.7, 0.1, 0.5, -0.2, 0.0, 0.4], 3).unwrap();
        PrototypeModel::build(vec![(c, maps)], schedule, cb, Decoder::identity(3), params, RngStream::new(6, 1))
            .unwrap()
    }

    fn anneal(sigma: f64, kmax: usize) -> AnnealSchedule {
        AnnealSchedule::new(AnnealVariant::Cosine, sigma, kmax, AnnealTarget::TextEmbedding).unwrap()
    }

    #[test]
    fn annealing_edge_levels() {
        let c = ConditionEmbedding::new(vec![1.0, 2.0, 2.0], 1).unwrap();
        let rng = RngStream::new(1, 1);
        assert_eq!(anneal_condition(&c, 0.0, rng).unwrap(), c);
        let eps = gaussian(&[3], rng).unwrap();
        assert_eq!(anneal_condition(&c, 1.0, rng).unwrap().values(), eps.as_slice());
        let half = anneal_condition(&c, 0.5, rng).unwrap();
        for ((h, c), e) in half.values().iter().zip(c.values()).zip(&eps) {
            assert!((h - (c + e) / 2f64.sqrt()).abs() < 1e-15);
        }
        let null = ConditionEmbedding::null(1, 3);
        assert_eq!(anneal_condition(&null, 0.7, rng).unwrap(), null);
        assert!(anneal_condition(&c, 1.2, rng).is_err());
        assert!(anneal_sos(&SosToken::new(vec![1.0]).unwrap(), -0.1, rng).is_err());
    }

    #[test]
    fn sos_variance_at_half_noise() {
        // Component values drawn once; ŝ variance over fresh noise is
        // 0.5 * (1 + var(s)) when s itself is resampled per draw.
        let n = 10_000;
        let mut g = RngStream::new(2, 2).generator();
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let s = SosToken::new(vec![g.normal() * 0.6]).unwrap();
            let out = anneal_sos(&s, 0.5, RngStream::new(3, i)).unwrap().values()[0];
            sum += out;
            sq += out * out;
        }
        let var = sq / n as f64 - (sum / n as f64).powi(2);
        let expect = 0.5 * (1.0 + 0.36);
        assert!((var - expect).abs() < 0.05 * expect, "{var} vs {expect}");
    }

    #[test]
    fn greedy_clean_generation_recovers_the_teacher() {
        let m = model_with(PrototypeParams {
            blend: false,
            ..Default::default()
        });
        let c = m.condition(3).unwrap();
        let mut cfg = GenerationConfig::new(CfgSchedule::fixed(6.0), 7);
        cfg.tau = 1e-9;
        let out = generate(&m, &c, &cfg).unwrap();
        let set = m.set(3).unwrap();
        let sos = m.sos(&c).unwrap();
        let p = m.select(&FeatureGrid::zeros(16, 16, 3), &c, &sos, 1).unwrap();
        assert_eq!(out.pyramid, set.pyramids[p]);
        assert!(out.final_records().iter().all(|r| r.prototype == Some(p)));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = model();
        let c = m.condition(3).unwrap();
        let mut cfg = GenerationConfig::new(CfgSchedule::fixed(2.0), 7);
        cfg.text_anneal = Some(anneal(1.0, 3));
        cfg.seed = 42;
        let a = generate(&m, &c, &cfg).unwrap();
        let b = generate(&m, &c, &cfg).unwrap();
        assert_eq!(a.pyramid, b.pyramid);
        assert_eq!(a.canvas, b.canvas);
        cfg.scale_travel = Some((5, 2));
        let a = diversify_then_refine(&m, &c, &cfg).unwrap();
        let b = diversify_then_refine(&m, &c, &cfg).unwrap();
        assert_eq!(a.pyramid, b.pyramid);
    }

    #[test]
    fn annealing_stops_after_kmax() {
        let m = model();
        let c = m.condition(3).unwrap();
        let mut cfg = GenerationConfig::new(CfgSchedule::fixed(2.0), 7);
        cfg.text_anneal = Some(AnnealSchedule::new(AnnealVariant::Constant, 0.8, 3, AnnealTarget::TextEmbedding).unwrap());
        cfg.seed = 5;
        let out = generate(&m, &c, &cfg).unwrap();
        for r in &out.trace {
            assert_eq!(r.alpha == 0.0, r.stage > 3, "{r:?}");
        }
    }

    #[test]
    fn refined_pyramid_provenance_and_canvas() {
        let m = model();
        let c = m.condition(3).unwrap();
        let mut cfg = GenerationConfig::new(CfgSchedule::fixed(2.0), 7);
        cfg.text_anneal = Some(anneal(1.0, 3));
        cfg.scale_travel = Some((5, 2));
        for seed in 0..5 {
            cfg.seed = seed;
            let out = diversify_then_refine(&m, &c, &cfg).unwrap();
            assert_eq!(out.pyramid.len(), 7);
            let recs = out.final_records();
            for r in &recs {
                let want = if r.stage <= 2 { Provenance::ScaleTravel } else { Provenance::Sampled };
                assert_eq!(r.provenance, want);
                if r.stage > 2 {
                    assert_eq!((r.phase, r.alpha, r.omega), (Phase::Refine, 0.0, 2.0));
                }
            }
            let acc = accumulate_canvas(&out.pyramid, m.codebook()).unwrap();
            assert!(acc.sub(&out.canvas).unwrap().max_abs() <= 1e-6);
        }
    }

    #[test]
    fn noiseless_refinement_reencodes_the_plain_canvas() {
        let m = model();
        let c = m.condition(3).unwrap();
        let mut cfg = GenerationConfig::new(CfgSchedule::fixed(2.0), 7);
        cfg.text_anneal = Some(anneal(0.0, 3));
        cfg.seed = 9;
        cfg.scale_travel = Some((5, 2));
        let refined = diversify_then_refine(&m, &c, &cfg).unwrap();
        let plain = generate(&m, &c, &cfg).unwrap();
        let z_l = accumulate_canvas(&plain.pyramid.prefix(5), m.codebook()).unwrap();
        assert_eq!(refined.travel_source.as_ref(), Some(&z_l));
        let prefix = multi_scale_encode(&z_l, m.schedule(), m.codebook()).unwrap().prefix(2);
        assert_eq!(refined.pyramid.prefix(2), prefix);
    }

    #[test]
    fn config_errors() {
        let m = model();
        let c = m.condition(3).unwrap();
        let mut cfg = GenerationConfig::new(CfgSchedule::fixed(1.0), 7);
        cfg.scale_travel = Some((2, 2));
        assert!(diversify_then_refine(&m, &c, &cfg).is_err());
        cfg.scale_travel = None;
        assert!(diversify_then_refine(&m, &c, &cfg).is_err());
        let short = GenerationConfig::new(CfgSchedule::fixed(1.0), 6);
        assert!(generate(&m, &c, &short).is_err());
        let mut hot = GenerationConfig::new(CfgSchedule::fixed(1.0), 7);
        hot.tau = 0.0;
        assert!(generate(&m, &c, &hot).is_err());
    }
}
