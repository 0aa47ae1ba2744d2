use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{accumulate_canvas, dequantize, multi_scale_encode, Codebook, QuantizerMode, TokenPyramid};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, RngStream, ScaleSchedule};
use crate::image::Decoder;

use super::{check_stage, log_sum_exp, ConditionEmbedding, LogitGrid, Prediction, Predictor, SosToken};

/// Calibration constants of [`PrototypeModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrototypeParams {
    /// Weight of the condition/key alignment `⟨ĉ, u_p⟩`.
    pub lambda_sel: f64,
    /// Weight of canvas agreement `-‖Z_{k-1} - Z^p_{k-1}‖² / HWD`.
    pub lambda_canvas: f64,
    /// Weight of `⟨ŝ, M u_p⟩`.
    pub lambda_sos: f64,
    /// Logit temperature of the distance-to-target logits.
    pub t_logit: f64,
    /// Fraction of the gap between the prototype canvas and the current canvas
    /// folded into each stage's target residual. Zero replays the teacher
    /// residuals verbatim; one re-runs the encoder step against the prototype.
    pub repair: f64,
    /// Conditional target is the selection-weighted blend of every
    /// prototype's target; off, only the argmax prototype's target is used.
    pub blend: bool,
}

impl Default for PrototypeParams {
    fn default() -> Self {
        Self {
            lambda_sel: 3.0,
            lambda_canvas: 6000.0,
            lambda_sos: 2.0,
            t_logit: 3e-4,
            repair: 0.2,
            blend: true,
        }
    }
}

impl PrototypeParams {
    fn validate(&self) -> Result<()> {
        let all = [self.lambda_sel, self.lambda_canvas, self.lambda_sos, self.t_logit, self.repair];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("prototype parameters must be finite".into()));
        }
        if self.t_logit <= 0.0 {
            return Err(Error::Config("t_logit must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.repair) {
            return Err(Error::Config("repair gain must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The prototypes of one condition: teacher pyramids plus selection keys.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    pub embedding: ConditionEmbedding,
    /// Unit key vector `u_p` per prototype.
    pub keys: Vec<Vec<f64>>,
    pub pyramids: Vec<TokenPyramid>,
    /// `canvases[p][k]` is `Z^p_k` for `k = 0..=K`.
    canvases: Vec<Vec<FeatureGrid>>,
    /// `teacher[p][k - 1]` is the dequantized `r^p_k` at `s_k`.
    teacher: Vec<Vec<FeatureGrid>>,
}

impl PrototypeSet {
    pub fn new(
        embedding: ConditionEmbedding,
        keys: Vec<Vec<f64>>,
        pyramids: Vec<TokenPyramid>,
        codebook: &Codebook,
    ) -> Result<Self> {
        if pyramids.len() < 2 || keys.len() != pyramids.len() {
            return Err(Error::Shape(format!(
                "need P >= 2 prototypes with one key each, got {} pyramids and {} keys",
                pyramids.len(),
                keys.len()
            )));
        }
        for u in &keys {
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if u.len() != embedding.dim() || (n - 1.0).abs() > 1e-9 {
                return Err(Error::Shape("prototype keys must be unit vectors of the embedding dimension".into()));
            }
        }
        let schedule = &pyramids[0].schedule;
        let (h, w) = schedule.full();
        let mut canvases = Vec::with_capacity(pyramids.len());
        let mut teacher = Vec::with_capacity(pyramids.len());
        for p in &pyramids {
            if &p.schedule != schedule || p.len() != schedule.len() {
                return Err(Error::Shape("teacher pyramids must be complete and share one schedule".into()));
            }
            let mut zs = vec![FeatureGrid::zeros(h, w, codebook.dim())];
            for k in 1..=p.len() {
                zs.push(accumulate_canvas(&p.prefix(k), codebook)?);
            }
            canvases.push(zs);
            teacher.push(
                p.grids
                    .iter()
                    .map(|g| dequantize(g, codebook))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self {
            embedding,
            keys,
            pyramids,
            canvases,
            teacher,
        })
    }

    pub fn len(&self) -> usize {
        self.pyramids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pyramids.is_empty()
    }

    /// Teacher canvas `Z^p_k`.
    pub fn canvas(&self, p: usize, k: usize) -> &FeatureGrid {
        &self.canvases[p][k]
    }
}

/// Synthetic next-scale model that steers generation toward one of `P`
/// teacher pyramids per condition.
///
/// With a clean condition the prototype choice is fixed by the keys, so every
/// seed produces the same image up to token noise.
#[derive(Debug, Clone)]
pub struct PrototypeModel {
    schedule: ScaleSchedule,
    codebook: Codebook,
    decoder: Decoder,
    pub params: PrototypeParams,
    /// Row-major `D x D_c` projection from condition to `<SOS>` token.
    sos_proj: Vec<f64>,
    sets: Vec<PrototypeSet>,
    index: BTreeMap<u64, usize>,
}

impl PrototypeModel {
    pub fn new(
        schedule: ScaleSchedule,
        codebook: Codebook,
        decoder: Decoder,
        params: PrototypeParams,
        sos_proj: Vec<f64>,
        sets: Vec<PrototypeSet>,
    ) -> Result<Self> {
        params.validate()?;
        if codebook.mode() != QuantizerMode::Vq {
            return Err(Error::Config("prototype model needs a vq codebook".into()));
        }
        if decoder.channels != codebook.dim() {
            return Err(Error::Shape("decoder and codebook disagree on D".into()));
        }
        let cond_dim = sets.first().map_or(0, |s| s.embedding.dim());
        if sos_proj.len() != codebook.dim() * cond_dim {
            return Err(Error::Shape("SOS projection must be D x D_c".into()));
        }
        let mut index = BTreeMap::new();
        for (i, s) in sets.iter().enumerate() {
            if s.pyramids[0].schedule != schedule || s.embedding.dim() != cond_dim {
                return Err(Error::Shape("prototype sets disagree on schedule or embedding size".into()));
            }
            if index.insert(s.embedding.condition_id(), i).is_some() {
                return Err(Error::Config(format!(
                    "duplicate condition id {}",
                    s.embedding.condition_id()
                )));
            }
        }
        Ok(Self {
            schedule,
            codebook,
            decoder,
            params,
            sos_proj,
            sets,
            index,
        })
    }

    /// Encodes each condition's prototype feature maps as teacher pyramids and
    /// draws keys and the `<SOS>` projection from `rng`.
    pub fn build(
        conditions: Vec<(ConditionEmbedding, Vec<FeatureGrid>)>,
        schedule: ScaleSchedule,
        codebook: Codebook,
        decoder: Decoder,
        params: PrototypeParams,
        rng: RngStream,
    ) -> Result<Self> {
        let cond_dim = conditions.first().map_or(0, |(c, _)| c.dim());
        let d = codebook.dim();
        let mut g = rng.fork(0).generator();
        let scale = 1.0 / (cond_dim as f64).sqrt();
        let sos_proj = (0..d * cond_dim).map(|_| g.normal() * scale).collect();
        let mut sets = Vec::with_capacity(conditions.len());
        for (c, maps) in conditions {
            let mut kg = rng.fork(1 + c.condition_id()).generator();
            let keys = (0..maps.len())
                .map(|_| unit(&mut || kg.normal(), cond_dim))
                .collect();
            let pyramids = maps
                .iter()
                .map(|z| multi_scale_encode(z, &schedule, &codebook))
                .collect::<Result<Vec<_>>>()?;
            sets.push(PrototypeSet::new(c, keys, pyramids, &codebook)?);
        }
        Self::new(schedule, codebook, decoder, params, sos_proj, sets)
    }

    pub fn sets(&self) -> &[PrototypeSet] {
        &self.sets
    }

    pub fn sos_projection(&self) -> &[f64] {
        &self.sos_proj
    }

    pub fn set(&self, condition_id: u64) -> Result<&PrototypeSet> {
        self.index
            .get(&condition_id)
            .map(|&i| &self.sets[i])
            .ok_or_else(|| Error::Range(format!("model has no condition {condition_id}")))
    }

    /// Clean condition embedding for a label.
    pub fn condition(&self, condition_id: u64) -> Result<ConditionEmbedding> {
        Ok(self.set(condition_id)?.embedding.clone())
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let dc = x.len();
        self.sos_proj
            .chunks_exact(dc)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Unnormalized log selection weights `log w_p` for every prototype.
    pub fn selection_scores(
        &self,
        canvas: &FeatureGrid,
        condition: &ConditionEmbedding,
        sos: &SosToken,
        k: usize,
    ) -> Result<Vec<f64>> {
        check_stage(&self.schedule, canvas, k, self.codebook.dim())?;
        let set = self.set(condition.condition_id())?;
        if condition.is_null() {
            return Ok(vec![0.0; set.len()]);
        }
        let norm = canvas.values().len() as f64;
        (0..set.len())
            .map(|p| {
                let key = dot(condition.values(), &set.keys[p]);
                let sos_term = dot(sos.values(), &self.project(&set.keys[p]));
                let gap = canvas.squared_distance(set.canvas(p, k - 1))? / norm;
                Ok(self.params.lambda_sel * key + self.params.lambda_sos * sos_term
                    - self.params.lambda_canvas * gap)
            })
            .collect()
    }

    /// Selection weights `w_p`, normalized to sum to one.
    pub fn selection_weights(
        &self,
        canvas: &FeatureGrid,
        condition: &ConditionEmbedding,
        sos: &SosToken,
        k: usize,
    ) -> Result<Vec<f64>> {
        let s = self.selection_scores(canvas, condition, sos, k)?;
        let z = log_sum_exp(&s);
        Ok(s.iter().map(|x| (x - z).exp()).collect())
    }

    /// `p* = argmax_p w_p`.
    pub fn select(
        &self,
        canvas: &FeatureGrid,
        condition: &ConditionEmbedding,
        sos: &SosToken,
        k: usize,
    ) -> Result<usize> {
        let s = self.selection_scores(canvas, condition, sos, k)?;
        Ok(super::argmax(&s) as usize)
    }

    /// Target residual for prototype `p` at stage `k` given the current canvas.
    fn target(&self, set: &PrototypeSet, p: usize, canvas: &FeatureGrid, k: usize) -> Result<FeatureGrid> {
        let teacher = &set.teacher[p][k - 1];
        if self.params.repair == 0.0 {
            return Ok(teacher.clone());
        }
        let gap = set.canvas(p, k - 1).sub(canvas)?.resample(self.schedule.scale(k))?;
        teacher.add(&gap.scale(self.params.repair))
    }

    /// `-‖e_v - t‖² / T_logit` at each position.
    fn distance_logits(&self, target: &FeatureGrid) -> Vec<f64> {
        let v = self.codebook.len();
        let mut out = Vec::with_capacity(target.values().len() / target.channels() * v);
        for t in target.positions() {
            for e in self.codebook.rows() {
                let d2: f64 = e.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                out.push(-d2 / self.params.t_logit);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(normal: &mut impl FnMut() -> f64, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl Predictor for PrototypeModel {
    fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    fn sos(&self, condition: &ConditionEmbedding) -> Result<SosToken> {
        SosToken::new(self.project(condition.values()))
    }

    fn predict(
        &self,
        canvas: &FeatureGrid,
        condition: &ConditionEmbedding,
        sos: &SosToken,
        k: usize,
    ) -> Result<Prediction> {
        check_stage(&self.schedule, canvas, k, self.codebook.dim())?;
        let set = self.set(condition.condition_id())?;
        let dims = self.schedule.scale(k);
        let v = self.codebook.len();
        if !condition.is_null() {
            let scores = self.selection_scores(canvas, condition, sos, k)?;
            let p = super::argmax(&scores) as usize;
            let logits = if self.params.blend {
                let z = log_sum_exp(&scores);
                let mut blend = self.target(set, 0, canvas, k)?.scale((scores[0] - z).exp());
                for q in 1..set.len() {
                    blend.add_assign(&self.target(set, q, canvas, k)?.scale((scores[q] - z).exp()))?;
                }
                self.distance_logits(&blend)
            } else {
                self.distance_logits(&self.target(set, p, canvas, k)?)
            };
            return Ok(Prediction {
                logits: LogitGrid::new(dims, v, logits)?,
                prototype: Some(p),
            });
        }
        // Every prototype weighted alike, combined at zero temperature: each
        // token scores its best agreement with any prototype.
        let mut out = vec![f64::NEG_INFINITY; dims.0 * dims.1 * v];
        for p in 0..set.len() {
            let l = self.distance_logits(&self.target(set, p, canvas, k)?);
            for (o, x) in out.iter_mut().zip(l) {
                *o = o.max(x);
            }
        }
        Ok(Prediction {
            logits: LogitGrid::new(dims, v, out)?,
            prototype: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::fit_codebook;
    use crate::codec::residual_samples;

    fn maps() -> Vec<FeatureGrid> {
        (0..3)
            .map(|p| {
                FeatureGrid::from_fn(16, 16, 3, |i, j, c| {
                    let (ci, cj) = [(3.0, 3.0), (12.0, 12.0), (3.0, 12.0)][p];
                    let r2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    (-r2 / 30.0).exp() * [0.9, 0.5, 0.2][(c + p) % 3]
                })
                .unwrap()
            })
            .collect()
    }

    fn model(params: PrototypeParams) -> PrototypeModel {
        let schedule = ScaleSchedule::desk();
        let samples = residual_samples(&maps(), &schedule).unwrap();
        let cb = fit_codebook(&samples, 24, 10, RngStream::new(1, 1)).unwrap();
        let c = ConditionEmbedding::new(vec![1.0, 0.5, -0.3, 0.2], 4).unwrap();
        PrototypeModel::build(vec![(c, maps())], schedule, cb, Decoder::identity(3), params, RngStream::new(2, 0))
            .unwrap()
    }

    #[test]
    fn clean_first_stage_reproduces_best_key_tokens() {
        let m = model(PrototypeParams {
            lambda_sel: 8.0,
            lambda_canvas: 0.0,
            blend: false,
            ..Default::default()
        });
        let c = m.condition(4).unwrap();
        let s = m.sos(&c).unwrap();
        let set = m.set(4).unwrap();
        // Oracle: brute-force score over keys and SOS projection.
        let best = (0..set.len())
            .max_by(|&a, &b| {
                let f = |p: usize| {
                    8.0 * dot(c.values(), &set.keys[p]) + 2.0 * dot(s.values(), &m.project(&set.keys[p]))
                };
                f(a).total_cmp(&f(b))
            })
            .unwrap();
        let pred = m.predict(&FeatureGrid::zeros(16, 16, 3), &c, &s, 1).unwrap();
        assert_eq!(pred.prototype, Some(best));
        assert_eq!(pred.logits.argmax(), set.pyramids[best].grids[0].indices().unwrap());
    }

    #[test]
    fn blend_follows_the_weights() {
        let sharp = |blend| PrototypeParams {
            lambda_sel: 1e4,
            lambda_canvas: 0.0,
            blend,
            ..Default::default()
        };
        let (a, b) = (model(sharp(true)), model(sharp(false)));
        let c = a.condition(4).unwrap();
        let s = a.sos(&c).unwrap();
        let z = FeatureGrid::zeros(16, 16, 3);
        let (pa, pb) = (a.predict(&z, &c, &s, 2).unwrap(), b.predict(&z, &c, &s, 2).unwrap());
        assert_eq!(pa.prototype, pb.prototype);
        assert!(pa.logits.values().iter().zip(pb.logits.values()).all(|(x, y)| (x - y).abs() < 1e-6 * y.abs().max(1.0)));
        // Flat weights: the target is the plain mean of the prototype targets.
        let flat = model(PrototypeParams {
            lambda_sel: 0.0,
            lambda_sos: 0.0,
            lambda_canvas: 0.0,
            ..Default::default()
        });
        let set = flat.set(4).unwrap();
        let mut mean = flat.target(set, 0, &z, 2).unwrap();
        for q in 1..set.len() {
            mean.add_assign(&flat.target(set, q, &z, 2).unwrap()).unwrap();
        }
        let mean = mean.scale(1.0 / set.len() as f64);
        let got = flat.predict(&z, &c, &s, 2).unwrap();
        let want = flat.distance_logits(&mean);
        assert!(got.logits.values().iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-9 * y.abs().max(1.0)));
    }

    #[test]
    fn null_condition_has_uniform_weights() {
        let m = model(PrototypeParams::default());
        let null = ConditionEmbedding::null(4, 4);
        let s = m.sos(&null).unwrap();
        let w = m.selection_weights(&FeatureGrid::zeros(16, 16, 3), &null, &s, 3).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let pred = m.predict(&FeatureGrid::zeros(16, 16, 3), &null, &s, 2).unwrap();
        assert_eq!(pred.prototype, None);
    }

    #[test]
    fn canvas_term_overrides_condition() {
        let m = model(PrototypeParams {
            lambda_sel: 1.0,
            lambda_canvas: 1e4,
            ..Default::default()
        });
        let set = m.set(4).unwrap();
        let c = m.condition(4).unwrap();
        let s = m.sos(&c).unwrap();
        for k in 2..=7 {
            let canvas = set.canvas(2, k - 1);
            // Oracle: evaluate every score directly and take the maximum.
            let scores: Vec<f64> = (0..3)
                .map(|p| {
                    let gap = canvas.squared_distance(set.canvas(p, k - 1)).unwrap() / 768.0;
                    dot(c.values(), &set.keys[p]) + 2.0 * dot(s.values(), &m.project(&set.keys[p]))
                        - 1e4 * gap
                })
                .collect();
            let oracle = (0..3).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            assert_eq!(oracle, 2);
            assert_eq!(m.select(canvas, &c, &s, k).unwrap(), 2);
        }
    }

    #[test]
    fn teacher_trajectory_is_a_fixed_point() {
        let m = model(PrototypeParams::default());
        let set = m.set(4).unwrap();
        let c = m.condition(4).unwrap();
        let s = m.sos(&c).unwrap();
        let p = m.select(&FeatureGrid::zeros(16, 16, 3), &c, &s, 1).unwrap();
        for k in 1..=7 {
            let pred = m.predict(set.canvas(p, k - 1), &c, &s, k).unwrap();
            assert_eq!(pred.prototype, Some(p));
            assert_eq!(pred.logits.argmax(), set.pyramids[p].grids[k - 1].indices().unwrap());
        }
    }

    #[test]
    fn clean_selection_ignores_canvas_without_canvas_weight() {
        let m = model(PrototypeParams {
            lambda_canvas: 0.0,
            ..Default::default()
        });
        let set = m.set(4).unwrap();
        let c = m.condition(4).unwrap();
        let s = m.sos(&c).unwrap();
        let first = m.select(&FeatureGrid::zeros(16, 16, 3), &c, &s, 1).unwrap();
        for p in 0..3 {
            for k in 1..=7 {
                assert_eq!(m.select(set.canvas(p, k - 1), &c, &s, k).unwrap(), first);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(PrototypeParams::default());
        let c = m.condition(4).unwrap();
        let s = m.sos(&c).unwrap();
        assert!(m.predict(&FeatureGrid::zeros(16, 16, 3), &c, &s, 8).is_err());
        assert!(m.predict(&FeatureGrid::zeros(8, 8, 3), &c, &s, 1).is_err());
        let other = ConditionEmbedding::new(vec![1.0; 4], 99).unwrap();
        assert!(m.predict(&FeatureGrid::zeros(16, 16, 3), &other, &s, 1).is_err());
    }
}
