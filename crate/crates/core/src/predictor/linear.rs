use serde::{Deserialize, Serialize};

use crate::codec::{Codebook, QuantizerMode, TokenGrid};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, RngStream, ScaleSchedule};
use crate::image::Decoder;

use super::{check_stage, log_sum_exp, ConditionEmbedding, LogitGrid, Prediction, Predictor, SosToken};

/// Per-position softmax regression over
/// `[3x3 patch of down(Z_{k-1}, s_k) ⊕ (y, x) ⊕ ĉ ⊕ ŝ ⊕ one_hot(k)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    schedule: ScaleSchedule,
    codebook: Codebook,
    decoder: Decoder,
    cond_dim: usize,
    sos_proj: Vec<f64>,
    /// Row-major `V x F`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// One teacher-forced stage: predict `target` from the canvas before it.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub canvas: FeatureGrid,
    pub condition: ConditionEmbedding,
    pub sos: SosToken,
    pub target: TokenGrid,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-position cross-entropy of each epoch, measured before each update.
    pub epoch_loss: Vec<f64>,
}

impl LinearModel {
    /// Zero-initialized model. `sos_proj` is the row-major `D x D_c` map used
    /// to derive `<SOS>` tokens from conditions.
    pub fn new(
        schedule: ScaleSchedule,
        codebook: Codebook,
        decoder: Decoder,
        cond_dim: usize,
        sos_proj: Vec<f64>,
    ) -> Result<Self> {
        if codebook.mode() != QuantizerMode::Vq {
            return Err(Error::Config("linear model needs a vq codebook".into()));
        }
        if sos_proj.len() != codebook.dim() * cond_dim {
            return Err(Error::Shape("SOS projection must be D x D_c".into()));
        }
        let f = feature_len(codebook.dim(), cond_dim, schedule.len());
        let v = codebook.len();
        Ok(Self {
            schedule,
            codebook,
            decoder,
            cond_dim,
            sos_proj,
            weights: vec![0.0; v * f],
            bias: vec![0.0; v],
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn sos_projection(&self) -> &[f64] {
        &self.sos_proj
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.codebook.dim(), self.cond_dim, self.schedule.len())
    }

    /// All parameters, weights first then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let nw = self.weights.len();
        if params.len() != nw + self.bias.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                nw + self.bias.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters must be finite".into()));
        }
        self.weights.copy_from_slice(&params[..nw]);
        self.bias.copy_from_slice(&params[nw..]);
        Ok(())
    }

    /// Feature rows, one per position of stage `k`.
    pub fn features(
        &self,
        canvas: &FeatureGrid,
        condition: &ConditionEmbedding,
        sos: &SosToken,
        k: usize,
    ) -> Result<Vec<Vec<f64>>> {
        check_stage(&self.schedule, canvas, k, self.codebook.dim())?;
        if condition.dim() != self.cond_dim || sos.values().len() != self.codebook.dim() {
            return Err(Error::Shape("condition or SOS size does not match the model".into()));
        }
        let (h, w) = self.schedule.scale(k);
        let down = canvas.resample((h, w))?;
        let coord = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let mut rows = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let mut f = Vec::with_capacity(self.feature_len());
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let y = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
                        let x = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                        f.extend_from_slice(down.at(y, x));
                    }
                }
                f.push(coord(i, h));
                f.push(coord(j, w));
                f.extend_from_slice(condition.values());
                f.extend_from_slice(sos.values());
                f.extend((1..=self.schedule.len()).map(|s| if s == k { 1.0 } else { 0.0 }));
                rows.push(f);
            }
        }
        Ok(rows)
    }

    fn logits_into(&self, f: &[f64], out: &mut [f64]) {
        let nf = f.len();
        for (v, o) in out.iter_mut().enumerate() {
            let row = &self.weights[v * nf..(v + 1) * nf];
            *o = self.bias[v] + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Mean cross-entropy over the sample's positions and its gradient with
    /// respect to [`parameters`](Self::parameters).
    pub fn loss_and_grad(&self, sample: &TrainSample) -> Result<(f64, Vec<f64>)> {
        let (rows, target) = self.sample_rows(sample)?;
        let v = self.codebook.len();
        let nf = self.feature_len();
        let mut grad = vec![0.0; v * nf + v];
        let mut logits = vec![0.0; v];
        let mut loss = 0.0;
        let n = rows.len() as f64;
        for (f, &t) in rows.iter().zip(target) {
            self.logits_into(f, &mut logits);
            let z = log_sum_exp(&logits);
            loss += z - logits[t as usize];
            for u in 0..v {
                let g = ((logits[u] - z).exp() - if u == t as usize { 1.0 } else { 0.0 }) / n;
                for (gw, x) in grad[u * nf..(u + 1) * nf].iter_mut().zip(f) {
                    *gw += g * x;
                }
                grad[v * nf + u] += g;
            }
        }
        Ok((loss / n, grad))
    }

    fn sample_rows<'a>(&self, sample: &'a TrainSample) -> Result<(Vec<Vec<f64>>, &'a [u32])> {
        let k = sample.target.scale_index;
        let rows = self.features(&sample.canvas, &sample.condition, &sample.sos, k)?;
        let target = sample
            .target
            .indices()
            .ok_or_else(|| Error::Shape("training targets must be token indices".into()))?;
        if target.len() != rows.len() || target.iter().any(|&t| t as usize >= self.codebook.len()) {
            return Err(Error::Shape("target grid does not match the stage or vocabulary".into()));
        }
        Ok((rows, target))
    }
}

fn feature_len(d: usize, cond_dim: usize, stages: usize) -> usize {
    9 * d + 2 + cond_dim + d + stages
}

/// Plain per-position SGD on teacher-forced cross-entropy.
pub fn train_linear(
    model: &LinearModel,
    dataset: &[TrainSample],
    epochs: usize,
    lr: f64,
    rng: RngStream,
) -> Result<(LinearModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Range("training needs at least one sample".into()));
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Range(format!("learning rate must be non-negative, got {lr}")));
    }
    let mut m = model.clone();
    let prepared = dataset
        .iter()
        .map(|s| m.sample_rows(s).map(|(rows, t)| (rows, t.to_vec())))
        .collect::<Result<Vec<_>>>()?;
    let v = m.codebook.len();
    let nf = m.feature_len();
    let mut g = rng.generator();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut logits = vec![0.0; v];
    let mut report = TrainReport::default();
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, g.below(i + 1));
        }
        let (mut total, mut count) = (0.0, 0usize);
        for &s in &order {
            let (rows, target) = &prepared[s];
            for (f, &t) in rows.iter().zip(target) {
                m.logits_into(f, &mut logits);
                let z = log_sum_exp(&logits);
                total += z - logits[t as usize];
                count += 1;
                if lr == 0.0 {
                    continue;
                }
                for u in 0..v {
                    let gu = (logits[u] - z).exp() - if u == t as usize { 1.0 } else { 0.0 };
                    let step = lr * gu;
                    for (w, x) in m.weights[u * nf..(u + 1) * nf].iter_mut().zip(f) {
                        *w -= step * x;
                    }
                    m.bias[u] -= step;
                }
            }
        }
        report.epoch_loss.push(total / count as f64);
    }
    if m.weights.iter().chain(&m.bias).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("training diverged; lower the learning rate".into()));
    }
    Ok((m, report))
}

impl Predictor for LinearModel {
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
        let x = condition.values();
        SosToken::new(
            self.sos_proj
                .chunks_exact(self.cond_dim.max(1))
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        )
    }

    fn predict(
        &self,
        canvas: &FeatureGrid,
        condition: &ConditionEmbedding,
        sos: &SosToken,
        k: usize,
    ) -> Result<Prediction> {
        let rows = self.features(canvas, condition, sos, k)?;
        let v = self.codebook.len();
        let mut values = vec![0.0; rows.len() * v];
        for (f, out) in rows.iter().zip(values.chunks_exact_mut(v)) {
            self.logits_into(f, out);
        }
        Ok(Prediction {
            logits: LogitGrid::new(self.schedule.scale(k), v, values)?,
            prototype: None,
        })
    }
}

pub(crate) fn raw_parts(m: &LinearModel) -> (&ScaleSchedule, &Codebook, &Decoder) {
    (&m.schedule, &m.codebook, &m.decoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{accumulate_canvas, multi_scale_encode};

    fn codebook() -> Codebook {
        let vecs: Vec<f64> = (0..6)
            .flat_map(|i| [i as f64 * 0.1, (i % 2) as f64 * 0.2, -(i as f64) * 0.05])
            .collect();
        Codebook::vq(3, vecs).unwrap()
    }

    fn sample(seed: u64, k: usize) -> TrainSample {
        let schedule = ScaleSchedule::desk();
        let cb = codebook();
        let z = FeatureGrid::from_fn(16, 16, 3, |i, j, c| {
            ((i * 3 + j * 5 + c * 7 + seed as usize) % 11) as f64 * 0.05
        })
        .unwrap();
        let pyr = multi_scale_encode(&z, &schedule, &cb).unwrap();
        let canvas = if k == 1 {
            FeatureGrid::zeros(16, 16, 3)
        } else {
            accumulate_canvas(&pyr.prefix(k - 1), &cb).unwrap()
        };
        let c = ConditionEmbedding::new(vec![1.0, seed as f64 * 0.3, -0.5], seed).unwrap();
        TrainSample {
            canvas,
            sos: SosToken::new(vec![0.1, 0.2, 0.3]).unwrap(),
            condition: c,
            target: pyr.grids[k - 1].clone(),
        }
    }

    fn fresh() -> LinearModel {
        LinearModel::new(ScaleSchedule::desk(), codebook(), Decoder::identity(3), 3, vec![0.0; 9]).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = fresh();
        let mut g = RngStream::new(17, 3).generator();
        let params: Vec<f64> = m.parameters().iter().map(|_| g.normal() * 0.3).collect();
        m.set_parameters(&params).unwrap();
        let s = sample(2, 4);
        let (_, grad) = m.loss_and_grad(&s).unwrap();
        let h = 1e-5;
        for _ in 0..10 {
            let i = g.below(params.len());
            let mut p = params.clone();
            p[i] += h;
            m.set_parameters(&p).unwrap();
            let up = m.loss_and_grad(&s).unwrap().0;
            p[i] -= 2.0 * h;
            m.set_parameters(&p).unwrap();
            let down = m.loss_and_grad(&s).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel <= 1e-4, "coordinate {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }

    #[test]
    fn single_example_overfits() {
        let mut g = RngStream::new(8, 8).generator();
        let canvas = FeatureGrid::from_fn(16, 16, 3, |_, _, _| g.normal() * 0.5).unwrap();
        let tokens: Vec<u32> = (0..9).map(|i| [0, 3, 5, 1, 2, 4][i % 6]).collect();
        let s = TrainSample {
            canvas,
            condition: ConditionEmbedding::new(vec![0.2, 1.0, 0.4], 0).unwrap(),
            sos: SosToken::new(vec![0.0, 0.5, -0.5]).unwrap(),
            target: TokenGrid::from_indices(3, (3, 3), tokens.clone()).unwrap(),
        };
        let (m, report) = train_linear(&fresh(), &[s.clone()], 200, 0.5, RngStream::new(0, 0)).unwrap();
        let pred = m.predict(&s.canvas, &s.condition, &s.sos, 3).unwrap();
        assert_eq!(pred.logits.argmax(), tokens);
        assert!(report.epoch_loss.last().unwrap() < &report.epoch_loss[0]);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let s = sample(3, 3);
        let before = fresh();
        let (after, report) = train_linear(&before, &[s], 5, 0.0, RngStream::new(0, 0)).unwrap();
        assert_eq!(after, before);
        assert_eq!(report.epoch_loss.len(), 5);
    }

    #[test]
    fn smoothed_loss_is_non_increasing() {
        let data: Vec<TrainSample> = (0..32).map(|i| sample(i, 1 + (i as usize % 7))).collect();
        let (_, report) = train_linear(&fresh(), &data, 40, 0.02, RngStream::new(5, 1)).unwrap();
        let smooth: Vec<f64> = report.epoch_loss.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        for w in smooth.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "{smooth:?}");
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train_linear(&fresh(), &[], 1, 0.1, RngStream::new(0, 0)).is_err());
    }
}
