//! Next-scale logit prediction, classifier-free guidance and token sampling.

mod linear;
mod prototype;
mod sampling;
mod store;

pub use linear::{train_linear, LinearModel, TrainReport, TrainSample};
pub use prototype::{PrototypeModel, PrototypeParams, PrototypeSet};
pub use sampling::sample_tokens;
pub use store::{load_model, save_model, AnyModel, ModelManifest};

use serde::{Deserialize, Serialize};

use crate::codec::Codebook;
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, ScaleSchedule};
use crate::image::Decoder;

/// Condition embedding `c` (or an annealed `ĉ`), tagged with its label.
///
/// A null embedding stands for the unconditional branch `∅`; it keeps the
/// label so per-condition models can still look up their data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding {
    values: Vec<f64>,
    condition_id: u64,
    null: bool,
}

impl ConditionEmbedding {
    /// Unit-normalizes `values`.
    pub fn new(values: Vec<f64>, condition_id: u64) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("condition embedding must be finite and non-empty".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Range("condition embedding has zero norm".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
            condition_id,
            null: false,
        })
    }

    pub fn null(condition_id: u64, dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            condition_id,
            null: true,
        }
    }

    /// Same label, different (not renormalized) vector. Used for `ĉ`.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("replacement embedding must be finite with the same dimension".into()));
        }
        Ok(Self {
            values,
            condition_id: self.condition_id,
            null: self.null,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn condition_id(&self) -> u64 {
        self.condition_id
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// The `<SOS>` token vector `s` (or `ŝ`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosToken {
    values: Vec<f64>,
}

impl SosToken {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SOS token must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-position logits over a vocabulary of `vocab` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrid {
    dims: (usize, usize),
    vocab: usize,
    values: Vec<f64>,
}

impl LogitGrid {
    pub fn new(dims: (usize, usize), vocab: usize, values: Vec<f64>) -> Result<Self> {
        if vocab == 0 || dims.0 == 0 || dims.1 == 0 {
            return Err(Error::Dims("logit grid needs positive dims and vocabulary".into()));
        }
        if values.len() != dims.0 * dims.1 * vocab {
            return Err(Error::Shape(format!(
                "{} logits for {}x{}x{vocab}",
                values.len(),
                dims.0,
                dims.1
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits must be finite".into()));
        }
        Ok(Self { dims, vocab, values })
    }

    pub fn constant(dims: (usize, usize), vocab: usize, value: f64) -> Self {
        Self {
            dims,
            vocab,
            values: vec![value; dims.0 * dims.1 * vocab],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn positions(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.vocab)
    }

    /// Per-position argmax, ties to the lowest index.
    pub fn argmax(&self) -> Vec<u32> {
        self.positions().map(argmax).collect()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as u32
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `Q_CFG = (1 + ω) Q_c - ω Q_∅`, evaluated as `Q_c + ω (Q_c - Q_∅)` so that
/// `ω = 0` and `Q_c = Q_∅` both return `Q_c` bit for bit.
pub fn cfg_combine(q_c: &LogitGrid, q_null: &LogitGrid, omega: f64) -> Result<LogitGrid> {
    if q_c.dims != q_null.dims || q_c.vocab != q_null.vocab {
        return Err(Error::Shape(format!(
            "conditional logits {:?}x{} vs unconditional {:?}x{}",
            q_c.dims, q_c.vocab, q_null.dims, q_null.vocab
        )));
    }
    let values = q_c
        .values
        .iter()
        .zip(&q_null.values)
        .map(|(c, n)| c + omega * (c - n))
        .collect();
    LogitGrid::new(q_c.dims, q_c.vocab, values)
}

/// One stage's output of a predictor.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: LogitGrid,
    /// Prototype used for the conditional branch, when the model has one.
    pub prototype: Option<usize>,
}

/// A next-scale model: maps the canvas `Z_{k-1}`, condition and `<SOS>` token
/// to logits over the codebook for stage `k`.
pub trait Predictor: Send + Sync {
    fn schedule(&self) -> &ScaleSchedule;
    fn codebook(&self) -> &Codebook;
    fn decoder(&self) -> &Decoder;
    /// Clean `<SOS>` token for a condition.
    fn sos(&self, condition: &ConditionEmbedding) -> Result<SosToken>;
    fn predict(
        &self,
        canvas: &FeatureGrid,
        condition: &ConditionEmbedding,
        sos: &SosToken,
        k: usize,
    ) -> Result<Prediction>;
}

pub(crate) fn check_stage(schedule: &ScaleSchedule, canvas: &FeatureGrid, k: usize, dim: usize) -> Result<()> {
    if k == 0 || k > schedule.len() {
        return Err(Error::Range(format!("stage {k} outside 1..={}", schedule.len())));
    }
    if canvas.dims() != schedule.full() || canvas.channels() != dim {
        return Err(Error::Dims(format!(
            "canvas is {:?}x{}, model expects {:?}x{dim}",
            canvas.dims(),
            canvas.channels(),
            schedule.full()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_of(dims: (usize, usize), vocab: usize) -> impl Strategy<Value = LogitGrid> {
        prop::collection::vec(-10.0f64..10.0, dims.0 * dims.1 * vocab)
            .prop_map(move |v| LogitGrid::new(dims, vocab, v).unwrap())
    }

    #[test]
    fn cfg_constant_grids() {
        let c = LogitGrid::constant((2, 2), 3, 2.0);
        let n = LogitGrid::constant((2, 2), 3, 1.0);
        let out = cfg_combine(&c, &n, 1.0).unwrap();
        assert!(out.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn cfg_shape_mismatch() {
        let c = LogitGrid::constant((2, 2), 3, 0.0);
        let n = LogitGrid::constant((2, 2), 4, 0.0);
        assert!(cfg_combine(&c, &n, 1.0).is_err());
    }

    #[test]
    fn embedding_is_unit_norm() {
        let c = ConditionEmbedding::new(vec![3.0, 4.0], 7).unwrap();
        assert_eq!(c.values(), &[0.6, 0.8]);
        assert!(ConditionEmbedding::new(vec![0.0, 0.0], 0).is_err());
        assert!(ConditionEmbedding::new(vec![f64::NAN], 0).is_err());
    }

    proptest! {
        #[test]
        fn cfg_identities(q in grid_of((3, 2), 5), w in -4.0f64..6.0) {
            prop_assert_eq!(&cfg_combine(&q, &q, w).unwrap(), &q);
            let other = LogitGrid::constant((3, 2), 5, 1.5);
            prop_assert_eq!(&cfg_combine(&q, &other, 0.0).unwrap(), &q);
        }

        #[test]
        fn cfg_argmax_invariant_under_shift(q in grid_of((2, 3), 4), shifts in prop::collection::vec(-5.0f64..5.0, 6), w in 0.0f64..8.0) {
            let null: Vec<f64> = q.values().chunks(4).zip(&shifts)
                .flat_map(|(row, s)| row.iter().map(move |v| v - s))
                .collect();
            let null = LogitGrid::new((2, 3), 4, null).unwrap();
            let out = cfg_combine(&q, &null, w).unwrap();
            for (a, b) in out.positions().zip(q.positions()) {
                // Ties can flip under rounding only when two logits are equal.
                let (ia, ib) = (argmax(a), argmax(b));
                prop_assert!(ia == ib || (b[ia as usize] - b[ib as usize]).abs() < 1e-9);
            }
        }
    }
}
