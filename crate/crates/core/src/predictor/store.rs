//! On-disk models: a JSON manifest next to a binary parameter file, a codebook
//! file and (for prototype models) one pyramid file per prototype, all
//! referenced by paths relative to the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binary::{decode_blocks, encode_blocks, load_codebook, load_pyramid, read_file, save_codebook, save_pyramid, write_file};
use crate::codec::Codebook;
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, ScaleSchedule};
use crate::image::Decoder;

use super::linear::raw_parts;
use super::{ConditionEmbedding, LinearModel, Prediction, Predictor, PrototypeModel, PrototypeParams, PrototypeSet, SosToken};

pub const MANIFEST: &str = "model.json";
const CODEBOOK: &str = "codebook.varc";
const PARAMS: &str = "params.varm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Prototype,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub condition_id: u64,
    pub pyramids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: ModelKind,
    pub schedule: ScaleSchedule,
    pub decoder: Decoder,
    pub cond_dim: usize,
    pub codebook: String,
    pub parameters: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototype: Option<PrototypeParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionEntry>,
}

/// Either model behind one [`Predictor`].
#[derive(Debug, Clone)]
pub enum AnyModel {
    Prototype(PrototypeModel),
    Linear(LinearModel),
}

impl AnyModel {
    fn inner(&self) -> &dyn Predictor {
        match self {
            AnyModel::Prototype(m) => m,
            AnyModel::Linear(m) => m,
        }
    }

    pub fn as_prototype(&self) -> Option<&PrototypeModel> {
        match self {
            AnyModel::Prototype(m) => Some(m),
            AnyModel::Linear(_) => None,
        }
    }
}

impl Predictor for AnyModel {
    fn schedule(&self) -> &ScaleSchedule {
        self.inner().schedule()
    }
    fn codebook(&self) -> &Codebook {
        self.inner().codebook()
    }
    fn decoder(&self) -> &Decoder {
        self.inner().decoder()
    }
    fn sos(&self, condition: &ConditionEmbedding) -> Result<SosToken> {
        self.inner().sos(condition)
    }
    fn predict(&self, canvas: &FeatureGrid, condition: &ConditionEmbedding, sos: &SosToken, k: usize) -> Result<Prediction> {
        self.inner().predict(canvas, condition, sos, k)
    }
}

/// Writes `model` into directory `dir`; returns the manifest path.
pub fn save_model(dir: &Path, model: &AnyModel) -> Result<PathBuf> {
    save_codebook(&dir.join(CODEBOOK), model.codebook())?;
    let manifest = match model {
        AnyModel::Prototype(m) => {
            let mut blocks: Vec<Vec<f64>> = vec![m.sos_projection().to_vec()];
            let mut conditions = Vec::new();
            for set in m.sets() {
                let id = set.embedding.condition_id();
                blocks.push(set.embedding.values().to_vec());
                blocks.push(set.keys.concat());
                let mut files = Vec::new();
                for (p, pyr) in set.pyramids.iter().enumerate() {
                    let name = format!("teacher_c{id}_p{p}.varp");
                    save_pyramid(&dir.join(&name), pyr, m.codebook())?;
                    files.push(name);
                }
                conditions.push(ConditionEntry {
                    condition_id: id,
                    pyramids: files,
                });
            }
            let refs: Vec<&[f64]> = blocks.iter().map(Vec::as_slice).collect();
            write_file(&dir.join(PARAMS), &encode_blocks("prototype", &refs))?;
            ModelManifest {
                kind: ModelKind::Prototype,
                schedule: m.schedule().clone(),
                decoder: m.decoder().clone(),
                cond_dim: m.sets().first().map_or(0, |s| s.embedding.dim()),
                codebook: CODEBOOK.into(),
                parameters: PARAMS.into(),
                prototype: Some(m.params),
                conditions,
            }
        }
        AnyModel::Linear(m) => {
            let params = m.parameters();
            write_file(
                &dir.join(PARAMS),
                &encode_blocks("linear", &[m.sos_projection(), &params]),
            )?;
            let (schedule, _, decoder) = raw_parts(m);
            ModelManifest {
                kind: ModelKind::Linear,
                schedule: schedule.clone(),
                decoder: decoder.clone(),
                cond_dim: m.cond_dim(),
                codebook: CODEBOOK.into(),
                parameters: PARAMS.into(),
                prototype: None,
                conditions: Vec::new(),
            }
        }
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&path, json.as_bytes())?;
    Ok(path)
}

/// Loads a model from its manifest file or the directory holding it.
pub fn load_model(path: &Path) -> Result<AnyModel> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = read_file(&manifest_path, "run `vardiv build-model` or `vardiv train` first")?;
    let corrupt = |reason: String| Error::Corrupt {
        path: manifest_path.clone(),
        reason,
    };
    let m: ModelManifest = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let schedule = ScaleSchedule::new(m.schedule.scales().to_vec())?;
    let decoder = Decoder::new(m.decoder.weights.clone(), m.decoder.bias, m.decoder.channels)?;
    let codebook = load_codebook(&dir.join(&m.codebook))?;
    let params_path = dir.join(&m.parameters);
    let raw = read_file(&params_path, "the model directory is incomplete; rebuild the model")?;
    let bad_params = |reason: String| Error::Corrupt {
        path: params_path.clone(),
        reason,
    };
    match m.kind {
        ModelKind::Prototype => {
            let blocks = decode_blocks(&raw, "prototype").map_err(bad_params)?;
            if blocks.len() != 1 + 2 * m.conditions.len() {
                return Err(bad_params(format!("{} blocks for {} conditions", blocks.len(), m.conditions.len())));
            }
            let mut sets = Vec::new();
            for (i, entry) in m.conditions.iter().enumerate() {
                let emb = blocks[1 + 2 * i].clone();
                let keys: Vec<Vec<f64>> = blocks[2 + 2 * i]
                    .chunks(m.cond_dim.max(1))
                    .map(<[f64]>::to_vec)
                    .collect();
                let embedding = ConditionEmbedding::new(emb.clone(), entry.condition_id)?.with_values(emb)?;
                let pyramids = entry
                    .pyramids
                    .iter()
                    .map(|f| load_pyramid(&dir.join(f)))
                    .collect::<Result<Vec<_>>>()?;
                sets.push(PrototypeSet::new(embedding, keys, pyramids, &codebook)?);
            }
            let params = m.prototype.ok_or_else(|| corrupt("prototype model lacks parameters".into()))?;
            Ok(AnyModel::Prototype(PrototypeModel::new(
                schedule,
                codebook,
                decoder,
                params,
                blocks[0].clone(),
                sets,
            )?))
        }
        ModelKind::Linear => {
            let blocks = decode_blocks(&raw, "linear").map_err(bad_params)?;
            if blocks.len() != 2 {
                return Err(bad_params(format!("expected 2 blocks, got {}", blocks.len())));
            }
            let mut model = LinearModel::new(schedule, codebook, decoder, m.cond_dim, blocks[0].clone())?;
            model.set_parameters(&blocks[1])?;
            Ok(AnyModel::Linear(model))
        }
    }
}
