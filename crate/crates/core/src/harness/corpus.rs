use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binary::{read_file, write_file};
use crate::error::{Error, Result};
use crate::grid::{mix_ids, FeatureGrid, RngStream, StreamRng};
use crate::image::{Decoder, Image};
use crate::predictor::ConditionEmbedding;

use super::config::CorpusSpec;

pub const CORPUS_MANIFEST: &str = "corpus.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub condition_id: u64,
    pub embedding: Vec<f64>,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub seed: u64,
    pub conditions: Vec<CorpusEntry>,
}

/// A loaded corpus: per condition, a clean embedding and `P` prototype images.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub conditions: Vec<(ConditionEmbedding, Vec<Image>)>,
}

const PALETTE: [[f64; 3]; 8] = [
    [0.95, 0.15, 0.1],
    [0.1, 0.85, 0.2],
    [0.15, 0.3, 0.95],
    [0.95, 0.85, 0.1],
    [0.85, 0.2, 0.9],
    [0.1, 0.9, 0.9],
    [0.95, 0.55, 0.1],
    [0.6, 0.95, 0.5],
];

fn shuffle<T>(v: &mut [T], g: &mut StreamRng) {
    for i in (1..v.len()).rev() {
        v.swap(i, g.below(i + 1));
    }
}

/// Prototype images of one condition: a faint condition-wide gradient plus
/// one soft shape per prototype, each in its own cell of a `g x g` layout.
pub fn condition_images(spec: &CorpusSpec, seed: u64, condition: u64) -> Result<Vec<Image>> {
    let (h, w) = (spec.height, spec.width);
    let p_count = spec.prototypes;
    let cells = (p_count as f64).sqrt().ceil() as usize;
    let mut g = RngStream::new(seed, mix_ids(&[condition, 0x636f_7270])).generator();
    let angle = g.uniform() * std::f64::consts::TAU;
    let tint = PALETTE[g.below(PALETTE.len())];
    let mut order: Vec<usize> = (0..cells * cells).collect();
    shuffle(&mut order, &mut g);
    let mut colors: Vec<usize> = (0..PALETTE.len()).collect();
    shuffle(&mut colors, &mut g);
    let (ch, cw) = (h as f64 / cells as f64, w as f64 / cells as f64);
    let mut out = Vec::with_capacity(p_count);
    for p in 0..p_count {
        let mut pg = RngStream::new(seed, mix_ids(&[condition, p as u64, 0x7368_6170])).generator();
        let cell = order[p];
        let size = ch.min(cw);
        let ci = (cell / cells) as f64 * ch + ch / 2.0 + (pg.uniform() - 0.5) * 0.15 * size - 0.5;
        let cj = (cell % cells) as f64 * cw + cw / 2.0 + (pg.uniform() - 0.5) * 0.15 * size - 0.5;
        let radius = size * (0.28 + 0.08 * pg.uniform());
        let square = pg.uniform() < 0.5;
        let color = PALETTE[colors[p % colors.len()]];
        let grid = FeatureGrid::from_fn(h, w, 3, |i, j, c| {
            let (di, dj) = (i as f64 - ci, j as f64 - cj);
            let r = if square { di.abs().max(dj.abs()) } else { (di * di + dj * dj).sqrt() };
            let mask = 1.0 / (1.0 + ((r - radius) / 0.6).exp());
            let u = (i as f64 / h.max(2) as f64 - 0.5) * angle.cos() + (j as f64 / w.max(2) as f64 - 0.5) * angle.sin();
            let bg = 0.08 + 0.1 * u;
            (bg * tint[c] + mask * color[c]).clamp(0.0, 1.0)
        })?;
        out.push(Image::new(grid)?);
    }
    Ok(out)
}

/// Unit embedding of condition `c`, drawn from its own stream.
pub fn condition_embedding(spec: &CorpusSpec, seed: u64, c: u64) -> Result<ConditionEmbedding> {
    let mut g = RngStream::new(seed, mix_ids(&[c, 0x656d_6264])).generator();
    let raw: Vec<f64> = (0..spec.cond_dim).map(|_| g.normal()).collect();
    ConditionEmbedding::new(raw, c)
}

fn image_name(c: u64, p: usize) -> String {
    format!("c{c:03}_p{p}.ppm")
}

/// Writes the corpus images and `corpus.json` into `dir`.
pub fn synth_corpus(spec: &CorpusSpec, seed: u64, dir: &Path) -> Result<PathBuf> {
    if spec.conditions == 0 || spec.prototypes < 2 {
        return Err(Error::Config("synth needs C >= 1 and P >= 2".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(spec.conditions);
    for c in 0..spec.conditions as u64 {
        let embedding = condition_embedding(spec, seed, c)?.values().to_vec();
        let mut names = Vec::new();
        for (p, img) in condition_images(spec, seed, c)?.iter().enumerate() {
            let name = image_name(c, p);
            img.write_ppm(&dir.join(&name))?;
            names.push(name);
        }
        entries.push(CorpusEntry {
            condition_id: c,
            embedding,
            images: names,
        });
    }
    let manifest = CorpusManifest {
        spec: spec.clone(),
        seed,
        conditions: entries,
    };
    let path = dir.join(CORPUS_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&path, json.as_bytes())?;
    Ok(path)
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CORPUS_MANIFEST);
        let bytes = read_file(&path, "run `vardiv synth` first")?;
        let m: CorpusManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let mut conditions = Vec::with_capacity(m.conditions.len());
        for e in m.conditions {
            // Stored values are already unit length; keep them bit for bit.
            let emb = ConditionEmbedding::new(e.embedding.clone(), e.condition_id)?.with_values(e.embedding)?;
            let images = e
                .images
                .iter()
                .map(|n| Image::read_ppm(&dir.join(n)))
                .collect::<Result<Vec<_>>>()?;
            conditions.push((emb, images));
        }
        Ok(Self {
            spec: m.spec,
            conditions,
        })
    }

    /// Prototype feature maps; features are the pixel values themselves.
    pub fn feature_maps(&self) -> Vec<(ConditionEmbedding, Vec<FeatureGrid>)> {
        self.conditions
            .iter()
            .map(|(c, imgs)| (c.clone(), imgs.iter().map(|i| i.grid().clone()).collect()))
            .collect()
    }

    pub fn references(&self, condition_id: u64) -> Result<&[Image]> {
        self.conditions
            .iter()
            .find(|(c, _)| c.condition_id() == condition_id)
            .map(|(_, imgs)| imgs.as_slice())
            .ok_or_else(|| Error::Range(format!("corpus has no condition {condition_id}")))
    }
}

/// Decoder matching [`Corpus::feature_maps`].
pub fn corpus_decoder() -> Decoder {
    Decoder::identity(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::pixel_distance;

    #[test]
    fn two_prototypes_are_separated() {
        let spec = CorpusSpec {
            conditions: 1,
            prototypes: 2,
            ..CorpusSpec::default()
        };
        for seed in 0..20 {
            let imgs = condition_images(&spec, seed, 0).unwrap();
            assert_eq!(imgs.len(), 2);
            assert!(pixel_distance(&imgs[0], &imgs[1]).unwrap() > 0.05);
        }
    }

    #[test]
    fn synth_is_deterministic_and_loads() {
        let spec = CorpusSpec {
            conditions: 2,
            prototypes: 3,
            ..CorpusSpec::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_corpus(&spec, 9, a.path()).unwrap();
        synth_corpus(&spec, 9, b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 7);
        for n in names {
            assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        }
        let corpus = Corpus::load(a.path()).unwrap();
        assert_eq!(corpus.conditions.len(), 2);
        assert!(corpus.conditions.iter().all(|(_, i)| i.len() == 3 && i[0].dims() == (16, 16)));
        assert_eq!(corpus.references(1).unwrap().len(), 3);
    }

    #[test]
    fn missing_corpus_is_reported() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(Corpus::load(d.path()), Err(Error::MissingInput { .. })));
    }
}
