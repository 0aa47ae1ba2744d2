//! Multi-scale residual quantization.
//!
//! A feature map `Z` is decomposed into residual token grids `r_1..r_K`. Stage
//! `k` quantizes the downsampled residual between `Z` and the running canvas,
//! and the canvas is the sum of every token grid so far upsampled to full
//! resolution, accumulated in ascending `k`. Scale-travel runs the same loop on
//! an intermediate canvas and stops after `m` stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, RngStream, ScaleSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerMode {
    Vq,
    /// Token payloads carry the raw residual vectors; lookup is bypassed.
    Identity,
}

/// The `V x D` quantizer table.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    mode: QuantizerMode,
    dim: usize,
    /// Row-major `V x D`; empty in identity mode.
    vectors: Vec<f64>,
}

impl Codebook {
    pub fn vq(dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || vectors.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "codebook needs at least one row of dimension {dim}, got {} values",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook entry".into()));
        }
        Ok(Self {
            mode: QuantizerMode::Vq,
            dim,
            vectors,
        })
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim > 0);
        Self {
            mode: QuantizerMode::Identity,
            dim,
            vectors: Vec::new(),
        }
    }

    pub fn mode(&self) -> QuantizerMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows (0 in identity mode).
    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.vectors[v * self.dim..(v + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    /// Nearest row by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> u32 {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (v, row) in self.rows().enumerate() {
            let d = sq_dist(row, x);
            if d < best_d {
                best_d = d;
                best = v;
            }
        }
        best as u32
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenPayload {
    Indices(Vec<u32>),
    Vectors(Vec<f64>),
}

/// Residual token map `r_k` at stage `scale_index` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub scale_index: usize,
    pub dims: (usize, usize),
    pub payload: TokenPayload,
}

impl TokenGrid {
    pub fn from_indices(scale_index: usize, dims: (usize, usize), indices: Vec<u32>) -> Result<Self> {
        if indices.len() != dims.0 * dims.1 {
            return Err(Error::Shape(format!(
                "{} indices for a {}x{} grid",
                indices.len(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self {
            scale_index,
            dims,
            payload: TokenPayload::Indices(indices),
        })
    }

    pub fn indices(&self) -> Option<&[u32]> {
        match &self.payload {
            TokenPayload::Indices(ix) => Some(ix),
            TokenPayload::Vectors(_) => None,
        }
    }
}

/// Ordered prefix `r_1..r_L` of a token pyramid over a full schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPyramid {
    pub schedule: ScaleSchedule,
    pub grids: Vec<TokenGrid>,
}

impl TokenPyramid {
    pub fn new(schedule: ScaleSchedule, grids: Vec<TokenGrid>) -> Result<Self> {
        if grids.len() > schedule.len() {
            return Err(Error::Shape(format!(
                "{} grids for a {}-stage schedule",
                grids.len(),
                schedule.len()
            )));
        }
        for (i, g) in grids.iter().enumerate() {
            if g.scale_index != i + 1 || g.dims != schedule.scale(i + 1) {
                return Err(Error::Shape(format!(
                    "grid {i} has scale index {} and dims {:?}, expected {} and {:?}",
                    g.scale_index,
                    g.dims,
                    i + 1,
                    schedule.scale(i + 1)
                )));
            }
        }
        Ok(Self { schedule, grids })
    }

    pub fn empty(schedule: ScaleSchedule) -> Self {
        Self {
            schedule,
            grids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn prefix(&self, m: usize) -> Self {
        Self {
            schedule: self.schedule.clone(),
            grids: self.grids[..m.min(self.grids.len())].to_vec(),
        }
    }

    pub fn push(&mut self, grid: TokenGrid) -> Result<()> {
        let k = self.grids.len() + 1;
        if k > self.schedule.len() || grid.scale_index != k || grid.dims != self.schedule.scale(k) {
            return Err(Error::Shape(format!(
                "cannot append grid with scale index {} at position {k}",
                grid.scale_index
            )));
        }
        self.grids.push(grid);
        Ok(())
    }
}

pub fn quantize(residual: &FeatureGrid, codebook: &Codebook, scale_index: usize) -> Result<TokenGrid> {
    if residual.channels() != codebook.dim() {
        return Err(Error::Shape(format!(
            "residual has {} channels, codebook dimension is {}",
            residual.channels(),
            codebook.dim()
        )));
    }
    let payload = match codebook.mode() {
        QuantizerMode::Identity => TokenPayload::Vectors(residual.values().to_vec()),
        QuantizerMode::Vq => {
            TokenPayload::Indices(residual.positions().map(|x| codebook.nearest(x)).collect())
        }
    };
    Ok(TokenGrid {
        scale_index,
        dims: residual.dims(),
        payload,
    })
}

pub fn dequantize(tokens: &TokenGrid, codebook: &Codebook) -> Result<FeatureGrid> {
    let (h, w) = tokens.dims;
    let d = codebook.dim();
    match (&tokens.payload, codebook.mode()) {
        (TokenPayload::Vectors(v), QuantizerMode::Identity) => FeatureGrid::new(h, w, d, v.clone()),
        (TokenPayload::Indices(ix), QuantizerMode::Vq) => {
            let v = codebook.len();
            let mut values = Vec::with_capacity(h * w * d);
            for &i in ix {
                if i as usize >= v {
                    return Err(Error::Range(format!("token {i} outside codebook of {v} rows")));
                }
                values.extend_from_slice(codebook.row(i as usize));
            }
            FeatureGrid::new(h, w, d, values)
        }
        _ => Err(Error::Shape("token payload does not match codebook mode".into())),
    }
}

/// Canvas `Z_k = sum_i up(r_i, s_K)` of the pyramid's grids.
pub fn accumulate_canvas(pyramid: &TokenPyramid, codebook: &Codebook) -> Result<FeatureGrid> {
    if pyramid.is_empty() {
        return Err(Error::Dims("cannot accumulate an empty prefix".into()));
    }
    let (h, w) = pyramid.schedule.full();
    let mut canvas = FeatureGrid::zeros(h, w, codebook.dim());
    for g in &pyramid.grids {
        canvas.add_assign(&dequantize(g, codebook)?.resample((h, w))?)?;
    }
    Ok(canvas)
}

fn encode_stages(
    z: &FeatureGrid,
    schedule: &ScaleSchedule,
    stages: usize,
    codebook: &Codebook,
) -> Result<TokenPyramid> {
    if z.dims() != schedule.full() {
        return Err(Error::Dims(format!(
            "feature map is {:?}, schedule ends at {:?}",
            z.dims(),
            schedule.full()
        )));
    }
    if z.channels() != codebook.dim() {
        return Err(Error::Shape(format!(
            "feature map has {} channels, codebook dimension is {}",
            z.channels(),
            codebook.dim()
        )));
    }
    let full = schedule.full();
    let mut canvas = FeatureGrid::zeros(full.0, full.1, z.channels());
    let mut pyramid = TokenPyramid::empty(schedule.clone());
    for k in 1..=stages {
        let residual = z.sub(&canvas)?.resample(schedule.scale(k))?;
        let r = quantize(&residual, codebook, k)?;
        canvas.add_assign(&dequantize(&r, codebook)?.resample(full)?)?;
        pyramid.push(r)?;
    }
    Ok(pyramid)
}

/// Encodes `z` (at the schedule's full resolution) into `r_1..r_K`.
pub fn multi_scale_encode(
    z: &FeatureGrid,
    schedule: &ScaleSchedule,
    codebook: &Codebook,
) -> Result<TokenPyramid> {
    encode_stages(z, schedule, schedule.len(), codebook)
}

/// Re-encodes an intermediate canvas `z_l` into the coarse prefix `r~_1..r~_m`.
pub fn scale_travel(
    z_l: &FeatureGrid,
    schedule: &ScaleSchedule,
    m: usize,
    codebook: &Codebook,
) -> Result<TokenPyramid> {
    if m == 0 || m > schedule.len() {
        return Err(Error::Range(format!(
            "scale-travel target {m} outside 1..={}",
            schedule.len()
        )));
    }
    encode_stages(z_l, schedule, m, codebook)
}

/// k-means (k-means++ seeding, fixed Lloyd iterations) over `samples`, with a
/// reserved all-zero row appended after the `size` centroids.
pub fn fit_codebook(
    samples: &[Vec<f64>],
    size: usize,
    iterations: usize,
    rng: RngStream,
) -> Result<Codebook> {
    if size == 0 {
        return Err(Error::Range("codebook size must be positive".into()));
    }
    if samples.len() < size {
        return Err(Error::Range(format!(
            "{} samples cannot seed {size} centroids",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if dim == 0 || samples.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape("samples must share a positive dimension".into()));
    }
    let mut g = rng.generator();

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = vec![samples[g.below(samples.len())].clone()];
    let mut nearest: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centroids[0])).collect();
    while centroids.len() < size {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = g.uniform() * total;
            let mut acc = 0.0;
            let mut idx = samples.len() - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            g.below(samples.len())
        };
        let c = samples[pick].clone();
        for (n, s) in nearest.iter_mut().zip(samples) {
            *n = n.min(sq_dist(s, &c));
        }
        centroids.push(c);
    }

    for _ in 0..iterations {
        let mut sums = vec![vec![0.0; dim]; size];
        let mut counts = vec![0usize; size];
        for s in samples {
            let (best, _) = centroids
                .iter()
                .enumerate()
                .map(|(i, c)| (i, sq_dist(s, c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            counts[best] += 1;
            for (a, b) in sums[best].iter_mut().zip(s) {
                *a += b;
            }
        }
        for ((c, sum), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            // empty clusters keep their previous centroid
            if n > 0 {
                for (ci, si) in c.iter_mut().zip(sum) {
                    *ci = si / n as f64;
                }
            }
        }
    }

    let mut flat: Vec<f64> = centroids.into_iter().flatten().collect();
    flat.extend(std::iter::repeat_n(0.0, dim));
    Codebook::vq(dim, flat)
}

/// Residual vectors seen by an identity-mode encoding of each map, one sample
/// per token position at every stage. Used to fit codebooks.
pub fn residual_samples(maps: &[FeatureGrid], schedule: &ScaleSchedule) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for z in maps {
        let ident = Codebook::identity(z.channels());
        let pyr = multi_scale_encode(z, schedule, &ident)?;
        for g in &pyr.grids {
            if let TokenPayload::Vectors(v) = &g.payload {
                out.extend(v.chunks_exact(z.channels()).map(<[f64]>::to_vec));
            }
        }
    }
    Ok(out)
}
