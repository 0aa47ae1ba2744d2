//! Pixel-space diversity and quality measurements.
//!
//! These are stand-ins for network-based metrics: reports label them
//! `MPD_pix`, `Vendi_pix`, `Frechet_pix` and `Q_proxy`. Only comparisons
//! between methods are meaningful.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RngStream;
use crate::image::Image;

/// Images generated for one condition.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub condition_id: u64,
    pub images: Vec<Image>,
    pub extractor: String,
}

impl SampleSet {
    pub fn new(condition_id: u64, images: Vec<Image>, extractor: impl Into<String>) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::Range(format!("a sample set needs n >= 2 images, got {}", images.len())));
        }
        check_same_dims(&images)?;
        Ok(Self {
            condition_id,
            images,
            extractor: extractor.into(),
        })
    }
}

fn check_same_dims(images: &[Image]) -> Result<()> {
    if let Some(first) = images.first() {
        if images.iter().any(|i| i.dims() != first.dims()) {
            return Err(Error::Dims("all images in a set must share dimensions".into()));
        }
    }
    Ok(())
}

/// `‖a - b‖₂ / √(pixels · 3)`.
pub fn pixel_distance(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Dims(format!("image dims {:?} vs {:?}", a.dims(), b.dims())));
    }
    let (x, y) = (a.pixels(), b.pixels());
    let ss: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// Mean of [`pixel_distance`] over all unordered pairs.
pub fn mean_pairwise_distance(images: &[Image]) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::Range("mean pairwise distance needs at least two images".into()));
    }
    check_same_dims(images)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            total += pixel_distance(&images[i], &images[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Eigen-decomposition of a symmetric matrix: `a = V diag(values) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Row-major `n x n`; column `j` is the eigenvector of `values[j]`.
    pub vectors: Vec<f64>,
    pub sweeps: usize,
}

const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `1e-10 · max(1, ‖a‖_F)`, at most 100 sweeps.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<SymmetricEigen> {
    if a.len() != n * n {
        return Err(Error::Shape(format!("{} entries for a {n}x{n} matrix", a.len())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entries must be finite".into()));
    }
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a[i * n + j], a[j * n + i]);
            if (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
                return Err(Error::Shape("matrix is not symmetric".into()));
            }
        }
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) > JACOBI_TOL * scale {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Invariant(format!(
                "Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (x, y) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * x - s * y;
                    m[k * n + q] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * x - s * y;
                    m[q * n + k] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * x - s * y;
                    v[k * n + q] = s * x + c * y;
                }
            }
        }
    }
    Ok(SymmetricEigen {
        values: (0..n).map(|i| m[i * n + i]).collect(),
        vectors: v,
        sweeps,
    })
}

/// Cosine similarity of two flattened images. Two all-zero images count as
/// identical; an all-zero image is orthogonal to everything else.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
    }
}

/// `exp(-Σ λ_i log λ_i)` over the eigenvalues of `kernel / n`.
pub fn vendi_from_kernel(kernel: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Range("Vendi score needs at least one item".into()));
    }
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity kernel has non-finite entries".into()));
    }
    let scaled: Vec<f64> = kernel.iter().map(|k| k / n as f64).collect();
    let eig = symmetric_eigen(&scaled, n)?;
    let entropy: f64 = eig
        .values
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| -l * l.ln())
        .sum();
    // Round-off can push the exponent a hair outside the exact range.
    Ok(entropy.exp().clamp(1.0, n as f64))
}

/// Vendi score with the cosine-similarity kernel on flattened pixels.
pub fn vendi_score(images: &[Image]) -> Result<f64> {
    check_same_dims(images)?;
    let n = images.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let s = cosine_similarity(images[i].pixels(), images[j].pixels());
            k[i * n + j] = s;
            k[j * n + i] = s;
        }
    }
    vendi_from_kernel(&k, n)
}

const COV_EPS: f64 = 1e-8;

fn mean_cov(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mu = vec![0.0; d];
    for v in x {
        for (m, a) in mu.iter_mut().zip(v) {
            *m += a / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for v in x {
        for i in 0..d {
            let di = v[i] - mu[i];
            for j in 0..d {
                cov[i * d + j] += di * (v[j] - mu[j]) / (n - 1.0);
            }
        }
    }
    (mu, cov)
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn symmetrize(a: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (a[i * d + j] + a[j * d + i]);
            a[i * d + j] = m;
            a[j * d + i] = m;
        }
    }
}

/// Square root of a symmetric PSD matrix; negative round-off eigenvalues are
/// treated as zero.
pub fn psd_sqrt(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let eig = symmetric_eigen(a, d)?;
    let mut out = vec![0.0; d * d];
    for (k, &l) in eig.values.iter().enumerate() {
        let r = l.max(0.0).sqrt();
        for i in 0..d {
            let vik = eig.vectors[i * d + k] * r;
            for j in 0..d {
                out[i * d + j] += vik * eig.vectors[j * d + k];
            }
        }
    }
    symmetrize(&mut out, d);
    Ok(out)
}

/// Fréchet distance between Gaussians `N(μ_a, Σ_a)` and `N(μ_b, Σ_b)`.
pub fn frechet_gaussian(mu_a: &[f64], cov_a: &[f64], mu_b: &[f64], cov_b: &[f64]) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.len() != d * d || cov_b.len() != d * d {
        return Err(Error::Dims("Gaussian parameters have mismatched dimensions".into()));
    }
    let reg = |c: &[f64]| {
        let mut c = c.to_vec();
        for i in 0..d {
            c[i * d + i] += COV_EPS;
        }
        c
    };
    let (ca, cb) = (reg(cov_a), reg(cov_b));
    let ra = psd_sqrt(&ca, d)?;
    let mut inner = matmul(&matmul(&ra, &cb, d), &ra, d);
    symmetrize(&mut inner, d);
    let cross = psd_sqrt(&inner, d)?;
    let mean_term: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let trace: f64 = (0..d).map(|i| ca[i * d + i] + cb[i * d + i] - 2.0 * cross[i * d + i]).sum();
    Ok((mean_term + trace).max(0.0))
}

/// Fréchet distance between the Gaussians fitted to two feature sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Range("each feature set needs at least two vectors".into()));
    }
    let d = a[0].len();
    if d == 0 || a.iter().chain(b).any(|v| v.len() != d) {
        return Err(Error::Dims("feature vectors must share one non-zero dimension".into()));
    }
    let (ma, ca) = mean_cov(a);
    let (mb, cb) = mean_cov(b);
    frechet_gaussian(&ma, &ca, &mb, &cb)
}

/// Fixed Gaussian random projection of flattened images to a few features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProjection {
    in_dim: usize,
    out_dim: usize,
    matrix: Vec<f64>,
}

impl FeatureProjection {
    pub fn new(in_dim: usize, out_dim: usize, rng: RngStream) -> Self {
        let mut g = rng.generator();
        let scale = 1.0 / (in_dim as f64).sqrt();
        let matrix = (0..in_dim * out_dim).map(|_| g.normal() * scale).collect();
        Self {
            in_dim,
            out_dim,
            matrix,
        }
    }

    pub fn apply(&self, image: &Image) -> Result<Vec<f64>> {
        let x = image.pixels();
        if x.len() != self.in_dim {
            return Err(Error::Dims(format!(
                "projection expects {} values, image has {}",
                self.in_dim,
                x.len()
            )));
        }
        Ok(self
            .matrix
            .chunks_exact(self.in_dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

/// Negative distance to the nearest reference image; 0 is best.
pub fn quality_proxy(image: &Image, references: &[Image]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Range("quality proxy needs at least one reference".into()));
    }
    let mut best = f64::INFINITY;
    for r in references {
        best = best.min(pixel_distance(image, r)?);
    }
    Ok(-best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpd: f64,
    pub vendi: f64,
    pub frechet: f64,
    pub quality: f64,
    pub n: usize,
}

/// All four metrics for one condition. `references` are the condition's
/// prototype images; Fréchet compares projected features of both sets.
pub fn evaluate(set: &SampleSet, references: &[Image], projection: &FeatureProjection) -> Result<MetricsReport> {
    let feats = |imgs: &[Image]| imgs.iter().map(|i| projection.apply(i)).collect::<Result<Vec<_>>>();
    let quality = set
        .images
        .iter()
        .map(|i| quality_proxy(i, references))
        .sum::<Result<f64>>()?
        / set.images.len() as f64;
    Ok(MetricsReport {
        mpd: mean_pairwise_distance(&set.images)?,
        vendi: vendi_score(&set.images)?,
        frechet: frechet_distance(&feats(&set.images)?, &feats(references)?)?,
        quality,
        n: set.images.len(),
    })
}

/// One CSV row of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub condition_id: u64,
    pub method: String,
    pub mpd: f64,
    pub vendi: f64,
    pub frechet: f64,
    pub quality: f64,
    pub n: usize,
    pub config_digest: String,
}

impl MetricsRow {
    pub fn new(condition_id: u64, method: &str, r: &MetricsReport, digest: &str) -> Self {
        Self {
            condition_id,
            method: method.into(),
            mpd: r.mpd,
            vendi: r.vendi,
            frechet: r.frechet,
            quality: r.quality,
            n: r.n,
            config_digest: digest.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub digest: String,
    pub diversity: f64,
    pub quality: f64,
    pub dominated: bool,
}

impl ParetoPoint {
    pub fn new(digest: impl Into<String>, diversity: f64, quality: f64) -> Self {
        Self {
            digest: digest.into(),
            diversity,
            quality,
            dominated: false,
        }
    }

    /// At least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.diversity >= other.diversity
            && self.quality >= other.quality
            && (self.diversity > other.diversity || self.quality > other.quality)
    }
}

/// Sets each point's `dominated` flag and returns the non-dominated points
/// sorted by diversity (then quality, then digest).
pub fn pareto_front(points: &mut [ParetoPoint]) -> Vec<ParetoPoint> {
    for i in 0..points.len() {
        let d = points.iter().any(|q| q.dominates(&points[i]));
        points[i].dominated = d;
    }
    let mut front: Vec<ParetoPoint> = points.iter().filter(|p| !p.dominated).cloned().collect();
    front.sort_by(|a, b| {
        a.diversity
            .total_cmp(&b.diversity)
            .then(b.quality.total_cmp(&a.quality))
            .then(a.digest.cmp(&b.digest))
    });
    front
}
