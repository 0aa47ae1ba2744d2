//! Real-valued feature grids, align-corners bilinear resampling and seeded
//! Gaussian streams.
//!
//! Values are stored row-major as `[row][col][channel]`. The resampler uses the
//! align-corners convention: output cell `i` of an axis with `n_out > 1` cells
//! reads source coordinate `i * (n_src - 1) / (n_out - 1)`. An axis collapsed to
//! a single cell takes the mean along that axis, so a `1x1` target is the grid
//! centroid and `1xN` / `Nx1` targets interpolate along the other axis only.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Dims(format!(
                "grid dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at flat index {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "zero-sized grid");
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        let mut g = Self::zeros(height, width, channels);
        g.values.fill(value);
        g
    }

    /// Builds a grid from a per-position closure returning one vector each.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    values.push(f(i, j, c));
                }
            }
        }
        Self::new(height, width, channels, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.width + j) * self.channels;
        &self.values[base..base + self.channels]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let base = (i * self.width + j) * self.channels;
        &mut self.values[base..base + self.channels]
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.channels)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.height != other.height
            || self.width != other.width
            || self.channels != other.channels
        {
            return Err(Error::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn squared_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Bilinear resampling to `target` (rows, cols) using the align-corners
    /// convention described in the module docs.
    pub fn resample(&self, target: (usize, usize)) -> Result<Self> {
        let (th, tw) = target;
        if th == 0 || tw == 0 {
            return Err(Error::Dims(format!("resample target must be positive, got {th}x{tw}")));
        }
        if target == self.dims() {
            return Ok(self.clone());
        }
        let d = self.channels;
        let rows = axis_taps(self.height, th);
        let cols = axis_taps(self.width, tw);

        // rows first: (th, width, d)
        let mut tmp = vec![0.0; th * self.width * d];
        for (oi, tap) in rows.iter().enumerate() {
            for j in 0..self.width {
                for c in 0..d {
                    tmp[(oi * self.width + j) * d + c] =
                        tap.apply(|si| self.values[(si * self.width + j) * d + c]);
                }
            }
        }
        let mut out = vec![0.0; th * tw * d];
        for i in 0..th {
            for (oj, tap) in cols.iter().enumerate() {
                for c in 0..d {
                    out[(i * tw + oj) * d + c] = tap.apply(|sj| tmp[(i * self.width + sj) * d + c]);
                }
            }
        }
        Ok(Self {
            height: th,
            width: tw,
            channels: d,
            values: out,
        })
    }
}

enum Tap {
    Lerp { lo: usize, hi: usize, frac: f64 },
    Mean { n: usize },
}

impl Tap {
    // `a + frac * (b - a)` and `x0 + mean(x - x0)` both return constants bit-exactly.
    fn apply(&self, get: impl Fn(usize) -> f64) -> f64 {
        match *self {
            Tap::Lerp { lo, hi, frac } => {
                let a = get(lo);
                if frac == 0.0 {
                    a
                } else {
                    a + frac * (get(hi) - a)
                }
            }
            Tap::Mean { n } => {
                let x0 = get(0);
                let dev: f64 = (1..n).map(|s| get(s) - x0).sum();
                x0 + dev / n as f64
            }
        }
    }
}

fn axis_taps(n_src: usize, n_out: usize) -> Vec<Tap> {
    if n_out == 1 {
        return vec![Tap::Mean { n: n_src }];
    }
    (0..n_out)
        .map(|i| {
            if n_src == 1 {
                return Tap::Lerp {
                    lo: 0,
                    hi: 0,
                    frac: 0.0,
                };
            }
            let pos = (i * (n_src - 1)) as f64 / (n_out - 1) as f64;
            let lo = (pos.floor() as usize).min(n_src - 1);
            let hi = (lo + 1).min(n_src - 1);
            Tap::Lerp {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Ordered scale sizes `s_1..s_K`; the last entry is the full resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    scales: Vec<(usize, usize)>,
}

impl ScaleSchedule {
    pub fn new(scales: Vec<(usize, usize)>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Dims("scale schedule needs at least one scale".into()));
        }
        if scales.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::Dims("scale sizes must be positive".into()));
        }
        if scales.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return Err(Error::Dims("scale sizes must be non-decreasing".into()));
        }
        Ok(Self { scales })
    }

    /// 1,2,3,4,6,8,16 square scales over a 16x16 grid.
    pub fn desk() -> Self {
        Self {
            scales: vec![(1, 1), (2, 2), (3, 3), (4, 4), (6, 6), (8, 8), (16, 16)],
        }
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Size of stage `k`, 1-based.
    pub fn scale(&self, k: usize) -> (usize, usize) {
        self.scales[k - 1]
    }

    pub fn full(&self) -> (usize, usize) {
        *self.scales.last().expect("non-empty schedule")
    }

    pub fn scales(&self) -> &[(usize, usize)] {
        &self.scales
    }

    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.scales.len() {
            return Err(Error::Range(format!(
                "prefix length {m} outside 1..={}",
                self.scales.len()
            )));
        }
        Ok(Self {
            scales: self.scales[..m].to_vec(),
        })
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit combination of a list of labels.
pub fn mix_ids(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5641_5250_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// A deterministic random stream named by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id as the ChaCha stream selector, so
/// distinct ids give non-overlapping sequences for the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Independent child stream labelled by `label`.
    pub fn fork(&self, label: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: mix_ids(&[self.stream_id, label]),
        }
    }

    pub fn generator(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        StreamRng { rng, spare: None }
    }
}

/// Stateful generator for one [`RngStream`].
#[derive(Debug, Clone)]
pub struct StreamRng {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl StreamRng {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via the Box-Muller transform; both outputs of each pair
    /// are used, in order (cos branch first).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// `n` i.i.d. standard normals drawn from a fresh generator on `stream`.
pub fn gaussian(shape: &[usize], stream: RngStream) -> Result<Vec<f64>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Dims(format!("gaussian shape must be non-empty, got {shape:?}")));
    }
    let n: usize = shape.iter().product();
    let mut g = stream.generator();
    Ok((0..n).map(|_| g.normal()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_value_extends_to_constant() {
        let g = FeatureGrid::new(1, 1, 1, vec![0.7]).unwrap();
        let up = g.resample((4, 4)).unwrap();
        assert!(up.values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn constant_downsample_is_constant() {
        let g = FeatureGrid::constant(8, 8, 2, 0.3);
        let d = g.resample((2, 2)).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.3));
        let c = g.resample((1, 1)).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn two_by_two_to_three_by_three_center() {
        let g = FeatureGrid::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = g.resample((3, 3)).unwrap();
        assert_eq!(up.at(1, 1)[0], 1.5);
        // corners are copied
        assert_eq!(up.at(0, 0)[0], 0.0);
        assert_eq!(up.at(2, 2)[0], 3.0);
        assert_eq!(up.at(0, 1)[0], 0.5);
    }

    #[test]
    fn one_by_one_target_is_centroid() {
        let g = FeatureGrid::new(2, 2, 1, vec![0.0, 1.0, 2.0, 5.0]).unwrap();
        let c = g.resample((1, 1)).unwrap();
        assert!((c.values()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_row_interpolates_columns_only() {
        // 2x3 -> 1x5: mean over rows, lerp over columns
        let g = FeatureGrid::new(2, 3, 1, vec![0.0, 2.0, 4.0, 2.0, 4.0, 6.0]).unwrap();
        let r = g.resample((1, 5)).unwrap();
        let want = [1.0, 2.0, 3.0, 4.0, 5.0];
        for (a, b) in r.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_target_rejected() {
        let g = FeatureGrid::zeros(2, 2, 1);
        assert!(matches!(g.resample((0, 3)), Err(Error::Dims(_))));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(FeatureGrid::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureGrid::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(FeatureGrid::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(ScaleSchedule::new(vec![]).is_err());
        assert!(ScaleSchedule::new(vec![(2, 2), (1, 1)]).is_err());
        assert!(ScaleSchedule::new(vec![(1, 0)]).is_err());
        let s = ScaleSchedule::desk();
        assert_eq!(s.len(), 7);
        assert_eq!(s.full(), (16, 16));
        assert_eq!(s.prefix(3).unwrap().full(), (3, 3));
    }

    #[test]
    fn gaussian_is_deterministic() {
        let s = RngStream::new(7, 11);
        assert_eq!(gaussian(&[3, 5], s).unwrap(), gaussian(&[3, 5], s).unwrap());
    }

    #[test]
    fn gaussian_moments() {
        let x = gaussian(&[100_000], RngStream::new(1, 2)).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn distinct_streams_differ() {
        let a = gaussian(&[16], RngStream::new(3, 1)).unwrap();
        let b = gaussian(&[16], RngStream::new(3, 2)).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn disjoint_streams_share_no_subsequence() {
        // any shared window of 4 consecutive draws would reveal overlapping streams
        let n = 10_000;
        let mut seen = std::collections::HashSet::new();
        let mut ga = RngStream::new(9, 100).generator();
        let a: Vec<u64> = (0..n).map(|_| ga.next_u64()).collect();
        for w in a.windows(4) {
            seen.insert([w[0], w[1], w[2], w[3]]);
        }
        let mut gb = RngStream::new(9, 101).generator();
        let b: Vec<u64> = (0..n).map(|_| gb.next_u64()).collect();
        assert!(b
            .windows(4)
            .all(|w| !seen.contains(&[w[0], w[1], w[2], w[3]])));
        let sa: std::collections::HashSet<u64> = a.iter().copied().collect();
        assert!(b.iter().filter(|v| sa.contains(v)).count() == 0);
    }

    #[test]
    fn empty_gaussian_shape_rejected() {
        assert!(gaussian(&[], RngStream::new(0, 0)).is_err());
    }

    fn grid_strategy() -> impl Strategy<Value = FeatureGrid> {
        (1usize..7, 1usize..7, 1usize..3).prop_flat_map(|(h, w, d)| {
            proptest::collection::vec(-10.0f64..10.0, h * w * d)
                .prop_map(move |v| FeatureGrid::new(h, w, d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn identity_resample_is_bit_exact(g in grid_strategy()) {
            let r = g.resample(g.dims()).unwrap();
            prop_assert_eq!(r.values(), g.values());
        }

        #[test]
        fn constants_survive_any_target(c in -5.0f64..5.0, h in 1usize..9, w in 1usize..9,
                                        th in 1usize..12, tw in 1usize..12) {
            let g = FeatureGrid::constant(h, w, 2, c);
            let r = g.resample((th, tw)).unwrap();
            prop_assert!(r.values().iter().all(|&v| v == c));
        }

        #[test]
        fn resample_is_linear(g1 in grid_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0,
                              th in 1usize..10, tw in 1usize..10, seed in 0u64..1000) {
            let noise = gaussian(&[g1.values().len()], RngStream::new(seed, 0)).unwrap();
            let g2 = FeatureGrid::new(g1.height(), g1.width(), g1.channels(), noise).unwrap();
            let lhs = g1.scale(a).add(&g2.scale(b)).unwrap().resample((th, tw)).unwrap();
            let rhs = g1.resample((th, tw)).unwrap().scale(a)
                .add(&g2.resample((th, tw)).unwrap().scale(b)).unwrap();
            let scale = lhs.max_abs().max(rhs.max_abs()).max(1.0);
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }
    }
}
