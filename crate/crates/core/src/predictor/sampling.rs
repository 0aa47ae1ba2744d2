use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::grid::{RngStream, StreamRng};

use super::{argmax, LogitGrid};

/// Below this temperature sampling is replaced by argmax.
const GREEDY_TAU: f64 = 1e-6;

/// Draws one token per position from `softmax(logits / τ)` restricted to the
/// top-`p` nucleus.
///
/// The nucleus is the shortest prefix of tokens sorted by probability (ties
/// broken toward the lower index) whose mass reaches `top_p`.
pub fn sample_tokens(
    logits: &LogitGrid,
    tau: f64,
    top_p: f64,
    scale_index: usize,
    rng: RngStream,
) -> Result<TokenGrid> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Range(format!("temperature must be positive, got {tau}")));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::Range(format!("top_p must lie in (0, 1], got {top_p}")));
    }
    let tokens = if tau < GREEDY_TAU {
        logits.argmax()
    } else {
        let mut g = rng.generator();
        let mut probs = vec![0.0; logits.vocab()];
        let mut order: Vec<usize> = Vec::with_capacity(logits.vocab());
        logits
            .positions()
            .map(|row| sample_row(row, tau, top_p, &mut probs, &mut order, &mut g))
            .collect()
    };
    TokenGrid::from_indices(scale_index, logits.dims(), tokens)
}

fn sample_row(
    row: &[f64],
    tau: f64,
    top_p: f64,
    probs: &mut [f64],
    order: &mut Vec<usize>,
    g: &mut StreamRng,
) -> u32 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (p, &l) in probs.iter_mut().zip(row) {
        *p = ((l - m) / tau).exp();
        total += *p;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    let u = g.uniform();
    if top_p >= 1.0 {
        return pick(probs, 0..probs.len(), 1.0, u).unwrap_or_else(|| argmax(probs));
    }
    order.clear();
    order.extend(0..probs.len());
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut keep = order.len();
    for (n, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= top_p {
            keep = n + 1;
            break;
        }
    }
    let kept: f64 = order[..keep].iter().map(|&i| probs[i]).sum();
    pick(probs, order[..keep].iter().copied(), kept, u).unwrap_or(order[0] as u32)
}

/// Inverse-CDF draw over `support` with total mass `mass`.
fn pick(probs: &[f64], support: impl Iterator<Item = usize>, mass: f64, u: f64) -> Option<u32> {
    let target = u * mass;
    let mut acc = 0.0;
    let mut last = None;
    for i in support {
        acc += probs[i];
        last = Some(i as u32);
        if target < acc {
            return last;
        }
    }
    // Rounding left the cumulative sum just short of `mass`.
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax(xs: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    #[test]
    fn greedy_limit_is_argmax() {
        let l = LogitGrid::new((1, 2), 3, vec![0.1, 0.5, 0.2, 3.0, -1.0, 3.0]).unwrap();
        let t = sample_tokens(&l, 1e-9, 0.5, 1, RngStream::new(1, 2)).unwrap();
        assert_eq!(t.indices().unwrap(), &[1, 0]);
    }

    #[test]
    fn full_sampling_matches_softmax() {
        let row = [0.3, -1.0, 1.2, 0.0, 0.7];
        let n = 10_000;
        let l = LogitGrid::new((100, 100), 5, row.repeat(n)).unwrap();
        let t = sample_tokens(&l, 1.0, 1.0, 1, RngStream::new(9, 4)).unwrap();
        let mut counts = [0usize; 5];
        for &i in t.indices().unwrap() {
            counts[i as usize] += 1;
        }
        for (c, p) in counts.iter().zip(softmax(&row)) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.02, "{c} vs {p}");
        }
    }

    #[test]
    fn temperature_scales_logits() {
        let row = [1.0, 0.0, -0.5];
        let n = 10_000;
        let l = LogitGrid::new((n, 1), 3, row.repeat(n)).unwrap();
        let t = sample_tokens(&l, 2.0, 1.0, 1, RngStream::new(3, 3)).unwrap();
        let halved: Vec<f64> = row.iter().map(|x| x / 2.0).collect();
        let p = softmax(&halved);
        let f0 = t.indices().unwrap().iter().filter(|&&i| i == 0).count() as f64 / n as f64;
        assert!((f0 - p[0]).abs() < 0.02);
    }

    #[test]
    fn dominant_logit_is_a_singleton_nucleus() {
        let mut row = vec![0.0; 8];
        row[5] = 20.0;
        // Oracle: sorted cumulative mass reaches 0.9 at the first element.
        let p = softmax(&row);
        assert!(p[5] >= 0.9);
        let l = LogitGrid::new((50, 50), 8, row.repeat(2500)).unwrap();
        let t = sample_tokens(&l, 1.0, 0.9, 1, RngStream::new(0, 0)).unwrap();
        assert!(t.indices().unwrap().iter().all(|&i| i == 5));
    }

    #[test]
    fn nucleus_ties_prefer_lower_index() {
        // Two equal top tokens each with mass < top_p: the nucleus is {1, 3}
        // only when both are needed; with top_p below one share it is {1}.
        let row = [0.0, 5.0, 0.0, 5.0];
        let l = LogitGrid::new((40, 40), 4, row.repeat(1600)).unwrap();
        let t = sample_tokens(&l, 1.0, 0.3, 1, RngStream::new(5, 5)).unwrap();
        assert!(t.indices().unwrap().iter().all(|&i| i == 1));
        let t = sample_tokens(&l, 1.0, 0.9, 1, RngStream::new(5, 5)).unwrap();
        let ix = t.indices().unwrap();
        assert!(ix.iter().all(|&i| i == 1 || i == 3));
        assert!(ix.contains(&1) && ix.contains(&3));
    }

    #[test]
    fn deterministic_given_stream() {
        let l = LogitGrid::new((4, 4), 3, (0..48).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let a = sample_tokens(&l, 0.8, 0.95, 2, RngStream::new(11, 12)).unwrap();
        let b = sample_tokens(&l, 0.8, 0.95, 2, RngStream::new(11, 12)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_parameters_rejected() {
        let l = LogitGrid::constant((1, 1), 2, 0.0);
        assert!(sample_tokens(&l, 0.0, 1.0, 1, RngStream::new(0, 0)).is_err());
        assert!(sample_tokens(&l, -1.0, 1.0, 1, RngStream::new(0, 0)).is_err());
        assert!(sample_tokens(&l, 1.0, 0.0, 1, RngStream::new(0, 0)).is_err());
        assert!(sample_tokens(&l, 1.0, 1.5, 1, RngStream::new(0, 0)).is_err());
    }
}
