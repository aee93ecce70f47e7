use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Triplet;
use crate::numerics::Tensor;

/// One triplet per anchor that has both a same-label partner and an
/// other-label sample; partners are drawn uniformly from `rng`.
pub fn sample_triplets<R: Rng + ?Sized>(labels: &[u8], rng: &mut R) -> Vec<Triplet> {
    let mut out = Vec::new();
    for (a, &la) in labels.iter().enumerate() {
        let pos: Vec<usize> = (0..labels.len()).filter(|&j| j != a && labels[j] == la).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != la).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let p = pos[rng.gen_range(0..pos.len())];
        let n = neg[rng.gen_range(0..neg.len())];
        out.push((a, p, n));
    }
    out
}

/// Adam moments for a named parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &BTreeMap<String, Tensor>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Batch-hard triplets: for each anchor with candidates, the farthest
/// same-label sample and the nearest other-label sample under Euclidean
/// distance between rows of `emb`. Ties go to the lowest index.
pub fn hard_triplets(labels: &[u8], emb: &Tensor) -> Vec<Triplet> {
    let dist = |i: usize, j: usize| -> f64 {
        emb.row(i)
            .iter()
            .zip(emb.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };
    let mut out = Vec::new();
    for (a, &la) in labels.iter().enumerate() {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for (j, &lj) in labels.iter().enumerate() {
            if j == a {
                continue;
            }
            let d = dist(a, j);
            if lj == la {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        if let (Some((p, _)), Some((n, _))) = (pos, neg) {
            out.push((a, p, n));
        }
    }
    out
}

/// Bias-corrected Adam update of every parameter in place. Parameters
/// without an entry in `grads` are treated as having zero gradient.
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        let bad = g.data().iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::NonFiniteGradient {
                param: name.clone(),
                count: bad,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let g = grads.get(name);
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let update = (mi / c1) / ((vi / c2).sqrt() + state.eps);
            p.data_mut()[i] -= lr * update;
        }
    }
    Ok(())
}
