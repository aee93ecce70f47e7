//! Cross-modal semantic similarity at two granularities.
//!
//! * Word level: cosine matrix between text-side and image-side concept
//!   vectors, summarized by the global max and by the mean of per-row maxima.
//! * Sample level: text+caption and image features are projected, stacked
//!   into `z = [u, w]`, whitened with `M = (Sigma + eps I)^(-1/2)` estimated
//!   from running batch statistics, split back and compared by cosine.

use rand::Rng;

use crate::encoders::glorot;
use crate::error::{Error, Result};
use crate::numerics::{column_means, covariance, dot, inverse_sqrt_psd, norm, Tape, Tensor, Var};

/// Similarity inputs to the classifier for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimilarityFeatures {
    pub s_word_max: f64,
    pub s_word_mean: f64,
    pub s_sample: f64,
    /// No non-zero concept rows on at least one side.
    pub word_oov: bool,
    /// A whitened half was the zero vector.
    pub sample_degenerate: bool,
}

impl SimilarityFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.s_word_max, self.s_word_mean, self.s_sample]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordLevel {
    pub max: f64,
    pub mean: f64,
    pub oov: bool,
}

/// Word-level similarity between an `m x d` text concept matrix and an
/// `n x d` image concept matrix. Zero rows are ignored; if either side has
/// none left both scores are 0 and `oov` is set.
pub fn word_level_similarity(text: &Tensor, image: &Tensor) -> Result<WordLevel> {
    if text.cols() != image.cols() {
        return Err(Error::shape("word_level_similarity", &[text.cols()], &[image.cols()]));
    }
    let unit_rows = |m: &Tensor| -> Vec<Vec<f64>> {
        (0..m.rows())
            .filter_map(|i| {
                let r = m.row(i);
                let n = norm(r);
                (n > 0.0).then(|| r.iter().map(|v| v / n).collect())
            })
            .collect()
    };
    let (t, v) = (unit_rows(text), unit_rows(image));
    if t.is_empty() || v.is_empty() {
        return Ok(WordLevel {
            max: 0.0,
            mean: 0.0,
            oov: true,
        });
    }
    let mut global = f64::NEG_INFINITY;
    let mut sum_row_max = 0.0;
    for ti in &t {
        let row_max = v
            .iter()
            .map(|vj| dot(ti, vj).clamp(-1.0, 1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        global = global.max(row_max);
        sum_row_max += row_max;
    }
    Ok(WordLevel {
        max: global,
        // rounding in the sum can push an all-equal mean one ulp above the max
        mean: (sum_row_max / t.len() as f64).min(global),
        oov: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics and the whitening matrix derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingState {
    /// `d_z x d_z`, symmetric.
    pub mapping: Tensor,
    /// `d_z`
    pub mean: Tensor,
    /// `d_z x d_z`, symmetric PSD.
    pub covariance: Tensor,
    /// Weight of the newest batch: `running = (1 - momentum) running + momentum batch`.
    pub momentum: f64,
    pub eps: f64,
    pub mode: Mode,
    pub updates: u64,
}

impl MappingState {
    /// Identity mapping, zero mean, identity covariance.
    pub fn new(dim: usize, momentum: f64, eps: f64) -> Self {
        MappingState {
            mapping: Tensor::identity(dim),
            mean: Tensor::zeros(&[dim]),
            covariance: Tensor::identity(dim),
            momentum,
            eps,
            mode: Mode::Train,
            updates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

/// Updates running statistics from `z_batch` (`n x d_z`) and recomputes the
/// mapping. In [`Mode::Infer`] the state is returned unchanged.
pub fn fit_mapping(z_batch: &Tensor, state: &MappingState) -> Result<MappingState> {
    if state.mode == Mode::Infer {
        return Ok(state.clone());
    }
    if z_batch.cols() != state.dim() {
        return Err(Error::shape("fit_mapping", &[state.dim()], &[z_batch.cols()]));
    }
    let n = z_batch.rows();
    if n < 2 || z_batch.shape().len() != 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let batch_mean = column_means(z_batch);
    let batch_cov = covariance(z_batch)?;
    let mu = state.momentum;
    let mean: Vec<f64> = state
        .mean
        .data()
        .iter()
        .zip(&batch_mean)
        .map(|(&r, &b)| (1.0 - mu) * r + mu * b)
        .collect();
    let cov = state.covariance.zip_map(&batch_cov, |r, b| (1.0 - mu) * r + mu * b)?;
    let mapping = inverse_sqrt_psd(&cov, state.eps)?;
    Ok(MappingState {
        mapping,
        mean: Tensor::vector(mean),
        covariance: cov,
        updates: state.updates + 1,
        ..state.clone()
    })
}

/// Weights projecting `[t, c]` and `v` into the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedProjection {
    /// `2 d_h x d_s`
    pub text_w: Tensor,
    pub text_b: Tensor,
    /// `d_h x d_s`
    pub image_w: Tensor,
    pub image_b: Tensor,
}

impl SharedProjection {
    pub fn init<R: Rng + ?Sized>(hidden_dim: usize, shared_dim: usize, rng: &mut R) -> Self {
        SharedProjection {
            text_w: glorot(2 * hidden_dim, shared_dim, rng),
            text_b: Tensor::zeros(&[shared_dim]),
            image_w: glorot(hidden_dim, shared_dim, rng),
            image_b: Tensor::zeros(&[shared_dim]),
        }
    }

    pub fn shared_dim(&self) -> usize {
        self.text_b.len()
    }

    pub fn register(&self, tape: &mut Tape) -> SharedProjectionVars {
        SharedProjectionVars {
            text_w: tape.leaf(self.text_w.clone()),
            text_b: tape.leaf(self.text_b.clone()),
            image_w: tape.leaf(self.image_w.clone()),
            image_b: tape.leaf(self.image_b.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SharedProjectionVars {
    pub text_w: Var,
    pub text_b: Var,
    pub image_w: Var,
    pub image_b: Var,
}

/// `z = [([t, c] Wt + bt), (v Wv + bv)]`, shape `n x 2 d_s`.
pub fn project_shared(tape: &mut Tape, vars: &SharedProjectionVars, t: Var, c: Var, v: Var) -> Result<Var> {
    let tc = tape.concat_cols(&[t, c])?;
    let u = tape.linear(tc, vars.text_w, vars.text_b)?;
    let w = tape.linear(v, vars.image_w, vars.image_b)?;
    tape.concat_cols(&[u, w])
}

/// Whitens `z` with the (constant) mapping state and returns the per-row
/// cosine between its two halves as `[n, 1]`, plus per-row degeneracy flags.
pub fn similarity_from_shared(tape: &mut Tape, z: Var, state: &MappingState) -> Result<(Var, Vec<bool>)> {
    let dz = tape.value(z).cols();
    if dz != state.dim() || !dz.is_multiple_of(2) {
        return Err(Error::shape("sample_level_similarity", &[state.dim()], &[dz]));
    }
    let neg_mean = tape.leaf(state.mean.map(|m| -m));
    let m = tape.leaf(state.mapping.clone());
    let centered = tape.add_row(z, neg_mean)?;
    let mapped = tape.matmul(centered, m)?;
    let u = tape.slice_cols(mapped, 0, dz / 2)?;
    let w = tape.slice_cols(mapped, dz / 2, dz)?;
    let (uv, wv) = (tape.value(u), tape.value(w));
    let degenerate = (0..uv.rows())
        .map(|i| norm(uv.row(i)) == 0.0 || norm(wv.row(i)) == 0.0)
        .collect();
    Ok((tape.row_cosine(u, w)?, degenerate))
}

/// Sample-level similarity for a batch: projection, whitening and cosine.
pub fn sample_level_similarity(
    tape: &mut Tape,
    vars: &SharedProjectionVars,
    t: Var,
    c: Var,
    v: Var,
    state: &MappingState,
) -> Result<(Var, Vec<bool>)> {
    let z = project_shared(tape, vars, t, c, v)?;
    similarity_from_shared(tape, z, state)
}

/// Single-sample convenience wrapper around [`sample_level_similarity`].
pub fn sample_level_one(
    t: &[f64],
    c: &[f64],
    v: &[f64],
    params: &SharedProjection,
    state: &MappingState,
) -> Result<(f64, bool)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let row =
        |tape: &mut Tape, x: &[f64]| tape.leaf(Tensor::vector(x.to_vec()).reshape(vec![1, x.len()]).expect("row"));
    let (tv, cv, vv) = (row(&mut tape, t), row(&mut tape, c), row(&mut tape, v));
    let (s, flags) = sample_level_similarity(&mut tape, &vars, tv, cv, vv, state)?;
    Ok((tape.value(s).data()[0], flags[0]))
}
