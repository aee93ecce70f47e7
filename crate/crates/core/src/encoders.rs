//! Trainable text, caption and image encoders.
//!
//! Each path is an embedding table, mean pooling over non-padding positions,
//! and a `relu(x W + b)` projection to the hidden width. Images are described
//! either by attribute words (same construction as text, separate weights) or
//! by a precomputed feature vector projected straight to the hidden width.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const MASK: TokenId = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[MASK]"];

/// Lowercases, splits on whitespace and strips surrounding punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '_')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Token to id map with `PAD = 0`, `UNK = 1`, `MASK = 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, TokenId>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocab {
    /// Builds a vocabulary with ids assigned in sorted token order after the
    /// reserved entries, so the result is independent of input order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let unique: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !RESERVED.contains(&t.as_str()))
            .collect();
        let mut vocab = Vocab {
            tokens: Vec::with_capacity(unique.len() + RESERVED.len()),
            ids: BTreeMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(unique) {
            vocab.ids.insert(t.clone(), vocab.tokens.len());
            vocab.tokens.push(t);
        }
        vocab
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_ordered(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED {
            return Err(Error::ModelFormat(
                "vocabulary does not start with the reserved tokens".into(),
            ));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::ModelFormat(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<TokenId> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }
}

/// Replaces exactly `round(n * ratio)` distinct non-PAD positions with
/// [`MASK`], where `n` counts non-PAD tokens.
pub fn apply_text_mask<R: Rng + ?Sized>(tokens: &[TokenId], ratio: f64, rng: &mut R) -> Vec<TokenId> {
    let ratio = ratio.clamp(0.0, 1.0);
    let candidates: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != PAD)
        .map(|(i, _)| i)
        .collect();
    let count = (candidates.len() as f64 * ratio).round() as usize;
    let mut out = tokens.to_vec();
    for pick in index::sample(rng, candidates.len(), count.min(candidates.len())) {
        out[candidates[pick]] = MASK;
    }
    out
}

/// Weights of one embedding + mean-pool + projection path.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `|V| x d_e`
    pub embed: Tensor,
    /// `d_e x d_h`
    pub proj_w: Tensor,
    /// `d_h`
    pub proj_b: Tensor,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, embed_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        EncoderParams {
            embed: uniform(&[vocab_size, embed_dim], 0.5, rng),
            proj_w: glorot(embed_dim, hidden_dim, rng),
            proj_b: Tensor::filled(&[hidden_dim], 0.01),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.proj_b.len()
    }

    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            embed: tape.leaf(self.embed.clone()),
            proj_w: tape.leaf(self.proj_w.clone()),
            proj_b: tape.leaf(self.proj_b.clone()),
        }
    }
}

/// Tape handles for an [`EncoderParams`] set.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub embed: Var,
    pub proj_w: Var,
    pub proj_b: Var,
}

/// Projection from precomputed image features (`d_src x d_h`, bias `d_h`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProjection {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl FeatureProjection {
    pub fn init<R: Rng + ?Sized>(source_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        FeatureProjection {
            weight: glorot(source_dim, hidden_dim, rng),
            bias: Tensor::filled(&[hidden_dim], 0.01),
        }
    }

    pub fn source_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub weight: Var,
    pub bias: Var,
}

/// What describes an image.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageInput {
    Attributes(Vec<TokenId>),
    Precomputed(Vec<f64>),
}

fn pooled_ids(tokens: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("token sequence"));
    }
    let kept: Vec<TokenId> = tokens
        .iter()
        .take(max_len.max(1))
        .copied()
        .filter(|&t| t != PAD)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyInput("token sequence has only padding"));
    }
    Ok(kept)
}

/// Encodes a batch of token sequences to `[n, d_h]`. Sequences are truncated
/// to their first `max_len` tokens before pooling.
pub fn encode_text(tape: &mut Tape, vars: &EncoderVars, batch: &[Vec<TokenId>], max_len: usize) -> Result<Var> {
    let bags = batch
        .iter()
        .map(|t| pooled_ids(t, max_len))
        .collect::<Result<Vec<_>>>()?;
    let pooled = tape.embedding_bag(vars.embed, &bags)?;
    let projected = tape.linear(pooled, vars.proj_w, vars.proj_b)?;
    Ok(tape.relu(projected))
}

/// Encodes a batch of images to `[n, d_h]`, mixing attribute-word and
/// precomputed inputs freely; output rows follow input order.
pub fn encode_image(
    tape: &mut Tape,
    attr: &EncoderVars,
    projection: Option<&ProjectionVars>,
    batch: &[ImageInput],
    max_len: usize,
) -> Result<Var> {
    let mut attr_rows = Vec::new();
    let mut attr_pos = Vec::new();
    let mut vec_rows = Vec::new();
    let mut vec_pos = Vec::new();
    for (i, input) in batch.iter().enumerate() {
        match input {
            ImageInput::Attributes(ids) => {
                attr_rows.push(ids.clone());
                attr_pos.push(i);
            }
            ImageInput::Precomputed(v) => {
                vec_rows.push(v.clone());
                vec_pos.push(i);
            }
        }
    }
    let mut parts = Vec::new();
    if !attr_rows.is_empty() {
        parts.push(encode_text(tape, attr, &attr_rows, max_len)?);
    }
    if !vec_rows.is_empty() {
        let proj = projection.ok_or_else(|| {
            Error::Config("precomputed image features given but no feature projection configured".into())
        })?;
        let expected = tape.value(proj.weight).rows();
        if let Some(bad) = vec_rows.iter().find(|v| v.len() != expected) {
            return Err(Error::shape("encode_image (precomputed)", &[expected], &[bad.len()]));
        }
        let x = tape.leaf(Tensor::from_rows(&vec_rows)?);
        let y = tape.linear(x, proj.weight, proj.bias)?;
        parts.push(tape.relu(y));
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    let stacked = tape.concat_rows(&parts)?;
    let mut order = vec![0; batch.len()];
    for (row, &i) in attr_pos.iter().chain(&vec_pos).enumerate() {
        order[i] = row;
    }
    tape.gather_rows(stacked, &order)
}

/// Single-sequence convenience wrapper around [`encode_text`].
pub fn encode_text_one(tokens: &[TokenId], params: &EncoderParams, max_len: usize) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = encode_text(&mut tape, &vars, &[tokens.to_vec()], max_len)?;
    Ok(tape.value(out).data().to_vec())
}

/// Single-image convenience wrapper around [`encode_image`].
pub fn encode_image_one(
    input: &ImageInput,
    params: &EncoderParams,
    projection: Option<&FeatureProjection>,
    max_len: usize,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let proj = projection.map(|p| ProjectionVars {
        weight: tape.leaf(p.weight.clone()),
        bias: tape.leaf(p.bias.clone()),
    });
    let out = encode_image(&mut tape, &vars, proj.as_ref(), std::slice::from_ref(input), max_len)?;
    Ok(tape.value(out).data().to_vec())
}

/// Reads `<id>\t<dim>\t<v1> <v2> ... <vdim>` lines. Blank lines are ignored.
pub fn load_precomputed_features(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    let mut first_dim = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(id), Some(dim), Some(values), None) = (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::parse(path, lineno, "expected `<id>\\t<dim>\\t<values>`"));
        };
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty feature id"));
        }
        let dim: usize = dim
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad dimension `{dim}`")))?;
        let vector = values
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(path, lineno, format!("bad value `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.len() != dim || dim == 0 {
            return Err(Error::parse(
                path,
                lineno,
                format!("declared dim {dim} but found {} values", vector.len()),
            ));
        }
        match first_dim {
            None => first_dim = Some(dim),
            Some(d) if d != dim => {
                return Err(Error::format(
                    path,
                    format!("line {lineno}: dim {dim} differs from first record's dim {d}"),
                ))
            }
            _ => {}
        }
        if out.insert(id.to_string(), vector).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate feature id `{id}`")));
        }
    }
    Ok(out)
}

/// Writes features in the format read by [`load_precomputed_features`].
pub fn write_precomputed_features(path: &Path, features: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut buf = Vec::new();
    for (id, v) in features {
        let values: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        writeln!(buf, "{id}\t{}\t{}", v.len(), values.join(" ")).expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
    t
}

pub(crate) fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(&[fan_in, fan_out], limit, rng)
}
