use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AblationFlags, ModelConfig};
use crate::dataset::Sample;
use crate::encoders::{
    encode_image, encode_text, glorot, EncoderParams, EncoderVars, FeatureProjection, ImageInput, ProjectionVars,
    TokenId, Vocab, UNK,
};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeBase;
use crate::numerics::{Tape, Tensor, Var};
use crate::similarity::{
    fit_mapping, project_shared, similarity_from_shared, word_level_similarity, MappingState, Mode, SharedProjection,
    SharedProjectionVars, SimilarityFeatures, WordLevel,
};

/// Everything needed to run the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    /// Flags the model was trained under.
    pub flags: AblationFlags,
    pub vocab: Vocab,
    /// Trainable tensors by name.
    pub params: BTreeMap<String, Tensor>,
    pub mapping: MappingState,
}

fn insert_encoder(params: &mut BTreeMap<String, Tensor>, prefix: &str, enc: EncoderParams) {
    params.insert(format!("{prefix}.embed"), enc.embed);
    params.insert(format!("{prefix}.proj.w"), enc.proj_w);
    params.insert(format!("{prefix}.proj.b"), enc.proj_b);
}

impl ModelState {
    /// Freshly initialized weights, seeded by `config.seed`.
    pub fn new(config: ModelConfig, flags: AblationFlags, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, e, h, s, f) = (
            vocab.len(),
            config.embed_dim,
            config.hidden_dim,
            config.shared_dim,
            config.fused_dim,
        );
        let mut params = BTreeMap::new();
        for prefix in ["text", "caption", "image"] {
            insert_encoder(&mut params, prefix, EncoderParams::init(v, e, h, &mut rng));
        }
        if config.image_feature_dim > 0 {
            let p = FeatureProjection::init(config.image_feature_dim, h, &mut rng);
            params.insert("image.feature.w".into(), p.weight);
            params.insert("image.feature.b".into(), p.bias);
        }
        let shared = SharedProjection::init(h, s, &mut rng);
        params.insert("shared.text.w".into(), shared.text_w);
        params.insert("shared.text.b".into(), shared.text_b);
        params.insert("shared.image.w".into(), shared.image_w);
        params.insert("shared.image.b".into(), shared.image_b);
        params.insert("fuse.w".into(), glorot(config.fused_input_dim(), f, &mut rng));
        params.insert("fuse.b".into(), Tensor::zeros(&[f]));
        params.insert("head.hidden.w".into(), glorot(f, f, &mut rng));
        params.insert("head.hidden.b".into(), Tensor::filled(&[f], 0.01));
        params.insert("head.out.w".into(), glorot(f, 2, &mut rng));
        params.insert("head.out.b".into(), Tensor::zeros(&[2]));
        let mapping = MappingState::new(2 * s, config.momentum, config.eps);
        Ok(ModelState {
            config,
            flags,
            vocab,
            params,
            mapping,
        })
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    pub fn encoder(&self, prefix: &str) -> EncoderParams {
        EncoderParams {
            embed: self.params[&format!("{prefix}.embed")].clone(),
            proj_w: self.params[&format!("{prefix}.proj.w")].clone(),
            proj_b: self.params[&format!("{prefix}.proj.b")].clone(),
        }
    }

    pub fn shared_projection(&self) -> SharedProjection {
        SharedProjection {
            text_w: self.params["shared.text.w"].clone(),
            text_b: self.params["shared.text.b"].clone(),
            image_w: self.params["shared.image.w"].clone(),
            image_b: self.params["shared.image.b"].clone(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
            && self.mapping.mapping.is_finite()
            && self.mapping.mean.is_finite()
            && self.mapping.covariance.is_finite()
    }

    /// Puts every parameter on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t.clone())))
                .collect(),
        }
    }
}

/// Tape handles for every parameter of a [`ModelState`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    fn encoder(&self, prefix: &str) -> EncoderVars {
        EncoderVars {
            embed: self.get(&format!("{prefix}.embed")),
            proj_w: self.get(&format!("{prefix}.proj.w")),
            proj_b: self.get(&format!("{prefix}.proj.b")),
        }
    }

    fn feature_projection(&self) -> Option<ProjectionVars> {
        Some(ProjectionVars {
            weight: *self.vars.get("image.feature.w")?,
            bias: *self.vars.get("image.feature.b")?,
        })
    }

    fn shared(&self) -> SharedProjectionVars {
        SharedProjectionVars {
            text_w: self.get("shared.text.w"),
            text_b: self.get("shared.text.b"),
            image_w: self.get("shared.image.w"),
            image_b: self.get("shared.image.b"),
        }
    }
}

/// A sample converted to token ids, with its concept-derived features.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub text: Vec<TokenId>,
    pub caption: Vec<TokenId>,
    pub image: ImageInput,
    /// `None` when no knowledge base was supplied.
    pub word: Option<WordLevel>,
    pub label: u8,
}

fn ids_or_unk(vocab: &Vocab, words: &[String]) -> Vec<TokenId> {
    if words.is_empty() {
        vec![UNK]
    } else {
        vocab.encode(words)
    }
}

/// Word-level features of one sample: text and caption tokens against image
/// attributes.
pub fn concept_features(sample: &Sample, kb: &KnowledgeBase) -> Result<WordLevel> {
    let mut words = sample.text_tokens();
    words.extend(sample.caption_tokens());
    let text = kb.stack(&words);
    let image = kb.stack(&sample.attribute_words());
    match (text, image) {
        (Some(t), Some(i)) => word_level_similarity(&t, &i),
        _ => Ok(WordLevel {
            max: 0.0,
            mean: 0.0,
            oov: true,
        }),
    }
}

/// Tokenizes and looks up samples. Empty captions and attribute lists become
/// a single unknown token.
pub fn prepare(samples: &[Sample], vocab: &Vocab, kb: Option<&KnowledgeBase>) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let text = s.text_tokens();
            if text.is_empty() {
                return Err(Error::Data(format!("sample `{}` has no text tokens", s.id)));
            }
            let image = match &s.image_vec {
                Some(v) => ImageInput::Precomputed(v.clone()),
                None => ImageInput::Attributes(ids_or_unk(vocab, &s.attribute_words())),
            };
            Ok(Prepared {
                text: vocab.encode(&text),
                caption: ids_or_unk(vocab, &s.caption_tokens()),
                image,
                word: kb.map(|kb| concept_features(s, kb)).transpose()?,
                label: s.label,
            })
        })
        .collect()
}

/// Handles produced by [`forward_graph`].
#[derive(Debug, Clone)]
pub struct Graph {
    pub logits: Var,
    /// Pre-normalization fused vector `h`.
    pub fused: Var,
    /// `h` with unit rows: the contrastive embedding.
    pub embeddings: Var,
    pub similarity: Vec<SimilarityFeatures>,
    /// Statistics after this batch in [`Mode::Train`]; `None` otherwise or
    /// when the batch is too small to estimate a covariance.
    pub mapping: Option<MappingState>,
}

/// Builds the classifier graph for `batch` on `tape`.
///
/// In [`Mode::Train`] the whitening statistics are first updated from this
/// batch's shared-space features; the resulting mapping is used as a constant.
pub fn forward_graph(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    mapping: &MappingState,
    batch: &[Prepared],
    flags: AblationFlags,
    mode: Mode,
) -> Result<Graph> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("forward batch"));
    }
    let n = batch.len();
    let texts: Vec<Vec<TokenId>> = batch.iter().map(|p| p.text.clone()).collect();
    let captions: Vec<Vec<TokenId>> = batch.iter().map(|p| p.caption.clone()).collect();
    let images: Vec<ImageInput> = batch.iter().map(|p| p.image.clone()).collect();
    let t = encode_text(tape, &vars.encoder("text"), &texts, config.max_len)?;
    let c = encode_text(tape, &vars.encoder("caption"), &captions, config.max_len)?;
    let proj = vars.feature_projection();
    let v = encode_image(tape, &vars.encoder("image"), proj.as_ref(), &images, config.max_len)?;

    let mut similarity = vec![SimilarityFeatures::default(); n];
    let mut word_cols = Tensor::zeros(&[n, 2]);
    if flags.word_level() {
        for (i, p) in batch.iter().enumerate() {
            let w = p.word.ok_or_else(|| {
                Error::Config("knowledge features requested but no concept tables were loaded".into())
            })?;
            word_cols.set(i, 0, w.max);
            word_cols.set(i, 1, w.mean);
            similarity[i].s_word_max = w.max;
            similarity[i].s_word_mean = w.mean;
            similarity[i].word_oov = w.oov;
        }
    }
    let word_var = tape.leaf(word_cols);
    let mut new_mapping = None;
    let sample_var = if flags.sample_level() {
        let z = project_shared(tape, &vars.shared(), t, c, v)?;
        let state = if mode == Mode::Train && n >= 2 {
            let updated = fit_mapping(tape.value(z), &mapping.clone().with_mode(Mode::Train))?;
            new_mapping = Some(updated.clone());
            updated
        } else {
            mapping.clone()
        };
        let (s, degenerate) = similarity_from_shared(tape, z, &state)?;
        for (i, d) in degenerate.into_iter().enumerate() {
            similarity[i].s_sample = tape.value(s).data()[i];
            similarity[i].sample_degenerate = d;
        }
        s
    } else {
        tape.leaf(Tensor::zeros(&[n, 1]))
    };

    let diff = tape.sub(t, v)?;
    let abs_diff = tape.abs(diff);
    let prod = tape.mul(t, v)?;
    let x = tape.concat_cols(&[t, c, v, abs_diff, prod, word_var, sample_var])?;
    let fused = tape.linear(x, vars.get("fuse.w"), vars.get("fuse.b"))?;
    let embeddings = tape.l2_normalize(fused);
    let hidden = tape.linear(fused, vars.get("head.hidden.w"), vars.get("head.hidden.b"))?;
    let hidden = tape.relu(hidden);
    let logits = tape.linear(hidden, vars.get("head.out.w"), vars.get("head.out.b"))?;
    Ok(Graph {
        logits,
        fused,
        embeddings,
        similarity,
        mapping: new_mapping,
    })
}

/// Numeric results of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `n x 2`
    pub logits: Tensor,
    /// `n x d_f`, unit rows.
    pub embeddings: Tensor,
    pub similarity: Vec<SimilarityFeatures>,
    pub mapping: Option<MappingState>,
}

pub fn forward(batch: &[Prepared], state: &ModelState, flags: AblationFlags, mode: Mode) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let vars = state.register(&mut tape);
    let g = forward_graph(&mut tape, &vars, &state.config, &state.mapping, batch, flags, mode)?;
    Ok(ForwardOutput {
        logits: tape.value(g.logits).clone(),
        embeddings: tape.value(g.embeddings).clone(),
        similarity: g.similarity,
        mapping: g.mapping,
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max(0, |a - p| - |a - n| + margin)`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    (euclidean(anchor, positive) - euclidean(anchor, negative) + margin).max(0.0)
}

/// `(anchor, positive, negative)` row indices into a batch.
pub type Triplet = (usize, usize, usize);

/// Mean triplet loss over `triplets` as a `[1]` node; the constant 0 when
/// there are none.
pub fn triplet_loss_graph(tape: &mut Tape, embeddings: Var, triplets: &[Triplet], margin: f64) -> Result<Var> {
    if triplets.is_empty() {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let rows = tape.value(embeddings).rows();
    if let Some(&(a, p, n)) = triplets.iter().find(|&&(a, p, n)| a.max(p).max(n) >= rows) {
        return Err(Error::Data(format!("triplet ({a}, {p}, {n}) outside batch of {rows}")));
    }
    let pick = |k: fn(&Triplet) -> usize| triplets.iter().map(k).collect::<Vec<_>>();
    let a = tape.gather_rows(embeddings, &pick(|t| t.0))?;
    let p = tape.gather_rows(embeddings, &pick(|t| t.1))?;
    let n = tape.gather_rows(embeddings, &pick(|t| t.2))?;
    let dap = tape.euclidean_distance(a, p)?;
    let dan = tape.euclidean_distance(a, n)?;
    let gap = tape.sub(dap, dan)?;
    let shifted = tape.add_scalar(gap, margin);
    let hinge = tape.relu(shifted);
    Ok(tape.mean(hinge))
}

/// One-hot `n x 2` targets; labels other than 0 and 1 are rejected.
pub fn one_hot(labels: &[i64]) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), 2]);
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && l != 1 {
            return Err(Error::Label(l));
        }
        t.set(i, l as usize, 1.0);
    }
    Ok(t)
}

/// `CE + lambda * TL`, with the triplet term dropped when contrastive
/// learning is disabled.
pub fn total_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[i64],
    embeddings: Var,
    triplets: &[Triplet],
    config: &ModelConfig,
    flags: AblationFlags,
) -> Result<Var> {
    let targets = one_hot(labels)?;
    let ce = tape.softmax_cross_entropy(logits, &targets)?;
    if !flags.use_contrastive || config.lambda == 0.0 {
        return Ok(ce);
    }
    let tl = triplet_loss_graph(tape, embeddings, triplets, config.margin)?;
    let weighted = tape.scale(tl, config.lambda);
    tape.add(ce, weighted)
}

/// Label and its probability from two logits. Exact ties go to label 0.
pub fn predict_from_logits(l0: f64, l1: f64) -> (u8, f64) {
    let m = l0.max(l1);
    let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
    let z = e0 + e1;
    if l1 > l0 {
        (1, e1 / z)
    } else {
        (0, e0 / z)
    }
}

/// Classifies one sample in inference mode.
pub fn predict(
    sample: &Sample,
    state: &ModelState,
    flags: AblationFlags,
    kb: Option<&KnowledgeBase>,
) -> Result<(u8, f64)> {
    let prepared = prepare(std::slice::from_ref(sample), &state.vocab, kb)?;
    let out = forward(&prepared, state, flags, Mode::Infer)?;
    let l = out.logits.row(0);
    Ok(predict_from_logits(l[0], l[1]))
}

/// Vocabulary over the text, caption and attribute words of `samples`.
pub fn build_vocab(samples: &[Sample]) -> Vocab {
    let mut words = Vec::new();
    for s in samples {
        words.extend(s.text_tokens());
        words.extend(s.caption_tokens());
        words.extend(s.attribute_words());
    }
    Vocab::from_tokens(words)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, text: &str, attrs: &[&str], label: u8) -> Sample {
        Sample {
            id: id.into(),
            text: text.into(),
            caption: String::new(),
            image_attrs: attrs.iter().map(|s| s.to_string()).collect(),
            image_vec: None,
            label,
        }
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            hidden_dim: 4,
            embed_dim: 3,
            shared_dim: 2,
            fused_dim: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn triplet_examples() {
        assert_eq!(triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 0.5), 0.5);
        assert_eq!(triplet_loss(&[0.0, 0.0], &[0.0, 0.0], &[2.0, 0.0], 0.5), 0.0);
        let l = triplet_loss(&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], 0.5);
        assert_eq!(l, (2f64.sqrt() - 2.0 + 0.5).max(0.0));
    }

    #[test]
    fn prediction_rule() {
        let (l, p) = predict_from_logits(3.0, -3.0);
        assert_eq!(l, 0);
        assert!((p - 1.0 / (1.0 + (-6f64).exp())).abs() < 1e-15);
        assert_eq!(predict_from_logits(0.0, 0.0), (0, 0.5));
        assert_eq!(predict_from_logits(100.0, 100.0).0, 0);
        assert_eq!(predict_from_logits(1.0, 2.0).0, predict_from_logits(101.0, 102.0).0);
    }

    #[test]
    fn loss_examples() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[2, 2]));
        let emb = tape.leaf(Tensor::zeros(&[2, 2]));
        let cfg = ModelConfig::default();
        let l = total_loss(&mut tape, logits, &[0, 1], emb, &[], &cfg, AblationFlags::FULL).unwrap();
        assert!((tape.value(l).data()[0] - 2f64.ln()).abs() < 1e-15);

        let logits = tape.leaf(Tensor::from_rows(&[vec![50.0, -50.0], vec![-50.0, 50.0]]).unwrap());
        let l = total_loss(&mut tape, logits, &[0, 1], emb, &[], &cfg, AblationFlags::FULL).unwrap();
        assert!(tape.value(l).data()[0] < 1e-40);

        assert!(matches!(
            total_loss(&mut tape, logits, &[0, 2], emb, &[], &cfg, AblationFlags::FULL),
            Err(Error::Label(2))
        ));
    }

    #[test]
    fn all_flags_off_zeroes_similarity() {
        let samples = vec![
            sample("a", "sunny day", &["rain"], 1),
            sample("b", "rain", &["rain"], 0),
        ];
        let vocab = build_vocab(&samples);
        let state = ModelState::new(small_config(), AblationFlags::NONE, vocab).unwrap();
        let prepared = prepare(&samples, &state.vocab, None).unwrap();
        let out = forward(&prepared, &state, AblationFlags::NONE, Mode::Train).unwrap();
        assert!(out.similarity.iter().all(|s| s.as_array() == [0.0; 3]));
        assert!(out.mapping.is_none());
        let again = forward(&prepared, &state, AblationFlags::NONE, Mode::Train).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn knowledge_required_when_enabled() {
        let samples = vec![sample("a", "sunny", &["rain"], 1)];
        let state = ModelState::new(small_config(), AblationFlags::FULL, build_vocab(&samples)).unwrap();
        let prepared = prepare(&samples, &state.vocab, None).unwrap();
        assert!(matches!(
            forward(&prepared, &state, AblationFlags::FULL, Mode::Infer),
            Err(Error::Config(_))
        ));
        let no_kn = AblationFlags {
            use_knowledge: false,
            ..AblationFlags::FULL
        };
        assert!(forward(&prepared, &state, no_kn, Mode::Infer).is_ok());
    }

    #[test]
    fn train_mode_updates_mapping() {
        let samples = vec![
            sample("a", "sunny day", &["rain"], 1),
            sample("b", "rain", &["rain"], 0),
            sample("c", "cold", &["snow"], 0),
        ];
        let flags = AblationFlags {
            use_knowledge: false,
            ..AblationFlags::FULL
        };
        let state = ModelState::new(small_config(), flags, build_vocab(&samples)).unwrap();
        let prepared = prepare(&samples, &state.vocab, None).unwrap();
        let out = forward(&prepared, &state, flags, Mode::Train).unwrap();
        assert_eq!(out.mapping.as_ref().unwrap().updates, 1);
        assert!(forward(&prepared[..1], &state, flags, Mode::Train)
            .unwrap()
            .mapping
            .is_none());
        assert!(forward(&prepared, &state, flags, Mode::Infer)
            .unwrap()
            .mapping
            .is_none());
        for s in &out.similarity {
            assert!((-1.0..=1.0).contains(&s.s_sample));
        }
    }
}
