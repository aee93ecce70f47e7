use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::knowledge::{RelationFilter, CONCEPT_DIM};

/// Architecture and optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub shared_dim: usize,
    pub fused_dim: usize,
    pub concept_dim: usize,
    pub max_len: usize,
    /// Width of precomputed image vectors; 0 when images are described by
    /// attribute words only.
    pub image_feature_dim: usize,
    pub lambda: f64,
    pub margin: f64,
    pub momentum: f64,
    pub eps: f64,
    /// Image augmentations the features were produced with. Recorded only.
    pub augment: String,
    pub concept_k: usize,
    pub relations: RelationFilter,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            embed_dim: 64,
            shared_dim: 64,
            fused_dim: 64,
            concept_dim: CONCEPT_DIM,
            max_len: 128,
            image_feature_dim: 0,
            lambda: 0.1,
            margin: 0.5,
            momentum: 0.9,
            eps: 1e-5,
            augment: "random_crop,horizontal_flip,normalize".into(),
            concept_k: 5,
            relations: RelationFilter::default(),
            learning_rate: 1e-5,
            batch_size: 32,
            mask_ratio: 0.15,
            seed: 0,
        }
    }
}

/// Dotted key, default rendering and description of every model setting.
pub const MODEL_KEYS: &[(&str, &str, &str)] = &[
    (
        "model.hidden_dim",
        "64",
        "encoder output width d_h (768 in the reference setup)",
    ),
    ("model.embed_dim", "64", "token embedding width"),
    (
        "model.shared_dim",
        "64",
        "width of each half of the shared similarity space",
    ),
    ("model.fused_dim", "64", "fused embedding and classifier width"),
    ("model.concept_dim", "300", "concept vector width"),
    ("model.max_len", "128", "tokens kept per sequence"),
    (
        "model.image_feature_dim",
        "0",
        "precomputed image vector width (0: attribute words)",
    ),
    ("model.lambda", "0.1", "triplet loss weight"),
    ("model.margin", "0.5", "triplet margin"),
    (
        "model.momentum",
        "0.9",
        "weight of the newest batch in running statistics",
    ),
    ("model.eps", "1e-5", "covariance regularizer"),
    (
        "model.augment",
        "random_crop,horizontal_flip,normalize",
        "image augmentations (metadata)",
    ),
    ("knowledge.concept_k", "5", "neighbor concepts per word"),
    (
        "knowledge.relations",
        "HasProperty,IsA,RelatedTo,Synonym,UsedFor",
        "relation filter, `*` for all",
    ),
    ("train.learning_rate", "1e-5", "Adam step size"),
    ("train.batch_size", "32", "samples per step"),
    (
        "train.mask_ratio",
        "0.15",
        "fraction of text tokens masked during training",
    ),
    (
        "train.seed",
        "0",
        "seed for initialization, shuffling, masking and triplets",
    ),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    /// Sets one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.hidden_dim" => self.hidden_dim = parse(key, value)?,
            "model.embed_dim" => self.embed_dim = parse(key, value)?,
            "model.shared_dim" => self.shared_dim = parse(key, value)?,
            "model.fused_dim" => self.fused_dim = parse(key, value)?,
            "model.concept_dim" => self.concept_dim = parse(key, value)?,
            "model.max_len" => self.max_len = parse(key, value)?,
            "model.image_feature_dim" => self.image_feature_dim = parse(key, value)?,
            "model.lambda" => self.lambda = parse(key, value)?,
            "model.margin" => self.margin = parse(key, value)?,
            "model.momentum" => self.momentum = parse(key, value)?,
            "model.eps" => self.eps = parse(key, value)?,
            "model.augment" => self.augment = value.to_string(),
            "knowledge.concept_k" => self.concept_k = parse(key, value)?,
            "knowledge.relations" => self.relations = RelationFilter::parse_list(value),
            "train.learning_rate" => self.learning_rate = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.mask_ratio" => self.mask_ratio = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every setting as `key -> value`; floats use their shortest exact form.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let pairs: [(&str, String); 18] = [
            ("model.hidden_dim", self.hidden_dim.to_string()),
            ("model.embed_dim", self.embed_dim.to_string()),
            ("model.shared_dim", self.shared_dim.to_string()),
            ("model.fused_dim", self.fused_dim.to_string()),
            ("model.concept_dim", self.concept_dim.to_string()),
            ("model.max_len", self.max_len.to_string()),
            ("model.image_feature_dim", self.image_feature_dim.to_string()),
            ("model.lambda", self.lambda.to_string()),
            ("model.margin", self.margin.to_string()),
            ("model.momentum", self.momentum.to_string()),
            ("model.eps", self.eps.to_string()),
            ("model.augment", self.augment.clone()),
            ("knowledge.concept_k", self.concept_k.to_string()),
            ("knowledge.relations", self.relations.to_list()),
            ("train.learning_rate", self.learning_rate.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.mask_ratio", self.mask_ratio.to_string()),
            ("train.seed", self.seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("model.hidden_dim", self.hidden_dim),
            ("model.embed_dim", self.embed_dim),
            ("model.shared_dim", self.shared_dim),
            ("model.fused_dim", self.fused_dim),
            ("model.concept_dim", self.concept_dim),
            ("model.max_len", self.max_len),
            ("train.batch_size", self.batch_size),
        ];
        if let Some((k, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "`model.lambda` must be >= 0",
        )?;
        check(
            self.margin > 0.0 && self.margin.is_finite(),
            "`model.margin` must be > 0",
        )?;
        check(
            (0.0..=1.0).contains(&self.mask_ratio),
            "`train.mask_ratio` must be in [0, 1]",
        )?;
        check(
            self.momentum > 0.0 && self.momentum <= 1.0,
            "`model.momentum` must be in (0, 1]",
        )?;
        check(self.eps > 0.0 && self.eps.is_finite(), "`model.eps` must be > 0")?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "`train.learning_rate` must be > 0",
        )
    }

    /// Width of `[t, c, v, |t - v|, t * v, s_word_max, s_word_mean, s_sample]`.
    pub fn fused_input_dim(&self) -> usize {
        5 * self.hidden_dim + 3
    }
}

/// Component switches for the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    pub use_knowledge: bool,
    pub use_semantic: bool,
    pub use_contrastive: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const FULL: Self = AblationFlags {
        use_knowledge: true,
        use_semantic: true,
        use_contrastive: true,
    };
    pub const NONE: Self = AblationFlags {
        use_knowledge: false,
        use_semantic: false,
        use_contrastive: false,
    };

    /// The full model and the three single-component ablations, in report order.
    pub fn variants() -> [(&'static str, AblationFlags); 4] {
        [
            ("full", Self::FULL),
            (
                "w/o Knowledge",
                AblationFlags {
                    use_knowledge: false,
                    ..Self::FULL
                },
            ),
            (
                "w/o Semantic",
                AblationFlags {
                    use_semantic: false,
                    ..Self::FULL
                },
            ),
            (
                "w/o Contrastive",
                AblationFlags {
                    use_contrastive: false,
                    ..Self::FULL
                },
            ),
        ]
    }

    /// Word-level (concept) features are computed.
    pub fn word_level(&self) -> bool {
        self.use_knowledge && self.use_semantic
    }

    /// Sample-level (encoder) similarity is computed.
    pub fn sample_level(&self) -> bool {
        self.use_semantic
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v: bool = parse(key, value)?;
        match key {
            "flags.use_knowledge" => self.use_knowledge = v,
            "flags.use_semantic" => self.use_semantic = v,
            "flags.use_contrastive" => self.use_contrastive = v,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        [
            ("flags.use_contrastive", self.use_contrastive),
            ("flags.use_knowledge", self.use_knowledge),
            ("flags.use_semantic", self.use_semantic),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }
}
