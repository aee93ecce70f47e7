use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::optim::{adam_step, hard_triplets, sample_triplets, AdamState};
use crate::dataset::Dataset;
use crate::encoders::apply_text_mask;
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeBase;
use crate::model::{
    build_vocab, forward, forward_graph, prepare, total_loss, AblationFlags, ModelConfig, ModelState, Prepared,
};
use crate::numerics::Tape;
use crate::similarity::Mode;

/// How triplets are chosen within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mining {
    #[default]
    Random,
    /// Farthest positive and nearest negative in the current embedding.
    Hard,
}

impl Mining {
    pub fn name(self) -> &'static str {
        match self {
            Mining::Random => "random",
            Mining::Hard => "hard",
        }
    }
}

/// Epoch budgets, stopping rule and triplet mining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    /// Maximum epochs of encoder pre-training.
    pub stage1_epochs: usize,
    /// Maximum epochs of end-to-end training.
    pub epochs: usize,
    /// Epochs without a validation accuracy improvement before stopping.
    pub patience: usize,
    pub mining: Mining,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 3,
            epochs: 30,
            patience: 5,
            mining: Mining::Random,
        }
    }
}

pub const TRAIN_KEYS: &[(&str, &str, &str)] = &[
    (
        "train.stage1_epochs",
        "3",
        "maximum pre-training epochs (cross-entropy only)",
    ),
    ("train.epochs", "30", "maximum end-to-end epochs"),
    (
        "train.patience",
        "5",
        "epochs without validation improvement before stopping",
    ),
    ("train.triplet_mining", "random", "triplet selection: random or hard"),
];

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "train.triplet_mining" {
            self.mining = match value.trim() {
                "random" => Mining::Random,
                "hard" => Mining::Hard,
                _ => return Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
            };
            return Ok(());
        }
        let v: usize = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))?;
        match key {
            "train.stage1_epochs" => self.stage1_epochs = v,
            "train.epochs" => self.epochs = v,
            "train.patience" => self.patience = v,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("train.stage1_epochs".to_string(), self.stage1_epochs.to_string()),
            ("train.epochs".to_string(), self.epochs.to_string()),
            ("train.patience".to_string(), self.patience.to_string()),
            ("train.triplet_mining".to_string(), self.mining.name().to_string()),
        ])
    }
}

/// One line of the epoch log. Epoch 0 of a stage is the evaluation before
/// any update in that stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub log: Vec<EpochRecord>,
    /// Validation metrics of the returned state.
    pub val: Metrics,
    pub warnings: Vec<String>,
}

/// Evaluates prepared samples in inference mode; no masking is applied.
pub fn evaluate_prepared(batch: &[Prepared], state: &ModelState, flags: AblationFlags) -> Result<Metrics> {
    if batch.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut predicted = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(state.config.batch_size.max(1)) {
        let out = forward(chunk, state, flags, Mode::Infer)?;
        for i in 0..chunk.len() {
            let l = out.logits.row(i);
            predicted.push(crate::model::predict_from_logits(l[0], l[1]).0);
        }
    }
    let actual: Vec<u8> = batch.iter().map(|p| p.label).collect();
    Ok(Metrics::from_predictions(&predicted, &actual))
}

pub fn evaluate(
    dataset: &Dataset,
    state: &ModelState,
    flags: AblationFlags,
    kb: Option<&KnowledgeBase>,
) -> Result<Metrics> {
    let kb = if flags.word_level() { kb } else { None };
    let prepared = prepare(&dataset.samples, &state.vocab, kb)?;
    evaluate_prepared(&prepared, state, flags)
}

/// Settings that differ between stages.
struct StagePlan {
    stage: u8,
    flags: AblationFlags,
    lambda: f64,
    max_epochs: usize,
    mining: Mining,
}

fn epoch_rng(seed: u64, stage: u8, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (((stage as u64) << 32) | epoch as u64))
}

fn run_epoch(
    state: &mut ModelState,
    adam: &mut AdamState,
    train: &[Prepared],
    plan: &StagePlan,
    epoch: usize,
) -> Result<f64> {
    let mut rng = epoch_rng(state.config.seed, plan.stage, epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let config = ModelConfig {
        lambda: plan.lambda,
        ..state.config.clone()
    };
    let mut loss_sum = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<Prepared> = chunk
            .iter()
            .map(|&i| {
                let mut p = train[i].clone();
                p.text = apply_text_mask(&p.text, config.mask_ratio, &mut rng);
                p
            })
            .collect();
        let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();
        // drawn in every mode so the rng stream does not depend on the mining choice
        let mut triplets = sample_triplets(&labels, &mut rng);

        let mut tape = Tape::new();
        let vars = state.register(&mut tape);
        let g = forward_graph(
            &mut tape,
            &vars,
            &config,
            &state.mapping,
            &batch,
            plan.flags,
            Mode::Train,
        )?;
        if plan.mining == Mining::Hard {
            triplets = hard_triplets(&labels, tape.value(g.embeddings));
        }
        let labels: Vec<i64> = labels.into_iter().map(i64::from).collect();
        let loss = total_loss(
            &mut tape,
            g.logits,
            &labels,
            g.embeddings,
            &triplets,
            &config,
            plan.flags,
        )?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss in stage {} epoch {epoch}",
                plan.stage
            )));
        }
        let mut grads = tape.backward(loss)?;
        let grads: BTreeMap<String, _> = vars.vars.iter().map(|(k, &v)| (k.clone(), grads.take(v))).collect();
        adam_step(&mut state.params, &grads, adam, config.learning_rate)?;
        if let Some(m) = g.mapping {
            state.mapping = m;
        }
        loss_sum += value;
        batches += 1;
    }
    Ok(loss_sum / batches as f64)
}

/// Trains one stage with early stopping and returns the best state.
fn run_stage(
    mut state: ModelState,
    train: &[Prepared],
    val: &[Prepared],
    plan: &StagePlan,
    patience: usize,
    log: &mut Vec<EpochRecord>,
) -> Result<(ModelState, Metrics)> {
    let mut best_metrics = evaluate_prepared(val, &state, plan.flags)?;
    log.push(EpochRecord {
        stage: plan.stage,
        epoch: 0,
        train_loss: None,
        val: best_metrics,
    });
    let mut best = state.clone();
    let mut adam = AdamState::new(&state.params);
    let mut stale = 0;
    for epoch in 1..=plan.max_epochs {
        let train_loss = run_epoch(&mut state, &mut adam, train, plan, epoch)?;
        let metrics = evaluate_prepared(val, &state, plan.flags)?;
        log.push(EpochRecord {
            stage: plan.stage,
            epoch,
            train_loss: Some(train_loss),
            val: metrics,
        });
        if metrics.accuracy > best_metrics.accuracy {
            best_metrics = metrics;
            best = state.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= patience {
            break;
        }
    }
    Ok((best, best_metrics))
}

fn check_sets(train: &Dataset, val: &Dataset, warnings: &mut Vec<String>) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let counts = train.label_counts();
    if counts[0] == 0 || counts[1] == 0 {
        warnings.push(format!(
            "training set has a single class ({} non-ironic, {} ironic); no triplets can be formed",
            counts[0], counts[1]
        ));
    }
    Ok(())
}

/// Stage 1: encoders and classifier trained with cross-entropy only, no
/// similarity features. The returned state carries `flags` for later stages.
pub fn pretrain(
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    flags: AblationFlags,
) -> Result<TrainOutcome> {
    let mut warnings = Vec::new();
    check_sets(train, val, &mut warnings)?;
    let mut config = config.clone();
    if config.image_feature_dim == 0 {
        if let Some(v) = train.samples.iter().find_map(|s| s.image_vec.as_ref()) {
            config.image_feature_dim = v.len();
        }
    }
    let state = ModelState::new(config, flags, build_vocab(&train.samples))?;
    let train_p = prepare(&train.samples, &state.vocab, None)?;
    let val_p = prepare(&val.samples, &state.vocab, None)?;
    let plan = StagePlan {
        stage: 1,
        flags: AblationFlags::NONE,
        lambda: 0.0,
        max_epochs: train_cfg.stage1_epochs,
        mining: train_cfg.mining,
    };
    let mut log = Vec::new();
    let (mut state, val_metrics) = run_stage(state, &train_p, &val_p, &plan, train_cfg.patience, &mut log)?;
    state.flags = flags;
    Ok(TrainOutcome {
        state,
        log,
        val: val_metrics,
        warnings,
    })
}

/// Stages 2 and 3: attaches concept features (when the flags use them) and
/// trains end to end from a pre-trained state.
pub fn finetune(
    pretrained: ModelState,
    train_cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    flags: AblationFlags,
    kb: Option<&KnowledgeBase>,
) -> Result<TrainOutcome> {
    let mut warnings = Vec::new();
    check_sets(train, val, &mut warnings)?;
    let kb = if flags.word_level() {
        Some(kb.ok_or_else(|| Error::Config("knowledge features enabled but no concept cache given".into()))?)
    } else {
        None
    };
    let mut state = pretrained;
    state.flags = flags;
    state.mapping.mode = Mode::Train;
    let train_p = prepare(&train.samples, &state.vocab, kb)?;
    let val_p = prepare(&val.samples, &state.vocab, kb)?;
    let plan = StagePlan {
        stage: 3,
        flags,
        lambda: state.config.lambda,
        max_epochs: train_cfg.epochs,
        mining: train_cfg.mining,
    };
    let mut log = Vec::new();
    let (mut state, val_metrics) = run_stage(state, &train_p, &val_p, &plan, train_cfg.patience, &mut log)?;
    state.mapping.mode = Mode::Infer;
    Ok(TrainOutcome {
        state,
        log,
        val: val_metrics,
        warnings,
    })
}

/// The full staged schedule.
pub fn train(
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    flags: AblationFlags,
    kb: Option<&KnowledgeBase>,
) -> Result<TrainOutcome> {
    let pre = pretrain(config, train_cfg, train_set, val_set, flags)?;
    let mut fine = finetune(pre.state, train_cfg, train_set, val_set, flags, kb)?;
    let mut log = pre.log;
    log.append(&mut fine.log);
    let mut warnings = pre.warnings;
    warnings.extend(
        fine.warnings
            .into_iter()
            .filter(|w| !warnings.contains(w))
            .collect::<Vec<_>>(),
    );
    Ok(TrainOutcome { log, warnings, ..fine })
}

/// The epoch log as JSON lines.
pub fn log_to_jsonl(log: &[EpochRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("serialize epoch record") + "\n")
        .collect()
}
