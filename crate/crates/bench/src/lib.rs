//! Shared fixtures for the benchmarks under `benches/`.

use semirnet_core::knowledge::{KnowledgeBase, RelationFilter};
use semirnet_core::model::{build_vocab, prepare, AblationFlags, ModelConfig, ModelState, Prepared};
use semirnet_core::synthetic::{SyntheticSpec, SyntheticTask};

pub struct Fixture {
    pub task: SyntheticTask,
    pub kb: KnowledgeBase,
    pub config: ModelConfig,
    pub state: ModelState,
    pub train: Vec<Prepared>,
}

/// A synthetic task of `samples` examples and a freshly initialized model
/// with the widths used by the CLI's synthetic config.
pub fn fixture(samples: usize) -> Fixture {
    let task = SyntheticTask::generate(&SyntheticSpec {
        samples,
        ..SyntheticSpec::default()
    })
    .expect("synthetic task");
    let kb = task.knowledge_base(5, &RelationFilter::default());
    let config = ModelConfig {
        hidden_dim: 32,
        embed_dim: 32,
        shared_dim: 4,
        fused_dim: 32,
        learning_rate: 1e-2,
        ..ModelConfig::default()
    };
    let state = ModelState::new(config.clone(), AblationFlags::FULL, build_vocab(&task.train.samples)).expect("model");
    let train = prepare(&task.train.samples, &state.vocab, Some(&kb)).expect("prepare");
    Fixture {
        task,
        kb,
        config,
        state,
        train,
    }
}
