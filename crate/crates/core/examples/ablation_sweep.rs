//! Trains the ablation variants on the synthetic task over several model
//! seeds and prints per-variant validation and test accuracy, plus the mean
//! pairwise test-accuracy gaps with win counts.
//!
//! Settings come from environment variables, e.g.
//! `SEEDS=10 LR=3e-3 HARD=1 cargo run --release --example ablation_sweep`.

use std::time::Instant;

use semirnet_core::knowledge::RelationFilter;
use semirnet_core::model::{AblationFlags, ModelConfig};
use semirnet_core::synthetic::{SyntheticSpec, SyntheticTask};
use semirnet_core::training::{evaluate, finetune, pretrain, Mining, TrainConfig};

fn env(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> semirnet_core::Result<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        samples: env("SAMPLES", d.samples as f64) as usize,
        coverage: env("COVERAGE", d.coverage),
        topics: env("TOPICS", d.topics as f64) as usize,
        caption_only: env("CAPTION_ONLY", d.caption_only),
        seed: env("DATA_SEED", d.seed as f64) as u64,
        ..d
    };
    let tc = TrainConfig {
        stage1_epochs: env("STAGE1", 3.0) as usize,
        epochs: env("EPOCHS", 27.0) as usize,
        patience: env("PATIENCE", 5.0) as usize,
        mining: if env("HARD", 0.0) > 0.0 {
            Mining::Hard
        } else {
            Mining::Random
        },
    };
    let variants = AblationFlags::variants();
    let task = SyntheticTask::generate(&spec)?;
    let kb = task.knowledge_base(5, &RelationFilter::default());

    let seeds = env("SEEDS", 5.0) as u64;
    let mut sums = [(0.0, 0.0); 4];
    let mut tests: Vec<[f64; 4]> = Vec::new();
    for seed in 1..=seeds {
        let config = ModelConfig {
            hidden_dim: env("HIDDEN", 32.0) as usize,
            embed_dim: env("EMBED", 32.0) as usize,
            shared_dim: env("SHARED", 4.0) as usize,
            fused_dim: env("FUSED", 32.0) as usize,
            learning_rate: env("LR", 1e-2),
            lambda: env("LAMBDA", 0.1),
            momentum: env("MOMENTUM", 0.9),
            seed,
            ..ModelConfig::default()
        };
        let t0 = Instant::now();
        let pre = pretrain(&config, &tc, &task.train, &task.val, AblationFlags::FULL)?;
        let mut line = format!("seed {seed} stage1 {:.3} |", pre.val.accuracy);
        let mut row = [0.0; 4];
        for (i, (name, flags)) in variants.iter().enumerate() {
            let out = finetune(pre.state.clone(), &tc, &task.train, &task.val, *flags, Some(&kb))?;
            let test = evaluate(&task.test, &out.state, *flags, Some(&kb))?;
            row[i] = test.accuracy;
            sums[i].0 += out.val.accuracy;
            sums[i].1 += test.accuracy;
            line.push_str(&format!(" {name} {:.3}/{:.3}", out.val.accuracy, test.accuracy));
        }
        println!("{line} | {:.1}s", t0.elapsed().as_secs_f64());
        tests.push(row);
    }
    let pair = |i: usize, j: usize| {
        let d: Vec<f64> = tests.iter().map(|r| r[i] - r[j]).collect();
        let wins = d.iter().filter(|&&x| x > 0.0).count();
        format!("{:+.4} ({wins}/{})", d.iter().sum::<f64>() / d.len() as f64, d.len())
    };
    println!(
        "full-noK {}  full-noS {}  full-noC {}  noK-noS {}",
        pair(0, 1),
        pair(0, 2),
        pair(0, 3),
        pair(1, 2)
    );
    let mean: Vec<String> = variants
        .iter()
        .zip(&sums)
        .map(|((n, _), (v, t))| format!("{n} {:.3}/{:.3}", v / seeds as f64, t / seeds as f64))
        .collect();
    println!("mean val/test: {}", mean.join("  "));
    Ok(())
}
