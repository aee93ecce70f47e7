//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use semirnet_core::encoders::{load_precomputed_features, write_precomputed_features};
use semirnet_core::knowledge::{
    load_edges, load_numberbatch, save_edges, save_numberbatch, ApiConfig, ConceptEdge, ConceptNetClient, EdgeIndex,
    EmbeddingTable, HttpResponse, KnowledgeBase, RelationFilter, ResponseCache, Transport, TransportError,
};
use semirnet_core::model::{
    build_vocab, file, forward, forward_graph, prepare, total_loss, triplet_loss, AblationFlags, ModelConfig,
    ModelState, ParamVars,
};
use semirnet_core::numerics::{cosine_similarity, grad_check_many};
use semirnet_core::similarity::{fit_mapping, similarity_from_shared, word_level_similarity, MappingState, Mode};
use semirnet_core::training::Metrics;
use semirnet_core::{Sample, Tape, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn semirnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semirnet"))
        .args(args)
        .output()
        .expect("spawn semirnet")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let o = semirnet(args);
    if o.status.success() {
        Ok(o)
    } else {
        Err(format!("`semirnet {}` failed: {}", args.join(" "), stderr(&o)))
    }
}

// 1. gradient fidelity

fn sample(id: &str, text: &str, caption: &str, attrs: &[&str], label: u8) -> Sample {
    Sample {
        id: id.into(),
        text: text.into(),
        caption: caption.into(),
        image_attrs: attrs.iter().map(|s| s.to_string()).collect(),
        image_vec: None,
        label,
    }
}

fn toy_batch() -> (Vec<Sample>, KnowledgeBase) {
    let samples = vec![
        sample("a", "sunny beach holiday", "sand sea", &["sun", "sand"], 0),
        sample("b", "lovely sunny weather", "storm", &["rain", "cloud"], 1),
        sample("c", "cold snow day", "snowman", &["snow"], 0),
        sample("d", "great warm evening", "ice", &["snow", "ice"], 1),
    ];
    let mut table = EmbeddingTable::new(4, "en");
    for (w, v) in [
        ("sunny", [1.0, 0.2, 0.0, 0.1]),
        ("sun", [0.9, 0.1, 0.1, 0.0]),
        ("warm", [0.8, 0.0, 0.3, 0.1]),
        ("heat", [0.7, 0.2, 0.2, 0.3]),
        ("snow", [0.0, 1.0, 0.1, 0.2]),
        ("cold", [0.1, 0.9, 0.0, 0.3]),
        ("ice", [0.0, 0.8, 0.4, 0.1]),
        ("rain", [0.2, 0.3, 1.0, 0.0]),
        ("cloud", [0.1, 0.4, 0.9, 0.2]),
        ("sand", [0.6, 0.0, 0.0, 0.9]),
    ] {
        table.insert(w, v.to_vec()).unwrap();
    }
    let edges = EdgeIndex::new(vec![
        ConceptEdge::new("sunny", "RelatedTo", "heat", 1.0).unwrap(),
        ConceptEdge::new("warm", "RelatedTo", "heat", 2.0).unwrap(),
        ConceptEdge::new("snow", "RelatedTo", "cold", 2.0).unwrap(),
    ]);
    let words: Vec<String> = samples
        .iter()
        .flat_map(|s| {
            s.text_tokens()
                .into_iter()
                .chain(s.caption_tokens())
                .chain(s.attribute_words())
        })
        .collect();
    let kb = KnowledgeBase::build(
        words.iter().map(String::as_str),
        &table,
        &edges,
        3,
        &RelationFilter::All,
        &BTreeSet::new(),
    );
    (samples, kb)
}

fn gradient_fidelity() -> Outcome {
    let t0 = Instant::now();
    let (samples, kb) = toy_batch();
    let config = ModelConfig {
        hidden_dim: 4,
        embed_dim: 3,
        shared_dim: 2,
        fused_dim: 4,
        seed: 3,
        ..ModelConfig::default()
    };
    let flags = AblationFlags::FULL;
    let mut state = ModelState::new(config, flags, build_vocab(&samples)).map_err(|e| e.to_string())?;
    let batch = prepare(&samples, &state.vocab, Some(&kb)).map_err(|e| e.to_string())?;
    let fitted = forward(&batch, &state, flags, Mode::Train).map_err(|e| e.to_string())?;
    state.mapping = fitted
        .mapping
        .expect("train mode fits the mapping")
        .with_mode(Mode::Infer);

    let names: Vec<String> = state.params.keys().cloned().collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| state.params[n].clone()).collect();
    let labels: Vec<i64> = samples.iter().map(|s| s.label as i64).collect();
    let triplets = [(0, 2, 1), (1, 3, 0), (2, 0, 3), (3, 1, 2)];
    let report = grad_check_many(
        |tape, vars| {
            let pv = ParamVars {
                vars: names
                    .iter()
                    .cloned()
                    .zip(vars.iter().copied())
                    .collect::<BTreeMap<_, _>>(),
            };
            let g = forward_graph(tape, &pv, &state.config, &state.mapping, &batch, flags, Mode::Infer)?;
            total_loss(tape, g.logits, &labels, g.embeddings, &triplets, &state.config, flags)
        },
        &inputs,
        1e-5,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    check(report.max_rel_error < 1e-4, || {
        format!(
            "max relative error {:.3e} at `{}`",
            report.max_rel_error, names[report.worst.0]
        )
    })?;
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    let coords: usize = inputs.iter().map(Tensor::len).sum();
    Ok(format!(
        "max rel err {:.2e} over {coords} coordinates in {elapsed:.2?}",
        report.max_rel_error
    ))
}

// 2. whitening

fn oracle_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, d) = (rows.len(), rows[0].len());
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    cov
}

fn whitening() -> Outcome {
    let (n, d) = (32, 8);
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        // strictly diagonally dominant mixing: correlated, full rank, bounded conditioning
        let mix: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| if i == j { 2.0 } else { rng.gen_range(-0.25..0.25) })
                    .collect()
            })
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (0..d)
                    .map(|j| 3.0 + (0..d).map(|k| x[k] * mix[k][j]).sum::<f64>())
                    .collect()
            })
            .collect();
        let z = Tensor::from_rows(&rows).unwrap();
        let state = fit_mapping(&z, &MappingState::new(d, 1.0, 1e-5)).map_err(|e| e.to_string())?;
        let m = &state.mapping;
        let mapped: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| (0..d).map(|j| (0..d).map(|k| r[k] * m.get(k, j)).sum()).collect())
            .collect();
        let cov = oracle_covariance(&mapped);
        for (i, row) in cov.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    check(worst < 1e-3, || format!("max |cov - I| = {worst:.3e}"))?;
    Ok(format!("max |cov - I| = {worst:.2e} over 20 seeds of 32x8 batches"))
}

// 3. similarity bounds and invariances

fn random_concepts(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let rows = rng.gen_range(1..=6);
    (0..rows)
        .map(|_| {
            if rng.gen_bool(0.1) {
                vec![0.0; d]
            } else {
                (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
            }
        })
        .collect()
}

fn scaled_rows(rows: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let s = if rng.gen_bool(0.5) {
                7.3
            } else {
                rng.gen_range(0.01..100.0)
            };
            r.iter().map(|v| v * s).collect()
        })
        .collect()
}

fn s_sample(z: &[f64], state: &MappingState) -> f64 {
    let mut tape = Tape::new();
    let leaf = tape.leaf(Tensor::matrix(1, z.len(), z.to_vec()).unwrap());
    let (s, _) = similarity_from_shared(&mut tape, leaf, state).unwrap();
    tape.value(s).data()[0]
}

fn similarity_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let d = 300;
    let mut worst_drift: f64 = 0.0;
    for pair in 0..1000 {
        let a = random_concepts(&mut rng, d);
        let b = random_concepts(&mut rng, d);
        let (ta, tb) = (Tensor::from_rows(&a).unwrap(), Tensor::from_rows(&b).unwrap());
        let w = word_level_similarity(&ta, &tb).map_err(|e| e.to_string())?;
        check((-1.0..=1.0).contains(&w.max) && (-1.0..=1.0).contains(&w.mean), || {
            format!("pair {pair}: out of range ({}, {})", w.max, w.mean)
        })?;
        check(w.mean <= w.max, || {
            format!("pair {pair}: mean {} > max {}", w.mean, w.max)
        })?;
        let sa = Tensor::from_rows(&scaled_rows(&a, &mut rng)).unwrap();
        let sb = Tensor::from_rows(&scaled_rows(&b, &mut rng)).unwrap();
        let ws = word_level_similarity(&sa, &sb).map_err(|e| e.to_string())?;
        worst_drift = worst_drift.max((ws.max - w.max).abs()).max((ws.mean - w.mean).abs());
        if let (Some(x), Some(y)) = (a.iter().find(|r| r.iter().any(|v| *v != 0.0)), b.first()) {
            if y.iter().any(|v| *v != 0.0) {
                let c = cosine_similarity(x, y).unwrap();
                check(c.abs() <= 1.0 + 1e-12, || format!("cosine {c}"))?;
            }
        }
    }

    // sample level: bounds with fitted statistics, invariance of the cosine
    // to rescaling of its whitened inputs
    let ds = 4;
    let batch: Vec<Vec<f64>> = (0..16)
        .map(|_| (0..2 * ds).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let fitted = fit_mapping(
        &Tensor::from_rows(&batch).unwrap(),
        &MappingState::new(2 * ds, 0.9, 1e-5),
    )
    .map_err(|e| e.to_string())?
    .with_mode(Mode::Infer);
    let centered = MappingState {
        mean: Tensor::zeros(&[2 * ds]),
        ..fitted.clone()
    };
    let identity = MappingState::new(2 * ds, 0.9, 1e-5).with_mode(Mode::Infer);
    for _ in 0..1000 {
        let z: Vec<f64> = (0..2 * ds).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let s = s_sample(&z, &fitted);
        check((-1.0..=1.0).contains(&s), || format!("s_sample {s} out of range"))?;
        let k = rng.gen_range(0.01..100.0);
        let zk: Vec<f64> = z.iter().map(|v| v * k).collect();
        worst_drift = worst_drift.max((s_sample(&zk, &centered) - s_sample(&z, &centered)).abs());
        let (ku, kw) = (rng.gen_range(0.01..100.0), 7.3);
        let zh: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, v)| v * if i < ds { ku } else { kw })
            .collect();
        worst_drift = worst_drift.max((s_sample(&zh, &identity) - s_sample(&z, &identity)).abs());
    }
    check(worst_drift <= 1e-9, || {
        format!("rescaling changed a similarity by {worst_drift:.3e}")
    })?;
    Ok(format!(
        "1000 concept-matrix pairs + 1000 shared-space pairs, max rescaling drift {worst_drift:.1e}"
    ))
}

// 4. triplet loss

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn triplet_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let d = 8;
    let margin = 0.5;
    let (mut zero_cases, mut active) = (0, 0);
    for i in 0..1000 {
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l = triplet_loss(&a, &p, &n, margin);
        check(l >= 0.0, || format!("triple {i}: negative loss {l}"))?;
        let expected = (dist(&a, &p) - dist(&a, &n) + margin).max(0.0);
        check((l - expected).abs() < 1e-12, || {
            format!("triple {i}: {l} vs oracle {expected}")
        })?;
        if l > 0.0 {
            active += 1;
        }

        // negative pushed out past the margin: exactly zero
        let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = (dist(&a, &p) + margin + rng.gen_range(0.001..1.0)) / dist(&dir, &vec![0.0; d]);
        let far: Vec<f64> = a.iter().zip(&dir).map(|(x, u)| x + u * scale).collect();
        if dist(&a, &far) >= dist(&a, &p) + margin {
            zero_cases += 1;
            let l = triplet_loss(&a, &p, &far, margin);
            check(l == 0.0, || format!("triple {i}: satisfied triple has loss {l}"))?;
        }

        // equidistant positive and negative on a dyadic grid: exactly the margin
        let grid = |rng: &mut ChaCha8Rng| {
            (0..d)
                .map(|_| rng.gen_range(-32..=32) as f64 / 16.0)
                .collect::<Vec<f64>>()
        };
        let (g, r) = (grid(&mut rng), grid(&mut rng));
        let gp: Vec<f64> = g.iter().zip(&r).map(|(x, y)| x + y).collect();
        let gn: Vec<f64> = g.iter().zip(&r).map(|(x, y)| x - y).collect();
        let l = triplet_loss(&g, &gp, &gn, margin);
        check((l - 0.5).abs() < 1e-12, || format!("triple {i}: equidistant loss {l}"))?;
    }
    check(zero_cases > 900, || {
        format!("only {zero_cases} satisfied triples were constructed")
    })?;
    Ok(format!(
        "1000 random triples ({active} active), {zero_cases} satisfied, 1000 equidistant"
    ))
}

// 5. synthetic task and ablations

fn accuracy_of(row: &Value) -> Option<f64> {
    row.get("metrics")?.get("accuracy")?.as_f64()
}

fn synthetic_task(dir: &Path) -> Outcome {
    let out = dir.to_str().unwrap();
    run_ok(&["--quiet", "synth", "--out", out])?;
    let config = dir.join("config.json");
    let config = config.to_str().unwrap();
    run_ok(&["--quiet", "--config", config, "knowledge-build"])?;

    let t0 = Instant::now();
    let trained = run_ok(&["--quiet", "--config", config, "train"])?;
    let elapsed = t0.elapsed();
    let val: Value = serde_json::from_slice(&trained.stdout).map_err(|e| e.to_string())?;
    let val_acc = val["accuracy"].as_f64().ok_or("no accuracy in train output")?;
    let log = fs::read_to_string(dir.join("train_log.jsonl")).map_err(|e| e.to_string())?;
    let epochs = log
        .lines()
        .filter(|l| {
            serde_json::from_str::<Value>(l)
                .map(|v| v["epoch"].as_u64() != Some(0))
                .unwrap_or(false)
        })
        .count();

    run_ok(&["--quiet", "--config", config, "ablate"])?;
    let results: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("ablation.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let rows = results["rows"].as_array().ok_or("no rows")?;
    let acc: BTreeMap<String, f64> = rows
        .iter()
        .map(|r| {
            Ok((
                r["variant"].as_str().unwrap_or("?").to_string(),
                accuracy_of(r).ok_or("variant failed")?,
            ))
        })
        .collect::<Result<_, String>>()?;
    let summary = format!(
        "full val {val_acc:.4} in {epochs} epochs, {elapsed:.1?}; held-out acc: full {:.4}, w/o Knowledge {:.4}, w/o Semantic {:.4}, w/o Contrastive {:.4}",
        acc["full"], acc["w/o Knowledge"], acc["w/o Semantic"], acc["w/o Contrastive"]
    );
    let mut problems = Vec::new();
    if val_acc < 0.95 {
        problems.push(format!("full val accuracy {val_acc:.4} < 0.95"));
    }
    if epochs > 30 {
        problems.push(format!("{epochs} epochs > 30"));
    }
    if elapsed >= Duration::from_secs(120) {
        problems.push(format!("training took {elapsed:?}"));
    }
    for name in ["w/o Knowledge", "w/o Semantic", "w/o Contrastive"] {
        if acc[name] >= acc["full"] {
            problems.push(format!("{name} ({:.4}) not below full ({:.4})", acc[name], acc["full"]));
        }
    }
    for name in ["w/o Knowledge", "w/o Contrastive"] {
        if acc["w/o Semantic"] >= acc[name] {
            problems.push(format!(
                "w/o Semantic ({:.4}) not the worst: {name} has {:.4}",
                acc["w/o Semantic"], acc[name]
            ));
        }
    }
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", problems.join("; ")))
    }
}

// 6. metrics

fn predictions(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<u8>, Vec<u8>) {
    let mut p = Vec::new();
    let mut a = Vec::new();
    for (count, pred, actual) in [(tp, 1, 1), (fp, 1, 0), (fn_, 0, 1), (tn, 0, 0)] {
        p.extend(std::iter::repeat_n(pred, count));
        a.extend(std::iter::repeat_n(actual, count));
    }
    (p, a)
}

fn metrics_exactness() -> Outcome {
    // (tp, fp, fn, tn) -> accuracy, precision, recall, f1, macro_f1, worked by hand
    let cases: [((usize, usize, usize, usize), [f64; 5]); 6] = [
        ((3, 1, 1, 5), [0.8, 0.75, 0.75, 0.75, (0.75 + 5.0 / 6.0) / 2.0]),
        ((0, 0, 0, 10), [1.0, 0.0, 0.0, 0.0, 0.5]),
        ((4, 6, 0, 0), [0.4, 0.4, 1.0, 4.0 / 7.0, 2.0 / 7.0]),
        ((0, 0, 5, 5), [0.5, 0.0, 0.0, 0.0, 1.0 / 3.0]),
        ((7, 0, 0, 3), [1.0, 1.0, 1.0, 1.0, 1.0]),
        (
            (2, 3, 4, 1),
            [0.3, 0.4, 1.0 / 3.0, 4.0 / 11.0, (4.0 / 11.0 + 2.0 / 9.0) / 2.0],
        ),
    ];
    for ((tp, fp, fn_, tn), want) in cases {
        let (p, a) = predictions(tp, fp, fn_, tn);
        let m = Metrics::from_predictions(&p, &a);
        let got = [m.accuracy, m.precision, m.recall, m.f1, m.macro_f1];
        for (k, (g, w)) in got.iter().zip(want).enumerate() {
            check((g - w).abs() <= 1e-12, || {
                format!("TP={tp} FP={fp} FN={fn_} TN={tn}: field {k} is {g}, expected {w}")
            })?;
        }
    }
    Ok(format!("{} confusion-matrix fixtures to 1e-12", cases.len()))
}

// 7. determinism

fn determinism(dir: &Path) -> Outcome {
    let out = dir.to_str().unwrap();
    run_ok(&["--quiet", "synth", "--out", out, "--samples", "600"])?;
    let config = dir.join("config.json");
    let config = config.to_str().unwrap();
    run_ok(&["--quiet", "--config", config, "knowledge-build"])?;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let o = run_ok(&["--quiet", "--config", config, "train"])?;
        let model = fs::read(dir.join("model.sirn")).map_err(|e| e.to_string())?;
        let log = fs::read(dir.join("train_log.jsonl")).map_err(|e| e.to_string())?;
        fs::remove_file(dir.join("model.sirn")).map_err(|e| e.to_string())?;
        runs.push((o.stdout, model, log));
    }
    check(runs[0].1 == runs[1].1, || "model files differ".into())?;
    check(runs[0].2 == runs[1].2, || "epoch logs differ".into())?;
    check(runs[0].0 == runs[1].0, || "stdout differs".into())?;
    Ok(format!(
        "two train runs: identical {}-byte model files and {}-byte epoch logs",
        runs[0].1.len(),
        runs[0].2.len()
    ))
}

// 8. ingestion round trips and malformed inputs

fn oracle_numberbatch(path: &Path) -> BTreeMap<String, Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(' ');
            let key = f.next().unwrap().trim_start_matches("/c/en/").to_string();
            (key, f.map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

fn expect_exit(args: &[&str], code: i32, needle: &str) -> Result<(), String> {
    let o = semirnet(args);
    let err = stderr(&o);
    check(o.status.code() == Some(code) && err.contains(needle), || {
        format!(
            "`semirnet {}` exited {:?} with `{}`; expected {code} mentioning `{needle}`",
            args.join(" "),
            o.status.code(),
            err.trim()
        )
    })
}

fn ingestion(dir: &Path) -> Outcome {
    let e = |e: semirnet_core::Error| e.to_string();

    let nb_path = fixture("numberbatch_5x300.txt");
    let table = load_numberbatch(&nb_path, "en", 300).map_err(e)?;
    let oracle = oracle_numberbatch(&nb_path);
    check(table.len() == 5 && oracle.len() == 5, || {
        format!("{} entries", table.len())
    })?;
    for (w, v) in &oracle {
        check(table.get(w) == Some(v.as_slice()), || {
            format!("vector of `{w}` differs from the file")
        })?;
    }
    let nb_copy = dir.join("nb.txt");
    save_numberbatch(&table, &nb_copy).map_err(e)?;
    check(load_numberbatch(&nb_copy, "en", 300).map_err(e)? == table, || {
        "numberbatch round trip differs".into()
    })?;

    let edges = load_edges(&fixture("edges.csv")).map_err(e)?;
    let expected = vec![
        ConceptEdge {
            start: "sunny".into(),
            relation: "RelatedTo".into(),
            end: "beach".into(),
            weight: 2.0,
        },
        ConceptEdge {
            start: "storm".into(),
            relation: "RelatedTo".into(),
            end: "umbrella".into(),
            weight: 1.5,
        },
        ConceptEdge {
            start: "snow".into(),
            relation: "IsA".into(),
            end: "weather".into(),
            weight: 3.25,
        },
        ConceptEdge {
            start: "beach".into(),
            relation: "HasProperty".into(),
            end: "sandy".into(),
            weight: 0.75,
        },
        ConceptEdge {
            start: "umbrella".into(),
            relation: "UsedFor".into(),
            end: "rain".into(),
            weight: 1.0,
        },
    ];
    check(edges == expected, || format!("parsed edges {edges:?}"))?;
    let edges_copy = dir.join("edges.csv");
    save_edges(&edges_copy, &edges).map_err(e)?;
    check(load_edges(&edges_copy).map_err(e)? == edges, || {
        "edge round trip differs".into()
    })?;

    let features = load_precomputed_features(&fixture("features.tsv")).map_err(e)?;
    let want: BTreeMap<String, Vec<f64>> = [
        ("p1", vec![0.25, -1.5, 3.0, 0.125]),
        ("p2", vec![1e-3, 2.5, -0.75, 0.0]),
        ("p3", vec![-0.3333, 0.6667, 1.0, -2.0]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    check(features == want, || format!("parsed features {features:?}"))?;
    let features_copy = dir.join("features.tsv");
    write_precomputed_features(&features_copy, &features).map_err(e)?;
    check(
        load_precomputed_features(&features_copy).map_err(e)? == features,
        || "feature round trip differs".into(),
    )?;

    let (samples, kb) = toy_batch();
    let config = ModelConfig {
        hidden_dim: 5,
        embed_dim: 4,
        shared_dim: 3,
        fused_dim: 6,
        concept_dim: 4,
        seed: 8,
        ..ModelConfig::default()
    };
    let mut state = ModelState::new(config, AblationFlags::FULL, build_vocab(&samples)).map_err(e)?;
    let batch = prepare(&samples, &state.vocab, Some(&kb)).map_err(e)?;
    state.mapping = forward(&batch, &state, AblationFlags::FULL, Mode::Train)
        .map_err(e)?
        .mapping
        .unwrap()
        .with_mode(Mode::Infer);
    let bytes = file::to_bytes(&state);
    let back = file::from_bytes(&bytes).map_err(e)?;
    check(file::to_bytes(&back) == bytes, || {
        "model bytes differ after reload".into()
    })?;
    let bits = |s: &ModelState| -> Vec<u64> {
        s.params
            .values()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    check(
        bits(&back) == bits(&state) && back.mapping == state.mapping && back.vocab == state.vocab,
        || "reloaded model state differs".into(),
    )?;

    // malformed inputs through the command line
    let f = |n: &str| fixture(n).to_string_lossy().into_owned();
    let out = dir.join("kb.bin").to_string_lossy().into_owned();
    let (edges_ok, vocab) = (f("edges.csv"), f("vocab3.txt"));
    expect_exit(
        &[
            "knowledge-build",
            "--numberbatch",
            &f("numberbatch_bad_value.txt"),
            "--edges",
            &edges_ok,
            "--vocab",
            &vocab,
            "--out",
            &out,
        ],
        2,
        "numberbatch_bad_value.txt:3",
    )?;
    expect_exit(
        &[
            "knowledge-build",
            "--numberbatch",
            &f("numberbatch_short_row.txt"),
            "--edges",
            &edges_ok,
            "--vocab",
            &vocab,
            "--out",
            &out,
        ],
        2,
        "line 2",
    )?;
    let nb = f("numberbatch_5x300.txt");
    expect_exit(
        &[
            "knowledge-build",
            "--numberbatch",
            &nb,
            "--edges",
            &f("edges_bad_weight.csv"),
            "--vocab",
            &vocab,
            "--out",
            &out,
        ],
        2,
        "edges_bad_weight.csv:3",
    )?;
    expect_exit(
        &[
            "knowledge-build",
            "--numberbatch",
            &nb,
            "--edges",
            &f("edges_bad_header.csv"),
            "--vocab",
            &vocab,
            "--out",
            &out,
        ],
        2,
        "edges_bad_header.csv:1",
    )?;
    check(!Path::new(&out).exists(), || "a failed build left a cache file".into())?;
    run_ok(&[
        "--quiet",
        "knowledge-build",
        "--numberbatch",
        &nb,
        "--edges",
        &edges_ok,
        "--vocab",
        &vocab,
        "--out",
        &out,
    ])?;
    let built = KnowledgeBase::load(Path::new(&out)).map_err(e)?;
    check(built.len() == 3, || {
        format!("3-word vocabulary gave {} cache entries", built.len())
    })?;

    let write_config = |name: &str, body: Value| -> String {
        let p = dir.join(name);
        fs::write(&p, body.to_string()).unwrap();
        p.to_string_lossy().into_owned()
    };
    let bad_label = write_config(
        "bad_label.json",
        serde_json::json!({"data.train": f("data_bad_label.jsonl"), "data.val": f("data_bad_label.jsonl"),
                           "flags.use_knowledge": false, "output.model": dir.join("m1.sirn"), "output.log": dir.join("l1.jsonl")}),
    );
    expect_exit(&["--config", &bad_label, "train"], 2, "data_bad_label.jsonl:2")?;
    let data = dir.join("ok.jsonl");
    fs::write(
        &data,
        "{\"id\":\"p1\",\"text\":\"sunny beach\",\"label\":0}\n{\"id\":\"p2\",\"text\":\"storm\",\"label\":1}\n",
    )
    .unwrap();
    let bad_features = write_config(
        "bad_features.json",
        serde_json::json!({"data.train": data, "data.val": data, "data.image_features": f("features_bad_dim.tsv"),
                           "flags.use_knowledge": false, "output.model": dir.join("m2.sirn"), "output.log": dir.join("l2.jsonl")}),
    );
    expect_exit(&["--config", &bad_features, "train"], 2, "features_bad_dim.tsv:2")?;
    let missing = write_config(
        "missing.json",
        serde_json::json!({"data.train": dir.join("absent.jsonl"), "data.val": data,
                           "flags.use_knowledge": false, "output.model": dir.join("m3.sirn"), "output.log": dir.join("l3.jsonl")}),
    );
    expect_exit(&["--config", &missing, "train"], 3, "absent.jsonl")?;
    check(!dir.join("m3.sirn").exists() && !dir.join("l3.jsonl").exists(), || {
        "failed train left outputs".into()
    })?;

    let model_path = dir.join("toy.sirn");
    fs::write(&model_path, &bytes[..bytes.len() / 2]).unwrap();
    let model_arg = model_path.to_string_lossy().into_owned();
    expect_exit(
        &["eval", "--model", &model_arg, "--data", &data.to_string_lossy()],
        2,
        "bad magic/version",
    )?;
    fs::write(&model_path, &bytes).unwrap();
    let empty = dir.join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    expect_exit(
        &[
            "eval",
            "--model",
            &model_arg,
            "--data",
            &empty.to_string_lossy(),
            "--knowledge",
            &out,
        ],
        3,
        "empty",
    )?;

    Ok("numberbatch (5x300), edges, features and model file round-trip exactly; 8 malformed inputs rejected with exit codes 2/3".into())
}

// 9. ConceptNet client

struct Replay {
    bodies: BTreeMap<String, Vec<u8>>,
    calls: AtomicUsize,
}

impl Transport for Replay {
    fn get(&self, url: &str, _: Duration) -> Result<HttpResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(match self.bodies.get(url) {
            Some(b) => HttpResponse {
                status: 200,
                body: b.clone(),
            },
            None => HttpResponse {
                status: 404,
                body: Vec::new(),
            },
        })
    }
}

fn edge(s: &str, r: &str, e: &str, w: f64) -> ConceptEdge {
    ConceptEdge {
        start: s.into(),
        relation: r.into(),
        end: e.into(),
        weight: w,
    }
}

fn api_client(dir: &Path) -> Outcome {
    let e = |e: semirnet_core::Error| e.to_string();
    let umbrella = fs::read(fixture("api_umbrella.json")).unwrap();
    let ice = fs::read(fixture("api_ice_cream.json")).unwrap();
    let config = ApiConfig {
        endpoint: "http://replay.test".into(),
        network_enabled: true,
        ..ApiConfig::default()
    };
    let replay = Replay {
        bodies: BTreeMap::from([
            (
                "http://replay.test/c/en/umbrella?limit=50".to_string(),
                umbrella.clone(),
            ),
            ("http://replay.test/c/en/ice_cream?limit=50".to_string(), ice),
        ]),
        calls: AtomicUsize::new(0),
    };
    let cache_dir = dir.join("responses");
    let client = ConceptNetClient::new(&replay, ResponseCache::open(&cache_dir).map_err(e)?, config.clone());

    let want_umbrella = vec![
        edge("umbrella", "UsedFor", "keep_dry", 6.0),
        edge("umbrella", "RelatedTo", "rain", 4.47),
        edge("umbrella", "IsA", "canopy", 1.0),
    ];
    let want_ice = vec![
        edge("ice_cream", "IsA", "dessert", 5.29),
        edge("ice_cream", "HasProperty", "cold", 3.46),
        edge("eat", "RelatedTo", "ice_cream", 1.0),
    ];
    let got = client.query("umbrella").map_err(e)?;
    check(got == want_umbrella, || format!("umbrella edges {got:?}"))?;
    let got = client.query("Ice Cream").map_err(e)?;
    check(got == want_ice, || format!("ice cream edges {got:?}"))?;
    check(replay.calls.load(Ordering::SeqCst) == 2, || {
        "expected one request per miss".into()
    })?;
    check(client.cache().get("umbrella").map_err(e)? == Some(umbrella), || {
        "cache does not hold the raw response".into()
    })?;

    let before = replay.calls.load(Ordering::SeqCst);
    check(client.query("umbrella").map_err(e)? == want_umbrella, || {
        "cached umbrella edges differ".into()
    })?;
    check(replay.calls.load(Ordering::SeqCst) == before, || {
        "cache hit reached the transport".into()
    })?;

    let silent = Replay {
        bodies: BTreeMap::new(),
        calls: AtomicUsize::new(0),
    };
    let reopened = ConceptNetClient::new(&silent, ResponseCache::open(&cache_dir).map_err(e)?, config);
    check(reopened.query("ice_cream").map_err(e)? == want_ice, || {
        "reopened cache edges differ".into()
    })?;
    check(silent.calls.load(Ordering::SeqCst) == 0, || {
        "reopened cache reached the transport".into()
    })?;

    let offline = ConceptNetClient::new(
        &silent,
        ResponseCache::open(&cache_dir).map_err(e)?,
        ApiConfig::default(),
    );
    check(
        offline.query("not_cached").is_err() && silent.calls.load(Ordering::SeqCst) == 0,
        || "an offline miss touched the transport".into(),
    )?;
    Ok("2 recorded responses parsed to the expected 6 edges; cache hits made 0 transport calls".into())
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| {
        let p = work.path().join(name);
        fs::create_dir_all(&p).unwrap();
        p
    };
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("whitening", Box::new(whitening)),
        ("similarity bounds and invariances", Box::new(similarity_properties)),
        ("triplet-loss contract", Box::new(triplet_contract)),
        (
            "synthetic task and ablations",
            Box::new({
                let d = sub("synthetic");
                move || synthetic_task(&d)
            }),
        ),
        ("metrics exactness", Box::new(metrics_exactness)),
        (
            "determinism",
            Box::new({
                let d = sub("determinism");
                move || determinism(&d)
            }),
        ),
        (
            "ingestion round trips",
            Box::new({
                let d = sub("ingestion");
                move || ingestion(&d)
            }),
        ),
        (
            "ConceptNet client replay",
            Box::new({
                let d = sub("api");
                move || api_client(&d)
            }),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(p.downcast_ref::<&str>().copied())
            ))
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{:.1?}]", i + 1, t0.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}) [{:.1?}]", i + 1, t0.elapsed());
            }
        }
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
