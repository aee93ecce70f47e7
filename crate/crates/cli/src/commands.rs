use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use semirnet_core::encoders::load_precomputed_features;
use semirnet_core::knowledge::{
    default_stopwords, load_edges, load_numberbatch, ApiConfig, ConceptEdge, ConceptNetClient, EdgeIndex, HttpResponse,
    KnowledgeBase, ResponseCache, Transport, TransportError,
};
use semirnet_core::model::{file, AblationFlags};
use semirnet_core::synthetic::{SyntheticSpec, SyntheticTask};
use semirnet_core::training::{self, EpochRecord, Metrics};
use semirnet_core::{Category, Dataset, Error, Split};

use crate::config::RunConfig;

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub fn exit_code(category: Category) -> i32 {
    match category {
        Category::Format => 2,
        Category::Data | Category::Network => 3,
        Category::Numerical => 4,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: exit_code(e.category()),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub struct Ctx {
    pub cfg: RunConfig,
    pub quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Writes every file or none: contents go to hidden siblings first and are
/// renamed into place once all of them are written.
fn write_all_or_nothing(files: &[(&Path, &[u8])]) -> CliResult {
    let mut staged: Vec<(PathBuf, &Path)> = Vec::new();
    let cleanup = |staged: &[(PathBuf, &Path)]| {
        for (tmp, _) in staged {
            let _ = fs::remove_file(tmp);
        }
    };
    for (path, bytes) in files {
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let tmp = dir.join(format!(".{name}.partial"));
        let res = fs::create_dir_all(dir).and_then(|_| fs::write(&tmp, bytes));
        staged.push((tmp.clone(), path));
        if let Err(e) = res {
            cleanup(&staged);
            return Err(Error::io(&tmp, e).into());
        }
    }
    for (tmp, path) in &staged {
        if let Err(e) = fs::rename(tmp, path) {
            cleanup(&staged);
            return Err(Error::io(*path, e).into());
        }
    }
    Ok(())
}

fn load_split(cfg: &RunConfig, path: &Path, split: Split) -> CliResult<Dataset> {
    let mut ds = Dataset::load(path, split)?;
    if let Some(fp) = &cfg.paths.image_features {
        let features = load_precomputed_features(fp)?;
        for s in ds.samples.iter_mut().filter(|s| s.image_vec.is_none()) {
            s.image_vec = features.get(&s.id).cloned();
        }
    }
    Ok(ds)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    Ok(RunConfig::require(path, key)?)
}

fn load_knowledge(path: &Option<PathBuf>) -> CliResult<KnowledgeBase> {
    Ok(KnowledgeBase::load(required(path, "knowledge.cache")?)?)
}

/// Stand-in transport for builds without live HTTP support.
#[cfg(not(feature = "http"))]
struct NoNetwork;

#[cfg(not(feature = "http"))]
impl Transport for NoNetwork {
    fn get(&self, _url: &str, _timeout: Duration) -> Result<HttpResponse, TransportError> {
        Err(TransportError("built without the `http` feature".into()))
    }
}

fn query_all<T: Transport>(client: &ConceptNetClient<T>, words: &[String]) -> CliResult<Vec<ConceptEdge>> {
    let stop = default_stopwords();
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for w in words {
        let norm = semirnet_core::knowledge::normalize_concept(w);
        if norm.is_empty() || stop.contains(&norm) {
            continue;
        }
        for e in client.query(&norm)? {
            if seen.insert((e.start.clone(), e.relation.clone(), e.end.clone())) {
                edges.push(e);
            }
        }
    }
    Ok(edges)
}

fn api_edges(cache_dir: &Path, api: &ApiConfig, words: &[String]) -> CliResult<Vec<ConceptEdge>> {
    let cache = ResponseCache::open(cache_dir)?;
    #[cfg(feature = "http")]
    {
        let client = ConceptNetClient::new(semirnet_core::knowledge::UreqTransport, cache, api.clone());
        query_all(&client, words)
    }
    #[cfg(not(feature = "http"))]
    {
        let client = ConceptNetClient::new(NoNetwork, cache, api.clone());
        query_all(&client, words)
    }
}

fn read_word_list(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn data_words(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let mut words = BTreeSet::new();
    for (path, split) in [
        (&cfg.paths.train, Split::Train),
        (&cfg.paths.val, Split::Val),
        (&cfg.paths.test, Split::Test),
    ] {
        if let Some(p) = path {
            for s in Dataset::load(p, split)?.samples {
                words.extend(s.text_tokens());
                words.extend(s.caption_tokens());
                words.extend(s.attribute_words());
            }
        }
    }
    Ok(words.into_iter().collect())
}

pub fn knowledge_build(ctx: &Ctx) -> CliResult {
    let cfg = &ctx.cfg;
    let out = required(&cfg.paths.knowledge, "knowledge.cache")?;
    let table = load_numberbatch(
        required(&cfg.paths.numberbatch, "knowledge.numberbatch")?,
        &cfg.api.language,
        cfg.model.concept_dim,
    )?;
    let words = match &cfg.paths.vocab {
        Some(p) => read_word_list(p)?,
        None => data_words(cfg)?,
    };
    let edges = match (&cfg.paths.edges, &cfg.paths.api_cache) {
        (Some(p), _) => load_edges(p)?,
        (None, Some(dir)) => api_edges(dir, &cfg.api, &words)?,
        (None, None) => {
            return Err(Error::Config("set `knowledge.edges` or `conceptnet.cache_dir`".into()).into());
        }
    };
    let index = EdgeIndex::new(edges);
    let kb = KnowledgeBase::build(
        words.iter().map(String::as_str),
        &table,
        &index,
        cfg.model.concept_k,
        &cfg.model.relations,
        &default_stopwords(),
    );
    write_all_or_nothing(&[(out, &kb.to_bytes())])?;
    ctx.note(format!(
        "concept cache: {} words, {} vectors, {} edges -> {}",
        kb.len(),
        table.len(),
        index.len(),
        out.display()
    ));
    Ok(())
}

pub fn train(ctx: &Ctx) -> CliResult {
    let cfg = &ctx.cfg;
    let train_set = load_split(cfg, required(&cfg.paths.train, "data.train")?, Split::Train)?;
    let val_set = load_split(cfg, required(&cfg.paths.val, "data.val")?, Split::Val)?;
    let kb = if cfg.flags.word_level() {
        Some(load_knowledge(&cfg.paths.knowledge)?)
    } else {
        None
    };
    let out = training::train(&cfg.model, &cfg.train, &train_set, &val_set, cfg.flags, kb.as_ref())?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    for r in &out.log {
        ctx.note(format!(
            "stage {} epoch {:>2}  loss {}  val acc {:.4}",
            r.stage,
            r.epoch,
            r.train_loss.map_or("-".to_string(), |l| format!("{l:.4}")),
            r.val.accuracy
        ));
    }
    let model = file::to_bytes(&out.state);
    let log = training::log_to_jsonl(&out.log);
    write_all_or_nothing(&[(&cfg.paths.model, &model), (&cfg.paths.log, log.as_bytes())])?;
    println!("{}", serde_json::to_string(&out.val).expect("serialize metrics"));
    Ok(())
}

pub fn eval(ctx: &Ctx, model: Option<PathBuf>, data: Option<PathBuf>, knowledge: Option<PathBuf>) -> CliResult {
    let cfg = &ctx.cfg;
    let state = file::load(&model.unwrap_or_else(|| cfg.paths.model.clone()))?;
    let data = data
        .or_else(|| cfg.paths.test.clone())
        .or_else(|| cfg.paths.val.clone());
    let dataset = load_split(cfg, required(&data, "data.test")?, Split::Test)?;
    let kb = if state.flags.word_level() {
        Some(load_knowledge(&knowledge.or_else(|| cfg.paths.knowledge.clone()))?)
    } else {
        None
    };
    let metrics = training::evaluate(&dataset, &state, state.flags, kb.as_ref())?;
    println!("{}", serde_json::to_string(&metrics).expect("serialize metrics"));
    Ok(())
}

/// One ablation variant; `metrics` is `None` when the variant failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub use_knowledge: bool,
    pub use_semantic: bool,
    pub use_contrastive: bool,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResults {
    /// Split the metrics were measured on.
    pub split: String,
    pub seed: u64,
    pub pretrain_log: Vec<EpochRecord>,
    pub rows: Vec<AblationRow>,
}

fn points(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn delta(v: f64, base: f64) -> String {
    let d = 100.0 * (v - base);
    if d == 0.0 {
        "+0.00".into()
    } else {
        format!("{d:+.2}")
    }
}

/// The ablation table: scores in percent, deltas in points against `full`.
pub fn render(results: &AblationResults) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>8} {:>8} {:>9} {:>8} {:>8} {:>10}\n",
        "variant", "Acc", "F1", "Macro-F1", "ΔAcc", "ΔF1", "ΔMacro-F1"
    ));
    let base = results
        .rows
        .iter()
        .find(|r| r.variant == "full")
        .and_then(|r| r.metrics);
    for row in &results.rows {
        match (&row.metrics, &row.error) {
            (Some(m), _) => {
                let (da, df, dm) = match base {
                    Some(b) => (
                        delta(m.accuracy, b.accuracy),
                        delta(m.f1, b.f1),
                        delta(m.macro_f1, b.macro_f1),
                    ),
                    None => ("n/a".into(), "n/a".into(), "n/a".into()),
                };
                out.push_str(&format!(
                    "{:<16} {:>8} {:>8} {:>9} {:>8} {:>8} {:>10}\n",
                    row.variant,
                    points(m.accuracy),
                    points(m.f1),
                    points(m.macro_f1),
                    da,
                    df,
                    dm
                ));
            }
            (None, err) => out.push_str(&format!(
                "{:<16} failed: {}\n",
                row.variant,
                err.as_deref().unwrap_or("unknown error")
            )),
        }
    }
    out.push_str(&format!(
        "split: {}, seed: {}; positive class = ironic; ratios with a zero denominator are reported as 0\n",
        results.split, results.seed
    ));
    out
}

pub fn ablate(ctx: &Ctx) -> CliResult {
    let cfg = &ctx.cfg;
    let train_set = load_split(cfg, required(&cfg.paths.train, "data.train")?, Split::Train)?;
    let val_set = load_split(cfg, required(&cfg.paths.val, "data.val")?, Split::Val)?;
    let (held, split) = match &cfg.paths.test {
        Some(p) => (load_split(cfg, p, Split::Test)?, "test"),
        None => (val_set.clone(), "val"),
    };
    let kb = load_knowledge(&cfg.paths.knowledge);

    ctx.note("pre-training shared encoders");
    let pre = training::pretrain(&cfg.model, &cfg.train, &train_set, &val_set, AblationFlags::FULL)?;
    let mut rows = Vec::new();
    let mut failure: Option<i32> = None;
    for (name, flags) in AblationFlags::variants() {
        ctx.note(format!("training variant `{name}`"));
        let run = || -> CliResult<(Metrics, Vec<EpochRecord>)> {
            let kb = match (&kb, flags.word_level()) {
                (Ok(kb), true) => Some(kb),
                (Err(e), true) => {
                    return Err(CliError {
                        code: e.code,
                        message: e.message.clone(),
                    })
                }
                (_, false) => None,
            };
            let out = training::finetune(pre.state.clone(), &cfg.train, &train_set, &val_set, flags, kb)?;
            let m = training::evaluate(&held, &out.state, flags, kb)?;
            Ok((m, out.log))
        };
        let (metrics, error, log) = match run() {
            Ok((m, log)) => (Some(m), None, log),
            Err(e) => {
                eprintln!("variant `{name}` failed: {}", e.message);
                failure.get_or_insert(e.code);
                (None, Some(e.message), Vec::new())
            }
        };
        rows.push(AblationRow {
            variant: name.to_string(),
            use_knowledge: flags.use_knowledge,
            use_semantic: flags.use_semantic,
            use_contrastive: flags.use_contrastive,
            metrics,
            error,
            log,
        });
    }
    let results = AblationResults {
        split: split.into(),
        seed: cfg.model.seed,
        pretrain_log: pre.log,
        rows,
    };
    let json = serde_json::to_string_pretty(&results).expect("serialize results") + "\n";
    write_all_or_nothing(&[(&cfg.paths.ablation, json.as_bytes())])?;
    print!("{}", render(&results));
    std::io::stdout().flush().ok();
    match failure {
        Some(code) => Err(CliError {
            code,
            message: "one or more variants failed".into(),
        }),
        None => Ok(()),
    }
}

pub fn report(ctx: &Ctx, results: Option<PathBuf>) -> CliResult {
    let path = results.unwrap_or_else(|| ctx.cfg.paths.ablation.clone());
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let results: AblationResults =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
    print!("{}", render(&results));
    Ok(())
}

/// Settings that fit the generated task in well under a minute.
pub fn synthetic_config() -> serde_json::Value {
    serde_json::json!({
        "data.train": "train.jsonl",
        "data.val": "val.jsonl",
        "data.test": "test.jsonl",
        "knowledge.numberbatch": "numberbatch.txt",
        "knowledge.edges": "edges.csv",
        "knowledge.vocab": "vocab.txt",
        "knowledge.cache": "concepts.bin",
        "model.hidden_dim": 32,
        "model.embed_dim": 32,
        "model.shared_dim": 4,
        "model.fused_dim": 32,
        "train.learning_rate": 0.01,
        "train.stage1_epochs": 3,
        "train.epochs": 27,
        "train.patience": 5,
        "output.model": "model.sirn",
        "output.log": "train_log.jsonl",
        "output.ablation": "ablation.json"
    })
}

pub fn synth(ctx: &Ctx, out: &Path, samples: Option<usize>, seed: Option<u64>) -> CliResult {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        samples: samples.unwrap_or(d.samples),
        seed: seed.unwrap_or(d.seed),
        ..d
    };
    let task = SyntheticTask::generate(&spec)?;
    let files = task.write(out)?;
    let config = serde_json::to_string_pretty(&synthetic_config()).expect("serialize config") + "\n";
    let config_path = out.join("config.json");
    write_all_or_nothing(&[(&config_path, config.as_bytes())])?;
    ctx.note(format!(
        "{} train / {} val / {} test samples, {} concept vectors, {} edges in {}",
        task.train.len(),
        task.val.len(),
        task.test.len(),
        task.vectors.len(),
        task.edges.len(),
        files.train.parent().unwrap_or(out).display()
    ));
    Ok(())
}
