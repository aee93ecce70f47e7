//! Generator for a synthetic irony task with matching concept tables.
//!
//! Every post has a text-side topic, carried by its text or its caption, and
//! an image topic carried by its attributes; it is ironic exactly when the
//! two differ. Topic words are drawn from per-topic pools with a Zipf
//! profile, so many words are rare or absent from the training split. The
//! concept tables link a share of the words to per-topic concepts whose
//! vectors cluster around a topic centroid, while the words' own vectors are
//! random. Concept features therefore reveal topic agreement for covered
//! words, including words the encoders never saw.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::knowledge::{
    default_stopwords, save_edges, save_numberbatch, ConceptEdge, EdgeIndex, EmbeddingTable, KnowledgeBase,
    RelationFilter, CONCEPT_DIM,
};

/// Box-Muller draw from N(0, 1).
fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub topics: usize,
    pub text_words_per_topic: usize,
    pub attr_words_per_topic: usize,
    pub concepts_per_topic: usize,
    pub fillers: usize,
    /// Probability that a topic word has concept edges and a vector.
    pub coverage: f64,
    /// Topic words per text.
    pub text_topic_words: usize,
    /// Filler words per text.
    pub text_fillers: usize,
    pub attrs_per_image: usize,
    pub caption_words: usize,
    /// Probability that the text-side topic appears only in the caption,
    /// with the main text made of filler words.
    pub caption_only: f64,
    /// Zipf exponent of word frequencies within a pool.
    pub zipf: f64,
    /// Spread of concept vectors around their topic centroid.
    pub concept_noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            samples: 2000,
            topics: 6,
            text_words_per_topic: 12,
            attr_words_per_topic: 8,
            concepts_per_topic: 6,
            fillers: 30,
            coverage: 0.8,
            text_topic_words: 2,
            text_fillers: 2,
            attrs_per_image: 3,
            caption_words: 2,
            caption_only: 0.4,
            zipf: 1.0,
            concept_noise: 0.3,
            train_fraction: 0.5,
            val_fraction: 0.2,
            dim: CONCEPT_DIM,
            seed: 2024,
        }
    }
}

/// Generated splits and concept resources.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub table: EmbeddingTable,
    /// Sorted entries of `table`, as written to the Numberbatch file.
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub edges: Vec<ConceptEdge>,
    /// Every distinct word of every split, sorted.
    pub vocab: Vec<String>,
}

/// Paths written by [`SyntheticTask::write`].
#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub numberbatch: PathBuf,
    pub edges: PathBuf,
    pub vocab: PathBuf,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_word<R: Rng + ?Sized>(rng: &mut R, syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), NUCLEI.choose(rng).unwrap()))
        .collect()
}

/// `count` distinct new words of `syllables` syllables that are not stopwords.
fn fresh_words<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    syllables: usize,
    taken: &mut std::collections::BTreeSet<String>,
) -> Vec<String> {
    let stop = default_stopwords();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = pseudo_word(rng, syllables);
        if !stop.contains(&w) && taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Values as they read back from six-decimal text.
fn quantize(v: Vec<f64>) -> Vec<f64> {
    v.into_iter()
        .map(|x| format!("{x:.6}").parse().expect("formatted float"))
        .collect()
}

struct Pool {
    words: Vec<String>,
    weights: WeightedIndex<f64>,
}

impl Pool {
    fn new(words: Vec<String>, zipf: f64) -> Self {
        let w: Vec<f64> = (0..words.len()).map(|r| 1.0 / ((r + 1) as f64).powf(zipf)).collect();
        Pool {
            words,
            weights: WeightedIndex::new(w).expect("positive weights"),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<String> {
        (0..n).map(|_| self.words[self.weights.sample(rng)].clone()).collect()
    }
}

impl SyntheticTask {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        if spec.topics < 2 || spec.samples < 3 || spec.dim == 0 {
            return Err(Error::Config(
                "synthetic task needs >= 2 topics, >= 3 samples and dim > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&spec.coverage)
            || spec.train_fraction <= 0.0
            || spec.val_fraction <= 0.0
            || spec.train_fraction + spec.val_fraction >= 1.0
        {
            return Err(Error::Config(
                "synthetic coverage or split fractions out of range".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut taken = Default::default();
        let text_pools: Vec<Pool> = (0..spec.topics)
            .map(|_| {
                Pool::new(
                    fresh_words(&mut rng, spec.text_words_per_topic, 3, &mut taken),
                    spec.zipf,
                )
            })
            .collect();
        let attr_pools: Vec<Pool> = (0..spec.topics)
            .map(|_| {
                Pool::new(
                    fresh_words(&mut rng, spec.attr_words_per_topic, 2, &mut taken),
                    spec.zipf,
                )
            })
            .collect();
        let concepts: Vec<Vec<String>> = (0..spec.topics)
            .map(|_| fresh_words(&mut rng, spec.concepts_per_topic, 4, &mut taken))
            .collect();
        let fillers = Pool::new(fresh_words(&mut rng, spec.fillers, 2, &mut taken), 0.5);

        let mut vectors = BTreeMap::new();
        let mut edges = Vec::new();
        for k in 0..spec.topics {
            let centroid = unit_gaussian(&mut rng, spec.dim);
            for c in &concepts[k] {
                let noise = unit_gaussian(&mut rng, spec.dim);
                let v: Vec<f64> = centroid
                    .iter()
                    .zip(&noise)
                    .map(|(a, b)| a + spec.concept_noise * b)
                    .collect();
                vectors.insert(c.clone(), quantize(v));
            }
            for w in text_pools[k].words.iter().chain(&attr_pools[k].words) {
                if rng.gen::<f64>() >= spec.coverage {
                    continue;
                }
                vectors.insert(w.clone(), quantize(unit_gaussian(&mut rng, spec.dim)));
                let links = 2.min(concepts[k].len());
                for c in concepts[k].choose_multiple(&mut rng, links) {
                    let weight = (rng.gen_range(1.0..3.0f64) * 100.0).round() / 100.0;
                    edges.push(ConceptEdge::new(w, "RelatedTo", c, weight)?);
                }
            }
        }
        for w in &fillers.words {
            vectors.insert(w.clone(), quantize(unit_gaussian(&mut rng, spec.dim)));
        }

        let mut samples = Vec::with_capacity(spec.samples);
        for i in 0..spec.samples {
            let ironic = i % 2 == 1;
            let a = rng.gen_range(0..spec.topics);
            let b = if ironic {
                (a + rng.gen_range(1..spec.topics)) % spec.topics
            } else {
                a
            };
            let in_caption = rng.gen::<f64>() < spec.caption_only;
            let (mut text, caption) = if in_caption {
                (
                    fillers.draw(&mut rng, spec.text_topic_words),
                    text_pools[a].draw(&mut rng, spec.caption_words),
                )
            } else {
                (
                    text_pools[a].draw(&mut rng, spec.text_topic_words),
                    fillers.draw(&mut rng, spec.caption_words),
                )
            };
            text.extend(fillers.draw(&mut rng, spec.text_fillers));
            text.shuffle(&mut rng);
            let attrs = attr_pools[b].draw(&mut rng, spec.attrs_per_image);
            samples.push(Sample {
                id: format!("s{i:05}"),
                text: text.join(" "),
                caption: caption.join(" "),
                image_attrs: attrs,
                image_vec: None,
                label: ironic as u8,
            });
        }
        samples.shuffle(&mut rng);
        let n_train = (spec.samples as f64 * spec.train_fraction).round() as usize;
        let n_val = (spec.samples as f64 * spec.val_fraction).round() as usize;
        let test = samples.split_off(n_train + n_val);
        let val = samples.split_off(n_train);

        let mut table = EmbeddingTable::new(spec.dim, "en");
        for (w, v) in &vectors {
            table.insert(w, v.clone())?;
        }
        let mut vocab: Vec<String> = samples
            .iter()
            .chain(&val)
            .chain(&test)
            .flat_map(|s| {
                let mut w = s.text_tokens();
                w.extend(s.caption_tokens());
                w.extend(s.attribute_words());
                w
            })
            .collect();
        vocab.sort();
        vocab.dedup();
        Ok(SyntheticTask {
            train: Dataset::new(samples, Split::Train)?,
            val: Dataset::new(val, Split::Val)?,
            test: Dataset::new(test, Split::Test)?,
            table,
            vectors,
            edges,
            vocab,
        })
    }

    /// Concept cache over the full vocabulary.
    pub fn knowledge_base(&self, k: usize, filter: &RelationFilter) -> KnowledgeBase {
        let index = EdgeIndex::new(self.edges.clone());
        KnowledgeBase::build(
            self.vocab.iter().map(String::as_str),
            &self.table,
            &index,
            k,
            filter,
            &default_stopwords(),
        )
    }

    /// Writes the splits (JSON lines), a Numberbatch text file, an edge CSV
    /// and a one-word-per-line vocabulary into `dir`.
    pub fn write(&self, dir: &Path) -> Result<SyntheticFiles> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SyntheticFiles {
            train: dir.join("train.jsonl"),
            val: dir.join("val.jsonl"),
            test: dir.join("test.jsonl"),
            numberbatch: dir.join("numberbatch.txt"),
            edges: dir.join("edges.csv"),
            vocab: dir.join("vocab.txt"),
        };
        self.train.save(&files.train)?;
        self.val.save(&files.val)?;
        self.test.save(&files.test)?;

        save_numberbatch(&self.table, &files.numberbatch)?;
        save_edges(&files.edges, &self.edges)?;

        let vocab: String = self.vocab.iter().map(|w| format!("{w}\n")).collect();
        fs::write(&files.vocab, vocab).map_err(|e| Error::io(&files.vocab, e))?;
        Ok(files)
    }
}
