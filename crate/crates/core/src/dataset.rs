//! Labeled image-text posts and their JSON-lines file format.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::tokenize;
use crate::error::{Error, Result};
use crate::knowledge::normalize_concept;

pub const NON_IRONIC: u8 = 0;
pub const IRONIC: u8 = 1;

/// One image-text post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub image_attrs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_vec: Option<Vec<f64>>,
    pub label: u8,
}

impl Sample {
    pub fn text_tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    pub fn caption_tokens(&self) -> Vec<String> {
        tokenize(&self.caption)
    }

    /// Attribute words in concept form (`blue sky` becomes `blue_sky`).
    pub fn attribute_words(&self) -> Vec<String> {
        self.image_attrs
            .iter()
            .map(|a| normalize_concept(a))
            .filter(|a| !a.is_empty())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
}

#[derive(Deserialize)]
struct RawSample {
    id: String,
    text: String,
    #[serde(default)]
    caption: Option<String>,
    #[serde(default)]
    image_attrs: Option<Vec<String>>,
    #[serde(default)]
    image_vec: Option<Vec<f64>>,
    label: i64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split) -> Result<Self> {
        let mut ids = HashSet::new();
        for s in &samples {
            if s.label > 1 {
                return Err(Error::Label(s.label as i64));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Data(format!(
                    "duplicate sample id `{}` in {} split",
                    s.id,
                    split.name()
                )));
            }
        }
        Ok(Dataset { samples, split })
    }

    pub fn load(path: &Path, split: Split) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawSample = serde_json::from_str(line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            if raw.label != 0 && raw.label != 1 {
                return Err(Error::parse(path, lineno, Error::Label(raw.label).to_string()));
            }
            if tokenize(&raw.text).is_empty() {
                return Err(Error::parse(path, lineno, "text has no tokens"));
            }
            if let Some(v) = &raw.image_vec {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::parse(path, lineno, "image_vec must be non-empty and finite"));
                }
            }
            if !ids.insert(raw.id.clone()) {
                return Err(Error::parse(path, lineno, format!("duplicate id `{}`", raw.id)));
            }
            samples.push(Sample {
                id: raw.id,
                text: raw.text,
                caption: raw.caption.unwrap_or_default(),
                image_attrs: raw.image_attrs.unwrap_or_default(),
                image_vec: raw.image_vec,
                label: raw.label as u8,
            });
        }
        Ok(Dataset { samples, split })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for s in &self.samples {
            serde_json::to_writer(&mut buf, s).expect("serialize sample");
            buf.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[non-ironic, ironic]` counts.
    pub fn label_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for s in &self.samples {
            c[s.label as usize] += 1;
        }
        c
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(
            &p,
            r#"{"id":"a","text":"What a lovely day","caption":"rain","image_attrs":["Grey Sky"],"label":1}
{"id":"b","text":"sunny","image_vec":[0.5,1.0],"label":0}
"#,
        )
        .unwrap();
        let d = Dataset::load(&p, Split::Train).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.label_counts(), [1, 1]);
        assert_eq!(d.samples[0].attribute_words(), vec!["grey_sky"]);
        assert_eq!(d.samples[1].caption, "");

        let back = dir.path().join("e.jsonl");
        d.save(&back).unwrap();
        assert_eq!(Dataset::load(&back, Split::Train).unwrap(), d);
    }

    #[test]
    fn rejects_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        for (body, line) in [
            ("{\"id\":\"a\",\"text\":\"x\",\"label\":2}\n", 1),
            (
                "{\"id\":\"a\",\"text\":\"x\",\"label\":0}\n{\"id\":\"a\",\"text\":\"y\",\"label\":1}\n",
                2,
            ),
            ("{\"id\":\"a\",\"text\":\"!!\",\"label\":0}\n", 1),
            ("not json\n", 1),
        ] {
            fs::write(&p, body).unwrap();
            match Dataset::load(&p, Split::Val) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body}"),
                other => panic!("{body}: {other:?}"),
            }
        }
    }

    #[test]
    fn constructor_checks() {
        let s = |id: &str, label| Sample {
            id: id.into(),
            text: "t".into(),
            caption: String::new(),
            image_attrs: vec![],
            image_vec: None,
            label,
        };
        assert!(matches!(
            Dataset::new(vec![s("a", 3)], Split::Train),
            Err(Error::Label(3))
        ));
        assert!(Dataset::new(vec![s("a", 0), s("a", 1)], Split::Train).is_err());
    }
}
