//! On-disk corpus: clip features, label vocabulary and video groupings.
//!
//! A corpus directory holds `manifest.jsonl`, `vocabulary.json`,
//! `videos.jsonl` and the `.mgrf` blobs they reference by `(blob, row)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::blob::{read_feature_blob, write_feature_blob, FeatureBlob};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const VIDEOS_FILE: &str = "videos.jsonl";
const VISUAL_BLOB: &str = "visual.mgrf";
const TEXT_BLOB: &str = "text.mgrf";

/// One micro-gesture clip with its raw backbone feature.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub clip_id: String,
    pub video_id: String,
    pub clip_index: usize,
    pub label_id: usize,
    pub visual_feature: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    /// Human-readable pattern, e.g. `"a photo of {label}"`.
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocabClass {
    pub id: usize,
    pub name: String,
    /// Raw text feature per template id.
    pub text_features: BTreeMap<String, Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelVocabulary {
    pub classes: Vec<VocabClass>,
    pub templates: Vec<Template>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEmotionRecord {
    pub video_id: String,
    pub clip_ids: Vec<String>,
    pub emotion_label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<FeatureRecord>,
    pub vocabulary: LabelVocabulary,
    pub videos: Vec<VideoEmotionRecord>,
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    clip_id: String,
    video_id: String,
    clip_index: usize,
    label_id: usize,
    blob: String,
    row: usize,
}

#[derive(Serialize, Deserialize)]
struct BlobRef {
    blob: String,
    row: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabClassJson {
    id: usize,
    name: String,
    text_blobs: BTreeMap<String, BlobRef>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyJson {
    classes: Vec<VocabClassJson>,
    templates: Vec<Template>,
}

impl LabelVocabulary {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn text_dim(&self) -> usize {
        self.classes
            .first()
            .and_then(|c| c.text_features.values().next())
            .map_or(0, Vec::len)
    }

    pub fn has_template(&self, template_id: &str) -> bool {
        self.templates.iter().any(|t| t.id == template_id)
    }

    pub fn template_ids(&self) -> Vec<&str> {
        self.templates.iter().map(|t| t.id.as_str()).collect()
    }

    pub fn name(&self, class_id: usize) -> &str {
        &self.classes[class_id].name
    }

    /// Raw text features of every class for one template, `C × d_t` row-major.
    pub fn text_matrix(&self, template_id: &str) -> Result<Vec<f32>> {
        if !self.has_template(template_id) {
            return Err(Error::config(
                "template",
                format!(
                    "unknown template `{template_id}`; known: {}",
                    self.template_ids().join(", ")
                ),
            ));
        }
        let mut out = Vec::with_capacity(self.len() * self.text_dim());
        for class in &self.classes {
            out.extend_from_slice(&class.text_features[template_id]);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Data("vocabulary has no classes".into()));
        }
        let dt = self.text_dim();
        for (i, class) in self.classes.iter().enumerate() {
            if class.id != i {
                return Err(Error::Data(format!(
                    "class ids must be contiguous from 0; position {i} holds id {}",
                    class.id
                )));
            }
            for t in &self.templates {
                match class.text_features.get(&t.id) {
                    None => {
                        return Err(Error::Data(format!(
                            "class {i} has no text feature for template `{}`",
                            t.id
                        )))
                    }
                    Some(v) if v.len() != dt => {
                        return Err(Error::Data(format!(
                            "class {i} template `{}` has dimension {}, expected {dt}",
                            t.id,
                            v.len()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

impl Corpus {
    pub fn visual_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.visual_feature.len())
    }

    pub fn num_classes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.vocabulary.validate()?;
        let dv = self.visual_dim();
        let mut clip_ids = HashMap::new();
        let mut positions = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.visual_feature.len() != dv {
                return Err(Error::Data(format!(
                    "clip `{}` has visual dimension {}, expected {dv}",
                    r.clip_id,
                    r.visual_feature.len()
                )));
            }
            if r.label_id >= self.num_classes() {
                return Err(Error::Data(format!(
                    "clip `{}` label {} outside vocabulary of {}",
                    r.clip_id,
                    r.label_id,
                    self.num_classes()
                )));
            }
            if clip_ids.insert(r.clip_id.as_str(), i).is_some() {
                return Err(Error::Data(format!("duplicate clip id `{}`", r.clip_id)));
            }
            if !positions.insert((r.video_id.as_str(), r.clip_index)) {
                return Err(Error::Data(format!(
                    "video `{}` has two clips at index {}",
                    r.video_id, r.clip_index
                )));
            }
        }
        for v in &self.videos {
            if v.clip_ids.is_empty() {
                return Err(Error::Data(format!(
                    "video `{}` lists no clips",
                    v.video_id
                )));
            }
            for c in &v.clip_ids {
                let Some(&i) = clip_ids.get(c.as_str()) else {
                    return Err(Error::Data(format!(
                        "video `{}` references unknown clip `{c}`",
                        v.video_id
                    )));
                };
                if self.records[i].video_id != v.video_id {
                    return Err(Error::Data(format!(
                        "clip `{c}` belongs to video `{}`, not `{}`",
                        self.records[i].video_id, v.video_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of every clip id.
    pub fn clip_index_map(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clip_id.as_str(), i))
            .collect()
    }

    /// Writes the corpus with all visual features in one blob and all text
    /// features in another (`row = class · templates + template`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let dv = self.visual_dim();
        let visual: Vec<f32> = self
            .records
            .iter()
            .flat_map(|r| r.visual_feature.iter().copied())
            .collect();
        write_feature_blob(&dir.join(VISUAL_BLOB), &FeatureBlob::new(dv, visual)?)?;

        let mut manifest = Vec::new();
        for (row, r) in self.records.iter().enumerate() {
            let line = ManifestRow {
                clip_id: r.clip_id.clone(),
                video_id: r.video_id.clone(),
                clip_index: r.clip_index,
                label_id: r.label_id,
                blob: VISUAL_BLOB.into(),
                row,
            };
            serde_json::to_writer(&mut manifest, &line).expect("in-memory write");
            manifest.push(b'\n');
        }
        write_file(&dir.join(MANIFEST_FILE), &manifest)?;

        let vocab = &self.vocabulary;
        let mut text = Vec::new();
        let mut classes = Vec::new();
        for class in &vocab.classes {
            let mut refs = BTreeMap::new();
            for t in &vocab.templates {
                refs.insert(
                    t.id.clone(),
                    BlobRef {
                        blob: TEXT_BLOB.into(),
                        row: text.len() / vocab.text_dim(),
                    },
                );
                text.extend_from_slice(&class.text_features[&t.id]);
            }
            classes.push(VocabClassJson {
                id: class.id,
                name: class.name.clone(),
                text_blobs: refs,
            });
        }
        write_feature_blob(
            &dir.join(TEXT_BLOB),
            &FeatureBlob::new(vocab.text_dim(), text)?,
        )?;
        let json = VocabularyJson {
            classes,
            templates: vocab.templates.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&json).expect("in-memory write");
        bytes.push(b'\n');
        write_file(&dir.join(VOCABULARY_FILE), &bytes)?;

        let mut videos = Vec::new();
        for v in &self.videos {
            serde_json::to_writer(&mut videos, v).expect("in-memory write");
            videos.push(b'\n');
        }
        write_file(&dir.join(VIDEOS_FILE), &videos)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut blobs = BlobCache::new(dir);

        let manifest_path = dir.join(MANIFEST_FILE);
        let mut records = Vec::new();
        for (lineno, row) in read_jsonl::<ManifestRow>(&manifest_path)? {
            let blob = blobs.get(&row.blob)?;
            if row.row >= blob.count {
                return Err(Error::Data(format!(
                    "{}:{lineno}: row {} is outside `{}` ({} rows)",
                    manifest_path.display(),
                    row.row,
                    row.blob,
                    blob.count
                )));
            }
            records.push(FeatureRecord {
                clip_id: row.clip_id,
                video_id: row.video_id,
                clip_index: row.clip_index,
                label_id: row.label_id,
                visual_feature: blob.row(row.row).to_vec(),
            });
        }

        let vocab_path = dir.join(VOCABULARY_FILE);
        let text = fs::read_to_string(&vocab_path).map_err(Error::io(&vocab_path))?;
        let json: VocabularyJson = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: vocab_path.clone(),
            msg: e.to_string(),
        })?;
        let mut classes = Vec::with_capacity(json.classes.len());
        for c in json.classes {
            let mut text_features = BTreeMap::new();
            for (template, r) in c.text_blobs {
                let blob = blobs.get(&r.blob)?;
                if r.row >= blob.count {
                    return Err(Error::Data(format!(
                        "{}: class {} template `{template}` row {} is outside `{}` ({} rows)",
                        vocab_path.display(),
                        c.id,
                        r.row,
                        r.blob,
                        blob.count
                    )));
                }
                text_features.insert(template, blob.row(r.row).to_vec());
            }
            classes.push(VocabClass {
                id: c.id,
                name: c.name,
                text_features,
            });
        }
        let vocabulary = LabelVocabulary {
            classes,
            templates: json.templates,
        };

        let videos = read_jsonl::<VideoEmotionRecord>(&dir.join(VIDEOS_FILE))?
            .into_iter()
            .map(|(_, v)| v)
            .collect();

        let corpus = Corpus {
            records,
            vocabulary,
            videos,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

struct BlobCache {
    dir: PathBuf,
    loaded: HashMap<String, FeatureBlob>,
}

impl BlobCache {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            loaded: HashMap::new(),
        }
    }

    fn get(&mut self, name: &str) -> Result<&FeatureBlob> {
        let rel = Path::new(name);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(Error::Data(format!(
                "blob reference `{name}` must be a plain path inside the corpus directory"
            )));
        }
        if !self.loaded.contains_key(name) {
            let blob = read_feature_blob(&self.dir.join(rel))?;
            self.loaded.insert(name.to_string(), blob);
        }
        Ok(&self.loaded[name])
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| Error::Json {
                    path: path.to_path_buf(),
                    msg: format!("line {}: {e}", i + 1),
                })
        })
        .collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(bytes).map_err(Error::io(path))
}
