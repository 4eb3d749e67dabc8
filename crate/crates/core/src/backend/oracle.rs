//! Ground-truth backend over annotated scene documents.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::{BackendError, PerceptionBackend};
use crate::geometry::iou;
use crate::model::{singularize, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRelation {
    pub subject_id: u32,
    pub predicate: String,
    pub object_id: u32,
}

/// Annotated description of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub relations: Vec<SceneRelation>,
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("scene {image_id}: {message}")]
    Invalid { image_id: String, message: String },
    #[error("image {0} appears in more than one scene file")]
    DuplicateImage(String),
    #[error("no *.scene.json files in {0}")]
    Empty(PathBuf),
}

impl SceneDocument {
    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |message: String| SceneError::Invalid {
            image_id: self.image_id.clone(),
            message,
        };
        if self.image_id.trim().is_empty() {
            return Err(invalid("empty image_id".into()));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(invalid(format!("duplicate object id {}", o.id)));
            }
            if o.category.trim().is_empty() {
                return Err(invalid(format!("object {} has no category", o.id)));
            }
            o.bbox.check().map_err(|e| invalid(format!("object {}: {e}", o.id)))?;
        }
        for r in &self.relations {
            for end in [r.subject_id, r.object_id] {
                if !ids.contains(&end) {
                    return Err(invalid(format!("relation {:?} names missing object {end}", r.predicate)));
                }
            }
        }
        Ok(())
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// Scenes keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct SceneCorpus {
    scenes: BTreeMap<String, SceneDocument>,
}

impl SceneCorpus {
    pub fn new(scenes: impl IntoIterator<Item = SceneDocument>) -> Result<Self, SceneError> {
        let mut map = BTreeMap::new();
        for s in scenes {
            s.validate()?;
            let id = s.image_id.clone();
            if map.insert(id.clone(), s).is_some() {
                return Err(SceneError::DuplicateImage(id));
            }
        }
        Ok(SceneCorpus { scenes: map })
    }

    pub fn get(&self, image_id: &str) -> Option<&SceneDocument> {
        self.scenes.get(image_id)
    }

    /// Image ids in sorted order.
    pub fn image_ids(&self) -> Vec<String> {
        self.scenes.keys().cloned().collect()
    }

    pub fn scenes(&self) -> impl Iterator<Item = &SceneDocument> {
        self.scenes.values()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

/// Loads every `*.scene.json` file in `dir`.
pub fn load_corpus(dir: &Path) -> Result<SceneCorpus, SceneError> {
    let io = |path: &Path, source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".scene.json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(SceneError::Empty(dir.to_path_buf()));
    }
    let mut scenes = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = std::fs::read(&path).map_err(|e| io(&path, e))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        let scene: SceneDocument = serde_path_to_error::deserialize(de).map_err(|e| SceneError::Parse {
            path: path.clone(),
            message: format!("at {}: {}", e.path(), e.inner()),
        })?;
        scenes.push(scene);
    }
    SceneCorpus::new(scenes)
}

const AUXILIARIES: &[&str] = &["is", "are", "was", "were", "be", "been", "being", "am", "a", "an", "the"];

/// Folds an inflected verb to a comparable stem: `riding`, `rides` and
/// `ride` all give `rid`.
pub fn verb_stem(word: &str) -> String {
    let w = word.to_lowercase();
    let n = w.len();
    let mut stem = if n >= 5 && w.ends_with("ing") {
        w[..n - 3].to_string()
    } else if n >= 4 && w.ends_with("ed") && !w.ends_with("eed") {
        w[..n - 2].to_string()
    } else if n > 4 && w.ends_with("ies") {
        format!("{}y", &w[..n - 3])
    } else if n > 3 && w.ends_with('s') && !w.ends_with("ss") {
        w[..n - 1].to_string()
    } else {
        w
    };
    if stem.len() > 2 && stem.ends_with('e') {
        stem.pop();
    }
    let b = stem.as_bytes();
    if b.len() > 2 && b[b.len() - 1] == b[b.len() - 2] && !b"aeiou".contains(&b[b.len() - 1]) {
        stem.pop();
    }
    stem
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-').to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word list with a singular final word, for comparing noun phrases.
fn noun_words(text: &str) -> Vec<String> {
    let mut w: Vec<String> = words(text)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .collect();
    if let Some(last) = w.last_mut() {
        *last = singularize(last);
    }
    w
}

/// Does the noun phrase `phrase` describe `obj`? Some name of the object
/// must be a suffix of the phrase and every remaining word an attribute.
fn phrase_matches(phrase: &[String], obj: &SceneObject) -> bool {
    if phrase.is_empty() {
        return false;
    }
    std::iter::once(&obj.category).chain(&obj.synonyms).any(|name| {
        let name = noun_words(name);
        !name.is_empty()
            && phrase.ends_with(&name)
            && phrase[..phrase.len() - name.len()]
                .iter()
                .all(|w| obj.attributes.iter().any(|a| a.eq_ignore_ascii_case(w)))
    })
}

fn verb_matches(query_verb: &[String], predicate: &str) -> bool {
    let fold = |ws: &[String]| -> Vec<String> {
        ws.iter()
            .filter(|w| !AUXILIARIES.contains(&w.as_str()))
            .map(|w| verb_stem(w))
            .collect()
    };
    let q = fold(query_verb);
    !q.is_empty() && q == fold(&words(predicate))
}

/// Subjects of relations that the composite phrase `subject verb object`
/// describes.
fn composite_matches(scene: &SceneDocument, query: &[String]) -> BTreeSet<u32> {
    let mut hits = BTreeSet::new();
    let n = query.len();
    if n < 3 {
        return hits;
    }
    for r in &scene.relations {
        let (Some(s), Some(o)) = (scene.object(r.subject_id), scene.object(r.object_id)) else {
            continue;
        };
        'split: for i in 1..n - 1 {
            for j in i + 1..n {
                let mut subj = query[..i].to_vec();
                if let Some(last) = subj.last_mut() {
                    *last = singularize(last);
                }
                let obj: Vec<String> = noun_words(&query[j..].join(" "));
                if phrase_matches(&subj, s) && verb_matches(&query[i..j], &r.predicate) && phrase_matches(&obj, o) {
                    hits.insert(s.id);
                    break 'split;
                }
            }
        }
    }
    hits
}

/// Boxes the oracle reports for `query` in `scene`, score 1.0, in object-id
/// order.
pub fn oracle_detect(scene: &SceneDocument, query: &str) -> Vec<BBox> {
    let phrase = noun_words(query);
    let mut ids: BTreeSet<u32> = scene
        .objects
        .iter()
        .filter(|o| phrase_matches(&phrase, o))
        .map(|o| o.id)
        .collect();
    let raw: Vec<String> = words(query)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .collect();
    ids.extend(composite_matches(scene, &raw));
    ids.into_iter()
        .filter_map(|id| scene.object(id))
        .map(|o| o.bbox.clone().with_score(1.0).with_label(o.category.clone()))
        .collect()
}

/// Text of every object whose box overlaps `region`, in object-id order.
pub fn oracle_read_text(scene: &SceneDocument, region: &BBox) -> Vec<String> {
    let mut objs: Vec<&SceneObject> = scene
        .objects
        .iter()
        .filter(|o| o.text.is_some() && iou(&o.bbox, region) > 0.0)
        .collect();
    objs.sort_by_key(|o| o.id);
    objs.into_iter().filter_map(|o| o.text.clone()).collect()
}

/// In-process backend answering from a [`SceneCorpus`].
#[derive(Debug, Clone)]
pub struct OracleBackend {
    corpus: std::sync::Arc<SceneCorpus>,
}

impl OracleBackend {
    pub fn new(corpus: SceneCorpus) -> Self {
        OracleBackend {
            corpus: std::sync::Arc::new(corpus),
        }
    }

    pub fn corpus(&self) -> &SceneCorpus {
        &self.corpus
    }

    fn scene(&self, image_id: &str) -> Result<&SceneDocument, BackendError> {
        self.corpus
            .get(image_id)
            .ok_or_else(|| BackendError::UnknownImage(image_id.to_string()))
    }
}

impl PerceptionBackend for OracleBackend {
    fn detect(&self, image_id: &str, query: &str, threshold: f64) -> Result<Vec<BBox>, BackendError> {
        let mut boxes = oracle_detect(self.scene(image_id)?, query);
        boxes.retain(|b| b.score >= threshold);
        Ok(boxes)
    }

    fn read_text(&self, image_id: &str, region: &BBox) -> Result<Vec<String>, BackendError> {
        Ok(oracle_read_text(self.scene(image_id)?, region))
    }

    fn has_ocr(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: u32, category: &str, bbox: (f64, f64, f64, f64)) -> SceneObject {
        SceneObject {
            id,
            category: category.into(),
            synonyms: vec![],
            bbox: BBox::new(bbox.0, bbox.1, bbox.2, bbox.3).unwrap(),
            attributes: vec![],
            text: None,
        }
    }

    fn riding_scene() -> SceneDocument {
        SceneDocument {
            image_id: "ride".into(),
            width: 640,
            height: 480,
            objects: vec![obj(1, "man", (0.3, 0.1, 0.6, 0.5)), obj(2, "horse", (0.2, 0.3, 0.8, 0.9))],
            relations: vec![SceneRelation {
                subject_id: 1,
                predicate: "riding".into(),
                object_id: 2,
            }],
        }
    }

    #[test]
    fn composite_query_finds_relation_subject() {
        let scene = riding_scene();
        let hits = oracle_detect(&scene, "man riding horse");
        assert_eq!(hits.len(), 1);
        assert!(hits[0].same_region(&scene.objects[0].bbox));
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(oracle_detect(&scene, "a man rides a horse").len(), 1);
        assert!(oracle_detect(&scene, "horse riding man").is_empty());
        assert!(oracle_detect(&scene, "zebra").is_empty());
    }

    #[test]
    fn attribute_qualified_query() {
        let mut tub = obj(1, "bathtub", (0.1, 0.5, 0.9, 0.9));
        tub.attributes = vec!["white".into()];
        let scene = SceneDocument {
            image_id: "bath".into(),
            width: 1,
            height: 1,
            objects: vec![tub],
            relations: vec![],
        };
        assert_eq!(oracle_detect(&scene, "white bathtub").len(), 1);
        assert_eq!(oracle_detect(&scene, "bathtubs").len(), 1);
        assert!(oracle_detect(&scene, "pink bathtub").is_empty());
    }

    #[test]
    fn read_text_in_id_order() {
        let mut a = obj(2, "sign", (0.1, 0.1, 0.5, 0.5));
        a.text = Some("Norfolk".into());
        let mut b = obj(1, "sign", (0.3, 0.3, 0.6, 0.6));
        b.text = Some("Cambridge".into());
        let scene = SceneDocument {
            image_id: "signs".into(),
            width: 1,
            height: 1,
            objects: vec![a, b],
            relations: vec![],
        };
        let region = BBox::new(0.2, 0.2, 0.4, 0.4).unwrap();
        assert_eq!(oracle_read_text(&scene, &region), vec!["Cambridge", "Norfolk"]);
        let far = BBox::new(0.8, 0.8, 0.9, 0.9).unwrap();
        assert!(oracle_read_text(&scene, &far).is_empty());
    }

    #[test]
    fn verb_folding() {
        for (a, b) in [("riding", "ride"), ("rides", "ride"), ("sitting", "sits"), ("feeding", "feed"), ("parked", "park")] {
            assert_eq!(verb_stem(a), verb_stem(b), "{a} vs {b}");
        }
        assert_ne!(verb_stem("riding"), verb_stem("feeding"));
    }

    #[test]
    fn invalid_scenes_rejected() {
        let mut s = riding_scene();
        s.relations[0].object_id = 9;
        assert!(s.validate().is_err());
        let mut s = riding_scene();
        s.objects[1].id = 1;
        assert!(SceneCorpus::new([s]).is_err());
    }

    #[test]
    fn unknown_image() {
        let b = OracleBackend::new(SceneCorpus::new([riding_scene()]).unwrap());
        assert_eq!(b.detect("nope", "man", 0.3), Err(BackendError::UnknownImage("nope".into())));
    }
}
