use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::dataset::{DatasetAnnotation, Segment};
use crate::error::{Error, Result};
use crate::recipe::Recipe;

#[derive(Deserialize)]
struct AnnotationFile {
    database: BTreeMap<String, VideoEntry>,
}

#[derive(Deserialize)]
struct VideoEntry {
    duration: f64,
    #[serde(default)]
    recipe_type: Option<serde_json::Value>,
    annotations: Vec<SegmentEntry>,
}

#[derive(Deserialize)]
struct SegmentEntry {
    segment: (f64, f64),
    sentence: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SidecarEntry {
    List(Vec<String>),
    Full {
        #[serde(default)]
        title: Option<String>,
        #[serde(default)]
        ingredients: Vec<String>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, Some(e.line()), e.to_string()))
}

/// Converts a YouCook2-layout annotation file into normalized annotations.
/// Each segment sentence becomes one step, in temporal order. The optional
/// sidecar maps video ids to ingredient lists (or `{title, ingredients}`).
pub fn import_youcook2(annotations: &Path, sidecar: Option<&Path>) -> Result<Vec<DatasetAnnotation>> {
    let file: AnnotationFile = read_json(annotations)?;
    let extra: HashMap<String, SidecarEntry> = match sidecar {
        Some(p) => read_json(p)?,
        None => HashMap::new(),
    };
    let mut out = Vec::with_capacity(file.database.len());
    for (id, entry) in file.database {
        let fail = |m: String| Error::schema(annotations, None, format!("video {id}: {m}"));
        let mut segs = entry.annotations;
        if segs.is_empty() {
            return Err(fail("no annotated segments".into()));
        }
        if let Some(s) = segs.iter().find(|s| !(s.segment.1 > s.segment.0)) {
            return Err(fail(format!("segment [{}, {}] has end <= start", s.segment.0, s.segment.1)));
        }
        segs.sort_by(|a, b| a.segment.0.total_cmp(&b.segment.0));
        let (title, ingredients) = match extra.get(&id) {
            Some(SidecarEntry::List(items)) => (None, items.clone()),
            Some(SidecarEntry::Full { title, ingredients }) => (title.clone(), ingredients.clone()),
            None => (None, Vec::new()),
        };
        let title = title.unwrap_or_else(|| match &entry.recipe_type {
            Some(serde_json::Value::String(s)) => format!("{id} ({s})"),
            Some(v) if !v.is_null() => format!("{id} ({v})"),
            _ => id.clone(),
        });
        let texts: Vec<String> = segs.iter().map(|s| s.sentence.trim().to_string()).collect();
        let recipe = Recipe::new(title, ingredients, texts).map_err(|e| fail(e.to_string()))?;
        let segments = segs
            .iter()
            .enumerate()
            .map(|(i, s)| Segment {
                step_index: i + 1,
                start_s: s.segment.0,
                end_s: s.segment.1,
            })
            .collect();
        let ann = DatasetAnnotation {
            video_id: id.clone(),
            duration_s: entry.duration,
            recipe,
            segments,
        };
        ann.validate().map_err(fail)?;
        out.push(ann);
    }
    Ok(out)
}
