use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::SyntheticSpec;
use crate::error::{Error, Result};
use crate::recipe::Recipe;

pub const VIDEOS_DIR: &str = "videos";
pub const FRAMES_DIR: &str = "frames";
pub const SYNTHETIC_FILE: &str = "synthetic.json";

/// Annotated interval `[start_s, end_s)` showing one recipe step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub step_index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAnnotation {
    pub video_id: String,
    pub duration_s: f64,
    pub recipe: Recipe,
    pub segments: Vec<Segment>,
}

impl DatasetAnnotation {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.video_id.is_empty() || self.video_id.contains(['/', '\\']) {
            return Err(format!("invalid video_id {:?}", self.video_id));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if self.segments.is_empty() {
            return Err("no segments".into());
        }
        let n = self.recipe.n_steps();
        let mut steps = BTreeSet::new();
        let mut prev_end = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.start_s.is_finite() && s.end_s.is_finite() && s.start_s < s.end_s) {
                return Err(format!("segment {i}: end {} must exceed start {}", s.end_s, s.start_s));
            }
            if s.start_s < 0.0 || s.end_s > self.duration_s {
                return Err(format!(
                    "segment {i}: [{}, {}) outside duration {}",
                    s.start_s, s.end_s, self.duration_s
                ));
            }
            if s.start_s < prev_end {
                return Err(format!("segment {i} starts at {} before the previous one ends at {prev_end}", s.start_s));
            }
            if !(1..=n).contains(&s.step_index) {
                return Err(format!("segment {i}: step_index {} outside 1..={n}", s.step_index));
            }
            if !steps.insert(s.step_index) {
                return Err(format!("segment {i}: step {} annotated twice", s.step_index));
            }
            prev_end = s.end_s;
        }
        Ok(())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let ann: DatasetAnnotation =
            serde_json::from_str(text).map_err(|e| Error::schema(path, Some(e.line()), e.to_string()))?;
        ann.validate().map_err(|m| Error::schema(path, None, m))?;
        Ok(ann)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("annotation serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// A loaded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    /// Sorted by `video_id`.
    pub videos: Vec<DatasetAnnotation>,
    pub synthetic: Option<SyntheticSpec>,
}

impl Dataset {
    /// Reads `root/videos/*.json` (or `root/*.json` when there is no
    /// `videos` directory) plus an optional `root/synthetic.json`.
    pub fn load(root: &Path) -> Result<Self> {
        let synthetic_path = root.join(SYNTHETIC_FILE);
        let synthetic = if synthetic_path.is_file() {
            Some(SyntheticSpec::load(&synthetic_path)?)
        } else {
            None
        };
        Ok(Self {
            root: root.to_path_buf(),
            videos: load_dataset(root)?,
            synthetic,
        })
    }

    pub fn frames_dir(&self, video_id: &str) -> PathBuf {
        self.root.join(FRAMES_DIR).join(video_id)
    }
}

/// Loads and validates every annotation under `path`, which may also be a
/// single annotation file.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetAnnotation>> {
    let files = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        let videos = path.join(VIDEOS_DIR);
        let dir = if videos.is_dir() { videos } else { path.to_path_buf() };
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != SYNTHETIC_FILE)
            })
            .collect();
        files.sort();
        files
    };
    if files.is_empty() {
        return Err(Error::schema(path, None, "no annotation files found"));
    }
    let mut out = Vec::with_capacity(files.len());
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        out.push(DatasetAnnotation::from_json(&text, f)?);
    }
    out.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    if let Some(w) = out.windows(2).find(|w| w[0].video_id == w[1].video_id) {
        return Err(Error::schema(path, None, format!("duplicate video_id {:?}", w[0].video_id)));
    }
    Ok(out)
}
