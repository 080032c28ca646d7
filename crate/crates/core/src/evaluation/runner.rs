use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetAnnotation, FRAMES_DIR};
use crate::alignment::{average_scores, fuse_scores, predict_argmax, prompts_for_channel, Channel, PromptEmbeddings};
use crate::embedding::{BackendDescriptor, EmbeddingBackend};
use crate::error::{Error, Result};
use crate::frames::{sample_step_frames, FrameManifest, DEFAULT_K, DEFAULT_RADIUS_S};
use crate::recipe::Recipe;
use crate::seed::derive_seed;
use crate::status::{extract_object_statuses, RuleEngine};
use crate::tracker::decode_monotone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Step-text scoring and per-segment argmax.
    Baseline,
    /// Status prompts fused with step text, then monotone decoding.
    Oscar,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::Baseline => "baseline",
            Condition::Oscar => "oscar",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub trials: usize,
    pub seed: u64,
    pub k: usize,
    pub radius_s: f64,
    pub fusion_weight: f64,
    /// Also decode the baseline condition monotonically (ablation).
    #[serde(default)]
    pub causal_on_baseline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trials: 3,
            seed: 42,
            k: DEFAULT_K,
            radius_s: DEFAULT_RADIUS_S,
            fusion_weight: 0.5,
            causal_on_baseline: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fusion_weight) {
            return Err(Error::InvalidWeight(self.fusion_weight));
        }
        Ok(())
    }
}

/// Predicted step for one annotated segment in one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub segment_index: usize,
    pub trial: usize,
    pub predicted: usize,
}

/// One line of the similarity log: a frame's scores on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLogRecord {
    pub video_id: String,
    pub trial: usize,
    pub segment_index: usize,
    pub t_s: f64,
    pub channel: Channel,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRun {
    pub video_id: String,
    pub predictions: Vec<Prediction>,
    #[serde(skip)]
    pub score_log: Vec<ScoreLogRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRun {
    pub condition: Condition,
    pub backend: BackendDescriptor,
    pub config: RunConfig,
    /// Sorted by `video_id`.
    pub videos: Vec<VideoRun>,
}

impl ConditionRun {
    pub fn score_log(&self) -> impl Iterator<Item = &ScoreLogRecord> {
        self.videos.iter().flat_map(|v| &v.score_log)
    }
}

pub trait FrameSource: Send + Sync {
    fn manifest(&self, video: &DatasetAnnotation) -> Result<FrameManifest>;
}

/// Reads `root/frames/{video_id}/frames.jsonl`, scoring blur for frames that
/// lack a cached value.
pub struct DirFrameSource {
    pub root: PathBuf,
}

impl DirFrameSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl FrameSource for DirFrameSource {
    fn manifest(&self, video: &DatasetAnnotation) -> Result<FrameManifest> {
        let dir = self.root.join(FRAMES_DIR).join(&video.video_id);
        let mut m = FrameManifest::load(&dir, &video.video_id, Some(video.duration_s))?;
        m.score_blur()?;
        Ok(m)
    }
}

#[derive(Default)]
pub struct MemoryFrameSource(pub HashMap<String, FrameManifest>);

impl FrameSource for MemoryFrameSource {
    fn manifest(&self, video: &DatasetAnnotation) -> Result<FrameManifest> {
        self.0
            .get(&video.video_id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no frames for video {}", video.video_id)))
    }
}

/// Runs one condition over every video. Videos are processed in parallel;
/// the result is ordered by `video_id`.
pub fn run_condition(
    videos: &[DatasetAnnotation],
    frames: &dyn FrameSource,
    condition: Condition,
    backend: &dyn EmbeddingBackend,
    cfg: &RunConfig,
    record_scores: bool,
) -> Result<ConditionRun> {
    cfg.validate()?;
    let mut runs = videos
        .par_iter()
        .map(|v| run_video(v, frames, condition, backend, cfg, record_scores))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(ConditionRun {
        condition,
        backend: backend.descriptor(),
        config: *cfg,
        videos: runs,
    })
}

fn with_statuses(recipe: &Recipe) -> Result<Recipe> {
    if recipe.has_statuses() {
        Ok(recipe.clone())
    } else {
        extract_object_statuses(recipe, &RuleEngine)
    }
}

fn run_video(
    video: &DatasetAnnotation,
    frames: &dyn FrameSource,
    condition: Condition,
    backend: &dyn EmbeddingBackend,
    cfg: &RunConfig,
    record_scores: bool,
) -> Result<VideoRun> {
    let baseline = PromptEmbeddings::embed(
        backend,
        &prompts_for_channel(&video.recipe, Channel::Baseline)?,
        Channel::Baseline,
    )?;
    let status = match condition {
        Condition::Oscar => {
            let recipe = with_statuses(&video.recipe)?;
            Some(PromptEmbeddings::embed(
                backend,
                &prompts_for_channel(&recipe, Channel::Status)?,
                Channel::Status,
            )?)
        }
        Condition::Baseline => None,
    };
    let decode = condition == Condition::Oscar || cfg.causal_on_baseline;
    let manifest = frames.manifest(video)?;

    let mut predictions = Vec::with_capacity(video.segments.len() * cfg.trials);
    let mut log = Vec::new();
    for trial in 0..cfg.trials {
        let trial_seed = derive_seed(cfg.seed, &video.video_id, trial as u64);
        let mut rows = Vec::with_capacity(video.segments.len());
        for (j, seg) in video.segments.iter().enumerate() {
            let seg_seed = derive_seed(trial_seed, "segment", j as u64);
            let sampled = sample_step_frames(&manifest, (seg.start_s, seg.end_s), cfg.k, seg_seed, cfg.radius_s)?;
            let vectors = backend.embed_images(&sampled)?;
            let mut matrices = vec![baseline.score(&vectors)?];
            if let Some(s) = &status {
                matrices.push(s.score(&vectors)?);
            }
            if record_scores {
                for m in &matrices {
                    for (frame, row) in sampled.iter().zip(&m.values) {
                        log.push(ScoreLogRecord {
                            video_id: video.video_id.clone(),
                            trial,
                            segment_index: j,
                            t_s: frame.t_s,
                            channel: m.channel,
                            scores: row.clone(),
                        });
                    }
                }
            }
            let base_avg = average_scores(&matrices[..1])?;
            rows.push(match matrices.get(1) {
                Some(s) => fuse_scores(&base_avg, &average_scores(std::slice::from_ref(s))?, cfg.fusion_weight)?.scores,
                None => base_avg,
            });
        }
        let decided = if decode {
            decode_monotone(&rows)?
        } else {
            rows.iter().map(|r| predict_argmax(r)).collect()
        };
        predictions.extend(decided.into_iter().enumerate().map(|(j, predicted)| Prediction {
            segment_index: j,
            trial,
            predicted,
        }));
    }
    Ok(VideoRun {
        video_id: video.video_id.clone(),
        predictions,
        score_log: log,
    })
}
