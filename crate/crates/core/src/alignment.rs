//! Frame-versus-step score matrices, averaging, channel fusion and argmax
//! prediction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingBackend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::frames::FrameRef;
use crate::recipe::{render_status_prompt, Recipe, Step};

pub const DEFAULT_FUSION_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Frames against raw step text.
    Baseline,
    /// Frames against rendered object-status prompts.
    Status,
    /// Convex combination of the two.
    Fused,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Baseline => "baseline",
            Channel::Status => "status",
            Channel::Fused => "fused",
        })
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Channel::Baseline),
            "status" => Ok(Channel::Status),
            "fused" => Ok(Channel::Fused),
            other => Err(Error::InvalidArgument(format!("unknown channel {other:?}"))),
        }
    }
}

/// Rows are frames, columns are steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub channel: Channel,
    pub values: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(channel: Channel, values: Vec<Vec<f64>>) -> Result<Self> {
        let cols = values.first().map(Vec::len).unwrap_or(0);
        if values.is_empty() || cols == 0 {
            return Err(Error::ShapeMismatch("score matrix must be non-empty".into()));
        }
        if values.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged score matrix".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("score matrix contains non-finite values".into()));
        }
        Ok(Self { channel, values })
    }

    pub fn n_frames(&self) -> usize {
        self.values.len()
    }

    pub fn n_steps(&self) -> usize {
        self.values[0].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedScores {
    pub scores: Vec<f64>,
    pub weight_w: f64,
    pub provenance: Vec<Channel>,
}

/// Rendered status prompts for a step, or the step text when it has none.
pub fn status_prompts_for_step(step: &Step) -> Vec<String> {
    if step.statuses.is_empty() {
        vec![step.text.clone()]
    } else {
        step.statuses.iter().map(render_status_prompt).collect()
    }
}

/// Prompts for every step of `recipe` on the given channel. Baseline prompts
/// are the step texts only and never read statuses.
pub fn prompts_for_channel(recipe: &Recipe, channel: Channel) -> Result<Vec<Vec<String>>> {
    match channel {
        Channel::Baseline => Ok(recipe.steps.iter().map(|s| vec![s.text.clone()]).collect()),
        Channel::Status => Ok(recipe.steps.iter().map(status_prompts_for_step).collect()),
        Channel::Fused => Err(Error::InvalidArgument(
            "the fused channel has no prompts of its own".into(),
        )),
    }
}

/// Embedded prompts, grouped per step.
#[derive(Debug, Clone)]
pub struct PromptEmbeddings {
    pub channel: Channel,
    pub per_step: Vec<Vec<EmbeddingVector>>,
}

impl PromptEmbeddings {
    pub fn embed(backend: &dyn EmbeddingBackend, prompts_per_step: &[Vec<String>], channel: Channel) -> Result<Self> {
        if prompts_per_step.is_empty() || prompts_per_step.iter().any(Vec::is_empty) {
            return Err(Error::ShapeMismatch("every step needs at least one prompt".into()));
        }
        let flat: Vec<String> = prompts_per_step.iter().flatten().cloned().collect();
        let mut vectors = backend.embed_texts(&flat)?.into_iter();
        let per_step = prompts_per_step
            .iter()
            .map(|p| vectors.by_ref().take(p.len()).collect())
            .collect();
        Ok(Self { channel, per_step })
    }

    /// Entry `(t, n)` is the best cosine between frame `t` and any prompt of step `n`.
    pub fn score(&self, frames: &[EmbeddingVector]) -> Result<ScoreMatrix> {
        let values = frames
            .iter()
            .map(|f| {
                self.per_step
                    .iter()
                    .map(|prompts| {
                        prompts.iter().try_fold(f64::NEG_INFINITY, |best, p| {
                            Ok::<_, Error>(best.max(cosine_similarity(f, p)?))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreMatrix::new(self.channel, values)
    }
}

pub fn score_frames_against_prompts(
    backend: &dyn EmbeddingBackend,
    frames: &[FrameRef],
    prompts_per_step: &[Vec<String>],
    channel: Channel,
) -> Result<ScoreMatrix> {
    if frames.is_empty() {
        return Err(Error::ShapeMismatch("no frames to score".into()));
    }
    let prompts = PromptEmbeddings::embed(backend, prompts_per_step, channel)?;
    let frame_vecs = backend.embed_images(frames)?;
    prompts.score(&frame_vecs)
}

/// Mean over every frame row of every matrix: one score per step.
pub fn average_scores(matrices: &[ScoreMatrix]) -> Result<Vec<f64>> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no matrices to average".into()))?;
    let (n_steps, channel) = (first.n_steps(), first.channel);
    let mut sum = vec![0.0; n_steps];
    let mut rows = 0usize;
    for m in matrices {
        if m.n_steps() != n_steps || m.channel != channel {
            return Err(Error::ShapeMismatch(format!(
                "cannot average {} x {} ({}) with {} columns ({})",
                m.n_frames(),
                m.n_steps(),
                m.channel,
                n_steps,
                channel
            )));
        }
        for row in &m.values {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            rows += 1;
        }
    }
    Ok(sum.into_iter().map(|s| s / rows as f64).collect())
}

/// `w * status + (1 - w) * baseline`, element-wise.
pub fn fuse_scores(baseline: &[f64], status: &[f64], w: f64) -> Result<FusedScores> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidWeight(w));
    }
    if baseline.len() != status.len() {
        return Err(Error::ShapeMismatch(format!(
            "baseline has {} steps, status has {}",
            baseline.len(),
            status.len()
        )));
    }
    let scores = if w == 0.0 {
        baseline.to_vec()
    } else if w == 1.0 {
        status.to_vec()
    } else {
        baseline.iter().zip(status).map(|(b, s)| w * s + (1.0 - w) * b).collect()
    };
    Ok(FusedScores {
        scores,
        weight_w: w,
        provenance: vec![Channel::Baseline, Channel::Status],
    })
}

/// 1-based index of the maximum; ties go to the smallest index.
pub fn predict_argmax(scores: &[f64]) -> usize {
    assert!(!scores.is_empty(), "predict_argmax needs at least one score");
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best + 1
}
