use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::dataset::DatasetAnnotation;
use super::runner::{Condition, ConditionRun, Prediction, RunConfig};
use crate::embedding::BackendDescriptor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAccuracy {
    pub step_index: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAccuracy {
    pub video_id: String,
    /// One entry per annotated segment, in segment order.
    pub steps: Vec<StepAccuracy>,
    pub accuracy: f64,
}

/// Step accuracy is the fraction of trials predicting the annotated step;
/// video accuracy is the mean over annotated steps.
pub fn accuracy(video: &DatasetAnnotation, predictions: &[Prediction], trials: usize) -> Result<VideoAccuracy> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let lookup: HashMap<(usize, usize), usize> = predictions
        .iter()
        .map(|p| ((p.segment_index, p.trial), p.predicted))
        .collect();
    let mut steps = Vec::with_capacity(video.segments.len());
    for (j, seg) in video.segments.iter().enumerate() {
        let mut hits = 0usize;
        for trial in 0..trials {
            let predicted = lookup.get(&(j, trial)).ok_or_else(|| Error::MissingPrediction {
                video_id: video.video_id.clone(),
                segment: j,
                trial,
            })?;
            hits += usize::from(*predicted == seg.step_index);
        }
        steps.push(StepAccuracy {
            step_index: seg.step_index,
            accuracy: hits as f64 / trials as f64,
        });
    }
    let accuracy = steps.iter().map(|s| s.accuracy).sum::<f64>() / steps.len() as f64;
    Ok(VideoAccuracy {
        video_id: video.video_id.clone(),
        steps,
        accuracy,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n - 1) standard deviation; `None` for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub backend: String,
    /// Sorted by `video_id`.
    pub per_video: Vec<VideoAccuracy>,
    pub mean: f64,
    pub sd: Option<f64>,
}

impl ConditionReport {
    pub fn from_accuracies(condition: Condition, backend: impl Into<String>, mut per_video: Vec<VideoAccuracy>) -> Result<Self> {
        if per_video.is_empty() {
            return Err(Error::InvalidArgument("no videos to report".into()));
        }
        per_video.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let accs: Vec<f64> = per_video.iter().map(|v| v.accuracy).collect();
        Ok(Self {
            condition,
            backend: backend.into(),
            mean: mean(&accs),
            sd: sample_sd(&accs),
            per_video,
        })
    }
}

pub fn condition_report(run: &ConditionRun, videos: &[DatasetAnnotation]) -> Result<ConditionReport> {
    let by_id: HashMap<&str, &DatasetAnnotation> = videos.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let per_video = run
        .videos
        .iter()
        .map(|r| {
            let ann = by_id
                .get(r.video_id.as_str())
                .ok_or_else(|| Error::Pairing(format!("run has unknown video {}", r.video_id)))?;
            accuracy(ann, &r.predictions, run.config.trials)
        })
        .collect::<Result<Vec<_>>>()?;
    ConditionReport::from_accuracies(run.condition, run.backend.model_label.clone(), per_video)
}

/// One line of the comparison table. Accuracies are fractions; the
/// improvement is in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub baseline_mean: f64,
    pub baseline_sd: Option<f64>,
    pub oscar_mean: f64,
    pub oscar_sd: Option<f64>,
    pub improvement_pp: f64,
}

impl TableRow {
    pub fn new(model: impl Into<String>, baseline: (f64, Option<f64>), oscar: (f64, Option<f64>)) -> Self {
        Self {
            model: model.into(),
            baseline_mean: baseline.0,
            baseline_sd: baseline.1,
            oscar_mean: oscar.0,
            oscar_sd: oscar.1,
            improvement_pp: 100.0 * (oscar.0 - baseline.0),
        }
    }
}

/// Pairs baseline and status-fusion reports per backend into table rows.
pub fn aggregate_table(pairs: &[(ConditionReport, ConditionReport)]) -> Result<Vec<TableRow>> {
    pairs
        .iter()
        .map(|(b, o)| {
            if b.condition != Condition::Baseline || o.condition != Condition::Oscar {
                return Err(Error::Pairing(format!(
                    "expected (baseline, oscar), got ({}, {})",
                    b.condition, o.condition
                )));
            }
            if b.backend != o.backend {
                return Err(Error::Pairing(format!("backends differ: {} vs {}", b.backend, o.backend)));
            }
            let ids = |r: &ConditionReport| r.per_video.iter().map(|v| v.video_id.clone()).collect::<BTreeSet<_>>();
            let (bi, oi) = (ids(b), ids(o));
            if bi != oi {
                let diff: Vec<_> = bi.symmetric_difference(&oi).cloned().collect();
                return Err(Error::Pairing(format!("video sets differ on {diff:?}")));
            }
            Ok(TableRow::new(b.backend.clone(), (b.mean, b.sd), (o.mean, o.sd)))
        })
        .collect()
}

const HEADERS: [&str; 6] = [
    "VLM Model",
    "Baseline Accuracy",
    "Baseline Standard Deviation",
    "OSCAR Accuracy",
    "OSCAR Standard Deviation",
    "Improvements",
];

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn pct_opt(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_else(|| "n/a".into())
}

/// Aligned plain-text table in the usual column order.
pub fn render_table(rows: &[TableRow]) -> String {
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                pct(r.baseline_mean),
                pct_opt(r.baseline_sd),
                pct(r.oscar_mean),
                pct_opt(r.oscar_sd),
                format!("{:.1}%", r.improvement_pp),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        let padded: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join(" | ").trim_end());
    };
    line(&mut out, &HEADERS.map(String::from));
    let _ = writeln!(out, "{}", widths.map(|w| "-".repeat(w)).join("-+-"));
    for row in &cells {
        line(&mut out, row);
    }
    out
}

/// Machine-readable evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend: BackendDescriptor,
    pub config: RunConfig,
    pub conditions: Vec<ConditionReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<TableRow>,
}

impl EvalReport {
    pub fn condition(&self, c: Condition) -> Option<&ConditionReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
