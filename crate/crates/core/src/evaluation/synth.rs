use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetAnnotation, Segment, FRAMES_DIR, SYNTHETIC_FILE, VIDEOS_DIR};
use crate::embedding::{synthetic_frame_ref, SyntheticSpec, WorldSpec};
use crate::error::{Error, Result};
use crate::frames::{FrameManifest, ImageRef, ManifestEntry};
use crate::seed::derive_seed;

/// Shape of a generated benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_videos: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub sigma: f64,
    pub fps: f64,
    pub min_segment_s: f64,
    pub max_segment_s: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_videos: 20,
            n_steps: 8,
            seed: 42,
            alpha: 0.5,
            sigma: 1.5,
            fps: 2.0,
            min_segment_s: 6.0,
            max_segment_s: 14.0,
        }
    }
}

fn video_id(i: usize) -> String {
    format!("synth-{i:03}")
}

/// Writes a dataset of planted worlds under `dir`: one annotation per video,
/// a synthetic frame manifest per video and the world definitions. Steps
/// are filmed back to back in recipe order.
pub fn generate_benchmark(dir: &Path, cfg: &BenchmarkConfig) -> Result<Dataset> {
    if cfg.n_videos == 0 || cfg.n_steps == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one video and one step".into()));
    }
    if !(cfg.fps > 0.0 && cfg.min_segment_s > 0.0 && cfg.max_segment_s >= cfg.min_segment_s) {
        return Err(Error::InvalidArgument(format!("invalid benchmark timing {cfg:?}")));
    }
    let spec = SyntheticSpec {
        dim: crate::embedding::DEFAULT_DIM,
        rotation_rad: crate::embedding::DEFAULT_ROTATION_RAD,
        worlds: (0..cfg.n_videos)
            .map(|i| WorldSpec {
                id: video_id(i),
                n_steps: cfg.n_steps,
                seed: derive_seed(cfg.seed, "world", i as u64),
                alpha: cfg.alpha,
                sigma: cfg.sigma,
            })
            .collect(),
    };
    let worlds = spec.build()?;

    let videos_dir = dir.join(VIDEOS_DIR);
    fs::create_dir_all(&videos_dir).map_err(|e| Error::io(&videos_dir, e))?;
    spec.save(&dir.join(SYNTHETIC_FILE))?;

    for (i, world) in worlds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "timing", i as u64));
        let mut segments = Vec::with_capacity(cfg.n_steps);
        let mut t = 0.0;
        for step in 1..=cfg.n_steps {
            let len = if cfg.max_segment_s > cfg.min_segment_s {
                rng.random_range(cfg.min_segment_s..cfg.max_segment_s)
            } else {
                cfg.min_segment_s
            };
            // Round to milliseconds so annotation files stay readable.
            let end = ((t + len) * 1000.0).round() / 1000.0;
            segments.push(Segment {
                step_index: step,
                start_s: t,
                end_s: end,
            });
            t = end;
        }
        let ann = DatasetAnnotation {
            video_id: world.id.clone(),
            duration_s: t,
            recipe: world.recipe().clone(),
            segments,
        };
        ann.validate().map_err(Error::InvalidArgument)?;
        ann.write(&videos_dir.join(format!("{}.json", world.id)))?;

        let n_frames = (t * cfg.fps).floor() as usize;
        let entries = (0..n_frames)
            .map(|f| {
                let ts = f as f64 / cfg.fps;
                let step = ann
                    .segments
                    .iter()
                    .find(|s| ts >= s.start_s && ts < s.end_s)
                    .map_or(0, |s| s.step_index);
                let ImageRef::Path(path) = synthetic_frame_ref(&world.id, step, ts).image else {
                    unreachable!("synthetic frames are path references")
                };
                let mut blur_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &path, 0));
                ManifestEntry {
                    t_s: ts,
                    path,
                    blur: Some((blur_rng.random_range(0.0..1000.0f64) * 1000.0).round() / 1000.0),
                }
            })
            .collect();
        FrameManifest::new(world.id.clone(), t, entries)?.write(&dir.join(FRAMES_DIR).join(&world.id))?;
    }
    Dataset::load(dir)
}
