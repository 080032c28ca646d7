//! Frame sampling over annotated segments.
//!
//! A segment is split into `k` equal sub-intervals, one timestamp is drawn
//! uniformly from each, and the sharpest manifest frame within `radius_s` of
//! each timestamp is kept. Sharpness is the variance of the 3×3 Laplacian of
//! the 8-bit grayscale image.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use base64::Engine;
use image::{DynamicImage, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_RADIUS_S: f64 = 0.5;
pub const MANIFEST_FILE: &str = "frames.jsonl";

/// Scheme for frames that exist only inside the synthetic embedding backend.
pub const SYNTHETIC_SCHEME: &str = "synthetic://";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl ImageFormat {
    pub fn from_path(path: &str) -> Option<Self> {
        let lower = path.to_ascii_lowercase();
        if lower.ends_with(".png") {
            Some(ImageFormat::Png)
        } else if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
            Some(ImageFormat::Jpeg)
        } else {
            None
        }
    }
}

/// Where a frame's pixels live: a file path (or synthetic URI), or inline base64.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path(String),
    Inline { b64: String, format: ImageFormat },
}

impl ImageRef {
    pub fn inline(bytes: &[u8], format: ImageFormat) -> Self {
        ImageRef::Inline {
            b64: base64::engine::general_purpose::STANDARD.encode(bytes),
            format,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self, ImageRef::Path(p) if p.starts_with(SYNTHETIC_SCHEME))
    }

    /// Raw encoded bytes and format. Synthetic references have no pixels.
    pub fn load_bytes(&self) -> Result<(Vec<u8>, ImageFormat)> {
        match self {
            ImageRef::Path(p) if p.starts_with(SYNTHETIC_SCHEME) => {
                Err(Error::Decode(format!("{p} is a synthetic frame without pixels")))
            }
            ImageRef::Path(p) => {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                let format = ImageFormat::from_path(p)
                    .or_else(|| match image::guess_format(&bytes) {
                        Ok(image::ImageFormat::Png) => Some(ImageFormat::Png),
                        Ok(image::ImageFormat::Jpeg) => Some(ImageFormat::Jpeg),
                        _ => None,
                    })
                    .ok_or_else(|| Error::Decode(format!("{p}: not a PNG or JPEG image")))?;
                Ok((bytes, format))
            }
            ImageRef::Inline { b64, format } => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| Error::Decode(format!("invalid base64 payload: {e}")))?;
                Ok((bytes, *format))
            }
        }
    }

    pub fn decode(&self) -> Result<DynamicImage> {
        let (bytes, _) = self.load_bytes()?;
        image::load_from_memory(&bytes).map_err(|e| Error::Decode(e.to_string()))
    }

    /// Short human-readable form for logs and prompts.
    pub fn describe(&self) -> String {
        match self {
            ImageRef::Path(p) => p.clone(),
            ImageRef::Inline { b64, format } => format!("inline {format:?} image ({} base64 chars)", b64.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub source_id: String,
    pub t_s: f64,
    pub image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub t_s: f64,
    pub path: String,
    /// Cached sharpness; computed from the image when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameManifest {
    pub source_id: String,
    pub duration_s: f64,
    entries: Vec<ManifestEntry>,
}

impl FrameManifest {
    pub fn new(source_id: impl Into<String>, duration_s: f64, entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("frame manifest is empty".into()));
        }
        for pair in entries.windows(2) {
            if !(pair[1].t_s > pair[0].t_s) {
                return Err(Error::InvalidArgument(format!(
                    "manifest timestamps not strictly increasing at t={}",
                    pair[1].t_s
                )));
            }
        }
        if entries.iter().any(|e| !e.t_s.is_finite() || e.t_s < 0.0) {
            return Err(Error::InvalidArgument("manifest timestamps must be finite and >= 0".into()));
        }
        if entries.iter().any(|e| e.blur.is_some_and(|b| !(b >= 0.0))) {
            return Err(Error::InvalidArgument("blur scores must be >= 0".into()));
        }
        let last = entries.last().unwrap().t_s;
        Ok(Self {
            source_id: source_id.into(),
            duration_s: duration_s.max(last),
            entries,
        })
    }

    /// Loads `dir/frames.jsonl`; relative image paths are resolved against `dir`.
    pub fn load(dir: &Path, source_id: &str, duration_s: Option<f64>) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::schema(&path, Some(no + 1), e.to_string()))?;
            if !entry.path.starts_with(SYNTHETIC_SCHEME) && Path::new(&entry.path).is_relative() {
                entry.path = dir.join(&entry.path).to_string_lossy().into_owned();
            }
            entries.push(entry);
        }
        Self::new(source_id, duration_s.unwrap_or(0.0), entries)
            .map_err(|e| Error::schema(&path, None, e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let mut out = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("entry serializes");
            writeln!(out, "{line}").map_err(|err| Error::io(&path, err))?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Fills in missing blur scores by decoding each image.
    pub fn score_blur(&mut self) -> Result<()> {
        for e in &mut self.entries {
            if e.blur.is_none() {
                e.blur = Some(blur_score(&ImageRef::Path(e.path.clone()).decode()?));
            }
        }
        Ok(())
    }

    fn frame_ref(&self, entry: &ManifestEntry) -> FrameRef {
        FrameRef {
            source_id: self.source_id.clone(),
            t_s: entry.t_s,
            image: ImageRef::Path(entry.path.clone()),
            blur_score: entry.blur,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

/// Splits `[start_s, end_s)` into `k` contiguous half-open intervals of equal width.
pub fn split_uniform(start_s: f64, end_s: f64, k: usize) -> Result<Vec<Interval>> {
    if k < 1 {
        return Err(Error::InvalidInterval(format!("k must be >= 1, got {k}")));
    }
    if !(start_s.is_finite() && end_s.is_finite()) || end_s <= start_s {
        return Err(Error::InvalidInterval(format!("[{start_s}, {end_s}) is empty")));
    }
    let width = end_s - start_s;
    let edge = |i: usize| {
        if i == k {
            end_s
        } else {
            start_s + width * i as f64 / k as f64
        }
    };
    Ok((0..k)
        .map(|i| Interval {
            start_s: edge(i),
            end_s: edge(i + 1),
        })
        .collect())
}

/// One uniform draw per interval, fully determined by `seed`.
pub fn sample_timestamps(intervals: &[Interval], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    intervals
        .iter()
        .map(|iv| {
            let u: f64 = rng.random();
            let t = iv.start_s + u * iv.width();
            // Rounding can land on the open end of very narrow intervals.
            if t < iv.end_s && t >= iv.start_s {
                t
            } else {
                iv.start_s
            }
        })
        .collect()
}

/// Variance of the 3×3 Laplacian (4-neighbour kernel, reflect-101 borders)
/// of the 8-bit grayscale image. Higher means sharper.
pub fn blur_score(image: &DynamicImage) -> f64 {
    laplacian_variance(&image.to_luma8())
}

pub fn blur_score_bytes(bytes: &[u8]) -> Result<f64> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    Ok(blur_score(&img))
}

fn reflect101(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

fn laplacian_variance(gray: &GrayImage) -> f64 {
    let (w, h) = (gray.width() as i64, gray.height() as i64);
    if w == 0 || h == 0 {
        return 0.0;
    }
    let px = |x: i64, y: i64| gray.get_pixel(reflect101(x, w) as u32, reflect101(y, h) as u32)[0] as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 0..h {
        for x in 0..w {
            let lap = px(x - 1, y) + px(x + 1, y) + px(x, y - 1) + px(x, y + 1) - 4.0 * px(x, y);
            sum += lap;
            sum_sq += lap * lap;
        }
    }
    let n = (w * h) as f64;
    let mean = sum / n;
    (sum_sq / n - mean * mean).max(0.0)
}

/// Sharpest manifest frame within `radius_s` of `t_s` (the nearest frame if
/// the window is empty). Ties go to the frame closest to `t_s`, then the
/// earliest. Unscored frames count as 0.
pub fn select_least_blurry_adjacent(manifest: &FrameManifest, t_s: f64, radius_s: f64) -> FrameRef {
    let entries = manifest.entries();
    let radius = radius_s.max(0.0);
    let dist = |e: &ManifestEntry| (e.t_s - t_s).abs();

    let nearest = entries
        .iter()
        .min_by(|a, b| dist(a).total_cmp(&dist(b)).then(a.t_s.total_cmp(&b.t_s)))
        .expect("manifest is non-empty");

    let best = entries
        .iter()
        .filter(|e| dist(e) <= radius)
        .chain(std::iter::once(nearest))
        .min_by(|a, b| {
            let (ba, bb) = (a.blur.unwrap_or(0.0), b.blur.unwrap_or(0.0));
            bb.total_cmp(&ba)
                .then(dist(a).total_cmp(&dist(b)))
                .then(a.t_s.total_cmp(&b.t_s))
        })
        .expect("at least the nearest entry");
    manifest.frame_ref(best)
}

/// A selected frame together with the sub-interval and timestamp it was drawn for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSample {
    pub interval: Interval,
    pub sampled_t_s: f64,
    pub frame: FrameRef,
}

/// Split, sample and sharpen: `k` frames for one segment, ordered by time.
pub fn sample_step_frames(
    manifest: &FrameManifest,
    segment: (f64, f64),
    k: usize,
    seed: u64,
    radius_s: f64,
) -> Result<Vec<FrameRef>> {
    Ok(sample_step_frames_traced(manifest, segment, k, seed, radius_s)?
        .into_iter()
        .map(|s| s.frame)
        .collect())
}

pub fn sample_step_frames_traced(
    manifest: &FrameManifest,
    segment: (f64, f64),
    k: usize,
    seed: u64,
    radius_s: f64,
) -> Result<Vec<FrameSample>> {
    let (start, end) = segment;
    const SLACK: f64 = 1e-9;
    if start < -SLACK || end > manifest.duration_s + SLACK {
        return Err(Error::InvalidInterval(format!(
            "segment [{start}, {end}) outside video duration {}",
            manifest.duration_s
        )));
    }
    let intervals = split_uniform(start, end, k)?;
    let times = sample_timestamps(&intervals, seed);
    let mut samples: Vec<FrameSample> = intervals
        .into_iter()
        .zip(times)
        .map(|(interval, t)| FrameSample {
            interval,
            sampled_t_s: t,
            frame: select_least_blurry_adjacent(manifest, t, radius_s),
        })
        .collect();
    samples.sort_by(|a, b| a.frame.t_s.total_cmp(&b.frame.t_s));
    Ok(samples)
}

/// External frame extractor configured as a shell command with `{video}`,
/// `{out_dir}` and `{fps}` placeholders. The command must leave a
/// `frames.jsonl` manifest in `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderHook {
    pub decoder_cmd: String,
}

impl DecoderHook {
    pub fn command_line(&self, video: &Path, out_dir: &Path, fps: f64) -> String {
        self.decoder_cmd
            .replace("{video}", &shell_quote(&video.to_string_lossy()))
            .replace("{out_dir}", &shell_quote(&out_dir.to_string_lossy()))
            .replace("{fps}", &fps.to_string())
    }

    pub fn extract(&self, video: &Path, out_dir: &Path, fps: f64, source_id: &str) -> Result<FrameManifest> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let cmd = self.command_line(video, out_dir, fps);
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Error::io(PathBuf::from("sh"), e))?;
        if !status.success() {
            return Err(Error::InvalidArgument(format!("decoder command failed ({status}): {cmd}")));
        }
        FrameManifest::load(out_dir, source_id, None)
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{imageops, Luma};

    fn entry(t: f64, blur: f64) -> ManifestEntry {
        ManifestEntry {
            t_s: t,
            path: format!("f{t}.png"),
            blur: Some(blur),
        }
    }

    #[test]
    fn split_examples() {
        let iv = split_uniform(0.0, 10.0, 5).unwrap();
        let pairs: Vec<_> = iv.iter().map(|i| (i.start_s, i.end_s)).collect();
        assert_eq!(pairs, vec![(0.0, 2.0), (2.0, 4.0), (4.0, 6.0), (6.0, 8.0), (8.0, 10.0)]);
        let one = split_uniform(3.0, 4.0, 1).unwrap();
        assert_eq!((one[0].start_s, one[0].end_s), (3.0, 4.0));
        assert!(matches!(split_uniform(5.0, 5.0, 5), Err(Error::InvalidInterval(_))));
        assert!(matches!(split_uniform(0.0, 1.0, 0), Err(Error::InvalidInterval(_))));
        assert!(matches!(split_uniform(2.0, 1.0, 2), Err(Error::InvalidInterval(_))));
    }

    #[test]
    fn sampling_is_seeded() {
        let iv = split_uniform(0.0, 10.0, 5).unwrap();
        assert_eq!(sample_timestamps(&iv, 42), sample_timestamps(&iv, 42));
        assert_ne!(sample_timestamps(&iv, 42), sample_timestamps(&iv, 43));
    }

    #[test]
    fn minimal_width_interval_returns_start() {
        let start = 1.0f64;
        let iv = [Interval {
            start_s: start,
            end_s: f64::from_bits(start.to_bits() + 1),
        }];
        for seed in 0..50 {
            assert_eq!(sample_timestamps(&iv, seed), vec![start]);
        }
    }

    #[test]
    fn constant_image_has_zero_blur_score() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(16, 12, Luma([137])));
        assert_eq!(blur_score(&img), 0.0);
    }

    #[test]
    fn checkerboard_sharper_than_blurred_copy() {
        let board = GrayImage::from_fn(32, 32, |x, y| Luma([if (x / 4 + y / 4) % 2 == 0 { 255 } else { 0 }]));
        let blurred = imageops::blur(&board, 2.0);
        let sharp = blur_score(&DynamicImage::ImageLuma8(board.clone()));
        let soft = blur_score(&DynamicImage::ImageLuma8(blurred));
        assert!(sharp > soft, "{sharp} <= {soft}");
        assert_eq!(sharp, blur_score(&DynamicImage::ImageLuma8(board)));
    }

    #[test]
    fn laplacian_matches_hand_computation() {
        // 3x3 with a single bright centre pixel: reflect-101 borders.
        let mut g = GrayImage::from_pixel(3, 3, Luma([0]));
        g.put_pixel(1, 1, Luma([10]));
        // centre: -40; edge midpoints: 10 + reflected 10 = 20; corners: 0.
        let vals = [0.0, 20.0, 0.0, 20.0, -40.0, 20.0, 0.0, 20.0, 0.0];
        let mean: f64 = vals.iter().sum::<f64>() / 9.0;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
        let got = laplacian_variance(&g);
        assert!((got - var).abs() < 1e-9, "{got} vs {var}");
    }

    #[test]
    fn decode_error_on_garbage() {
        assert!(matches!(blur_score_bytes(b"not an image"), Err(Error::Decode(_))));
    }

    #[test]
    fn selection_tie_rules() {
        let m = FrameManifest::new(
            "v",
            10.0,
            vec![entry(4.6, 5.0), entry(4.8, 5.0), entry(5.0, 1.0), entry(5.4, 5.0)],
        )
        .unwrap();
        // equal scores at -0.2 and +0.4: the closer one wins
        assert_eq!(select_least_blurry_adjacent(&m, 5.0, 0.5).t_s, 4.8);
        // radius 0: nearest frame regardless of sharpness
        assert_eq!(select_least_blurry_adjacent(&m, 5.05, 0.0).t_s, 5.0);
        // empty window falls back to nearest
        assert_eq!(select_least_blurry_adjacent(&m, 9.0, 0.5).t_s, 5.4);
    }

    #[test]
    fn selection_equidistant_tie_prefers_earliest() {
        let m = FrameManifest::new("v", 10.0, vec![entry(1.0, 3.0), entry(2.0, 3.0)]).unwrap();
        assert_eq!(select_least_blurry_adjacent(&m, 1.5, 1.0).t_s, 1.0);
    }

    #[test]
    fn manifest_validation() {
        assert!(FrameManifest::new("v", 1.0, vec![]).is_err());
        assert!(FrameManifest::new("v", 1.0, vec![entry(1.0, 0.0), entry(1.0, 0.0)]).is_err());
        assert!(FrameManifest::new("v", 1.0, vec![entry(1.0, -1.0)]).is_err());
    }

    #[test]
    fn sample_step_frames_ordering_and_bounds() {
        let entries = (0..=40).map(|i| entry(i as f64 * 0.25, (i * 7 % 11) as f64)).collect();
        let m = FrameManifest::new("v", 10.0, entries).unwrap();
        let frames = sample_step_frames(&m, (0.0, 10.0), 5, 7, 0.5).unwrap();
        assert_eq!(frames.len(), 5);
        assert!(frames.windows(2).all(|w| w[0].t_s <= w[1].t_s));
        assert_eq!(frames, sample_step_frames(&m, (0.0, 10.0), 5, 7, 0.5).unwrap());
        assert!(matches!(
            sample_step_frames(&m, (0.0, 11.0), 5, 7, 0.5),
            Err(Error::InvalidInterval(_))
        ));
    }

    #[test]
    fn sparse_manifest_may_repeat_frames() {
        let m = FrameManifest::new("v", 20.0, vec![entry(0.0, 1.0), entry(10.0, 1.0), entry(20.0, 1.0)]).unwrap();
        let frames = sample_step_frames(&m, (9.0, 11.0), 5, 1, 0.5).unwrap();
        assert_eq!(frames.len(), 5);
        assert!(frames.iter().all(|f| f.t_s == 10.0));
    }

    #[test]
    fn manifest_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = FrameManifest::new("v", 2.0, vec![entry(0.5, 1.0), entry(1.5, 2.0)]).unwrap();
        m.write(dir.path()).unwrap();
        let back = FrameManifest::load(dir.path(), "v", Some(2.0)).unwrap();
        assert_eq!(back.entries().len(), 2);
        assert!(back.entries()[0].path.starts_with(dir.path().to_str().unwrap()));
        assert_eq!(back.duration_s, 2.0);
    }

    #[test]
    fn manifest_schema_error_has_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{\"t_s\": 0.0, \"path\": \"a.png\"}\n{bad}\n").unwrap();
        match FrameManifest::load(dir.path(), "v", None) {
            Err(Error::Schema { line: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decoder_hook_runs_command() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("frames");
        let hook = DecoderHook {
            decoder_cmd: r#"printf '{"t_s": 0.0, "path": "a.png"}\n{"t_s": {fps}, "path": "b.png"}\n' > {out_dir}/frames.jsonl"#
                .into(),
        };
        let m = hook.extract(Path::new("/tmp/video.mp4"), &out, 2.0, "vid").unwrap();
        assert_eq!(m.entries().len(), 2);
        assert_eq!(m.entries()[1].t_s, 2.0);
        let failing = DecoderHook { decoder_cmd: "exit 3".into() };
        assert!(failing.extract(Path::new("x"), &out, 1.0, "vid").is_err());
    }
}
