use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use oscar_core::alignment::{fuse_scores, prompts_for_channel, Channel, PromptEmbeddings};
use oscar_core::embedding::EmbeddingBackend;
use oscar_core::evaluation::{
    aggregate_table, condition_report, generate_benchmark, import_youcook2 as import, render_table, BenchmarkConfig,
    Condition, Dataset, DatasetAnnotation, DirFrameSource, EvalReport, RunConfig, VIDEOS_DIR,
};
use oscar_core::frames::{sample_step_frames_traced, FrameManifest, FrameRef, FrameSample};
use oscar_core::llm::HttpLlmClient;
use oscar_core::recipe::{normalize_steps, parse_recipe, Recipe};
use oscar_core::seed::derive_seed;
use oscar_core::status::{extract_object_statuses, LlmStatusExtractor, RuleEngine};
use oscar_core::tracker::{decode_monotone, objective, run_online, TrackerConfig};
use oscar_service::{ServiceConfig, SessionManager};

use crate::{backend, BackendArgs, ConditionArg, DecodeMode};

/// Frames chosen for one annotated segment.
#[derive(Debug, Serialize, Deserialize)]
pub struct SampledSegment {
    pub segment_index: usize,
    pub step_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub frames: Vec<FrameSample>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FramesInput {
    Segments(Vec<SampledSegment>),
    Frames(Vec<FrameRef>),
}

/// One line of `align` output.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub source_id: String,
    pub t_s: f64,
    pub channel: Channel,
    pub scores: Vec<f64>,
}

#[derive(Serialize)]
struct OfflineRecord {
    t_s: f64,
    predicted: usize,
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn load_recipe(path: &Path) -> anyhow::Result<Recipe> {
    parse_recipe(&read(path)?).with_context(|| format!("parsing recipe {}", path.display()))
}

pub fn normalize(input: &Path, out: &Path, llm_endpoint: Option<&str>) -> anyhow::Result<()> {
    let recipe = load_recipe(input)?;
    let client = llm_endpoint.map(HttpLlmClient::new).transpose()?;
    let normalized = normalize_steps(&recipe, client.as_ref().map(|c| c as _))?;
    write(out, &normalized.to_json_pretty())?;
    eprintln!("{} steps -> {}", normalized.n_steps(), out.display());
    Ok(())
}

pub fn status_extract(input: &Path, out: &Path, llm_endpoint: Option<&str>) -> anyhow::Result<()> {
    let recipe = load_recipe(input)?;
    let extracted = match llm_endpoint {
        Some(url) => {
            let client = HttpLlmClient::new(url)?;
            extract_object_statuses(&recipe, &LlmStatusExtractor { client: &client })?
        }
        None => extract_object_statuses(&recipe, &RuleEngine)?,
    };
    write(out, &extracted.to_json_pretty())?;
    let n: usize = extracted.steps.iter().map(|s| s.statuses.len()).sum();
    eprintln!("{n} statuses over {} steps -> {}", extracted.n_steps(), out.display());
    Ok(())
}

/// Segment seeds follow the evaluator's first trial, so `sample` shows the
/// frames an evaluation with the same seed would score.
pub fn sample(manifest: &Path, annotations: &Path, k: usize, seed: u64, radius: f64, out: &Path) -> anyhow::Result<()> {
    let ann = DatasetAnnotation::from_json(&read(annotations)?, annotations)?;
    let mut m = FrameManifest::load(manifest, &ann.video_id, Some(ann.duration_s))?;
    m.score_blur()?;
    let trial_seed = derive_seed(seed, &ann.video_id, 0);
    let segments = ann
        .segments
        .iter()
        .enumerate()
        .map(|(j, seg)| {
            let frames = sample_step_frames_traced(
                &m,
                (seg.start_s, seg.end_s),
                k,
                derive_seed(trial_seed, "segment", j as u64),
                radius,
            )?;
            Ok(SampledSegment {
                segment_index: j,
                step_index: seg.step_index,
                start_s: seg.start_s,
                end_s: seg.end_s,
                frames,
            })
        })
        .collect::<oscar_core::Result<Vec<_>>>()?;
    write(out, &(serde_json::to_string_pretty(&segments)? + "\n"))?;
    eprintln!("{} segments x {k} frames -> {}", segments.len(), out.display());
    Ok(())
}

pub fn align(
    frames: &Path,
    recipe: &Path,
    args: &BackendArgs,
    channel: Channel,
    fusion_weight: f64,
    out: &Path,
) -> anyhow::Result<()> {
    let frames: Vec<FrameRef> = match serde_json::from_str(&read(frames)?)
        .with_context(|| format!("parsing {}", frames.display()))?
    {
        FramesInput::Segments(segs) => segs.into_iter().flat_map(|s| s.frames).map(|s| s.frame).collect(),
        FramesInput::Frames(f) => f,
    };
    if frames.is_empty() {
        bail!("no frames to score");
    }
    let mut recipe = load_recipe(recipe)?;
    if channel != Channel::Baseline && !recipe.has_statuses() {
        recipe = extract_object_statuses(&recipe, &RuleEngine)?;
    }
    let backend = backend::embedding(args, None)?;
    let vectors = backend.embed_images(&frames)?;
    let score = |c: Channel| -> anyhow::Result<Vec<Vec<f64>>> {
        let prompts = PromptEmbeddings::embed(&*backend, &prompts_for_channel(&recipe, c)?, c)?;
        Ok(prompts.score(&vectors)?.values)
    };
    let rows = match channel {
        Channel::Fused => {
            let (b, s) = (score(Channel::Baseline)?, score(Channel::Status)?);
            b.iter()
                .zip(&s)
                .map(|(b, s)| Ok(fuse_scores(b, s, fusion_weight)?.scores))
                .collect::<anyhow::Result<Vec<_>>>()?
        }
        c => score(c)?,
    };
    write_lines(
        out,
        frames.iter().zip(rows).map(|(f, scores)| ScoreRecord {
            source_id: f.source_id.clone(),
            t_s: f.t_s,
            channel,
            scores,
        }),
    )?;
    eprintln!("{} frames x {} steps ({channel}) -> {}", frames.len(), recipe.n_steps(), out.display());
    Ok(())
}

fn read_scores(path: &Path) -> anyhow::Result<Vec<ScoreRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str::<ScoreRecord>(&line)
                .with_context(|| format!("{}:{}", path.display(), no + 1))?,
        );
    }
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.channel != first.channel) {
            bail!("{} mixes score channels; decode one channel at a time", path.display());
        }
    }
    Ok(records)
}

pub fn decode(scores: &Path, mode: DecodeMode, config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let records = read_scores(scores)?;
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.scores.clone()).collect();
    let times: Vec<f64> = records.iter().map(|r| r.t_s).collect();
    match mode {
        DecodeMode::Offline => {
            let path = decode_monotone(&rows)?;
            eprintln!("objective {:.6}", objective(&rows, &path));
            write_lines(
                out,
                times.iter().zip(&path).map(|(&t_s, &predicted)| OfflineRecord { t_s, predicted }),
            )?;
        }
        DecodeMode::Online => {
            let cfg: TrackerConfig = match config {
                Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => TrackerConfig::default(),
            };
            let log = run_online(&rows, &times, cfg)?;
            if let Some(last) = log.last() {
                eprintln!(
                    "current step {} missing {:?}",
                    last.state_after.current, last.state_after.missing
                );
            }
            write_lines(out, &log)?;
        }
    }
    Ok(())
}

pub fn evaluate(
    dataset: &Path,
    condition: ConditionArg,
    args: &BackendArgs,
    cfg: RunConfig,
    report: &Path,
    score_log: Option<&Path>,
) -> anyhow::Result<()> {
    let ds = Dataset::load(dataset)?;
    if ds.videos.is_empty() {
        bail!("no annotated videos under {}", dataset.display());
    }
    let backend = backend::embedding(args, ds.synthetic.as_ref())?;
    let frames = DirFrameSource::new(&ds.root);
    let conditions: &[Condition] = match condition {
        ConditionArg::Baseline => &[Condition::Baseline],
        ConditionArg::Oscar => &[Condition::Oscar],
        ConditionArg::Both => &[Condition::Baseline, Condition::Oscar],
    };
    let mut reports = Vec::new();
    let mut log_lines = Vec::new();
    for &c in conditions {
        let run = oscar_core::evaluation::run_condition(&ds.videos, &frames, c, &*backend, &cfg, score_log.is_some())?;
        log_lines.extend(run.score_log().cloned());
        reports.push(condition_report(&run, &ds.videos)?);
    }
    let table = match reports.as_slice() {
        [b, o] => aggregate_table(&[(b.clone(), o.clone())])?,
        _ => Vec::new(),
    };
    let out = EvalReport {
        backend: backend.descriptor(),
        config: cfg,
        conditions: reports,
        table,
    };
    write(report, &out.to_json_pretty())?;
    if let Some(path) = score_log {
        write_lines(path, &log_lines)?;
    }
    if out.table.is_empty() {
        for r in &out.conditions {
            let sd = r.sd.map_or("n/a".to_string(), |s| format!("{:.1}%", s * 100.0));
            println!("{}: {:.1}% (sd {sd}) over {} videos", r.condition, r.mean * 100.0, r.per_video.len());
        }
    } else {
        print!("{}", render_table(&out.table));
    }
    Ok(())
}

/// Blocking HTTP clients are created here, before the async runtime starts.
pub fn serve(
    addr: SocketAddr,
    args: &BackendArgs,
    llm: &str,
    log_dir: Option<PathBuf>,
    allow_file_refs: bool,
) -> anyhow::Result<()> {
    let embed = backend::embedding(args, None)?;
    let llm = backend::llm(llm)?;
    let config = ServiceConfig {
        log_dir,
        allow_file_refs,
        ..ServiceConfig::default()
    };
    let manager = Arc::new(SessionManager::new(embed, llm, config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let recovered = manager.recover().await?;
        if !recovered.is_empty() {
            eprintln!("recovered {} sessions", recovered.len());
        }
        eprintln!("listening on http://{addr}");
        oscar_service::serve(manager, addr).await?;
        anyhow::Ok(())
    })
}

pub fn import_youcook2(annotations: &Path, sidecar: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let videos = import(annotations, sidecar)?;
    let dir = out.join(VIDEOS_DIR);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for v in &videos {
        v.write(&dir.join(format!("{}.json", v.video_id)))?;
    }
    eprintln!("{} videos -> {}", videos.len(), dir.display());
    Ok(())
}

pub fn synth_bench(out: &Path, cfg: &BenchmarkConfig) -> anyhow::Result<()> {
    let ds = generate_benchmark(out, cfg)?;
    eprintln!("{} videos x {} steps -> {}", ds.videos.len(), cfg.n_steps, out.display());
    Ok(())
}
