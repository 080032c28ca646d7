//! Session registry: frame ingestion, tracking, Q/A and event fan-out.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex};

use oscar_core::alignment::{fuse_scores, prompts_for_channel, Channel, PromptEmbeddings, DEFAULT_FUSION_WEIGHT};
use oscar_core::embedding::EmbeddingBackend;
use oscar_core::frames::{FrameRef, ImageRef};
use oscar_core::llm::{ChatMessage, LlmClient};
use oscar_core::recipe::Recipe;
use oscar_core::status::{extract_object_statuses, RuleEngine};
use oscar_core::tracker::{OnlineTracker, PredictionLogEntry, ProgressState, TrackerConfig};

use crate::error::{ServiceError, ServiceResult};
use crate::qa::{build_qa_prompt, QAExchange, QaContext, DEFAULT_LOG_WINDOW};

const EVENT_CAPACITY: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub tracker: TrackerConfig,
    pub fusion_weight: f64,
    /// Log entries included in Q/A prompts and snapshots.
    pub log_window: usize,
    /// Where append-only session logs live; `None` keeps sessions in memory only.
    pub log_dir: Option<PathBuf>,
    /// Accept frame references naming files on the server's disk.
    pub allow_file_refs: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            fusion_weight: DEFAULT_FUSION_WEIGHT,
            log_window: DEFAULT_LOG_WINDOW,
            log_dir: None,
            allow_file_refs: false,
        }
    }
}

/// Full state sent to subscribers when they join.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub recipe: Recipe,
    pub created_at: DateTime<Utc>,
    pub config: TrackerConfig,
    pub state: ProgressState,
    pub log_len: usize,
    /// The most recent log entries (at most the configured window).
    pub recent_log: Vec<PredictionLogEntry>,
    pub qa: Vec<QAExchange>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Snapshot(Box<SessionSnapshot>),
    Progress { seq: usize, entry: PredictionLogEntry },
    Qa { seq: usize, exchange: QAExchange },
    Closed,
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SessionEvent::Snapshot(_) => "snapshot",
            SessionEvent::Progress { .. } => "progress",
            SessionEvent::Qa { .. } => "qa",
            SessionEvent::Closed => "closed",
        }
    }
}

/// One line of a session log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogRecord {
    Created {
        id: String,
        created_at: DateTime<Utc>,
        recipe: Recipe,
        config: TrackerConfig,
        fusion_weight: f64,
    },
    /// Inline images are not copied into the log.
    Frame {
        entry: PredictionLogEntry,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frame: Option<FrameRef>,
    },
    Qa {
        exchange: QAExchange,
    },
    Closed,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub title: String,
    pub created_at: DateTime<Utc>,
    pub current: usize,
    pub n_steps: usize,
    pub closed: bool,
}

struct Prompts {
    baseline: PromptEmbeddings,
    status: PromptEmbeddings,
}

struct Session {
    id: String,
    recipe: Recipe,
    created_at: DateTime<Utc>,
    fusion_weight: f64,
    tracker: OnlineTracker,
    log: Vec<PredictionLogEntry>,
    qa: Vec<QAExchange>,
    last_frame: Option<FrameRef>,
    closed: bool,
    prompts: Arc<Prompts>,
    writer: Option<File>,
}

impl Session {
    fn snapshot(&self, window: usize) -> SessionSnapshot {
        let start = self.log.len().saturating_sub(window);
        SessionSnapshot {
            id: self.id.clone(),
            recipe: self.recipe.clone(),
            created_at: self.created_at,
            config: *self.tracker.config(),
            state: self.tracker.state().clone(),
            log_len: self.log.len(),
            recent_log: self.log[start..].to_vec(),
            qa: self.qa.clone(),
            closed: self.closed,
        }
    }

    fn persist(&mut self, record: &LogRecord) -> ServiceResult<()> {
        if let Some(w) = &mut self.writer {
            let line = serde_json::to_string(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| ServiceError::Internal(format!("writing session log: {e}")))?;
        }
        Ok(())
    }

    fn ensure_open(&self) -> ServiceResult<()> {
        if self.closed {
            Err(ServiceError::SessionClosed(self.id.clone()))
        } else {
            Ok(())
        }
    }

    fn qa_context(&self) -> QaContext<'_> {
        QaContext {
            recipe: &self.recipe,
            state: self.tracker.state(),
            log: &self.log,
            last_frame: self.last_frame.as_ref(),
        }
    }
}

struct SessionHandle {
    session: Mutex<Session>,
    events: broadcast::Sender<SessionEvent>,
}

/// Owns every live session. Work on one session is serialized by its own
/// lock; distinct sessions proceed independently.
pub struct SessionManager {
    backend: Arc<dyn EmbeddingBackend>,
    llm: Arc<dyn LlmClient>,
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ServiceResult<T> + Send + 'static) -> ServiceResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker task failed: {e}")))?
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

impl SessionManager {
    pub fn new(backend: Arc<dyn EmbeddingBackend>, llm: Arc<dyn LlmClient>, config: ServiceConfig) -> ServiceResult<Self> {
        config.tracker.validate()?;
        if !(0.0..=1.0).contains(&config.fusion_weight) {
            return Err(oscar_core::Error::InvalidWeight(config.fusion_weight).into());
        }
        if let Some(dir) = &config.log_dir {
            fs::create_dir_all(dir).map_err(|e| oscar_core::Error::io(dir, e))?;
        }
        Ok(Self {
            backend,
            llm,
            config,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn handle(&self, id: &str) -> ServiceResult<Arc<SessionHandle>> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    async fn embed_prompts(&self, recipe: &Recipe) -> ServiceResult<Prompts> {
        let backend = Arc::clone(&self.backend);
        let baseline = prompts_for_channel(recipe, Channel::Baseline)?;
        let status = prompts_for_channel(recipe, Channel::Status)?;
        blocking(move || {
            Ok(Prompts {
                baseline: PromptEmbeddings::embed(backend.as_ref(), &baseline, Channel::Baseline)?,
                status: PromptEmbeddings::embed(backend.as_ref(), &status, Channel::Status)?,
            })
        })
        .await
    }

    fn register(&self, session: Session) -> String {
        let id = session.id.clone();
        let (events, _) = broadcast::channel(EVENT_CAPACITY);
        let handle = Arc::new(SessionHandle {
            session: Mutex::new(session),
            events,
        });
        self.sessions.write().expect("session table lock").insert(id.clone(), handle);
        id
    }

    /// Starts a session. Recipes without object statuses get them from the
    /// rule engine first.
    pub async fn create_session(&self, recipe: Recipe, tracker: Option<TrackerConfig>) -> ServiceResult<String> {
        recipe.validate()?;
        let recipe = if recipe.has_statuses() {
            recipe
        } else {
            extract_object_statuses(&recipe, &RuleEngine)?
        };
        let config = tracker.unwrap_or(self.config.tracker);
        let tracker = OnlineTracker::new(recipe.n_steps(), config)?;
        let prompts = Arc::new(self.embed_prompts(&recipe).await?);
        let id = uuid::Uuid::new_v4().simple().to_string();
        let writer = match &self.config.log_dir {
            Some(dir) => {
                let path = log_path(dir, &id);
                Some(File::create(&path).map_err(|e| oscar_core::Error::io(&path, e))?)
            }
            None => None,
        };
        let mut session = Session {
            id: id.clone(),
            recipe,
            created_at: Utc::now(),
            fusion_weight: self.config.fusion_weight,
            tracker,
            log: Vec::new(),
            qa: Vec::new(),
            last_frame: None,
            closed: false,
            prompts,
            writer,
        };
        session.persist(&LogRecord::Created {
            id: id.clone(),
            created_at: session.created_at,
            recipe: session.recipe.clone(),
            config,
            fusion_weight: session.fusion_weight,
        })?;
        Ok(self.register(session))
    }

    pub fn list(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session table lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn summaries(&self) -> Vec<SessionSummary> {
        let handles: Vec<_> = self.sessions.read().expect("session table lock").values().cloned().collect();
        let mut out = Vec::with_capacity(handles.len());
        for h in handles {
            let s = h.session.lock().await;
            out.push(SessionSummary {
                id: s.id.clone(),
                title: s.recipe.title.clone(),
                created_at: s.created_at,
                current: s.tracker.state().current,
                n_steps: s.recipe.n_steps(),
                closed: s.closed,
            });
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
        out
    }

    /// Embeds one frame, scores it against every step, updates the tracker
    /// and broadcasts the resulting log entry.
    pub async fn ingest_frame(&self, id: &str, image: ImageRef, t_s: f64) -> ServiceResult<PredictionLogEntry> {
        if let ImageRef::Path(p) = &image {
            if !image.is_synthetic() && !self.config.allow_file_refs {
                return Err(ServiceError::BadRequest(format!(
                    "file references are disabled on this server: {p}"
                )));
            }
        }
        let handle = self.handle(id)?;
        let mut session = handle.session.lock().await;
        session.ensure_open()?;
        if let Some(last) = session.tracker.last_t_s() {
            if t_s < last {
                return Err(oscar_core::Error::NonMonotoneTimestamp { last, got: t_s }.into());
            }
        }
        let frame = FrameRef {
            source_id: id.to_string(),
            t_s,
            image,
            blur_score: None,
        };
        let backend = Arc::clone(&self.backend);
        let prompts = Arc::clone(&session.prompts);
        let weight = session.fusion_weight;
        let to_embed = frame.clone();
        let fused = blocking(move || {
            let v = backend.embed_images(std::slice::from_ref(&to_embed))?;
            let b = prompts.baseline.score(&v)?;
            let s = prompts.status.score(&v)?;
            Ok(fuse_scores(&b.values[0], &s.values[0], weight)?)
        })
        .await?;

        let mut tracker = session.tracker.clone();
        let entry = tracker.observe(&fused.scores, t_s)?;
        let logged_frame = matches!(frame.image, ImageRef::Path(_)).then(|| frame.clone());
        session.persist(&LogRecord::Frame {
            entry: entry.clone(),
            frame: logged_frame,
        })?;
        session.tracker = tracker;
        session.log.push(entry.clone());
        session.last_frame = Some(frame);
        let _ = handle.events.send(SessionEvent::Progress {
            seq: session.log.len() - 1,
            entry: entry.clone(),
        });
        Ok(entry)
    }

    pub async fn get_progress(&self, id: &str) -> ServiceResult<ProgressState> {
        let handle = self.handle(id)?;
        let session = handle.session.lock().await;
        Ok(session.tracker.state().clone())
    }

    pub async fn snapshot(&self, id: &str) -> ServiceResult<SessionSnapshot> {
        let handle = self.handle(id)?;
        let session = handle.session.lock().await;
        Ok(session.snapshot(self.config.log_window))
    }

    /// The prompt a question would be sent with right now.
    pub async fn qa_prompt(&self, id: &str, question: &str, include_last_frame: bool) -> ServiceResult<String> {
        let handle = self.handle(id)?;
        let session = handle.session.lock().await;
        Ok(build_qa_prompt(&session.qa_context(), question, include_last_frame, self.config.log_window))
    }

    pub async fn ask_question(&self, id: &str, question: &str, include_last_frame: bool) -> ServiceResult<QAExchange> {
        if question.trim().is_empty() {
            return Err(ServiceError::BadRequest("question is empty".into()));
        }
        let handle = self.handle(id)?;
        let mut session = handle.session.lock().await;
        let prompt = build_qa_prompt(&session.qa_context(), question, include_last_frame, self.config.log_window);
        let log_cursor = session.log.len();
        let llm = Arc::clone(&self.llm);
        let answer = blocking(move || {
            llm.chat(&[ChatMessage::user(prompt)])
                .map_err(|e| ServiceError::Core(e.into()))
        })
        .await?;
        let exchange = QAExchange {
            question: question.trim().to_string(),
            answer,
            log_cursor,
        };
        session.persist(&LogRecord::Qa {
            exchange: exchange.clone(),
        })?;
        session.qa.push(exchange.clone());
        let _ = handle.events.send(SessionEvent::Qa {
            seq: session.qa.len() - 1,
            exchange: exchange.clone(),
        });
        Ok(exchange)
    }

    /// Current snapshot plus a receiver for every later event, with no gap
    /// or overlap between the two.
    pub async fn subscribe(&self, id: &str) -> ServiceResult<(SessionSnapshot, broadcast::Receiver<SessionEvent>)> {
        let handle = self.handle(id)?;
        let session = handle.session.lock().await;
        let rx = handle.events.subscribe();
        Ok((session.snapshot(self.config.log_window), rx))
    }

    /// Ends the session: further frames and questions are refused and every
    /// event stream finishes.
    pub async fn close(&self, id: &str) -> ServiceResult<()> {
        let handle = self.handle(id)?;
        let mut session = handle.session.lock().await;
        if session.closed {
            return Ok(());
        }
        session.persist(&LogRecord::Closed)?;
        session.closed = true;
        let _ = handle.events.send(SessionEvent::Closed);
        Ok(())
    }

    /// Rebuilds every session found in the log directory by replaying its
    /// records. Returns the recovered ids.
    pub async fn recover(&self) -> ServiceResult<Vec<String>> {
        let Some(dir) = self.config.log_dir.clone() else {
            return Ok(Vec::new());
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| oscar_core::Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut ids = Vec::new();
        for path in paths {
            let session = self.replay(&path).await?;
            ids.push(self.register(session));
        }
        Ok(ids)
    }

    async fn replay(&self, path: &Path) -> ServiceResult<Session> {
        let file = File::open(path).map_err(|e| oscar_core::Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| oscar_core::Error::io(path, e))?;
        let schema = |line: usize, m: String| ServiceError::Core(oscar_core::Error::schema(path, Some(line), m));
        let mut records = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogRecord>(line) {
                Ok(r) => records.push(r),
                // A torn final line from a crash mid-write is dropped so that
                // later appends start on a clean line.
                Err(_) if i + 1 == lines.len() => {
                    let kept: String = lines[..i].iter().map(|l| format!("{l}\n")).collect();
                    fs::write(path, kept).map_err(|e| oscar_core::Error::io(path, e))?;
                }
                Err(e) => return Err(schema(i + 1, e.to_string())),
            }
        }
        let mut records = records.into_iter();
        let Some(LogRecord::Created {
            id,
            created_at,
            recipe,
            config,
            fusion_weight,
        }) = records.next()
        else {
            return Err(schema(1, "session log must start with a created record".into()));
        };
        let prompts = Arc::new(self.embed_prompts(&recipe).await?);
        let mut session = Session {
            tracker: OnlineTracker::new(recipe.n_steps(), config)?,
            id,
            recipe,
            created_at,
            fusion_weight,
            log: Vec::new(),
            qa: Vec::new(),
            last_frame: None,
            closed: false,
            prompts,
            writer: None,
        };
        for record in records {
            match record {
                LogRecord::Frame { entry, frame } => {
                    let replayed = session.tracker.observe(&entry.fused, entry.t_s)?;
                    if replayed != entry {
                        return Err(ServiceError::Internal(format!(
                            "{}: replay diverges at t={}",
                            path.display(),
                            entry.t_s
                        )));
                    }
                    session.log.push(entry);
                    session.last_frame = frame;
                }
                LogRecord::Qa { exchange } => session.qa.push(exchange),
                LogRecord::Closed => session.closed = true,
                LogRecord::Created { .. } => {
                    return Err(ServiceError::Internal(format!("{}: duplicate created record", path.display())))
                }
            }
        }
        session.writer = Some(
            OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| oscar_core::Error::io(path, e))?,
        );
        Ok(session)
    }
}
