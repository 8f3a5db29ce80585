//! HTTP session service for the listening tests.
//!
//! Per session the service keeps two files in the log directory:
//! `<id>.schedule.json` written once at creation and `<id>.ndjson`, an
//! append-only log with one response record per line. Sessions found
//! there at startup are replayed and resume where they stopped.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use alod_core::experiment::{
    build_session, compute_stats, default_conditions, CatalogEntry, Paradigm, Phase, ResponsePayload,
    ResponseRecord, SessionSpec, SessionState, SessionStats, SessionStatus, TrialSchedule, TrialView,
};
use alod_core::scene::Presentation;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Service configuration file (TOML). Relative directories are resolved
/// against the file's location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub stimulus_dir: PathBuf,
    pub log_dir: PathBuf,
    #[serde(default)]
    pub stimulus: Vec<CatalogEntry>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ServiceConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e.message()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.stimulus_dir = base.join(&cfg.stimulus_dir);
        cfg.log_dir = base.join(&cfg.log_dir);
        Ok(cfg)
    }

    /// Catalog keys without a file below the stimulus directory.
    pub fn missing_stimuli(&self) -> Vec<String> {
        self.stimulus
            .iter()
            .filter(|e| !self.stimulus_dir.join(&e.key).is_file())
            .map(|e| e.key.clone())
            .collect()
    }
}

struct Live {
    state: SessionState,
    audio: BTreeMap<String, String>,
    log: File,
}

pub struct Service {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Live>>>>,
}

pub type Shared = Arc<Service>;

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn schedule_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.schedule.json"))
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ndjson"))
}

fn open_log(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Parse an NDJSON response log. Blank lines are skipped.
pub fn read_log(path: &Path) -> Result<Vec<ResponseRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1))))
        .collect()
}

/// Every session stored in `dir`, replayed from its schedule and log.
pub fn load_sessions(dir: &Path) -> Result<Vec<SessionState>> {
    let mut out = Vec::new();
    let rd = match std::fs::read_dir(dir) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut names: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".schedule.json"))
        .collect();
    names.sort();
    for p in names {
        let text = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let schedule: TrialSchedule = serde_json::from_slice(&text).map_err(|e| Error::parse(&p, e))?;
        let log = read_log(&log_path(dir, &schedule.spec.session_id))?;
        out.push(SessionState::replay(schedule, log)?);
    }
    Ok(out)
}

impl Service {
    /// Check the stimulus files and resume stored sessions.
    pub fn start(cfg: ServiceConfig) -> Result<Shared> {
        let missing = cfg.missing_stimuli();
        if !missing.is_empty() {
            return Err(Error::Service(format!(
                "{} stimulus file(s) missing below {}: {}",
                missing.len(),
                cfg.stimulus_dir.display(),
                missing.join(", ")
            )));
        }
        std::fs::create_dir_all(&cfg.log_dir).map_err(|e| Error::io(&cfg.log_dir, e))?;
        let mut sessions = HashMap::new();
        for state in load_sessions(&cfg.log_dir)? {
            let id = state.id().to_string();
            let log = open_log(&log_path(&cfg.log_dir, &id))?;
            let audio = state.schedule.audio();
            sessions.insert(id, Arc::new(Mutex::new(Live { state, audio, log })));
        }
        Ok(Arc::new(Service {
            cfg,
            sessions: RwLock::new(sessions),
        }))
    }

    fn session(&self, id: &str) -> std::result::Result<Arc<Mutex<Live>>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session '{id}'")))
    }
}

pub fn router(svc: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/stats", get(session_stats))
        .route("/audio/{stimulus_id}", get(audio))
        .with_state(svc)
}

/// Error body: `{"error": {"category": ..., "message": ...}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    category: &'static str,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            category: "not_found",
            message,
        }
    }

    fn internal(e: Error) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            category: "internal",
            message: e.to_string(),
        }
    }
}

impl From<alod_core::Error> for ApiError {
    fn from(e: alod_core::Error) -> Self {
        let (status, category) = match e {
            alod_core::Error::Sequencing(_) => (StatusCode::CONFLICT, "sequencing"),
            alod_core::Error::Build(_) => (StatusCode::UNPROCESSABLE_ENTITY, "build"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
        };
        ApiError {
            status,
            category,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": { "category": self.category, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// `POST /sessions` body. Omitted conditions take the paradigm default;
/// an omitted id is generated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub session_id: Option<String>,
    pub participant: String,
    pub paradigm: Paradigm,
    pub scene: String,
    pub presentation: Presentation,
    #[serde(default)]
    pub conditions: Option<Vec<alod_core::experiment::Condition>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub phase: Option<Phase>,
    #[serde(default)]
    pub training: bool,
    /// Playbacks per plausibility trial; absent keeps the default of one,
    /// `0` means unlimited.
    #[serde(default)]
    pub plausibility_playbacks: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub paradigm: Paradigm,
    pub training: bool,
    pub total_trials: usize,
    pub completed_trials: usize,
    pub status: SessionStatus,
}

fn info(s: &SessionState) -> SessionInfo {
    SessionInfo {
        session_id: s.id().into(),
        paradigm: s.schedule.spec.paradigm,
        training: s.schedule.spec.training,
        total_trials: s.schedule.trials.len(),
        completed_trials: s.cursor(),
        status: s.status(),
    }
}

fn seed_from(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

async fn create_session(
    State(svc): State<Shared>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let id = req
        .session_id
        .clone()
        .unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
    if !valid_id(&id) {
        return Err(alod_core::Error::Validation {
            invariant: "session id of 1-64 letters, digits, '-' or '_'".into(),
        }
        .into());
    }
    let spec = SessionSpec {
        session_id: id.clone(),
        participant: req.participant,
        paradigm: req.paradigm,
        scene: req.scene,
        presentation: req.presentation,
        conditions: req
            .conditions
            .unwrap_or_else(|| default_conditions(req.paradigm, req.presentation)),
        seed: req.seed.unwrap_or_else(|| seed_from(&id)),
        phase: req.phase.unwrap_or(Phase::Test),
        training: req.training,
        plausibility_playbacks: match req.plausibility_playbacks {
            None => Some(1),
            Some(0) => None,
            Some(n) => Some(n),
        },
    };
    let schedule = build_session(&spec, &svc.cfg.stimulus)?;
    let mut table = svc.sessions.write().expect("session table lock");
    if table.contains_key(&id) {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            category: "conflict",
            message: format!("session '{id}' exists"),
        });
    }
    let dir = &svc.cfg.log_dir;
    let sched_path = schedule_path(dir, &id);
    let text = serde_json::to_vec_pretty(&schedule).expect("schedule serializes");
    std::fs::write(&sched_path, text).map_err(|e| ApiError::internal(Error::io(&sched_path, e)))?;
    let log = open_log(&log_path(dir, &id)).map_err(ApiError::internal)?;
    let state = SessionState::new(schedule);
    let out = info(&state);
    let audio = state.schedule.audio();
    table.insert(id, Arc::new(Mutex::new(Live { state, audio, log })));
    Ok((StatusCode::CREATED, Json(out)))
}

async fn session_status(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionInfo>> {
    let s = svc.session(&id)?;
    let live = s.lock().expect("session lock");
    Ok(Json(info(&live.state)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTrial {
    pub status: SessionStatus,
    pub trial: Option<TrialView>,
}

async fn next_trial(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<NextTrial>> {
    let s = svc.session(&id)?;
    let live = s.lock().expect("session lock");
    Ok(Json(NextTrial {
        status: live.state.status(),
        trial: live.state.next_view(),
    }))
}

/// `POST /sessions/{id}/responses` body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub trial: usize,
    pub payload: ResponsePayload,
    #[serde(default)]
    pub playback_count: u32,
    /// Client clock; the server clock is used when absent.
    #[serde(default)]
    pub timestamp_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub trial: usize,
    pub completed_trials: usize,
    pub status: SessionStatus,
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

async fn submit_response(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SubmitResponse>,
) -> ApiResult<Json<Accepted>> {
    let s = svc.session(&id)?;
    let mut live = s.lock().expect("session lock");
    let rec = ResponseRecord {
        session_id: id.clone(),
        trial: req.trial,
        payload: req.payload,
        timestamp_ms: req.timestamp_ms.unwrap_or_else(now_ms),
        playback_count: req.playback_count,
    };
    live.state.check(&rec)?;
    // persist first: the in-memory state only advances once the record is on disk
    let mut line = serde_json::to_vec(&rec).expect("record serializes");
    line.push(b'\n');
    let path = log_path(&svc.cfg.log_dir, &id);
    live.log
        .write_all(&line)
        .and_then(|_| live.log.flush())
        .map_err(|e| ApiError::internal(Error::io(&path, e)))?;
    live.state.record_response(rec)?;
    Ok(Json(Accepted {
        trial: req.trial,
        completed_trials: live.state.cursor(),
        status: live.state.status(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBody {
    pub status: SessionStatus,
    pub stats: SessionStats,
}

async fn session_stats(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<StatsBody>> {
    let s = svc.session(&id)?;
    let live = s.lock().expect("session lock");
    Ok(Json(StatsBody {
        status: live.state.status(),
        stats: compute_stats(std::slice::from_ref(&live.state)),
    }))
}

#[derive(Debug, Deserialize)]
pub struct AudioQuery {
    pub session: Option<String>,
}

/// `GET /audio/{stimulus_id}?session=<id>`. Ids resolve only within the
/// named session.
async fn audio(
    State(svc): State<Shared>,
    UrlPath(stimulus_id): UrlPath<String>,
    Query(q): Query<AudioQuery>,
) -> ApiResult<Response> {
    let unknown = || ApiError::not_found(format!("no stimulus '{stimulus_id}'"));
    let sid = q.session.ok_or_else(unknown)?;
    let key = {
        let s = svc.session(&sid).map_err(|_| unknown())?;
        let live = s.lock().expect("session lock");
        live.audio.get(&stimulus_id).cloned().ok_or_else(unknown)?
    };
    let path = svc.cfg.stimulus_dir.join(&key);
    let bytes = std::fs::read(&path).map_err(|e| ApiError::internal(Error::io(&path, e)))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

/// Bind and serve until the process is stopped.
pub async fn serve(svc: Shared, addr: std::net::SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Service(format!("cannot listen on {addr}: {e}")))?;
    axum::serve(listener, router(svc))
        .await
        .map_err(|e| Error::Service(format!("server stopped: {e}")))
}
