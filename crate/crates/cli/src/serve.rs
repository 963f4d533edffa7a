//! HTTP API for the annotation front end.
//!
//! `GET /api/session` opens a 25-task session (or resumes one when
//! `?annotator_id=` names a known annotator), `GET /api/image/{id}` serves
//! image bytes, `POST /api/response` records one answer and `GET
//! /api/report` scores the qualified responses so far. Answers are
//! appended to the response log under a single lock, so each (annotator,
//! task) pair is recorded once.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use memegraph::eval::{
    append_response, build_session, qualify_log, read_responses, score, EvalReport, ImpostorTask, Response, POSITIONS,
    SESSION_CONTROLS, SESSION_TASKS,
};
use memegraph::spectral::ClusterAssignment;

use crate::stages::append_line;

pub struct ServeInputs {
    /// Regular tasks and controls together.
    pub tasks: Vec<ImpostorTask>,
    pub assignment: ClusterAssignment,
    /// Image path per image id.
    pub images: Vec<PathBuf>,
    pub responses_path: PathBuf,
    pub sessions_path: PathBuf,
    pub seed: u64,
}

pub struct ServeState {
    regular: Vec<ImpostorTask>,
    controls: Vec<ImpostorTask>,
    by_id: HashMap<u32, ImpostorTask>,
    assignment: ClusterAssignment,
    images: Vec<PathBuf>,
    responses_path: PathBuf,
    sessions_path: PathBuf,
    seed: u64,
    /// Annotator → task ids in display order.
    sessions: HashMap<String, Vec<u32>>,
    session_count: u64,
    answered: HashSet<(String, u32)>,
    responses: Vec<Response>,
}

pub type AppState = Arc<Mutex<ServeState>>;

#[derive(Serialize, Deserialize)]
struct SessionRecord {
    annotator_id: String,
    task_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSlot {
    pub position: u8,
    pub image_id: u32,
    pub url: String,
}

/// What the front end sees of a task: no cluster, no answer, no control
/// flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: u32,
    pub images: Vec<ImageSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub annotator_id: String,
    pub tasks: Vec<TaskView>,
    /// Tasks already answered, for resumed sessions.
    pub answered: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseBody {
    pub annotator_id: String,
    pub task_id: u32,
    pub chosen_position: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportView {
    pub report: EvalReport,
    pub qualified: Vec<String>,
    pub discarded: Vec<String>,
}

#[derive(Deserialize)]
struct SessionQuery {
    annotator_id: Option<String>,
}

fn task_view(t: &ImpostorTask) -> TaskView {
    TaskView {
        task_id: t.task_id,
        images: t
            .images()
            .iter()
            .enumerate()
            .map(|(i, &id)| ImageSlot {
                position: i as u8 + 1,
                image_id: id,
                url: format!("/api/image/{id}"),
            })
            .collect(),
    }
}

fn load_sessions(path: &Path) -> Result<Vec<SessionRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("bad session record in {}", path.display())))
        .collect()
}

pub fn new_state(inputs: ServeInputs) -> Result<AppState> {
    let (controls, regular): (Vec<_>, Vec<_>) = inputs.tasks.iter().copied().partition(|t| t.is_control);
    anyhow::ensure!(
        regular.len() >= SESSION_TASKS - SESSION_CONTROLS,
        "need at least {} regular tasks to serve sessions, have {}",
        SESSION_TASKS - SESSION_CONTROLS,
        regular.len()
    );
    anyhow::ensure!(
        controls.len() >= SESSION_CONTROLS,
        "need at least {SESSION_CONTROLS} control tasks, have {}",
        controls.len()
    );
    let by_id = inputs.tasks.iter().map(|t| (t.task_id, *t)).collect();
    let records = load_sessions(&inputs.sessions_path)?;
    let session_count = records.len() as u64;
    let sessions = records.into_iter().map(|r| (r.annotator_id, r.task_ids)).collect();
    let responses = if inputs.responses_path.exists() {
        read_responses(&inputs.responses_path)?
    } else {
        Vec::new()
    };
    let answered = responses.iter().map(|r| (r.annotator_id.clone(), r.task_id)).collect();
    Ok(Arc::new(Mutex::new(ServeState {
        regular,
        controls,
        by_id,
        assignment: inputs.assignment,
        images: inputs.images,
        responses_path: inputs.responses_path,
        sessions_path: inputs.sessions_path,
        seed: inputs.seed,
        sessions,
        session_count,
        answered,
        responses,
    })))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session", get(get_session))
        .route("/api/image/{image_id}", get(get_image))
        .route("/api/response", post(post_response))
        .route("/api/report", get(get_report))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> HttpResponse {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn session_view(st: &ServeState, annotator_id: &str) -> SessionView {
    let ids = &st.sessions[annotator_id];
    SessionView {
        annotator_id: annotator_id.to_string(),
        tasks: ids.iter().map(|id| task_view(&st.by_id[id])).collect(),
        answered: ids
            .iter()
            .copied()
            .filter(|&id| st.answered.contains(&(annotator_id.to_string(), id)))
            .collect(),
    }
}

async fn get_session(State(state): State<AppState>, Query(q): Query<SessionQuery>) -> HttpResponse {
    let mut st = state.lock().expect("server state poisoned");
    if let Some(id) = q.annotator_id.as_deref() {
        if st.sessions.contains_key(id) {
            return Json(session_view(&st, id)).into_response();
        }
        return error(StatusCode::NOT_FOUND, format!("unknown annotator {id:?}"));
    }
    let n = st.session_count;
    let annotator_id = format!("annotator-{n:06}");
    let mut rng = ChaCha8Rng::seed_from_u64(st.seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let tasks = build_session(&st.regular, &st.controls, &mut rng);
    let record = SessionRecord {
        annotator_id: annotator_id.clone(),
        task_ids: tasks.iter().map(|t| t.task_id).collect(),
    };
    let line = serde_json::to_string(&record).expect("plain record");
    if let Err(e) = append_line(&st.sessions_path, &line) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("could not persist session: {e:#}"));
    }
    st.session_count += 1;
    st.sessions.insert(annotator_id.clone(), record.task_ids);
    Json(session_view(&st, &annotator_id)).into_response()
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn get_image(State(state): State<AppState>, UrlPath(image_id): UrlPath<u32>) -> HttpResponse {
    let path = {
        let st = state.lock().expect("server state poisoned");
        match st.images.get(image_id as usize) {
            Some(p) => p.clone(),
            None => return error(StatusCode::NOT_FOUND, format!("no image {image_id}")),
        }
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, format!("image {image_id} unreadable: {e}")),
    }
}

async fn post_response(State(state): State<AppState>, Json(body): Json<ResponseBody>) -> HttpResponse {
    let mut st = state.lock().expect("server state poisoned");
    let Some(tasks) = st.sessions.get(&body.annotator_id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown annotator {:?}", body.annotator_id));
    };
    if !tasks.contains(&body.task_id) {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("task {} is not in this annotator's session", body.task_id),
        );
    }
    if !(1..=POSITIONS).contains(&body.chosen_position) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "chosen_position must lie in 1..=5");
    }
    let key = (body.annotator_id.clone(), body.task_id);
    if st.answered.contains(&key) {
        return error(StatusCode::CONFLICT, "task already answered");
    }
    let r = Response {
        annotator_id: body.annotator_id,
        task_id: body.task_id,
        chosen_position: body.chosen_position,
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    if let Err(e) = append_response(&st.responses_path, &r) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("could not record response: {e}"));
    }
    st.answered.insert(key);
    st.responses.push(r);
    Json(serde_json::json!({ "status": "accepted" })).into_response()
}

/// Scores a response log: qualification, then per-cluster accuracy.
pub fn report_from_log(tasks: &[ImpostorTask], responses: &[Response], assignment: &ClusterAssignment) -> ReportView {
    let q = qualify_log(tasks, responses);
    ReportView {
        report: score(tasks, &q.responses, assignment),
        qualified: q.qualified,
        discarded: q.discarded,
    }
}

async fn get_report(State(state): State<AppState>) -> HttpResponse {
    let st = state.lock().expect("server state poisoned");
    let tasks: Vec<ImpostorTask> = st.by_id.values().copied().collect();
    Json(report_from_log(&tasks, &st.responses, &st.assignment)).into_response()
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("eval-serve: listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
