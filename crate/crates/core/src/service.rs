//! HTTP API over a repository: start a merge, walk its prompts, finalize.
//! Every JSON response carries `schema_version`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::detect::detect;
use crate::error::Error;
use crate::modification::{apply_history, Side};
use crate::repo::Repository;
use crate::resolve::{MergeSession, ResolveOptions, SavedSession, SessionState};
use crate::table::{RowId, TableSnapshot};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 10_000;

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    pub repo: PathBuf,
    /// Required as `Authorization: Bearer <token>` on every API call.
    pub token: Option<String>,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
    /// Directory of static files served outside `/api`.
    pub static_dir: Option<PathBuf>,
    pub options: ResolveOptions,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportSummary {
    pub auto_mergeable: bool,
    pub conflict_count: usize,
    pub pair_count: usize,
    pub sample_rows: Vec<RowId>,
}

/// What is written to disk for each session.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredSession {
    id: String,
    left: String,
    right: String,
    epoch: u64,
    created_at: u64,
    report: ReportSummary,
    saved: SavedSession,
}

struct Live {
    id: String,
    left: String,
    right: String,
    epoch: u64,
    created_at: u64,
    report: ReportSummary,
    d0: Arc<TableSnapshot>,
    session: MergeSession,
}

impl Live {
    fn stored(&self) -> StoredSession {
        StoredSession {
            id: self.id.clone(),
            left: self.left.clone(),
            right: self.right.clone(),
            epoch: self.epoch,
            created_at: self.created_at,
            report: self.report.clone(),
            saved: self.session.save(&self.d0.schema),
        }
    }

    fn state_json(&self) -> JsonValue {
        let s = &self.session;
        let mut out = json!({
            "schema_version": SCHEMA_VERSION,
            "session_id": self.id,
            "left": self.left,
            "right": self.right,
            "answered": s.engine.questions - usize::from(s.prompt().is_some()),
            "bound": s.h1.len() + s.h2.len(),
            "order_so_far": s.engine.order.len(),
            "remaining": [s.engine.n1 - s.engine.next1, s.engine.n2 - s.engine.next2],
        });
        match &s.state {
            SessionState::NeedsAnswer { prompt } => {
                out["done"] = json!(false);
                out["prompt"] = json!(prompt);
            }
            SessionState::Done { order } => {
                out["done"] = json!(true);
                out["order"] = json!(order.ids.iter().map(ToString::to_string).collect::<Vec<_>>());
            }
        }
        out
    }
}

type Slot = Arc<tokio::sync::Mutex<Live>>;

pub struct AppState {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Slot>>,
    /// Serializes session creation so the one-session-per-pair check holds.
    create: tokio::sync::Mutex<()>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> ApiError {
        ApiError { status, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Io(_) | Error::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Error::CapExceeded { .. } | Error::StateExplosion { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "status": self.status.as_u16(), "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = std::result::Result<Json<JsonValue>, ApiError>;

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> crate::error::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<AppState> {
        Arc::new(AppState { config, sessions: Mutex::new(HashMap::new()), create: tokio::sync::Mutex::new(()) })
    }

    fn open(&self) -> Result<Repository, ApiError> {
        Ok(Repository::open(&self.config.repo)?)
    }

    /// In memory, or restored from disk after a restart.
    async fn slot(&self, id: &str) -> Result<Slot, ApiError> {
        if let Some(s) = self.sessions.lock().unwrap().get(id) {
            return Ok(s.clone());
        }
        let root = self.config.repo.clone();
        let id_owned = id.to_string();
        let live = blocking(move || {
            let repo = Repository::open(&root)?;
            let st: StoredSession = repo.load_session(&id_owned)?;
            let d0 = Arc::new(repo.epoch(st.epoch)?);
            let session = MergeSession::restore(st.saved, &d0.schema)?;
            Ok(Live {
                id: st.id,
                left: st.left,
                right: st.right,
                epoch: st.epoch,
                created_at: st.created_at,
                report: st.report,
                d0,
                session,
            })
        })
        .await?;
        let slot = Arc::new(tokio::sync::Mutex::new(live));
        Ok(self.sessions.lock().unwrap().entry(id.to_string()).or_insert(slot).clone())
    }
}

#[derive(Deserialize)]
struct MergeRequest {
    branch_a: String,
    branch_b: String,
}

async fn start_merge(State(app): State<Arc<AppState>>, Json(req): Json<MergeRequest>) -> ApiResult {
    let _creating = app.create.lock().await;
    let repo = app.open()?;
    for b in [&req.branch_a, &req.branch_b] {
        if !repo.has_branch(b) {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown branch `{b}`")));
        }
    }
    let same_pair =
        |l: &str, r: &str| (l == req.branch_a && r == req.branch_b) || (l == req.branch_b && r == req.branch_a);
    for id in repo.session_ids()? {
        let busy = match app.slot(&id).await {
            Ok(slot) => {
                let live = slot.lock().await;
                same_pair(&live.left, &live.right)
            }
            Err(_) => false,
        };
        if busy {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("session {id} is already open for {} and {}", req.branch_a, req.branch_b),
            ));
        }
    }
    let options = app.config.options.clone();
    let (left, right) = (req.branch_a.clone(), req.branch_b.clone());
    let live = blocking(move || {
        let (d0, h1, h2) = repo.merge_inputs(&left, &right)?;
        let epoch = repo.branch_meta(&left)?.epoch;
        let report = detect(&d0, &h1, &h2)?;
        let summary = ReportSummary {
            auto_mergeable: report.auto_mergeable,
            conflict_count: report.conflict_set.len(),
            pair_count: report.pairs.len(),
            sample_rows: report.conflict_set.iter().take(20).cloned().collect(),
        };
        let options = ResolveOptions { table: repo.table().to_string(), ..options };
        let session = MergeSession::start(&d0, &h1, &h2, options)?;
        let live = Live {
            id: uuid::Uuid::new_v4().simple().to_string(),
            left,
            right,
            epoch,
            created_at: now(),
            report: summary,
            d0: Arc::new(d0),
            session,
        };
        repo.save_session(&live.id, &live.stored())?;
        Ok(live)
    })
    .await?;
    let mut body = live.state_json();
    body["report"] = json!(live.report);
    let id = live.id.clone();
    app.sessions.lock().unwrap().insert(id, Arc::new(tokio::sync::Mutex::new(live)));
    Ok(Json(body))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = app.slot(&id).await?;
    let live = slot.lock().await;
    let mut body = live.state_json();
    body["report"] = json!(live.report);
    body["created_at"] = json!(live.created_at);
    Ok(Json(body))
}

async fn get_prompt(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = app.slot(&id).await?;
    let live = slot.lock().await;
    Ok(Json(live.state_json()))
}

#[derive(Deserialize)]
struct AnswerRequest {
    precedes: Side,
}

async fn answer(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(req): Json<AnswerRequest>) -> ApiResult {
    let slot = app.slot(&id).await?;
    let mut live = slot
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "another request is updating this session"))?;
    if live.session.is_done() {
        return Err(ApiError::new(StatusCode::CONFLICT, "the session is not awaiting an answer"));
    }
    let root = app.config.repo.clone();
    let live = tokio::task::spawn_blocking(move || -> crate::error::Result<_> {
        let d0 = live.d0.clone();
        live.session.answer(&d0, req.precedes)?;
        Repository::open(&root)?.save_session(&live.id, &live.stored())?;
        Ok(live)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(live.state_json()))
}

#[derive(Deserialize, Default)]
struct FinalizeRequest {
    target: Option<String>,
}

async fn finalize(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<FinalizeRequest>>,
) -> ApiResult {
    let slot = app.slot(&id).await?;
    let live = slot
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "another request is updating this session"))?;
    let Some(order) = live.session.result().cloned() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "the session has unanswered prompts"));
    };
    let target = body.and_then(|b| b.0.target).unwrap_or_else(|| "main".to_string());
    let root = app.config.repo.clone();
    let record = tokio::task::spawn_blocking(move || -> crate::error::Result<_> {
        let mut repo = Repository::open(&root)?;
        let (_, h1, h2) = repo.merge_inputs(&live.left, &live.right)?;
        if h1 != live.session.h1 || h2 != live.session.h2 {
            return Err(Error::Conflict("the branches changed after this session started".into()));
        }
        let rec = repo.merge_finalize(&live.left, &live.right, &order, &target)?;
        repo.delete_session(&live.id)?;
        Ok(rec)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    app.sessions.lock().unwrap().remove(&id);
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "merged_rows": record.merged_rows,
        "epoch": record.epoch,
        "merge": record,
    })))
}

async fn abandon(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = app.slot(&id).await?;
    let _live = slot
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "another request is updating this session"))?;
    app.open()?.delete_session(&id)?;
    app.sessions.lock().unwrap().remove(&id);
    Ok(Json(json!({ "schema_version": SCHEMA_VERSION, "deleted": id })))
}

async fn branches(State(app): State<Arc<AppState>>) -> ApiResult {
    let repo = app.open()?;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "table": repo.table(),
        "columns": repo.schema(),
        "epoch": repo.meta.epoch,
        "branches": repo.branches()?,
    })))
}

#[derive(Deserialize)]
struct Page {
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn table(State(app): State<Arc<AppState>>, Path(branch): Path<String>, Query(page): Query<Page>) -> ApiResult {
    let repo = app.open()?;
    let limit = page.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let offset = page.offset.unwrap_or(0);
    let snap = blocking(move || {
        if branch == "base" {
            return repo.epoch(repo.meta.epoch);
        }
        let h = repo.history(&branch)?;
        apply_history(&repo.branch_base(&branch)?, &h.mods)
    })
    .await?;
    let rows: Vec<JsonValue> =
        snap.visible().skip(offset).take(limit).map(|t| json!({ "rid": t.rid, "values": t.values })).collect();
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "columns": *snap.schema,
        "total": snap.len_visible(),
        "offset": offset,
        "limit": limit,
        "rows": rows,
    })))
}

async fn health() -> Json<JsonValue> {
    Json(json!({ "schema_version": SCHEMA_VERSION, "ok": true }))
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.config.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok && req.method() != Method::OPTIONS {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(app: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/merge", post(start_merge))
        .route("/merge/:id", get(get_session).delete(abandon))
        .route("/merge/:id/prompt", get(get_prompt))
        .route("/merge/:id/answer", post(answer))
        .route("/merge/:id/finalize", post(finalize))
        .route("/branches", get(branches))
        .route("/table/:branch", get(table))
        .fallback(api_not_found)
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token));
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]);
    let cors = match app.config.cors_origin.as_deref().map(HeaderValue::from_str) {
        Some(Ok(origin)) => cors.allow_origin(AllowOrigin::exact(origin)),
        _ => cors.allow_origin(Any),
    };
    let mut router = Router::new().nest("/api", api);
    if let Some(dir) = &app.config.static_dir {
        router = router.fallback_service(ServeDir::new(dir));
    }
    router.layer(cors).with_state(app)
}

/// Serve until interrupted.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> crate::error::Result<()> {
    Repository::open(&config.repo)?;
    let app = AppState::new(config);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{self, *};
    use axum::body::Body;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    fn demo_repo(dir: &std::path::Path) {
        let mut r = Repository::init(dir, fixture::CSV.as_bytes(), TABLE).unwrap();
        for t in [A1, A2] {
            r.commit("alvarez", t).unwrap();
        }
        for t in [B1, B2, B3] {
            r.commit("bano", t).unwrap();
        }
    }

    async fn call(app: &Router, method: &str, uri: &str, body: Option<JsonValue>) -> (StatusCode, JsonValue) {
        let mut req = axum::http::Request::builder().method(method).uri(uri);
        let body = match body {
            Some(b) => {
                req = req.header(header::CONTENT_TYPE, "application/json");
                Body::from(b.to_string())
            }
            None => Body::empty(),
        };
        let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(JsonValue::Null))
    }

    fn config(dir: &std::path::Path) -> ServiceConfig {
        ServiceConfig { repo: dir.to_path_buf(), ..Default::default() }
    }

    #[tokio::test]
    async fn unknown_branch_and_session_are_404() {
        let dir = tempfile::tempdir().unwrap();
        demo_repo(dir.path());
        let app = router(AppState::new(config(dir.path())));
        let (st, body) =
            call(&app, "POST", "/api/merge", Some(json!({"branch_a": "alvarez", "branch_b": "nope"}))).await;
        assert_eq!(st, StatusCode::NOT_FOUND);
        assert_eq!(body["schema_version"], 1);
        let (st, _) = call(&app, "GET", "/api/merge/abc/prompt", None).await;
        assert_eq!(st, StatusCode::NOT_FOUND);
        let (st, _) = call(&app, "GET", "/api/merge/..%2Fx/prompt", None).await;
        assert_eq!(st, StatusCode::NOT_FOUND);
    }

    #[tokio::test]
    async fn branches_and_paged_table() {
        let dir = tempfile::tempdir().unwrap();
        demo_repo(dir.path());
        let app = router(AppState::new(config(dir.path())));
        let (st, body) = call(&app, "GET", "/api/branches", None).await;
        assert_eq!(st, StatusCode::OK);
        assert_eq!(body["branches"].as_array().unwrap().len(), 2);
        let (_, body) = call(&app, "GET", "/api/table/bano?limit=1&offset=1", None).await;
        assert_eq!(body["total"], 2);
        assert_eq!(body["rows"][0]["rid"], SEATTLE);
        let (st, _) = call(&app, "GET", "/api/table/zzz", None).await;
        assert_eq!(st, StatusCode::NOT_FOUND);
    }

    #[tokio::test]
    async fn bearer_token_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        demo_repo(dir.path());
        let app = router(AppState::new(ServiceConfig { token: Some("s3cret".into()), ..config(dir.path()) }));
        let (st, _) = call(&app, "GET", "/api/branches", None).await;
        assert_eq!(st, StatusCode::UNAUTHORIZED);
        let req = axum::http::Request::get("/api/branches")
            .header(header::AUTHORIZATION, "Bearer s3cret")
            .body(Body::empty())
            .unwrap();
        assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
    }
}
