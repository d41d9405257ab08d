//! HTTP API over an [`Archive`]: uploads, segment pipeline runs, the review
//! queue, collection tasks with their ledger, and dataset reports/exports.
//!
//! Requests authenticate with `Authorization: Bearer <token>`; the token maps
//! to a role (harvester < expert < admin). An optional `X-Actor` header names
//! the person for audit fields, defaulting to the role name. Errors come back
//! as `{"code": ..., "message": ...}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use catchrelease_core::archive::{Archive, BatchRecord};
use catchrelease_core::config::Role;
use catchrelease_core::error::{Error, ErrorCode};
use catchrelease_core::media::CaptureMeta;
use catchrelease_core::workflow::{Decision, PaymentRequest, ResultKind};

/// Uploads are held in memory; field videos are a few hundred MB at most.
pub const MAX_BODY_BYTES: usize = 2 << 30;

pub struct AppState {
    pub archive: Arc<Archive>,
    pub tokens: BTreeMap<String, Role>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }
}

/// HTTP status for an error code name.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UnknownTask" | "UnknownItem" | "UnknownVideo" | "UnknownSegment" | "UnknownBatch" | "UnknownVersion"
        | "ObjectMissing" => StatusCode::NOT_FOUND,
        "AlreadyResolved" | "IllegalTransition" | "GuardFailed" | "WrongState" | "StaleEventId"
        | "ExportTargetNotEmpty" => StatusCode::CONFLICT,
        "StorageFull" => StatusCode::INSUFFICIENT_STORAGE,
        "TranscriberUnavailable" => StatusCode::SERVICE_UNAVAILABLE,
        "LogCorrupt" | "ObjectCorrupt" | "SidecarCorrupt" | "Io" | "DecoderConfig" | "ConfigRead" | "ConfigParse"
        | "ConfigMissingPath" | "ConfigInvalid" | "Internal" => StatusCode::INTERNAL_SERVER_ERROR,
        "BadRequest" => StatusCode::BAD_REQUEST,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = e.code();
        Self::new(status_for(code), code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Caller {
    actor: String,
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Harvester => "harvester",
        Role::Expert => "expert",
        Role::Admin => "admin",
    }
}

fn authorize(state: &AppState, headers: &HeaderMap, min: Role) -> ApiResult<Caller> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing bearer token"))?;
    let role = *state
        .tokens
        .get(token)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "unknown token"))?;
    if role < min {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "Forbidden",
            format!("{} role required", role_name(min)),
        ));
    }
    let actor = headers
        .get("x-actor")
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map_or_else(|| role_name(role).to_string(), str::to_string);
    Ok(Caller { actor })
}

/// Runs archive work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, Error> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())),
    }
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

/// File bytes plus text fields, from either a multipart form or a raw body
/// with fields in the query string.
struct Upload {
    file: Option<Bytes>,
    fields: BTreeMap<String, String>,
}

impl Upload {
    async fn read(req: Request, query: BTreeMap<String, String>) -> ApiResult<Self> {
        let multipart = req
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("multipart/form-data"));
        if !multipart {
            let bytes = Bytes::from_request(req, &())
                .await
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
            return Ok(Self {
                file: Some(bytes).filter(|b| !b.is_empty()),
                fields: query,
            });
        }
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut out = Self { file: None, fields: query };
        while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
            let name = field.name().unwrap_or_default().to_string();
            let is_file = name == "file" || field.file_name().is_some();
            let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
            if is_file {
                out.file = Some(data);
            } else {
                out.fields.insert(name, String::from_utf8_lossy(&data).into_owned());
            }
        }
        Ok(out)
    }

    fn file(&self) -> ApiResult<Bytes> {
        self.file.clone().ok_or_else(|| ApiError::bad_request("no file in request"))
    }

    fn field(&self, name: &str) -> ApiResult<&str> {
        self.fields
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| ApiError::bad_request(format!("missing field {name}")))
    }
}

fn capture_from(up: &Upload) -> ApiResult<CaptureMeta> {
    if let Some(raw) = up.fields.get("capture") {
        return parse_json(raw.as_bytes());
    }
    let mut obj = serde_json::Map::new();
    for key in ["harvester_id", "site", "capture_date", "season", "device_note"] {
        if let Some(v) = up.fields.get(key) {
            obj.insert(key.into(), serde_json::Value::String(v.clone()));
        }
    }
    serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| ApiError::bad_request(format!("capture metadata: {e}")))
}

type AppStateRef = State<Arc<AppState>>;

async fn upload_video(
    State(st): AppStateRef,
    Query(q): Query<BTreeMap<String, String>>,
    req: Request,
) -> ApiResult<impl IntoResponse> {
    authorize(&st, req.headers(), Role::Harvester)?;
    let up = Upload::read(req, q).await?;
    let capture = capture_from(&up)?;
    let bytes = up.file()?;
    let a = st.archive.clone();
    let video = blocking(move || a.ingest(&bytes, capture)).await?;
    Ok((StatusCode::CREATED, Json(video)))
}

async fn get_video(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || a.video(&id)).await?))
}

async fn video_content(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Response> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    let bytes = blocking(move || {
        let v = a.video(&id)?;
        Ok(a.store().get(&v.video_id)?)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "video/mp4")], Body::from(bytes)).into_response())
}

async fn frame_png(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Response> {
    authorize(&st, &headers, Role::Harvester)?;
    let frame_id = id
        .parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "ObjectMissing", format!("no frame {id}")))?;
    let a = st.archive.clone();
    let bytes = blocking(move || Ok(a.store().get(&frame_id)?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response())
}

#[derive(Debug, Deserialize)]
struct SegmentBody {
    start_min: u32,
    start_s: u32,
    end_min: u32,
    end_s: u32,
}

async fn create_segment(
    State(st): AppStateRef,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let b: SegmentBody = parse_json(&body)?;
    let a = st.archive.clone();
    let seg = blocking(move || a.create_segment(&id, b.start_min, b.start_s, b.end_min, b.end_s)).await?;
    Ok((StatusCode::CREATED, Json(seg)))
}

async fn get_segment(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || a.segment(&id)).await?))
}

async fn voiceover(
    State(st): AppStateRef,
    Path(id): Path<String>,
    Query(q): Query<BTreeMap<String, String>>,
    req: Request,
) -> ApiResult<impl IntoResponse> {
    let who = authorize(&st, req.headers(), Role::Expert)?;
    let wav = Upload::read(req, q).await?.file()?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || a.attach_voiceover(&id, &wav, &who.actor)).await?))
}

#[derive(Debug, Deserialize)]
struct PipelineBody {
    fps: f64,
    #[serde(default)]
    task_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub batch_id: String,
    pub segment_id: String,
    pub frames: usize,
    pub label_summary: BTreeMap<String, usize>,
    pub verdicts: BTreeMap<String, usize>,
    pub review_items: Vec<String>,
    pub dataset_version: u64,
}

impl PipelineResult {
    pub fn from_record(rec: &BatchRecord) -> Self {
        Self {
            batch_id: rec.batch_id.clone(),
            segment_id: rec.segment.segment_id.clone(),
            frames: rec.frames.len(),
            label_summary: rec.label_summary(),
            verdicts: rec.verdict_counts().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            review_items: rec.review_items.clone(),
            dataset_version: rec.dataset_version,
        }
    }
}

async fn pipeline(
    State(st): AppStateRef,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let who = authorize(&st, &headers, Role::Expert)?;
    let b: PipelineBody = parse_json(&body)?;
    let a = st.archive.clone();
    let rec = blocking(move || a.run_pipeline(&id, b.fps, b.task_id.as_deref(), &who.actor)).await?;
    Ok(Json(PipelineResult::from_record(&rec)))
}

async fn get_batch(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || a.batch(&id)).await?))
}

/// Current dataset entries of a batch, reflecting expert decisions.
async fn batch_entries(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || {
        a.batch(&id)?;
        a.dataset().refresh()?;
        let m = a.dataset().manifest(None)?;
        Ok(m.batch_members(&id).cloned().collect::<Vec<_>>())
    })
    .await?))
}

async fn taxa(State(st): AppStateRef, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    Ok(Json(st.archive.registry().records().to_vec()))
}

#[derive(Debug, Deserialize)]
struct CreateTaskBody {
    target_taxon: String,
}

async fn create_task(State(st): AppStateRef, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    let who = authorize(&st, &headers, Role::Admin)?;
    let b: CreateTaskBody = parse_json(&body)?;
    let a = st.archive.clone();
    let t = blocking(move || Ok(a.workflow().create_task(&b.target_taxon, &who.actor)?)).await?;
    Ok((StatusCode::CREATED, Json(t)))
}

async fn list_tasks(State(st): AppStateRef, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || {
        a.workflow().refresh()?;
        Ok(a.workflow().tasks())
    })
    .await?))
}

async fn get_task(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || {
        a.workflow().refresh()?;
        Ok(a.workflow().task(&id)?)
    })
    .await?))
}

#[derive(Debug, Deserialize)]
struct AdvanceBody {
    to_state: u8,
    #[serde(default)]
    note: String,
}

async fn advance(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let who = authorize(&st, &headers, Role::Expert)?;
    let b: AdvanceBody = parse_json(&body)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || a.advance(&id, b.to_state, &who.actor, &b.note)).await?))
}

#[derive(Debug, Deserialize)]
struct LinkVideoBody {
    video_id: String,
}

async fn link_video(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let who = authorize(&st, &headers, Role::Harvester)?;
    let b: LinkVideoBody = parse_json(&body)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || {
        let v = a.video(&b.video_id)?;
        Ok(a.workflow().link_video(&id, &v.video_id, &who.actor)?)
    })
    .await?))
}

/// Decimals arrive as strings or JSON numbers; numbers are taken by their
/// literal text, never through a float.
fn decimal_field(v: &serde_json::Value, name: &str) -> ApiResult<rust_decimal::Decimal> {
    let text = match v.get(name) {
        Some(serde_json::Value::String(s)) => s.trim().to_string(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => return Err(ApiError::bad_request(format!("{name} must be a decimal string or number"))),
    };
    text.parse::<rust_decimal::Decimal>()
        .or_else(|_| rust_decimal::Decimal::from_scientific(&text))
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "BadAmount", format!("{name} {text:?}: {e}")))
}

fn text_field(v: &serde_json::Value, name: &str) -> ApiResult<String> {
    v.get(name)
        .and_then(|x| x.as_str())
        .map(str::to_string)
        .ok_or_else(|| ApiError::bad_request(format!("missing string field {name}")))
}

async fn pay(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let who = authorize(&st, &headers, Role::Admin)?;
    let v: serde_json::Value = parse_json(&body)?;
    let req = PaymentRequest {
        harvester_id: text_field(&v, "harvester_id")?,
        amount_usd: decimal_field(&v, "amount_usd")?,
        fx_rate: decimal_field(&v, "fx_rate")?,
        confirmation_ref: text_field(&v, "confirmation_ref")?,
    };
    let a = st.archive.clone();
    let entry = blocking(move || Ok(a.workflow().record_payment(&id, &req, &who.actor)?)).await?;
    Ok((StatusCode::CREATED, Json(entry)))
}

async fn payments(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || {
        a.workflow().task(&id)?;
        Ok(a.workflow().ledger(Some(&id)))
    })
    .await?))
}

async fn results(
    State(st): AppStateRef,
    Path(id): Path<String>,
    Query(q): Query<BTreeMap<String, String>>,
    req: Request,
) -> ApiResult<impl IntoResponse> {
    let who = authorize(&st, req.headers(), Role::Admin)?;
    let up = Upload::read(req, q).await?;
    let kind: ResultKind = serde_json::from_value(serde_json::Value::String(up.field("kind")?.to_string()))
        .map_err(|_| ApiError::bad_request("kind must be training_report or evaluation_report"))?;
    let doc = up.file()?;
    let a = st.archive.clone();
    let receipt = blocking(move || a.attach_result(&id, kind, &doc, &who.actor)).await?;
    Ok((StatusCode::CREATED, Json(receipt)))
}

#[derive(Debug, Deserialize)]
struct ReviewQuery {
    #[serde(default)]
    state: Option<String>,
}

async fn list_review(State(st): AppStateRef, headers: HeaderMap, Query(q): Query<ReviewQuery>) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let unresolved = match q.state.as_deref() {
        None | Some("all") => false,
        Some("unresolved") => true,
        Some(other) => return Err(ApiError::bad_request(format!("state must be unresolved or all, not {other}"))),
    };
    let a = st.archive.clone();
    Ok(Json(blocking(move || {
        a.workflow().refresh()?;
        Ok(a.workflow().reviews(unresolved))
    })
    .await?))
}

async fn get_review(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Harvester)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || {
        a.workflow().refresh()?;
        Ok(a.workflow().review(&id)?)
    })
    .await?))
}

async fn resolve(State(st): AppStateRef, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let who = authorize(&st, &headers, Role::Expert)?;
    let d: Decision = parse_json(&body)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || a.resolve_review(&id, d, &who.actor)).await?))
}

fn version_param(v: &str) -> ApiResult<Option<u64>> {
    match v {
        "latest" | "current" => Ok(None),
        n => n
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("version must be a number or latest, not {n}"))),
    }
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn report(
    State(st): AppStateRef,
    headers: HeaderMap,
    Path(v): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    authorize(&st, &headers, Role::Harvester)?;
    let version = version_param(&v)?;
    let a = st.archive.clone();
    let rep = blocking(move || {
        a.dataset().refresh()?;
        Ok(a.dataset()
            .balance_report(version, a.registry(), a.settings().qc.min_class_count)?)
    })
    .await?;
    Ok(match q.format.as_deref() {
        Some("csv") => ([(header::CONTENT_TYPE, "text/csv")], rep.to_csv()).into_response(),
        _ => Json(rep).into_response(),
    })
}

async fn manifest(State(st): AppStateRef, headers: HeaderMap, Path(v): Path<String>) -> ApiResult<Response> {
    authorize(&st, &headers, Role::Harvester)?;
    let version = version_param(&v)?;
    let a = st.archive.clone();
    let bytes = blocking(move || {
        a.dataset().refresh()?;
        Ok(a.dataset().manifest(version)?.to_canonical_json())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportBody {
    root: std::path::PathBuf,
}

async fn export(State(st): AppStateRef, headers: HeaderMap, Path(v): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    authorize(&st, &headers, Role::Admin)?;
    let version = version_param(&v)?;
    let b: ExportBody = parse_json(&body)?;
    let a = st.archive.clone();
    Ok(Json(blocking(move || {
        a.dataset().refresh()?;
        Ok(a.dataset().export(version, &b.root, a.store(), a.registry())?)
    })
    .await?))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/taxa", get(taxa))
        .route("/videos", post(upload_video))
        .route("/videos/{id}", get(get_video))
        .route("/videos/{id}/content", get(video_content))
        .route("/videos/{id}/segments", post(create_segment))
        .route("/segments/{id}", get(get_segment))
        .route("/segments/{id}/voiceover", post(voiceover))
        .route("/segments/{id}/pipeline", post(pipeline))
        .route("/batches/{id}", get(get_batch))
        .route("/batches/{id}/entries", get(batch_entries))
        .route("/frames/{id}", get(frame_png))
        .route("/tasks", post(create_task).get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/advance", post(advance))
        .route("/tasks/{id}/videos", post(link_video))
        .route("/tasks/{id}/payments", post(pay).get(payments))
        .route("/tasks/{id}/results", post(results))
        .route("/review", get(list_review))
        .route("/review/{id}", get(get_review))
        .route("/review/{id}/resolve", post(resolve))
        .route("/datasets/{version}/report", get(report))
        .route("/datasets/{version}/manifest", get(manifest))
        .route("/datasets/{version}/export", post(export))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NoRoute", "no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, bind: &str) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(bind).await?, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
