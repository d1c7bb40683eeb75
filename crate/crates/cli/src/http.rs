//! JSON/PNG HTTP front end over a [`SessionManager`].
//!
//! | method | path | body / query | reply |
//! |---|---|---|---|
//! | POST | `/scenes` | `{"manifest": path}` or `{"bundle": Bundle}` | 201 `SessionSummary` |
//! | GET | `/scenes` | | `[SessionSummary]` |
//! | GET | `/scenes/{id}` | | `SessionSummary` |
//! | DELETE | `/scenes/{id}` | | 204 |
//! | GET | `/scenes/{id}/render` | | PNG |
//! | GET | `/scenes/{id}/planes/{k}/{color,alpha}` | | PNG |
//! | POST | `/scenes/{id}/ops` | `OpRequest` | `OpSummary` |
//! | POST | `/scenes/{id}/undo` | `?to=n` | `SessionSummary` |
//! | GET | `/scenes/{id}/export` | `?dir=path` optional | `Bundle` or `{dir, manifest}` |
//!
//! Errors reply `{"error": kind, "message": text, "field": name?}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mpstack::io::{SceneManifest, MANIFEST_FILE};
use mpstack::service::{OpRequest, OpSummary, SessionManager, SessionSummary};
use mpstack::{Error, PlaneId};

pub struct AppState {
    pub manager: SessionManager,
    /// Scratch space for uploaded bundles and inline exports.
    pub work_dir: PathBuf,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(manager: SessionManager, work_dir: impl Into<PathBuf>) -> Self {
        AppState {
            manager,
            work_dir: work_dir.into(),
            counter: AtomicU64::new(0),
        }
    }

    fn scratch(&self, prefix: &str) -> PathBuf {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        self.work_dir.join(format!("{prefix}-{}-{n}", std::process::id()))
    }
}

/// A scene shipped inline: the manifest plus base64 file contents keyed by
/// path relative to the manifest.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Bundle {
    pub manifest: serde_json::Value,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub bundle: Option<Bundle>,
}

#[derive(Debug, Serialize)]
pub struct ExportedDir {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
}

#[derive(Debug)]
pub enum ApiError {
    Core(Error),
    BadRequest(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

pub fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::UnknownSession(_) | Error::UnknownPlane(_) => StatusCode::NOT_FOUND,
        Error::Busy(_) => StatusCode::CONFLICT,
        Error::SessionLimit(_) | Error::InpaintUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        Error::Load { .. } | Error::Json(_) => StatusCode::BAD_REQUEST,
        Error::Io { .. } | Error::Png(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Core(e) => {
                let field = match &e {
                    Error::Load { field, .. } => Some(field.clone()),
                    _ => None,
                };
                let body = ErrorBody {
                    error: e.kind(),
                    message: e.to_string(),
                    field,
                };
                (status_of(&e), body)
            }
            ApiError::BadRequest(message) => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    error: "bad_request",
                    message,
                    field: None,
                },
            ),
            ApiError::Internal(message) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    error: "internal",
                    message,
                    field: None,
                },
            ),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a blocking manager call off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("request body: {e}")))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

/// Accepts only plain relative paths that stay inside the bundle.
fn bundle_path(root: &Path, name: &str) -> ApiResult<PathBuf> {
    let rel = Path::new(name);
    let plain = !name.is_empty() && rel.components().all(|c| matches!(c, Component::Normal(_)));
    if !plain {
        return Err(ApiError::BadRequest(format!(
            "bundle file name {name:?} must be a relative path"
        )));
    }
    Ok(root.join(rel))
}

fn write_file(path: &Path, bytes: &[u8]) -> ApiResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn unpack_bundle(root: &Path, bundle: &Bundle) -> ApiResult<()> {
    for (name, data) in &bundle.files {
        let bytes = BASE64
            .decode(data)
            .map_err(|e| ApiError::BadRequest(format!("bundle file {name:?}: {e}")))?;
        write_file(&bundle_path(root, name)?, &bytes)?;
    }
    let manifest = serde_json::to_vec_pretty(&bundle.manifest).map_err(Error::from)?;
    write_file(&root.join(MANIFEST_FILE), &manifest)
}

fn pack_dir(root: &Path, dir: &Path, files: &mut BTreeMap<String, String>) -> ApiResult<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            pack_dir(root, &path, files)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("walk stays under root");
        if rel == Path::new(MANIFEST_FILE) {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let name = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        files.insert(name, BASE64.encode(bytes));
    }
    Ok(())
}

fn create_session(state: &AppState, request: CreateRequest) -> ApiResult<SessionSummary> {
    match (request.manifest, request.bundle) {
        (Some(path), None) => Ok(state.manager.create_session(path)?),
        (None, Some(bundle)) => {
            let root = state.scratch("upload");
            let result = unpack_bundle(&root, &bundle).and_then(|()| Ok(state.manager.create_session(&root)?));
            let _ = fs::remove_dir_all(&root);
            let mut summary = result?;
            summary.source = None;
            Ok(summary)
        }
        _ => Err(ApiError::BadRequest(
            "give exactly one of \"manifest\" or \"bundle\"".into(),
        )),
    }
}

async fn post_scene(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let request: CreateRequest = parse_body(&body)?;
    let summary = blocking(move || create_session(&state, request)).await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<SessionSummary>>> {
    let summaries = state
        .manager
        .session_ids()
        .iter()
        // A session closed between listing and summarising is skipped.
        .filter_map(|id| state.manager.summary(id).ok())
        .collect();
    Ok(Json(summaries))
}

async fn get_scene(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<SessionSummary>> {
    Ok(Json(state.manager.summary(&id)?))
}

async fn delete_scene(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    state.manager.close_session(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_render(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let bytes = blocking(move || Ok(state.manager.render_png(&id)?)).await?;
    Ok(png(bytes))
}

async fn get_plane(
    State(state): State<Arc<AppState>>,
    UrlPath((id, plane, channel)): UrlPath<(String, String, String)>,
) -> ApiResult<Response> {
    let plane = PlaneId(
        plane
            .parse()
            .map_err(|_| ApiError::BadRequest(format!("{plane:?} is not a plane id")))?,
    );
    let bytes = blocking(move || match channel.as_str() {
        "color" => Ok(state.manager.plane_color_png(&id, plane)?),
        "alpha" => Ok(state.manager.plane_alpha_png(&id, plane)?),
        other => Err(ApiError::BadRequest(format!(
            "channel must be \"color\" or \"alpha\", got {other:?}"
        ))),
    })
    .await?;
    Ok(png(bytes))
}

async fn post_op(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<OpSummary>> {
    let request: OpRequest = parse_body(&body)?;
    let summary = blocking(move || Ok(state.manager.apply_op(&id, &request)?)).await?;
    Ok(Json(summary))
}

async fn post_undo(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<SessionSummary>> {
    let to = query
        .get("to")
        .ok_or_else(|| ApiError::BadRequest("missing query parameter \"to\"".into()))?;
    let to: usize = to
        .parse()
        .map_err(|_| ApiError::BadRequest(format!("\"to\" must be a log length, got {to:?}")))?;
    let summary = blocking(move || Ok(state.manager.undo(&id, to)?)).await?;
    Ok(Json(summary))
}

async fn get_export(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let dir = query.get("dir").map(PathBuf::from);
    blocking(move || match dir {
        Some(dir) => {
            let manifest = state.manager.export(&id, &dir)?;
            Ok(Json(ExportedDir { dir, manifest }).into_response())
        }
        None => {
            let root = state.scratch("export");
            let packed = state
                .manager
                .export(&id, &root)
                .map_err(ApiError::from)
                .and_then(|manifest| {
                    let mut files = BTreeMap::new();
                    pack_dir(&root, &root, &mut files)?;
                    let manifest = serde_json::to_value(&manifest).map_err(Error::from)?;
                    Ok(Bundle { manifest, files })
                });
            let _ = fs::remove_dir_all(&root);
            Ok(Json(packed?).into_response())
        }
    })
    .await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenes", post(post_scene).get(list_scenes))
        .route("/scenes/{id}", get(get_scene).delete(delete_scene))
        .route("/scenes/{id}/render", get(get_render))
        .route("/scenes/{id}/planes/{plane}/{channel}", get(get_plane))
        .route("/scenes/{id}/ops", post(post_op))
        .route("/scenes/{id}/undo", post(post_undo))
        .route("/scenes/{id}/export", get(get_export))
        .with_state(state)
}
