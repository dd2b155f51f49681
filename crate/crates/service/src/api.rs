//! JSON endpoints.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;
use uuid::Uuid;

use cbir_core::error::Error;
use cbir_core::feedback::{AlrfConfig, Fusion};
use cbir_core::global::{extract_global, GlobalKind, GlobalParams};
use cbir_core::image::RgbImage;
use cbir_core::local::{extract_local, LocalKind, LocalParams};
use cbir_core::retrieval::{rank, Hit, Metric};

use crate::catalog::{Catalog, DatasetEntry, TableEntry};
use crate::session::{Session, SessionScheme, SessionView, Sessions};

pub const THUMB_SIZE: u32 = 128;

pub struct AppState {
    pub catalog: Catalog,
    pub sessions: Sessions,
    thumbs: Mutex<HashMap<(String, u32), Arc<Vec<u8>>>>,
}

impl AppState {
    pub fn new(catalog: Catalog, sessions: Sessions) -> Self {
        Self {
            catalog,
            sessions,
            thumbs: Mutex::new(HashMap::new()),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    extra: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            extra: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownId(_) | Error::UnknownKind(_) => StatusCode::NOT_FOUND,
            Error::LabelConflict(_) => StatusCode::CONFLICT,
            Error::SessionFinished => StatusCode::GONE,
            Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(extra) = self.extra {
            body.as_object_mut().expect("object").extend(extra.as_object().cloned().unwrap_or_default());
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn dataset<'a>(state: &'a AppState, name: &str) -> ApiResult<&'a DatasetEntry> {
    state.catalog.dataset(name).ok_or_else(|| {
        let mut e = ApiError::not_found(format!("unknown dataset `{name}`"));
        e.extra = Some(json!({ "datasets": state.catalog.datasets.keys().collect::<Vec<_>>() }));
        e
    })
}

fn table<'a>(d: &'a DatasetEntry, kind: &str) -> ApiResult<&'a TableEntry> {
    d.tables.get(kind).ok_or_else(|| {
        let mut e = ApiError::not_found(format!("unknown kind `{kind}`"));
        e.extra = Some(json!({ "kinds": d.tables.keys().collect::<Vec<_>>() }));
        e
    })
}

#[derive(Serialize)]
struct DatasetInfo {
    name: String,
    kinds: Vec<KindInfo>,
    images: usize,
    classes: Vec<String>,
}

#[derive(Serialize)]
struct KindInfo {
    kind: String,
    dim: usize,
    rows: usize,
}

async fn datasets(State(state): State<Arc<AppState>>) -> Json<Vec<DatasetInfo>> {
    Json(
        state
            .catalog
            .datasets
            .iter()
            .map(|(name, d)| DatasetInfo {
                name: name.clone(),
                kinds: d
                    .tables
                    .iter()
                    .map(|(k, t)| KindInfo {
                        kind: k.clone(),
                        dim: t.table.dim(),
                        rows: t.table.len(),
                    })
                    .collect(),
                images: d.images.as_ref().map_or(0, |i| i.len()),
                classes: d.images.as_ref().map_or_else(Vec::new, |i| i.classes.clone()),
            })
            .collect(),
    )
}

fn default_page_size() -> usize {
    20
}

#[derive(Deserialize)]
pub struct QueryRequest {
    pub dataset: String,
    pub kind: String,
    #[serde(default)]
    pub metric: Metric,
    pub image_id: Option<u32>,
    /// Base64-encoded image file.
    pub image: Option<String>,
    #[serde(default)]
    pub exclude_query: bool,
    #[serde(default)]
    pub page: usize,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
}

#[derive(Serialize, Deserialize)]
pub struct QueryResponse {
    pub dataset: String,
    pub kind: String,
    pub metric: Metric,
    pub query_id: Option<u32>,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub hits: Vec<Hit>,
}

fn extract_upload(d: &DatasetEntry, kind: &str, id: u32, b64: &str) -> ApiResult<Vec<f32>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("upload is not base64: {e}")))?;
    let img = RgbImage::decode(&bytes)?;
    let v = if let Some(k) = GlobalKind::from_name(kind) {
        extract_global(id, &img, k, &GlobalParams::default())?
    } else if let Some(k) = LocalKind::from_name(kind) {
        let model = d.models.get(&k).ok_or_else(|| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("no quantizer loaded for `{kind}`; upload queries need one"),
            )
        })?;
        extract_local(id, &img, k, model, &LocalParams::default())?
    } else {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("`{kind}` is an ingested descriptor; query by image id instead"),
        ));
    };
    Ok(v.values)
}

async fn query(State(state): State<Arc<AppState>>, Json(req): Json<QueryRequest>) -> ApiResult<Json<QueryResponse>> {
    let d = dataset(&state, &req.dataset)?;
    let t = &table(d, &req.kind)?.table;
    if req.page_size == 0 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "page_size must be positive"));
    }
    let list = match (req.image_id, &req.image) {
        (Some(id), None) => rank(t.vector(id)?, Some(id), t, req.metric, req.exclude_query)?,
        (None, Some(b64)) => {
            let q = extract_upload(d, &req.kind, u32::MAX, b64)?;
            rank(&q, None, t, req.metric, false)?
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "give exactly one of `image_id` and `image`",
            ))
        }
    };
    let start = req.page.saturating_mul(req.page_size).min(list.len());
    let end = (start + req.page_size).min(list.len());
    Ok(Json(QueryResponse {
        dataset: req.dataset,
        kind: req.kind,
        metric: req.metric,
        query_id: list.query_id,
        total: list.len(),
        page: req.page,
        page_size: req.page_size,
        hits: list.hits[start..end].to_vec(),
    }))
}

#[derive(Default, Deserialize)]
#[serde(default)]
pub struct SessionParams {
    pub n: Option<usize>,
    pub page_size: Option<usize>,
    pub fusion: Option<Fusion>,
    pub iterations: Option<usize>,
    pub seed_relevant: Option<usize>,
    pub seed_irrelevant: Option<usize>,
    pub p: Option<usize>,
    pub h: Option<usize>,
    pub svm_c: Option<f64>,
    pub seed: Option<u64>,
}

impl SessionParams {
    fn alrf(&self) -> AlrfConfig {
        let d = AlrfConfig::default();
        AlrfConfig {
            iterations: self.iterations.unwrap_or(d.iterations),
            seed_relevant: self.seed_relevant.unwrap_or(d.seed_relevant),
            seed_irrelevant: self.seed_irrelevant.unwrap_or(d.seed_irrelevant),
            p: self.p.unwrap_or(d.p),
            h: self.h.unwrap_or(d.h),
            svm_c: self.svm_c.unwrap_or(d.svm_c),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Deserialize)]
pub struct SessionRequest {
    pub dataset: String,
    pub kind: String,
    #[serde(default)]
    pub metric: Metric,
    pub query_id: u32,
    pub scheme: SessionScheme,
    #[serde(default)]
    pub params: SessionParams,
}

#[derive(Deserialize)]
pub struct ViewParams {
    #[serde(default = "default_page_size")]
    pub limit: usize,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Query(view): Query<ViewParams>,
    Json(req): Json<SessionRequest>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let st = Arc::clone(&state);
    let session = tokio::task::spawn_blocking(move || -> ApiResult<Session> {
        let d = dataset(&st, &req.dataset)?;
        let entry = table(d, &req.kind)?;
        let s = match req.scheme {
            SessionScheme::Manual => Session::new_manual(
                &entry.table,
                &req.dataset,
                &req.kind,
                req.metric,
                req.query_id,
                req.params.n.unwrap_or(5),
                req.params.page_size.unwrap_or(AlrfConfig::default().h),
                req.params.fusion.unwrap_or_default(),
            )?,
            SessionScheme::Alrf => Session::new_alrf(
                &entry.kernel()?,
                &req.dataset,
                &req.kind,
                req.metric,
                req.query_id,
                req.params.alrf(),
            )?,
        };
        Ok(s)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let s = state.sessions.insert(session);
    let v = s.lock().expect("session poisoned").view(view.limit);
    Ok((StatusCode::CREATED, Json(v)))
}

fn session_by_id(state: &AppState, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    let id = Uuid::parse_str(id).map_err(|_| ApiError::not_found(format!("unknown session `{id}`")))?;
    state
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown or expired session `{id}`")))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(view): Query<ViewParams>,
) -> ApiResult<Json<SessionView>> {
    let s = session_by_id(&state, &id)?;
    let v = s.lock().expect("session poisoned").view(view.limit);
    Ok(Json(v))
}

#[derive(Clone, Copy, Deserialize, Serialize)]
pub struct Label {
    pub id: u32,
    pub relevant: bool,
}

#[derive(Deserialize, Serialize)]
pub struct FeedbackRequest {
    pub labels: Vec<Label>,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(view): Query<ViewParams>,
    Json(req): Json<FeedbackRequest>,
) -> ApiResult<Json<SessionView>> {
    let s = session_by_id(&state, &id)?;
    let st = Arc::clone(&state);
    let v = tokio::task::spawn_blocking(move || -> ApiResult<SessionView> {
        // one writer per session: the lock is held for the whole round
        let mut s = s.lock().expect("session poisoned");
        let d = dataset(&st, &s.dataset)?;
        let entry = table(d, &s.kind)?;
        let labels: Vec<(u32, bool)> = req.labels.iter().map(|l| (l.id, l.relevant)).collect();
        match s.scheme() {
            SessionScheme::Manual => s.submit_manual(&entry.table, &labels)?,
            SessionScheme::Alrf => s.submit_alrf(&entry.kernel()?, &labels)?,
        }
        Ok(s.view(view.limit))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(v))
}

#[derive(Deserialize)]
pub struct ThumbParams {
    pub dataset: Option<String>,
}

fn render_thumb(path: &std::path::Path) -> ApiResult<Vec<u8>> {
    let img = image::open(path).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let mut out = Vec::new();
    img.thumbnail(THUMB_SIZE, THUMB_SIZE)
        .to_rgb8()
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(out)
}

async fn thumb(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u32>,
    Query(p): Query<ThumbParams>,
) -> ApiResult<Response> {
    let name = match p.dataset {
        Some(n) => n,
        None => match state.catalog.datasets.keys().collect::<Vec<_>>()[..] {
            [only] => only.clone(),
            _ => return Err(ApiError::not_found("several datasets are loaded; pass `?dataset=`")),
        },
    };
    let key = (name.clone(), id);
    let cached = state.thumbs.lock().expect("thumb cache poisoned").get(&key).cloned();
    let bytes = match cached {
        Some(b) => b,
        None => {
            let d = dataset(&state, &name)?;
            let images = d
                .images
                .as_ref()
                .ok_or_else(|| ApiError::not_found(format!("no image files registered for `{name}`")))?;
            let path: PathBuf = images
                .image(id)
                .ok_or_else(|| ApiError::not_found(format!("unknown image {id}")))?
                .path
                .clone();
            let b = tokio::task::spawn_blocking(move || render_thumb(&path))
                .await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
            let b = Arc::new(b);
            state.thumbs.lock().expect("thumb cache poisoned").insert(key, Arc::clone(&b));
            b
        }
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes.as_ref().clone()).into_response())
}

/// Routes, with permissive CORS and an optional static UI directory.
pub fn router(state: Arc<AppState>, ui: Option<PathBuf>) -> Router {
    let r = Router::new()
        .route("/datasets", get(datasets))
        .route("/query", post(query))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/feedback", post(feedback))
        .route("/image/{id}/thumb", get(thumb))
        .with_state(state);
    let r = match ui {
        Some(dir) => r.fallback_service(ServeDir::new(dir)),
        None => r,
    };
    r.layer(CorsLayer::permissive())
}
