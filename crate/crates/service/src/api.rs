use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use stratum_core::components::{
    build_completer, build_segmenter, CompleterKind, CorruptionConfig, HeuristicSegmenter, InpaintCompleter,
    SegmenterKind,
};
use stratum_core::edit::{Edit, EditSession, Provenance};
use stratum_core::engine::{decompose, EngineConfig, TraceDocument};
use stratum_core::order::{absolute_order, validate, Violation};
use stratum_core::raster::bbox_from_mask;
use stratum_core::scene::composite;
use stratum_core::synth::{generate_scene, SynthConfig};
use stratum_core::{Appearance, Error, InstanceId, Rle};

use crate::store::{SessionStore, SharedSession};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    /// Maps a core error raised while handling a client request.
    fn from_core(e: Error, code: &'static str) -> Self {
        match e {
            Error::UnknownId(id) => Self::not_found(format!("unknown instance id {id}")),
            Error::Bookkeeping(_) | Error::Io(_) | Error::ContractViolation { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
            }
            e => Self::unprocessable(code, e.to_string()),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.into(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// `POST /scenes` body: exactly one of the three sources.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum CreateRequest {
    Synth(SynthConfig),
    Trace(TraceUpload),
    Decompose(DecomposeRequest),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceUpload {
    pub document: TraceDocument,
    /// PNG file name referenced by the document to base64 PNG bytes.
    pub images: BTreeMap<String, String>,
    #[serde(default = "default_upload_provenance")]
    pub provenance: Provenance,
    #[serde(default = "default_threshold")]
    pub overlap_threshold: u64,
}

fn default_upload_provenance() -> Provenance {
    Provenance::Inpainted
}

fn default_threshold() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeRequest {
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default = "default_segmenter")]
    pub segmenter: SegmenterKind,
    #[serde(default = "default_completer")]
    pub completer: CompleterKind,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub corruption: CorruptionConfig,
}

fn default_segmenter() -> SegmenterKind {
    SegmenterKind::Oracle
}

fn default_completer() -> CompleterKind {
    CompleterKind::Oracle
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InstanceView {
    pub id: InstanceId,
    pub category: u16,
    pub category_name: String,
    pub z: u32,
    /// Amodal bbox `[x, y, w, h]`.
    pub bbox: [u32; 4],
    pub visible_bbox: Option<[u32; 4]>,
    pub area: u64,
    pub visible_area: u64,
    pub layer_order: u32,
    pub provenance: Option<Provenance>,
    /// For hit testing against what is on screen.
    pub visible_mask: Rle,
    pub image_url: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneView {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub edits: usize,
    pub instances: Vec<InstanceView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphView {
    pub ids: Vec<InstanceId>,
    /// `rows[i][j]` relates `ids[i]` to `ids[j]`: 1 front, -1 behind, 0 unrelated.
    pub rows: Vec<Vec<i8>>,
    /// Directed `[front, back]` pairs.
    pub edges: Vec<[InstanceId; 2]>,
    pub layer_order: BTreeMap<InstanceId, u32>,
    pub violations: Vec<Violation>,
}

fn scene_view(id: &str, session: &EditSession, warnings: Vec<String>) -> ApiResult<SceneView> {
    let scene = session.current();
    let orders = absolute_order(&session.matrix()).map_err(ApiError::internal)?;
    let instances = scene
        .instances()
        .iter()
        .map(|inst| {
            let bbox = bbox_from_mask(&inst.amodal_mask).map_err(ApiError::internal)?;
            Ok(InstanceView {
                id: inst.id,
                category: inst.category.id(),
                category_name: inst.category.name().into(),
                z: inst.z,
                bbox: bbox.to_array(),
                visible_bbox: bbox_from_mask(&inst.visible_mask).ok().map(|b| b.to_array()),
                area: inst.amodal_mask.area(),
                visible_area: inst.visible_mask.area(),
                layer_order: orders.get(inst.id).unwrap_or(0),
                provenance: session.provenance(inst.id),
                visible_mask: inst.visible_mask.to_rle(),
                image_url: format!("/scenes/{id}/instance/{}/image", inst.id),
            })
        })
        .collect::<ApiResult<_>>()?;
    Ok(SceneView {
        id: id.into(),
        width: scene.width(),
        height: scene.height(),
        edits: session.log().len(),
        instances,
        warnings,
    })
}

fn graph_view(session: &EditSession) -> ApiResult<GraphView> {
    let w = session.matrix();
    let report = validate(&w);
    let layer_order = if report.is_valid() {
        absolute_order(&w).map_err(ApiError::internal)?.0
    } else {
        BTreeMap::new()
    };
    Ok(GraphView {
        ids: w.ids().to_vec(),
        rows: w.rows(),
        edges: w.front_edges().into_iter().map(|(a, b)| [a, b]).collect(),
        layer_order,
        violations: report.violations,
    })
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8], code: &'static str) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(code, format!("malformed request body: {e}")))
}

fn lookup(store: &SessionStore, id: &str) -> ApiResult<SharedSession> {
    store
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn session_from_request(req: CreateRequest) -> Result<EditSession, Error> {
    match req {
        CreateRequest::Synth(cfg) => {
            let scene = generate_scene(&cfg)?;
            Ok(EditSession::new(scene, Provenance::Oracle, cfg.overlap_threshold))
        }
        CreateRequest::Trace(upload) => {
            let decode = |name: &str| -> Result<Appearance, Error> {
                let b64 = upload
                    .images
                    .get(name)
                    .ok_or_else(|| Error::InvalidConfig(format!("image {name} missing from upload")))?;
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| Error::InvalidConfig(format!("image {name}: {e}")))?;
                Appearance::decode_png(&bytes)
            };
            let input = decode(&upload.document.input_image)?;
            let trace = upload.document.to_trace(decode)?;
            let scene = trace.to_scene(&input)?;
            let provenance = scene.ids().into_iter().map(|id| (id, upload.provenance)).collect();
            EditSession::restore(scene, Vec::new(), provenance, upload.overlap_threshold)
                .map_err(|e| Error::InvalidEdit(e.to_string()))
        }
        CreateRequest::Decompose(req) => {
            let gt = generate_scene(&req.synth)?;
            let mut seg = build_segmenter(
                req.segmenter,
                Some(&gt),
                req.engine.overlap_threshold,
                &req.corruption,
                &HeuristicSegmenter::default(),
            )?;
            let mut comp = build_completer(req.completer, Some(&gt), &InpaintCompleter::default())?;
            let input = composite(&gt);
            let (trace, _) = decompose(&input, &mut *seg, &mut *comp, &req.engine)?;
            let scene = trace.to_scene(&input)?;
            Ok(EditSession::new(scene, req.completer.provenance(), req.engine.overlap_threshold))
        }
    }
}

async fn create_scene(State(store): State<Arc<SessionStore>>, body: Bytes) -> ApiResult<(StatusCode, Json<SceneView>)> {
    let req: CreateRequest = parse(&body, "invalid_request")?;
    let session = tokio::task::spawn_blocking(move || session_from_request(req))
        .await
        .map_err(ApiError::internal)?
        .map_err(|e| ApiError::from_core(e, "invalid_request"))?;
    let id = store.insert(session.clone()).map_err(ApiError::internal)?;
    Ok((StatusCode::CREATED, Json(scene_view(&id, &session, Vec::new())?)))
}

async fn get_scene(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<SceneView>> {
    let shared = lookup(&store, &id)?;
    let session = shared.lock().expect("session lock poisoned");
    Ok(Json(scene_view(&id, &session, Vec::new())?))
}

async fn get_graph(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<GraphView>> {
    let shared = lookup(&store, &id)?;
    let session = shared.lock().expect("session lock poisoned");
    Ok(Json(graph_view(&session)?))
}

async fn post_edit(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SceneView>> {
    let shared = lookup(&store, &id)?;
    let edit: Edit = parse(&body, "invalid_edit")?;
    let mut session = shared.lock().expect("session lock poisoned");
    let warnings = session.apply(edit).map_err(|e| ApiError::from_core(e, "invalid_edit"))?;
    store.persist(&id, &session).map_err(ApiError::internal)?;
    Ok(Json(scene_view(&id, &session, warnings)?))
}

async fn post_undo(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<SceneView>> {
    let shared = lookup(&store, &id)?;
    let mut session = shared.lock().expect("session lock poisoned");
    if session.log().is_empty() {
        return Err(ApiError::unprocessable("nothing_to_undo", "the edit log is empty"));
    }
    session.undo().map_err(ApiError::internal)?;
    store.persist(&id, &session).map_err(ApiError::internal)?;
    Ok(Json(scene_view(&id, &session, Vec::new())?))
}

async fn get_image(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    let image = lookup(&store, &id)?.lock().expect("session lock poisoned").image();
    Ok(png(image.encode_png().map_err(ApiError::internal)?))
}

async fn get_instance_image(
    State(store): State<Arc<SessionStore>>,
    Path((id, iid)): Path<(String, InstanceId)>,
) -> ApiResult<Response> {
    let shared = lookup(&store, &id)?;
    let session = shared.lock().expect("session lock poisoned");
    let inst = session
        .current()
        .instance(iid)
        .ok_or_else(|| ApiError::not_found(format!("unknown instance {iid} in session {id}")))?;
    let bytes = inst
        .appearance
        .encode_png_with_alpha(&inst.amodal_mask)
        .map_err(ApiError::internal)?;
    Ok(png(bytes))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such route")
}

pub fn routes(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/scenes", post(create_scene))
        .route("/scenes/{id}", get(get_scene))
        .route("/scenes/{id}/graph", get(get_graph))
        .route("/scenes/{id}/edits", post(post_edit))
        .route("/scenes/{id}/undo", post(post_undo))
        .route("/scenes/{id}/image", get(get_image))
        .route("/scenes/{id}/instance/{iid}/image", get(get_instance_image))
        .fallback(fallback)
        .with_state(store)
}
