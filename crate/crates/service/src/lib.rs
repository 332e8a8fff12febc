//! HTTP API over edit sessions.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | POST | `/scenes` | `{"synth": cfg}`, `{"trace": upload}` or `{"decompose": req}`; returns the new scene |
//! | GET | `/scenes/{id}` | instance list |
//! | GET | `/scenes/{id}/graph` | pairwise matrix, edges, layer orders |
//! | POST | `/scenes/{id}/edits` | one edit; returns the updated instance list |
//! | POST | `/scenes/{id}/undo` | drops the last edit |
//! | GET | `/scenes/{id}/image` | recomposited PNG |
//! | GET | `/scenes/{id}/instance/{iid}/image` | RGBA PNG, alpha = amodal mask |
//!
//! Errors are JSON `{code, message}` with status 404 for unknown sessions or
//! instances and 422 for invalid requests or edits.

pub mod api;
pub mod store;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::{HeaderValue, Method};
use axum::Router;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use api::{ApiError, CreateRequest, DecomposeRequest, ErrorBody, GraphView, InstanceView, SceneView, TraceUpload};
pub use store::SessionStore;

pub use axum::body::Body;
pub use axum::http;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    pub port: u16,
    pub data_dir: Option<PathBuf>,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            data_dir: None,
            cors_origin: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] stratum_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid CORS origin {0:?}")]
    Origin(String),
}

fn cors(origin: Option<&str>) -> Result<CorsLayer, ServiceError> {
    let allow = match origin {
        None => AllowOrigin::from(Any),
        Some(o) => AllowOrigin::list([HeaderValue::from_str(o).map_err(|_| ServiceError::Origin(o.into()))?]),
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any))
}

/// Router and session store for `cfg`.
pub fn app(cfg: &ServiceConfig) -> Result<(Router, Arc<SessionStore>), ServiceError> {
    let store = Arc::new(match &cfg.data_dir {
        Some(dir) => SessionStore::persistent(dir)?,
        None => SessionStore::in_memory(),
    });
    let router = api::routes(store.clone()).layer(cors(cfg.cors_origin.as_deref())?);
    Ok((router, store))
}

/// Serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let (router, _) = app(&cfg)?;
    let listener = tokio::net::TcpListener::bind(SocketAddr::new(cfg.bind, cfg.port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
