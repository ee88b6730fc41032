//! HTTP JSON API over a read-only [`Engine`].
//!
//! * `POST /api/recommend` guided recommendation
//! * `GET /api/catalog` category names, item count, largest `k`
//! * `GET /api/health` readiness and model hash
//!
//! Errors are `{error, detail}` objects. Inference runs on the blocking pool
//! so concurrent requests only contend for CPU.

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::engine::{Engine, RecommendHttpRequest, RequestError};
use crate::CliError;

pub struct AppState {
    engine: Option<Arc<Engine>>,
    /// Serialized once so repeated calls return identical bytes.
    catalog: Option<String>,
    started: Instant,
}

impl AppState {
    pub fn new(engine: Option<Engine>) -> Self {
        let catalog = engine.as_ref().map(|e| serde_json::to_string(&e.catalog()).expect("catalog serializes"));
        Self { engine: engine.map(Arc::new), catalog, started: Instant::now() }
    }
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: &'static str,
    detail: String,
}

fn error(status: StatusCode, kind: &'static str, detail: impl Into<String>) -> Response {
    (status, axum::Json(ApiError { error: kind, detail: detail.into() })).into_response()
}

fn json_body(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn no_model() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "no_model", "no checkpoint is loaded")
}

async fn recommend(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(engine) = state.engine.clone() else {
        return no_model();
    };
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let req: RecommendHttpRequest = match serde_path_to_error::deserialize(de) {
        Ok(r) => r,
        Err(e) => {
            let path = e.path().to_string();
            return error(StatusCode::BAD_REQUEST, "invalid_request", format!("{path}: {}", e.inner()));
        }
    };
    let result = tokio::task::spawn_blocking(move || engine.recommend(&req)).await;
    match result {
        Ok(Ok(resp)) => match serde_json::to_string(&resp) {
            Ok(s) => json_body(StatusCode::OK, s),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        },
        Ok(Err(e @ RequestError::Invalid(_))) => error(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()),
        Ok(Err(e @ RequestError::EmptyHistory)) => error(StatusCode::UNPROCESSABLE_ENTITY, "empty_history", e.to_string()),
        Ok(Err(e @ RequestError::Internal(_))) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn catalog(State(state): State<Arc<AppState>>) -> Response {
    match &state.catalog {
        Some(c) => json_body(StatusCode::OK, c.clone()),
        None => no_model(),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let (status, hash) = match &state.engine {
        Some(e) => ("ready", Some(e.model_hash().to_string())),
        None => ("no_model", None),
    };
    let body = json!({ "status": status, "model_hash": hash, "uptime_s": state.started.elapsed().as_secs_f64() });
    (StatusCode::OK, axum::Json(body)).into_response()
}

/// The API router. `allowed_origin` restricts CORS to one origin; any
/// origin is allowed otherwise.
pub fn router(state: Arc<AppState>, allowed_origin: Option<&str>) -> Result<Router, CliError> {
    let origin = match allowed_origin {
        Some(o) => AllowOrigin::exact(
            HeaderValue::from_str(o).map_err(|_| CliError::Config(format!("serve.allowed_origin: invalid origin {o:?}")))?,
        ),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/api/recommend", post(recommend))
        .route("/api/catalog", get(catalog))
        .route("/api/health", get(health))
        .layer(cors)
        .with_state(state))
}

/// Binds `0.0.0.0:port` and serves until the process is stopped.
pub fn serve(state: AppState, port: u16, allowed_origin: Option<&str>) -> Result<(), CliError> {
    let app = router(Arc::new(state), allowed_origin)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
            .await
            .map_err(|e| CliError::Config(format!("serve.port: cannot bind {port}: {e}")))?;
        log::info!("listening on port {port}");
        axum::serve(listener, app).await.map_err(|e| CliError::Data(format!("server failed: {e}")))
    })
}
