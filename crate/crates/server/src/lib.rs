//! Grounding inference over HTTP.
//!
//! Routes: `POST /api/ground` (multipart or JSON), `GET /api/models` and
//! `GET /healthz`. Errors come back as [`ErrorBody`] documents.

pub mod registry;

use std::sync::Arc;
use std::time::Instant;

use anatground_client::wire::{ErrorBody, GroundRequest, GroundResponse};
use anatground_core::data::GrayImage;
use anatground_core::model::Checkpoint;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;

pub use registry::{Registry, RegistryError, Slot};

/// Largest accepted image side, in pixels.
pub const MAX_IMAGE_SIDE: u32 = 4096;
/// Request body cap; a 4096 x 4096 PNG fits comfortably.
pub const MAX_BODY_BYTES: usize = 96 * 1024 * 1024;

#[derive(Debug)]
pub enum ApiError {
    BadRequest {
        field: &'static str,
        message: String,
    },
    UnknownModel(String),
    Loading(String),
    Internal(String),
}

impl ApiError {
    fn bad(field: &'static str, message: impl Into<String>) -> Self {
        Self::BadRequest {
            field,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error, field) = match self {
            ApiError::BadRequest { field, message } => {
                (StatusCode::BAD_REQUEST, message, Some(field.to_string()))
            }
            ApiError::UnknownModel(id) => (
                StatusCode::NOT_FOUND,
                format!("unknown model_id '{id}'"),
                None,
            ),
            ApiError::Loading(id) => (
                StatusCode::SERVICE_UNAVAILABLE,
                format!("model '{id}' is still loading"),
                None,
            ),
            ApiError::Internal(msg) => (StatusCode::INTERNAL_SERVER_ERROR, msg, None),
        };
        (status, Json(ErrorBody { error, field })).into_response()
    }
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/models", get(models))
        .route("/api/ground", post(ground))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(registry)
}

/// Serves until the listener fails or ctrl-c arrives.
pub async fn serve(
    listener: tokio::net::TcpListener,
    registry: Arc<Registry>,
) -> std::io::Result<()> {
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn models(State(reg): State<Arc<Registry>>) -> impl IntoResponse {
    Json(reg.list().await)
}

struct Parsed {
    image: Vec<u8>,
    text: String,
    model_id: String,
}

async fn ground(
    State(reg): State<Arc<Registry>>,
    req: Request,
) -> Result<Json<GroundResponse>, ApiError> {
    let started = Instant::now();
    let parsed = parse_request(req).await?;
    let text = parsed.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::bad("text", "text must not be empty"));
    }
    let ck: Arc<Checkpoint> = match reg.get(&parsed.model_id).await {
        None => return Err(ApiError::UnknownModel(parsed.model_id)),
        Some(Slot::Loading) => return Err(ApiError::Loading(parsed.model_id)),
        Some(Slot::Failed(e)) => {
            return Err(ApiError::Internal(format!(
                "model '{}' failed to load: {e}",
                parsed.model_id
            )))
        }
        Some(Slot::Ready(ck)) => ck,
    };
    let image = GrayImage::decode_bounded(&parsed.image, MAX_IMAGE_SIDE)
        .map_err(|e| ApiError::bad("image", e.to_string()))?;
    let model = Arc::clone(&ck);
    let grounding = tokio::task::spawn_blocking(move || model.model.ground(&image, &text))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| match e {
            anatground_core::Error::InvalidInput(m) => ApiError::bad("text", m),
            other => ApiError::Internal(other.to_string()),
        })?;
    Ok(Json(GroundResponse {
        box_xyxy: grounding.box_xyxy(),
        model_id: parsed.model_id,
        stage: ck.stage.to_string(),
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
    }))
}

async fn parse_request(req: Request) -> Result<Parsed, ApiError> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad("body", e.body_text()))?;
        let (mut image, mut text, mut model_id) = (None, None, None);
        while let Some(field) = form
            .next_field()
            .await
            .map_err(|e| ApiError::bad("body", e.body_text()))?
        {
            let name = field.name().unwrap_or("").to_string();
            match name.as_str() {
                "image" => {
                    image = Some(
                        field
                            .bytes()
                            .await
                            .map_err(|e| ApiError::bad("image", e.body_text()))?
                            .to_vec(),
                    )
                }
                "text" => {
                    text = Some(
                        field
                            .text()
                            .await
                            .map_err(|e| ApiError::bad("text", e.body_text()))?,
                    )
                }
                "model_id" => {
                    model_id = Some(
                        field
                            .text()
                            .await
                            .map_err(|e| ApiError::bad("model_id", e.body_text()))?,
                    )
                }
                _ => {
                    return Err(ApiError::BadRequest {
                        field: "body",
                        message: format!("unexpected form field '{name}'"),
                    })
                }
            }
        }
        Ok(Parsed {
            image: image.ok_or_else(|| ApiError::bad("image", "missing image field"))?,
            text: text.ok_or_else(|| ApiError::bad("text", "missing text field"))?,
            model_id: model_id
                .ok_or_else(|| ApiError::bad("model_id", "missing model_id field"))?,
        })
    } else if content_type.starts_with("application/json") {
        let Json(body) = Json::<GroundRequest>::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad("body", e.body_text()))?;
        let image = base64::engine::general_purpose::STANDARD
            .decode(body.image_base64.as_bytes())
            .map_err(|e| ApiError::bad("image_base64", format!("invalid base64: {e}")))?;
        Ok(Parsed {
            image,
            text: body.text,
            model_id: body.model_id,
        })
    } else {
        Err(ApiError::bad(
            "content-type",
            "expected multipart/form-data or application/json",
        ))
    }
}
