//! Async client for the grounding service.

pub mod wire;

use base64::Engine;
use reqwest::StatusCode;

pub use wire::{ConfigSummary, ErrorBody, GroundRequest, GroundResponse, ModelInfo, ModelStatus};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server answered {status}: {}", body.error)]
    Status { status: StatusCode, body: ErrorBody },
    #[error(transparent)]
    Transport(#[from] reqwest::Error),
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub async fn health(&self) -> Result<String> {
        let resp = self
            .http
            .get(format!("{}/healthz", self.base))
            .send()
            .await?;
        Ok(check(resp).await?.text().await?)
    }

    pub async fn models(&self) -> Result<Vec<ModelInfo>> {
        let resp = self
            .http
            .get(format!("{}/api/models", self.base))
            .send()
            .await?;
        Ok(check(resp).await?.json().await?)
    }

    /// Grounds `text` in an encoded image (PNG or JPEG bytes).
    pub async fn ground(&self, image: &[u8], text: &str, model_id: &str) -> Result<GroundResponse> {
        let req = GroundRequest {
            image_base64: base64::engine::general_purpose::STANDARD.encode(image),
            text: text.to_string(),
            model_id: model_id.to_string(),
        };
        let resp = self
            .http
            .post(format!("{}/api/ground", self.base))
            .json(&req)
            .send()
            .await?;
        Ok(check(resp).await?.json().await?)
    }
}

async fn check(resp: reqwest::Response) -> Result<reqwest::Response> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await?;
    let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
        error: text,
        field: None,
    });
    Err(ClientError::Status { status, body })
}
