//! JSON documents exchanged with the grounding service.

use serde::{Deserialize, Serialize};

/// Structured alternative to the multipart form of `POST /api/ground`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundRequest {
    /// PNG or JPEG bytes, standard base64.
    pub image_base64: String,
    pub text: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundResponse {
    /// Corners in source-image pixels, clamped to the image.
    pub box_xyxy: [f64; 4],
    pub model_id: String,
    /// Training stage of the checkpoint: general, anatomical or finetuned.
    pub stage: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelStatus {
    Loading,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub image_size: u32,
    pub patch_grid: u32,
    pub embed_dim: usize,
    pub fusion_layers: usize,
    pub vocab_size: usize,
    /// none, attached or merged.
    pub adapter: String,
}

/// One entry of `GET /api/models`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    /// Stage tag once loaded.
    pub stage: Option<String>,
    pub status: ModelStatus,
    pub config: Option<ConfigSummary>,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    /// Request field at fault, for 400 responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_shape() {
        let r = GroundResponse {
            box_xyxy: [1.0, 2.0, 3.5, 4.0],
            model_id: "m".into(),
            stage: "finetuned".into(),
            latency_ms: 2.0,
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["box_xyxy"], serde_json::json!([1.0, 2.0, 3.5, 4.0]));
        assert_eq!(v["stage"], "finetuned");
        let back: GroundResponse = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn request_rejects_unknown_fields() {
        let ok = r#"{"image_base64":"", "text":"t", "model_id":"m"}"#;
        assert!(serde_json::from_str::<GroundRequest>(ok).is_ok());
        let bad = r#"{"image_base64":"", "text":"t", "model_id":"m", "extra": 1}"#;
        assert!(serde_json::from_str::<GroundRequest>(bad).is_err());
    }

    #[test]
    fn error_body_omits_missing_field() {
        let e = ErrorBody {
            error: "unknown model".into(),
            field: None,
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"error":"unknown model"}"#
        );
    }
}
