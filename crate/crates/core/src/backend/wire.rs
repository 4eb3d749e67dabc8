//! JSON bodies of `POST /v1/perceive`.
//!
//! A response is either a success body (`results`, `texts`, `model`,
//! `latency_ms`) or an error body (`error`), never both.

use serde::{Deserialize, Serialize};

use crate::model::BBox;

pub const PATH: &str = "/v1/perceive";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detect,
    Ocr,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Detect => "detect",
            Task::Ocr => "ocr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub image_id: String,
    #[serde(default)]
    pub queries: Vec<String>,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BBox>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    UnknownImage = 1,
    BadRequest = 2,
    ModelFailure = 3,
}

impl ErrorCode {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(ErrorCode::UnknownImage),
            2 => Some(ErrorCode::BadRequest),
            3 => Some(ErrorCode::ModelFailure),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::UnknownImage => "unknown_image",
            ErrorCode::BadRequest => "bad_request",
            ErrorCode::ModelFailure => "model_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSuccess {
    /// One box list per request query, in request order. Empty for OCR.
    pub results: Vec<Vec<BBox>>,
    #[serde(default)]
    pub texts: Vec<String>,
    pub model: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireResponse {
    Success(WireSuccess),
    Error(WireError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed response: {0}")]
pub struct ProtocolViolation(pub String);

#[derive(Deserialize)]
struct RawResponse {
    results: Option<Vec<Vec<BBox>>>,
    texts: Option<Vec<String>>,
    model: Option<String>,
    latency_ms: Option<u64>,
    error: Option<WireError>,
}

impl WireResponse {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        WireResponse::Error(WireError {
            code: code as i64,
            message: message.into(),
        })
    }

    pub fn to_json(&self) -> String {
        match self {
            WireResponse::Success(s) => serde_json::to_string(s),
            WireResponse::Error(e) => serde_json::to_string(&serde_json::json!({ "error": e })),
        }
        .expect("wire response serializes")
    }

    /// Strict decoding: exactly one of `results` and `error`, and every box
    /// normalized.
    pub fn parse(body: &[u8]) -> Result<Self, ProtocolViolation> {
        let raw: RawResponse = serde_json::from_slice(body).map_err(|e| ProtocolViolation(e.to_string()))?;
        match (raw.results, raw.error) {
            (Some(_), Some(_)) => Err(ProtocolViolation("both results and error present".into())),
            (None, None) => Err(ProtocolViolation("neither results nor error present".into())),
            (None, Some(e)) => Ok(WireResponse::Error(e)),
            (Some(results), None) => {
                for b in results.iter().flatten() {
                    b.check().map_err(|e| ProtocolViolation(format!("box out of range: {e}")))?;
                }
                Ok(WireResponse::Success(WireSuccess {
                    results,
                    texts: raw.texts.unwrap_or_default(),
                    model: raw.model.ok_or_else(|| ProtocolViolation("missing model".into()))?,
                    latency_ms: raw
                        .latency_ms
                        .ok_or_else(|| ProtocolViolation("missing latency_ms".into()))?,
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape() {
        let req = WireRequest {
            image_id: "i1".into(),
            queries: vec!["man".into()],
            task: Task::Detect,
            region: None,
            threshold: 0.3,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"image_id":"i1","queries":["man"],"task":"detect","threshold":0.3}"#
        );
    }

    #[test]
    fn responses_are_exclusive() {
        let ok = br#"{"results":[[{"x0":0.1,"y0":0.1,"x1":0.2,"y1":0.2,"score":0.9}]],"texts":[],"model":"m","latency_ms":3}"#;
        assert!(matches!(WireResponse::parse(ok), Ok(WireResponse::Success(_))));
        let err = br#"{"error":{"code":1,"message":"unknown_image"}}"#;
        assert!(matches!(WireResponse::parse(err), Ok(WireResponse::Error(WireError { code: 1, .. }))));
        assert!(WireResponse::parse(br#"{"model":"m","latency_ms":1}"#).is_err());
        assert!(WireResponse::parse(br#"{"results":[],"model":"m","latency_ms":1,"error":{"code":3,"message":"x"}}"#).is_err());
        assert!(WireResponse::parse(b"{not json").is_err());
        let out_of_range = br#"{"results":[[{"x0":0.1,"y0":0.1,"x1":1.2,"y1":0.2}]],"model":"m","latency_ms":3}"#;
        assert!(WireResponse::parse(out_of_range).is_err());
    }

    #[test]
    fn error_round_trip() {
        let e = WireResponse::error(ErrorCode::UnknownImage, "no such image");
        assert_eq!(WireResponse::parse(e.to_json().as_bytes()).unwrap(), e);
    }
}
