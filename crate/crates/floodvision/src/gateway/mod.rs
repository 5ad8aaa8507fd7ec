//! VLM gateway: builds the image-agnostic three-step prompt, delivers
//! image + prompt to a backend (live HTTP or deterministic mock), and
//! parses the strictly constrained JSON reply into a validated observation.

mod http;
mod mock;
mod parse;
mod prompt;

pub use http::HttpBackend;
pub use mock::MockBackend;
pub use parse::{parse_baseline_reply, parse_observation, serialize_observation};
pub use prompt::{build_baseline_prompt, build_prompt, RESPONSE_SCHEMA_TEXT};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the API key for the live backend.
pub const API_KEY_ENV: &str = "FLOODVISION_API_KEY";

/// Reference objects requested per scene.
pub const MAX_OBJECTS: usize = 3;

/// The full prompt sent with every image in a run. Image-agnostic by
/// construction: building it twice yields identical text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub system_framing: String,
    pub step_instructions: String,
    pub max_objects: usize,
    pub response_schema_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Jpeg,
    Png,
}

impl MediaType {
    pub fn mime(&self) -> &'static str {
        match self {
            MediaType::Jpeg => "image/jpeg",
            MediaType::Png => "image/png",
        }
    }
}

/// Raw image bytes plus the media type sniffed from their magic bytes.
#[derive(Debug, Clone)]
pub struct ImagePayload {
    pub bytes: Vec<u8>,
    pub media_type: MediaType,
    pub source_path: String,
}

impl ImagePayload {
    /// Wraps image bytes, sniffing JPEG/PNG magic bytes. Empty or
    /// unrecognized data is rejected.
    pub fn new(bytes: Vec<u8>, source_path: impl Into<String>) -> Result<Self, GatewayError> {
        let source_path = source_path.into();
        let media_type = sniff_media_type(&bytes)
            .ok_or_else(|| GatewayError::UnsupportedImage { path: source_path.clone() })?;
        Ok(Self { bytes, media_type, source_path })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, GatewayError> {
        let bytes = std::fs::read(path).map_err(|e| GatewayError::ImageIo {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::new(bytes, path.display().to_string())
    }
}

fn sniff_media_type(bytes: &[u8]) -> Option<MediaType> {
    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some(MediaType::Jpeg)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(MediaType::Png)
    } else {
        None
    }
}

/// One reference object from the model's reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectObservation {
    pub raw_label: String,
    pub provisional_height_cm: f64,
    pub submerged_ratio: f64,
    pub rationale: String,
}

/// The parsed, schema-validated reply for one scene: up to three objects,
/// plus the raw text retained for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObservation {
    pub objects: Vec<ObjectObservation>,
    pub model_id: String,
    pub raw_response: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Backend selection and transport knobs, read from the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub fixture_dir: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_timeout_s() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_parallelism() -> usize {
    4
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_s <= 0.0 || !self.timeout_s.is_finite() {
            return Err(GatewayError::BadConfig(format!(
                "backend.timeout_s must be > 0, got {}",
                self.timeout_s
            )));
        }
        if self.parallelism < 1 {
            return Err(GatewayError::BadConfig(
                "backend.parallelism must be >= 1".to_string(),
            ));
        }
        match self.kind {
            BackendKind::Http => {
                if self.base_url.as_deref().unwrap_or("").is_empty() {
                    return Err(GatewayError::BadConfig(
                        "backend.base_url is required for kind=http".to_string(),
                    ));
                }
                if self.model_name.as_deref().unwrap_or("").is_empty() {
                    return Err(GatewayError::BadConfig(
                        "backend.model_name is required for kind=http".to_string(),
                    ));
                }
            }
            BackendKind::Mock => {
                if self.fixture_dir.as_deref().unwrap_or("").is_empty() {
                    return Err(GatewayError::BadConfig(
                        "backend.fixture_dir is required for kind=mock".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The model identifier recorded in observations and result files.
    pub fn model_id(&self) -> String {
        match self.kind {
            BackendKind::Http => self.model_name.clone().unwrap_or_default(),
            BackendKind::Mock => "mock".to_string(),
        }
    }
}

/// Transport abstraction: one request in, one assistant reply text out.
/// Implementations are stateless per request and safe to share across
/// threads; the orchestrator bounds in-flight requests.
pub trait VlmBackend: Send + Sync {
    fn request(&self, image: &ImagePayload, prompt: &PromptSpec) -> Result<String, GatewayError>;
}

/// Builds the configured backend.
pub fn backend_from_config(config: &BackendConfig) -> Result<Box<dyn VlmBackend>, GatewayError> {
    config.validate()?;
    match config.kind {
        BackendKind::Http => Ok(Box::new(HttpBackend::from_config(config)?)),
        BackendKind::Mock => Ok(Box::new(MockBackend::new(
            config.fixture_dir.as_deref().unwrap_or("").into(),
        ))),
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid backend config: {0}")]
    BadConfig(String),
    #[error("environment variable {API_KEY_ENV} is not set (required for backend.kind=http)")]
    MissingApiKey,
    #[error("failed to read image {path}: {source}")]
    ImageIo { path: String, source: std::io::Error },
    #[error("unsupported image format for {path}: expected JPEG or PNG magic bytes")]
    UnsupportedImage { path: String },
    #[error("transport failed after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("HTTP status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("mock fixture not found; probed {hash_path} and {name_path}")]
    MissingFixture { hash_path: String, name_path: String },
    #[error("reply is not valid JSON: {0}")]
    ReplyJson(String),
    #[error("schema violation at {field}: {message}")]
    SchemaViolation { field: String, message: String },
    #[error("unexpected response envelope: {0}")]
    BadEnvelope(String),
}

impl GatewayError {
    /// Parse and schema errors are retryable by the orchestrator (one
    /// re-request, then scene-level failure).
    pub fn is_reply_error(&self) -> bool {
        matches!(
            self,
            GatewayError::ReplyJson(_) | GatewayError::SchemaViolation { .. }
        )
    }
}
