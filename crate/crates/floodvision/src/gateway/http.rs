//! Live backend: one chat-completion request per scene against an
//! OpenAI-compatible endpoint, image embedded as a base64 data URL,
//! temperature 0, exponential-backoff retries on transient failures.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{BackendConfig, GatewayError, ImagePayload, PromptSpec, VlmBackend, API_KEY_ENV};

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    model_name: String,
    api_key: String,
    max_retries: u32,
    /// Backoff base in seconds (factor 2 per retry). 1.0 in production;
    /// tests shrink it.
    backoff_base_s: f64,
}

impl HttpBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::MissingApiKey)?;
        Ok(Self::new(
            config.base_url.clone().unwrap_or_default(),
            config.model_name.clone().unwrap_or_default(),
            api_key,
            config.timeout_s,
            config.max_retries,
        ))
    }

    pub fn new(
        base_url: String,
        model_name: String,
        api_key: String,
        timeout_s: f64,
        max_retries: u32,
    ) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(timeout_s))
            .build();
        Self {
            agent,
            base_url,
            model_name,
            api_key,
            max_retries,
            backoff_base_s: 1.0,
        }
    }

    pub fn with_backoff_base(mut self, seconds: f64) -> Self {
        self.backoff_base_s = seconds;
        self
    }

    fn request_body(&self, image: &ImagePayload, prompt: &PromptSpec) -> String {
        let data_url = format!(
            "data:{};base64,{}",
            image.media_type.mime(),
            BASE64.encode(&image.bytes)
        );
        json!({
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_framing},
                {"role": "user", "content": [
                    {"type": "text", "text": prompt.step_instructions},
                    {"type": "image_url", "image_url": {"url": data_url}}
                ]}
            ],
            "temperature": 0
        })
        .to_string()
    }

    fn extract_content(body: &str) -> Result<String, GatewayError> {
        let value: Value = serde_json::from_str(body)
            .map_err(|e| GatewayError::BadEnvelope(format!("response is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::BadEnvelope(
                    "missing choices[0].message.content in chat completion".to_string(),
                )
            })
    }
}

impl VlmBackend for HttpBackend {
    /// At most `1 + max_retries` transport attempts. Transport errors and
    /// 429/5xx responses are retried with backoff (base, 2x factor); other
    /// non-success statuses fail immediately with the body surfaced.
    fn request(&self, image: &ImagePayload, prompt: &PromptSpec) -> Result<String, GatewayError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = self.request_body(image, prompt);
        let attempts = 1 + self.max_retries;

        let mut last_error: Option<GatewayError> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.backoff_base_s * f64::powi(2.0, attempt as i32 - 1);
                std::thread::sleep(Duration::from_secs_f64(delay));
            }
            let result = self
                .agent
                .post(&url)
                .set("Authorization", &format!("Bearer {}", self.api_key))
                .set("Content-Type", "application/json")
                .send_string(&body);
            match result {
                Ok(response) => {
                    let text = response.into_string().map_err(|e| GatewayError::Transport {
                        attempts: attempt + 1,
                        detail: format!("failed to read response body: {e}"),
                    })?;
                    return Self::extract_content(&text);
                }
                Err(ureq::Error::Status(code, response)) => {
                    let body = response.into_string().unwrap_or_default();
                    let err = GatewayError::HttpStatus { status: code, body };
                    if code == 429 || code >= 500 {
                        last_error = Some(err);
                    } else {
                        return Err(err);
                    }
                }
                Err(ureq::Error::Transport(t)) => {
                    last_error = Some(GatewayError::Transport {
                        attempts: attempt + 1,
                        detail: t.to_string(),
                    });
                }
            }
        }
        Err(match last_error {
            Some(GatewayError::HttpStatus { status, body }) => GatewayError::Transport {
                attempts,
                detail: format!("HTTP status {status}: {body}"),
            },
            Some(other) => other,
            None => GatewayError::Transport {
                attempts,
                detail: "no attempt was made".to_string(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_assistant_content() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"{\"objects\":[]}"}}]}"#;
        assert_eq!(HttpBackend::extract_content(body).unwrap(), r#"{"objects":[]}"#);
    }

    #[test]
    fn rejects_envelope_without_content() {
        assert!(HttpBackend::extract_content(r#"{"choices":[]}"#).is_err());
        assert!(HttpBackend::extract_content("not json").is_err());
    }

    #[test]
    fn body_embeds_image_as_data_url() {
        let backend = HttpBackend::new(
            "http://localhost:1".into(),
            "test-model".into(),
            "key".into(),
            5.0,
            0,
        );
        let image = ImagePayload::new(vec![0xFF, 0xD8, 0xFF, 0x00], "x.jpg").unwrap();
        let prompt = super::super::build_prompt(3).unwrap();
        let body: Value = serde_json::from_str(&backend.request_body(&image, &prompt)).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0);
        let url = body["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap();
        assert!(url.starts_with("data:image/jpeg;base64,"));
        assert_eq!(body["messages"][0]["role"], "system");
    }
}
