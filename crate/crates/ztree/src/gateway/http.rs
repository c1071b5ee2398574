//! OpenAI-compatible chat-completions client.
//!
//! POSTs `{model, temperature, max_tokens, messages}` to
//! `{base_url}/chat/completions` with a bearer token. Credentials come
//! from `ZTREE_API_KEY`, the base URL from `ZTREE_BASE_URL` or a flag.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::GatewayError;
use crate::gateway::{ChatPrompt, CompletionBackend, Message};

pub const API_KEY_ENV: &str = "ZTREE_API_KEY";
pub const BASE_URL_ENV: &str = "ZTREE_BASE_URL";

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    messages: &'a [Message],
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build();
        HttpBackend {
            agent: config.into(),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.to_string(),
        }
    }

    /// Reads the base URL and key from the environment. The key is
    /// required; the base URL falls back to the public OpenAI endpoint.
    pub fn from_env() -> Result<Self, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::Auth {
            reason: format!("{API_KEY_ENV} is not set"),
        })?;
        let base_url =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
        Ok(HttpBackend::new(&base_url, &api_key))
    }
}

impl CompletionBackend for HttpBackend {
    fn complete_raw(&self, prompt: &ChatPrompt) -> Result<String, GatewayError> {
        let body = WireRequest {
            model: &prompt.params.model_name,
            temperature: prompt.params.temperature,
            max_tokens: prompt.params.max_tokens,
            messages: &prompt.messages,
        };
        let response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| GatewayError::Transport {
                attempts: 1,
                reason: e.to_string(),
            })?;

        let status = response.status().as_u16();
        if status == 401 || status == 403 {
            return Err(GatewayError::Auth {
                reason: format!("endpoint returned HTTP {status}"),
            });
        }
        let mut response = response;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport {
                attempts: 1,
                reason: e.to_string(),
            })?;
        if status != 200 {
            return Err(GatewayError::Transport {
                attempts: 1,
                reason: format!(
                    "HTTP {status}: {}",
                    text.chars().take(200).collect::<String>()
                ),
            });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| GatewayError::BadResponse(format!("unexpected response shape: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::BadResponse("response has no choices".to_string()))
    }

    fn name(&self) -> &'static str {
        "http"
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}
