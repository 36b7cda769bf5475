//! Blocking chat-completions client.

use std::thread;
use std::time::Duration;

use kgsr_core::prompt::ChatClient;
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "KGSR_LLM_API_KEY";
pub const ENDPOINT_ENV: &str = "KGSR_LLM_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Extra attempts after the first one fails with a transport error,
    /// a 429 or a 5xx.
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for ChatClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: API_KEY_ENV.into(),
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug)]
pub struct HttpChatClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
    retries: u32,
    backoff: Duration,
}

impl HttpChatClient {
    /// Reads the key from the configured variable; `KGSR_LLM_ENDPOINT`
    /// overrides the configured endpoint when set.
    pub fn from_env(config: &ChatClientConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| Error::Usage(format!("the LLM client needs the {} environment variable", config.api_key_env)))?;
        let endpoint = std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|e| !e.trim().is_empty())
            .unwrap_or_else(|| config.endpoint.clone());
        Self::new(config, endpoint, api_key)
    }

    pub fn new(config: &ChatClientConfig, endpoint: String, api_key: String) -> Result<Self> {
        if config.timeout_secs == 0 {
            return Err(Error::Usage("LLM timeout must be at least one second".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model: config.model.clone(),
            api_key,
            retries: config.retries,
            backoff: Duration::from_millis(config.backoff_ms),
        })
    }

    fn attempt(&self, prompt: &str) -> std::result::Result<String, (bool, String)> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err((true, format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err((false, format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| (false, format!("reply is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "reply has no choices[0].message.content".into()))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> kgsr_core::Result<String> {
        let mut attempt = 0;
        loop {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err((retry, msg)) if retry && attempt < self.retries => {
                    log::warn!("chat request failed ({msg}); retrying");
                    thread::sleep(self.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
                Err((_, msg)) => return Err(kgsr_core::Error::Chat(format!("{}: {msg}", self.endpoint))),
            }
        }
    }
}
