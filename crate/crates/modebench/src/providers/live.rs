//! OpenAI-compatible chat-completion client.
//!
//! All six supported vendors expose the same wire shape, so a profile's
//! endpoint URL is the only vendor-specific configuration. The API key is
//! read from the environment variable named by the profile's
//! `credential_ref` and sent as a bearer token.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{
    CompletionRequest, CompletionResponse, Provider, ProviderError, ProviderProfile, TokenUsage,
};

pub struct LiveProvider {
    client: reqwest::blocking::Client,
}

impl LiveProvider {
    pub fn new(timeout: Duration) -> Result<LiveProvider, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport { status: None, message: e.to_string() })?;
        Ok(LiveProvider { client })
    }
}

impl Default for LiveProvider {
    fn default() -> LiveProvider {
        LiveProvider::new(Duration::from_secs(120)).expect("default HTTP client")
    }
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
    /// Separate reasoning channel some vendors return; concatenated before
    /// the answer text so downstream treatment is uniform.
    #[serde(default)]
    reasoning_content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

/// Extracts `(raw_text, token_usage)` from a chat-completion response body.
pub fn parse_chat_completion(body: &str) -> Result<(String, Option<TokenUsage>), ProviderError> {
    let parsed: ChatCompletion = serde_json::from_str(body)
        .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ProviderError::MalformedResponse("no choices in response".into()))?;
    let content = choice.message.content.unwrap_or_default();
    let raw_text = match choice.message.reasoning_content {
        Some(reasoning) if !reasoning.is_empty() => format!("{reasoning}\n{content}"),
        _ => content,
    };
    let usage = parsed
        .usage
        .map(|u| TokenUsage { prompt: u.prompt_tokens, completion: u.completion_tokens });
    Ok((raw_text, usage))
}

impl Provider for LiveProvider {
    fn complete(
        &self,
        profile: &ProviderProfile,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, ProviderError> {
        let endpoint = profile.endpoint.as_deref().ok_or_else(|| ProviderError::Misconfigured {
            agent_id: profile.agent_id.clone(),
            reason: "LIVE profile without endpoint".into(),
        })?;
        let body = json!({
            "model": profile.model_name,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.sampling.max_tokens,
        });
        let mut builder = self.client.post(endpoint).json(&body);
        if let Some(var) = &profile.credential_ref {
            let key =
                std::env::var(var).map_err(|_| ProviderError::MissingCredential(var.clone()))?;
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let response = builder.send().map_err(|e| ProviderError::Transport {
            status: None,
            message: e.to_string(),
        })?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let status = response.status();
        let text = response.text().map_err(|e| ProviderError::Transport {
            status: Some(status.as_u16()),
            message: e.to_string(),
        })?;
        match status.as_u16() {
            200..=299 => {
                let (raw_text, token_usage) = parse_chat_completion(&text)?;
                Ok(CompletionResponse { raw_text, latency_ms, token_usage, retries: 0 })
            }
            429 => Err(ProviderError::RateLimited { message: truncate(&text) }),
            // Credential and routing problems will not heal by retrying.
            401 | 403 | 404 => {
                Err(ProviderError::Rejected { status: status.as_u16(), message: truncate(&text) })
            }
            code => Err(ProviderError::Transport {
                status: Some(code),
                message: truncate(&text),
            }),
        }
    }
}

fn truncate(text: &str) -> String {
    const LIMIT: usize = 300;
    if text.len() <= LIMIT {
        text.to_string()
    } else {
        let mut end = LIMIT;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &text[..end])
    }
}
