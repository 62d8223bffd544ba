use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable holding the bearer credential for [`HttpBackend`].
pub const API_KEY_ENV: &str = "AI_EXPOSURE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptStage {
    Stage1,
    Stage2,
}

impl PromptStage {
    pub fn template_id(self) -> &'static str {
        match self {
            PromptStage::Stage1 => "task-extraction-v1",
            PromptStage::Stage2 => "exposure-labelling-v1",
        }
    }

    pub fn number(self) -> u8 {
        match self {
            PromptStage::Stage1 => 1,
            PromptStage::Stage2 => 2,
        }
    }
}

impl fmt::Display for PromptStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.template_id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_template_id: PromptStage,
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(stage: PromptStage, prompt: String, model: impl Into<String>) -> Self {
        GenerationRequest {
            prompt_template_id: stage,
            prompt,
            model: model.into(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Worth retrying: rate limits, server errors, dropped connections.
    #[error("transient backend error: {0}")]
    Transient(String),
    /// Retrying will not help: bad credentials, bad endpoint, malformed envelope.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for &B {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

/// Chat-completions style adapter: one POST per request, reply text taken
/// from the first choice.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpBackend {
            endpoint: endpoint.into(),
            api_key,
            agent: config.into(),
        }
    }

    /// Credential comes from [`API_KEY_ENV`] when set.
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(endpoint, key, timeout)
    }
}

fn parse_envelope(body: &Value) -> Result<(String, Option<u64>, Option<u64>), BackendError> {
    let text = body
        .pointer("/choices/0/message/content")
        .or_else(|| body.pointer("/choices/0/text"))
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Unavailable("response has no choices[0] text".into()))?;
    let usage = |k: &str| body.pointer(&format!("/usage/{k}")).and_then(Value::as_u64);
    Ok((
        text.to_string(),
        usage("prompt_tokens"),
        usage("completion_tokens"),
    ))
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let payload = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        let started = Instant::now();
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(&payload)
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(BackendError::Unavailable(format!("HTTP {status}")));
        }
        let body: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Unavailable(format!("unreadable response body: {e}")))?;
        let (text, prompt_tokens, completion_tokens) = parse_envelope(&body)?;
        Ok(GenerationResponse {
            text,
            prompt_tokens,
            completion_tokens,
            latency: started.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serve one canned HTTP reply and hand back the request body it received.
    fn serve_once(
        status: u16,
        body: &'static str,
    ) -> (String, thread::JoinHandle<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            (headers, String::from_utf8(buf).unwrap())
        });
        (url, handle)
    }

    #[test]
    fn posts_chat_payload_and_reads_first_choice() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"{\"ok\":1}"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#;
        let (url, server) = serve_once(200, reply);
        let backend = HttpBackend::new(url, Some("secret".into()), Duration::from_secs(5));
        let req = GenerationRequest::new(PromptStage::Stage1, "hello".into(), "some-model");
        let resp = backend.generate(&req).unwrap();
        assert_eq!(resp.text, "{\"ok\":1}");
        assert_eq!(resp.prompt_tokens, Some(12));
        assert_eq!(resp.completion_tokens, Some(3));

        let (headers, body) = server.join().unwrap();
        assert!(headers
            .to_ascii_lowercase()
            .contains("authorization: bearer secret"));
        let sent: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(sent["model"], "some-model");
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "hello");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn status_classes() {
        for (status, transient) in [(429, true), (503, true), (401, false), (404, false)] {
            let (url, server) = serve_once(status, "{}");
            let backend = HttpBackend::new(url, None, Duration::from_secs(5));
            let req = GenerationRequest::new(PromptStage::Stage2, "x".into(), "m");
            let err = backend.generate(&req).unwrap_err();
            assert_eq!(
                matches!(err, BackendError::Transient(_)),
                transient,
                "status {status}"
            );
            server.join().unwrap();
        }
    }

    #[test]
    fn connection_refused_is_transient() {
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let backend = HttpBackend::new(
            format!("http://127.0.0.1:{port}/"),
            None,
            Duration::from_secs(2),
        );
        let req = GenerationRequest::new(PromptStage::Stage1, "x".into(), "m");
        assert!(matches!(
            backend.generate(&req),
            Err(BackendError::Transient(_))
        ));
    }

    #[test]
    fn envelope_without_choices_is_rejected() {
        assert!(parse_envelope(&json!({"choices": []})).is_err());
        let legacy = parse_envelope(&json!({"choices": [{"text": "abc"}]})).unwrap();
        assert_eq!(legacy.0, "abc");
    }
}
