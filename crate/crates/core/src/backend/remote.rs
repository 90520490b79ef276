//! OpenAI-compatible chat-completions client.

use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::Serialize;
use serde_json::Value;
use ureq::Agent;

use super::{validate_messages, Backend, ChatMessage, SamplingParams};
use crate::error::{Result, VmlError};

pub const API_KEY_ENV: &str = "VML_API_KEY";

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

/// Blocking client for `POST {base_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    backoff_base: Duration,
    agent: Agent,
}

enum Attempt {
    Done(String),
    Transient(VmlError),
    Fatal(VmlError),
}

impl RemoteBackend {
    /// Reads the bearer token from `VML_API_KEY` when set.
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        RemoteBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            backoff_base: Duration::from_secs(1),
            agent,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Sets the first retry delay; later delays double it.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    fn attempt(&self, body: &str, timeout: Duration) -> Attempt {
        let mut req = self
            .agent
            .post(&self.endpoint())
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return classify_transport(e),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return classify_transport(e),
        };
        if !(200..300).contains(&status) {
            let err = VmlError::ProviderError {
                status,
                message: error_message(&text),
            };
            return if status == 429 || status >= 500 {
                Attempt::Transient(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        match extract_content(&text) {
            Ok(content) => Attempt::Done(content),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

fn classify_transport(e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed
        | ureq::Error::Protocol(_)
        | ureq::Error::BodyStalled => Attempt::Transient(VmlError::BackendUnavailable(e.to_string())),
        other => Attempt::Fatal(VmlError::BackendUnavailable(other.to_string())),
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .or_else(|| v.get("error"))
                .or_else(|| v.get("message"))
                .and_then(|m| m.as_str().map(str::to_string))
        })
        .unwrap_or_else(|| body.chars().take(500).collect())
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_content(body: &str) -> Result<String> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| VmlError::MalformedProviderResponse(format!("invalid JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| VmlError::MalformedProviderResponse("missing choices[0].message.content".into()))
}

impl Backend for RemoteBackend {
    fn chat(&self, messages: &[ChatMessage], sampling: &SamplingParams) -> Result<String> {
        validate_messages(messages)?;
        let body = serde_json::to_string(&RequestBody {
            model: &self.model,
            messages,
            temperature: sampling.temperature,
            max_tokens: sampling.max_tokens,
        })?;
        let mut delay = self.backoff_base;
        let mut attempt = 0;
        loop {
            debug!("POST {} attempt {}", self.endpoint(), attempt + 1);
            match self.attempt(&body, sampling.timeout) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(e) if attempt >= sampling.retries => return Err(e),
                Attempt::Transient(e) => {
                    warn!("transient backend failure, retrying in {delay:?}: {e}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }

    fn describe(&self) -> String {
        format!("openai({}, {})", self.base_url, self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves the given raw responses in order and records request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut headers = String::new();
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
                log.lock()
                    .unwrap()
                    .push(format!("{headers}\n{}", String::from_utf8(buf).unwrap()));
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn ok_body(content: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn quick() -> SamplingParams {
        SamplingParams {
            timeout: Duration::from_secs(5),
            ..SamplingParams::with_temperature(0.25)
        }
    }

    #[test]
    fn sends_model_and_temperature() {
        let (url, seen) = serve(vec![(200, ok_body("Output: [7.53]"))]);
        let b = RemoteBackend::new(url, "llama-3-70b").with_api_key(Some("k".into()));
        let out = b.chat(&[ChatMessage::user("hi")], &quick()).unwrap();
        assert_eq!(out, "Output: [7.53]");
        let req = seen.lock().unwrap()[0].clone();
        assert!(req.to_ascii_lowercase().contains("authorization: bearer k"));
        let body: Value = serde_json::from_str(req.split("\r\n\n").last().unwrap().trim()).unwrap();
        assert_eq!(body["model"], "llama-3-70b");
        assert_eq!(body["temperature"], 0.25);
        assert_eq!(body["messages"][0]["role"], "user");
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, seen) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, ok_body("done"))]);
        let b = RemoteBackend::new(url, "m").with_backoff(Duration::from_millis(1));
        assert_eq!(b.chat(&[ChatMessage::user("hi")], &quick()).unwrap(), "done");
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_error_is_not_retried() {
        let body = r#"{"error": {"message": "bad model"}}"#.to_string();
        let (url, seen) = serve(vec![(400, body)]);
        let b = RemoteBackend::new(url, "m").with_backoff(Duration::from_millis(1));
        match b.chat(&[ChatMessage::user("hi")], &quick()) {
            Err(VmlError::ProviderError { status, message }) => {
                assert_eq!(status, 400);
                assert_eq!(message, "bad model");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn missing_content_is_malformed() {
        let (url, _) = serve(vec![(200, r#"{"choices": []}"#.into())]);
        let b = RemoteBackend::new(url, "m");
        assert!(matches!(
            b.chat(&[ChatMessage::user("hi")], &quick()),
            Err(VmlError::MalformedProviderResponse(_))
        ));
    }

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let b = RemoteBackend::new(format!("http://127.0.0.1:{port}/v1"), "m").with_backoff(Duration::from_millis(1));
        let r = b.chat(&[ChatMessage::user("hi")], &quick());
        assert!(matches!(r, Err(VmlError::BackendUnavailable(_))), "{r:?}");
    }
}
