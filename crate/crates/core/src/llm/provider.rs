//! Chat providers: OpenAI-compatible HTTP, scripted rules, and transcript
//! record/replay.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{request_hash, ChatProvider, LlmError, Message};

pub const API_KEY_ENV: &str = "VERISPICE_API_KEY";

/// Minimum spacing between requests, shared by every session holding it.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let interval = if requests == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / requests as f64)
        };
        RateLimiter {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    /// Blocks until the caller's slot.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("limiter lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

fn default_key_env() -> String {
    API_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

/// Client for an OpenAI-compatible `chat/completions` endpoint. Images are
/// sent inline as data URLs.
pub struct HttpProvider {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

impl HttpProvider {
    pub fn new(config: &HttpProviderConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Provider {
                context: "http client".into(),
                message: e.to_string(),
            })?;
        Ok(HttpProvider {
            url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
            client,
            limiter: config.requests_per_minute.map(RateLimiter::per_minute),
        })
    }

    pub fn request_body(&self, messages: &[Message], temperature: f64) -> Value {
        let messages: Vec<Value> = messages
            .iter()
            .map(|m| match &m.image {
                None => json!({"role": m.role.to_string(), "content": m.text}),
                Some(img) => {
                    let data = base64::engine::general_purpose::STANDARD.encode(img.bytes.as_slice());
                    json!({
                        "role": m.role.to_string(),
                        "content": [
                            {"type": "text", "text": m.text},
                            {"type": "image_url", "image_url": {"url": format!("data:{};base64,{data}", img.mime)}},
                        ],
                    })
                }
            })
            .collect();
        json!({"model": self.model, "temperature": temperature, "messages": messages})
    }
}

fn reply_text(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, messages: &[Message], temperature: f64) -> Result<String, String> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let mut req = self.client.post(&self.url).json(&self.request_body(messages, temperature));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| format!("request to {} failed: {e}", self.url))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| format!("reading response: {e}"))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(300).collect();
            return Err(format!("HTTP {status}: {snippet}"));
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| format!("response is not JSON: {e}"))?;
        reply_text(&body).ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

/// A canned reply selected by the latest user message, earlier history and
/// temperature. Rules are tried in order; the first match wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    /// Substring of the latest user message.
    #[serde(default)]
    pub when: String,
    /// Further substrings the latest user message must also contain.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also: Vec<String>,
    /// Substrings that must each appear in some earlier message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub reply: String,
    /// Fail the request with this message instead of replying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptRule {
    pub fn new(when: &str, reply: &str) -> Self {
        ScriptRule {
            when: when.into(),
            also: Vec::new(),
            history: Vec::new(),
            temperature: None,
            reply: reply.into(),
            error: None,
        }
    }

    pub fn and(mut self, needle: &str) -> Self {
        self.also.push(needle.into());
        self
    }

    pub fn with_history(mut self, needle: &str) -> Self {
        self.history.push(needle.into());
        self
    }

    pub fn at_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    fn matches(&self, messages: &[Message], temperature: f64) -> bool {
        let Some((last, earlier)) = messages.split_last() else {
            return false;
        };
        last.text.contains(&self.when)
            && self.also.iter().all(|a| last.text.contains(a.as_str()))
            && self
                .history
                .iter()
                .all(|h| earlier.iter().any(|m| m.text.contains(h.as_str())))
            && self.temperature.is_none_or(|t| (t - temperature).abs() < 1e-9)
    }
}

/// Stateless rule-based provider: the reply depends only on the request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedProvider {
    pub rules: Vec<ScriptRule>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedProvider { rules }
    }

    pub fn rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Reads `[[rules]]` from TOML, or `{"rules": [...]}` from `.json`.
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Template(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| LlmError::Template(format!("{}: {e}", path.display())))
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, messages: &[Message], temperature: f64) -> Result<String, String> {
        match self.rules.iter().find(|r| r.matches(messages, temperature)) {
            Some(ScriptRule { error: Some(e), .. }) => Err(e.clone()),
            Some(r) => Ok(r.reply.clone()),
            None => {
                let last = messages.last().map(|m| m.text.as_str()).unwrap_or("");
                let head: String = last.chars().take(80).collect();
                Err(format!("no scripted reply for request starting {head:?}"))
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptEntry {
    hash: String,
    reply: String,
    #[serde(default)]
    temperature: f64,
    #[serde(default)]
    prompt: String,
}

/// Serves replies recorded by [`RecordingProvider`], keyed by request hash.
#[derive(Debug, Clone, Default)]
pub struct ReplayProvider {
    replies: HashMap<String, String>,
}

impl ReplayProvider {
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Template(format!("{}: {e}", path.display())))?;
        let mut replies = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| LlmError::Template(format!("{}:{}: {e}", path.display(), i + 1)))?;
            replies.insert(e.hash, e.reply);
        }
        Ok(ReplayProvider { replies })
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, messages: &[Message], temperature: f64) -> Result<String, String> {
        let hash = request_hash(messages, temperature);
        self.replies
            .get(&hash)
            .cloned()
            .ok_or_else(|| format!("no recorded reply for request {hash}"))
    }
}

/// Wraps a provider and appends every successful exchange to a JSON-lines
/// transcript readable by [`ReplayProvider`].
pub struct RecordingProvider {
    inner: Arc<dyn ChatProvider>,
    path: PathBuf,
    lock: Mutex<()>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn ChatProvider>, path: impl Into<PathBuf>) -> Self {
        RecordingProvider {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl ChatProvider for RecordingProvider {
    fn complete(&self, messages: &[Message], temperature: f64) -> Result<String, String> {
        let reply = self.inner.complete(messages, temperature)?;
        let entry = TranscriptEntry {
            hash: request_hash(messages, temperature),
            reply: reply.clone(),
            temperature,
            prompt: messages
                .last()
                .map(|m| m.text.chars().take(120).collect())
                .unwrap_or_default(),
        };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let _guard = self.lock.lock().expect("transcript lock");
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| format!("recording transcript {}: {e}", self.path.display()))?;
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;

    use super::*;
    use crate::llm::{Attachment, ChatSession};

    #[test]
    fn scripted_rules_match_in_order() {
        let p = ScriptedProvider::default()
            .rule(ScriptRule::new("solve", "second try").at_temperature(0.2))
            .rule(ScriptRule::new("solve", "corrected").with_history("HUMAN FIX"))
            .rule(ScriptRule::new("solve", "first try"));
        let msgs = |t: &str| vec![Message::user(t)];
        assert_eq!(p.complete(&msgs("please solve"), 0.0).unwrap(), "first try");
        assert_eq!(p.complete(&msgs("please solve"), 0.2).unwrap(), "second try");
        let hist = vec![Message::user("HUMAN FIX here"), Message::assistant("ok"), Message::user("solve")];
        assert_eq!(p.complete(&hist, 0.0).unwrap(), "corrected");
        assert!(p.complete(&msgs("other"), 0.0).unwrap_err().contains("no scripted reply"));
    }

    #[test]
    fn also_requires_every_substring() {
        let p = ScriptedProvider::default()
            .rule(ScriptRule::new("solve", "p2").and("[P:p2]"))
            .rule(ScriptRule::new("solve", "any"));
        assert_eq!(p.complete(&[Message::user("solve [P:p2]")], 0.0).unwrap(), "p2");
        assert_eq!(p.complete(&[Message::user("solve [P:p1]")], 0.0).unwrap(), "any");
    }

    #[test]
    fn scripted_error_rule_surfaces_as_provider_error() {
        let mut r = ScriptRule::new("solve", "");
        r.error = Some("timeout after 300 s".into());
        let mut s = ChatSession::new(Arc::new(ScriptedProvider::new(vec![r])), 0.2, "p7/llm2");
        let err = s.send("solve it").unwrap_err();
        let text = err.to_string();
        assert!(matches!(err, LlmError::Provider { .. }));
        assert!(text.contains("p7/llm2") && text.contains("timeout"));
    }

    #[test]
    fn scripted_loads_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        fs::write(
            &path,
            "[[rules]]\nwhen = \"ready\"\nreply = \"Yes\"\n\n[[rules]]\nwhen = \"x\"\ntemperature = 0.2\nhistory = [\"a\"]\nreply = \"y\"\n",
        )
        .unwrap();
        let p = ScriptedProvider::from_file(&path).unwrap();
        assert_eq!(p.rules.len(), 2);
        assert_eq!(p.rules[1].temperature, Some(0.2));
    }

    #[test]
    fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let scripted: Arc<dyn ChatProvider> = Arc::new(
            ScriptedProvider::default()
                .rule(ScriptRule::new("one", "r1"))
                .rule(ScriptRule::new("two", "r2")),
        );
        let rec: Arc<dyn ChatProvider> = Arc::new(RecordingProvider::new(scripted, &path));
        let mut a = ChatSession::new(rec, 0.0, "a");
        a.send_with_image("one", Attachment::png("d.png", vec![9; 16])).unwrap();
        a.send("two").unwrap();

        let replay = ReplayProvider::from_file(&path).unwrap();
        assert_eq!(replay.len(), 2);
        let mut b = ChatSession::new(Arc::new(replay), 0.0, "b");
        b.send_with_image("one", Attachment::png("d.png", vec![9; 16])).unwrap();
        b.send("two").unwrap();
        assert_eq!(a.messages(), b.messages());
        assert!(b.send("three").is_err());
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::per_minute(1200);
        let start = Instant::now();
        for _ in 0..4 {
            l.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(140));
    }

    fn serve_once(response: &'static str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut head = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let reply = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response}",
                response.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
            format!("{head}\n{}", String::from_utf8(body).unwrap())
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn http_provider_speaks_chat_completions() {
        let (endpoint, server) = serve_once(r#"{"choices":[{"message":{"role":"assistant","content":"Yes"}}]}"#);
        let cfg = HttpProviderConfig {
            endpoint,
            model: "test-model".into(),
            api_key_env: "VERISPICE_TEST_UNSET_KEY".into(),
            timeout_secs: 10,
            requests_per_minute: None,
        };
        let p = HttpProvider::new(&cfg).unwrap();
        let msgs = vec![Message {
            role: crate::llm::Role::User,
            text: "ready?".into(),
            image: Some(Attachment::png("d.png", vec![1, 2, 3])),
        }];
        assert_eq!(p.complete(&msgs, 0.2).unwrap(), "Yes");
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /v1/chat/completions"));
        assert!(request.contains("\"model\":\"test-model\""));
        assert!(request.contains("data:image/png;base64,AQID"));
        assert!(request.contains("\"temperature\":0.2"));
    }

    #[test]
    fn http_provider_reports_unreachable_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let cfg = HttpProviderConfig {
            endpoint: format!("http://{addr}"),
            model: "m".into(),
            api_key_env: default_key_env(),
            timeout_secs: 2,
            requests_per_minute: None,
        };
        let err = HttpProvider::new(&cfg).unwrap().complete(&[Message::user("x")], 0.0).unwrap_err();
        assert!(err.contains("failed"));
    }
}
