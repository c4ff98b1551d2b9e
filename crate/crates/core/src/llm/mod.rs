//! Chat sessions, the prompt catalog and the staged conversations.
//!
//! Every request carries the full history of its session. Providers are
//! interchangeable: an OpenAI-compatible HTTP client for live runs, and
//! scripted or replayed transcripts for deterministic tests.

mod prompts;
mod provider;
mod workflow;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sha256_hex, ModelError};

pub use prompts::{ids, PromptCatalog, PromptTemplate};
pub use provider::{
    HttpProvider, HttpProviderConfig, RateLimiter, RecordingProvider, ReplayProvider, ScriptRule,
    ScriptedProvider, API_KEY_ENV,
};
pub use workflow::{
    extract_answer_expression, extract_code, generate_netlist, mentions_advanced_modules,
    parse_extraction, recognize_circuit, regenerate_after_lint, solve_problem, target_variables,
    ExtractedAnswer, GeneratedNetlist, Inset, InsetResult, InsetSource, NetlistRequest,
    Recognition, SolutionText, SolveRequest,
};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider error ({context}): {message}")]
    Provider { context: String, message: String },
    #[error("protocol error ({context}): {message}")]
    Protocol { context: String, message: String },
    #[error("template error: {0}")]
    Template(String),
    #[error("extraction error for `{target}`: {message}")]
    Extraction { target: String, message: String },
    #[error(transparent)]
    Storage(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

/// An image sent with a message. Only the digest is serialized; the bytes
/// live in the workspace under `name`.
#[derive(Clone, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub mime: String,
    pub sha256: String,
    #[serde(skip)]
    pub bytes: Arc<Vec<u8>>,
}

impl Attachment {
    pub fn new(name: impl Into<String>, mime: impl Into<String>, bytes: Vec<u8>) -> Self {
        Attachment {
            name: name.into(),
            mime: mime.into(),
            sha256: sha256_hex(&bytes),
            bytes: Arc::new(bytes),
        }
    }

    pub fn png(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Attachment::new(name, "image/png", bytes)
    }

    /// Mime type from the file extension; PNG unless it says JPEG.
    pub fn from_file_name(name: &str, bytes: Vec<u8>) -> Self {
        let lower = name.to_ascii_lowercase();
        let mime = if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
            "image/jpeg"
        } else {
            "image/png"
        };
        Attachment::new(name, mime, bytes)
    }
}

impl PartialEq for Attachment {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.mime == other.mime && self.sha256 == other.sha256
    }
}

impl fmt::Debug for Attachment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Attachment")
            .field("name", &self.name)
            .field("mime", &self.mime)
            .field("sha256", &self.sha256)
            .field("len", &self.bytes.len())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Attachment>,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            text: text.into(),
            image: None,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            text: text.into(),
            image: None,
        }
    }
}

/// Digest identifying a request: temperature plus the serialized history.
pub fn request_hash(messages: &[Message], temperature: f64) -> String {
    #[derive(Serialize)]
    struct Keyed<'a> {
        temperature: f64,
        messages: &'a [Message],
    }
    let json = serde_json::to_string(&Keyed {
        temperature,
        messages,
    })
    .expect("messages serialize");
    sha256_hex(json.as_bytes())
}

/// Sends a full history and returns the assistant's reply text.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, messages: &[Message], temperature: f64) -> Result<String, String>;
}

/// One multi-turn conversation. History only grows; a failed turn leaves it
/// unchanged.
pub struct ChatSession {
    provider: Arc<dyn ChatProvider>,
    temperature: f64,
    context: String,
    messages: Vec<Message>,
}

impl ChatSession {
    pub fn new(provider: Arc<dyn ChatProvider>, temperature: f64, context: impl Into<String>) -> Self {
        ChatSession {
            provider,
            temperature,
            context: context.into(),
            messages: Vec::new(),
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Records an earlier exchange without calling the provider.
    pub fn replay(&mut self, user: Message, reply: &str) {
        self.messages.push(user);
        self.messages.push(Message::assistant(reply));
    }

    pub fn send(&mut self, text: impl Into<String>) -> Result<String, LlmError> {
        self.send_message(Message::user(text))
    }

    pub fn send_with_image(&mut self, text: impl Into<String>, image: Attachment) -> Result<String, LlmError> {
        self.send_message(Message {
            role: Role::User,
            text: text.into(),
            image: Some(image),
        })
    }

    fn send_message(&mut self, message: Message) -> Result<String, LlmError> {
        self.messages.push(message);
        match self.provider.complete(&self.messages, self.temperature) {
            Ok(reply) => {
                self.messages.push(Message::assistant(reply.clone()));
                Ok(reply)
            }
            Err(message) => {
                self.messages.pop();
                Err(LlmError::Provider {
                    context: self.context.clone(),
                    message,
                })
            }
        }
    }

    pub fn protocol_error(&self, message: impl Into<String>) -> LlmError {
        LlmError::Protocol {
            context: self.context.clone(),
            message: message.into(),
        }
    }

    /// History as pretty JSON, for the workspace.
    pub fn transcript_json(&self) -> String {
        #[derive(Serialize)]
        struct Transcript<'a> {
            context: &'a str,
            temperature: f64,
            messages: &'a [Message],
        }
        serde_json::to_string_pretty(&Transcript {
            context: &self.context,
            temperature: self.temperature,
            messages: &self.messages,
        })
        .expect("transcript serializes")
    }

    /// Continues a session saved with [`ChatSession::transcript_json`].
    /// Image bytes are not part of the transcript, so only text-only
    /// sessions resume faithfully.
    pub fn restore(provider: Arc<dyn ChatProvider>, transcript: &str) -> Result<Self, LlmError> {
        #[derive(Deserialize)]
        struct Transcript {
            context: String,
            temperature: f64,
            messages: Vec<Message>,
        }
        let t: Transcript = serde_json::from_str(transcript).map_err(|e| LlmError::Protocol {
            context: "transcript".into(),
            message: e.to_string(),
        })?;
        Ok(ChatSession {
            provider,
            temperature: t.temperature,
            context: t.context,
            messages: t.messages,
        })
    }
}

/// Sampling temperature per LLM trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub trial1: f64,
    pub trial2: f64,
    pub trial3: f64,
    pub trial4: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            trial1: 0.0,
            trial2: 0.2,
            trial3: 0.2,
            trial4: 0.2,
        }
    }
}

impl TemperatureSchedule {
    pub fn for_trial(&self, trial: u8) -> f64 {
        match trial {
            0 | 1 => self.trial1,
            2 => self.trial2,
            3 => self.trial3,
            _ => self.trial4,
        }
    }
}

/// Yes/no gate reply: trimmed, lowercased, punctuation removed, then exactly
/// `yes` or `no`.
pub fn normalize_gate(reply: &str) -> Option<bool> {
    let cleaned: String = reply
        .trim()
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !matches!(c, '“' | '”' | '‘' | '’'))
        .collect::<String>()
        .trim()
        .to_lowercase();
    match cleaned.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}
