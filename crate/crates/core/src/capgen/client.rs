//! External model clients: wire format, retry policy, deterministic stubs
//! and the HTTP implementation.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::{EmbedRequest, Embedder, MediaSlice, StubEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    VideoCaptioner,
    KeyframeCaptioner,
    AudioCaptioner,
    Asr,
    IntegratorLlm,
    JudgeLlm,
    Embedder,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::VideoCaptioner => "video_captioner",
            Role::KeyframeCaptioner => "keyframe_captioner",
            Role::AudioCaptioner => "audio_captioner",
            Role::Asr => "asr",
            Role::IntegratorLlm => "integrator_llm",
            Role::JudgeLlm => "judge_llm",
            Role::Embedder => "embedder",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server rejected request: {0}")]
    Rejected(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Timeout | ClientError::Transport(_))
    }
}

/// Request body sent to every role. `fields` carries role-specific inputs
/// (constituent captions, question/answer pairs, hints).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRequest {
    pub role: Role,
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, serde_json::Value>,
}

impl ClientRequest {
    pub fn new(role: Role, video_id: impl Into<String>) -> Self {
        Self {
            role,
            video_id: video_id.into(),
            start_s: None,
            end_s: None,
            prompt: None,
            fields: BTreeMap::new(),
        }
    }

    pub fn span(mut self, start_s: f64, end_s: f64) -> Self {
        self.start_s = Some(start_s);
        self.end_s = Some(end_s);
        self
    }

    pub fn prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = Some(prompt.into());
        self
    }

    pub fn field(mut self, key: &str, value: impl Serialize) -> Self {
        self.fields
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
        self
    }

    pub fn field_str(&self, key: &str) -> Option<&str> {
        self.fields.get(key).and_then(|v| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClientResponse {
    pub text: String,
    /// ASR only: whether the clip contained speech.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_speech: Option<bool>,
}

impl ClientResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            has_speech: None,
        }
    }
}

pub trait ModelClient: Send + Sync {
    fn role(&self) -> Role;
    fn call(&self, request: &ClientRequest) -> Result<ClientResponse, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: 0,
        }
    }
}

/// Calls `client`, retrying timeouts and transport errors up to the policy limit.
pub fn call_with_retry(
    client: &dyn ModelClient,
    request: &ClientRequest,
    policy: &RetryPolicy,
) -> Result<ClientResponse, ClientError> {
    let attempts = policy.max_attempts.max(1);
    let mut last = ClientError::Timeout;
    for attempt in 0..attempts {
        match client.call(request) {
            Ok(r) => return Ok(r),
            Err(e) if e.is_retryable() => {
                log::debug!("{} attempt {} failed: {e}", client.role(), attempt + 1);
                last = e;
                if policy.backoff_ms > 0 && attempt + 1 < attempts {
                    std::thread::sleep(Duration::from_millis(policy.backoff_ms << attempt));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Deterministic 64-bit digest of a request under a seed.
pub fn request_digest(seed: u64, request: &ClientRequest) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(serde_json::to_vec(request).unwrap_or_default());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

const PHRASES: [&str; 8] = [
    "a person moves across the frame",
    "the camera pans slowly to the right",
    "a crowd gathers near the stage",
    "bright lights flicker in the background",
    "someone gestures toward the screen",
    "the scene shifts to a wider view",
    "an object is placed on the table",
    "people react with visible excitement",
];

const SOUNDS: [&str; 6] = [
    "a steady musical tone plays",
    "background music continues",
    "a man is speaking",
    "a woman is speaking",
    "people clap and cheer",
    "ambient noise fills the room",
];

/// Offline client producing canned responses chosen by request digest.
///
/// * captioners echo the requested span followed by a canned phrase;
/// * ASR returns the `transcript_hint` field verbatim, reporting no speech when it is empty;
/// * the integrator and judge answer in the structured JSON format the prompts ask for.
#[derive(Debug, Clone)]
pub struct StubClient {
    role: Role,
    seed: u64,
}

impl StubClient {
    pub fn new(role: Role, seed: u64) -> Self {
        Self { role, seed }
    }

    fn pick<'a>(&self, pool: &'a [&'a str], request: &ClientRequest) -> &'a str {
        pool[(request_digest(self.seed, request) % pool.len() as u64) as usize]
    }

    fn span_label(request: &ClientRequest) -> String {
        match (request.start_s, request.end_s) {
            (Some(a), Some(b)) => format!("{a:.3}-{b:.3}"),
            _ => "full".to_string(),
        }
    }

    /// Two dialogues per video built from the `events` field (`[{span, caption}]`).
    fn instruction_dialogues(&self, request: &ClientRequest) -> ClientResponse {
        let events = request.fields.get("events").and_then(|v| v.as_array()).cloned().unwrap_or_default();
        let get = |i: usize, k: &str| {
            events
                .get(i)
                .and_then(|e| e.get(k))
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .to_string()
        };
        let mut dialogues = Vec::new();
        if !events.is_empty() {
            dialogues.push(serde_json::json!({"turns": [
                {"role": "user", "text": "What happens at the beginning of the video?"},
                {"role": "assistant", "text": format!("{}, {}", get(0, "span"), get(0, "caption"))},
            ]}));
            let last = events.len() - 1;
            dialogues.push(serde_json::json!({"turns": [
                {"role": "user", "text": "How does the video end?"},
                {"role": "assistant", "text": format!("{}, {}", get(last, "span"), get(last, "caption"))},
                {"role": "user", "text": "How many distinct events are there?"},
                {"role": "assistant", "text": format!("There are {} events.", events.len())},
            ]}));
        }
        ClientResponse::text(serde_json::json!({ "dialogues": dialogues }).to_string())
    }

    fn integrate(&self, request: &ClientRequest) -> ClientResponse {
        if request.field_str("task") == Some("instruction_dialogue") {
            return self.instruction_dialogues(request);
        }
        let n_visual = request.fields.get("n_visual").and_then(|v| v.as_u64()).unwrap_or(0);
        let n_audio = request.fields.get("n_audio").and_then(|v| v.as_u64()).unwrap_or(0);
        let visual = request.field_str("visual_summary").unwrap_or("").trim_end_matches('.');
        let audio = request.field_str("audio_summary").unwrap_or("").trim_end_matches('.');
        let tags: Vec<&str> = match (n_visual > 0, n_audio > 0) {
            (true, false) => vec!["visual-only"],
            (false, true) => vec!["audio-only"],
            (false, false) => vec![],
            (true, true) => {
                let d = request_digest(self.seed, request);
                let pool = ["complementary", "synchronicity", "enhancement", "scene-aware", "causality"];
                let first = pool[(d % pool.len() as u64) as usize];
                let second = pool[((d >> 8) % pool.len() as u64) as usize];
                if first == second { vec![first] } else { vec![first, second] }
            }
        };
        let caption = match (visual.is_empty(), audio.is_empty()) {
            (false, false) => format!("{visual}; meanwhile {audio}."),
            (false, true) => format!("{visual}."),
            (true, false) => format!("{audio}."),
            (true, true) => "Nothing notable happens.".to_string(),
        };
        let dynamics = n_visual + n_audio > 1;
        ClientResponse::text(
            serde_json::json!({
                "caption": caption,
                "correlations": tags,
                "temporal_dynamics": dynamics,
            })
            .to_string(),
        )
    }

    fn judge(&self, request: &ClientRequest) -> ClientResponse {
        if let (Some(answer), Some(pred)) = (request.field_str("answer"), request.field_str("prediction")) {
            let norm = |s: &str| crate::metrics::text::tokenize(s).join(" ");
            let yes = norm(answer) == norm(pred);
            return ClientResponse::text(
                serde_json::json!({"pred": if yes { "yes" } else { "no" }, "score": if yes { 5 } else { 1 }})
                    .to_string(),
            );
        }
        let caption = request.field_str("caption").unwrap_or("");
        let d = request_digest(self.seed, request);
        let pool = ["complementary", "synchronicity", "enhancement"];
        let tag = pool[(d % pool.len() as u64) as usize];
        let dynamics = caption.contains(';') || caption.contains("then") || caption.contains("meanwhile");
        ClientResponse::text(
            serde_json::json!({"correlations": [tag], "temporal_dynamics": dynamics}).to_string(),
        )
    }
}

impl ModelClient for StubClient {
    fn role(&self) -> Role {
        self.role
    }

    fn call(&self, request: &ClientRequest) -> Result<ClientResponse, ClientError> {
        Ok(match self.role {
            Role::VideoCaptioner | Role::KeyframeCaptioner => ClientResponse::text(format!(
                "[{} {}] {}",
                self.role,
                Self::span_label(request),
                self.pick(&PHRASES, request)
            )),
            Role::AudioCaptioner => ClientResponse::text(format!(
                "[{} {}] {}.",
                self.role,
                Self::span_label(request),
                self.pick(&SOUNDS, request)
            )),
            Role::Asr => {
                let hint = request.field_str("transcript_hint").unwrap_or("").trim();
                ClientResponse {
                    text: hint.to_string(),
                    has_speech: Some(!hint.is_empty()),
                }
            }
            Role::IntegratorLlm => self.integrate(request),
            Role::JudgeLlm => self.judge(request),
            Role::Embedder => return Err(ClientError::Rejected("use the Embedder interface".into())),
        })
    }
}

/// Client returning the same text for every request.
#[derive(Debug, Clone)]
pub struct FixedClient {
    role: Role,
    response: ClientResponse,
}

impl FixedClient {
    pub fn new(role: Role, response: ClientResponse) -> Self {
        Self { role, response }
    }

    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self::new(role, ClientResponse::text(text))
    }
}

impl ModelClient for FixedClient {
    fn role(&self) -> Role {
        self.role
    }

    fn call(&self, _request: &ClientRequest) -> Result<ClientResponse, ClientError> {
        Ok(self.response.clone())
    }
}

type Responder = dyn Fn(&ClientRequest) -> Result<ClientResponse, ClientError> + Send + Sync;

/// Client backed by a closure.
pub struct FnClient {
    role: Role,
    f: Box<Responder>,
}

impl FnClient {
    pub fn new<F>(role: Role, f: F) -> Self
    where
        F: Fn(&ClientRequest) -> Result<ClientResponse, ClientError> + Send + Sync + 'static,
    {
        Self { role, f: Box::new(f) }
    }
}

impl ModelClient for FnClient {
    fn role(&self) -> Role {
        self.role
    }

    fn call(&self, request: &ClientRequest) -> Result<ClientResponse, ClientError> {
        (self.f)(request)
    }
}

/// Client replaying a fixed sequence of outcomes, then repeating the last.
pub struct ScriptedClient {
    role: Role,
    script: Mutex<VecDeque<Result<ClientResponse, ClientError>>>,
    calls: Mutex<Vec<ClientRequest>>,
}

impl ScriptedClient {
    pub fn new(role: Role, script: Vec<Result<ClientResponse, ClientError>>) -> Self {
        Self {
            role,
            script: Mutex::new(script.into()),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Requests received so far, in order.
    pub fn calls(&self) -> Vec<ClientRequest> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl ModelClient for ScriptedClient {
    fn role(&self) -> Role {
        self.role
    }

    fn call(&self, request: &ClientRequest) -> Result<ClientResponse, ClientError> {
        self.calls.lock().expect("poisoned").push(request.clone());
        let mut script = self.script.lock().expect("poisoned");
        if script.len() > 1 {
            script.pop_front().expect("non-empty")
        } else {
            script.front().cloned().unwrap_or(Err(ClientError::Rejected("empty script".into())))
        }
    }
}

/// JSON-over-HTTP client: POSTs the request body to `endpoint` and expects a
/// `ClientResponse` body back.
pub struct HttpClient {
    role: Role,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

fn map_ureq(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::Timeout(_) => ClientError::Timeout,
        ureq::Error::StatusCode(code) if code >= 500 => ClientError::Transport(format!("HTTP {code}")),
        ureq::Error::StatusCode(code) => ClientError::Rejected(format!("HTTP {code}")),
        other => ClientError::Transport(other.to_string()),
    }
}

impl HttpClient {
    pub fn new(role: Role, endpoint: impl Into<String>, timeout: Duration, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            role,
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    fn post(&self, body: &serde_json::Value) -> Result<String, ClientError> {
        let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq)?;
        resp.body_mut().read_to_string().map_err(map_ureq)
    }
}

impl ModelClient for HttpClient {
    fn role(&self) -> Role {
        self.role
    }

    fn call(&self, request: &ClientRequest) -> Result<ClientResponse, ClientError> {
        let body = serde_json::to_value(request).map_err(|e| ClientError::BadResponse(e.to_string()))?;
        let text = self.post(&body)?;
        serde_json::from_str(&text).map_err(|e| ClientError::BadResponse(e.to_string()))
    }
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

/// Embedder over HTTP. Sends `{role, video_id, modality, start_s, end_s}`
/// and expects `{"embedding": [...]}`; the reply is normalized.
pub struct HttpEmbedder {
    inner: HttpClient,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, api_key: Option<String>) -> Self {
        Self {
            inner: HttpClient::new(Role::Embedder, endpoint, timeout, api_key),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, request: &EmbedRequest<'_>) -> Result<Vec<f64>, ClientError> {
        let body = serde_json::json!({
            "role": Role::Embedder,
            "video_id": request.video_id,
            "modality": request.modality,
            "start_s": request.span.start(),
            "end_s": request.span.end(),
        });
        let text = self.inner.post(&body)?;
        let reply: EmbedReply = serde_json::from_str(&text).map_err(|e| ClientError::BadResponse(e.to_string()))?;
        super::embed::normalize(&reply.embedding).ok_or_else(|| ClientError::BadResponse("zero embedding".into()))
    }
}

/// Every model role the pipeline talks to.
#[derive(Clone)]
pub struct ClientSet {
    pub video_captioner: Arc<dyn ModelClient>,
    pub keyframe_captioner: Arc<dyn ModelClient>,
    pub audio_captioner: Arc<dyn ModelClient>,
    pub asr: Arc<dyn ModelClient>,
    pub integrator: Arc<dyn ModelClient>,
    pub judge: Arc<dyn ModelClient>,
    pub embedder: Arc<dyn Embedder>,
    pub retry: RetryPolicy,
}

impl ClientSet {
    pub fn stub(seed: u64) -> Self {
        Self {
            video_captioner: Arc::new(StubClient::new(Role::VideoCaptioner, seed)),
            keyframe_captioner: Arc::new(StubClient::new(Role::KeyframeCaptioner, seed)),
            audio_captioner: Arc::new(StubClient::new(Role::AudioCaptioner, seed)),
            asr: Arc::new(StubClient::new(Role::Asr, seed)),
            integrator: Arc::new(StubClient::new(Role::IntegratorLlm, seed)),
            judge: Arc::new(StubClient::new(Role::JudgeLlm, seed)),
            embedder: Arc::new(StubEmbedder::default()),
            retry: RetryPolicy::default(),
        }
    }

    /// Live clients from per-role endpoint URLs. Roles without an endpoint
    /// fall back to the stub.
    pub fn live(endpoints: &BTreeMap<Role, String>, timeout: Duration, api_key: Option<String>, seed: u64) -> Self {
        let mut set = Self::stub(seed);
        let mk = |role: Role| -> Option<Arc<dyn ModelClient>> {
            endpoints
                .get(&role)
                .map(|url| Arc::new(HttpClient::new(role, url.clone(), timeout, api_key.clone())) as Arc<dyn ModelClient>)
        };
        if let Some(c) = mk(Role::VideoCaptioner) {
            set.video_captioner = c;
        }
        if let Some(c) = mk(Role::KeyframeCaptioner) {
            set.keyframe_captioner = c;
        }
        if let Some(c) = mk(Role::AudioCaptioner) {
            set.audio_captioner = c;
        }
        if let Some(c) = mk(Role::Asr) {
            set.asr = c;
        }
        if let Some(c) = mk(Role::IntegratorLlm) {
            set.integrator = c;
        }
        if let Some(c) = mk(Role::JudgeLlm) {
            set.judge = c;
        }
        if let Some(url) = endpoints.get(&Role::Embedder) {
            set.embedder = Arc::new(HttpEmbedder::new(url.clone(), timeout, api_key));
        }
        set
    }

    pub fn call(&self, client: &dyn ModelClient, request: &ClientRequest) -> Result<ClientResponse, ClientError> {
        call_with_retry(client, request, &self.retry)
    }
}

/// Helper for callers embedding one clip of raw audio.
pub fn embed_audio_clip(
    embedder: &dyn Embedder,
    video_id: &str,
    span: crate::manifest::TimeInterval,
    samples: &[f64],
    sample_rate: u32,
) -> Result<Vec<f64>, ClientError> {
    embedder.embed(&EmbedRequest {
        video_id,
        modality: crate::manifest::Modality::Audio,
        span,
        media: MediaSlice::Audio { samples, sample_rate },
    })
}

/// Helper for callers embedding a run of frame thumbnails.
pub fn embed_frames(
    embedder: &dyn Embedder,
    video_id: &str,
    span: crate::manifest::TimeInterval,
    thumbs: &[crate::framediff::Thumbnail],
) -> Result<Vec<f64>, ClientError> {
    embedder.embed(&EmbedRequest {
        video_id,
        modality: crate::manifest::Modality::Visual,
        span,
        media: MediaSlice::Frames(thumbs),
    })
}
