//! JSON API over a [`ReviewStore`].
//!
//! | method | path | body | success |
//! |---|---|---|---|
//! | GET | `/healthz` | | `{"ok":true}` |
//! | GET | `/videos?state=&page_size=&page_token=` | | `{"videos":[VideoSummary],"next_page_token":str?}` |
//! | GET | `/videos/{id}/events` | | `VideoEvents` |
//! | POST | `/events/{item}/flag` | `{"base_revision":n,"reason":s,"author":s?}` | `Applied` |
//! | POST | `/events/{item}/correction` | `{"base_revision":n,"interval":{"start_s","end_s"}?,"caption":s?,"author":s?}` | `Applied` |
//! | POST | `/events/{item}/approve` | `{"base_revision":n,"author":s?}` | `Applied` |
//! | GET | `/export` | | manifest JSONL |
//!
//! `item` is `video_id:event_id`. `Applied` is
//! `{"item_id","state","reason"?,"revision","corrected"}`.
//!
//! Errors are `{"error":code,"message":s,...}` with codes `bad-request`
//! (400), `unauthorized` (401), `not-found` (404, echoes `id`), `conflict`
//! (409, carries `current_revision`), `illegal-transition` (409) and
//! `validation` (422, names `invariant`).

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use super::store::{item_id, Applied, Mutation, ReviewAction, ReviewError, ReviewStore, ReviewView};
use crate::manifest::{write_manifest, ReviewState, TimeInterval, VideoRecord};
use crate::mediaio::VideoAssets;

const MAX_PAGE_SIZE: usize = 1000;
const TOKEN_PREFIX: &str = "after:";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ReviewStore>,
    pub token: Option<String>,
    pub page_size: usize,
    /// Root of per-video asset directories, for media paths in responses.
    pub media_root: Option<PathBuf>,
    pub allowed_origin: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: json!({"error": code, "message": message.into()}) }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    fn not_found(id: &str) -> Self {
        let mut e = Self::new(StatusCode::NOT_FOUND, "not-found", format!("unknown id {id}"));
        e.body["id"] = json!(id);
        e
    }

    fn validation(invariant: &str, detail: impl Into<String>) -> Self {
        let mut e = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", format!("{invariant} violated: {}", detail.into()));
        e.body["invariant"] = json!(invariant);
        e
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match &e {
            ReviewError::NotFound { id, .. } => ApiError::not_found(id),
            ReviewError::Conflict { current, .. } => {
                let mut out = ApiError::new(StatusCode::CONFLICT, "conflict", e.to_string());
                out.body["current_revision"] = json!(current);
                out
            }
            ReviewError::IllegalTransition { .. } => ApiError::new(StatusCode::CONFLICT, "illegal-transition", e.to_string()),
            ReviewError::Validation { invariant, detail } => ApiError::validation(invariant, detail.clone()),
            ReviewError::Storage(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Default, Deserialize)]
pub struct ListQuery {
    pub state: Option<String>,
    pub page_size: Option<usize>,
    pub page_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub duration_s: f64,
    pub review_state: ReviewState,
    pub split: crate::manifest::Split,
    pub omni_events: usize,
    pub visual_events: usize,
    pub audio_events: usize,
    pub flagged_items: usize,
    pub approved_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPage {
    pub videos: Vec<VideoSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_page_token: Option<String>,
}

fn parse_state(s: &str) -> ApiResult<ReviewState> {
    match s {
        "unreviewed" | "pending" => Ok(ReviewState::Unreviewed),
        "flagged" => Ok(ReviewState::Flagged),
        "corrected" => Ok(ReviewState::Corrected),
        "approved" => Ok(ReviewState::Approved),
        other => Err(ApiError::bad_request(format!("unknown state filter {other:?}"))),
    }
}

pub fn encode_page_token(last_video_id: &str) -> String {
    URL_SAFE_NO_PAD.encode(format!("{TOKEN_PREFIX}{last_video_id}"))
}

fn decode_page_token(token: &str) -> ApiResult<String> {
    let bad = || ApiError::bad_request("invalid page token");
    let bytes = URL_SAFE_NO_PAD.decode(token).map_err(|_| bad())?;
    let text = String::from_utf8(bytes).map_err(|_| bad())?;
    text.strip_prefix(TOKEN_PREFIX).map(str::to_string).ok_or_else(bad)
}

fn summarize(view: &ReviewView, r: &VideoRecord) -> VideoSummary {
    let prefix = format!("{}:", r.video_id);
    let items = view.items.range(prefix.clone()..).take_while(|(k, _)| k.starts_with(&prefix));
    let (mut flagged, mut approved) = (0, 0);
    for (_, s) in items {
        match s.state {
            super::store::ItemState::Flagged(_) => flagged += 1,
            super::store::ItemState::Approved => approved += 1,
            _ => {}
        }
    }
    VideoSummary {
        video_id: r.video_id.clone(),
        duration_s: r.duration_s,
        review_state: view.video_state(r),
        split: r.split,
        omni_events: r.omni_events.len(),
        visual_events: r.visual_events.len(),
        audio_events: r.audio_events.len(),
        flagged_items: flagged,
        approved_items: approved,
    }
}

/// One page of videos in ascending id order.
pub fn list_videos(view: &ReviewView, q: &ListQuery, default_page_size: usize) -> ApiResult<VideoPage> {
    let filter = q.state.as_deref().map(parse_state).transpose()?;
    let size = q.page_size.unwrap_or(default_page_size).clamp(1, MAX_PAGE_SIZE);
    let after = q.page_token.as_deref().map(decode_page_token).transpose()?;
    let mut records: Vec<&VideoRecord> = view.manifest.records.iter().collect();
    records.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let mut matching = records
        .into_iter()
        .filter(|r| after.as_deref().is_none_or(|a| r.video_id.as_str() > a))
        .filter(|r| filter.is_none_or(|f| view.video_state(r) == f));
    let videos: Vec<VideoSummary> = matching.by_ref().take(size).map(|r| summarize(view, r)).collect();
    let next_page_token = match (videos.last(), matching.next()) {
        (Some(last), Some(_)) => Some(encode_page_token(&last.video_id)),
        _ => None,
    };
    Ok(VideoPage { videos, next_page_token })
}

fn with_review<T: Serialize>(view: &ReviewView, video_id: &str, event_id: &str, event: &T) -> Value {
    let mut v = serde_json::to_value(event).expect("event serializes");
    let id = item_id(video_id, event_id);
    v["review"] = serde_json::to_value(view.status(&id)).expect("status serializes");
    v["item_id"] = json!(id);
    v
}

/// Full event detail for one video.
pub fn video_events(view: &ReviewView, video_id: &str, media_root: Option<&std::path::Path>) -> ApiResult<Value> {
    let r = view.record(video_id).ok_or_else(|| ApiError::not_found(video_id))?;
    let lane = |evs: Vec<Value>| Value::Array(evs);
    let mut out = json!({
        "video_id": r.video_id,
        "duration_s": r.duration_s,
        "fps": r.fps,
        "resolution": r.resolution,
        "split": r.split,
        "review_state": view.video_state(r),
        "visual_events": lane(r.visual_events.iter().map(|e| with_review(view, video_id, &e.id, e)).collect()),
        "audio_events": lane(r.audio_events.iter().map(|e| with_review(view, video_id, &e.id, e)).collect()),
        "omni_events": lane(r.omni_events.iter().map(|e| with_review(view, video_id, &e.id, e)).collect()),
    });
    if let Some(root) = media_root {
        let assets = VideoAssets::new(root.join(video_id));
        out["media"] = json!({
            "frames_dir": assets.frames_dir(),
            "audio": assets.audio_path(),
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagBody {
    pub base_revision: u64,
    pub reason: String,
    #[serde(default)]
    pub author: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInterval {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionBody {
    pub base_revision: u64,
    #[serde(default)]
    pub interval: Option<RawInterval>,
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub author: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproveBody {
    pub base_revision: u64,
    #[serde(default)]
    pub author: String,
}

async fn submit(state: &AppState, mutation: Mutation) -> ApiResult<Json<Applied>> {
    let store = state.store.clone();
    let applied = tokio::task::spawn_blocking(move || store.submit(mutation))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(applied))
}

async fn healthz() -> Json<Value> {
    Json(json!({"ok": true}))
}

async fn get_videos(State(st): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<Json<VideoPage>> {
    Ok(Json(list_videos(&st.store.view(), &q, st.page_size)?))
}

async fn get_events(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(video_events(&st.store.view(), &id, st.media_root.as_deref())?))
}

async fn post_flag(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FlagBody>, JsonRejection>,
) -> ApiResult<Json<Applied>> {
    let Json(b) = body?;
    let action = ReviewAction::Flag { reason: b.reason };
    submit(&st, Mutation { item_id: id, base_revision: b.base_revision, author: b.author, action }).await
}

async fn post_correction(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<CorrectionBody>, JsonRejection>,
) -> ApiResult<Json<Applied>> {
    let Json(b) = body?;
    let interval = b
        .interval
        .map(|r| {
            TimeInterval::new(r.start_s, r.end_s)
                .map_err(|_| ApiError::validation("interval", format!("[{}, {}) is not a valid interval", r.start_s, r.end_s)))
        })
        .transpose()?;
    let action = ReviewAction::Correct { interval, caption: b.caption };
    submit(&st, Mutation { item_id: id, base_revision: b.base_revision, author: b.author, action }).await
}

async fn post_approve(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ApproveBody>, JsonRejection>,
) -> ApiResult<Json<Applied>> {
    let Json(b) = body?;
    submit(&st, Mutation { item_id: id, base_revision: b.base_revision, author: b.author, action: ReviewAction::Approve }).await
}

async fn get_export(State(st): State<AppState>) -> ApiResult<Response> {
    let manifest = st.store.view().export()?;
    let mut buf = Vec::new();
    write_manifest(&manifest, &mut buf).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], buf).into_response())
}

async fn require_token(State(st): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = st.token.as_deref() else {
        return next.run(req).await;
    };
    if req.method() == Method::OPTIONS || req.uri().path() == "/healthz" {
        return next.run(req).await;
    }
    let ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == token);
    if ok {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

fn cors(origin: Option<&str>) -> CorsLayer {
    let allow = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE])
}

pub fn router(state: AppState) -> Router {
    let origin = state.allowed_origin.clone();
    Router::new()
        .route("/healthz", get(healthz))
        .route("/videos", get(get_videos))
        .route("/videos/{id}/events", get(get_events))
        .route("/events/{id}/flag", post(post_flag))
        .route("/events/{id}/correction", post(post_correction))
        .route("/events/{id}/approve", post(post_approve))
        .route("/export", get(get_export))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(cors(origin.as_deref()))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reviewd::store::tests::fixture;
    use crate::reviewd::store::{ItemState, ItemStatus};

    fn view_with(items: &[(&str, ItemState)]) -> ReviewView {
        let mut v = ReviewView::new(fixture());
        for (id, s) in items {
            v.items.insert(id.to_string(), ItemStatus { state: s.clone(), revision: 1, corrected: false });
        }
        v
    }

    #[test]
    fn pages_of_two_then_one() {
        let v = view_with(&[]);
        let q = ListQuery { page_size: Some(2), ..Default::default() };
        let p1 = list_videos(&v, &q, 50).unwrap();
        assert_eq!(p1.videos.iter().map(|s| s.video_id.as_str()).collect::<Vec<_>>(), ["vid-a", "vid-b"]);
        let q2 = ListQuery { page_size: Some(2), page_token: p1.next_page_token, ..Default::default() };
        let p2 = list_videos(&v, &q2, 50).unwrap();
        assert_eq!(p2.videos.iter().map(|s| s.video_id.as_str()).collect::<Vec<_>>(), ["vid-c"]);
        assert!(p2.next_page_token.is_none());
    }

    #[test]
    fn empty_manifest_empty_page() {
        let v = ReviewView::new(crate::manifest::DatasetManifest::default());
        let p = list_videos(&v, &ListQuery::default(), 50).unwrap();
        assert!(p.videos.is_empty() && p.next_page_token.is_none());
    }

    #[test]
    fn state_filter() {
        let v = view_with(&[("vid-b:o1", ItemState::Flagged("x".into()))]);
        let q = ListQuery { state: Some("flagged".into()), ..Default::default() };
        let p = list_videos(&v, &q, 50).unwrap();
        assert_eq!(p.videos.len(), 1);
        assert_eq!(p.videos[0].video_id, "vid-b");
        assert_eq!(p.videos[0].flagged_items, 1);
        assert!(list_videos(&v, &ListQuery { state: Some("bogus".into()), ..Default::default() }, 50).is_err());
    }

    #[test]
    fn bad_tokens_are_400() {
        let v = view_with(&[]);
        for t in ["!!!", "Zm9v", &URL_SAFE_NO_PAD.encode([0xff, 0xfe])] {
            let err = list_videos(&v, &ListQuery { page_token: Some(t.to_string()), ..Default::default() }, 50).unwrap_err();
            assert_eq!(err.status, StatusCode::BAD_REQUEST, "{t}");
        }
    }

    #[test]
    fn events_mirror_manifest() {
        let v = view_with(&[]);
        let out = video_events(&v, "vid-a", Some(std::path::Path::new("/data"))).unwrap();
        let rec = fixture().records[0].clone();
        assert_eq!(out["omni_events"].as_array().unwrap().len(), rec.omni_events.len());
        assert_eq!(out["omni_events"][1]["interval"]["start_s"], 10.0);
        assert_eq!(out["audio_events"][0]["item_id"], "vid-a:a0");
        assert_eq!(out["audio_events"][0]["review"]["state"], "pending");
        assert_eq!(out["media"]["audio"], "/data/vid-a/audio.wav");
        let err = video_events(&v, "nope", None).unwrap_err();
        assert_eq!(err.status, StatusCode::NOT_FOUND);
        assert_eq!(err.body["id"], "nope");
    }
}
