//! Review state: per-event items, the append-only audit log and snapshots.
//!
//! Every accepted mutation is applied to a private copy of the current view,
//! appended to the log, then published. Readers hold an `Arc` to a published
//! view and never observe a partially applied mutation.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::manifest::{write_manifest, DatasetManifest, ManifestError, ReviewState, TimeInterval, VideoRecord};

const LOG_FORMAT: &str = "omnivale-review-log";
const LOG_FILE: &str = "audit.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown {kind} {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("stale base_revision {given} for {item}, current is {current}")]
    Conflict { item: String, given: u64, current: u64 },
    #[error("cannot {action} an item in state {from}")]
    IllegalTransition { action: &'static str, from: &'static str },
    #[error("{invariant} violated: {detail}")]
    Validation { invariant: String, detail: String },
    #[error("audit log: {0}")]
    Storage(String),
}

impl From<std::io::Error> for ReviewError {
    fn from(e: std::io::Error) -> Self {
        ReviewError::Storage(e.to_string())
    }
}

/// Item ids are `video_id:event_id`.
pub fn item_id(video_id: &str, event_id: &str) -> String {
    format!("{video_id}:{event_id}")
}

fn split_item_id(id: &str) -> Option<(&str, &str)> {
    id.rsplit_once(':').filter(|(v, e)| !v.is_empty() && !e.is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "lowercase")]
pub enum ItemState {
    #[default]
    Pending,
    Flagged(String),
    Corrected,
    Approved,
}

impl ItemState {
    pub fn name(&self) -> &'static str {
        match self {
            ItemState::Pending => "pending",
            ItemState::Flagged(_) => "flagged",
            ItemState::Corrected => "corrected",
            ItemState::Approved => "approved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ItemStatus {
    #[serde(flatten)]
    pub state: ItemState,
    pub revision: u64,
    /// Whether any correction has been accepted for this item.
    pub corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum ReviewAction {
    Flag {
        reason: String,
    },
    Correct {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interval: Option<TimeInterval>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        caption: Option<String>,
    },
    Approve,
}

impl ReviewAction {
    fn name(&self) -> &'static str {
        match self {
            ReviewAction::Flag { .. } => "flag",
            ReviewAction::Correct { .. } => "correct",
            ReviewAction::Approve => "approve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub item_id: String,
    pub base_revision: u64,
    #[serde(default)]
    pub author: String,
    #[serde(flatten)]
    pub action: ReviewAction,
}

/// One audit log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub mutation: Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub item_id: String,
    #[serde(flatten)]
    pub status: ItemStatus,
}

/// Reviewed manifest plus per-item state. Items exist for every omni and
/// modal event; absent entries are pending at revision 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewView {
    pub seq: u64,
    pub manifest: DatasetManifest,
    pub items: BTreeMap<String, ItemStatus>,
}

impl ReviewView {
    pub fn new(manifest: DatasetManifest) -> Self {
        Self { seq: 0, manifest, items: BTreeMap::new() }
    }

    /// Rebuilds the view by applying `entries` in order.
    pub fn replay<'a>(base: DatasetManifest, entries: impl IntoIterator<Item = &'a AuditEntry>) -> Result<Self, ReviewError> {
        let mut view = Self::new(base);
        for e in entries {
            view.apply(&e.mutation)?;
            view.seq = e.seq;
        }
        Ok(view)
    }

    pub fn record(&self, video_id: &str) -> Option<&VideoRecord> {
        self.manifest.get(video_id)
    }

    pub fn status(&self, item: &str) -> ItemStatus {
        self.items.get(item).cloned().unwrap_or_default()
    }

    fn event_exists(record: &VideoRecord, event_id: &str) -> bool {
        record.omni_events.iter().any(|e| e.id == event_id) || record.modal_event(event_id).is_some()
    }

    /// Applies one mutation or leaves the view untouched.
    pub fn apply(&mut self, m: &Mutation) -> Result<Applied, ReviewError> {
        let not_found = || ReviewError::NotFound { kind: "event", id: m.item_id.clone() };
        let (video_id, event_id) = split_item_id(&m.item_id).ok_or_else(not_found)?;
        let record = self.manifest.get(video_id).ok_or_else(not_found)?;
        if !Self::event_exists(record, event_id) {
            return Err(not_found());
        }
        let current = self.status(&m.item_id);
        if m.base_revision != current.revision {
            return Err(ReviewError::Conflict { item: m.item_id.clone(), given: m.base_revision, current: current.revision });
        }
        let next_state = match (&current.state, &m.action) {
            (ItemState::Pending, ReviewAction::Flag { reason }) => ItemState::Flagged(reason.clone()),
            (ItemState::Pending, ReviewAction::Approve) => ItemState::Approved,
            (ItemState::Flagged(_), ReviewAction::Correct { .. }) => ItemState::Corrected,
            (ItemState::Corrected, ReviewAction::Approve) => ItemState::Approved,
            (from, action) => return Err(ReviewError::IllegalTransition { action: action.name(), from: from.name() }),
        };
        let mut corrected = current.corrected;
        if let ReviewAction::Correct { interval, caption } = &m.action {
            let updated = corrected_record(record, event_id, *interval, caption.as_deref())?;
            *self.manifest.get_mut(video_id).expect("record exists") = updated;
            corrected = true;
        }
        let status = ItemStatus { state: next_state, revision: current.revision + 1, corrected };
        self.items.insert(m.item_id.clone(), status.clone());
        Ok(Applied { item_id: m.item_id.clone(), status })
    }

    /// Video-level state derived from its items; untouched videos keep the
    /// manifest's value.
    pub fn video_state(&self, record: &VideoRecord) -> ReviewState {
        let prefix = format!("{}:", record.video_id);
        let touched: Vec<&ItemStatus> = self
            .items
            .range(prefix.clone()..)
            .take_while(|(k, _)| k.starts_with(&prefix))
            .map(|(_, s)| s)
            .collect();
        if touched.is_empty() {
            return record.review_state;
        }
        if touched.iter().any(|s| matches!(s.state, ItemState::Flagged(_))) {
            return ReviewState::Flagged;
        }
        let any_corrected = touched.iter().any(|s| s.corrected);
        let all_omni_approved = !record.omni_events.is_empty()
            && record.omni_events.iter().all(|e| {
                self.items.get(&item_id(&record.video_id, &e.id)).is_some_and(|s| s.state == ItemState::Approved)
            });
        match (all_omni_approved, any_corrected) {
            (true, false) => ReviewState::Approved,
            (_, true) => ReviewState::Corrected,
            (false, false) => record.review_state,
        }
    }

    /// The reviewed manifest with derived video states applied.
    pub fn export(&self) -> Result<DatasetManifest, ReviewError> {
        let mut out = self.manifest.clone();
        for r in &mut out.records {
            r.review_state = self.video_state(r);
        }
        out.validate().map_err(validation)?;
        Ok(out)
    }
}

fn validation(e: ManifestError) -> ReviewError {
    match e {
        ManifestError::Invariant { kind, detail, .. } => ReviewError::Validation { invariant: kind.as_str().into(), detail },
        ManifestError::InvalidInterval { start, end } => {
            ReviewError::Validation { invariant: "interval".into(), detail: format!("[{start}, {end}) is not a valid interval") }
        }
        other => ReviewError::Validation { invariant: "manifest".into(), detail: other.to_string() },
    }
}

fn corrected_record(
    record: &VideoRecord,
    event_id: &str,
    interval: Option<TimeInterval>,
    caption: Option<&str>,
) -> Result<VideoRecord, ReviewError> {
    if interval.is_none() && caption.is_none() {
        return Err(ReviewError::Validation { invariant: "empty-correction".into(), detail: "neither interval nor caption given".into() });
    }
    let mut r = record.clone();
    if let Some(o) = r.omni_events.iter_mut().find(|e| e.id == event_id) {
        if let Some(iv) = interval {
            o.interval = iv;
        }
        if let Some(c) = caption {
            o.omni_caption = Some(c.to_string());
        }
    } else {
        let e = r
            .visual_events
            .iter_mut()
            .chain(r.audio_events.iter_mut())
            .find(|e| e.id == event_id)
            .expect("caller checked the event exists");
        if let Some(iv) = interval {
            e.interval = iv;
        }
        if let Some(c) = caption {
            e.caption = Some(c.to_string());
        }
    }
    r.validate().map_err(validation)?;
    Ok(r)
}

/// Hex SHA-256 of the canonical serialization, binding logs to their base.
pub fn manifest_digest(m: &DatasetManifest) -> String {
    let mut buf = Vec::new();
    write_manifest(m, &mut buf).expect("validated manifest serializes");
    hex::encode(Sha256::digest(&buf))
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    format: String,
    manifest_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    manifest_sha256: String,
    view: ReviewView,
}

/// Reads every entry of an audit log, checking it belongs to `base`.
pub fn read_audit_log(path: &Path, base: &DatasetManifest) -> Result<Vec<AuditEntry>, ReviewError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header: LogHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l?).map_err(|e| ReviewError::Storage(format!("bad log header: {e}")))?,
        None => return Ok(Vec::new()),
    };
    if header.format != LOG_FORMAT || header.manifest_sha256 != manifest_digest(base) {
        return Err(ReviewError::Storage(format!("{} was written against a different manifest", path.display())));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: AuditEntry =
            serde_json::from_str(&line).map_err(|err| ReviewError::Storage(format!("log line {}: {err}", i + 2)))?;
        out.push(e);
    }
    Ok(out)
}

struct Writer {
    log: Option<File>,
    dir: Option<PathBuf>,
    since_snapshot: usize,
}

pub struct ReviewStore {
    base_digest: String,
    view: RwLock<Arc<ReviewView>>,
    writer: Mutex<Writer>,
    snapshot_every: usize,
}

impl ReviewStore {
    /// Memory-only store; nothing is persisted.
    pub fn in_memory(manifest: DatasetManifest) -> Result<Self, ReviewError> {
        manifest.validate().map_err(validation)?;
        Ok(Self {
            base_digest: manifest_digest(&manifest),
            view: RwLock::new(Arc::new(ReviewView::new(manifest))),
            writer: Mutex::new(Writer { log: None, dir: None, since_snapshot: 0 }),
            snapshot_every: 0,
        })
    }

    /// Opens or creates the audit log in `dir`, restoring from the latest
    /// snapshot plus the log tail. `snapshot_every` of 0 disables snapshots.
    pub fn open(manifest: DatasetManifest, dir: &Path, snapshot_every: usize) -> Result<Self, ReviewError> {
        manifest.validate().map_err(validation)?;
        fs::create_dir_all(dir)?;
        let digest = manifest_digest(&manifest);
        let log_path = dir.join(LOG_FILE);
        let entries = if log_path.exists() { read_audit_log(&log_path, &manifest)? } else { Vec::new() };

        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot = fs::read(&snap_path)
            .ok()
            .and_then(|b| serde_json::from_slice::<Snapshot>(&b).ok())
            .filter(|s| s.manifest_sha256 == digest && entries.iter().any(|e| e.seq == s.view.seq));
        let mut view = match snapshot {
            Some(s) => s.view,
            None => ReviewView::new(manifest),
        };
        let restored = view.seq;
        for e in entries.iter().filter(|e| e.seq > restored) {
            view.apply(&e.mutation)?;
            view.seq = e.seq;
        }

        let fresh = !log_path.exists() || fs::metadata(&log_path)?.len() == 0;
        let mut log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if fresh {
            let header = LogHeader { format: LOG_FORMAT.into(), manifest_sha256: digest.clone() };
            writeln!(log, "{}", serde_json::to_string(&header).expect("header serializes"))?;
            log.sync_data()?;
        }
        Ok(Self {
            base_digest: digest,
            view: RwLock::new(Arc::new(view)),
            writer: Mutex::new(Writer { log: Some(log), dir: Some(dir.to_path_buf()), since_snapshot: 0 }),
            snapshot_every,
        })
    }

    /// The current published view.
    pub fn view(&self) -> Arc<ReviewView> {
        self.view.read().expect("view lock").clone()
    }

    /// Validates, persists and publishes one mutation.
    pub fn submit(&self, mutation: Mutation) -> Result<Applied, ReviewError> {
        let mut w = self.writer.lock().expect("writer lock");
        let mut next = (*self.view()).clone();
        let applied = next.apply(&mutation)?;
        next.seq += 1;
        if let Some(log) = w.log.as_mut() {
            let entry = AuditEntry { seq: next.seq, timestamp_ms: now_ms(), mutation };
            let line = serde_json::to_string(&entry).expect("entry serializes");
            writeln!(log, "{line}")?;
            log.sync_data()?;
        }
        let next = Arc::new(next);
        *self.view.write().expect("view lock") = next.clone();

        w.since_snapshot += 1;
        if self.snapshot_every > 0 && w.since_snapshot >= self.snapshot_every {
            if let Some(dir) = w.dir.clone() {
                match self.write_snapshot(&dir, &next) {
                    Ok(()) => w.since_snapshot = 0,
                    Err(e) => log::warn!("snapshot failed: {e}"),
                }
            }
        }
        Ok(applied)
    }

    fn write_snapshot(&self, dir: &Path, view: &ReviewView) -> Result<(), ReviewError> {
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let snap = Snapshot { manifest_sha256: self.base_digest.clone(), view: view.clone() };
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &snap).map_err(|e| ReviewError::Storage(e.to_string()))?;
            f.sync_data()?;
        }
        fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub fn audit_log_path(dir: &Path) -> PathBuf {
    dir.join(LOG_FILE)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::manifest::tests::{iv, sample_record};

    pub fn fixture() -> DatasetManifest {
        let mut b = sample_record();
        b.video_id = "vid-b".into();
        let mut c = sample_record();
        c.video_id = "vid-c".into();
        DatasetManifest::new(vec![sample_record(), b, c])
    }

    fn m(item: &str, rev: u64, action: ReviewAction) -> Mutation {
        Mutation { item_id: item.into(), base_revision: rev, author: "t".into(), action }
    }

    fn flag(item: &str, rev: u64) -> Mutation {
        m(item, rev, ReviewAction::Flag { reason: "boundary".into() })
    }

    fn caption(item: &str, rev: u64, text: &str) -> Mutation {
        m(item, rev, ReviewAction::Correct { interval: None, caption: Some(text.into()) })
    }

    #[test]
    fn flag_correct_approve_reaches_revision_three() {
        let store = ReviewStore::in_memory(fixture()).unwrap();
        store.submit(flag("vid-a:o0", 0)).unwrap();
        store.submit(caption("vid-a:o0", 1, "fixed")).unwrap();
        let last = store.submit(m("vid-a:o0", 2, ReviewAction::Approve)).unwrap();
        assert_eq!(last.status.state, ItemState::Approved);
        assert_eq!(last.status.revision, 3);
        assert_eq!(store.view().record("vid-a").unwrap().omni_events[0].omni_caption.as_deref(), Some("fixed"));
    }

    #[test]
    fn illegal_transitions_rejected() {
        let store = ReviewStore::in_memory(fixture()).unwrap();
        assert!(matches!(store.submit(caption("vid-a:o0", 0, "x")), Err(ReviewError::IllegalTransition { .. })));
        store.submit(m("vid-a:o0", 0, ReviewAction::Approve)).unwrap();
        assert!(matches!(store.submit(flag("vid-a:o0", 1)), Err(ReviewError::IllegalTransition { .. })));
        assert_eq!(store.view().status("vid-a:o0").revision, 1);
    }

    #[test]
    fn stale_revision_conflicts_and_retries_conflict() {
        let store = ReviewStore::in_memory(fixture()).unwrap();
        store.submit(flag("vid-a:o1", 0)).unwrap();
        let err = store.submit(flag("vid-a:o1", 0)).unwrap_err();
        assert!(matches!(err, ReviewError::Conflict { given: 0, current: 1, .. }), "{err}");
    }

    #[test]
    fn truncating_correction_names_invariant() {
        let store = ReviewStore::in_memory(fixture()).unwrap();
        store.submit(flag("vid-a:o0", 0)).unwrap();
        let bad = m("vid-a:o0", 1, ReviewAction::Correct { interval: Some(iv(0.0, 5.0)), caption: None });
        match store.submit(bad) {
            Err(ReviewError::Validation { invariant, .. }) => assert_eq!(invariant, "no-truncation"),
            other => panic!("{other:?}"),
        }
        assert_eq!(store.view().status("vid-a:o0").revision, 1);
        assert_eq!(store.view().record("vid-a").unwrap().omni_events[0].interval, iv(0.0, 10.0));
    }

    #[test]
    fn unknown_items_not_found() {
        let store = ReviewStore::in_memory(fixture()).unwrap();
        for id in ["vid-z:o0", "vid-a:o9", "nocolon", ":o0"] {
            assert!(matches!(store.submit(flag(id, 0)), Err(ReviewError::NotFound { .. })), "{id}");
        }
    }

    #[test]
    fn export_without_changes_is_identity() {
        let store = ReviewStore::in_memory(fixture()).unwrap();
        assert_eq!(store.view().export().unwrap(), fixture());
    }

    #[test]
    fn caption_correction_changes_only_that_field() {
        let store = ReviewStore::in_memory(fixture()).unwrap();
        store.submit(flag("vid-b:a1", 0)).unwrap();
        store.submit(caption("vid-b:a1", 1, "a dog barks")).unwrap();
        let out = store.view().export().unwrap();
        let mut expected = fixture();
        let rec = expected.get_mut("vid-b").unwrap();
        rec.audio_events[1].caption = Some("a dog barks".into());
        rec.review_state = ReviewState::Corrected;
        assert_eq!(out, expected);
    }

    #[test]
    fn video_state_derivation() {
        let store = ReviewStore::in_memory(fixture()).unwrap();
        store.submit(flag("vid-a:o0", 0)).unwrap();
        store.submit(m("vid-b:o0", 0, ReviewAction::Approve)).unwrap();
        store.submit(m("vid-c:o0", 0, ReviewAction::Approve)).unwrap();
        store.submit(m("vid-c:o1", 0, ReviewAction::Approve)).unwrap();
        let v = store.view();
        let states: Vec<_> = v.manifest.records.iter().map(|r| v.video_state(r)).collect();
        assert_eq!(states, vec![ReviewState::Flagged, ReviewState::Unreviewed, ReviewState::Approved]);
    }

    #[test]
    fn persisted_log_replays_and_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(fixture(), dir.path(), 2).unwrap();
        store.submit(flag("vid-a:o0", 0)).unwrap();
        store.submit(caption("vid-a:o0", 1, "one")).unwrap();
        store.submit(flag("vid-c:v1", 0)).unwrap();
        assert!(store.submit(flag("vid-c:v1", 0)).is_err());
        let live = store.view();
        drop(store);

        let entries = read_audit_log(&audit_log_path(dir.path()), &fixture()).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(ReviewView::replay(fixture(), &entries).unwrap(), *live);
        assert!(dir.path().join(SNAPSHOT_FILE).exists());

        let reopened = ReviewStore::open(fixture(), dir.path(), 2).unwrap();
        assert_eq!(*reopened.view(), *live);
        reopened.submit(m("vid-a:o0", 2, ReviewAction::Approve)).unwrap();
        let entries = read_audit_log(&audit_log_path(dir.path()), &fixture()).unwrap();
        assert_eq!(entries.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn log_bound_to_its_manifest() {
        let dir = tempfile::tempdir().unwrap();
        ReviewStore::open(fixture(), dir.path(), 0).unwrap().submit(flag("vid-a:o0", 0)).unwrap();
        let other = DatasetManifest::new(vec![sample_record()]);
        assert!(matches!(ReviewStore::open(other, dir.path(), 0), Err(ReviewError::Storage(_))));
    }

    #[test]
    fn concurrent_writers_one_wins() {
        let store = Arc::new(ReviewStore::in_memory(fixture()).unwrap());
        store.submit(flag("vid-a:o1", 0)).unwrap();
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let s = store.clone();
                std::thread::spawn(move || s.submit(caption("vid-a:o1", 1, &format!("writer {i}"))))
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
        assert!(results.iter().filter_map(|r| r.as_ref().err()).all(|e| matches!(e, ReviewError::Conflict { .. })));
        assert_eq!(store.view().status("vid-a:o1").revision, 2);
    }
}
