//! Review and correction service: per-event review items with optimistic
//! concurrency, an append-only audit log, and a JSON HTTP API.

pub mod http;
pub mod store;

pub use http::{router, serve, AppState};
pub use store::{
    audit_log_path, item_id, read_audit_log, Applied, AuditEntry, ItemState, ItemStatus, Mutation, ReviewAction,
    ReviewError, ReviewStore, ReviewView,
};
