//! Session service: registry, event log and HTTP routes.

mod http;
mod session;

pub use http::{router, serve, status_for, ApiError};
pub use session::{Session, SessionManager, SessionSummary};
