use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::Duration;

use axum::extract::FromRequestParts;
use axum::http::request::Parts;
use secrisk_core::delphi::{DelphiSession, SessionState};
use secrisk_core::registry::{DocKind, RegistryError, Store};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Mutex, OwnedMutexGuard, RwLock};

use crate::config::{Role, TokenGrant};
use crate::engine::Engine;
use crate::envelope::{ApiError, ErrorCode, REQUEST_ID_HEADER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub role: Role,
    pub handle: String,
}

/// Round-status event published on every session transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusEvent {
    /// Grows by one on each transition.
    pub seq: u64,
    pub state: SessionState,
    pub round: u32,
}

impl StatusEvent {
    pub fn of(session: &DelphiSession) -> Self {
        Self { seq: session.audit().len() as u64, state: session.state(), round: session.round_count() }
    }
}

/// A remembered response for an idempotent submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdempotentReply {
    pub fingerprint: String,
    pub payload: serde_json::Value,
}

/// What the store keeps per session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSession {
    pub session: DelphiSession,
    /// Keyed by `handle` + newline + idempotency key.
    #[serde(default)]
    pub replies: BTreeMap<String, IdempotentReply>,
}

#[derive(Debug)]
pub struct SessionSlot {
    pub data: Mutex<SlotData>,
    pub status: watch::Sender<StatusEvent>,
}

#[derive(Debug)]
pub struct SlotData {
    pub stored: StoredSession,
    pub version: u64,
}

struct Inner {
    store: Store,
    tokens: HashMap<String, Caller>,
    engine: Arc<dyn Engine>,
    sessions: RwLock<BTreeMap<String, Arc<SessionSlot>>>,
    key_locks: StdMutex<HashMap<String, Arc<Mutex<()>>>>,
    long_poll: Duration,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Builds the state and loads every persisted session.
    pub fn load(
        store: Store,
        tokens: &[TokenGrant],
        engine: Arc<dyn Engine>,
        long_poll: Duration,
    ) -> Result<Self, RegistryError> {
        let mut sessions = BTreeMap::new();
        for key in store.list(DocKind::Session)? {
            let v = store.get::<StoredSession>(DocKind::Session, &key)?;
            let (status, _) = watch::channel(StatusEvent::of(&v.document.session));
            let slot = SessionSlot { data: Mutex::new(SlotData { stored: v.document, version: v.version }), status };
            sessions.insert(key, Arc::new(slot));
        }
        let tokens =
            tokens.iter().map(|g| (g.token.clone(), Caller { role: g.role, handle: g.handle.clone() })).collect();
        Ok(Self {
            inner: Arc::new(Inner {
                store,
                tokens,
                engine,
                sessions: RwLock::new(sessions),
                key_locks: StdMutex::new(HashMap::new()),
                long_poll,
            }),
        })
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn engine(&self) -> &dyn Engine {
        self.inner.engine.as_ref()
    }

    pub fn long_poll(&self) -> Duration {
        self.inner.long_poll
    }

    fn caller(&self, token: &str) -> Option<&Caller> {
        self.inner.tokens.get(token)
    }

    /// Serializes writers of one store key.
    pub async fn lock_key(&self, kind: DocKind, key: &str) -> OwnedMutexGuard<()> {
        let lock = {
            let mut locks = self.inner.key_locks.lock().expect("key lock table poisoned");
            locks.entry(format!("{}/{key}", kind.dir())).or_default().clone()
        };
        lock.lock_owned().await
    }

    pub async fn session(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.inner
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session `{id}` not found")))
    }

    pub async fn session_ids(&self) -> Vec<String> {
        self.inner.sessions.read().await.keys().cloned().collect()
    }

    /// Persists and registers a new session; fails if the id is taken.
    pub async fn insert_session(&self, session: DelphiSession) -> Result<Arc<SessionSlot>, ApiError> {
        let mut sessions = self.inner.sessions.write().await;
        let id = session.id().to_string();
        if sessions.contains_key(&id) {
            return Err(ApiError::conflict(format!("session `{id}` already exists")));
        }
        let stored = StoredSession { session, replies: BTreeMap::new() };
        let version = self.inner.store.put(DocKind::Session, &id, &stored, Some(0))?;
        let (status, _) = watch::channel(StatusEvent::of(&stored.session));
        let slot = Arc::new(SessionSlot { data: Mutex::new(SlotData { stored, version }), status });
        sessions.insert(id, slot.clone());
        Ok(slot)
    }

    /// Writes a session back under its version counter and publishes its status.
    pub fn persist(&self, slot: &SessionSlot, data: &mut SlotData, next: StoredSession) -> Result<(), ApiError> {
        let id = next.session.id().to_string();
        data.version = self.inner.store.put(DocKind::Session, &id, &next, Some(data.version))?;
        data.stored = next;
        let event = StatusEvent::of(&data.stored.session);
        slot.status.send_if_modified(|current| {
            let changed = *current != event;
            *current = event;
            changed
        });
        Ok(())
    }

    /// Rewrites every session to the store.
    pub async fn flush(&self) -> Result<usize, RegistryError> {
        let sessions = self.inner.sessions.read().await;
        let mut written = 0;
        for (id, slot) in sessions.iter() {
            let mut data = slot.data.lock().await;
            data.version = self.inner.store.put(DocKind::Session, id, &data.stored, Some(data.version))?;
            written += 1;
        }
        Ok(written)
    }
}

/// Per-request context: request id and the authenticated caller, if any.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub request_id: String,
    caller: Result<Option<Caller>, ()>,
}

impl Ctx {
    pub fn caller(&self) -> Result<&Caller, ApiError> {
        match &self.caller {
            Ok(Some(c)) => Ok(c),
            Ok(None) => Err(ApiError::new(ErrorCode::Unauthenticated, "missing bearer token")),
            Err(()) => Err(ApiError::new(ErrorCode::Unauthenticated, "unknown bearer token")),
        }
    }

    pub fn require(&self, roles: &[Role]) -> Result<&Caller, ApiError> {
        let caller = self.caller()?;
        if roles.contains(&caller.role) {
            Ok(caller)
        } else {
            let allowed: Vec<&str> = roles.iter().map(|r| r.as_str()).collect();
            Err(ApiError::forbidden(format!(
                "role {} may not do this (requires {})",
                caller.role,
                allowed.join(" or ")
            )))
        }
    }
}

fn valid_request_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_graphic())
}

impl FromRequestParts<AppState> for Ctx {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let request_id = parts
            .headers
            .get(REQUEST_ID_HEADER)
            .and_then(|v| v.to_str().ok())
            .filter(|v| valid_request_id(v))
            .map(str::to_string)
            .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let caller = match parts.headers.get(axum::http::header::AUTHORIZATION) {
            None => Ok(None),
            Some(v) => v
                .to_str()
                .ok()
                .and_then(|s| s.strip_prefix("Bearer "))
                .and_then(|t| state.caller(t.trim()))
                .cloned()
                .map(Some)
                .ok_or(()),
        };
        Ok(Ctx { request_id, caller })
    }
}
