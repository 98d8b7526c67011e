//! JSON-over-HTTP facade for the secrisk engine.
//!
//! Every endpoint lives under `/v1` and answers with an [`ApiEnvelope`].
//! Callers authenticate with static bearer tokens that map to a role
//! (moderator, participant or viewer) and a handle. Participants only ever
//! see aggregate Delphi feedback and their own estimates.

pub mod config;
pub mod engine;
pub mod envelope;
pub mod routes;
pub mod state;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use secrisk_core::registry::{RegistryError, Store};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use config::{Role, ServiceConfig, TokenGrant};
pub use engine::{CoreEngine, Engine};
pub use envelope::{ApiEnvelope, ErrorBody, ErrorCode};
pub use routes::router;
pub use state::AppState;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] RegistryError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

/// A server running on a background task.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<(), ServiceError>>,
}

impl RunningServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/{}", self.addr, routes::API_VERSION)
    }

    /// Stops accepting requests, drains in-flight ones and persists sessions.
    pub async fn shutdown(mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.join().await
    }

    /// Waits for the server to stop on its own.
    pub async fn join(self) -> Result<(), ServiceError> {
        match self.task.await {
            Ok(result) => result,
            Err(e) => Err(ServiceError::Serve(std::io::Error::other(e))),
        }
    }
}

/// Opens the store exclusively, binds, and serves on a background task.
pub async fn start(config: ServiceConfig) -> Result<RunningServer, ServiceError> {
    start_with_engine(config, Arc::new(CoreEngine)).await
}

pub async fn start_with_engine(config: ServiceConfig, engine: Arc<dyn Engine>) -> Result<RunningServer, ServiceError> {
    let (tx, rx) = oneshot::channel();
    let (addr, serve) = prepare(config, engine, async {
        let _ = rx.await;
    })
    .await?;
    let task = tokio::spawn(serve);
    Ok(RunningServer { addr, shutdown: Some(tx), task })
}

/// Serves until `shutdown` resolves.
pub async fn run(
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let (addr, serve) = prepare(config, Arc::new(CoreEngine), shutdown).await?;
    tracing::info!(%addr, "serving");
    serve.await
}

async fn prepare(
    config: ServiceConfig,
    engine: Arc<dyn Engine>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(SocketAddr, impl Future<Output = Result<(), ServiceError>>), ServiceError> {
    config.validate()?;
    let store = Store::open_exclusive(&config.store)?;
    let state = AppState::load(store, &config.tokens, engine, config.long_poll())?;
    let listener =
        TcpListener::bind(config.bind).await.map_err(|source| ServiceError::Bind { addr: config.bind, source })?;
    let addr = listener.local_addr().map_err(ServiceError::Serve)?;
    let app = router(state.clone());
    let serve = async move {
        axum::serve(listener, app).with_graceful_shutdown(shutdown).await.map_err(ServiceError::Serve)?;
        let written = state.flush().await?;
        tracing::info!(sessions = written, "sessions persisted");
        Ok(())
    };
    Ok((addr, serve))
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
