use secrisk_service::{ServiceConfig, ServiceError};
use tracing_subscriber::EnvFilter;

use crate::args::{GlobalArgs, ServeArgs};
use crate::exit::{CliError, Status};

pub fn run(g: &GlobalArgs, a: &ServeArgs) -> Result<Status, CliError> {
    let config = resolve(g, a)?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .try_init();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Service(ServiceError::Serve(e)))?;
    runtime.block_on(secrisk_service::run(config, secrisk_service::shutdown_signal()))?;
    Ok(Status::Success)
}

/// Config file first, then flags on top.
fn resolve(g: &GlobalArgs, a: &ServeArgs) -> Result<ServiceConfig, CliError> {
    let mut config = match (&a.config, &g.store) {
        (Some(path), _) => ServiceConfig::load(path)?,
        (None, Some(store)) => ServiceConfig::new(store),
        (None, None) => {
            return Err(CliError::Invalid("serve needs --config, --store or SECRISK_STORE".into()));
        }
    };
    if let Some(store) = &g.store {
        config.store = store.clone();
    }
    if let Some(bind) = a.bind {
        config.bind = bind;
    }
    if let Some(ms) = a.long_poll_ms {
        config.long_poll_ms = ms;
    }
    config.tokens.extend(a.tokens.iter().cloned());
    config.validate()?;
    Ok(config)
}
