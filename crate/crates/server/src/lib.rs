//! HTTP service over curation sessions, plus the pieces the `supdim`
//! command-line tool shares with it.

pub mod api;
pub mod cli;
pub mod config;
pub mod state;

use std::sync::Arc;

pub use api::router;
pub use config::ServiceConfig;
pub use state::{AppState, StartupError};

/// Binds `config.listen` and serves until ctrl-c or SIGTERM.
pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let cfg = config.clone();
    let state = tokio::task::spawn_blocking(move || AppState::open(&cfg)).await??;
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    println!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).with_graceful_shutdown(shutdown_signal()).await?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
