//! Read-mostly HTTP API over a fitted model, a sequence manifest and a score
//! database. The only write path is analyst dispositions.
//!
//! Endpoints (all JSON bodies carry a top-level `"v"` schema version):
//!
//! - `GET  /api/sequences?sort=max|mean|variance|p99&order=desc|asc&limit&offset`
//! - `GET  /api/sequences/{id}`
//! - `GET  /api/sequences/{id}/heatmap.png?norm=local|global`
//! - `GET  /api/sequences/{id}/band/{k}.png` (k in 1..=6)
//! - `GET  /api/sequences/{id}/rgb.png`
//! - `POST /api/sequences/{id}/disposition` `{"state": .., "note": ..}`
//! - `GET  /api/model`

mod api;
mod config;
mod error;
mod state;

pub use api::router;
pub use config::{ConfigError, ServiceConfig};
pub use error::ApiError;
pub use state::{AppState, StateError};

/// Schema version carried in every JSON response.
pub const API_VERSION: u32 = 1;

/// Bind and serve until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), StateError> {
    config.validate()?;
    let state = std::sync::Arc::new(AppState::load(&config)?);
    let app = router(state, config.static_dir.as_deref(), config.cors_origin.as_deref());
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(StateError::Io)?;
    log::info!("listening on {}", listener.local_addr().map_err(StateError::Io)?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(StateError::Io)
}
