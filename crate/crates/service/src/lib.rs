//! HTTP facade over the retrieval engine: stateless queries, interactive
//! relevance-feedback sessions and image thumbnails.

pub mod api;
pub mod catalog;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::{router, AppState};
pub use catalog::Catalog;
pub use session::{Sessions, DEFAULT_TTL};

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState, ui: Option<PathBuf>) -> std::io::Result<()> {
    let app = router(Arc::new(state), ui);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
