//! `review-serve` and the thin `review` client subcommands.

use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;

use agentsim_client::{ReviewClient, StatusFilter};
use agentsim_core::validation::api::{DecisionRequest, ItemDetail, ItemSummary};
use agentsim_core::validation::{QueueStats, ReviewItem};
use agentsim_review_service::{bind, router, serve, AppState};

use crate::config::{prepare, Overrides};
use crate::{CliError, OutputTree};

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io("starting async runtime", e))
}

fn block_on<T>(fut: impl Future<Output = T>) -> Result<T, CliError> {
    Ok(runtime()?.block_on(fut))
}

/// Serves the review queue of the configured output tree on 127.0.0.1 until
/// ctrl-c. `on_listening` receives the bound address.
pub fn cmd_review_serve(
    config_path: &Path,
    overrides: &Overrides,
    port: Option<u16>,
    on_listening: impl FnOnce(SocketAddr),
) -> Result<(), CliError> {
    let prepared = prepare(config_path, overrides)?;
    let tree = OutputTree::new(&prepared.config.out);
    let port = port.unwrap_or(prepared.config.review.port);
    let ui_dir = prepared.config.review.ui_dir.clone().filter(|d| d.join("index.html").is_file());
    let state = AppState::open(tree.review(), Some(prepared.corpus))?;
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = bind(SocketAddr::from(([127, 0, 0, 1], port))).await?;
        let addr = listener.local_addr().map_err(|e| CliError::io("reading bound address", e))?;
        on_listening(addr);
        serve(listener, router(state, ui_dir)).await?;
        Ok(())
    })
}

pub fn review_list(base_url: &str, status: StatusFilter, limit: Option<usize>) -> Result<Vec<ItemSummary>, CliError> {
    let client = ReviewClient::new(base_url);
    Ok(block_on(client.list_items(status, limit))??)
}

pub fn review_show(base_url: &str, item_id: &str) -> Result<ItemDetail, CliError> {
    let client = ReviewClient::new(base_url);
    Ok(block_on(client.item(item_id))??)
}

pub fn review_decide(
    base_url: &str,
    item_id: &str,
    reviewer_id: &str,
    request: &DecisionRequest,
) -> Result<ReviewItem, CliError> {
    let client = ReviewClient::new(base_url);
    Ok(block_on(client.decide(item_id, reviewer_id, request))??)
}

pub fn review_stats(base_url: &str) -> Result<QueueStats, CliError> {
    let client = ReviewClient::new(base_url);
    Ok(block_on(client.stats())??)
}
