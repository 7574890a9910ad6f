//! `engine review serve` and `engine review export`.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use engine_core::filter::read_decisions;
use engine_core::read_manifest;
use engine_core::review::{now_millis, EnqueuePolicy, ReviewQueue, ReviewState};
use engine_review_server::{index_images, serve as serve_http, AppState};

use crate::Policy;

pub fn serve(
    decisions: &Path,
    images: &Path,
    log: &Path,
    addr: &str,
    manifest: Option<&Path>,
    policy: Policy,
) -> Result<()> {
    let decisions = read_decisions(decisions)?;
    let paths = match manifest {
        Some(m) => read_manifest(m)?
            .records()
            .iter()
            .map(|r| (r.id.clone(), r.image_path.clone()))
            .collect(),
        None => index_images(images)?,
    };
    let policy = match policy {
        Policy::BorderlineOnly => EnqueuePolicy::BorderlineOnly,
        Policy::BorderlineAndRejected => EnqueuePolicy::BorderlineAndRejected,
    };
    let mut queue = ReviewQueue::open(log).with_context(|| format!("opening review log {}", log.display()))?;
    let added = queue.enqueue(&decisions, policy, |id| paths.get(id).cloned(), now_millis())?;
    let stats = queue.stats();
    eprintln!(
        "queued {added} new items; {} pending, {} accepted, {} rejected",
        stats.pending, stats.accepted, stats.rejected
    );

    let state = AppState::new(queue, images);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        let mut stdout = std::io::stdout();
        writeln!(stdout, "listening on http://{local}")?;
        stdout.flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve_http(listener, state, shutdown).await?;
        Ok(())
    })
}

pub fn export(log: &Path, out: &Path) -> Result<()> {
    let state = ReviewState::replay(log).with_context(|| format!("replaying {}", log.display()))?;
    engine_core::io::atomic_write(out, &state.verdicts_jsonl())
        .with_context(|| format!("writing {}", out.display()))?;
    eprintln!("exported {} verdicts", state.verdicts().count());
    Ok(())
}
