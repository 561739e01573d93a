//! `saturnd`: runs the control plane and its HTTP API.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use saturn_core::platform::{Platform, PlatformConfig};
use tokio::net::TcpListener;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(version, about = "Saturn control plane server")]
struct Args {
    /// TOML configuration file.
    #[arg(long, env = "SATURN_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides `data_dir`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Overrides `serve.host`.
    #[arg(long)]
    host: Option<String>,
    /// Overrides `serve.port`. Zero picks a free port.
    #[arg(long)]
    port: Option<u16>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();

    let mut config = match &args.config {
        Some(path) => PlatformConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?,
        None => PlatformConfig::default(),
    };
    if let Some(dir) = args.data_dir {
        config.data_dir = Some(dir);
    }
    if let Some(host) = args.host {
        config.serve.host = host;
    }
    if let Some(port) = args.port {
        config.serve.port = port;
    }
    let addr = format!("{}:{}", config.serve.host, config.serve.port);
    let webhook = config.monitor.webhook_url.clone();

    let platform = tokio::task::spawn_blocking(move || Platform::open(config)).await??;
    let _background = platform.start();
    if let Some(url) = webhook {
        saturn_server::webhook::spawn(&platform.monitor, url)?;
    }

    let listener = TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    tracing::info!(%local, "listening");
    // Scripts that start the server on port 0 read the address from stdout.
    println!("listening on http://{local}");

    saturn_server::serve(listener, platform, async {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
    })
    .await?;
    Ok(())
}
