use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use conduit_service::http::spawn_server;
use conduit_service::{ErrorKind, Service, ServiceConfig, StoreConfig};

use crate::error::{CliError, CliResult};

#[derive(Args)]
pub struct ServerArgs {
    #[arg(long, default_value = "127.0.0.1:8000")]
    bind: SocketAddr,
    /// Command log; the state is rebuilt from it on start. Omit to keep
    /// everything in memory.
    #[arg(long)]
    wal: Option<PathBuf>,
    /// Skip fsync after each logged command.
    #[arg(long)]
    no_fsync: bool,
    /// `name:password`; may be repeated. Existing users are kept.
    #[arg(long = "user")]
    users: Vec<String>,
    /// Seconds a session lease survives without a heartbeat.
    #[arg(long, default_value_t = 60.0)]
    lease_ttl: f64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, env = "CONDUIT_SIGNING_KEY", hide_env_values = true)]
    signing_key: Option<String>,
}

pub fn run(a: ServerArgs) -> CliResult {
    if a.lease_ttl <= 0.0 {
        return Err(CliError::invalid("--lease-ttl must be positive"));
    }
    let mut cfg = ServiceConfig {
        store: StoreConfig { lease_ttl_secs: a.lease_ttl, max_retries: a.max_retries },
        wal_path: a.wal,
        fsync: !a.no_fsync,
        ..Default::default()
    };
    if let Some(k) = a.signing_key {
        cfg.signing_key = k.into_bytes();
    }
    let svc = Arc::new(Service::with_system_clock(cfg)?);
    for u in &a.users {
        let (name, pw) = u.split_once(':').ok_or_else(|| CliError::invalid(format!("--user {u}: expected name:password")))?;
        match svc.register_user(name, pw) {
            Ok(rec) => log::info!("registered user {} as {}", name, rec.user_id.0),
            Err(e) if e.code == ErrorKind::Conflict => log::info!("user {name} already exists"),
            Err(e) => return Err(e.into()),
        }
    }
    let handle = spawn_server(svc, a.bind).map_err(|e| CliError::Connection(format!("cannot bind {}: {e}", a.bind)))?;
    println!("listening on {}", handle.base_url());
    loop {
        std::thread::park();
    }
}
