use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use conduit_client::HttpApi;
use conduit_core::{AppSpec, BatchJobId, Clock, SystemClock};
use conduit_service::Api;
use conduit_site::agent::ensure_site;
use conduit_site::local::{LocalCopyTransfer, LocalProcessRun, LocalScheduler};
use conduit_site::{
    ElasticQueueModule, Launcher, LauncherConfig, LauncherStatus, SchedulerModule, SiteAgent, SiteConfig,
    TransferModule,
};

use crate::credentials;
use crate::error::{CliError, CliResult};
use crate::Mode;

const SETTINGS: &str = "settings.yml";

#[derive(Args)]
pub struct InitArgs {
    /// Directory to create; it gets settings.yml, apps/ and data/.
    dir: PathBuf,
    /// Name the site is registered under; defaults to the directory name.
    #[arg(long)]
    hostname: Option<String>,
}

#[derive(Args)]
pub struct SyncArgs {
    #[arg(long, default_value = ".")]
    dir: PathBuf,
    /// Stop after this many agent passes.
    #[arg(long)]
    ticks: Option<u64>,
}

#[derive(Args)]
pub struct LauncherArgs {
    /// Site directory holding settings.yml.
    #[arg(long, default_value = ".")]
    site: PathBuf,
    #[arg(long)]
    batchjob: Option<u64>,
    #[arg(long, default_value_t = 1)]
    nodes: u32,
    /// Lease lifetime granted by the service; heartbeats go out at a third
    /// of it.
    #[arg(long, default_value_t = 60.0)]
    session_ttl: f64,
    #[arg(long, value_enum)]
    job_mode: Option<Mode>,
    /// Seconds without runnable work before the launcher exits.
    #[arg(long)]
    idle_timeout: Option<f64>,
    /// Minutes of allocation time.
    #[arg(long)]
    wall_time: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    poll_interval: f64,
}

fn absolute(dir: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(dir).map_err(|e| CliError::invalid(format!("{}: {e}", dir.display())))
}

fn load_settings(dir: &Path) -> CliResult<SiteConfig> {
    SiteConfig::load(&dir.join(SETTINGS)).map_err(|e| CliError::invalid(format!("{}: {e}", dir.join(SETTINGS).display())))
}

fn site_id(cfg: &SiteConfig) -> CliResult<conduit_core::SiteId> {
    cfg.site_id.ok_or_else(|| CliError::invalid("settings.yml has no site_id; run `conduit site init` first"))
}

pub fn init(api: &HttpApi, a: InitArgs) -> CliResult {
    for sub in ["apps", "data"] {
        std::fs::create_dir_all(a.dir.join(sub))?;
    }
    let dir = absolute(&a.dir)?;
    let hostname = match a.hostname {
        Some(h) => h,
        None => dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "site".into()),
    };
    let mut cfg = match SiteConfig::load(&dir.join(SETTINGS)) {
        Ok(c) => c,
        Err(_) => SiteConfig { service_url: api.base_url().to_string(), ..Default::default() },
    };
    let id = ensure_site(api, &hostname, &dir.to_string_lossy())?;
    cfg.site_id = Some(id);
    std::fs::write(dir.join(SETTINGS), cfg.to_yaml())?;
    println!("site {} registered as {hostname} at {}", id.0, dir.display());
    Ok(())
}

/// Reads every `apps/*.yml` / `apps/*.yaml` / `apps/*.json` definition.
pub fn read_apps(dir: &Path) -> CliResult<Vec<AppSpec>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.join("apps"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("yml" | "yaml" | "json")))
        .collect();
    paths.sort();
    let mut apps = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let app: AppSpec = if p.extension().is_some_and(|x| x == "json") {
            serde_json::from_str(&text)?
        } else {
            serde_yaml::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?
        };
        apps.push(app);
    }
    Ok(apps)
}

pub fn app_sync(api: &HttpApi, dir: &Path) -> CliResult {
    let cfg = load_settings(dir)?;
    let apps = read_apps(dir)?;
    let ids = api.sync_apps(site_id(&cfg)?, &apps)?;
    for (app, id) in apps.iter().zip(ids) {
        println!("{}\t{}", id.0, app.name);
    }
    Ok(())
}

/// Points a `conduit ...` launcher command at this very executable, so a
/// site works without the binary on PATH.
fn resolve_launcher_command(cmd: &str, site_dir: &Path) -> String {
    let cmd = match (cmd.strip_prefix("conduit "), std::env::current_exe()) {
        (Some(rest), Ok(exe)) => format!("{} {rest}", exe.display()),
        _ => cmd.to_string(),
    };
    if cmd.contains("--site") {
        cmd
    } else {
        format!("{cmd} --site {}", site_dir.display())
    }
}

pub fn sync(creds: &Path, url: Option<&str>, a: SyncArgs) -> CliResult {
    let dir = absolute(&a.dir)?;
    let cfg = load_settings(&dir)?;
    let site = site_id(&cfg)?;
    let api: Arc<dyn Api> = Arc::new(credentials::connect(creds, url)?);
    let transfer = TransferModule::new(api.clone(), LocalCopyTransfer::new(dir.join("data")), site, cfg.transfer.clone());
    let command = resolve_launcher_command(&cfg.launcher.command, &dir);
    let max_wait = cfg.elastic_queue.as_ref().map(|e| e.max_queue_wait);
    let scheduler = SchedulerModule::new(api.clone(), LocalScheduler::new(command), site, max_wait);
    let elastic = cfg.elastic_queue.clone().map(|e| ElasticQueueModule::new(api.clone(), site, e));
    let mut agent = SiteAgent::new(site, transfer, scheduler, elastic, cfg.sync_interval);
    let clock = SystemClock;
    let mut n = 0;
    loop {
        // Failures are logged by the agent and retried next pass.
        agent.tick(clock.now());
        n += 1;
        if a.ticks.is_some_and(|t| n >= t) {
            return Ok(());
        }
        std::thread::sleep(Duration::from_secs_f64(cfg.sync_interval));
    }
}

pub fn launcher(creds: &Path, url: Option<&str>, a: LauncherArgs) -> CliResult {
    if a.nodes == 0 || a.session_ttl <= 0.0 || a.poll_interval <= 0.0 {
        return Err(CliError::invalid("--nodes, --session-ttl and --poll-interval must be positive"));
    }
    let dir = absolute(&a.site)?;
    let cfg = load_settings(&dir)?;
    let api: Arc<dyn Api> = Arc::new(credentials::connect(creds, url)?);
    let settings = &cfg.launcher;
    let lc = LauncherConfig {
        batchjob_id: a.batchjob.map(BatchJobId),
        job_mode: a.job_mode.map(Into::into).unwrap_or(settings.job_mode),
        cores_per_node: settings.cores_per_node,
        gpus_per_node: settings.gpus_per_node,
        max_tasks_per_node: settings.max_tasks_per_node,
        idle_timeout: a.idle_timeout.unwrap_or(settings.idle_timeout),
        wall_time: a.wall_time.map(|m| m * 60.0),
        heartbeat_interval: a.session_ttl / 3.0,
        poll_interval: a.poll_interval,
        site_path: dir.to_string_lossy().into_owned(),
        ..LauncherConfig::new(site_id(&cfg)?, a.nodes)
    };
    let clock = SystemClock;
    let mut l = Launcher::start(api, LocalProcessRun::new(), lc, clock.now())?;
    loop {
        match l.tick(clock.now()) {
            Ok(LauncherStatus::Active) => {}
            Ok(LauncherStatus::Exited(reason)) => {
                println!("launcher exited: {reason:?}");
                return Ok(());
            }
            Err(e) => log::warn!("launcher tick: {e}"),
        }
        std::thread::sleep(Duration::from_secs_f64(a.poll_interval));
    }
}
