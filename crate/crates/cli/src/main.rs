use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conduit_core::JobMode;

mod analyze;
mod credentials;
mod error;
mod jobs;
mod server;
mod simulate;
mod site;

use error::CliResult;

#[derive(Parser)]
#[command(name = "conduit", version, about = "Federated workflow orchestration across HPC sites")]
struct Cli {
    /// Where `login` stores the access token.
    #[arg(long, global = true, env = "CONDUIT_CREDENTIALS")]
    credentials: Option<PathBuf>,
    /// Service URL; overrides the one saved at login.
    #[arg(long, global = true, env = "CONDUIT_URL")]
    url: Option<String>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the central API service.
    Server(server::ServerArgs),
    /// Exchange a username and password for an access token.
    Login(LoginArgs),
    /// Create or run a site.
    #[command(subcommand)]
    Site(SiteCommand),
    /// Manage application definitions.
    #[command(subcommand)]
    App(AppCommand),
    /// Submit and list jobs.
    #[command(subcommand)]
    Job(JobCommand),
    /// Read the job event log.
    #[command(subcommand)]
    Events(EventsCommand),
    /// Offline analytics over an exported event log.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Run a pilot job inside an allocation.
    Launcher(site::LauncherArgs),
    /// Deterministic simulation.
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Args)]
struct LoginArgs {
    #[arg(long, env = "CONDUIT_USER")]
    username: String,
    #[arg(long, env = "CONDUIT_PASSWORD")]
    password: String,
}

#[derive(Subcommand)]
enum SiteCommand {
    /// Create a site directory and register it with the service.
    Init(site::InitArgs),
    /// Run the site agent.
    Sync(site::SyncArgs),
}

#[derive(Subcommand)]
enum AppCommand {
    /// Push the definitions under `apps/` to the service.
    Sync {
        #[arg(long, default_value = ".")]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum JobCommand {
    /// Create jobs from a JSON list of drafts.
    Submit(jobs::SubmitArgs),
    /// List jobs.
    Ls(jobs::LsArgs),
}

#[derive(Subcommand)]
enum EventsCommand {
    /// Write the event log as JSON lines.
    Export(jobs::ExportArgs),
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Latency, throughput and utilization summaries of an event log.
    Report(analyze::ReportArgs),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario file or a built-in scenario by name.
    Run(simulate::RunArgs),
    /// List the built-in scenarios.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PerTaskSpawn,
    NodeResident,
}

impl From<Mode> for JobMode {
    fn from(m: Mode) -> JobMode {
        match m {
            Mode::PerTaskSpawn => JobMode::PerTaskSpawn,
            Mode::NodeResident => JobMode::NodeResident,
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let creds = cli.credentials.clone().unwrap_or_else(credentials::default_path);
    let url = cli.url.as_deref();
    match cli.command {
        Command::Server(a) => server::run(a),
        Command::Login(a) => {
            let url = url.ok_or_else(|| error::CliError::invalid("login needs --url"))?;
            let (_, tok) = conduit_client::HttpApi::login(url, &a.username, &a.password)?;
            let saved = credentials::Credentials {
                url: url.to_string(),
                access_token: tok.access_token,
                expires_at: tok.expires_at,
            };
            credentials::save(&creds, &saved)?;
            println!("logged in as user {}", tok.user_id.0);
            Ok(())
        }
        Command::Site(SiteCommand::Init(a)) => site::init(&credentials::connect(&creds, url)?, a),
        Command::Site(SiteCommand::Sync(a)) => site::sync(&creds, url, a),
        Command::App(AppCommand::Sync { dir }) => site::app_sync(&credentials::connect(&creds, url)?, &dir),
        Command::Job(JobCommand::Submit(a)) => jobs::submit(&credentials::connect(&creds, url)?, a),
        Command::Job(JobCommand::Ls(a)) => jobs::ls(&credentials::connect(&creds, url)?, a),
        Command::Events(EventsCommand::Export(a)) => jobs::export(&credentials::connect(&creds, url)?, a),
        Command::Metrics(MetricsCommand::Report(a)) => analyze::report(a),
        Command::Launcher(a) => site::launcher(&creds, url, a),
        Command::Sim(SimCommand::Run(a)) => simulate::run(a),
        Command::Sim(SimCommand::List) => {
            for name in conduit_sim::builtin_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are validation failures.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
