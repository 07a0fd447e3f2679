use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use conduit_client::{distribute_round_robin, distribute_shortest_backlog, HttpApi, RoutingState};
use conduit_core::{AppId, EventRecord, JobDraft, JobState, SiteId, SystemClock, Clock};
use conduit_service::{Api, EventFilter, JobFilter, JobQuery, Page};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, ValueEnum)]
pub enum Strategy {
    RoundRobin,
    ShortestBacklog,
}

#[derive(Args)]
pub struct SubmitArgs {
    /// JSON file holding a list of drafts; `-` reads stdin. An entry names
    /// its application either by `app_id` or by `app` (the name it was
    /// synced under at each target site).
    file: PathBuf,
    /// Target sites, by id or hostname. Without it every entry must carry an
    /// `app_id`.
    #[arg(long, value_delimiter = ',')]
    sites: Vec<String>,
    #[arg(long, value_enum, default_value = "shortest-backlog")]
    strategy: Strategy,
}

#[derive(Args)]
pub struct LsArgs {
    #[arg(long)]
    state: Vec<JobState>,
    /// `key:value`; repeat to require several.
    #[arg(long = "tag")]
    tags: Vec<String>,
    #[arg(long)]
    site: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    /// One JSON record per line instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long, default_value = "events.jsonl")]
    out: PathBuf,
    #[arg(long)]
    site: Option<String>,
}

fn resolve_site(api: &dyn Api, name: &str) -> CliResult<SiteId> {
    let sites = api.list_sites()?;
    if let Ok(id) = name.parse::<u64>() {
        if sites.iter().any(|s| s.site_id.0 == id) {
            return Ok(SiteId(id));
        }
    }
    sites
        .iter()
        .find(|s| s.hostname == name)
        .map(|s| s.site_id)
        .ok_or_else(|| CliError::invalid(format!("no site named {name}")))
}

fn parse_tag(t: &str) -> CliResult<(String, String)> {
    t.split_once(':')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| CliError::invalid(format!("tag {t:?} is not key:value")))
}

/// A draft whose application may still be a name.
struct Entry {
    app: Option<String>,
    body: Value,
}

impl Entry {
    fn parse(mut v: Value) -> CliResult<Entry> {
        let Some(obj) = v.as_object_mut() else {
            return Err(CliError::invalid("each draft must be a JSON object"));
        };
        let app = match obj.remove("app") {
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err(CliError::invalid("`app` must be a string")),
            None => None,
        };
        if app.is_none() && !obj.contains_key("app_id") {
            return Err(CliError::invalid("draft names neither `app` nor `app_id`"));
        }
        Ok(Entry { app, body: v })
    }

    fn has_parent_drafts(&self) -> bool {
        self.body.get("parent_drafts").and_then(Value::as_array).is_some_and(|a| !a.is_empty())
    }

    fn draft(mut self, apps: &BTreeMap<String, AppId>) -> CliResult<JobDraft> {
        if let Some(name) = self.app {
            let id = apps.get(&name).ok_or_else(|| CliError::invalid(format!("no app {name} at the target site")))?;
            self.body["app_id"] = serde_json::to_value(id)?;
        }
        Ok(serde_json::from_value(self.body)?)
    }
}

fn read_input(path: &PathBuf) -> CliResult<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut s)?;
        Ok(s)
    } else {
        Ok(std::fs::read_to_string(path)?)
    }
}

pub fn submit(api: &HttpApi, a: SubmitArgs) -> CliResult {
    let raw: Vec<Value> = serde_json::from_str(&read_input(&a.file)?)?;
    let entries = raw.into_iter().map(Entry::parse).collect::<CliResult<Vec<_>>>()?;
    let sites = a.sites.iter().map(|s| resolve_site(api, s)).collect::<CliResult<Vec<_>>>()?;

    let groups: BTreeMap<Option<SiteId>, Vec<Entry>> = if sites.is_empty() {
        if entries.iter().any(|e| e.app.is_some()) {
            return Err(CliError::invalid("drafts that name `app` need --sites"));
        }
        BTreeMap::from([(None, entries)])
    } else {
        let mut state = RoutingState::new(sites.clone(), 0.0);
        let routed = match a.strategy {
            // Indices in parent_drafts only make sense inside one request.
            Strategy::RoundRobin if sites.len() > 1 && entries.iter().any(Entry::has_parent_drafts) => {
                return Err(CliError::invalid("parent_drafts cannot be split round-robin across sites"));
            }
            Strategy::RoundRobin => distribute_round_robin(entries, &mut state),
            Strategy::ShortestBacklog => distribute_shortest_backlog(entries, &mut state, api, SystemClock.now()),
        };
        routed.into_iter().map(|(s, e)| (Some(s), e)).collect()
    };

    let mut out = std::io::stdout().lock();
    for (site, entries) in groups {
        let apps: BTreeMap<String, AppId> = match site {
            Some(s) => api.list_apps(Some(s))?.into_iter().map(|a| (a.name, a.app_id)).collect(),
            None => BTreeMap::new(),
        };
        let drafts = entries.into_iter().map(|e| e.draft(&apps)).collect::<CliResult<Vec<_>>>()?;
        for j in api.create_jobs(&drafts)? {
            writeln!(out, "{}\t{}\t{}", j.job_id.0, j.site_id.0, j.state)?;
        }
    }
    Ok(())
}

pub fn ls(api: &HttpApi, a: LsArgs) -> CliResult {
    let filter = JobFilter {
        site_id: a.site.as_deref().map(|s| resolve_site(api, s)).transpose()?,
        states: a.state,
        tags: a.tags.iter().map(|t| parse_tag(t)).collect::<CliResult<_>>()?,
        ..Default::default()
    };
    let page = Page { limit: a.limit.unwrap_or(usize::MAX), offset: 0 };
    let jobs = api.query_jobs(&JobQuery { filter, page, ..Default::default() })?;
    let mut out = std::io::stdout().lock();
    if a.json {
        for j in &jobs {
            writeln!(out, "{}", serde_json::to_string(j)?)?;
        }
    } else {
        writeln!(out, "{:>8} {:>5} {:>5} {:<14} WORKDIR", "ID", "SITE", "APP", "STATE")?;
        for j in &jobs {
            writeln!(out, "{:>8} {:>5} {:>5} {:<14} {}", j.job_id.0, j.site_id.0, j.app_id.0, j.state, j.workdir)?;
        }
    }
    Ok(())
}

pub fn write_jsonl(path: &PathBuf, events: &[EventRecord]) -> CliResult {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn export(api: &HttpApi, a: ExportArgs) -> CliResult {
    let filter = EventFilter { site_id: a.site.as_deref().map(|s| resolve_site(api, s)).transpose()?, ..Default::default() };
    let events = api.events(&filter)?;
    write_jsonl(&a.out, &events)?;
    println!("{} events written to {}", events.len(), a.out.display());
    Ok(())
}
