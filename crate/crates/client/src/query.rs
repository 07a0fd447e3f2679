//! Lazy, immutable job queries.
//!
//! Building and refining a [`JobQuery`] never touches the network; requests
//! happen only when the query is iterated, counted or fetched.

use std::collections::BTreeMap;
use std::sync::Arc;

use conduit_core::{AppId, JobId, JobRecord, JobState, SiteId};
use conduit_service::{Api, ApiResult, JobFilter, JobUpdate, Ordering, Page, UpdateOutcome};

pub const DEFAULT_PAGE_SIZE: usize = 500;

#[derive(Clone)]
pub struct JobQuery {
    api: Arc<dyn Api>,
    /// `None` once two criteria contradict each other.
    filter: Option<JobFilter>,
    ordering: Ordering,
    limit: Option<usize>,
    page_size: usize,
}

fn intersect<T: PartialEq + Clone>(a: &[T], b: &[T]) -> Option<Vec<T>> {
    match (a.is_empty(), b.is_empty()) {
        (true, _) => Some(b.to_vec()),
        (_, true) => Some(a.to_vec()),
        _ => {
            let both: Vec<T> = a.iter().filter(|x| b.contains(x)).cloned().collect();
            (!both.is_empty()).then_some(both)
        }
    }
}

fn same<T: PartialEq + Copy>(a: Option<T>, b: Option<T>) -> Option<Option<T>> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => None,
        _ => Some(a.or(b)),
    }
}

/// Conjunction of two filters, or `None` when nothing can match both.
pub fn conjoin(a: &JobFilter, b: &JobFilter) -> Option<JobFilter> {
    let mut tags = a.tags.clone();
    for (k, v) in &b.tags {
        if tags.insert(k.clone(), v.clone()).is_some_and(|old| &old != v) {
            return None;
        }
    }
    Some(JobFilter {
        site_id: same(a.site_id, b.site_id)?,
        app_id: same(a.app_id, b.app_id)?,
        states: intersect(&a.states, &b.states)?,
        job_ids: intersect(&a.job_ids, &b.job_ids)?,
        tags,
    })
}

impl JobQuery {
    pub fn new(api: Arc<dyn Api>) -> Self {
        JobQuery { api, filter: Some(JobFilter::default()), ordering: Ordering::JobId, limit: None, page_size: DEFAULT_PAGE_SIZE }
    }

    /// Narrows the query; criteria compose conjunctively.
    pub fn filter(&self, criteria: &JobFilter) -> Self {
        JobQuery { filter: self.filter.as_ref().and_then(|f| conjoin(f, criteria)), ..self.clone() }
    }

    pub fn tags<K: Into<String>, V: Into<String>>(&self, tags: impl IntoIterator<Item = (K, V)>) -> Self {
        let tags = tags.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        self.filter(&JobFilter { tags, ..Default::default() })
    }

    pub fn state(&self, state: JobState) -> Self {
        self.filter(&JobFilter { states: vec![state], ..Default::default() })
    }

    pub fn states(&self, states: &[JobState]) -> Self {
        self.filter(&JobFilter { states: states.to_vec(), ..Default::default() })
    }

    pub fn site(&self, site: SiteId) -> Self {
        self.filter(&JobFilter { site_id: Some(site), ..Default::default() })
    }

    pub fn app(&self, app: AppId) -> Self {
        self.filter(&JobFilter { app_id: Some(app), ..Default::default() })
    }

    pub fn ids(&self, ids: &[JobId]) -> Self {
        self.filter(&JobFilter { job_ids: ids.to_vec(), ..Default::default() })
    }

    pub fn order_by(&self, ordering: Ordering) -> Self {
        JobQuery { ordering, ..self.clone() }
    }

    pub fn limit(&self, n: usize) -> Self {
        JobQuery { limit: Some(self.limit.map_or(n, |l| l.min(n))), ..self.clone() }
    }

    pub fn page_size(&self, n: usize) -> Self {
        JobQuery { page_size: n.max(1), ..self.clone() }
    }

    /// The effective filter, `None` if the criteria are contradictory.
    pub fn criteria(&self) -> Option<&JobFilter> {
        self.filter.as_ref()
    }

    pub fn iter(&self) -> JobIter {
        JobIter { query: self.clone(), offset: 0, buf: Vec::new(), done: self.filter.is_none() || self.limit == Some(0) }
    }

    pub fn fetch(&self) -> ApiResult<Vec<JobRecord>> {
        self.iter().collect()
    }

    pub fn count(&self) -> ApiResult<usize> {
        match &self.filter {
            None => Ok(0),
            Some(f) => Ok(self.api.count_jobs(f)?.min(self.limit.unwrap_or(usize::MAX))),
        }
    }

    pub fn first(&self) -> ApiResult<Option<JobRecord>> {
        self.limit(1).iter().next().transpose()
    }

    /// Fetched jobs wrapped for editing and [`save_all`].
    pub fn edit(&self) -> ApiResult<Vec<EditableJob>> {
        Ok(self.fetch()?.into_iter().map(EditableJob::new).collect())
    }
}

/// Pages through a query's results, one request per page.
pub struct JobIter {
    query: JobQuery,
    offset: usize,
    buf: Vec<JobRecord>,
    done: bool,
}

impl Iterator for JobIter {
    type Item = ApiResult<JobRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.buf.is_empty() {
            if self.done {
                return None;
            }
            let remaining = self.query.limit.map_or(usize::MAX, |l| l - self.offset);
            let limit = self.query.page_size.min(remaining);
            let q = conduit_service::JobQuery {
                filter: self.query.filter.clone().unwrap_or_default(),
                ordering: self.query.ordering,
                page: Page { limit, offset: self.offset },
            };
            match self.query.api.query_jobs(&q) {
                Ok(page) => {
                    self.offset += page.len();
                    self.done = page.len() < limit || limit == remaining;
                    self.buf = page;
                    self.buf.reverse();
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
        self.buf.pop().map(Ok)
    }
}

/// A fetched job whose tags, parameters and state may be edited locally.
#[derive(Debug, Clone, PartialEq)]
pub struct EditableJob {
    original: JobRecord,
    pub tags: BTreeMap<String, String>,
    pub parameters: BTreeMap<String, String>,
    pub state: JobState,
}

impl EditableJob {
    pub fn new(job: JobRecord) -> Self {
        EditableJob { tags: job.tags.clone(), parameters: job.parameters.clone(), state: job.state, original: job }
    }

    pub fn record(&self) -> &JobRecord {
        &self.original
    }

    fn pending(&self) -> Option<JobUpdate> {
        let mut u = JobUpdate { job_id: self.original.job_id, ..Default::default() };
        if self.tags != self.original.tags {
            u.tags = Some(self.tags.clone());
        }
        if self.parameters != self.original.parameters {
            u.parameters = Some(self.parameters.clone());
        }
        if self.state != self.original.state {
            u.state = Some(self.state);
        }
        (u.tags.is_some() || u.parameters.is_some() || u.state.is_some()).then_some(u)
    }

    pub fn is_dirty(&self) -> bool {
        self.pending().is_some()
    }
}

/// Sends the changed fields of every dirty job in one bulk update. Accepted
/// edits become the new baseline; rejected ones stay dirty.
pub fn save_all(api: &dyn Api, jobs: &mut [EditableJob]) -> ApiResult<UpdateOutcome> {
    let updates: Vec<JobUpdate> = jobs.iter().filter_map(EditableJob::pending).collect();
    if updates.is_empty() {
        return Ok(UpdateOutcome::default());
    }
    let out = api.update_jobs(&updates)?;
    for j in jobs.iter_mut() {
        if out.errors.iter().all(|e| e.job_id != j.original.job_id) {
            j.original.tags = j.tags.clone();
            j.original.parameters = j.parameters.clone();
            j.original.state = j.state;
        }
    }
    Ok(out)
}
