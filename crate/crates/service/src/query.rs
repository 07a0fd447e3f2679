//! Query-string encoding of the list filters, shared by server and client.

use std::str::FromStr;

use conduit_core::{AppId, Direction, JobId, SiteId, Timestamp};

use crate::error::{ApiError, ApiResult, ErrorKind};
use crate::types::{BatchJobFilter, EventFilter, JobFilter, JobQuery, Page, TransferFilter};

pub type Pairs = Vec<(String, String)>;

pub fn parse(raw: Option<&str>) -> Pairs {
    form_urlencoded::parse(raw.unwrap_or("").as_bytes()).into_owned().collect()
}

pub fn encode(pairs: &Pairs) -> String {
    form_urlencoded::Serializer::new(String::new()).extend_pairs(pairs).finish()
}

fn bad(key: &str, value: &str) -> ApiError {
    ApiError::new(ErrorKind::InvalidFilter, format!("invalid value `{value}` for `{key}`"))
}

/// Every value given for `key`; comma-separated lists are split.
fn values<'a>(pairs: &'a Pairs, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
    pairs.iter().filter(move |(k, _)| k == key).flat_map(|(_, v)| v.split(',')).filter(|v| !v.is_empty())
}

fn many<T: FromStr>(pairs: &Pairs, key: &str) -> ApiResult<Vec<T>> {
    values(pairs, key).map(|v| v.parse().map_err(|_| bad(key, v))).collect()
}

fn one<T: FromStr>(pairs: &Pairs, key: &str) -> ApiResult<Option<T>> {
    let mut vals = many::<T>(pairs, key)?;
    if vals.len() > 1 {
        return Err(ApiError::new(ErrorKind::InvalidFilter, format!("`{key}` given more than once")));
    }
    Ok(vals.pop())
}

fn tags(pairs: &Pairs) -> ApiResult<std::collections::BTreeMap<String, String>> {
    values(pairs, "tag")
        .map(|t| t.split_once(':').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| bad("tag", t)))
        .collect()
}

fn reject_unknown(pairs: &Pairs, known: &[&str]) -> ApiResult<()> {
    match pairs.iter().find(|(k, _)| !known.contains(&k.as_str())) {
        Some((k, _)) => Err(ApiError::new(ErrorKind::InvalidFilter, format!("unknown filter `{k}`"))),
        None => Ok(()),
    }
}

const JOB_KEYS: &[&str] = &["site_id", "state", "tag", "job_id", "app_id", "ordering", "limit", "offset"];

pub fn job_filter_from(pairs: &Pairs) -> ApiResult<JobFilter> {
    Ok(JobFilter {
        site_id: one::<SiteId>(pairs, "site_id")?,
        states: many(pairs, "state")?,
        tags: tags(pairs)?,
        job_ids: many::<JobId>(pairs, "job_id")?,
        app_id: one::<AppId>(pairs, "app_id")?,
    })
}

pub fn job_query_from(pairs: &Pairs) -> ApiResult<JobQuery> {
    reject_unknown(pairs, JOB_KEYS)?;
    let limit = one::<usize>(pairs, "limit")?.unwrap_or(usize::MAX);
    if limit == 0 {
        return Err(bad("limit", "0"));
    }
    Ok(JobQuery {
        filter: job_filter_from(pairs)?,
        ordering: one(pairs, "ordering")?.unwrap_or_default(),
        page: Page { limit, offset: one(pairs, "offset")?.unwrap_or(0) },
    })
}

pub fn job_filter_pairs(f: &JobFilter) -> Pairs {
    let mut p = Pairs::new();
    if let Some(s) = f.site_id {
        p.push(("site_id".into(), s.to_string()));
    }
    if let Some(a) = f.app_id {
        p.push(("app_id".into(), a.to_string()));
    }
    p.extend(f.states.iter().map(|s| ("state".into(), s.to_string())));
    p.extend(f.tags.iter().map(|(k, v)| ("tag".into(), format!("{k}:{v}"))));
    p.extend(f.job_ids.iter().map(|j| ("job_id".into(), j.to_string())));
    p
}

pub fn job_query_pairs(q: &JobQuery) -> Pairs {
    let mut p = job_filter_pairs(&q.filter);
    if q.ordering != Default::default() {
        p.push(("ordering".into(), q.ordering.as_str().into()));
    }
    if q.page.limit != usize::MAX {
        p.push(("limit".into(), q.page.limit.to_string()));
    }
    if q.page.offset != 0 {
        p.push(("offset".into(), q.page.offset.to_string()));
    }
    p
}

pub fn event_filter_from(pairs: &Pairs) -> ApiResult<EventFilter> {
    reject_unknown(pairs, &["site_id", "job_id", "tag", "from_state", "to_state", "begin", "end"])?;
    Ok(EventFilter {
        site_id: one(pairs, "site_id")?,
        job_ids: many(pairs, "job_id")?,
        tags: tags(pairs)?,
        from_state: one(pairs, "from_state")?,
        to_state: one(pairs, "to_state")?,
        begin: one::<i64>(pairs, "begin")?.map(Timestamp),
        end: one::<i64>(pairs, "end")?.map(Timestamp),
    })
}

pub fn event_filter_pairs(f: &EventFilter) -> Pairs {
    let mut p = Pairs::new();
    if let Some(s) = f.site_id {
        p.push(("site_id".into(), s.to_string()));
    }
    p.extend(f.job_ids.iter().map(|j| ("job_id".into(), j.to_string())));
    p.extend(f.tags.iter().map(|(k, v)| ("tag".into(), format!("{k}:{v}"))));
    if let Some(s) = f.from_state {
        p.push(("from_state".into(), s.to_string()));
    }
    if let Some(s) = f.to_state {
        p.push(("to_state".into(), s.to_string()));
    }
    if let Some(t) = f.begin {
        p.push(("begin".into(), t.0.to_string()));
    }
    if let Some(t) = f.end {
        p.push(("end".into(), t.0.to_string()));
    }
    p
}

pub fn transfer_filter_from(pairs: &Pairs) -> ApiResult<TransferFilter> {
    reject_unknown(pairs, &["site_id", "state", "direction"])?;
    Ok(TransferFilter {
        site_id: one(pairs, "site_id")?
            .ok_or_else(|| ApiError::new(ErrorKind::InvalidFilter, "`site_id` is required"))?,
        state: one(pairs, "state")?,
        direction: match one::<String>(pairs, "direction")?.as_deref() {
            None => None,
            Some("in") => Some(Direction::In),
            Some("out") => Some(Direction::Out),
            Some(other) => return Err(bad("direction", other)),
        },
    })
}

pub fn transfer_filter_pairs(f: &TransferFilter) -> Pairs {
    let mut p = vec![("site_id".to_string(), f.site_id.to_string())];
    if let Some(s) = f.state {
        p.push(("state".into(), format!("{s:?}").to_ascii_uppercase()));
    }
    if let Some(d) = f.direction {
        p.push(("direction".into(), if d == Direction::In { "in" } else { "out" }.into()));
    }
    p
}

pub fn batchjob_filter_from(pairs: &Pairs) -> ApiResult<BatchJobFilter> {
    reject_unknown(pairs, &["site_id", "state"])?;
    Ok(BatchJobFilter { site_id: one(pairs, "site_id")?, states: many(pairs, "state")? })
}

pub fn batchjob_filter_pairs(f: &BatchJobFilter) -> Pairs {
    let mut p = Pairs::new();
    if let Some(s) = f.site_id {
        p.push(("site_id".into(), s.to_string()));
    }
    p.extend(f.states.iter().map(|s| ("state".into(), serde_json::to_value(s).unwrap().as_str().unwrap().to_string())));
    p
}

#[cfg(test)]
mod tests {
    use conduit_core::JobState;

    use super::*;
    use crate::types::Ordering;

    #[test]
    fn job_query_round_trip() {
        let q = JobQuery {
            filter: JobFilter {
                site_id: Some(SiteId(3)),
                states: vec![JobState::Ready, JobState::StagedIn],
                tags: [("exp".to_string(), "xpcs run".to_string())].into(),
                job_ids: vec![JobId(1), JobId(9)],
                app_id: None,
            },
            ordering: Ordering::LastUpdateDesc,
            page: Page { limit: 50, offset: 100 },
        };
        let s = encode(&job_query_pairs(&q));
        assert_eq!(job_query_from(&parse(Some(&s))).unwrap(), q);
    }

    #[test]
    fn comma_lists_and_errors() {
        let f = job_query_from(&parse(Some("state=READY,RUNNING&tag=a:b"))).unwrap();
        assert_eq!(f.filter.states, vec![JobState::Ready, JobState::Running]);
        for bad in ["state=NOPE", "tag=nocolon", "limit=0", "colour=red", "site_id=1&site_id=2", "ordering=size"] {
            assert_eq!(job_query_from(&parse(Some(bad))).unwrap_err().code, ErrorKind::InvalidFilter, "{bad}");
        }
    }

    #[test]
    fn other_filters_round_trip() {
        let e = EventFilter { to_state: Some(JobState::Running), begin: Some(Timestamp(5)), ..Default::default() };
        assert_eq!(event_filter_from(&parse(Some(&encode(&event_filter_pairs(&e))))).unwrap(), e);
        let t = TransferFilter {
            site_id: SiteId(2),
            state: Some(conduit_core::TransferItemState::Pending),
            direction: Some(Direction::Out),
        };
        assert_eq!(transfer_filter_from(&parse(Some(&encode(&transfer_filter_pairs(&t))))).unwrap(), t);
        let b = BatchJobFilter { site_id: Some(SiteId(1)), states: vec![conduit_core::BatchJobState::PendingSubmission] };
        assert_eq!(batchjob_filter_from(&parse(Some(&encode(&batchjob_filter_pairs(&b))))).unwrap(), b);
        assert!(transfer_filter_from(&parse(None)).is_err());
    }
}
