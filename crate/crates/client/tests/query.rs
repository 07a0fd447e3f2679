mod common;

use std::sync::Arc;

use common::*;
use conduit_client::{save_all, JobQuery};
use conduit_core::{JobId, JobRecord, JobState};
use conduit_service::{Api, JobFilter};
use proptest::prelude::*;

#[test]
fn building_queries_is_free() {
    let w = world(1);
    let api = Counting::new(w.local.clone());
    let q = JobQuery::new(api.clone())
        .tags([("experiment", "XPCS")])
        .state(JobState::Failed)
        .site(w.sites[0])
        .page_size(3)
        .limit(10);
    let _r = q.filter(&JobFilter::default()).order_by(conduit_service::Ordering::JobIdDesc);
    assert_eq!(api.calls(), 0);
}

#[test]
fn empty_result_takes_exactly_one_request() {
    let w = world(1);
    let api = Counting::new(w.local.clone());
    let jobs = JobQuery::new(api.clone()).state(JobState::Failed).fetch().unwrap();
    assert!(jobs.is_empty());
    assert_eq!(api.calls(), 1);
}

#[test]
fn iteration_pages_lazily() {
    let w = world(1);
    let drafts: Vec<_> = (0..23).map(|_| draft(w.apps[0], &[])).collect();
    w.local.create_jobs(&drafts).unwrap();
    let api = Counting::new(w.local.clone());
    let q = JobQuery::new(api.clone()).page_size(5);
    let mut it = q.iter();
    it.next().unwrap().unwrap();
    assert_eq!(api.calls(), 1);
    let rest: Vec<JobRecord> = it.map(Result::unwrap).collect();
    assert_eq!(rest.len(), 22);
    assert_eq!(api.calls(), 5);
    let ids: Vec<JobId> = q.fetch().unwrap().iter().map(|j| j.job_id).collect();
    assert_eq!(ids, (1..=23).map(JobId).collect::<Vec<_>>());

    let before = api.calls();
    assert_eq!(q.limit(7).fetch().unwrap().len(), 7);
    assert_eq!(api.calls() - before, 2);
    assert_eq!(q.limit(7).count().unwrap(), 7);
}

#[test]
fn chained_filters_equal_the_combined_filter() {
    let w = world(1);
    w.local
        .create_jobs(&[
            draft(w.apps[0], &[("experiment", "XPCS")]),
            draft(w.apps[0], &[("experiment", "XPCS"), ("run", "2")]),
            draft(w.apps[0], &[("experiment", "other")]),
        ])
        .unwrap();
    let api: Arc<dyn Api> = Arc::new(w.local.clone());
    let a = JobQuery::new(api.clone()).tags([("experiment", "XPCS")]).tags([("run", "2")]);
    let b = JobQuery::new(api.clone()).tags([("experiment", "XPCS"), ("run", "2")]);
    assert_eq!(a.fetch().unwrap(), b.fetch().unwrap());
    assert_eq!(a.fetch().unwrap().len(), 1);
    // Contradictions match nothing and cost nothing.
    let c = Counting::new(w.local.clone());
    let none = JobQuery::new(c.clone()).tags([("experiment", "XPCS")]).tags([("experiment", "other")]);
    assert!(none.fetch().unwrap().is_empty());
    assert_eq!(c.calls(), 0);
}

#[test]
fn save_sends_one_bulk_update_of_changed_jobs() {
    let w = world(1);
    let drafts: Vec<_> = (0..4).map(|_| draft(w.apps[0], &[])).collect();
    w.local.create_jobs(&drafts).unwrap();
    let api = Counting::new(w.local.clone());
    let mut jobs = JobQuery::new(api.clone()).edit().unwrap();
    let before = api.calls();
    assert_eq!(save_all(api.as_ref(), &mut jobs).unwrap().events.len(), 0);
    assert_eq!(api.calls(), before);
    jobs[1].tags.insert("k".into(), "v".into());
    jobs[3].tags.insert("k".into(), "v".into());
    save_all(api.as_ref(), &mut jobs).unwrap();
    assert_eq!(api.calls(), before + 1);
    assert!(jobs.iter().all(|j| !j.is_dirty()));
    let tagged = JobQuery::new(api.clone()).tags([("k", "v")]).fetch().unwrap();
    assert_eq!(tagged.iter().map(|j| j.job_id).collect::<Vec<_>>(), vec![JobId(2), JobId(4)]);
}

fn arb_filter() -> impl Strategy<Value = JobFilter> {
    let states = proptest::sample::subsequence(
        vec![JobState::StagedIn, JobState::Ready, JobState::Running, JobState::Failed],
        0..3,
    );
    let tags = proptest::collection::btree_map(
        proptest::sample::select(vec!["a".to_string(), "b".to_string()]),
        proptest::sample::select(vec!["1".to_string(), "2".to_string()]),
        0..2,
    );
    let ids = proptest::collection::vec((1u64..=20).prop_map(JobId), 0..6);
    (states, tags, ids).prop_map(|(states, tags, job_ids)| JobFilter { states, tags, job_ids, ..Default::default() })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn query_results_match_a_full_scan(f1 in arb_filter(), f2 in arb_filter(), page in 1usize..8) {
        let w = world(2);
        let mut drafts = Vec::new();
        for i in 0..20usize {
            let tags: Vec<(&str, &str)> = match i % 4 {
                0 => vec![("a", "1")],
                1 => vec![("a", "2"), ("b", "1")],
                2 => vec![("b", "2")],
                _ => vec![],
            };
            drafts.push(draft(w.apps[i % 2], &tags));
        }
        w.local.create_jobs(&drafts).unwrap();
        let all = w.local.query_jobs(&Default::default()).unwrap();
        let api: Arc<dyn Api> = Arc::new(w.local.clone());
        let got = JobQuery::new(api).page_size(page).filter(&f1).filter(&f2).fetch().unwrap();
        let want: Vec<JobRecord> = all.into_iter().filter(|j| f1.matches(j) && f2.matches(j)).collect();
        prop_assert_eq!(got, want);
    }
}
