mod common;

use std::collections::BTreeMap;

use common::*;
use conduit_core::{JobDraft, JobState, TransferItemState};
use conduit_service::{
    AcquireRequest, Api, CreateSession, ErrorKind, EventFilter, JobFilter, JobQuery, JobUpdate, Page, TransferFilter,
    TransferUpdate,
};

fn states(f: &Fixture) -> Vec<JobState> {
    f.api.query_jobs(&JobQuery::default()).unwrap().iter().map(|j| j.state).collect()
}

#[test]
fn job_without_inputs_runs_to_finished() {
    let f = fixture();
    let job = f.api.create_jobs(&[echo_draft(f.echo, 0)]).unwrap().remove(0);
    assert_eq!(job.state, JobState::StagedIn);
    let s = f.api.create_session(&CreateSession { site_id: f.site, batchjob_id: None }).unwrap();
    let got = f.api.acquire(s.session_id, &AcquireRequest::new(10, nodes(1))).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].session_id, Some(s.session_id));
    let lease = |st| JobUpdate { session_id: Some(s.session_id), ..JobUpdate::transition(job.job_id, st) };
    f.clock.advance_secs(1.0);
    let out = f.api.update_jobs(&[lease(JobState::Running)]).unwrap();
    assert!(out.errors.is_empty());
    f.clock.advance_secs(5.0);
    let out = f.api.update_jobs(&[lease(JobState::RunDone)]).unwrap();
    let to: Vec<_> = out.events.iter().map(|e| e.to_state).collect();
    assert_eq!(to, vec![JobState::RunDone, JobState::Finished]);
    let history: Vec<_> =
        f.api.events(&EventFilter { job_ids: vec![job.job_id], ..Default::default() }).unwrap();
    let chain: Vec<_> = history.iter().map(|e| (e.from_state, e.to_state)).collect();
    assert_eq!(
        chain,
        vec![
            (JobState::Created, JobState::Ready),
            (JobState::Ready, JobState::StagedIn),
            (JobState::StagedIn, JobState::Running),
            (JobState::Running, JobState::RunDone),
            (JobState::RunDone, JobState::Finished),
        ]
    );
    let back = f.api.query_jobs(&JobQuery::default()).unwrap().remove(0);
    assert_eq!(back.session_id, None);
}

#[test]
fn transfer_items_gate_stage_in_and_finish() {
    let f = fixture();
    let draft = JobDraft {
        app_id: f.staged,
        workdir: "s".into(),
        transfer_bindings: BTreeMap::from([
            ("input".to_string(), "aps-dtn:/data/in.h5".to_string()),
            ("result".to_string(), "home:/res/out.h5".to_string()),
        ]),
        transfer_bytes: BTreeMap::from([("input".to_string(), 1_000_000)]),
        ..Default::default()
    };
    let job = f.api.create_jobs(&[draft]).unwrap().remove(0);
    assert_eq!(job.state, JobState::Ready);
    let pending = f
        .api
        .list_transfers(&TransferFilter { site_id: f.site, state: Some(TransferItemState::Pending), direction: None })
        .unwrap();
    assert_eq!(pending.len(), 1, "stage-out items are hidden until RUN_DONE");
    assert_eq!(pending[0].bytes, 1_000_000);
    let inbound = pending[0].item_id;

    let missing_ref = f.api.update_transfers(&[TransferUpdate {
        item_id: inbound,
        state: TransferItemState::Done,
        task_ref: None,
        attempts: None,
    }]);
    assert_eq!(missing_ref.unwrap_err().code, ErrorKind::InvalidItemState);

    let active = TransferUpdate { item_id: inbound, state: TransferItemState::Active, task_ref: Some("t-1".into()), attempts: None };
    f.api.update_transfers(&[active]).unwrap();
    let done = TransferUpdate { item_id: inbound, state: TransferItemState::Done, task_ref: None, attempts: None };
    let r = f.api.update_transfers(&[done]).unwrap();
    assert_eq!(r.events.len(), 1);
    assert_eq!(states(&f), vec![JobState::StagedIn]);

    let s = f.api.create_session(&CreateSession { site_id: f.site, batchjob_id: None }).unwrap();
    f.api.acquire(s.session_id, &AcquireRequest::new(1, nodes(1))).unwrap();
    f.api.update_jobs(&[JobUpdate::transition(job.job_id, JobState::Running)]).unwrap();
    f.api.update_jobs(&[JobUpdate::transition(job.job_id, JobState::RunDone)]).unwrap();
    assert_eq!(states(&f), vec![JobState::RunDone]);
    let out = f
        .api
        .list_transfers(&TransferFilter { site_id: f.site, state: Some(TransferItemState::Pending), direction: None })
        .unwrap();
    assert_eq!(out.len(), 1);
    f.api
        .update_transfers(&[TransferUpdate {
            item_id: out[0].item_id,
            state: TransferItemState::Done,
            task_ref: Some("t-2".into()),
            attempts: None,
        }])
        .unwrap();
    assert_eq!(states(&f), vec![JobState::Finished]);
}

#[test]
fn inbound_error_leaves_job_ready() {
    let f = fixture();
    let draft = JobDraft {
        app_id: f.staged,
        transfer_bindings: BTreeMap::from([("input".to_string(), "ep:/x".to_string())]),
        ..Default::default()
    };
    f.api.create_jobs(&[draft]).unwrap();
    let it = f.api.list_transfers(&TransferFilter { site_id: f.site, state: None, direction: None }).unwrap().remove(0);
    f.api
        .update_transfers(&[TransferUpdate { item_id: it.item_id, state: TransferItemState::Error, task_ref: None, attempts: Some(3) }])
        .unwrap();
    assert_eq!(states(&f), vec![JobState::Ready]);
    let again = f.api.update_transfers(&[TransferUpdate { item_id: it.item_id, state: TransferItemState::Active, task_ref: None, attempts: None }]);
    assert_eq!(again.unwrap_err().code, ErrorKind::InvalidItemState);
}

#[test]
fn creation_validates_atomically() {
    let f = fixture();
    let bad = JobDraft { app_id: f.echo, ..Default::default() };
    let err = f.api.create_jobs(&[echo_draft(f.echo, 0), bad]).unwrap_err();
    assert_eq!(err.code, ErrorKind::MissingParameter);
    assert_eq!(err.detail["index"], 1);
    assert_eq!(f.api.count_jobs(&JobFilter::default()).unwrap(), 0);

    let no_input = JobDraft { app_id: f.staged, ..Default::default() };
    assert_eq!(f.api.create_jobs(&[no_input]).unwrap_err().code, ErrorKind::MissingRequiredSlot);
    let unknown_slot = JobDraft {
        app_id: f.staged,
        transfer_bindings: BTreeMap::from([("input".into(), "a:b".into()), ("bogus".into(), "a:c".into())]),
        ..Default::default()
    };
    assert_eq!(f.api.create_jobs(&[unknown_slot]).unwrap_err().code, ErrorKind::UnknownSlot);
    let no_app = JobDraft { app_id: conduit_core::AppId(99), ..Default::default() };
    assert_eq!(f.api.create_jobs(&[no_app]).unwrap_err().code, ErrorKind::UnknownApp);

    let mut a = echo_draft(f.echo, 0);
    let mut b = echo_draft(f.echo, 1);
    a.parent_drafts = vec![1];
    b.parent_drafts = vec![0];
    assert_eq!(f.api.create_jobs(&[a, b]).unwrap_err().code, ErrorKind::CyclicDependency);
    assert_eq!(f.api.count_jobs(&JobFilter::default()).unwrap(), 0);
}

#[test]
fn dag_readiness_follows_parents() {
    let f = fixture();
    let mut child = echo_draft(f.echo, 2);
    child.parent_drafts = vec![0, 1];
    let mut grandchild = echo_draft(f.echo, 3);
    grandchild.parent_drafts = vec![2];
    let jobs = f.api.create_jobs(&[echo_draft(f.echo, 0), echo_draft(f.echo, 1), child, grandchild]).unwrap();
    assert_eq!(
        jobs.iter().map(|j| j.state).collect::<Vec<_>>(),
        vec![JobState::StagedIn, JobState::StagedIn, JobState::AwaitingParents, JobState::AwaitingParents]
    );
    let run = |id, to| f.api.update_jobs(&[JobUpdate::transition(id, to)]).unwrap();
    for id in [jobs[0].job_id, jobs[1].job_id] {
        run(id, JobState::Running);
    }
    run(jobs[0].job_id, JobState::RunDone);
    assert_eq!(states(&f)[2], JobState::AwaitingParents);
    run(jobs[1].job_id, JobState::RunDone);
    assert_eq!(states(&f)[2], JobState::StagedIn);

    // Failure propagates down the chain.
    run(jobs[2].job_id, JobState::Running);
    for _ in 0..3 {
        run(jobs[2].job_id, JobState::RunError);
        assert_eq!(states(&f)[2], JobState::RestartReady);
        run(jobs[2].job_id, JobState::Running);
    }
    run(jobs[2].job_id, JobState::RunError);
    assert_eq!(states(&f)[2..], [JobState::Failed, JobState::Failed]);
    let late = {
        let mut d = echo_draft(f.echo, 9);
        d.parent_ids = vec![jobs[3].job_id];
        f.api.create_jobs(&[d]).unwrap().remove(0)
    };
    assert_eq!(late.state, JobState::Failed);
}

#[test]
fn bulk_update_reports_per_item_errors() {
    let f = fixture();
    let jobs = f.api.create_jobs(&[echo_draft(f.echo, 0), echo_draft(f.echo, 1)]).unwrap();
    let out = f
        .api
        .update_jobs(&[
            JobUpdate::transition(jobs[0].job_id, JobState::Running),
            JobUpdate::transition(jobs[1].job_id, JobState::Finished),
            JobUpdate::transition(conduit_core::JobId(77), JobState::Running),
        ])
        .unwrap();
    assert_eq!(out.events.len(), 1);
    let codes: Vec<_> = out.errors.iter().map(|e| (e.job_id.0, e.code)).collect();
    assert_eq!(codes, vec![(jobs[1].job_id.0, ErrorKind::InvalidTransition), (77, ErrorKind::NotFound)]);

    let tagged = JobUpdate {
        job_id: jobs[1].job_id,
        tags: Some(BTreeMap::from([("k".into(), "v".into())])),
        ..Default::default()
    };
    f.api.update_jobs(&[tagged]).unwrap();
    let q = JobQuery {
        filter: JobFilter { tags: BTreeMap::from([("k".into(), "v".into())]), ..Default::default() },
        ..Default::default()
    };
    assert_eq!(f.api.query_jobs(&q).unwrap().len(), 1);
}

#[test]
fn queries_page_and_order() {
    let f = fixture();
    let drafts: Vec<_> = (0..25).map(|i| echo_draft(f.echo, i)).collect();
    f.api.create_jobs(&drafts).unwrap();
    let page = |offset| {
        f.api
            .query_jobs(&JobQuery { page: Page { limit: 10, offset }, ..Default::default() })
            .unwrap()
            .iter()
            .map(|j| j.job_id.0)
            .collect::<Vec<_>>()
    };
    assert_eq!(page(0), (1..=10).collect::<Vec<_>>());
    assert_eq!(page(20), (21..=25).collect::<Vec<_>>());
    let desc = f
        .api
        .query_jobs(&JobQuery { ordering: conduit_service::Ordering::JobIdDesc, page: Page { limit: 1, offset: 0 }, ..Default::default() })
        .unwrap();
    assert_eq!(desc[0].job_id.0, 25);
    let b = f.api.backlog(f.site).unwrap();
    assert_eq!((b.pending_total, b.runnable_total), (25, 25));
}
