#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use conduit_core::{
    AppId, AppSpec, Direction, JobDraft, ManualClock, NodeResource, ParameterSpec, SiteId, TransferSlot,
};
use conduit_service::{Api, LocalApi, RegisterSite, Service, StoreConfig};

pub struct Fixture {
    pub clock: Arc<ManualClock>,
    pub svc: Arc<Service>,
    pub api: LocalApi,
    pub site: SiteId,
    pub echo: AppId,
    pub staged: AppId,
}

pub fn echo_app() -> AppSpec {
    AppSpec {
        name: "echo".into(),
        command_template: "echo {{msg}}".into(),
        parameters: [("msg".to_string(), ParameterSpec { required: true, default: None })].into(),
        ..Default::default()
    }
}

pub fn staged_app() -> AppSpec {
    let slot = |direction, required, local_path: &str| TransferSlot {
        direction,
        required,
        local_path: local_path.into(),
        recursive: false,
        description: String::new(),
    };
    AppSpec {
        name: "staged".into(),
        command_template: "process input.dat".into(),
        transfer_slots: [
            ("input".to_string(), slot(Direction::In, true, "input.dat")),
            ("result".to_string(), slot(Direction::Out, false, "result.dat")),
        ]
        .into(),
        ..Default::default()
    }
}

pub fn fixture_with(cfg: StoreConfig) -> Fixture {
    let clock = Arc::new(ManualClock::new(conduit_core::Timestamp(1_000_000_000)));
    let svc = Arc::new(Service::in_memory(cfg, clock.clone()));
    let user = svc.register_user("alice", "pw").unwrap();
    let api = LocalApi::new(svc.clone(), user.user_id);
    let site = api.register_site(&RegisterSite { hostname: "theta".into(), path: "/p/alice".into() }).unwrap().site_id;
    let ids = api.sync_apps(site, &[echo_app(), staged_app()]).unwrap();
    Fixture { clock, svc, api, site, echo: ids[0], staged: ids[1] }
}

pub fn fixture() -> Fixture {
    fixture_with(StoreConfig { lease_ttl_secs: 30.0, max_retries: 3 })
}

pub fn echo_draft(app: AppId, i: usize) -> JobDraft {
    JobDraft {
        app_id: app,
        workdir: format!("w/{i}"),
        parameters: BTreeMap::from([("msg".to_string(), format!("hi{i}"))]),
        ..Default::default()
    }
}

pub fn nodes(n: u32) -> Vec<NodeResource> {
    (0..n).map(|i| NodeResource::new(i, 64, 0.0, 64)).collect()
}
