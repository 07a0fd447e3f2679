use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::ids::{AppId, JobId, SiteId, TransferItemId};
use crate::records::{TransferItemRecord, TransferItemState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::In => "in",
            Direction::Out => "out",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParameterSpec {
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferSlot {
    pub direction: Direction,
    #[serde(default)]
    pub required: bool,
    pub local_path: String,
    #[serde(default)]
    pub recursive: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

/// An application definition indexed by the service. The service never runs
/// anything; the site resolves the definition locally by `(site_id, name)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AppSpec {
    #[serde(default)]
    pub app_id: AppId,
    #[serde(default)]
    pub site_id: SiteId,
    pub name: String,
    pub command_template: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParameterSpec>,
    #[serde(default)]
    pub transfer_slots: BTreeMap<String, TransferSlot>,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
    #[serde(default)]
    pub cleanup_files: Vec<String>,
}

/// Placeholder names in template order, duplicates included.
pub fn placeholders(template: &str) -> Vec<&str> {
    scan(template).filter_map(|piece| match piece {
        Piece::Placeholder(name) => Some(name),
        Piece::Literal(_) => None,
    })
    .collect()
}

enum Piece<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn is_ident(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits a template into literal runs and `{{name}}` placeholders. Braces
/// that do not enclose a valid identifier are left as literal text.
fn scan(template: &str) -> impl Iterator<Item = Piece<'_>> {
    let mut rest = template;
    let mut pending: Option<Piece<'_>> = None;
    std::iter::from_fn(move || {
        if let Some(p) = pending.take() {
            return Some(p);
        }
        if rest.is_empty() {
            return None;
        }
        let mut search_from = 0;
        loop {
            let Some(open) = rest[search_from..].find("{{").map(|i| i + search_from) else {
                let lit = rest;
                rest = "";
                return Some(Piece::Literal(lit));
            };
            let after = &rest[open + 2..];
            if let Some(close) = after.find("}}") {
                let name = &after[..close];
                if is_ident(name) {
                    let lit = &rest[..open];
                    rest = &after[close + 2..];
                    let ph = Piece::Placeholder(name);
                    if lit.is_empty() {
                        return Some(ph);
                    }
                    pending = Some(ph);
                    return Some(Piece::Literal(lit));
                }
            }
            search_from = open + 1;
        }
    })
}

pub fn render_command(app: &AppSpec, parameters: &BTreeMap<String, String>) -> Result<String, ModelError> {
    let names: BTreeSet<&str> = placeholders(&app.command_template).into_iter().collect();
    if let Some(unknown) = parameters
        .keys()
        .find(|k| !names.contains(k.as_str()) && !app.parameters.contains_key(*k))
    {
        return Err(ModelError::UnknownParameter(unknown.clone()));
    }
    let mut out = String::with_capacity(app.command_template.len());
    for piece in scan(&app.command_template) {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Placeholder(name) => {
                let value = parameters
                    .get(name)
                    .map(String::as_str)
                    .or_else(|| app.parameters.get(name).and_then(|p| p.default.as_deref()))
                    .ok_or_else(|| ModelError::MissingParameter(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// Relative, and never climbs out of the job working directory.
pub fn is_contained_relative_path(p: &str) -> bool {
    let path = Path::new(p);
    !p.is_empty()
        && path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

impl AppSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.is_empty() {
            return Err(ModelError::InvalidApp("empty name".into()));
        }
        for name in placeholders(&self.command_template) {
            if !self.parameters.contains_key(name) {
                return Err(ModelError::InvalidApp(format!("placeholder `{name}` is not a declared parameter")));
            }
        }
        for (slot, spec) in &self.transfer_slots {
            if !is_contained_relative_path(&spec.local_path) {
                return Err(ModelError::InvalidApp(format!(
                    "slot `{slot}` local_path `{}` must be relative and inside the workdir",
                    spec.local_path
                )));
            }
        }
        Ok(())
    }

    pub fn has_inbound_slots(&self) -> bool {
        self.transfer_slots.values().any(|s| s.direction == Direction::In)
    }
}

/// The endpoint part of an `endpoint-id:path` URI.
pub fn remote_endpoint(uri: &str) -> &str {
    uri.split_once(':').map_or(uri, |(ep, _)| ep)
}

/// One PENDING transfer item per bound slot. Ids are left for the store to assign.
pub fn resolve_transfer_slots(
    app: &AppSpec,
    bindings: &BTreeMap<String, String>,
) -> Result<Vec<TransferItemRecord>, ModelError> {
    if let Some(unknown) = bindings.keys().find(|k| !app.transfer_slots.contains_key(*k)) {
        return Err(ModelError::UnknownSlot(unknown.clone()));
    }
    if let Some((name, _)) = app
        .transfer_slots
        .iter()
        .find(|(name, slot)| slot.required && !bindings.contains_key(*name))
    {
        return Err(ModelError::MissingRequiredSlot(name.clone()));
    }
    Ok(bindings
        .iter()
        .map(|(slot_name, uri)| {
            let slot = &app.transfer_slots[slot_name];
            TransferItemRecord {
                item_id: TransferItemId::default(),
                job_id: JobId::default(),
                slot: slot_name.clone(),
                direction: slot.direction,
                local_path: slot.local_path.clone(),
                remote_uri: uri.clone(),
                state: TransferItemState::Pending,
                task_ref: None,
                bytes: 0,
                attempts: 0,
            }
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use proptest::prelude::*;

    use super::*;

    pub fn eigen_corr() -> AppSpec {
        let slot = |direction, local: &str| TransferSlot {
            direction,
            required: true,
            local_path: local.into(),
            recursive: false,
            description: String::new(),
        };
        AppSpec {
            app_id: AppId(1),
            site_id: SiteId(1),
            name: "EigenCorr".into(),
            command_template: "/software/xpcs-eigen2/build/corr inp.h5 -imm inp.imm".into(),
            parameters: BTreeMap::new(),
            transfer_slots: BTreeMap::from([
                ("h5_in".into(), slot(Direction::In, "inp.h5")),
                ("imm_in".into(), slot(Direction::In, "inp.imm")),
                ("h5_out".into(), slot(Direction::Out, "inp.h5")),
            ]),
            environment: BTreeMap::from([("HDF5_USE_FILE_LOCKING".into(), "FALSE".into())]),
            cleanup_files: vec!["*.hdf".into(), "*.imm".into(), "*.h5".into()],
        }
    }

    fn templated(template: &str, params: &[(&str, bool, Option<&str>)]) -> AppSpec {
        AppSpec {
            command_template: template.into(),
            parameters: params
                .iter()
                .map(|(n, req, d)| (n.to_string(), ParameterSpec { required: *req, default: d.map(str::to_string) }))
                .collect(),
            transfer_slots: BTreeMap::new(),
            ..eigen_corr()
        }
    }

    fn params(kv: &[(&str, &str)]) -> BTreeMap<String, String> {
        kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn corr_template_without_params_is_unchanged() {
        let app = eigen_corr();
        assert_eq!(
            render_command(&app, &BTreeMap::new()).unwrap(),
            "/software/xpcs-eigen2/build/corr inp.h5 -imm inp.imm"
        );
    }

    #[test]
    fn substitutes_and_repeats() {
        let app = templated("echo {{msg}}", &[("msg", true, None)]);
        assert_eq!(render_command(&app, &params(&[("msg", "hi")])).unwrap(), "echo hi");
        let app = templated("f {{a}} {{a}}", &[("a", true, None)]);
        assert_eq!(render_command(&app, &params(&[("a", "x")])).unwrap(), "f x x");
    }

    #[test]
    fn defaults_fill_optional() {
        let app = templated("run -n {{n}}", &[("n", false, Some("4"))]);
        assert_eq!(render_command(&app, &BTreeMap::new()).unwrap(), "run -n 4");
    }

    #[test]
    fn missing_and_unknown() {
        let app = templated("echo {{msg}}", &[("msg", true, None)]);
        assert_eq!(render_command(&app, &BTreeMap::new()), Err(ModelError::MissingParameter("msg".into())));
        assert_eq!(
            render_command(&app, &params(&[("msg", "a"), ("zzz", "b")])),
            Err(ModelError::UnknownParameter("zzz".into()))
        );
    }

    #[test]
    fn malformed_braces_are_literal() {
        let app = templated("a {{ b }} {{1x}} {{{c}}", &[("c", true, None)]);
        assert_eq!(render_command(&app, &params(&[("c", "C")])).unwrap(), "a {{ b }} {{1x}} {C");
    }

    #[test]
    fn validate_rejects_undeclared_placeholder_and_escaping_paths() {
        let app = templated("echo {{msg}}", &[]);
        assert!(matches!(app.validate(), Err(ModelError::InvalidApp(_))));
        let mut app = eigen_corr();
        app.transfer_slots.get_mut("h5_in").unwrap().local_path = "../x".into();
        assert!(app.validate().is_err());
        app.transfer_slots.get_mut("h5_in").unwrap().local_path = "/abs".into();
        assert!(app.validate().is_err());
        assert!(eigen_corr().validate().is_ok());
    }

    #[test]
    fn eigen_corr_slots_resolve_to_three_items() {
        let bindings = params(&[
            ("h5_in", "aps-dtn:/data/a.h5"),
            ("imm_in", "aps-dtn:/data/a.imm"),
            ("h5_out", "aps-dtn:/results/a.h5"),
        ]);
        let items = resolve_transfer_slots(&eigen_corr(), &bindings).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items.iter().filter(|i| i.direction == Direction::In).count(), 2);
        assert_eq!(items.iter().filter(|i| i.direction == Direction::Out).count(), 1);
        let paths: BTreeSet<_> = items.iter().map(|i| (i.slot.as_str(), i.local_path.as_str())).collect();
        assert!(paths.contains(&("h5_in", "inp.h5")));
        assert!(paths.contains(&("imm_in", "inp.imm")));
        assert!(paths.contains(&("h5_out", "inp.h5")));
        assert!(items.iter().all(|i| i.state == TransferItemState::Pending));
    }

    #[test]
    fn slot_errors() {
        let app = templated("true", &[]);
        assert!(resolve_transfer_slots(&app, &BTreeMap::new()).unwrap().is_empty());
        let bindings = params(&[("h5_in", "a:/x"), ("imm_in", "a:/y")]);
        assert_eq!(
            resolve_transfer_slots(&eigen_corr(), &bindings),
            Err(ModelError::MissingRequiredSlot("h5_out".into()))
        );
        assert_eq!(
            resolve_transfer_slots(&app, &params(&[("nope", "a:/x")])),
            Err(ModelError::UnknownSlot("nope".into()))
        );
    }

    #[test]
    fn endpoint_of_uri() {
        assert_eq!(remote_endpoint("aps-dtn:/data/x.h5"), "aps-dtn");
        assert_eq!(remote_endpoint("bare"), "bare");
    }

    proptest! {
        #[test]
        fn rendering_is_idempotent(
            words in proptest::collection::vec("[a-z]{1,6}", 1..6),
            values in proptest::collection::vec("[a-zA-Z0-9 ./-]{0,8}", 6),
        ) {
            let names: Vec<String> = (0..words.len()).map(|i| format!("p{i}")).collect();
            let template = words.iter().zip(&names).map(|(w, n)| format!("{w} {{{{{n}}}}}")).collect::<Vec<_>>().join(" ");
            let spec: Vec<(&str, bool, Option<&str>)> = names.iter().map(|n| (n.as_str(), true, None)).collect();
            let app = templated(&template, &spec);
            let supplied: BTreeMap<String, String> = names.iter().cloned().zip(values.iter().cloned()).collect();
            let rendered = render_command(&app, &supplied).unwrap();
            prop_assert!(placeholders(&rendered).is_empty());
            let again = templated(&rendered, &spec);
            prop_assert_eq!(render_command(&again, &supplied).unwrap(), rendered);
        }
    }
}
