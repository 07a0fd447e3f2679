//! Scenario files shipped with the crate, addressable by name.

use crate::scenario::{ConfigError, Scenario};

const BUILTIN: &[(&str, &str)] = &[
    ("batching", include_str!("../scenarios/batching.yaml")),
    ("calibrate", include_str!("../scenarios/calibrate.yaml")),
    ("littles-compute", include_str!("../scenarios/littles-compute.yaml")),
    ("littles-transfer", include_str!("../scenarios/littles-transfer.yaml")),
    ("multisite", include_str!("../scenarios/multisite.yaml")),
    ("routing-rr", include_str!("../scenarios/routing-rr.yaml")),
    ("routing-sb", include_str!("../scenarios/routing-sb.yaml")),
    ("stall", include_str!("../scenarios/stall.yaml")),
    ("stress", include_str!("../scenarios/stress.yaml")),
    ("latency", include_str!("../scenarios/latency.yaml")),
    ("theta-alone", include_str!("../scenarios/theta-alone.yaml")),
    ("weak-512", include_str!("../scenarios/weak-512.yaml")),
    ("weak-64", include_str!("../scenarios/weak-64.yaml")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

/// Parses the named built-in scenario.
pub fn builtin(name: &str) -> Result<Scenario, ConfigError> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ConfigError::Invalid(format!("no built-in scenario named {name}")))?;
    Scenario::from_yaml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses() {
        for name in builtin_names() {
            let sc = builtin(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(sc.name, name);
        }
        assert!(builtin("nope").is_err());
    }
}
