//! The four built-in attack scenarios, compiled into the binary.

use crate::engine::scenario::Scenario;

/// `(name, TOML source)` in canonical order.
pub const SOURCES: [(&str, &str); 4] = [
    (
        "memory_divergence",
        include_str!("../../scenarios/memory_divergence.toml"),
    ),
    (
        "access_control",
        include_str!("../../scenarios/access_control.toml"),
    ),
    ("inheritance", include_str!("../../scenarios/inheritance.toml")),
    (
        "sibling_termination",
        include_str!("../../scenarios/sibling_termination.toml"),
    ),
];

pub fn bundled_scenarios() -> Vec<Scenario> {
    SOURCES
        .iter()
        .map(|(name, src)| {
            Scenario::from_toml(src).unwrap_or_else(|e| panic!("bundled scenario {name}: {e}"))
        })
        .collect()
}

pub fn bundled(name: &str) -> Option<Scenario> {
    SOURCES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| Scenario::from_toml(src).expect("bundled scenario parses"))
}

pub fn bundled_source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
