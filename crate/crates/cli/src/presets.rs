//! Scenario files compiled into the binary.

const PRESETS: &[(&str, &str)] = &[
    ("null", include_str!("../presets/null.toml")),
    ("power", include_str!("../presets/power.toml")),
    ("misspecified", include_str!("../presets/misspecified.toml")),
    ("sigma-half-power", include_str!("../presets/sigma-half-power.toml")),
    ("sigma-one-power", include_str!("../presets/sigma-one-power.toml")),
    ("matching", include_str!("../presets/matching.toml")),
    ("sigma-half-null", include_str!("../presets/sigma-half-null.toml")),
    ("sigma-one-null", include_str!("../presets/sigma-one-null.toml")),
    ("standard-designs", include_str!("../presets/standard-designs.toml")),
    ("futility-curves", include_str!("../presets/futility-curves.toml")),
    ("estimators", include_str!("../presets/estimators.toml")),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
