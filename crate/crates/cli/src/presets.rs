//! Configurations shipped in the `presets/` directory, embedded at build time.

pub const PRESETS: &[(&str, &str)] = &[
    ("study1_mbias", include_str!("../../../presets/study1_mbias.json")),
    ("study1_heterogeneity", include_str!("../../../presets/study1_heterogeneity.json")),
    ("study1_mediator", include_str!("../../../presets/study1_mediator.json")),
    ("study2_mbias", include_str!("../../../presets/study2_mbias.json")),
    ("study2_heterogeneity", include_str!("../../../presets/study2_heterogeneity.json")),
    ("study2_mediator", include_str!("../../../presets/study2_mediator.json")),
    ("analysis_study1", include_str!("../../../presets/analysis_study1.json")),
    ("analysis_study2", include_str!("../../../presets/analysis_study2.json")),
    ("bias_study1", include_str!("../../../presets/bias_study1.json")),
    ("bias_study2", include_str!("../../../presets/bias_study2.json")),
    ("coverage", include_str!("../../../presets/coverage.json")),
    ("sweep", include_str!("../../../presets/sweep.json")),
];

/// Alternative names accepted for the benchmark presets.
const ALIASES: &[(&str, &str)] = &[("table2", "bias_study1"), ("table3", "bias_study2"), ("tableS3", "coverage")];

pub fn get(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    let name = name.rsplit('/').next().unwrap_or(name);
    let name = ALIASES.iter().find(|(alias, _)| *alias == name).map_or(name, |(_, target)| *target);
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}
