//! Regenerates the JSON files in `presets/` from the built-in configuration
//! builders. Run from the workspace root:
//! `cargo run -p seqtte --example write_presets`.

use seqtte::benchmark::{cell_analysis_config, BiasStudyConfig, CoverageConfig, GridCell, RModel, SweepConfig};
use seqtte::simulator::{Mechanism, SimConfig, Study};

fn write<T: serde::Serialize>(name: &str, value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(format!("presets/{name}.json"), text).unwrap_or_else(|e| panic!("presets/{name}.json: {e}"));
}

fn main() {
    std::fs::create_dir_all("presets").expect("create presets/");
    for (study, s) in [(Study::Study1, "study1"), (Study::Study2, "study2")] {
        for (m, tag) in [
            (Mechanism::MBias, "mbias"),
            (Mechanism::EffectHeterogeneity, "heterogeneity"),
            (Mechanism::MBiasMediator, "mediator"),
        ] {
            write(&format!("{s}_{tag}"), &SimConfig::preset(m, study));
        }
    }
    let bias = |study| Mechanism::ALL.iter().map(|&m| BiasStudyConfig::desk(study, m)).collect::<Vec<_>>();
    write("bias_study1", &bias(Study::Study1));
    write("bias_study2", &bias(Study::Study2));
    write("coverage", &Mechanism::ALL.iter().map(|&m| CoverageConfig::desk(m)).collect::<Vec<_>>());
    let analysis = |study, stratified| {
        cell_analysis_config(
            &BiasStudyConfig::desk(study, Mechanism::MBias),
            &GridCell::new(RModel::R, true, stratified),
        )
    };
    write("analysis_study1", &analysis(Study::Study1, false));
    write("analysis_study2", &analysis(Study::Study2, true));
    write("sweep", &SweepConfig::desk(Study::Study1, Mechanism::MBias));
}
