use std::path::PathBuf;

use admit_core::ScenarioConfig;

fn bundled() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper_scenario.toml")
}

#[test]
fn bundled_file_matches_builtin() {
    let loaded = ScenarioConfig::load(&bundled()).unwrap();
    assert_eq!(loaded, ScenarioConfig::paper());
}

#[test]
fn serialization_round_trip_is_identity() {
    let loaded = ScenarioConfig::load(&bundled()).unwrap();
    let text = loaded.to_toml_string();
    let again = ScenarioConfig::from_toml_str(&text).unwrap();
    assert_eq!(again, loaded);
    assert_eq!(again.to_toml_string(), text);
}

#[test]
fn json_form_parses_to_the_same_config() {
    let cfg = ScenarioConfig::paper();
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(ScenarioConfig::from_json_str(&json).unwrap(), cfg);
}
