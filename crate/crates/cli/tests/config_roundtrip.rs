use geoflow_cli::ExperimentConfig;
use proptest::prelude::*;

fn index_config(seed: u64, r: f64, radius: f64) -> String {
    format!(
        r#"{{"schema_version":1,"seed":{seed},"surface":{{"kind":"round_sphere","radius":{radius:?}}},
            "experiment":{{"kind":"index","geodesic":{{"type":"parallel","r":{r:?}}}}}}}"#
    )
}

proptest! {
    #[test]
    fn floats_survive_serialization_bit_exactly(seed in any::<u64>(), r in 1e-6f64..3.0, radius in 1e-3f64..1e3) {
        let cfg = ExperimentConfig::from_json(&index_config(seed, r, radius)).unwrap();
        let text = String::from_utf8(cfg.to_json()).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back.to_json(), cfg.to_json());
    }

    #[test]
    fn hash_separates_seeds(a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        let ca = ExperimentConfig::from_json(&index_config(a, 1.0, 1.0)).unwrap();
        let cb = ExperimentConfig::from_json(&index_config(b, 1.0, 1.0)).unwrap();
        prop_assert_ne!(ca.hash(), cb.hash());
    }
}

#[test]
fn defaults_are_written_out() {
    let cfg = ExperimentConfig::from_json(&index_config(1, 1.0, 1.0)).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&cfg.to_json()).unwrap();
    assert_eq!(v["experiment"]["sl_nodes"], 256);
    assert_eq!(v["tolerances"]["integration"], 1e-9);
    assert_eq!(v["output"]["format"], "json");
}

#[test]
fn schema_document_matches_the_parser() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{root}/docs/config.schema.json")).unwrap()).unwrap();
    assert_eq!(schema["properties"]["schema_version"]["const"], geoflow_cli::config::SCHEMA_VERSION);
    let mut kinds: Vec<String> = schema["$defs"]["experiment"]["oneOf"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["properties"]["kind"]["const"].as_str().unwrap().to_string())
        .collect();
    let mut shipped = Vec::new();
    for entry in std::fs::read_dir(format!("{root}/configs")).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        shipped.push(ExperimentConfig::from_json(&text).unwrap().experiment.name().to_string());
    }
    kinds.sort();
    shipped.sort();
    shipped.dedup();
    assert_eq!(kinds, shipped);
}
