//! The shipped scenario files stay in sync with the built-in builders.

use std::fs;
use std::path::PathBuf;

use iotgw_core::sim::{
    earthquake_config, fire_config, gen_scale_topology, parse_scenario, upgrade_config,
};

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_files_parse_to_builtin_configs() {
    for (file, expected) in [
        ("earthquake.cfg", earthquake_config()),
        ("fire.cfg", fire_config()),
        ("upgrade.cfg", upgrade_config()),
        ("scale-k3.cfg", gen_scale_topology(3)),
    ] {
        let text = fs::read_to_string(scenarios_dir().join(file))
            .unwrap_or_else(|e| panic!("{}: {}", file, e));
        let parsed = parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {}", file, e));
        assert_eq!(parsed, expected, "{} drifted from its builder", file);
    }
}
