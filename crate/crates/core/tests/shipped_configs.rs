use std::path::PathBuf;

use vstream::config::load_config_with_overrides;
use vstream::{load_config, SimConfig};

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn desk_file_matches_builtin_profile() {
    assert_eq!(load_config(shipped("desk.cfg")).unwrap(), SimConfig::desk());
}

#[test]
fn paper_file_matches_builtin_profile() {
    assert_eq!(load_config(shipped("paper.cfg")).unwrap(), SimConfig::paper());
}

#[test]
fn overrides_apply_on_top_of_file() {
    let cfg = load_config_with_overrides(shipped("desk.cfg"), &["velocity_kmh=91".into(), "stall_scope=all".into()]).unwrap();
    assert_eq!(cfg.velocity_kmh, 91.0);
    assert_eq!(cfg, SimConfig::desk().apply_overrides(&["velocity_kmh=91".into(), "stall_scope=all".into()]).unwrap());
}
