//! End-to-end runs of the `gapdiff` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gapdiff(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapdiff"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn check<'a>(m: &'a Value, name: &str) -> &'a Value {
    m["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check named {name}"))
}

#[test]
fn malformed_config_exits_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{ \"seed\": ").unwrap();
    let out = gapdiff(&["verify-all", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));

    fs::write(&cfg, r#"{ "seed": 3, "colour": "red" }"#).unwrap();
    let out = gapdiff(&["verify-all", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_preset_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gapdiff(&["chain-law", "--preset", "nonesuch"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = gapdiff(
            &["verify-all", "--preset", "three-point", "--paths", "2000", "--seed", "7", "--ks-threshold", "0.1"],
            d.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() > 3);
    for name in names {
        let a = fs::read(dirs[0].path().join(&name)).unwrap();
        let b = fs::read(dirs[1].path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between runs");
    }
}

#[test]
fn verify_all_on_three_point_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = gapdiff(
        &["verify-all", "--preset", "three-point", "--paths", "100000"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["pass"], true);
    assert!(check(&m, "chain_oracle_tv")["value"].as_f64().unwrap() < 1e-8);
    assert_eq!(check(&m, "poisson_clock_ks")["pass"], true);
    assert!(check(&m, "resolvent_identity")["value"].as_f64().unwrap() < 1e-10);
    let seed = m["seed"].as_u64().unwrap();
    let hash = m["config_hash"].as_str().unwrap();
    for a in m["artifacts"].as_array().unwrap() {
        let text = fs::read_to_string(dir.path().join(a.as_str().unwrap())).unwrap();
        assert!(text.starts_with(&format!("# seed={seed}, config_hash={hash}\n")));
    }
}

#[test]
fn failing_threshold_exits_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = gapdiff(
        &["embed-poisson", "--preset", "three-point", "--paths", "500", "--ks-threshold", "1e-6"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(manifest(dir.path())["pass"], false);
}

#[test]
fn price_round_trip_from_quotes() {
    let dir = tempfile::tempdir().unwrap();
    let quotes = dir.path().join("quotes.csv");
    // call prices of {99: 1/4, 100: 1/2, 101: 1/4} at maturity 1
    fs::write(
        &quotes,
        "t_star,forward\n1,100\nstrike,price\n99,1.0\n100,0.25\n101,0\n",
    )
    .unwrap();
    let out = gapdiff(
        &["price", "--option-chain", quotes.to_str().unwrap(), "--paths", "2000"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert!(check(&m, "reprice_exact")["value"].as_f64().unwrap() < 1e-10);
}
