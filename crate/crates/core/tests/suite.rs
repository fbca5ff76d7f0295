use std::collections::BTreeSet;

use fblab::io::read_json;
use fblab::verify::{run_suite, Instance, SuiteConfig, SuiteReport, ANCHOR_MANIFEST};

#[test]
fn default_suite_covers_the_manifest_and_writes_reports() {
    let report = run_suite(&SuiteConfig::default());
    let emitted: BTreeSet<String> = report.anchors();
    let manifest: BTreeSet<String> = ANCHOR_MANIFEST.iter().map(|s| s.to_string()).collect();
    assert_eq!(emitted, manifest);

    let keys: Vec<(&str, &str)> = report.body.results.iter().map(|r| (r.id.as_str(), r.instance.as_str())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(report.body.results.iter().all(|r| r.error.is_none()));

    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let back: SuiteReport = read_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(back.body.summary, report.body.summary);
    assert_eq!(back.body.config, report.body.config);
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.lines().next().unwrap().starts_with("# generated"));
    assert!(text.contains(&format!("{} checks", report.body.summary.total)));
}

#[test]
fn small_suite_is_deterministic() {
    let config = SuiteConfig {
        instances: vec![
            Instance::Obstacle1d {
                h: 1.0 / 128.0,
                a: 0.125,
                max_iters: None,
            },
            Instance::ModelFields { h: 1.0 / 32.0 },
            Instance::Harnack {
                h: 1.0 / 32.0,
                fields: 2,
                probes: 20,
                seed: 7,
            },
        ],
        ..SuiteConfig::default()
    };
    let a = serde_json::to_string(&run_suite(&config).body).unwrap();
    let b = serde_json::to_string(&run_suite(&config).body).unwrap();
    assert_eq!(a, b);
}
