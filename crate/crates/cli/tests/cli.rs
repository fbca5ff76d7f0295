use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fblab::io::{read_field, read_json, FieldMeta};
use fblab::obstacle::solve_obstacle;
use serde_json::Value;

const RADIAL: &str = "[problem]\nkind = \"obstacle\"\ninstance = \"radial\"\n[grid]\nh = \"1/64\"\n";

struct Lab {
    root: tempfile::TempDir,
}

impl Lab {
    fn new() -> Lab {
        Lab {
            root: tempfile::tempdir().unwrap(),
        }
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let path = self.root.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    fn out(&self, stem: &str) -> PathBuf {
        self.root.path().join("out").join(stem)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_fblab"))
            .args(args)
            .env("FBLAB_OUTPUT", self.root.path())
            .output()
            .unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_a_bundle_that_reads_back_exactly() {
    let lab = Lab::new();
    let cfg = lab.config("radial.toml", RADIAL);
    let out = lab.run(&["solve", arg(&cfg)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let dir = lab.out("radial");
    for f in ["meta.json", "u.csv", "v.csv", "contact.csv", "free_boundary.csv", "report.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let meta: FieldMeta = read_json(&dir.join("meta.json")).unwrap();
    let domain = meta.domain().unwrap();
    let v = read_field(&dir.join("v.csv"), &domain).unwrap();
    let sol = solve_obstacle(&fblab::instances::radial_obstacle(1.0 / 64.0).unwrap()).unwrap();
    let same = v.raw().iter().zip(sol.v.raw()).all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
    assert!(same);
    let report: Value = read_json(&dir.join("report.json")).unwrap();
    assert_eq!(report["status"], "converged");
    assert!(report["residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let lab = Lab::new();
    let cfg = lab.config("bad.toml", &format!("{RADIAL}spacing = 3\n"));
    let out = lab.run(&["solve", arg(&cfg)]);
    assert_eq!(code(&out), 2);
    let err = text(&out.stderr);
    assert!(err.contains("spacing") && err.contains("line"), "{err}");
}

#[test]
fn missing_config_is_a_config_error() {
    let lab = Lab::new();
    assert_eq!(code(&lab.run(&["solve", "no-such.toml"])), 2);
    assert_eq!(code(&lab.run(&["verify", "no-such.toml"])), 2);
}

#[test]
fn iteration_cap_exits_3_and_records_the_residual() {
    let lab = Lab::new();
    let cfg = lab.config("capped.toml", &format!("{RADIAL}[solver]\nmax_iters = 1\n"));
    let out = lab.run(&["solve", arg(&cfg)]);
    assert_eq!(code(&out), 3, "{}", text(&out.stderr));
    let report: Value = read_json(&lab.out("capped").join("report.json")).unwrap();
    assert_eq!(report["status"], "not-converged");
    assert!(report["residual"].as_f64().unwrap() > 0.0);
    assert_eq!(report["iterations"], 1);
}

#[test]
fn blowup_classifies_and_rejects_interior_points() {
    let lab = Lab::new();
    let cfg = lab.config("radial.toml", RADIAL);
    assert_eq!(code(&lab.run(&["solve", arg(&cfg)])), 0);

    let out = lab.run(&["blowup", arg(&cfg), "--point", "0.5,0", "--levels", "1"]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let seq: Value = read_json(&lab.out("radial").join("blowup/p_0.5000_0.0000/sequence.json")).unwrap();
    let tag = &seq["classification"]["tag"];
    assert_eq!(tag["kind"], "Regular");
    let nu: Vec<f64> = tag["nu"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(nu[0].clamp(-1.0, 1.0).acos().to_degrees() <= 2.0, "{nu:?}");
    assert!(lab.out("radial").join("blowup/p_0.5000_0.0000/level_1.csv").is_file());

    // more levels than the grid resolves: truncated with a warning, not an error
    let out = lab.run(&["blowup", arg(&cfg), "--point", "0.5,0", "--levels", "12"]);
    assert_eq!(code(&out), 0);
    assert!(text(&out.stderr).contains("truncated"));

    let out = lab.run(&["blowup", arg(&cfg), "--point", "0,0"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn classify_writes_a_summary_per_point() {
    let lab = Lab::new();
    let cfg = lab.config(
        "line.toml",
        "[problem]\nkind = \"obstacle\"\ninstance = \"one-d\"\n[grid]\nh = \"1/128\"\n[analysis]\npoints = [[0.5], [-0.5]]\n",
    );
    assert_eq!(code(&lab.run(&["solve", arg(&cfg)])), 0);
    let out = lab.run(&["classify", arg(&cfg)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let summary = std::fs::read_to_string(lab.out("line").join("classify/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(text(&out.stdout).matches("regular").count(), 3);
}

#[test]
fn verify_exit_status_follows_the_checks() {
    let lab = Lab::new();
    let good = lab.config("good.toml", "[[instances]]\nkind = \"model-fields\"\nh = 0.03125\n");
    let out = lab.run(&["verify", arg(&good)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stdout));
    assert!(lab.out("good").join("report.txt").is_file());
    let out = lab.run(&["report", arg(&lab.out("good"))]);
    assert_eq!(code(&out), 0);
    assert!(text(&out.stdout).contains("half-space-model"));

    // a zero regular-fit threshold cannot accept any fit
    let strict = lab.config(
        "strict.toml",
        "[blowup]\ntheta_reg = 0.0\n[[instances]]\nkind = \"obstacle1d\"\nh = 0.0078125\na = 0.125\n",
    );
    assert_eq!(code(&lab.run(&["verify", arg(&strict)])), 1);
    assert_eq!(code(&lab.run(&["report", arg(&lab.out("strict"))])), 1);

    let typo = lab.config("typo.toml", "[thresholds]\nomegaa = 1.0\n");
    assert_eq!(code(&lab.run(&["verify", arg(&typo)])), 2);
}

#[test]
fn refine_prints_orders_and_rejects_uneven_spacings() {
    let lab = Lab::new();
    let out = lab.run(&["refine", "--instance", "half-space-model", "--spacings", "1/16,1/32"]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("rescale"));
    assert!(lab.out("refine").join("half-space-model.json").is_file());
    let out = lab.run(&["refine", "--instance", "half-space-model", "--spacings", "1/16,1/24"]);
    assert_eq!(code(&out), 2);
}
