use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value as Json;

fn program(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../core/programs/{name}.casm"))
}

fn pufbind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pufbind"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Json {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn protect_light(dir: &Path) -> PathBuf {
    let out = dir.join("prot");
    let o = pufbind(&[
        "protect",
        s(&program("traffic_light")),
        "--device-seed",
        "42",
        "--challenge-bits",
        "16",
        "--response-bits",
        "16",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn version_names_the_dialect() {
    let o = pufbind(&["--version"]);
    assert!(o.status.success());
    let v = stdout(&o);
    assert!(v.contains(env!("CARGO_PKG_VERSION")), "{v}");
    assert!(v.contains("dialect 1.0"), "{v}");
}

#[test]
fn parse_reports_summary_and_diagnostics() {
    let o = pufbind(&["parse", s(&program("batch_mixer"))]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("BatchMixer: ok (8 functions, 4 main rules, 1 named rules)"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.casm");
    fs::write(&bad, "asm B\nenum S = { A }\ncontrolled c S init Z\nctlstate c\nunsafe false\nrule r : if c = A then c := A endif\n").unwrap();
    let o = pufbind(&["parse", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.casm:3:"), "{err}");
    assert!(stdout(&o).is_empty());

    let o = pufbind(&["parse", s(&dir.path().join("missing.casm"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn canonical_output_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let o = pufbind(&["parse", "--canonical", s(&program("traffic_light"))]);
    assert!(o.status.success());
    let copy = dir.path().join("copy.casm");
    fs::write(&copy, stdout(&o)).unwrap();
    let again = pufbind(&["parse", "--canonical", s(&copy)]);
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn run_writes_one_line_per_state() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = pufbind(&[
        "run",
        s(&program("traffic_light")),
        "--steps",
        "12",
        "--seed",
        "3",
        "--monitored",
        "random:9",
        "--trace",
        s(&trace),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&trace).unwrap();
    let lines: Vec<Json> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 13);
    assert_eq!(lines[0]["state"]["phase"], "Stop1Stop2");
    for l in &lines {
        assert!(!(l["state"]["GoLight(1)"] == true && l["state"]["GoLight(2)"] == true));
    }

    let again = dir.path().join("u.jsonl");
    pufbind(&[
        "run",
        s(&program("traffic_light")),
        "--steps",
        "12",
        "--seed",
        "3",
        "--monitored",
        "random:9",
        "--trace",
        s(&again),
    ]);
    assert_eq!(fs::read_to_string(&again).unwrap(), text);
}

fn passed(v: bool) -> Json {
    let mut m = serde_json::Map::new();
    for p in ["Stop1Stop2", "Go1Stop2", "Stop2Stop1", "Go2Stop1"] {
        m.insert(format!("Passed({p})"), Json::Bool(v));
    }
    Json::Object(m)
}

#[test]
fn run_accepts_scripted_inputs_and_rejects_bad_policies() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("inputs.json");
    fs::write(
        &script,
        serde_json::to_string(&[passed(true), passed(false), passed(true)]).unwrap(),
    )
    .unwrap();
    let trace = dir.path().join("t.jsonl");
    let policy = format!("file:{}", s(&script));
    let o = pufbind(&[
        "run",
        s(&program("traffic_light")),
        "--steps",
        "3",
        "--seed",
        "0",
        "--monitored",
        &policy,
        "--trace",
        s(&trace),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let phases: Vec<String> = fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<Json>(l).unwrap()["state"]["phase"]
                .as_str()
                .unwrap()
                .to_owned()
        })
        .collect();
    assert_eq!(phases, ["Stop1Stop2", "Go1Stop2", "Go1Stop2", "Stop2Stop1"]);

    let o = pufbind(&[
        "run",
        s(&program("traffic_light")),
        "--steps",
        "3",
        "--seed",
        "0",
        "--monitored",
        "sometimes",
        "--trace",
        s(&trace),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--monitored"));
}

#[test]
fn symexec_reports_paths_and_condition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let o = pufbind(&["symexec", s(&program("traffic_light")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = read_json(&out);
    assert_eq!(j["paths"].as_array().unwrap().len(), 5);
    assert_eq!(j["merged"].as_array().unwrap().len(), 2);
    assert!(j["condX"].as_str().unwrap().contains("GoLight(2)"));
    assert!(j["symbols"]
        .as_array()
        .unwrap()
        .iter()
        .any(|x| x["name"] == "alpha_next"));

    let o = pufbind(&[
        "symexec",
        s(&program("traffic_light")),
        "--out",
        s(&out),
        "--no-ctl-abstraction",
    ]);
    assert!(o.status.success());
    let j = read_json(&out);
    assert!(j["condX"].is_null());
    assert!(!j["symbols"]
        .as_array()
        .unwrap()
        .iter()
        .any(|x| x["name"] == "alpha_next"));
}

#[test]
fn protect_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = protect_light(dir.path());
    for f in [
        "protected.casm",
        "enrollment.json",
        "original.casm",
        "provenance.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = pufbind(&["parse", s(&out.join("protected.casm"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e = read_json(&out.join("enrollment.json"));
    assert_eq!(e["transitions"].as_array().unwrap().len(), 4);
    let prov = read_json(&out.join("provenance.json"));
    assert_eq!(prov["provenance"]["transitions"], 4);
    assert_eq!(prov["condition"]["paths"], 4);
    assert!(!fs::read_to_string(out.join("provenance.json"))
        .unwrap()
        .contains("seed"));

    // same device, same bytes
    let again = tempfile::tempdir().unwrap();
    let out2 = protect_light(again.path());
    for f in ["protected.casm", "enrollment.json"] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(out2.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn protected_programs_run_on_target_and_clone() {
    let dir = tempfile::tempdir().unwrap();
    let out = protect_light(dir.path());
    let trace = dir.path().join("t.jsonl");
    let run = |seed: &str| {
        pufbind(&[
            "run-protected",
            s(&out),
            "--device-seed",
            seed,
            "--steps",
            "50",
            "--seed",
            "1",
            "--trace",
            s(&trace),
        ])
    };
    let target = run("42");
    assert!(target.status.success(), "{}", stderr(&target));
    assert!(
        stdout(&target).contains("50 bound, 0 fallbacks"),
        "{}",
        stdout(&target)
    );
    let clone = run("43");
    assert!(clone.status.success());
    assert!(
        stdout(&clone).contains("0 bound, 50 fallbacks"),
        "{}",
        stdout(&clone)
    );
}

#[test]
fn tampered_enrollment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = protect_light(dir.path());
    let path = out.join("enrollment.json");
    let mut e = read_json(&path);
    e["transitions"].as_array_mut().unwrap().pop();
    fs::write(&path, e.to_string()).unwrap();
    let o = pufbind(&["verify", s(&out), "--exhaustive", "--adversarial-puf"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = pufbind(&[
        "verify",
        s(&program("traffic_light")),
        "--exhaustive",
        "--report",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_json(&report)["unsafeReachable"], false);

    let o = pufbind(&[
        "verify",
        s(&program("faulty_traffic_light")),
        "--exhaustive",
        "--report",
        s(&report),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let r = read_json(&report);
    assert_eq!(r["unsafeReachable"], true);
    assert!(r["witness"]["steps"].as_array().unwrap().len() <= 3);

    let o = pufbind(&[
        "verify",
        s(&program("faulty_traffic_light")),
        "--runs",
        "5",
        "--steps",
        "50",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let out = protect_light(dir.path());
    let o = pufbind(&["verify", s(&out), "--exhaustive", "--adversarial-puf"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = pufbind(&["verify", s(&out), "--exhaustive", "--device-seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = pufbind(&[
        "verify",
        s(&out),
        "--runs",
        "10",
        "--steps",
        "200",
        "--adversarial-puf",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = pufbind(&["verify", s(&out), "--exhaustive"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_reports_target_and_clones() {
    let dir = tempfile::tempdir().unwrap();
    let out = protect_light(dir.path());
    let report = dir.path().join("c.json");
    let seq = dir.path().join("c_seq.json");
    let args = |r: &Path, extra: Option<&'static str>| {
        let mut a = vec![
            "compare".to_string(),
            s(&out).to_string(),
            "--target-seed".into(),
            "42".into(),
            "--clone-seeds".into(),
            "1..10,".into(),
            "--trials".into(),
            "3".into(),
            "--steps".into(),
            "300".into(),
            "--report".into(),
            s(r).to_string(),
        ];
        a.extend(extra.map(str::to_string));
        a
    };
    let bad = Command::new(env!("CARGO_BIN_EXE_pufbind"))
        .args(args(&report, None))
        .output()
        .unwrap();
    assert_eq!(
        bad.status.code(),
        Some(2),
        "malformed seed list must be refused"
    );

    let mut a = args(&report, None);
    a[5] = "1..10".into();
    let o = Command::new(env!("CARGO_BIN_EXE_pufbind"))
        .args(&a)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&report);
    assert_eq!(r["target"]["mismatches"], 0);
    assert_eq!(r["target"]["fallbacks"], 0);
    assert_eq!(r["target"]["runs"][0]["verdict"], "EQUAL");
    assert_eq!(r["clones"]["trials"], 10);
    assert_eq!(r["clones"]["safetyViolations"], 0);
    assert_eq!(r["clones"]["trialsDiverged"], 10);

    let mut a = args(&seq, Some("--sequential"));
    a[5] = "1..10".into();
    let o = Command::new(env!("CARGO_BIN_EXE_pufbind"))
        .args(&a)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(read_json(&seq), r);
}

#[test]
fn compare_flags_the_enrolled_device_among_clones() {
    let dir = tempfile::tempdir().unwrap();
    let out = protect_light(dir.path());
    let report = dir.path().join("c.json");
    let o = pufbind(&[
        "compare",
        s(&out),
        "--target-seed",
        "42",
        "--clone-seeds",
        "41,42,43",
        "--trials",
        "1",
        "--steps",
        "200",
        "--report",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("[42]"), "{}", stderr(&o));
    assert_eq!(
        read_json(&report)["clones"]["flaggedSeeds"],
        serde_json::json!([42])
    );
}
