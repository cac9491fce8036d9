use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use thermolab_cli::{parse_scenario, run, Emit, RunError, RunSettings};

fn settings(dir: &Path) -> RunSettings {
    RunSettings { out: dir.to_path_buf(), seed: None, emit: None }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn lyapunov_on_attractor() {
    let config = parse_scenario(
        "[field]\nc = [0.5, 0.0]\n[run]\nkind = \"lyapunov\"\nduration = 2000.0\nstep = 0.01\n",
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    run(&config, &settings(tmp.path())).unwrap();
    let out = read_json(&tmp.path().join("lyapunov.json"));
    let ex: Vec<f64> = out["exponents"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((ex[0] + 0.5).abs() <= 1e-2 && ex[1].abs() <= 1e-2, "{ex:?}");
}

#[test]
fn flat_orbit_is_a_straight_line() {
    let config = parse_scenario(
        "[run]\nkind = \"orbit\"\nduration = 3.0\nstep = 0.01\nstart = { x = 0.2, y = 0.3, angle = 0.0 }\n",
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    run(&config, &RunSettings { emit: Some(Emit::Csv), ..settings(tmp.path()) }).unwrap();
    assert!(!tmp.path().join("orbit.json").exists());
    let mut reader = csv::Reader::from_path(tmp.path().join("orbit.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["t", "x", "y", "v1", "v2", "e1x", "e1y", "sigma", "energy"]
    );
    let mut rows = 0;
    for rec in reader.records() {
        let r: Vec<f64> = rec.unwrap().iter().map(|x| x.parse().unwrap()).collect();
        assert!((r[1] - 0.2 - r[0]).abs() < 1e-12);
        assert_eq!(r[2], 0.3);
        rows += 1;
    }
    assert_eq!(rows, 301);
}

#[test]
fn cslab_reports_homothety() {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/homothety_cslab.toml")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    run(&parse_scenario(&text).unwrap(), &settings(tmp.path())).unwrap();
    let out = read_json(&tmp.path().join("cslab.json"));
    let hit = &out["homothety"];
    assert_eq!(hit["size"], 7);
    assert_eq!(hit["kind"], "dilation");
    assert!((hit["scalar"].as_f64().unwrap() + 1.2f64.powi(7)).abs() < 1e-12);
}

#[test]
fn numerical_failure_writes_report() {
    // along x on the flat torus the section y = 0 is never crossed
    let config = parse_scenario(
        "[run]\nkind = \"periodic\"\nstep = 0.01\nmax_return_time = 5.0\nsection = { axis = \"y\", level = 0.5 }\n",
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let err = run(&config, &settings(tmp.path())).unwrap_err();
    assert!(matches!(err, RunError::Numerical(_)));
    assert_eq!(err.exit_code(), 2);
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["status"], "failed");
    assert_eq!(report["diagnostics"].as_array().unwrap().len(), 1);
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_thermolab")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = tmp.path().join(name);
        fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    let ok = write("ok.toml", "[run]\nkind = \"orbit\"\nduration = 0.5\nstep = 0.01\n");
    let res = binary(&["--scenario", &ok, "--out", out, "--quiet"]);
    assert_eq!(res.status.code(), Some(0));
    assert!(res.stdout.is_empty());

    let bad = write("bad.toml", "[metrric]\nkind = \"flat\"\n");
    let res = binary(&["--scenario", &bad, "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("metrric"));

    let res = binary(&["--scenario", &ok, "--emit", "xml"]);
    assert_eq!(res.status.code(), Some(1));

    let failing = write(
        "fail.toml",
        "[run]\nkind = \"periodic\"\nstep = 0.01\nmax_return_time = 5.0\nsection = { axis = \"y\", level = 0.5 }\n",
    );
    let res = binary(&["--scenario", &failing, "--out", out]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("franks.toml");
    fs::write(&scenario, "[run]\nkind = \"franks\"\nsamples = 5\nseed = 1\n").unwrap();
    let run_with = |dir: &str, seed: Option<&str>| {
        let out = tmp.path().join(dir);
        let mut args = vec!["--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert_eq!(binary(&args).status.code(), Some(0));
        fs::read(out.join("franks.csv")).unwrap()
    };
    let default = run_with("a", None);
    assert_eq!(default, run_with("b", Some("1")));
    assert_ne!(default, run_with("c", Some("2")));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = ["first", "second"];
    for d in dirs {
        for scenario in ["curved_franks.toml", "saddle_periodic.toml", "attractor_cone.toml"] {
            let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(scenario);
            let out = tmp.path().join(d).join(scenario);
            let res = binary(&["--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]);
            assert_eq!(res.status.code(), Some(0));
        }
    }
    for scenario in ["curved_franks.toml", "saddle_periodic.toml", "attractor_cone.toml"] {
        let a = tmp.path().join("first").join(scenario);
        let b = tmp.path().join("second").join(scenario);
        for entry in fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
    }
}
