//! Every scenario under `scenarios/` is re-run and compared byte for byte
//! with `tests/golden/<name>/`. Set `UPDATE_GOLDEN=1` to rewrite the files.

use std::fs;
use std::path::{Path, PathBuf};

use thermolab_cli::{parse_scenario, run, RunKind, RunSettings};

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn golden_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn scenario_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("toml" | "json")))
        .collect();
    files.sort();
    files
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

#[test]
fn scenarios_match_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let files = scenario_files();
    assert!(!files.is_empty());
    for path in files {
        let name = path.file_stem().unwrap().to_str().unwrap();
        let config = parse_scenario(&fs::read_to_string(&path).unwrap()).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        run(&config, &RunSettings { out: tmp.path().to_path_buf(), seed: None, emit: None })
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        let golden = golden_dir(name);
        if update {
            let _ = fs::remove_dir_all(&golden);
            fs::create_dir_all(&golden).unwrap();
            for f in sorted_files(tmp.path()) {
                fs::copy(tmp.path().join(&f), golden.join(&f)).unwrap();
            }
            continue;
        }
        assert_eq!(sorted_files(tmp.path()), sorted_files(&golden), "{name}: artifact set");
        for f in sorted_files(&golden) {
            let got = fs::read(tmp.path().join(&f)).unwrap();
            let want = fs::read(golden.join(&f)).unwrap();
            assert!(got == want, "{name}/{f} differs from the golden file");
        }
    }
}

#[test]
fn every_kind_has_a_golden_scenario() {
    let mut kinds: Vec<RunKind> = scenario_files()
        .iter()
        .map(|p| parse_scenario(&fs::read_to_string(p).unwrap()).unwrap().run.kind)
        .collect();
    kinds.sort_by_key(|k| k.name());
    kinds.dedup();
    assert_eq!(kinds.len(), 8, "{kinds:?}");
}
