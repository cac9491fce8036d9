//! Dispatch of a parsed configuration to the library and artifact output.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thermolab::analysis::{self, PeriodicOptions, LYAPUNOV_WINDOW};
use thermolab::cocycle::{self, BumpProfile, FranksPerturbation, GeneratorPath};
use thermolab::cs::{self, HomothetyBounds, PeriodicLinearSystem};
use thermolab::flow::{fermi_frame, integrate_orbit};
use thermolab::{OrbitOptions, OrbitSegment, Scenario};
use thiserror::Error;

use crate::config::{ConfigError, Emit, RunKind, ScenarioConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    /// Process exit code: 1 for configuration and i/o problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

/// Settings supplied on the command line.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub emit: Option<Emit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Contents of `report.json`. Wall-clock timings are left out so that the
/// report is byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario_hash: String,
    pub kind: String,
    pub seed: Option<u64>,
    pub status: String,
    pub artifacts: Vec<Artifact>,
    pub diagnostics: Vec<String>,
}

/// A table written as CSV: header plus rows of already formatted cells.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn num(x: f64) -> String {
    // drop the sign of negative zero
    format!("{}", if x == 0.0 { 0.0 } else { x })
}

struct Output {
    summary: Value,
    table: Option<Table>,
    diagnostics: Vec<String>,
}

/// Execute the configured run and write `<kind>.json`, `<kind>.csv` and
/// `report.json` into `settings.out`.
pub fn run(config: &ScenarioConfig, settings: &RunSettings) -> Result<RunReport, RunError> {
    config.validate()?;
    let emit = settings.emit.or(config.output.emit).unwrap_or_default();
    let seed = settings.seed.or(config.run.seed);
    let kind = config.run.kind;
    let mut report = RunReport {
        scenario_hash: config.hash(),
        kind: kind.name().to_string(),
        seed,
        status: "ok".to_string(),
        artifacts: Vec::new(),
        diagnostics: Vec::new(),
    };
    fs::create_dir_all(&settings.out).map_err(|e| io_error(&settings.out, e))?;

    match execute(config, seed) {
        Ok(out) => {
            report.diagnostics = out.diagnostics;
            if emit.json() {
                report.artifacts.push(write_json(&settings.out, &format!("{}.json", kind.name()), &out.summary)?);
            }
            if let (true, Some(table)) = (emit.csv(), &out.table) {
                report.artifacts.push(write_csv(&settings.out, &format!("{}.csv", kind.name()), table)?);
            }
            write_json(&settings.out, "report.json", &serde_json::to_value(&report).expect("report serializes"))?;
            Ok(report)
        }
        Err(RunError::Numerical(msg)) => {
            report.status = "failed".to_string();
            report.diagnostics.push(msg.clone());
            write_json(&settings.out, "report.json", &serde_json::to_value(&report).expect("report serializes"))?;
            Err(RunError::Numerical(msg))
        }
        Err(e) => Err(e),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> Result<Artifact, RunError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
    Ok(Artifact { file: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)) })
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<Artifact, RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    write_bytes(dir, name, text.as_bytes())
}

fn write_csv(dir: &Path, name: &str, table: &Table) -> Result<Artifact, RunError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| RunError::Io { path: name.to_string(), message: e.to_string() };
    w.write_record(&table.header).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| RunError::Io { path: name.to_string(), message: e.to_string() })?;
    write_bytes(dir, name, &bytes)
}

fn execute(config: &ScenarioConfig, seed: Option<u64>) -> Result<Output, RunError> {
    let scenario = config.scenario();
    match config.run.kind {
        RunKind::Orbit => run_orbit(config, &scenario),
        RunKind::Lyapunov => run_lyapunov(config, &scenario),
        RunKind::Periodic => run_periodic(config, &scenario),
        RunKind::Cone => run_cone(config, &scenario),
        RunKind::Domination => run_domination(config, &scenario),
        RunKind::Surgery => run_surgery(config, &scenario),
        RunKind::Franks => run_franks(config, &scenario, seed.unwrap_or(0)),
        RunKind::Cslab => run_cslab(config),
    }
}

const ORBIT_COLUMNS: [&str; 9] = ["t", "x", "y", "v1", "v2", "e1x", "e1y", "sigma", "energy"];

fn orbit_table(orbit: &OrbitSegment) -> Table {
    let mut table = Table::new(&ORBIT_COLUMNS);
    for i in 0..orbit.len() {
        let (x, e) = (&orbit.states[i], orbit.frames[i]);
        table.push(
            [orbit.times[i], x.p[0], x.p[1], x.v[0], x.v[1], e[0], e[1], orbit.sigma[i], orbit.energy[i]]
                .map(num)
                .to_vec(),
        );
    }
    table
}

fn run_orbit(config: &ScenarioConfig, scenario: &Scenario) -> Result<Output, RunError> {
    let r = &config.run;
    let mut options = OrbitOptions::new(r.step.unwrap_or(1e-3)).record_every(r.record_every.unwrap_or(1));
    if r.renormalize.unwrap_or(false) {
        options = options.renormalized();
    }
    let start = config.start_state(scenario);
    let orbit = integrate_orbit(scenario, &start, r.duration.unwrap_or(10.0), options).map_err(numerical)?;
    let orbit = fermi_frame(scenario, &orbit).map_err(numerical)?;
    let transport = orbit.transport.as_ref().expect("fermi_frame attaches transport");
    let summary = json!({
        "duration": orbit.duration(),
        "step": orbit.step,
        "samples": orbit.len(),
        "renormalized": orbit.renormalized,
        "max_drift": orbit.max_drift,
        "winding": orbit.winding(),
        "start": orbit.start(),
        "end": orbit.end(),
        "transport_norm_drift": transport.norm_drift,
        "transport_twist": transport.twist.last(),
    });
    Ok(Output { summary, table: Some(orbit_table(&orbit)), diagnostics: Vec::new() })
}

fn run_lyapunov(config: &ScenarioConfig, scenario: &Scenario) -> Result<Output, RunError> {
    let r = &config.run;
    let report = analysis::lyapunov_spectrum(
        scenario,
        &config.start_state(scenario),
        r.duration.unwrap_or(1e4),
        r.step.unwrap_or(0.01),
        r.window.unwrap_or(LYAPUNOV_WINDOW),
    )
    .map_err(numerical)?;
    let mut table = Table::new(&["index", "exponent"]);
    for (i, l) in report.exponents.iter().enumerate() {
        table.push(vec![(i + 1).to_string(), num(*l)]);
    }
    let summary = serde_json::to_value(&report).expect("report serializes");
    Ok(Output { summary, table: Some(table), diagnostics: Vec::new() })
}

fn periodic_options(config: &ScenarioConfig) -> PeriodicOptions {
    let r = &config.run;
    let mut options = PeriodicOptions::new(r.step.unwrap_or(1e-3));
    if let Some(t) = r.tol {
        options.tol = t;
    }
    if let Some(m) = r.max_iterations {
        options.max_iterations = m;
    }
    if let Some(m) = r.max_return_time {
        options.max_return_time = m;
    }
    options
}

fn run_periodic(config: &ScenarioConfig, scenario: &Scenario) -> Result<Output, RunError> {
    let section = config.section();
    let orbit = analysis::find_periodic(scenario, &config.start_state(scenario), &section, &periodic_options(config))
        .map_err(numerical)?;
    let classification = analysis::classify_periodic(&orbit.return_derivative).map_err(numerical)?;
    let summary = json!({ "section": section, "orbit": orbit, "classification": classification });
    Ok(Output { summary, table: Some(orbit_table(&orbit.orbit)), diagnostics: Vec::new() })
}

fn run_cone(config: &ScenarioConfig, scenario: &Scenario) -> Result<Output, RunError> {
    let r = &config.run;
    let orbit = integrate_orbit(
        scenario,
        &config.start_state(scenario),
        r.duration.unwrap_or(1.0),
        OrbitOptions::new(r.step.unwrap_or(1e-3)),
    )
    .map_err(numerical)?;
    let grid = r.grid.unwrap_or(101);
    let mut table = Table::new(&["k", "index", "t", "xi_h", "xi_v", "margin"]);
    let mut reports = Vec::new();
    for &k in r.k.as_deref().unwrap_or(&[0.1]) {
        let report = analysis::cone_invariance_test(scenario, &orbit, k, grid).map_err(numerical)?;
        for s in &report.samples {
            table.push(vec![
                num(k),
                s.index.to_string(),
                num(s.t),
                num(s.direction[0]),
                num(s.direction[1]),
                num(s.margin),
            ]);
        }
        reports.push(json!({
            "k": report.k,
            "grid": report.grid,
            "min_margin": report.min_margin,
            "verdict": report.verdict,
            "q_nonnegative": report.q_nonnegative,
            "gamma_positive": report.gamma_positive,
        }));
    }
    Ok(Output { summary: json!({ "reports": reports }), table: Some(table), diagnostics: Vec::new() })
}

fn run_domination(config: &ScenarioConfig, scenario: &Scenario) -> Result<Output, RunError> {
    let r = &config.run;
    let window = r.window.map_or(analysis::DOMINATION_WINDOW, |w| w.round().max(1.0) as usize);
    let est = analysis::domination_estimator(
        scenario,
        &config.start_state(scenario),
        r.l_max.unwrap_or(5),
        window,
        r.step.unwrap_or(1e-3),
    )
    .map_err(numerical)?;
    let mut table = Table::new(&["l", "worst_ratio"]);
    for (i, ratio) in est.ratios.iter().enumerate() {
        table.push(vec![(i + 1).to_string(), num(*ratio)]);
    }
    let diagnostics = est.diagnostic.iter().cloned().collect();
    let summary = serde_json::to_value(&est).expect("estimate serializes");
    Ok(Output { summary, table: Some(table), diagnostics })
}

fn run_surgery(config: &ScenarioConfig, scenario: &Scenario) -> Result<Output, RunError> {
    let section = config.section();
    let options = periodic_options(config);
    let orbit =
        analysis::find_periodic(scenario, &config.start_state(scenario), &section, &options).map_err(numerical)?;
    let alpha = config.run.alpha.unwrap_or(0.1);
    let report = analysis::surgery_on_orbit(scenario, &orbit, &section, alpha, &options).map_err(numerical)?;
    let mut table = Table::new(&["quantity", "before", "after"]);
    table.push(vec!["beta".into(), num(report.beta_before), num(report.beta_same_curve)]);
    table.push(vec!["log_det".into(), num(report.log_det_before), num(report.log_det_after)]);
    table.push(vec!["period".into(), num(orbit.period), num(report.orbit_after.period)]);
    let summary = json!({ "orbit_before": orbit, "surgery": report });
    Ok(Output { summary, table: Some(table), diagnostics: Vec::new() })
}

fn run_franks(config: &ScenarioConfig, scenario: &Scenario, seed: u64) -> Result<Output, RunError> {
    let r = &config.run;
    let step = r.step.unwrap_or(1e-3);
    let intervals = (1.0 / step).round();
    if (intervals * step - 1.0).abs() > 1e-9 || !(intervals as usize).is_multiple_of(2) {
        return Err(ConfigError::Validation {
            field: "run.step".into(),
            message: "franks needs 1/step to be an even integer".into(),
        }
        .into());
    }
    let orbit = integrate_orbit(scenario, &config.start_state(scenario), 1.0, OrbitOptions::new(step)).map_err(numerical)?;
    let samples = cocycle::orbit_generator_samples(scenario, &orbit);
    let path = GeneratorPath::Sampled(&samples);
    let bumps = BumpProfile::standard(r.radius.unwrap_or(0.1), r.ramp.unwrap_or(0.05));

    let zero = cocycle::franks_tangent(&path, &FranksPerturbation::zero(1), &bumps, 0).map_err(numerical)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Table::new(&["draw", "zeta_norm", "z_norm", "v", "residual"]);
    let (mut min_z, mut max_residual) = (f64::INFINITY, 0.0f64);
    for draw in 0..r.samples.unwrap_or(100) {
        let zeta = FranksPerturbation::random(1, &mut rng);
        let out = cocycle::franks_tangent(&path, &zeta, &bumps, 0).map_err(numerical)?;
        let z = out.z.norm();
        min_z = min_z.min(z);
        max_residual = max_residual.max(out.y.residual);
        table.push(vec![draw.to_string(), num(zeta.norm()), num(z), num(out.y.v), num(out.y.residual)]);
    }
    let summary = json!({
        "seed": seed,
        "draws": table.rows.len(),
        "bumps": bumps,
        "zero_direction_max_abs_z": zero.z.amax(),
        "min_z_norm": min_z,
        "max_tangent_residual": max_residual,
        "tangent_tol": cocycle::TANGENT_TOL,
    });
    Ok(Output { summary, table: Some(table), diagnostics: Vec::new() })
}

fn run_cslab(config: &ScenarioConfig) -> Result<Output, RunError> {
    let r = &config.run;
    let tol = r.tol.unwrap_or(1e-9);
    let mut letters = Vec::new();
    for (i, rows) in r.letters.as_deref().unwrap_or_default().iter().enumerate() {
        let dim = rows.len();
        let m = DMatrix::from_row_iterator(dim, dim, rows.iter().flatten().copied());
        let cs = cs::validate_cs(&m, tol).map_err(|e| numerical(format!("letter {i}: {e}")))?;
        letters.push(cs);
    }
    let mut table = Table::new(&["letter", "mu", "first_re", "first_im", "second_re", "second_im", "defect"]);
    let mut pairings = Vec::new();
    for (i, m) in letters.iter().enumerate() {
        let p = cs::eigen_pairing(m).map_err(|e| numerical(format!("letter {i}: {e}")))?;
        for pair in &p.pairs {
            table.push(vec![
                i.to_string(),
                num(p.mu),
                num(pair.first.re),
                num(pair.first.im),
                num(pair.second.re),
                num(pair.second.im),
                num(pair.defect),
            ]);
        }
        pairings.push(p);
    }

    let transitions = r.transitions.clone().unwrap_or_default();
    let mut system = PeriodicLinearSystem::fixed_points(letters.clone()).map_err(numerical)?;
    for t in &transitions {
        let word = t.word.iter().map(|&w| letters[w].clone()).collect();
        system = system.with_transition(t.from, t.to, word).map_err(numerical)?;
    }
    let mut bounds = HomothetyBounds::new(r.max_power.unwrap_or(8));
    bounds.max_segments = r.max_segments.unwrap_or(if transitions.is_empty() { 1 } else { 2 });
    let eps = r.eps.unwrap_or(1e-9);
    let hit = cs::homothety_search(&system, eps, bounds).map_err(numerical)?;
    let diagnostics = if hit.is_none() { vec!["no homothetic word within the bounds".to_string()] } else { Vec::new() };
    let summary = json!({
        "tol": tol,
        "eps": eps,
        "bounds": bounds,
        "pairings": pairings,
        "homothety": hit,
    });
    Ok(Output { summary, table: Some(table), diagnostics })
}
