//! Scenario configuration: a sectioned TOML document (or the equivalent JSON
//! object) with blocks `[metric]`, `[field]`, `[run]` and `[output]`.

use serde::{Deserialize, Serialize};
use thermolab::analysis::{Section, SectionAxis};
use thermolab::{ClosedFormField, ConformalMetric, Scenario, TrigPoly, TrigTerm, UnitTangentState};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Flat,
    Conformal,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBlock {
    #[serde(default)]
    pub kind: MetricKind,
    /// Terms of the conformal exponent `f`.
    #[serde(default)]
    pub f: Vec<TrigTerm>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldBlock {
    /// Harmonic part `(c1, c2)`.
    #[serde(default)]
    pub c: [f64; 2],
    /// Terms of the potential `U`.
    #[serde(default)]
    pub u: Vec<TrigTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    #[default]
    Orbit,
    Lyapunov,
    Periodic,
    Cone,
    Domination,
    Surgery,
    Franks,
    Cslab,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Orbit => "orbit",
            RunKind::Lyapunov => "lyapunov",
            RunKind::Periodic => "periodic",
            RunKind::Cone => "cone",
            RunKind::Domination => "domination",
            RunKind::Surgery => "surgery",
            RunKind::Franks => "franks",
            RunKind::Cslab => "cslab",
        }
    }

    /// Run keys besides `kind` accepted for this kind.
    fn keys(self) -> &'static [&'static str] {
        match self {
            RunKind::Orbit => &["duration", "step", "start", "renormalize", "record_every"],
            RunKind::Lyapunov => &["duration", "step", "start", "window"],
            RunKind::Periodic => &["step", "start", "section", "tol", "max_iterations", "max_return_time"],
            RunKind::Cone => &["duration", "step", "start", "k", "grid"],
            RunKind::Domination => &["step", "start", "l_max", "window"],
            RunKind::Surgery => &["step", "start", "section", "tol", "max_iterations", "max_return_time", "alpha"],
            RunKind::Franks => &["step", "start", "samples", "radius", "ramp", "seed"],
            RunKind::Cslab => &["letters", "transitions", "tol", "eps", "max_power", "max_segments"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartBlock {
    pub x: f64,
    pub y: f64,
    /// Chart angle of the velocity.
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionBlock {
    pub axis: SectionAxis,
    #[serde(default)]
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionBlock {
    pub from: usize,
    pub to: usize,
    /// Letter indices in application order.
    pub word: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub kind: RunKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<StartBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub renormalize: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub section: Option<SectionBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_return_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Row-major `2n × 2n` matrices.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub letters: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transitions: Option<Vec<TransitionBlock>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_power: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_segments: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Json,
    #[default]
    Both,
}

impl Emit {
    pub fn csv(self) -> bool {
        matches!(self, Emit::Csv | Emit::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Emit::Json | Emit::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Output directory; `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Artifact formats; `--emit` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emit: Option<Emit>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub metric: MetricBlock,
    #[serde(default)]
    pub field: FieldBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

/// Parse and validate a configuration. Input whose first non-blank character
/// is `{` is read as JSON, anything else as TOML.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let config: ScenarioConfig = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?
    } else {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            ConfigError::Parse { line, column, message: e.message().trim().to_string() }
        })?
    };
    config.validate()?;
    Ok(config)
}

fn check_finite(field: &str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{x} is not finite")))
    }
}

fn check_positive(field: &str, x: Option<f64>) -> Result<(), ConfigError> {
    match x {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(invalid(field, format!("{v} must be positive"))),
        _ => Ok(()),
    }
}

fn check_terms(field: &str, terms: &[TrigTerm]) -> Result<(), ConfigError> {
    for t in terms {
        check_finite(field, t.cos)?;
        check_finite(field, t.sin)?;
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.metric.kind == MetricKind::Flat && !self.metric.f.is_empty() {
            return Err(invalid("metric.f", "a flat metric takes no coefficients"));
        }
        check_terms("metric.f", &self.metric.f)?;
        check_terms("field.u", &self.field.u)?;
        check_finite("field.c", self.field.c[0])?;
        check_finite("field.c", self.field.c[1])?;

        let run = &self.run;
        let present = self.run_keys();
        let allowed = run.kind.keys();
        if let Some(key) = present.iter().find(|k| !allowed.contains(k)) {
            return Err(invalid(&format!("run.{key}"), format!("not used by kind `{}`", run.kind.name())));
        }
        check_positive("run.duration", run.duration)?;
        check_positive("run.step", run.step)?;
        check_positive("run.window", run.window)?;
        check_positive("run.tol", run.tol)?;
        check_positive("run.max_return_time", run.max_return_time)?;
        check_positive("run.radius", run.radius)?;
        check_positive("run.ramp", run.ramp)?;
        check_positive("run.eps", run.eps)?;
        if let Some(s) = &run.start {
            for (name, x) in [("run.start.x", s.x), ("run.start.y", s.y), ("run.start.angle", s.angle)] {
                check_finite(name, x)?;
            }
        }
        if let Some(s) = &run.section {
            check_finite("run.section.level", s.level)?;
        }
        if let Some(a) = run.alpha {
            check_finite("run.alpha", a)?;
        }
        if let Some(ks) = &run.k {
            if ks.is_empty() {
                return Err(invalid("run.k", "empty list"));
            }
            for &k in ks {
                if !(k > 0.0 && k <= 0.5) {
                    return Err(invalid("run.k", format!("{k} outside (0, 1/2]")));
                }
            }
        }
        for (name, v) in [
            ("run.record_every", run.record_every),
            ("run.grid", run.grid),
            ("run.l_max", run.l_max),
            ("run.samples", run.samples),
            ("run.max_iterations", run.max_iterations),
            ("run.max_power", run.max_power),
            ("run.max_segments", run.max_segments),
        ] {
            if v == Some(0) {
                return Err(invalid(name, "must be at least 1"));
            }
        }
        if run.kind == RunKind::Cslab {
            self.validate_letters()?;
        }
        Ok(())
    }

    fn validate_letters(&self) -> Result<(), ConfigError> {
        let letters = self.run.letters.as_deref().unwrap_or_default();
        if letters.is_empty() {
            return Err(invalid("run.letters", "cslab needs at least one letter"));
        }
        let dim = letters[0].len();
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(invalid("run.letters", "letters must be 2n x 2n"));
        }
        for (i, m) in letters.iter().enumerate() {
            if m.len() != dim || m.iter().any(|row| row.len() != dim) {
                return Err(invalid(&format!("run.letters[{i}]"), format!("expected {dim} x {dim}")));
            }
            if m.iter().flatten().any(|x| !x.is_finite()) {
                return Err(invalid(&format!("run.letters[{i}]"), "non-finite entry"));
            }
        }
        for (i, t) in self.run.transitions.iter().flatten().enumerate() {
            let n = letters.len();
            if t.from >= n || t.to >= n || t.word.iter().any(|&w| w >= n) {
                return Err(invalid(&format!("run.transitions[{i}]"), "letter index out of range"));
            }
        }
        Ok(())
    }

    /// Names of the optional run keys that are set.
    fn run_keys(&self) -> Vec<&'static str> {
        let r = &self.run;
        let flags = [
            ("duration", r.duration.is_some()),
            ("step", r.step.is_some()),
            ("start", r.start.is_some()),
            ("renormalize", r.renormalize.is_some()),
            ("record_every", r.record_every.is_some()),
            ("window", r.window.is_some()),
            ("section", r.section.is_some()),
            ("tol", r.tol.is_some()),
            ("max_iterations", r.max_iterations.is_some()),
            ("max_return_time", r.max_return_time.is_some()),
            ("k", r.k.is_some()),
            ("grid", r.grid.is_some()),
            ("l_max", r.l_max.is_some()),
            ("alpha", r.alpha.is_some()),
            ("samples", r.samples.is_some()),
            ("radius", r.radius.is_some()),
            ("ramp", r.ramp.is_some()),
            ("seed", r.seed.is_some()),
            ("letters", r.letters.is_some()),
            ("transitions", r.transitions.is_some()),
            ("eps", r.eps.is_some()),
            ("max_power", r.max_power.is_some()),
            ("max_segments", r.max_segments.is_some()),
        ];
        flags.iter().filter(|f| f.1).map(|f| f.0).collect()
    }

    pub fn scenario(&self) -> Scenario {
        let metric = match self.metric.kind {
            MetricKind::Flat => ConformalMetric::flat(),
            MetricKind::Conformal => ConformalMetric::conformal(TrigPoly::new(self.metric.f.clone())),
        };
        let field = ClosedFormField::harmonic(self.field.c[0], self.field.c[1])
            .with_potential(TrigPoly::new(self.field.u.clone()));
        Scenario::new(metric, field)
    }

    pub fn start_state(&self, scenario: &Scenario) -> UnitTangentState {
        let s = self.run.start.unwrap_or(StartBlock { x: 0.0, y: 0.0, angle: 0.0 });
        UnitTangentState::from_angle(&scenario.metric, [s.x, s.y], s.angle)
    }

    pub fn section(&self) -> Section {
        let s = self.run.section.unwrap_or(SectionBlock { axis: SectionAxis::X, level: 0.0 });
        Section::new(s.axis, s.level)
    }

    /// SHA-256 of the canonical JSON form of the metric, field and run
    /// blocks, so TOML and JSON spellings of one experiment hash equally and
    /// the output block does not enter.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical =
            serde_json::to_vec(&(&self.metric, &self.field, &self.run)).expect("configuration serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
