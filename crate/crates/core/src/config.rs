//! Run configuration: a TOML document, checked key by key so that every
//! problem is reported with its path.

use std::fmt;

use toml::{Table, Value};

use crate::dynamics::Summation;
use crate::error::{Error, Result};
use crate::integrator::{uniform_times, IntegratorConfig, Method};
use crate::model::{DiffusionLaw, InitialDatum, InteractionKernel, ModelSpec, VelocityLaw};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Single,
    Converge,
    Diagnostics,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Converge => "converge",
            Mode::Diagnostics => "diagnostics",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiffusionChoice {
    None,
    PorousMedium { epsilon: f64 },
    TwoPoint { epsilon: f64, exponent: f64 },
    StronglyDegenerate { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum VelocityChoice {
    Saturating { rho_max: f64 },
    Constant { value: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelChoice {
    None,
    Gaussian { strength: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatumChoice {
    Constant {
        value: f64,
        length: f64,
    },
    TwoStep {
        left: f64,
        right: f64,
        split: f64,
        length: f64,
    },
    Cosine,
}

impl DatumChoice {
    pub fn length(&self) -> f64 {
        match self {
            DatumChoice::Constant { length, .. } | DatumChoice::TwoStep { length, .. } => *length,
            DatumChoice::Cosine => crate::model::COSINE_DATUM_LENGTH,
        }
    }
}

/// Pass/fail checks that decide the exit status of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    MinMax,
    Mass,
    TvEnvelope,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::MinMax => "minmax",
            Check::Mass => "mass",
            Check::TvEnvelope => "tv_envelope",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "minmax" => Some(Check::MinMax),
            "mass" => Some(Check::Mass),
            "tv_envelope" => Some(Check::TvEnvelope),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorSettings {
    pub method: Method,
    pub abs_tolerance: f64,
    pub safety_factor: f64,
    pub max_step: Option<f64>,
    pub min_step: Option<f64>,
    pub initial_step: Option<f64>,
    pub density_cap: Option<f64>,
    pub workers: usize,
    pub summation: Summation,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        let d = IntegratorConfig::new(1.0);
        Self {
            method: d.method,
            abs_tolerance: d.abs_tolerance,
            safety_factor: d.safety_factor,
            max_step: None,
            min_step: None,
            initial_step: None,
            density_cap: None,
            workers: 1,
            summation: Summation::Ordered,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsSettings {
    pub test_modes: usize,
    pub quadrature_nodes: usize,
    pub tv_fit_fraction: f64,
    pub checks: Vec<Check>,
    /// Upper bound on the final maximum density, when set.
    pub max_density: Option<f64>,
    /// Lower bound on the final minimum density, when set.
    pub min_density: Option<f64>,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        Self {
            test_modes: 3,
            quadrature_nodes: 5,
            tv_fit_fraction: 0.5,
            checks: vec![Check::MinMax, Check::Mass],
            max_density: None,
            min_density: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub mode: Mode,
    pub diffusion: DiffusionChoice,
    pub velocity: VelocityChoice,
    pub kernel: KernelChoice,
    pub datum: DatumChoice,
    pub mass: Option<f64>,
    pub particles: usize,
    pub t_final: f64,
    pub snapshots: usize,
    pub integrator: IntegratorSettings,
    pub study_particles: Vec<usize>,
    pub diagnostics: DiagnosticsSettings,
}

impl RunConfig {
    pub fn build_datum(&self) -> Result<InitialDatum> {
        Self::datum_only(&self.datum)
    }

    pub fn build_model(&self) -> Result<(ModelSpec, InitialDatum)> {
        let datum = self.build_datum()?;
        let ell = datum.length();
        let diffusion = match &self.diffusion {
            DiffusionChoice::None => DiffusionLaw::zero(),
            DiffusionChoice::PorousMedium { epsilon } => DiffusionLaw::porous_medium(*epsilon)?,
            DiffusionChoice::TwoPoint { epsilon, exponent } => {
                DiffusionLaw::two_point(*epsilon, *exponent)?
            }
            DiffusionChoice::StronglyDegenerate { epsilon } => {
                DiffusionLaw::strongly_degenerate(*epsilon)?
            }
        };
        let velocity = match &self.velocity {
            VelocityChoice::Saturating { rho_max } => VelocityLaw::saturating(*rho_max)?,
            VelocityChoice::Constant { value } => VelocityLaw::constant(*value)?,
        };
        let kernel = match &self.kernel {
            KernelChoice::None => InteractionKernel::none(),
            KernelChoice::Gaussian { strength } => InteractionKernel::gaussian(*strength, ell)?,
        };
        let mass = self.mass.unwrap_or_else(|| datum.total_mass());
        let spec = ModelSpec::new(diffusion, velocity, kernel, ell, mass)?;
        Ok((spec, datum))
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        let s = &self.integrator;
        IntegratorConfig {
            t_final: self.t_final,
            abs_tolerance: s.abs_tolerance,
            safety_factor: s.safety_factor,
            max_step: s.max_step,
            min_step: s.min_step,
            initial_step: s.initial_step,
            snapshot_times: uniform_times(self.t_final, self.snapshots),
            method: s.method,
            density_cap: s.density_cap,
            workers: s.workers,
            summation: s.summation,
        }
    }

    pub fn diagnostics_options(&self) -> crate::diagnostics::DiagnosticsOptions {
        crate::diagnostics::DiagnosticsOptions {
            test_modes: self.diagnostics.test_modes,
            quadrature_nodes: self.diagnostics.quadrature_nodes,
            tv_fit_fraction: self.diagnostics.tv_fit_fraction,
        }
    }

    /// Fully resolved document; parsing it yields this configuration again.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("name".into(), Value::String(self.name.clone()));
        root.insert("mode".into(), Value::String(self.mode.name().into()));

        let mut model = Table::new();
        let mut diffusion = Table::new();
        match &self.diffusion {
            DiffusionChoice::None => {
                diffusion.insert("preset".into(), "none".into());
            }
            DiffusionChoice::PorousMedium { epsilon } => {
                diffusion.insert("preset".into(), "porous_medium".into());
                diffusion.insert("epsilon".into(), (*epsilon).into());
            }
            DiffusionChoice::TwoPoint { epsilon, exponent } => {
                diffusion.insert("preset".into(), "two_point".into());
                diffusion.insert("epsilon".into(), (*epsilon).into());
                diffusion.insert("exponent".into(), (*exponent).into());
            }
            DiffusionChoice::StronglyDegenerate { epsilon } => {
                diffusion.insert("preset".into(), "strongly_degenerate".into());
                diffusion.insert("epsilon".into(), (*epsilon).into());
            }
        }
        let mut velocity = Table::new();
        match &self.velocity {
            VelocityChoice::Saturating { rho_max } => {
                velocity.insert("preset".into(), "saturating".into());
                velocity.insert("rho_max".into(), (*rho_max).into());
            }
            VelocityChoice::Constant { value } => {
                velocity.insert("preset".into(), "constant".into());
                velocity.insert("value".into(), (*value).into());
            }
        }
        let mut kernel = Table::new();
        match &self.kernel {
            KernelChoice::None => {
                kernel.insert("preset".into(), "none".into());
            }
            KernelChoice::Gaussian { strength } => {
                kernel.insert("preset".into(), "gaussian".into());
                kernel.insert("strength".into(), (*strength).into());
            }
        }
        if let Some(m) = self.mass {
            model.insert("mass".into(), m.into());
        }
        model.insert("diffusion".into(), Value::Table(diffusion));
        model.insert("velocity".into(), Value::Table(velocity));
        model.insert("kernel".into(), Value::Table(kernel));
        root.insert("model".into(), Value::Table(model));

        let mut datum = Table::new();
        match &self.datum {
            DatumChoice::Constant { value, length } => {
                datum.insert("preset".into(), "constant".into());
                datum.insert("value".into(), (*value).into());
                datum.insert("length".into(), (*length).into());
            }
            DatumChoice::TwoStep {
                left,
                right,
                split,
                length,
            } => {
                datum.insert("preset".into(), "two_step".into());
                datum.insert("left".into(), (*left).into());
                datum.insert("right".into(), (*right).into());
                datum.insert("split".into(), (*split).into());
                datum.insert("length".into(), (*length).into());
            }
            DatumChoice::Cosine => {
                datum.insert("preset".into(), "cosine".into());
            }
        }
        root.insert("datum".into(), Value::Table(datum));

        let mut run = Table::new();
        run.insert("particles".into(), (self.particles as i64).into());
        run.insert("t_final".into(), self.t_final.into());
        run.insert("snapshots".into(), (self.snapshots as i64).into());
        root.insert("run".into(), Value::Table(run));

        let s = &self.integrator;
        let mut integ = Table::new();
        integ.insert("method".into(), s.method.name().into());
        integ.insert("abs_tolerance".into(), s.abs_tolerance.into());
        integ.insert("safety_factor".into(), s.safety_factor.into());
        for (key, v) in [
            ("max_step", s.max_step),
            ("min_step", s.min_step),
            ("initial_step", s.initial_step),
            ("density_cap", s.density_cap),
        ] {
            if let Some(v) = v {
                integ.insert(key.into(), v.into());
            }
        }
        integ.insert("workers".into(), (s.workers as i64).into());
        integ.insert(
            "summation".into(),
            match s.summation {
                Summation::Ordered => "ordered",
                Summation::Compensated => "compensated",
            }
            .into(),
        );
        root.insert("integrator".into(), Value::Table(integ));

        if !self.study_particles.is_empty() {
            let mut study = Table::new();
            study.insert(
                "particles".into(),
                Value::Array(
                    self.study_particles
                        .iter()
                        .map(|n| Value::Integer(*n as i64))
                        .collect(),
                ),
            );
            root.insert("study".into(), Value::Table(study));
        }

        let d = &self.diagnostics;
        let mut diag = Table::new();
        diag.insert("test_modes".into(), (d.test_modes as i64).into());
        diag.insert(
            "quadrature_nodes".into(),
            (d.quadrature_nodes as i64).into(),
        );
        diag.insert("tv_fit_fraction".into(), d.tv_fit_fraction.into());
        diag.insert(
            "checks".into(),
            Value::Array(
                d.checks
                    .iter()
                    .map(|c| Value::String(c.name().into()))
                    .collect(),
            ),
        );
        if let Some(v) = d.max_density {
            diag.insert("max_density".into(), v.into());
        }
        if let Some(v) = d.min_density {
            diag.insert("min_density".into(), v.into());
        }
        root.insert("diagnostics".into(), Value::Table(diag));

        toml::to_string(&root).expect("tables of plain values always serialize")
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| {
        Error::Config(vec![ConfigIssue {
            path: "<document>".into(),
            message: e.message().to_string(),
        }])
    })?;
    let mut r = Reader::default();
    let cfg = r.run_config(&root);
    if r.issues.is_empty() {
        Ok(cfg.expect("a configuration without issues is complete"))
    } else {
        Err(Error::Config(r.issues))
    }
}

#[derive(Default)]
struct Reader {
    issues: Vec<ConfigIssue>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl Reader {
    fn issue(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn unknown_keys(&mut self, table: &Table, path: &str, allowed: &[&str]) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.issue(join(path, key), "unknown key");
            }
        }
    }

    fn table<'a>(&mut self, parent: &'a Table, path: &str, key: &str) -> Option<&'a Table> {
        match parent.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.issue(join(path, key), "expected a table");
                None
            }
        }
    }

    fn string(
        &mut self,
        t: Option<&Table>,
        path: &str,
        key: &str,
        required: bool,
    ) -> Option<String> {
        match t.and_then(|t| t.get(key)) {
            None => {
                if required {
                    self.issue(join(path, key), "missing required key");
                }
                None
            }
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.issue(join(path, key), "expected a string");
                None
            }
        }
    }

    fn number(&mut self, t: Option<&Table>, path: &str, key: &str, required: bool) -> Option<f64> {
        match t.and_then(|t| t.get(key)) {
            None => {
                if required {
                    self.issue(join(path, key), "missing required key");
                }
                None
            }
            Some(Value::Float(x)) => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(_) => {
                self.issue(join(path, key), "expected a number");
                None
            }
        }
    }

    fn count(&mut self, t: Option<&Table>, path: &str, key: &str, required: bool) -> Option<usize> {
        match t.and_then(|t| t.get(key)) {
            None => {
                if required {
                    self.issue(join(path, key), "missing required key");
                }
                None
            }
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as usize),
            Some(_) => {
                self.issue(join(path, key), "expected a nonnegative integer");
                None
            }
        }
    }

    /// Number that must satisfy `ok`; a violation is reported at its path.
    fn checked(
        &mut self,
        t: Option<&Table>,
        path: &str,
        key: &str,
        required: bool,
        ok: impl Fn(f64) -> bool,
        what: &str,
    ) -> Option<f64> {
        let v = self.number(t, path, key, required)?;
        if ok(v) && v.is_finite() {
            Some(v)
        } else {
            self.issue(join(path, key), format!("{v} is out of range: {what}"));
            None
        }
    }

    fn positive(
        &mut self,
        t: Option<&Table>,
        path: &str,
        key: &str,
        required: bool,
    ) -> Option<f64> {
        self.checked(t, path, key, required, |v| v > 0.0, "must be positive")
    }

    fn diffusion(&mut self, t: Option<&Table>) -> Option<DiffusionChoice> {
        let path = "model.diffusion";
        let preset = self.string(t, path, "preset", true)?;
        let (choice, allowed): (Option<DiffusionChoice>, &[&str]) = match preset.as_str() {
            "none" => (Some(DiffusionChoice::None), &["preset"]),
            "porous_medium" => (
                self.positive(t, path, "epsilon", true)
                    .map(|epsilon| DiffusionChoice::PorousMedium { epsilon }),
                &["preset", "epsilon"],
            ),
            "two_point" => {
                let epsilon = self.positive(t, path, "epsilon", true);
                let exponent = if t.is_some_and(|t| t.contains_key("exponent")) {
                    self.checked(
                        t,
                        path,
                        "exponent",
                        true,
                        |m| m >= 2.0,
                        "must be at least 2",
                    )
                } else {
                    Some(2.0)
                };
                (
                    epsilon
                        .zip(exponent)
                        .map(|(epsilon, exponent)| DiffusionChoice::TwoPoint { epsilon, exponent }),
                    &["preset", "epsilon", "exponent"],
                )
            }
            "strongly_degenerate" => (
                self.positive(t, path, "epsilon", true)
                    .map(|epsilon| DiffusionChoice::StronglyDegenerate { epsilon }),
                &["preset", "epsilon"],
            ),
            other => {
                self.issue(
                    join(path, "preset"),
                    format!(
                        "unknown preset `{other}` (expected none, porous_medium, two_point or strongly_degenerate)"
                    ),
                );
                return None;
            }
        };
        if let Some(t) = t {
            self.unknown_keys(t, path, allowed);
        }
        choice
    }

    fn velocity(&mut self, t: Option<&Table>) -> Option<VelocityChoice> {
        let path = "model.velocity";
        let preset = self.string(t, path, "preset", true)?;
        let has = |k: &str| t.is_some_and(|t| t.contains_key(k));
        let (choice, allowed): (Option<VelocityChoice>, &[&str]) = match preset.as_str() {
            "saturating" => (
                if has("rho_max") {
                    self.positive(t, path, "rho_max", true)
                } else {
                    Some(1.0)
                }
                .map(|rho_max| VelocityChoice::Saturating { rho_max }),
                &["preset", "rho_max"],
            ),
            "constant" => (
                if has("value") {
                    self.checked(t, path, "value", true, |v| v >= 0.0, "must be nonnegative")
                } else {
                    Some(1.0)
                }
                .map(|value| VelocityChoice::Constant { value }),
                &["preset", "value"],
            ),
            other => {
                self.issue(
                    join(path, "preset"),
                    format!("unknown preset `{other}` (expected saturating or constant)"),
                );
                return None;
            }
        };
        if let Some(t) = t {
            self.unknown_keys(t, path, allowed);
        }
        choice
    }

    fn kernel(&mut self, t: Option<&Table>) -> Option<KernelChoice> {
        let path = "model.kernel";
        let preset = self.string(t, path, "preset", true)?;
        let (choice, allowed): (Option<KernelChoice>, &[&str]) = match preset.as_str() {
            "none" => (Some(KernelChoice::None), &["preset"]),
            "gaussian" => (
                if t.is_some_and(|t| t.contains_key("strength")) {
                    self.positive(t, path, "strength", true)
                } else {
                    Some(1.0)
                }
                .map(|strength| KernelChoice::Gaussian { strength }),
                &["preset", "strength"],
            ),
            other => {
                self.issue(
                    join(path, "preset"),
                    format!("unknown preset `{other}` (expected none or gaussian)"),
                );
                return None;
            }
        };
        if let Some(t) = t {
            self.unknown_keys(t, path, allowed);
        }
        choice
    }

    fn datum(&mut self, t: Option<&Table>) -> Option<DatumChoice> {
        let path = "datum";
        let preset = self.string(t, path, "preset", true)?;
        let has_length = t.is_some_and(|t| t.contains_key("length"));
        let mut length = || {
            if has_length {
                self.positive(t, path, "length", true)
            } else {
                Some(1.0)
            }
        };
        let (choice, allowed): (Option<DatumChoice>, &[&str]) = match preset.as_str() {
            "constant" => {
                let length = length();
                let value = self.positive(t, path, "value", true);
                (
                    value
                        .zip(length)
                        .map(|(value, length)| DatumChoice::Constant { value, length }),
                    &["preset", "value", "length"],
                )
            }
            "two_step" => {
                let length = length();
                let left = self.positive(t, path, "left", true);
                let right = self.positive(t, path, "right", true);
                let split = self.positive(t, path, "split", true);
                if let (Some(s), Some(l)) = (split, length) {
                    if s >= l {
                        self.issue(
                            join(path, "split"),
                            format!("{s} must lie strictly inside (0, {l})"),
                        );
                    }
                }
                let choice = match (left, right, split, length) {
                    (Some(left), Some(right), Some(split), Some(length)) if split < length => {
                        Some(DatumChoice::TwoStep {
                            left,
                            right,
                            split,
                            length,
                        })
                    }
                    _ => None,
                };
                (choice, &["preset", "left", "right", "split", "length"])
            }
            "cosine" => (Some(DatumChoice::Cosine), &["preset"]),
            other => {
                self.issue(
                    join(path, "preset"),
                    format!("unknown preset `{other}` (expected constant, two_step or cosine)"),
                );
                return None;
            }
        };
        if let Some(t) = t {
            self.unknown_keys(t, path, allowed);
        }
        choice
    }

    fn integrator(&mut self, t: Option<&Table>) -> IntegratorSettings {
        let path = "integrator";
        let mut s = IntegratorSettings::default();
        let Some(table) = t else {
            return s;
        };
        self.unknown_keys(
            table,
            path,
            &[
                "method",
                "abs_tolerance",
                "safety_factor",
                "max_step",
                "min_step",
                "initial_step",
                "density_cap",
                "workers",
                "summation",
            ],
        );
        if let Some(m) = self.string(t, path, "method", false) {
            match Method::from_name(&m) {
                Some(m) => s.method = m,
                None => self.issue(
                    join(path, "method"),
                    format!("unknown method `{m}` (expected auto, dormand_prince or chebyshev)"),
                ),
            }
        }
        if let Some(v) = self.positive(t, path, "abs_tolerance", false) {
            s.abs_tolerance = v;
        }
        if let Some(v) = self.checked(
            t,
            path,
            "safety_factor",
            false,
            |v| v > 0.0 && v <= 1.0,
            "must lie in (0, 1]",
        ) {
            s.safety_factor = v;
        }
        s.max_step = self.positive(t, path, "max_step", false);
        s.min_step = self.positive(t, path, "min_step", false);
        s.initial_step = self.positive(t, path, "initial_step", false);
        s.density_cap = self.positive(t, path, "density_cap", false);
        if let Some(w) = self.count(t, path, "workers", false) {
            s.workers = w.max(1);
        }
        if let Some(m) = self.string(t, path, "summation", false) {
            match m.as_str() {
                "ordered" => s.summation = Summation::Ordered,
                "compensated" => s.summation = Summation::Compensated,
                other => self.issue(
                    join(path, "summation"),
                    format!("unknown summation `{other}` (expected ordered or compensated)"),
                ),
            }
        }
        s
    }

    fn diagnostics(&mut self, t: Option<&Table>) -> DiagnosticsSettings {
        let path = "diagnostics";
        let mut d = DiagnosticsSettings::default();
        let Some(table) = t else {
            return d;
        };
        self.unknown_keys(
            table,
            path,
            &[
                "test_modes",
                "quadrature_nodes",
                "tv_fit_fraction",
                "checks",
                "max_density",
                "min_density",
            ],
        );
        if let Some(k) = self.count(t, path, "test_modes", false) {
            d.test_modes = k;
        }
        if let Some(k) = self.count(t, path, "quadrature_nodes", false) {
            if k == 0 {
                self.issue(join(path, "quadrature_nodes"), "must be at least 1");
            } else {
                d.quadrature_nodes = k;
            }
        }
        if let Some(f) = self.checked(
            t,
            path,
            "tv_fit_fraction",
            false,
            |v| v > 0.0 && v <= 1.0,
            "must lie in (0, 1]",
        ) {
            d.tv_fit_fraction = f;
        }
        match table.get("checks") {
            None => {}
            Some(Value::Array(items)) => {
                d.checks.clear();
                for (i, item) in items.iter().enumerate() {
                    match item.as_str().and_then(Check::from_name) {
                        Some(c) => d.checks.push(c),
                        None => self.issue(
                            format!("{path}.checks[{i}]"),
                            "expected one of minmax, mass, tv_envelope",
                        ),
                    }
                }
            }
            Some(_) => self.issue(join(path, "checks"), "expected an array of check names"),
        }
        d.max_density = self.positive(t, path, "max_density", false);
        d.min_density = self.checked(
            t,
            path,
            "min_density",
            false,
            |v| v >= 0.0,
            "must be nonnegative",
        );
        d
    }

    fn run_config(&mut self, root: &Table) -> Option<RunConfig> {
        self.unknown_keys(
            root,
            "",
            &[
                "name",
                "mode",
                "model",
                "datum",
                "run",
                "integrator",
                "study",
                "diagnostics",
                "status",
            ],
        );
        let name = self
            .string(Some(root), "", "name", false)
            .unwrap_or_else(|| "run".to_string());
        let mode = match self.string(Some(root), "", "mode", false).as_deref() {
            None | Some("single") => Some(Mode::Single),
            Some("converge") => Some(Mode::Converge),
            Some("diagnostics") => Some(Mode::Diagnostics),
            Some(other) => {
                self.issue(
                    "mode",
                    format!("unknown mode `{other}` (expected single, converge or diagnostics)"),
                );
                None
            }
        };

        let model = self.table(root, "", "model");
        if let Some(m) = model {
            self.unknown_keys(m, "model", &["diffusion", "velocity", "kernel", "mass"]);
        }
        let sub = |r: &mut Self, key: &str| model.and_then(|m| r.table(m, "model", key));
        let diffusion_t = sub(self, "diffusion");
        let velocity_t = sub(self, "velocity");
        let kernel_t = sub(self, "kernel");
        let diffusion = self.diffusion(diffusion_t);
        let velocity = self.velocity(velocity_t);
        let kernel = self.kernel(kernel_t);
        let mass = self.positive(model, "model", "mass", false);

        let datum_t = self.table(root, "", "datum");
        let datum = self.datum(datum_t);

        let run_t = self.table(root, "", "run");
        if let Some(t) = run_t {
            self.unknown_keys(t, "run", &["particles", "t_final", "snapshots"]);
        }
        let particles = self.count(run_t, "run", "particles", true);
        if let Some(n) = particles {
            if n < 2 {
                self.issue(
                    "run.particles",
                    format!("{n} is out of range: need at least 2"),
                );
            }
        }
        let t_final = self.positive(run_t, "run", "t_final", true);
        let snapshots = self.count(run_t, "run", "snapshots", false).unwrap_or(101);
        if snapshots < 2 {
            self.issue("run.snapshots", "need at least 2 snapshots");
        }

        let integrator_t = self.table(root, "", "integrator");
        let integrator = self.integrator(integrator_t);

        let study_t = self.table(root, "", "study");
        let mut study_particles = Vec::new();
        if let Some(t) = study_t {
            self.unknown_keys(t, "study", &["particles"]);
            match t.get("particles") {
                None => {}
                Some(Value::Array(items)) => {
                    for (i, item) in items.iter().enumerate() {
                        match item.as_integer() {
                            Some(n) if n >= 2 => study_particles.push(n as usize),
                            _ => self.issue(
                                format!("study.particles[{i}]"),
                                "expected an integer of at least 2",
                            ),
                        }
                    }
                    if study_particles.windows(2).any(|w| w[1] <= w[0]) {
                        self.issue("study.particles", "must be strictly increasing");
                    }
                }
                Some(_) => self.issue("study.particles", "expected an array of integers"),
            }
        }
        if mode == Some(Mode::Converge) && study_particles.len() < 3 {
            self.issue(
                "study.particles",
                "converge mode needs at least three particle counts",
            );
        }

        let diagnostics_t = self.table(root, "", "diagnostics");
        let diagnostics = self.diagnostics(diagnostics_t);

        if let (Some(d), Some(m)) = (&datum, mass) {
            if let Ok(built) = RunConfig::datum_only(d) {
                let total = built.total_mass();
                if (total - m).abs() > 1e-10 * m {
                    self.issue(
                        "model.mass",
                        format!("{m} differs from the datum mass {total}"),
                    );
                }
            }
        }
        if let (Some(max), Some(t)) = (integrator.max_step, t_final) {
            if max > t {
                self.issue(
                    "integrator.max_step",
                    format!("{max} exceeds run.t_final = {t}"),
                );
            }
        }

        Some(RunConfig {
            name,
            mode: mode?,
            diffusion: diffusion?,
            velocity: velocity?,
            kernel: kernel?,
            datum: datum?,
            mass,
            particles: particles?,
            t_final: t_final?,
            snapshots,
            integrator,
            study_particles,
            diagnostics,
        })
    }
}

impl RunConfig {
    fn datum_only(choice: &DatumChoice) -> Result<InitialDatum> {
        match choice {
            DatumChoice::Constant { value, length } => InitialDatum::constant(*value, *length),
            DatumChoice::TwoStep {
                left,
                right,
                split,
                length,
            } => InitialDatum::two_step(*left, *right, *split, *length),
            DatumChoice::Cosine => Ok(InitialDatum::cosine()),
        }
    }
}
