//! Run drivers behind the command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::atomization::atomize;
use crate::config::{parse_config, Check, Mode, RunConfig};
use crate::density::min_max;
use crate::diagnostics::{diagnose, self_convergence, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::integrator::{integrate_partial, StepLog, Trajectory};
use crate::model::{validate, InitialDatum, ModelSpec, ValidationReport};
use crate::output::{
    convergence_csv, parse_trajectory, read_file, report_csv, snapshots_csv, step_log_summary,
    trajectory_csv, write_file,
};

/// Mass identity tolerance, relative to `σ`.
pub const MASS_CHECK_TOLERANCE: f64 = 1e-12;

/// Grid used by the admissibility report written with every run.
pub const VALIDATION_GRID: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub completed: bool,
    pub checks_passed: bool,
    pub summary: String,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.completed && self.checks_passed
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&read_file(path)?)
}

/// Runs whatever the configuration's mode asks for.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    match cfg.mode {
        Mode::Single => run_single(cfg, out),
        Mode::Converge => run_converge(cfg, out),
        Mode::Diagnostics => run_diagnostics(cfg, out),
    }
}

pub fn validate_config(cfg: &RunConfig) -> Result<ValidationReport> {
    let (spec, datum) = cfg.build_model()?;
    Ok(validate(&spec, &datum, VALIDATION_GRID))
}

fn manifest(cfg: &RunConfig, completed: bool, checks_passed: bool, reason: Option<&str>) -> String {
    let mut text = cfg.to_toml();
    let _ = writeln!(text, "\n[status]");
    let _ = writeln!(
        text,
        "state = \"{}\"",
        if completed { "completed" } else { "FAILED" }
    );
    let _ = writeln!(text, "checks_passed = {checks_passed}");
    if let Some(r) = reason {
        let escaped = r
            .replace('\\', "\\\\")
            .replace('"', "\\\"")
            .replace('\n', " ");
        let _ = writeln!(text, "reason = \"{escaped}\"");
    }
    text
}

struct CheckResult {
    name: String,
    pass: bool,
    detail: String,
}

fn evaluate_checks(cfg: &RunConfig, report: &DiagnosticsReport) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for check in &cfg.diagnostics.checks {
        let (pass, detail) = match check {
            Check::MinMax => {
                let fails = report.minmax.failures().count();
                (
                    fails == 0,
                    format!("{fails} snapshot(s) outside the gap bracket"),
                )
            }
            Check::Mass => {
                let d = report.max_mass_defect();
                (
                    d <= MASS_CHECK_TOLERANCE,
                    format!("max relative mass defect {d:e}"),
                )
            }
            Check::TvEnvelope => (
                report.tv.contained(),
                format!("smallest envelope margin {}", report.tv.min_margin()),
            ),
        };
        out.push(CheckResult {
            name: check.name().into(),
            pass,
            detail,
        });
    }
    let last = report
        .snapshots
        .last()
        .expect("reports cover the initial state");
    if let Some(cap) = cfg.diagnostics.max_density {
        out.push(CheckResult {
            name: "max_density".into(),
            pass: last.max_density <= cap,
            detail: format!("final max density {} against {cap}", last.max_density),
        });
    }
    if let Some(floor) = cfg.diagnostics.min_density {
        out.push(CheckResult {
            name: "min_density".into(),
            pass: last.min_density > floor,
            detail: format!("final min density {} against {floor}", last.min_density),
        });
    }
    out
}

fn summary_text(
    cfg: &RunConfig,
    spec: &ModelSpec,
    datum: &InitialDatum,
    validation: &ValidationReport,
    log: Option<&StepLog>,
    report: &DiagnosticsReport,
    checks: &[CheckResult],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run: {}", cfg.name);
    let _ = writeln!(
        s,
        "particles N = {}, t_final = {}, snapshots = {}",
        cfg.particles, cfg.t_final, cfg.snapshots
    );
    let _ = writeln!(
        s,
        "domain length = {}, mass = {}, datum bounds = [{}, {}]",
        spec.domain_length(),
        spec.mass(),
        datum.lower_bound(),
        datum.upper_bound()
    );
    let _ = writeln!(s, "kernel bound L = {}", spec.kernel.bound());
    let _ = writeln!(s, "\n[admissibility]");
    s.push_str(&validation.to_string());
    if let Some(log) = log {
        let _ = writeln!(s, "\n[integrator]");
        s.push_str(&step_log_summary(log));
    }
    let _ = writeln!(s, "\n[min-max bracket]");
    let _ = writeln!(s, "c_used = {}", report.c_used);
    let _ = writeln!(s, "density bound M = {}", report.minmax.upper_density);
    let _ = writeln!(
        s,
        "snapshots passing = {}/{}",
        report.minmax.records.iter().filter(|r| r.pass).count(),
        report.minmax.records.len()
    );
    for r in report.minmax.failures().take(10) {
        let _ = writeln!(
            s,
            "  FAIL t = {}: min gap {} (cell {}) vs {}, max gap {} vs {}",
            r.time, r.min_gap, r.min_gap_index, r.lower_bound, r.max_gap, r.upper_bound
        );
    }
    let first = &report.snapshots[0];
    let last = report.snapshots.last().unwrap();
    let _ = writeln!(s, "\n[densities]");
    let _ = writeln!(
        s,
        "initial min/max = {} / {}",
        first.min_density, first.max_density
    );
    let _ = writeln!(
        s,
        "final min/max = {} / {}",
        last.min_density, last.max_density
    );
    let _ = writeln!(s, "final max jump = {}", last.max_jump);
    let _ = writeln!(
        s,
        "max relative mass defect = {:e}",
        report.max_mass_defect()
    );
    let _ = writeln!(s, "\n[total variation]");
    let tv = &report.tv;
    let _ = writeln!(
        s,
        "initial = {}, final = {}",
        tv.values[0],
        tv.values.last().unwrap()
    );
    let _ = writeln!(
        s,
        "envelope fitted on t <= {}: C1 = {}, C2 = {}",
        tv.fit_until, tv.envelope.c1, tv.envelope.c2
    );
    let _ = writeln!(
        s,
        "contained = {}, smallest margin = {}",
        tv.contained(),
        tv.min_margin()
    );
    let _ = writeln!(s, "\n[time continuity]");
    let _ = writeln!(s, "W1 Lipschitz constant = {}", report.w1_lipschitz);
    let _ = writeln!(s, "\n[weak residuals]");
    for r in &report.weak_residuals {
        let _ = writeln!(s, "mode {} = {:e}", r.mode, r.value);
    }
    let _ = writeln!(s, "\n[checks]");
    for c in checks {
        let _ = writeln!(
            s,
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    s
}

struct SingleRun {
    outcome: Outcome,
    report: Option<DiagnosticsReport>,
}

/// Simulates one configuration, writes every output file into `out` and
/// evaluates the requested checks.
pub fn run_single(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    single(cfg, out).map(|r| r.outcome)
}

fn single(cfg: &RunConfig, out: &Path) -> Result<SingleRun> {
    create_dir(out)?;
    let (spec, datum) = cfg.build_model()?;
    let validation = validate(&spec, &datum, VALIDATION_GRID);
    let initial = match atomize(&datum, &spec, cfg.particles) {
        Ok(s) => s,
        Err(e) => {
            let reason = e.to_string();
            write_file(
                &out.join("manifest.toml"),
                &manifest(cfg, false, false, Some(&reason)),
            )?;
            return Ok(SingleRun {
                outcome: Outcome {
                    completed: false,
                    checks_passed: false,
                    summary: format!("atomization failed: {reason}\n"),
                },
                report: None,
            });
        }
    };
    let (traj, failure) = match integrate_partial(&initial, &spec, &cfg.integrator_config()) {
        Ok(t) => (t, None),
        Err(p) => (p.trajectory, Some(p.error)),
    };
    write_file(&out.join("snapshots.csv"), &snapshots_csv(&traj)?)?;
    write_file(&out.join("trajectory.csv"), &trajectory_csv(&traj))?;

    if let Some(e) = failure {
        let reason = e.to_string();
        let (lo, hi) = crate::density::reconstruct_density(traj.last())
            .map(|d| min_max(&d))
            .unwrap_or((f64::NAN, f64::NAN));
        let summary = format!(
            "run: {}\nintegration FAILED at t = {}: {reason}\nlast density min/max = {lo} / {hi}\n\n[integrator]\n{}",
            cfg.name,
            traj.last().time,
            step_log_summary(&traj.step_log)
        );
        write_file(&out.join("report.txt"), &summary)?;
        write_file(
            &out.join("manifest.toml"),
            &manifest(cfg, false, false, Some(&reason)),
        )?;
        return Ok(SingleRun {
            outcome: Outcome {
                completed: false,
                checks_passed: false,
                summary,
            },
            report: None,
        });
    }

    let report = diagnose(
        &traj,
        &spec,
        datum.lower_bound(),
        datum.upper_bound(),
        &cfg.diagnostics_options(),
    )?;
    let checks = evaluate_checks(cfg, &report);
    let passed = checks.iter().all(|c| c.pass);
    let summary = summary_text(
        cfg,
        &spec,
        &datum,
        &validation,
        Some(&traj.step_log),
        &report,
        &checks,
    );
    write_file(&out.join("report.csv"), &report_csv(&report))?;
    write_file(&out.join("report.txt"), &summary)?;
    write_file(
        &out.join("manifest.toml"),
        &manifest(cfg, true, passed, None),
    )?;
    Ok(SingleRun {
        outcome: Outcome {
            completed: true,
            checks_passed: passed,
            summary,
        },
        report: Some(report),
    })
}

fn study_list(cfg: &RunConfig) -> Vec<usize> {
    if cfg.study_particles.is_empty() {
        vec![cfg.particles]
    } else {
        cfg.study_particles.clone()
    }
}

/// Self-convergence study over `[study] particles`; writes the per-N outputs
/// into `n<N>/` and the table into `convergence_table.csv`.
pub fn run_converge(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    create_dir(out)?;
    let (spec, datum) = cfg.build_model()?;
    let n_list = study_list(cfg);
    let study = self_convergence(&spec, &datum, &n_list, &cfg.integrator_config());
    let (rows, runs) = match study {
        Ok(r) => r,
        Err(e) => {
            let reason = e.to_string();
            write_file(
                &out.join("manifest.toml"),
                &manifest(cfg, false, false, Some(&reason)),
            )?;
            return Ok(Outcome {
                completed: false,
                checks_passed: false,
                summary: format!("convergence study FAILED: {reason}\n"),
            });
        }
    };
    for (n, traj) in n_list.iter().zip(&runs) {
        let dir = out.join(format!("n{n}"));
        create_dir(&dir)?;
        write_file(&dir.join("snapshots.csv"), &snapshots_csv(traj)?)?;
        write_file(&dir.join("trajectory.csv"), &trajectory_csv(traj))?;
    }
    write_file(&out.join("convergence_table.csv"), &convergence_csv(&rows))?;
    let monotone = rows.windows(2).all(|w| w[1].l1 < w[0].l1);
    let mut summary = format!("run: {}\nconvergence study over N = {n_list:?}\n", cfg.name);
    for r in &rows {
        let _ = writeln!(
            summary,
            "N = {} -> {}: L1 = {}, W1 = {}",
            r.n_coarse, r.n_fine, r.l1, r.w1
        );
    }
    for w in rows.windows(2) {
        let _ = writeln!(
            summary,
            "L1 ratio {} -> {}: {}",
            w[0].n_fine,
            w[1].n_fine,
            w[1].l1 / w[0].l1
        );
    }
    let _ = writeln!(
        summary,
        "{} monotone L1 decrease",
        if monotone { "PASS" } else { "FAIL" }
    );
    write_file(&out.join("report.txt"), &summary)?;
    write_file(
        &out.join("manifest.toml"),
        &manifest(cfg, true, monotone, None),
    )?;
    Ok(Outcome {
        completed: true,
        checks_passed: monotone,
        summary,
    })
}

/// Full diagnostics at every `N` of the study list, one directory per `N`,
/// plus `diagnostics_table.csv` comparing them.
pub fn run_diagnostics(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    create_dir(out)?;
    let n_list = study_list(cfg);
    let mut table = String::from(
        "n,completed,checks_passed,w1_lipschitz,min_max_pass,tv_contained,max_mass_defect",
    );
    for k in 1..=cfg.diagnostics.test_modes {
        let _ = write!(table, ",residual_{k}");
    }
    table.push('\n');
    let mut completed = true;
    let mut passed = true;
    let mut summary = format!("run: {}\ndiagnostics over N = {n_list:?}\n", cfg.name);
    for &n in &n_list {
        let mut sub = cfg.clone();
        sub.particles = n;
        sub.mode = Mode::Single;
        let run = single(&sub, &out.join(format!("n{n}")))?;
        completed &= run.outcome.completed;
        passed &= run.outcome.checks_passed;
        let _ = write!(
            table,
            "{n},{},{}",
            run.outcome.completed, run.outcome.checks_passed
        );
        match &run.report {
            Some(r) => {
                let _ = write!(
                    table,
                    ",{:?},{},{},{:?}",
                    r.w1_lipschitz,
                    r.minmax.all_pass(),
                    r.tv.contained(),
                    r.max_mass_defect()
                );
                for w in &r.weak_residuals {
                    let _ = write!(table, ",{:?}", w.value);
                }
                let _ = writeln!(
                    summary,
                    "N = {n}: W1 Lipschitz {}, residuals {:?}",
                    r.w1_lipschitz,
                    r.weak_residuals.iter().map(|w| w.value).collect::<Vec<_>>()
                );
            }
            None => {
                let _ = write!(table, ",,,,");
                for _ in 0..cfg.diagnostics.test_modes {
                    table.push(',');
                }
                let _ = writeln!(summary, "N = {n}: FAILED");
            }
        }
        table.push('\n');
    }
    write_file(&out.join("diagnostics_table.csv"), &table)?;
    write_file(&out.join("report.txt"), &summary)?;
    write_file(
        &out.join("manifest.toml"),
        &manifest(cfg, completed, passed, None),
    )?;
    Ok(Outcome {
        completed,
        checks_passed: passed,
        summary,
    })
}

/// Recomputes the diagnostics of a finished single run from its
/// `manifest.toml` and `trajectory.csv`, writing `metrics_report.csv` and
/// `metrics_report.txt` next to them.
pub fn recompute_metrics(dir: &Path) -> Result<Outcome> {
    let cfg = load_config(&dir.join("manifest.toml"))?;
    let (spec, datum) = cfg.build_model()?;
    let snapshots = parse_trajectory(&read_file(&dir.join("trajectory.csv"))?, spec.mass())?;
    let traj = Trajectory {
        snapshots,
        step_log: StepLog::default(),
    };
    let report = diagnose(
        &traj,
        &spec,
        datum.lower_bound(),
        datum.upper_bound(),
        &cfg.diagnostics_options(),
    )?;
    let checks = evaluate_checks(&cfg, &report);
    let passed = checks.iter().all(|c| c.pass);
    let validation = validate(&spec, &datum, VALIDATION_GRID);
    let summary = summary_text(&cfg, &spec, &datum, &validation, None, &report, &checks);
    write_file(&dir.join("metrics_report.csv"), &report_csv(&report))?;
    write_file(&dir.join("metrics_report.txt"), &summary)?;
    Ok(Outcome {
        completed: true,
        checks_passed: passed,
        summary,
    })
}

/// Files compared by the determinism self-test.
pub const DETERMINISM_FILES: [&str; 4] = [
    "snapshots.csv",
    "trajectory.csv",
    "report.csv",
    "report.txt",
];

/// Runs the configuration twice with different worker counts and compares
/// the outputs byte for byte.
pub fn seed_check(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .max(2);
    let mut dirs: Vec<PathBuf> = Vec::new();
    let mut outcomes = Vec::new();
    for (tag, w) in [("serial", 1), ("parallel", workers)] {
        let mut c = cfg.clone();
        c.mode = Mode::Single;
        c.integrator.workers = w;
        let dir = out.join(format!("seed_check_{tag}"));
        outcomes.push(run_single(&c, &dir)?);
        dirs.push(dir);
    }
    let mut summary = format!("determinism self-test: workers 1 vs {workers}\n");
    let mut identical = true;
    for name in DETERMINISM_FILES {
        let a = fs::read(dirs[0].join(name)).ok();
        let b = fs::read(dirs[1].join(name)).ok();
        let same = a.is_some() && a == b;
        identical &= same;
        let _ = writeln!(
            summary,
            "{} {name}",
            if same { "IDENTICAL" } else { "DIFFERENT" }
        );
    }
    Ok(Outcome {
        completed: outcomes.iter().all(|o| o.completed),
        checks_passed: identical,
        summary,
    })
}
