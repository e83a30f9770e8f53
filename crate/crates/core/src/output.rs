//! Text output: CSV tables and their readers.
//!
//! Floats use Rust's `Debug` form: the shortest decimal that reads back to
//! the same `f64`, switching to exponent notation for very small or large
//! magnitudes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::atomization::{local_densities, ParticleState};
use crate::density::DiscreteDensity;
use crate::diagnostics::{ConvergenceRow, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::integrator::{StepLog, Trajectory};

pub const SNAPSHOT_HEADER: &str = "time,cell_index,x_left,x_right,density";
pub const TRAJECTORY_HEADER: &str = "time,particle_index,position";
pub const CONVERGENCE_HEADER: &str = "n_coarse,n_fine,l1,w1";
pub const REPORT_HEADER: &str = "time,min_gap,min_gap_index,max_gap,lower_bound,upper_bound,minmax_pass,min_density,max_density,total_variation,tv_envelope,tv_margin,max_jump,mass_defect";

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn snapshots_csv(traj: &Trajectory) -> Result<String> {
    let mut out = String::new();
    out.push_str(SNAPSHOT_HEADER);
    out.push('\n');
    for s in &traj.snapshots {
        let r = local_densities(s)?;
        let x = s.positions();
        for (i, rho) in r.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:?},{},{:?},{:?},{:?}",
                s.time,
                i,
                x[i],
                x[i + 1],
                rho
            );
        }
    }
    Ok(out)
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for s in &traj.snapshots {
        for (i, x) in s.positions().iter().enumerate() {
            let _ = writeln!(out, "{:?},{},{:?}", s.time, i, x);
        }
    }
    out
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::new();
    out.push_str(CONVERGENCE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{:?},{:?}", r.n_coarse, r.n_fine, r.l1, r.w1);
    }
    out
}

pub fn report_csv(report: &DiagnosticsReport) -> String {
    let mut out = String::new();
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for ((m, s), (tv_env, margin)) in report.minmax.records.iter().zip(&report.snapshots).zip(
        report
            .tv
            .times
            .iter()
            .map(|t| report.tv.envelope.evaluate(t - report.tv.times[0]))
            .zip(&report.tv.margins),
    ) {
        let _ = writeln!(
            out,
            "{:?},{:?},{},{:?},{:?},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            m.time,
            m.min_gap,
            m.min_gap_index,
            m.max_gap,
            m.lower_bound,
            m.upper_bound,
            m.pass,
            s.min_density,
            s.max_density,
            s.total_variation,
            tv_env,
            margin,
            s.max_jump,
            s.mass_defect
        );
    }
    out
}

pub fn step_log_summary(log: &StepLog) -> String {
    format!(
        "method = {}\naccepted_steps = {}\nrejected_steps = {}\ngap_rejections = {}\nrhs_evaluations = {}\nmedian_step = {}\nmax_stages = {}\n",
        log.method.map(|m| m.name()).unwrap_or("none"),
        log.accepted,
        log.rejected,
        log.gap_rejections,
        log.rhs_evaluations,
        log.median_step().unwrap_or(0.0),
        log.max_stages
    )
}

struct CsvRows<'a> {
    file: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    width: usize,
}

fn csv_rows<'a>(text: &'a str, file: &'a str, header: &str) -> Result<CsvRows<'a>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                file: file.into(),
                line: 1,
                reason: format!("expected header `{header}`, found `{h}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                file: file.into(),
                line: 1,
                reason: "empty file".into(),
            })
        }
    }
    Ok(CsvRows {
        file,
        lines,
        width: header.split(',').count(),
    })
}

impl<'a> Iterator for CsvRows<'a> {
    type Item = Result<(usize, Vec<&'a str>)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (k, line) = self.lines.next()?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != self.width {
                return Some(Err(Error::Parse {
                    file: self.file.into(),
                    line: k + 1,
                    reason: format!("expected {} fields, found {}", self.width, fields.len()),
                }));
            }
            return Some(Ok((k + 1, fields)));
        }
    }
}

fn field<T: std::str::FromStr>(file: &str, line: usize, name: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        file: file.into(),
        line,
        reason: format!("cannot read {name} from `{s}`"),
    })
}

/// Groups consecutive rows by time; within a group the index column must run
/// 0, 1, 2, … .
fn grouped<T>(
    rows: CsvRows<'_>,
    file: &str,
    mut parse: impl FnMut(usize, &[&str]) -> Result<(f64, usize, T)>,
) -> Result<Vec<(f64, Vec<T>)>> {
    let mut groups: Vec<(f64, Vec<T>)> = Vec::new();
    for row in rows {
        let (line, fields) = row?;
        let (time, index, item) = parse(line, &fields)?;
        let start_new = match groups.last() {
            Some((t, _)) => *t != time,
            None => true,
        };
        if start_new {
            if let Some((t, _)) = groups.last() {
                if time < *t {
                    return Err(Error::Parse {
                        file: file.into(),
                        line,
                        reason: format!("time {time} goes backwards"),
                    });
                }
            }
            groups.push((time, Vec::new()));
        }
        let group = &mut groups.last_mut().unwrap().1;
        if index != group.len() {
            return Err(Error::Parse {
                file: file.into(),
                line,
                reason: format!("expected index {}, found {index}", group.len()),
            });
        }
        group.push(item);
    }
    Ok(groups)
}

/// Reads `trajectory.csv` back into states carrying `mass`.
pub fn parse_trajectory(text: &str, mass: f64) -> Result<Vec<ParticleState>> {
    let file = "trajectory.csv";
    let rows = csv_rows(text, file, TRAJECTORY_HEADER)?;
    let groups = grouped(rows, file, |line, f| {
        Ok((
            field(file, line, "time", f[0])?,
            field(file, line, "particle_index", f[1])?,
            field::<f64>(file, line, "position", f[2])?,
        ))
    })?;
    groups
        .into_iter()
        .map(|(t, x)| ParticleState::new(t, x, mass))
        .collect()
}

/// Reads `snapshots.csv` back into `(time, density)` pairs.
pub fn parse_snapshots(text: &str) -> Result<Vec<(f64, DiscreteDensity)>> {
    let file = "snapshots.csv";
    let rows = csv_rows(text, file, SNAPSHOT_HEADER)?;
    let groups = grouped(rows, file, |line, f| {
        Ok((
            field(file, line, "time", f[0])?,
            field(file, line, "cell_index", f[1])?,
            (
                field::<f64>(file, line, "x_left", f[2])?,
                field::<f64>(file, line, "x_right", f[3])?,
                field::<f64>(file, line, "density", f[4])?,
            ),
        ))
    })?;
    groups
        .into_iter()
        .map(|(t, cells)| {
            let mut breakpoints: Vec<f64> = cells.iter().map(|c| c.0).collect();
            breakpoints.push(cells.last().map(|c| c.1).unwrap_or(0.0));
            if cells.windows(2).any(|w| w[0].1 != w[1].0) {
                return Err(Error::Parse {
                    file: file.into(),
                    line: 0,
                    reason: format!("cells at t = {t} do not tile an interval"),
                });
            }
            let values = cells.iter().map(|c| c.2).collect();
            Ok((t, DiscreteDensity::new(breakpoints, values)?))
        })
        .collect()
}

pub fn parse_convergence(text: &str) -> Result<Vec<ConvergenceRow>> {
    let file = "convergence_table.csv";
    csv_rows(text, file, CONVERGENCE_HEADER)?
        .map(|row| {
            let (line, f) = row?;
            Ok(ConvergenceRow {
                n_coarse: field(file, line, "n_coarse", f[0])?,
                n_fine: field(file, line, "n_fine", f[1])?,
                l1: field(file, line, "l1", f[2])?,
                w1: field(file, line, "w1", f[3])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::reconstruct_density;

    fn sample() -> Trajectory {
        let a = ParticleState::new(0.0, vec![0.0, 0.1, 0.45, 1.0], 0.7).unwrap();
        let b =
            ParticleState::new(0.25, vec![0.0, 1.0 / 3.0, 0.5000000000000001, 1.0], 0.7).unwrap();
        Trajectory {
            snapshots: vec![a, b],
            step_log: StepLog::default(),
        }
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let t = sample();
        let back = parse_trajectory(&trajectory_csv(&t), 0.7).unwrap();
        assert_eq!(back, t.snapshots);
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let t = sample();
        let back = parse_snapshots(&snapshots_csv(&t).unwrap()).unwrap();
        for ((time, d), s) in back.iter().zip(&t.snapshots) {
            assert_eq!(*time, s.time);
            assert_eq!(d, &reconstruct_density(s).unwrap());
        }
    }

    #[test]
    fn malformed_rows_are_located() {
        let text = format!("{TRAJECTORY_HEADER}\n0,0,0\n0,2,1\n");
        match parse_trajectory(&text, 1.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_trajectory("time,position\n", 1.0).is_err());
    }

    #[test]
    fn convergence_round_trip() {
        let rows = vec![ConvergenceRow {
            n_coarse: 50,
            n_fine: 100,
            l1: 0.012345678901234567,
            w1: 1e-7,
        }];
        assert_eq!(parse_convergence(&convergence_csv(&rows)).unwrap(), rows);
    }
}
