//! Measured counterparts of the scheme's structural estimates.

use rayon::prelude::*;

use crate::atomization::{atomize, ParticleState};
use crate::density::{
    l1_distance, max_jump, min_max, reconstruct_density, total_variation, wasserstein1,
    DiscreteDensity,
};
use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegratorConfig, Trajectory};
use crate::model::{InitialDatum, ModelSpec};
use crate::quadrature::GaussLegendre;

/// Headroom over the strict threshold `2 m v_max L ℓ / σ`.
pub const BRACKET_HEADROOM: f64 = 1.01;

/// Growth rate `c` of the upper gap bound.
pub fn bracket_constant(spec: &ModelSpec, lower_density: f64) -> f64 {
    let threshold =
        2.0 * lower_density * spec.velocity.v_max() * spec.kernel.bound() * spec.domain_length()
            / spec.mass();
    if threshold > 0.0 {
        BRACKET_HEADROOM * threshold
    } else {
        // any positive rate is admissible when the threshold vanishes
        1e-9
    }
}

/// Density bound behind the lower gap bound. The argument needs `v` to vanish
/// from the bound on, so the saturation density is the floor.
pub fn effective_upper_density(spec: &ModelSpec, upper_density: f64) -> f64 {
    let sat = spec.velocity.saturation_density();
    if sat.is_finite() {
        upper_density.max(sat)
    } else {
        upper_density
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxRecord {
    pub time: f64,
    pub min_gap: f64,
    pub min_gap_index: usize,
    pub max_gap: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxEnvelope {
    pub records: Vec<MinMaxRecord>,
    pub c_used: f64,
    /// `M` actually used in the lower bound.
    pub upper_density: f64,
    pub lower_density: f64,
}

impl MinMaxEnvelope {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &MinMaxRecord> {
        self.records.iter().filter(|r| !r.pass)
    }
}

/// Checks every snapshot against `σ/(MN) ≤ gap ≤ 2 e^{ct} σ/(mN)`.
pub fn check_minmax(
    traj: &Trajectory,
    spec: &ModelSpec,
    lower_density: f64,
    upper_density: f64,
) -> MinMaxEnvelope {
    let c = bracket_constant(spec, lower_density);
    let big_m = effective_upper_density(spec, upper_density);
    let sigma = spec.mass();
    let records = traj
        .snapshots
        .iter()
        .map(|s| {
            let n = s.cells() as f64;
            let (min_gap, min_gap_index) = s.min_gap();
            let max_gap = s.max_gap();
            let lower_bound = sigma / (big_m * n);
            let upper_bound = if lower_density > 0.0 {
                2.0 * (c * s.time).exp() * sigma / (lower_density * n)
            } else {
                f64::INFINITY
            };
            MinMaxRecord {
                time: s.time,
                min_gap,
                min_gap_index,
                max_gap,
                lower_bound,
                upper_bound,
                pass: min_gap >= lower_bound && max_gap <= upper_bound,
            }
        })
        .collect();
    MinMaxEnvelope {
        records,
        c_used: c,
        upper_density: big_m,
        lower_density,
    }
}

/// `|Σ Rᵢ gapᵢ − σ| / σ` at every snapshot.
pub fn mass_defects(traj: &Trajectory) -> Result<Vec<f64>> {
    traj.snapshots
        .iter()
        .map(|s| {
            let d = reconstruct_density(s)?;
            Ok((d.mass() - s.mass()).abs() / s.mass())
        })
        .collect()
}

/// `E(t) = (TV₀ + C₁/C₂) e^{C₂ t} − C₁/C₂`, read as `TV₀ + C₁ t` when `C₂ = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallEnvelope {
    pub initial: f64,
    pub c1: f64,
    pub c2: f64,
}

impl GronwallEnvelope {
    pub fn evaluate(&self, t: f64) -> f64 {
        self.initial * (self.c2 * t).exp() + self.c1 * growth(self.c2, t)
    }
}

/// `(e^{C₂ t} − 1) / C₂`, continuous at `C₂ = 0`.
fn growth(c2: f64, t: f64) -> f64 {
    if c2 == 0.0 {
        t
    } else {
        (c2 * t).exp_m1() / c2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TvHistory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub envelope: GronwallEnvelope,
    /// Snapshots with `t ≤ fit_until` were used in the fit.
    pub fit_until: f64,
    /// `E(t) − TV(t)` per snapshot.
    pub margins: Vec<f64>,
}

impl TvHistory {
    pub fn contained(&self) -> bool {
        self.margins.iter().all(|m| *m >= 0.0)
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// TV history with a Gronwall envelope fitted on the first `fit_fraction` of
/// the time span and extrapolated to the rest.
pub fn tv_envelope(traj: &Trajectory, fit_fraction: f64) -> Result<TvHistory> {
    if traj.snapshots.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "snapshots",
            value: traj.snapshots.len() as f64,
            reason: "the TV envelope needs at least 3 snapshots",
        });
    }
    if !(fit_fraction > 0.0 && fit_fraction <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "tv_fit_fraction",
            value: fit_fraction,
            reason: "must lie in (0, 1]",
        });
    }
    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.time).collect();
    let values = traj
        .snapshots
        .iter()
        .map(|s| reconstruct_density(s).map(|d| total_variation(&d)))
        .collect::<Result<Vec<_>>>()?;
    let t0 = times[0];
    let fit_until = t0 + fit_fraction * (times[times.len() - 1] - t0);
    let fit: Vec<(f64, f64)> = times
        .iter()
        .zip(&values)
        .filter(|(t, _)| **t <= fit_until)
        .map(|(t, v)| (t - t0, *v))
        .collect();
    let envelope = fit_gronwall(values[0], &fit);
    let margins = times
        .iter()
        .zip(&values)
        .map(|(t, v)| envelope.evaluate(t - t0) - v)
        .collect();
    Ok(TvHistory {
        times,
        values,
        envelope,
        fit_until,
        margins,
    })
}

/// Least-squares envelope constrained to dominate every fitted point.
fn fit_gronwall(initial: f64, points: &[(f64, f64)]) -> GronwallEnvelope {
    let best_c1 = |c2: f64| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut floor = 0.0_f64;
        for &(t, v) in points {
            let a = initial * (c2 * t).exp();
            let b = growth(c2, t);
            num += b * (v - a);
            den += b * b;
            if b > 0.0 {
                floor = floor.max((v - a) / b);
            }
        }
        let ls = if den > 0.0 { num / den } else { 0.0 };
        let mut c1 = ls.max(floor).max(0.0);
        if c1 > 0.0 {
            c1 += 1e-12 * c1.max(initial);
        }
        let env = GronwallEnvelope { initial, c1, c2 };
        let cost = points
            .iter()
            .map(|&(t, v)| (env.evaluate(t) - v).powi(2))
            .sum();
        (c1, cost)
    };

    let mut best = (0.0, best_c1(0.0));
    let grid = 400;
    let (lo, hi) = (-4.0_f64, 2.0_f64);
    for k in 0..=grid {
        let c2 = 10f64.powf(lo + (hi - lo) * k as f64 / grid as f64);
        let r = best_c1(c2);
        if r.1 < best.1 .1 {
            best = (c2, r);
        }
    }
    if best.0 > 0.0 {
        // golden-section refinement in log space around the best grid point
        let step = (hi - lo) / grid as f64;
        let (mut a, mut b) = (best.0.log10() - step, best.0.log10() + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let m1 = b - g * (b - a);
            let m2 = a + g * (b - a);
            if best_c1(10f64.powf(m1)).1 <= best_c1(10f64.powf(m2)).1 {
                b = m2;
            } else {
                a = m1;
            }
        }
        let c2 = 10f64.powf(0.5 * (a + b));
        let r = best_c1(c2);
        if r.1 < best.1 .1 {
            best = (c2, r);
        }
    }
    GronwallEnvelope {
        initial,
        c1: best.1 .0,
        c2: best.0,
    }
}

/// `max_{s ≠ t} d_W(ρ(s), ρ(t)) / |t − s|` over all snapshot pairs.
pub fn w1_time_lipschitz(traj: &Trajectory) -> Result<f64> {
    if traj.snapshots.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "snapshots",
            value: traj.snapshots.len() as f64,
            reason: "need at least 2 snapshots",
        });
    }
    let densities = traj
        .snapshots
        .iter()
        .map(reconstruct_density)
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.time).collect();
    let rows = (0..densities.len())
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0_f64;
            for j in i + 1..densities.len() {
                let d = wasserstein1(&densities[i], &densities[j])?;
                best = best.max(d / (times[j] - times[i]));
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(rows.into_iter().fold(0.0, f64::max))
}

/// Space–time test function for the weak formulation.
pub trait TestFunction: Send + Sync {
    fn value(&self, t: f64, x: f64) -> f64;
    fn dt(&self, t: f64, x: f64) -> f64;
    fn dx(&self, t: f64, x: f64) -> f64;
    fn dxx(&self, t: f64, x: f64) -> f64;
    /// Closed time interval outside which the function vanishes.
    fn time_support(&self) -> (f64, f64);
    fn label(&self) -> String;
}

/// `b(t) cos(kπx/ℓ)` with the smooth bump `b(t) = exp(−1/(1 − u²))`,
/// `u = (t − centre)/half_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineBump {
    pub mode: usize,
    pub length: f64,
    pub centre: f64,
    pub half_width: f64,
}

impl CosineBump {
    pub fn new(mode: usize, length: f64, t_final: f64) -> Self {
        Self {
            mode,
            length,
            centre: 0.5 * t_final,
            half_width: 0.4 * t_final,
        }
    }

    fn wave(&self) -> f64 {
        self.mode as f64 * std::f64::consts::PI / self.length
    }

    /// `(b(t), b'(t))`
    fn bump(&self, t: f64) -> (f64, f64) {
        let u = (t - self.centre) / self.half_width;
        if u.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let q = 1.0 - u * u;
        let b = (-1.0 / q).exp();
        (b, b * (-2.0 * u / (q * q)) / self.half_width)
    }
}

impl TestFunction for CosineBump {
    fn value(&self, t: f64, x: f64) -> f64 {
        self.bump(t).0 * (self.wave() * x).cos()
    }

    fn dt(&self, t: f64, x: f64) -> f64 {
        self.bump(t).1 * (self.wave() * x).cos()
    }

    fn dx(&self, t: f64, x: f64) -> f64 {
        let w = self.wave();
        -self.bump(t).0 * w * (w * x).sin()
    }

    fn dxx(&self, t: f64, x: f64) -> f64 {
        let w = self.wave();
        -self.bump(t).0 * w * w * (w * x).cos()
    }

    fn time_support(&self) -> (f64, f64) {
        (self.centre - self.half_width, self.centre + self.half_width)
    }

    fn label(&self) -> String {
        format!("cos{}", self.mode)
    }
}

pub fn make_test_functions(length: f64, t_final: f64, modes: usize) -> Vec<CosineBump> {
    (1..=modes)
        .map(|k| CosineBump::new(k, length, t_final))
        .collect()
}

/// Rejects test functions that are not Neumann-compatible on `[0, ℓ]` or not
/// compactly supported inside `(0, T)`.
pub fn check_test_function(test: &dyn TestFunction, length: f64, t_final: f64) -> Result<()> {
    let (a, b) = test.time_support();
    if !(a > 0.0 && b < t_final) {
        return Err(Error::InadmissibleTest(format!(
            "{}: time support [{a}, {b}] is not inside (0, {t_final})",
            test.label()
        )));
    }
    let samples = 64;
    let mut scale = 0.0_f64;
    let mut boundary = 0.0_f64;
    for k in 0..=samples {
        let t = a + (b - a) * k as f64 / samples as f64;
        for j in 0..=samples {
            let x = length * j as f64 / samples as f64;
            scale = scale.max(test.dx(t, x).abs());
        }
        boundary = boundary
            .max(test.dx(t, 0.0).abs())
            .max(test.dx(t, length).abs());
    }
    if boundary > 1e-12 * scale.max(1.0) {
        return Err(Error::InadmissibleTest(format!(
            "{}: spatial derivative {boundary:e} at the boundary",
            test.label()
        )));
    }
    Ok(())
}

/// Space–time residual of the weak formulation for the piecewise-constant
/// densities of `traj`, with `nodes`-point Gauss–Legendre in every cell and
/// the trapezoid rule over snapshot times.
pub fn weak_residual(
    traj: &Trajectory,
    spec: &ModelSpec,
    test: &dyn TestFunction,
    nodes: usize,
) -> Result<f64> {
    let t_final = traj.last().time;
    check_test_function(test, spec.domain_length(), t_final)?;
    let rule = GaussLegendre::new(nodes.max(1));
    let (a, b) = test.time_support();
    let integrand: Vec<f64> = traj
        .snapshots
        .par_iter()
        .map(|s| {
            if s.time <= a || s.time >= b {
                Ok(0.0)
            } else {
                spatial_integrand(s, spec, test, &rule)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.time).collect();
    Ok(times
        .windows(2)
        .zip(integrand.windows(2))
        .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
        .sum())
}

fn spatial_integrand(
    state: &ParticleState,
    spec: &ModelSpec,
    test: &dyn TestFunction,
    rule: &GaussLegendre,
) -> Result<f64> {
    let density = reconstruct_density(state)?;
    let x = state.positions();
    let r = density.values();
    // K'∗ρ(y) = Σⱼ Rⱼ (K(y − xⱼ) − K(y − xⱼ₊₁)) = Σⱼ K(y − xⱼ)(Rⱼ − Rⱼ₋₁)
    let jumps: Vec<f64> = (0..x.len())
        .map(|j| {
            let right = if j < r.len() { r[j] } else { 0.0 };
            let left = if j > 0 { r[j - 1] } else { 0.0 };
            right - left
        })
        .collect();
    let kernel = &spec.kernel;
    let t = state.time;
    let mut total = 0.0;
    for (i, &rho) in r.iter().enumerate() {
        let phi = spec.diffusion.evaluate(rho);
        let mobility = rho * spec.velocity.evaluate(rho);
        total += rule.integrate(x[i], x[i + 1], |y| {
            let mut transport = 0.0;
            if mobility != 0.0 {
                let conv: f64 = x
                    .iter()
                    .zip(&jumps)
                    .map(|(xj, dj)| dj * kernel.potential(y - xj))
                    .sum();
                transport = mobility * conv * test.dx(t, y);
            }
            rho * test.dt(t, y) + phi * test.dxx(t, y) - transport
        });
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub l1: f64,
    pub w1: f64,
}

/// Runs the pipeline at every `N` in `n_list` (concurrently) and compares the
/// final densities of consecutive entries.
pub fn self_convergence(
    spec: &ModelSpec,
    datum: &InitialDatum,
    n_list: &[usize],
    config: &IntegratorConfig,
) -> Result<(Vec<ConvergenceRow>, Vec<Trajectory>)> {
    if n_list.len() < 3 || n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] < 2 {
        return Err(Error::InvalidParameter {
            name: "particles",
            value: n_list.len() as f64,
            reason: "need at least three increasing particle counts, each at least 2",
        });
    }
    let runs = n_list
        .par_iter()
        .map(|&n| {
            let initial = atomize(datum, spec, n)?;
            integrate(&initial, spec, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let finals = runs
        .iter()
        .map(|r| reconstruct_density(r.last()))
        .collect::<Result<Vec<DiscreteDensity>>>()?;
    let rows = n_list
        .windows(2)
        .zip(finals.windows(2))
        .map(|(n, d)| {
            Ok(ConvergenceRow {
                n_coarse: n[0],
                n_fine: n[1],
                l1: l1_distance(&d[0], &d[1])?,
                w1: wasserstein1(&d[0], &d[1])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, runs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsOptions {
    pub test_modes: usize,
    pub quadrature_nodes: usize,
    pub tv_fit_fraction: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            test_modes: 3,
            quadrature_nodes: 5,
            tv_fit_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSummary {
    pub time: f64,
    pub min_density: f64,
    pub max_density: f64,
    pub total_variation: f64,
    pub max_jump: f64,
    pub mass_defect: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakResidual {
    pub mode: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsReport {
    pub minmax: MinMaxEnvelope,
    pub tv: TvHistory,
    pub w1_lipschitz: f64,
    pub weak_residuals: Vec<WeakResidual>,
    pub snapshots: Vec<SnapshotSummary>,
    pub c_used: f64,
}

impl DiagnosticsReport {
    pub fn max_mass_defect(&self) -> f64 {
        self.snapshots
            .iter()
            .map(|s| s.mass_defect)
            .fold(0.0, f64::max)
    }
}

pub fn diagnose(
    traj: &Trajectory,
    spec: &ModelSpec,
    lower_density: f64,
    upper_density: f64,
    options: &DiagnosticsOptions,
) -> Result<DiagnosticsReport> {
    let minmax = check_minmax(traj, spec, lower_density, upper_density);
    let tv = tv_envelope(traj, options.tv_fit_fraction)?;
    let w1_lipschitz = w1_time_lipschitz(traj)?;
    let t_final = traj.last().time;
    let weak_residuals = if t_final > 0.0 {
        make_test_functions(spec.domain_length(), t_final, options.test_modes)
            .iter()
            .map(|f| {
                Ok(WeakResidual {
                    mode: f.mode,
                    value: weak_residual(traj, spec, f, options.quadrature_nodes)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let snapshots = traj
        .snapshots
        .iter()
        .zip(&tv.values)
        .map(|(s, tv)| {
            let d = reconstruct_density(s)?;
            let (lo, hi) = min_max(&d);
            Ok(SnapshotSummary {
                time: s.time,
                min_density: lo,
                max_density: hi,
                total_variation: *tv,
                max_jump: max_jump(&d),
                mass_defect: (d.mass() - s.mass()).abs() / s.mass(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let c_used = minmax.c_used;
    Ok(DiagnosticsReport {
        minmax,
        tv,
        w1_lipschitz,
        weak_residuals,
        snapshots,
        c_used,
    })
}
