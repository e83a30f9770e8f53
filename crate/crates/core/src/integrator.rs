//! Adaptive time stepping for the particle system.
//!
//! Two explicit methods share one driver: the Dormand–Prince 5(4) pair with PI
//! step control, and a second-order Runge–Kutta–Chebyshev method whose
//! stability interval grows quadratically with the stage count. The diffusive
//! coupling has stiffness of order `N² Lip(φ)`, so for long or finely resolved
//! runs the Chebyshev method needs far fewer kernel evaluations.

use crate::atomization::ParticleState;
use crate::dynamics::{ForceAssembler, Summation};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    DormandPrince,
    Chebyshev,
    /// Chebyshev when the estimated stiffness times the horizon is large.
    #[default]
    Auto,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DormandPrince => "dormand_prince",
            Method::Chebyshev => "chebyshev",
            Method::Auto => "auto",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "dormand_prince" => Some(Method::DormandPrince),
            "chebyshev" => Some(Method::Chebyshev),
            "auto" => Some(Method::Auto),
            _ => None,
        }
    }
}

/// Above this value of `spectral radius × T`, `Auto` switches to Chebyshev.
pub const AUTO_STIFFNESS_THRESHOLD: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub t_final: f64,
    pub abs_tolerance: f64,
    pub safety_factor: f64,
    /// Defaults to `T / 100`.
    pub max_step: Option<f64>,
    /// Defaults to `1e−12 T`.
    pub min_step: Option<f64>,
    /// Defaults to `0.25 (min gap)² / Lip(φ)`, clamped to the step bounds.
    pub initial_step: Option<f64>,
    pub snapshot_times: Vec<f64>,
    pub method: Method,
    /// Density `M` behind the gap floor `σ / (2 M N)`. Defaults to the larger
    /// of the initial maximum density and the saturation density.
    pub density_cap: Option<f64>,
    pub workers: usize,
    pub summation: Summation,
}

impl IntegratorConfig {
    /// Defaults with 101 uniform snapshot times on `[0, T]`.
    pub fn new(t_final: f64) -> Self {
        Self {
            t_final,
            abs_tolerance: 1e-8,
            safety_factor: 0.8,
            max_step: None,
            min_step: None,
            initial_step: None,
            snapshot_times: uniform_times(t_final, 101),
            method: Method::Auto,
            density_cap: None,
            workers: 1,
            summation: Summation::Ordered,
        }
    }

    pub fn with_snapshots(mut self, count: usize) -> Self {
        self.snapshot_times = uniform_times(self.t_final, count);
        self
    }

    pub fn resolved_max_step(&self) -> f64 {
        self.max_step.unwrap_or(self.t_final / 100.0)
    }

    pub fn resolved_min_step(&self) -> f64 {
        self.min_step.unwrap_or(1e-12 * self.t_final)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::IntegratorConfig(msg));
        let t = self.t_final;
        if !(t > 0.0 && t.is_finite()) {
            return bad(format!("t_final = {t} must be positive"));
        }
        if !(self.abs_tolerance > 0.0 && self.abs_tolerance.is_finite()) {
            return bad(format!(
                "abs_tolerance = {} must be positive",
                self.abs_tolerance
            ));
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            return bad(format!(
                "safety_factor = {} must lie in (0, 1]",
                self.safety_factor
            ));
        }
        let (lo, hi) = (self.resolved_min_step(), self.resolved_max_step());
        if !(lo > 0.0 && lo <= hi && hi <= t) {
            return bad(format!(
                "need 0 < min_step ({lo}) ≤ max_step ({hi}) ≤ t_final ({t})"
            ));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return bad(format!("initial_step = {h} must be positive"));
            }
        }
        if let Some(m) = self.density_cap {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("density_cap = {m} must be positive"));
            }
        }
        if self.snapshot_times.iter().any(|s| !(*s >= 0.0 && *s <= t)) {
            return bad("snapshot times must lie in [0, t_final]".into());
        }
        if self.snapshot_times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("snapshot times must be strictly increasing".into());
        }
        Ok(())
    }
}

pub fn uniform_times(t_final: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|k| {
            if k + 1 == count {
                t_final
            } else {
                t_final * k as f64 / (count - 1) as f64
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLog {
    pub method: Option<Method>,
    pub accepted: usize,
    pub rejected: usize,
    /// Rejections caused by a gap below the floor rather than by the error test.
    pub gap_rejections: usize,
    pub rhs_evaluations: usize,
    /// Sizes of the accepted steps, in order.
    pub step_sizes: Vec<f64>,
    pub max_stages: usize,
}

impl StepLog {
    pub fn median_step(&self) -> Option<f64> {
        if self.step_sizes.is_empty() {
            return None;
        }
        let mut s = self.step_sizes.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        Some(if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<ParticleState>,
    pub step_log: StepLog,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &ParticleState {
        self.snapshots
            .last()
            .expect("trajectory holds the initial state")
    }
}

/// Integration that stopped early, with everything produced up to the failure.
#[derive(Debug)]
pub struct PartialRun {
    pub trajectory: Trajectory,
    pub error: Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    Tolerance,
    GapFloor,
    /// A stage produced an unordered or non-finite configuration.
    StageFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Accepted {
        state: ParticleState,
        error_estimate: f64,
    },
    Rejected {
        error_estimate: f64,
        min_gap: f64,
        reason: RejectReason,
    },
}

/// Integrates to `config.t_final`, emitting the initial state and every
/// requested snapshot time after it.
pub fn integrate(
    initial: &ParticleState,
    spec: &ModelSpec,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_partial(initial, spec, config).map_err(|p| p.error)
}

/// As [`integrate`], but a failure keeps the snapshots produced so far.
pub fn integrate_partial(
    initial: &ParticleState,
    spec: &ModelSpec,
    config: &IntegratorConfig,
) -> std::result::Result<Trajectory, Box<PartialRun>> {
    let empty = |error: Error| {
        Box::new(PartialRun {
            trajectory: Trajectory {
                snapshots: vec![initial.clone()],
                step_log: StepLog::default(),
            },
            error,
        })
    };
    if let Err(e) = config.validate() {
        return Err(empty(e));
    }
    let mut driver = match Driver::new(initial, spec, config) {
        Ok(d) => d,
        Err(e) => return Err(empty(e)),
    };
    let outcome = match driver.method {
        Method::Chebyshev => driver.run_chebyshev(),
        _ => driver.run_dormand_prince(),
    };
    let trajectory = Trajectory {
        snapshots: std::mem::take(&mut driver.snapshots),
        step_log: std::mem::take(&mut driver.log),
    };
    match outcome {
        Ok(()) => Ok(trajectory),
        Err(error) => Err(Box::new(PartialRun { trajectory, error })),
    }
}

/// One Dormand–Prince step of size `dt` with default tolerances.
pub fn step_once(state: &ParticleState, spec: &ModelSpec, dt: f64) -> Result<StepOutcome> {
    step_once_with(state, spec, dt, &IntegratorConfig::new(1.0))
}

/// One Dormand–Prince step of size `dt`, using the tolerance and gap floor of
/// `config` (its time horizon is ignored).
pub fn step_once_with(
    state: &ParticleState,
    spec: &ModelSpec,
    dt: f64,
    config: &IntegratorConfig,
) -> Result<StepOutcome> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            value: dt,
            reason: "must be positive and finite",
        });
    }
    let mut driver = Driver::new(state, spec, config)?;
    let mut work = DpWork::new(state.positions().len());
    driver.rhs(state.positions(), &mut work.k[0])?;
    let y = state.positions().to_vec();
    let trial = driver.dp_attempt(&y, &mut work, dt);
    Ok(match trial {
        Trial::Failed => StepOutcome::Rejected {
            error_estimate: f64::INFINITY,
            min_gap: f64::NAN,
            reason: RejectReason::StageFailure,
        },
        Trial::Done { err, min_gap } => {
            if err > 1.0 {
                StepOutcome::Rejected {
                    error_estimate: err,
                    min_gap,
                    reason: RejectReason::Tolerance,
                }
            } else if min_gap < driver.gap_floor {
                StepOutcome::Rejected {
                    error_estimate: err,
                    min_gap,
                    reason: RejectReason::GapFloor,
                }
            } else {
                StepOutcome::Accepted {
                    state: ParticleState::from_parts(
                        state.time + dt,
                        work.y_new.clone(),
                        state.mass(),
                    ),
                    error_estimate: err,
                }
            }
        }
    })
}

enum Trial {
    Done { err: f64, min_gap: f64 },
    Failed,
}

struct Driver<'a> {
    spec: &'a ModelSpec,
    config: &'a IntegratorConfig,
    assembler: ForceAssembler,
    mass: f64,
    t0: f64,
    y0: Vec<f64>,
    gap_floor: f64,
    method: Method,
    snapshots: Vec<ParticleState>,
    next_snapshot: usize,
    log: StepLog,
}

impl<'a> Driver<'a> {
    fn new(
        initial: &ParticleState,
        spec: &'a ModelSpec,
        config: &'a IntegratorConfig,
    ) -> Result<Self> {
        let assembler = ForceAssembler::with_workers(config.summation, config.workers)?;
        let n = initial.cells();
        let mass = initial.mass();
        let max_density = mass / (n as f64 * initial.min_gap().0);
        let cap = config.density_cap.unwrap_or_else(|| {
            let sat = spec.velocity.saturation_density();
            if sat.is_finite() {
                max_density.max(sat)
            } else {
                max_density
            }
        });
        let gap_floor = mass / (2.0 * cap * n as f64);
        let mut driver = Self {
            spec,
            config,
            assembler,
            mass,
            t0: initial.time,
            y0: initial.positions().to_vec(),
            gap_floor,
            method: config.method,
            snapshots: vec![initial.clone()],
            next_snapshot: 0,
            log: StepLog::default(),
        };
        while driver.next_snapshot < config.snapshot_times.len()
            && config.snapshot_times[driver.next_snapshot] <= initial.time
        {
            driver.next_snapshot += 1;
        }
        if driver.method == Method::Auto {
            let mut v = vec![0.0; driver.y0.len()];
            let y0 = driver.y0.clone();
            driver.rhs(&y0, &mut v)?;
            let radius = driver.stiffness_bound();
            driver.method = if radius * (config.t_final - initial.time) > AUTO_STIFFNESS_THRESHOLD {
                Method::Chebyshev
            } else {
                Method::DormandPrince
            };
        }
        driver.log.method = Some(driver.method);
        Ok(driver)
    }

    fn rhs(&mut self, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.log.rhs_evaluations += 1;
        self.assembler.evaluate(y, self.mass, self.spec, out)
    }

    fn initial_step(&self) -> f64 {
        let (lo, hi) = (
            self.config.resolved_min_step(),
            self.config.resolved_max_step(),
        );
        let guess = self.config.initial_step.unwrap_or_else(|| {
            let lip = self.spec.diffusion.lipschitz_bound();
            let g = min_gap(&self.y0).0;
            if lip > 0.0 {
                0.25 * g * g / lip
            } else {
                hi
            }
        });
        guess.clamp(lo, hi)
    }

    fn underflow(&self, time: f64, step: f64, y: &[f64]) -> Error {
        let (min_gap, gap_index) = min_gap(y);
        Error::StepUnderflow {
            time,
            step,
            min_gap,
            gap_index,
        }
    }

    /// Emits snapshots in `(t, t + h]` using `interpolate(θ, out)`.
    fn emit(
        &mut self,
        t: f64,
        h: f64,
        t_new: f64,
        y_new: &[f64],
        mut interpolate: impl FnMut(f64, &mut [f64]),
    ) -> Result<()> {
        let times = &self.config.snapshot_times;
        while self.next_snapshot < times.len() && times[self.next_snapshot] <= t_new {
            let tau = times[self.next_snapshot];
            let positions = if tau == t_new {
                y_new.to_vec()
            } else {
                let mut out = vec![0.0; y_new.len()];
                interpolate((tau - t) / h, &mut out);
                let last = out.len() - 1;
                out[0] = self.y0[0];
                out[last] = self.y0[last];
                out
            };
            let state = ParticleState::new(tau, positions, self.mass).map_err(|e| {
                Error::CorruptState(format!("interpolated snapshot at t = {tau}: {e}"))
            })?;
            self.snapshots.push(state);
            self.next_snapshot += 1;
        }
        Ok(())
    }

    // ---- Dormand–Prince 5(4) ----

    fn dp_attempt(&mut self, y: &[f64], w: &mut DpWork, h: f64) -> Trial {
        let len = y.len();
        for s in 1..7 {
            for i in 0..len {
                let mut acc = 0.0;
                for (j, a) in DP_A[s].iter().enumerate().take(s) {
                    if *a != 0.0 {
                        acc += a * w.k[j][i];
                    }
                }
                w.y_stage[i] = y[i] + h * acc;
            }
            let k_tail = &mut w.k[s..];
            let stage = if s == 6 {
                // the seventh stage point is the new solution (FSAL)
                w.y_new.copy_from_slice(&w.y_stage);
                &w.y_new
            } else {
                &w.y_stage
            };
            self.log.rhs_evaluations += 1;
            if self
                .assembler
                .evaluate(stage, self.mass, self.spec, &mut k_tail[0])
                .is_err()
            {
                return Trial::Failed;
            }
        }
        let mut err = 0.0_f64;
        for i in 0..len {
            let mut e = 0.0;
            for j in 0..7 {
                e += DP_E[j] * w.k[j][i];
            }
            err = err.max((h * e).abs());
        }
        Trial::Done {
            err: err / self.config.abs_tolerance,
            min_gap: min_gap(&w.y_new).0,
        }
    }

    fn run_dormand_prince(&mut self) -> Result<()> {
        let t_final = self.config.t_final;
        let (h_min, h_max) = (
            self.config.resolved_min_step(),
            self.config.resolved_max_step(),
        );
        let safe = self.config.safety_factor;
        let len = self.y0.len();
        let mut w = DpWork::new(len);
        let mut y = self.y0.clone();
        let mut t = self.t0;
        self.rhs(&y.clone(), &mut w.k[0])?;
        let mut h = self.initial_step();
        let mut facold = 1e-4_f64;
        let mut last_rejected = false;

        while t < t_final {
            let last = h >= t_final - t;
            if last {
                h = t_final - t;
            }
            if h < h_min && !last {
                return Err(self.underflow(t, h, &y));
            }
            match self.dp_attempt(&y, &mut w, h) {
                Trial::Failed => {
                    self.log.rejected += 1;
                    last_rejected = true;
                    h *= 0.5;
                }
                Trial::Done { err, min_gap } => {
                    let fac11 = err.powf(DP_EXPO1);
                    if err > 1.0 {
                        self.log.rejected += 1;
                        last_rejected = true;
                        h /= (fac11 / safe).min(1.0 / DP_FAC_MIN);
                    } else if min_gap < self.gap_floor {
                        self.log.rejected += 1;
                        self.log.gap_rejections += 1;
                        last_rejected = true;
                        h *= 0.5;
                    } else {
                        let t_new = if last { t_final } else { t + h };
                        // dense output for snapshots inside this step
                        for i in 0..len {
                            let ydiff = w.y_new[i] - y[i];
                            let bspl = h * w.k[0][i] - ydiff;
                            w.cont[0][i] = y[i];
                            w.cont[1][i] = ydiff;
                            w.cont[2][i] = bspl;
                            w.cont[3][i] = ydiff - h * w.k[6][i] - bspl;
                            let mut d = 0.0;
                            for j in 0..7 {
                                d += DP_D[j] * w.k[j][i];
                            }
                            w.cont[4][i] = h * d;
                        }
                        let cont = &w.cont;
                        let y_new = w.y_new.clone();
                        self.emit(t, h, t_new, &y_new, |theta, out| {
                            let theta1 = 1.0 - theta;
                            for i in 0..out.len() {
                                out[i] = cont[0][i]
                                    + theta
                                        * (cont[1][i]
                                            + theta1
                                                * (cont[2][i]
                                                    + theta * (cont[3][i] + theta1 * cont[4][i])));
                            }
                        })?;
                        self.log.accepted += 1;
                        self.log.step_sizes.push(h);
                        self.log.max_stages = 7;
                        std::mem::swap(&mut y, &mut w.y_new);
                        w.k.swap(0, 6);
                        t = t_new;

                        let mut fac = fac11 / facold.powf(DP_BETA);
                        fac = (fac / safe).clamp(1.0 / DP_FAC_MAX, 1.0 / DP_FAC_MIN);
                        let mut h_new = h / fac;
                        if last_rejected {
                            h_new = h_new.min(h);
                        }
                        facold = err.max(1e-4);
                        last_rejected = false;
                        h = h_new.min(h_max);
                    }
                }
            }
        }
        Ok(())
    }

    // ---- Runge–Kutta–Chebyshev (second order, damped) ----

    /// Gershgorin bound on the Jacobian spectrum at the state last handed to
    /// the assembler.
    fn spectral_radius(&self) -> f64 {
        let r = self.assembler.densities();
        let (right, left) = self.assembler.kernel_sums();
        let n = r.len();
        let scale = n as f64 / self.mass;
        let phi = &self.spec.diffusion;
        let coupling: Vec<f64> = r
            .iter()
            .map(|&rho| scale * scale * local_slope(|x| phi.evaluate(x), rho) * rho * rho)
            .collect();
        let diffusive = coupling
            .windows(2)
            .map(|w| 2.0 * (w[0] + w[1]))
            .fold(0.0, f64::max);
        let vel = &self.spec.velocity;
        let r2_max = r.iter().fold(0.0_f64, |a, &x| a.max(x * x));
        let s_max = right
            .iter()
            .zip(left)
            .fold(0.0_f64, |a, (p, q)| a.max(p.abs() + q.abs()));
        let nonlocal = 2.0 * vel.lipschitz_bound() * r2_max * s_max
            + 4.0 * self.mass * self.spec.kernel.bound() * vel.v_max();
        RKC_RADIUS_SAFETY * (diffusive + nonlocal)
    }

    /// Worst case of [`Self::spectral_radius`] over the diffusion's range:
    /// a datum sitting where `φ′` vanishes must not hide later stiffness.
    fn stiffness_bound(&self) -> f64 {
        let r = self.assembler.densities();
        let scale = r.len() as f64 / self.mass;
        let r2_max = r.iter().fold(0.0_f64, |a, &x| a.max(x * x));
        let diffusive = 4.0 * scale * scale * self.spec.diffusion.lipschitz_bound() * r2_max;
        self.spectral_radius().max(RKC_RADIUS_SAFETY * diffusive)
    }

    fn run_chebyshev(&mut self) -> Result<()> {
        let t_final = self.config.t_final;
        let (h_min, h_max) = (
            self.config.resolved_min_step(),
            self.config.resolved_max_step(),
        );
        let safe = self.config.safety_factor;
        let len = self.y0.len();
        let mut y = self.y0.clone();
        let mut t = self.t0;
        let mut f0 = vec![0.0; len];
        let mut f1 = vec![0.0; len];
        let mut stage_prev = vec![0.0; len];
        let mut stage_prev2 = vec![0.0; len];
        let mut stage = vec![0.0; len];
        let mut f_stage = vec![0.0; len];
        self.rhs(&y.clone(), &mut f0)?;
        let mut radius = self.spectral_radius();
        let mut h = self.initial_step();
        let mut last_rejected = false;
        let mut coefficients = ChebyshevCoefficients::default();

        while t < t_final {
            let mut last = h >= t_final - t;
            if last {
                h = t_final - t;
            }
            let mut stages = chebyshev_stages(h, radius);
            if stages > RKC_MAX_STAGES {
                stages = RKC_MAX_STAGES;
                let limit = RKC_STABILITY_PER_STAGE2 * (stages * stages) as f64 / radius;
                if limit < h {
                    h = limit;
                    last = false;
                }
            }
            if h < h_min && !last {
                return Err(self.underflow(t, h, &y));
            }
            coefficients.prepare(stages);
            let c = &coefficients;

            // Y₁
            let mut failed = false;
            for i in 0..len {
                stage_prev2[i] = y[i];
                stage_prev[i] = y[i] + c.mu_tilde[1] * h * f0[i];
            }
            pin(&mut stage_prev, &self.y0);
            for j in 2..=stages {
                self.log.rhs_evaluations += 1;
                if self
                    .assembler
                    .evaluate(&stage_prev, self.mass, self.spec, &mut f_stage)
                    .is_err()
                {
                    failed = true;
                    break;
                }
                let (mu, nu, mt, gt) = (c.mu[j], c.nu[j], c.mu_tilde[j], c.gamma_tilde[j]);
                let keep = 1.0 - mu - nu;
                for i in 0..len {
                    stage[i] = keep * y[i]
                        + mu * stage_prev[i]
                        + nu * stage_prev2[i]
                        + mt * h * f_stage[i]
                        + gt * h * f0[i];
                }
                pin(&mut stage, &self.y0);
                std::mem::swap(&mut stage_prev2, &mut stage_prev);
                std::mem::swap(&mut stage_prev, &mut stage);
            }
            // stage_prev now holds Y_s
            let mut err = f64::INFINITY;
            if !failed {
                self.log.rhs_evaluations += 1;
                if self
                    .assembler
                    .evaluate(&stage_prev, self.mass, self.spec, &mut f1)
                    .is_err()
                {
                    failed = true;
                } else {
                    let mut e_max = 0.0_f64;
                    for i in 0..len {
                        let est = 0.8 * (y[i] - stage_prev[i]) + 0.4 * h * (f0[i] + f1[i]);
                        e_max = e_max.max(est.abs());
                    }
                    err = e_max / self.config.abs_tolerance;
                }
            }
            if failed {
                self.log.rejected += 1;
                last_rejected = true;
                h *= 0.5;
                continue;
            }
            let fac = (safe * err.powf(-1.0 / 3.0)).clamp(0.1, 10.0);
            if err > 1.0 {
                self.log.rejected += 1;
                last_rejected = true;
                h *= fac.min(0.5);
                continue;
            }
            if min_gap(&stage_prev).0 < self.gap_floor {
                self.log.rejected += 1;
                self.log.gap_rejections += 1;
                last_rejected = true;
                h *= 0.5;
                continue;
            }
            let t_new = if last { t_final } else { t + h };
            {
                let (y_old, y_new, fa, fb) = (&y, &stage_prev, &f0, &f1);
                let y_new_owned = y_new.clone();
                self.emit(t, h, t_new, &y_new_owned, |theta, out| {
                    hermite(theta, h, y_old, y_new, fa, fb, out)
                })?;
            }
            self.log.accepted += 1;
            self.log.step_sizes.push(h);
            self.log.max_stages = self.log.max_stages.max(stages);
            std::mem::swap(&mut y, &mut stage_prev);
            std::mem::swap(&mut f0, &mut f1);
            // the assembler's buffers now describe the new state
            radius = self.spectral_radius();
            t = t_new;
            let mut h_new = h * fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            h = h_new.min(h_max);
        }
        Ok(())
    }
}

fn pin(y: &mut [f64], reference: &[f64]) {
    let last = y.len() - 1;
    y[0] = reference[0];
    y[last] = reference[last];
}

fn min_gap(y: &[f64]) -> (f64, usize) {
    y.windows(2)
        .enumerate()
        .fold((f64::INFINITY, 0), |(g, k), (i, w)| {
            let d = w[1] - w[0];
            if d < g || d.is_nan() {
                (d, i)
            } else {
                (g, k)
            }
        })
}

/// Larger one-sided secant slope of `f` at `x`, so kinks count at their
/// steeper side.
fn local_slope(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-3 * x.max(1e-3);
    let fx = f(x);
    let up = (f(x + h) - fx) / h;
    let down = if x - h >= 0.0 {
        (fx - f(x - h)) / h
    } else {
        up
    };
    up.abs().max(down.abs())
}

fn hermite(theta: f64, h: f64, y0: &[f64], y1: &[f64], f0: &[f64], f1: &[f64], out: &mut [f64]) {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    for i in 0..out.len() {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
}

struct DpWork {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    cont: [Vec<f64>; 5],
}

impl DpWork {
    fn new(len: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; len]),
            y_stage: vec![0.0; len],
            y_new: vec![0.0; len],
            cont: std::array::from_fn(|_| vec![0.0; len]),
        }
    }
}

const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const DP_D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const DP_BETA: f64 = 0.04;
const DP_EXPO1: f64 = 0.2 - DP_BETA * 0.75;
const DP_FAC_MIN: f64 = 0.2;
const DP_FAC_MAX: f64 = 10.0;

const RKC_DAMPING: f64 = 2.0 / 13.0;
const RKC_MAX_STAGES: usize = 250;
// stability interval ≈ 0.653 s² for the damped second-order recursion
const RKC_STABILITY_PER_STAGE2: f64 = 0.65;
const RKC_RADIUS_SAFETY: f64 = 1.1;

fn chebyshev_stages(h: f64, radius: f64) -> usize {
    let s = 1 + (1.0 + 1.54 * h * radius).sqrt().ceil() as usize;
    s.max(2)
}

#[derive(Default)]
struct ChebyshevCoefficients {
    stages: usize,
    mu: Vec<f64>,
    nu: Vec<f64>,
    mu_tilde: Vec<f64>,
    gamma_tilde: Vec<f64>,
}

impl ChebyshevCoefficients {
    fn prepare(&mut self, s: usize) {
        if self.stages == s {
            return;
        }
        self.stages = s;
        let w0 = 1.0 + RKC_DAMPING / (s * s) as f64;
        let mut t = vec![0.0; s + 1];
        let mut dt = vec![0.0; s + 1];
        let mut ddt = vec![0.0; s + 1];
        t[0] = 1.0;
        t[1] = w0;
        dt[1] = 1.0;
        for j in 2..=s {
            t[j] = 2.0 * w0 * t[j - 1] - t[j - 2];
            dt[j] = 2.0 * t[j - 1] + 2.0 * w0 * dt[j - 1] - dt[j - 2];
            ddt[j] = 4.0 * dt[j - 1] + 2.0 * w0 * ddt[j - 1] - ddt[j - 2];
        }
        let w1 = dt[s] / ddt[s];
        let mut b = vec![0.0; s + 1];
        for j in 2..=s {
            b[j] = ddt[j] / (dt[j] * dt[j]);
        }
        b[0] = b[2];
        b[1] = b[2];
        let a: Vec<f64> = (0..=s).map(|j| 1.0 - b[j] * t[j]).collect();
        self.mu = vec![0.0; s + 1];
        self.nu = vec![0.0; s + 1];
        self.mu_tilde = vec![0.0; s + 1];
        self.gamma_tilde = vec![0.0; s + 1];
        self.mu_tilde[1] = b[1] * w1;
        for j in 2..=s {
            self.mu[j] = 2.0 * w0 * b[j] / b[j - 1];
            self.nu[j] = -b[j] / b[j - 2];
            self.mu_tilde[j] = 2.0 * w1 * b[j] / b[j - 1];
            self.gamma_tilde[j] = -a[j - 1] * self.mu_tilde[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionLaw, InteractionKernel, VelocityLaw};

    fn heat_like(n: usize) -> (ModelSpec, ParticleState) {
        let spec = ModelSpec::new(
            DiffusionLaw::porous_medium(1.0).unwrap(),
            VelocityLaw::saturating(1.0).unwrap(),
            InteractionKernel::none(),
            1.0,
            0.7,
        )
        .unwrap();
        let x: Vec<f64> = (0..=n)
            .map(|i| {
                let u = i as f64 / n as f64;
                u + 0.05 * (std::f64::consts::PI * u).sin() * (1.0 - u) * u
            })
            .collect();
        (spec, ParticleState::new(0.0, x, 0.7).unwrap())
    }

    #[test]
    fn dormand_prince_tableau_is_consistent() {
        for (s, row) in DP_A.iter().enumerate() {
            let c: f64 = row.iter().sum();
            let expected = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0][s];
            assert!((c - expected).abs() < 1e-14, "row {s}");
        }
        assert!(DP_E.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn chebyshev_coefficients_are_first_order_consistent() {
        // each stage is an affine combination with weights summing to one
        let mut c = ChebyshevCoefficients::default();
        for s in [2, 3, 10, 57, 250] {
            c.prepare(s);
            for j in 2..=s {
                let keep = 1.0 - c.mu[j] - c.nu[j];
                assert!((keep + c.mu[j] + c.nu[j] - 1.0).abs() < 1e-14);
                assert!(c.mu_tilde[j].is_finite() && c.gamma_tilde[j].is_finite());
            }
        }
    }

    #[test]
    fn chebyshev_solves_linear_decay() {
        // scalar y' = −λ y through the stage recursion, with λh beyond the
        // explicit Euler limit
        let mut c = ChebyshevCoefficients::default();
        let lambda = 1000.0;
        let h = 0.01;
        let s = chebyshev_stages(h, lambda);
        c.prepare(s);
        let y0 = 1.0_f64;
        let f = |y: f64| -lambda * y;
        let mut prev2 = y0;
        let mut prev = y0 + c.mu_tilde[1] * h * f(y0);
        for j in 2..=s {
            let next = (1.0 - c.mu[j] - c.nu[j]) * y0
                + c.mu[j] * prev
                + c.nu[j] * prev2
                + c.mu_tilde[j] * h * f(prev)
                + c.gamma_tilde[j] * h * f(y0);
            prev2 = prev;
            prev = next;
        }
        assert!(prev.abs() < 1.0, "amplification {prev}");
    }

    #[test]
    fn both_methods_agree_on_diffusion() {
        let (spec, state) = heat_like(40);
        let mut cfg = IntegratorConfig::new(0.05).with_snapshots(3);
        cfg.abs_tolerance = 1e-10;
        cfg.method = Method::DormandPrince;
        let a = integrate(&state, &spec, &cfg).unwrap();
        cfg.method = Method::Chebyshev;
        let b = integrate(&state, &spec, &cfg).unwrap();
        let diff = a
            .last()
            .positions()
            .iter()
            .zip(b.last().positions())
            .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(diff < 1e-7, "{diff}");
        assert_eq!(a.snapshots.len(), 3);
        assert_eq!(b.last().time, 0.05);
    }

    #[test]
    fn config_validation() {
        let mut cfg = IntegratorConfig::new(1.0);
        assert!(cfg.validate().is_ok());
        cfg.safety_factor = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = IntegratorConfig::new(1.0);
        cfg.min_step = Some(0.5);
        assert!(cfg.validate().is_err());
        let mut cfg = IntegratorConfig::new(1.0);
        cfg.snapshot_times = vec![0.0, 0.5, 0.4];
        assert!(cfg.validate().is_err());
        assert!(IntegratorConfig::new(-1.0).validate().is_err());
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let p = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t * t * t;
        let dp = |t: f64| 2.0 - 2.0 * t + 1.5 * t * t;
        let (t0, h) = (0.3, 0.7);
        let mut out = [0.0];
        hermite(
            0.4,
            h,
            &[p(t0)],
            &[p(t0 + h)],
            &[dp(t0)],
            &[dp(t0 + h)],
            &mut out,
        );
        assert!((out[0] - p(t0 + 0.4 * h)).abs() < 1e-14);
    }
}
