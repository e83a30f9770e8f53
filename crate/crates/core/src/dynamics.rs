//! Right-hand side of the particle system.
//!
//! With `Δz = σ/N` the interior velocities are
//!
//! ```text
//! ẋᵢ = (φ(R_{i−1}) − φ(Rᵢ)) / Δz − Δz [ v(Rᵢ) Σ_{j>i} K'(xᵢ − xⱼ) + v(R_{i−1}) Σ_{j<i} K'(xᵢ − xⱼ) ]
//! ```
//!
//! and both endpoints are at rest.

use std::sync::Arc;

use rayon::prelude::*;

use crate::atomization::ParticleState;
use crate::error::{Error, Result};
use crate::model::{KernelShape, ModelSpec};

/// Per-particle velocity split into its two mechanisms.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub total: Vec<f64>,
    pub diffusive: Vec<f64>,
    pub nonlocal: Vec<f64>,
}

/// How the one-sided kernel sums are accumulated. Both walk `j` in
/// ascending order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Summation {
    #[default]
    Ordered,
    /// Neumaier compensation, for very large particle counts.
    Compensated,
}

/// Reusable workspace for velocity evaluation.
///
/// The serial path visits each unordered pair once and feeds `K'(xᵢ − xⱼ)`
/// to both one-sided sums. The parallel path evaluates every row on its own
/// and doubles the kernel calls; because `K'` is odd and the row order is the
/// same, both paths produce bitwise-identical sums.
pub struct ForceAssembler {
    summation: Summation,
    pool: Option<Arc<rayon::ThreadPool>>,
    densities: Vec<f64>,
    right: Vec<f64>,
    left: Vec<f64>,
    right_carry: Vec<f64>,
    left_carry: Vec<f64>,
}

impl Default for ForceAssembler {
    fn default() -> Self {
        Self::serial(Summation::Ordered)
    }
}

impl ForceAssembler {
    pub fn serial(summation: Summation) -> Self {
        Self {
            summation,
            pool: None,
            densities: Vec::new(),
            right: Vec::new(),
            left: Vec::new(),
            right_carry: Vec::new(),
            left_carry: Vec::new(),
        }
    }

    /// `workers ≤ 1` selects the serial path.
    pub fn with_workers(summation: Summation, workers: usize) -> Result<Self> {
        let mut assembler = Self::serial(summation);
        if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::IntegratorConfig(format!("thread pool: {e}")))?;
            assembler.pool = Some(Arc::new(pool));
        }
        Ok(assembler)
    }

    pub fn summation(&self) -> Summation {
        self.summation
    }

    /// Cell densities from the last evaluation.
    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    /// One-sided kernel sums `Σ_{j>i}` and `Σ_{j<i}` from the last evaluation.
    pub fn kernel_sums(&self) -> (&[f64], &[f64]) {
        (&self.right, &self.left)
    }

    /// Writes the total velocity into `out` (length `N + 1`).
    pub fn evaluate(
        &mut self,
        positions: &[f64],
        mass: f64,
        spec: &ModelSpec,
        out: &mut [f64],
    ) -> Result<()> {
        self.evaluate_into(positions, mass, spec, out, None)
    }

    pub fn evaluate_parts(
        &mut self,
        positions: &[f64],
        mass: f64,
        spec: &ModelSpec,
    ) -> Result<VelocityField> {
        let len = positions.len();
        let mut total = vec![0.0; len];
        let mut diffusive = vec![0.0; len];
        let mut nonlocal = vec![0.0; len];
        self.evaluate_into(
            positions,
            mass,
            spec,
            &mut total,
            Some((&mut diffusive, &mut nonlocal)),
        )?;
        Ok(VelocityField {
            total,
            diffusive,
            nonlocal,
        })
    }

    fn evaluate_into(
        &mut self,
        positions: &[f64],
        mass: f64,
        spec: &ModelSpec,
        out: &mut [f64],
        mut parts: Option<(&mut [f64], &mut [f64])>,
    ) -> Result<()> {
        let len = positions.len();
        if len < 2 {
            return Err(Error::CorruptState("fewer than two particles".into()));
        }
        if out.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                found: out.len(),
            });
        }
        let n = len - 1;
        let nf = n as f64;

        self.densities.clear();
        self.densities
            .extend(positions.windows(2).map(|w| mass / (nf * (w[1] - w[0]))));
        if let Some(i) = self
            .densities
            .iter()
            .position(|r| !(*r > 0.0 && r.is_finite()))
        {
            return Err(Error::CorruptState(format!(
                "cell {i} has gap {}",
                positions[i + 1] - positions[i]
            )));
        }

        self.kernel_pass(positions, spec);

        let dz = mass / nf;
        let inv_dz = nf / mass;
        let phi = &spec.diffusion;
        let vel = &spec.velocity;
        out[0] = 0.0;
        out[n] = 0.0;
        let mut phi_left = phi.evaluate(self.densities[0]);
        let mut v_left = vel.evaluate(self.densities[0]);
        for i in 1..n {
            let r = self.densities[i];
            let phi_here = phi.evaluate(r);
            let v_here = vel.evaluate(r);
            let d = (phi_left - phi_here) * inv_dz;
            let nl = -dz * (v_here * self.right[i] + v_left * self.left[i]);
            let total = d + nl;
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    what: "velocity",
                    index: i,
                });
            }
            out[i] = total;
            if let Some((diff, nonl)) = parts.as_mut() {
                diff[i] = d;
                nonl[i] = nl;
            }
            phi_left = phi_here;
            v_left = v_here;
        }
        if let Some((diff, nonl)) = parts {
            diff[0] = 0.0;
            diff[n] = 0.0;
            nonl[0] = 0.0;
            nonl[n] = 0.0;
        }
        Ok(())
    }

    fn kernel_pass(&mut self, positions: &[f64], spec: &ModelSpec) {
        let len = positions.len();
        self.right.clear();
        self.right.resize(len, 0.0);
        self.left.clear();
        self.left.resize(len, 0.0);
        match spec.kernel.shape() {
            KernelShape::None => {}
            KernelShape::Gaussian { strength } => {
                let two_s = 2.0 * strength;
                self.pairs(positions, move |d: f64| two_s * d * (-d * d).exp());
            }
            KernelShape::Custom { derivative, .. } => {
                let derivative = derivative.clone();
                self.pairs(positions, move |d: f64| derivative(d));
            }
        }
    }

    fn pairs<F>(&mut self, x: &[f64], kprime: F)
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let len = x.len();
        match (&self.pool, self.summation) {
            (None, Summation::Ordered) => {
                let right = &mut self.right;
                let left = &mut self.left;
                for i in 0..len {
                    let xi = x[i];
                    let mut acc = 0.0;
                    for j in i + 1..len {
                        let k = kprime(xi - x[j]);
                        acc += k;
                        left[j] -= k;
                    }
                    right[i] = acc;
                }
            }
            (None, Summation::Compensated) => {
                self.right_carry.clear();
                self.right_carry.resize(len, 0.0);
                self.left_carry.clear();
                self.left_carry.resize(len, 0.0);
                for i in 0..len {
                    let xi = x[i];
                    for j in i + 1..len {
                        let k = kprime(xi - x[j]);
                        neumaier(&mut self.right[i], &mut self.right_carry[i], k);
                        neumaier(&mut self.left[j], &mut self.left_carry[j], -k);
                    }
                }
                for i in 0..len {
                    self.right[i] += self.right_carry[i];
                    self.left[i] += self.left_carry[i];
                }
            }
            (Some(pool), summation) => {
                let compensated = summation == Summation::Compensated;
                let row = |i: usize| -> (f64, f64) {
                    let xi = x[i];
                    let one_side = |range: std::ops::Range<usize>| {
                        let mut s = 0.0;
                        let mut c = 0.0;
                        for j in range {
                            let k = kprime(xi - x[j]);
                            if compensated {
                                neumaier(&mut s, &mut c, k);
                            } else {
                                s += k;
                            }
                        }
                        s + c
                    };
                    (one_side(i + 1..len), one_side(0..i))
                };
                let right = &mut self.right;
                let left = &mut self.left;
                pool.install(|| {
                    right
                        .par_iter_mut()
                        .zip(left.par_iter_mut())
                        .enumerate()
                        .with_min_len(16)
                        .for_each(|(i, (r, l))| {
                            let (a, b) = row(i);
                            *r = a;
                            *l = b;
                        });
                });
            }
        }
    }
}

#[inline]
fn neumaier(sum: &mut f64, carry: &mut f64, value: f64) {
    let t = *sum + value;
    if sum.abs() >= value.abs() {
        *carry += (*sum - t) + value;
    } else {
        *carry += (value - t) + *sum;
    }
    *sum = t;
}

/// Velocity of every particle, with its diffusive and nonlocal parts.
pub fn assemble_velocity(state: &ParticleState, spec: &ModelSpec) -> Result<VelocityField> {
    ForceAssembler::default().evaluate_parts(state.positions(), state.mass(), spec)
}

/// `Ṙᵢ = −(N Rᵢ² / σ)(ẋ_{i+1} − ẋᵢ)`.
pub fn density_rate(state: &ParticleState, field: &VelocityField) -> Result<Vec<f64>> {
    let x = state.positions();
    if field.total.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: field.total.len(),
        });
    }
    let n = state.cells() as f64;
    let sigma = state.mass();
    Ok(x.windows(2)
        .zip(field.total.windows(2))
        .map(|(p, v)| {
            let r = sigma / (n * (p[1] - p[0]));
            -(n * r * r / sigma) * (v[1] - v[0])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionLaw, InteractionKernel, VelocityLaw};

    fn gaussian_spec() -> ModelSpec {
        ModelSpec::new(
            DiffusionLaw::porous_medium(1.0).unwrap(),
            VelocityLaw::saturating(1.0).unwrap(),
            InteractionKernel::gaussian(1.0, 1.0).unwrap(),
            1.0,
            0.7,
        )
        .unwrap()
    }

    fn state(x: &[f64], mass: f64) -> ParticleState {
        ParticleState::new(0.0, x.to_vec(), mass).unwrap()
    }

    #[test]
    fn endpoints_are_at_rest() {
        let s = state(&[0.0, 0.2, 0.35, 0.6, 0.8, 1.0], 0.7);
        let f = assemble_velocity(&s, &gaussian_spec()).unwrap();
        assert_eq!(f.total[0], 0.0);
        assert_eq!(f.total[5], 0.0);
        for i in 1..5 {
            assert_eq!(f.total[i], f.diffusive[i] + f.nonlocal[i]);
        }
    }

    #[test]
    fn uniform_state_without_kernel_is_still() {
        let spec = ModelSpec::new(
            DiffusionLaw::porous_medium(1.0).unwrap(),
            VelocityLaw::saturating(1.0).unwrap(),
            InteractionKernel::none(),
            1.0,
            0.7,
        )
        .unwrap();
        let x: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let f = assemble_velocity(&state(&x, 0.7), &spec).unwrap();
        assert!(f.total.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn density_rate_matches_closed_form() {
        // R_i = 1 with N = 10 and σ = 1 needs gaps of 0.1
        let x: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let s = state(&x, 1.0);
        let mut total = vec![0.0; 11];
        total[4] = 0.05;
        total[5] = 0.15;
        let field = VelocityField {
            total,
            diffusive: vec![0.0; 11],
            nonlocal: vec![0.0; 11],
        };
        let rates = density_rate(&s, &field).unwrap();
        assert!((rates[4] + 1.0).abs() < 1e-12, "{}", rates[4]);
        assert!(rates[3] < 0.0 && rates[5] > 0.0);
        let short = VelocityField {
            total: vec![0.0; 3],
            diffusive: vec![],
            nonlocal: vec![],
        };
        assert!(matches!(
            density_rate(&s, &short),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn attraction_pulls_clusters_together() {
        let spec = ModelSpec::new(
            DiffusionLaw::zero(),
            VelocityLaw::constant(1.0).unwrap(),
            InteractionKernel::gaussian(1.0, 1.0).unwrap(),
            1.0,
            1.0,
        )
        .unwrap();
        let f = assemble_velocity(&state(&[0.0, 0.2, 0.8, 1.0], 1.0), &spec).unwrap();
        assert!(f.total[1] > 0.0);
        assert!(f.total[2] < 0.0);
        assert_eq!(f.total[1], -f.total[2]);
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let x: Vec<f64> = (0..=200)
            .map(|i| {
                let t = i as f64 / 200.0;
                t + 0.02 * (6.0 * t).sin() * t * (1.0 - t)
            })
            .collect();
        let spec = gaussian_spec();
        let mut serial = ForceAssembler::serial(Summation::Ordered);
        let mut parallel = ForceAssembler::with_workers(Summation::Ordered, 3).unwrap();
        let a = serial.evaluate_parts(&x, 0.7, &spec).unwrap();
        let b = parallel.evaluate_parts(&x, 0.7, &spec).unwrap();
        assert_eq!(a, b);

        let mut serial = ForceAssembler::serial(Summation::Compensated);
        let mut parallel = ForceAssembler::with_workers(Summation::Compensated, 4).unwrap();
        let c = serial.evaluate_parts(&x, 0.7, &spec).unwrap();
        let d = parallel.evaluate_parts(&x, 0.7, &spec).unwrap();
        for (p, q) in c.total.iter().zip(&a.total) {
            assert!((p - q).abs() <= 1e-13 * q.abs().max(1.0));
        }
        // compensated rows carry their own correction; allow rounding only
        for (p, q) in c.total.iter().zip(&d.total) {
            assert!((p - q).abs() <= 1e-13 * q.abs().max(1.0));
        }
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        let mut s = 0.0;
        let mut c = 0.0;
        for v in [1.0, 1e100, 1.0, -1e100] {
            neumaier(&mut s, &mut c, v);
        }
        assert_eq!(s + c, 2.0);
    }
}
