//! Piecewise-constant densities and the metrics used to compare them.

use crate::atomization::{local_densities, ParticleState};
use crate::error::{Error, Result};

/// Relative tolerance on mass agreement for metric computations.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// `ρ = Σ Rᵢ χ_[xᵢ, xᵢ₊₁)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDensity {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    mass: f64,
}

impl DiscreteDensity {
    /// Builds a density and records its mass `Σ Rᵢ (xᵢ₊₁ − xᵢ)`.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::LengthMismatch {
                expected: values.len() + 1,
                found: breakpoints.len(),
            });
        }
        if values.is_empty() {
            return Err(Error::CorruptState("density without cells".into()));
        }
        if let Some(i) = breakpoints.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::CorruptState(format!(
                "breakpoint {i} is not increasing"
            )));
        }
        if let Some(i) = values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::CorruptState(format!(
                "cell {i} has value {}",
                values[i]
            )));
        }
        let mass = cell_masses(&breakpoints, &values).sum();
        Ok(Self {
            breakpoints,
            values,
            mass,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    /// Support `[x₀, x_N]`.
    pub fn support(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Value at `x`; zero outside the support, right-continuous inside.
    pub fn evaluate(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x < a || x >= b {
            return 0.0;
        }
        let k = self.breakpoints.partition_point(|&p| p <= x) - 1;
        self.values[k.min(self.values.len() - 1)]
    }

    /// Same density shifted by `delta`.
    pub fn translate(&self, delta: f64) -> Result<Self> {
        Self::new(
            self.breakpoints.iter().map(|x| x + delta).collect(),
            self.values.clone(),
        )
    }
}

fn cell_masses<'a>(x: &'a [f64], v: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    x.windows(2).zip(v).map(|(w, r)| r * (w[1] - w[0]))
}

pub fn reconstruct_density(state: &ParticleState) -> Result<DiscreteDensity> {
    let values = local_densities(state)?;
    DiscreteDensity::new(state.positions().to_vec(), values)
}

/// Quantile map `X : [0, σ] → [x₀, x_N]`, linear between `(zᵢ, xᵢ)` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoInverse {
    mass_breakpoints: Vec<f64>,
    positions: Vec<f64>,
}

impl PseudoInverse {
    pub fn mass_breakpoints(&self) -> &[f64] {
        &self.mass_breakpoints
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn mass(&self) -> f64 {
        *self.mass_breakpoints.last().unwrap()
    }

    /// `X(z)`, clamped to the end positions outside `[0, σ]`.
    pub fn evaluate(&self, z: f64) -> f64 {
        let zs = &self.mass_breakpoints;
        if z <= 0.0 {
            return self.positions[0];
        }
        if z >= self.mass() {
            return *self.positions.last().unwrap();
        }
        let k = zs.partition_point(|&p| p < z).max(1) - 1;
        self.on_cell(k, z)
    }

    #[inline]
    fn on_cell(&self, k: usize, z: f64) -> f64 {
        let (z0, z1) = (self.mass_breakpoints[k], self.mass_breakpoints[k + 1]);
        let (x0, x1) = (self.positions[k], self.positions[k + 1]);
        x0 + (z - z0) * (x1 - x0) / (z1 - z0)
    }
}

/// Pseudo-inverse with mass nodes at the cumulative cell masses.
pub fn pseudo_inverse(density: &DiscreteDensity) -> PseudoInverse {
    let mut z = Vec::with_capacity(density.breakpoints.len());
    z.push(0.0);
    let mut acc = 0.0;
    for m in cell_masses(&density.breakpoints, &density.values) {
        acc += m;
        z.push(acc);
    }
    PseudoInverse {
        mass_breakpoints: z,
        positions: density.breakpoints.clone(),
    }
}

fn check_masses(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > MASS_TOLERANCE * a.abs().max(b.abs()) {
        return Err(Error::MassMismatch {
            datum: a,
            declared: b,
        });
    }
    Ok(())
}

/// `∫₀^σ |X₁ − X₂| dz`, exact for piecewise-linear quantile maps.
pub fn wasserstein1(d1: &DiscreteDensity, d2: &DiscreteDensity) -> Result<f64> {
    check_masses(d1.mass, d2.mass)?;
    let p = pseudo_inverse(d1);
    let mut q = pseudo_inverse(d2);
    // align the totals exactly; they already agree to the mass tolerance
    let scale = p.mass() / q.mass();
    if scale != 1.0 {
        for z in q.mass_breakpoints.iter_mut() {
            *z *= scale;
        }
        *q.mass_breakpoints.last_mut().unwrap() = p.mass();
    }
    Ok(quantile_distance(&p, &q))
}

fn quantile_distance(p: &PseudoInverse, q: &PseudoInverse) -> f64 {
    let (zp, zq) = (&p.mass_breakpoints, &q.mass_breakpoints);
    let (np, nq) = (zp.len() - 1, zq.len() - 1);
    let (mut i, mut j) = (0usize, 0usize);
    let mut a = 0.0;
    let mut fa = p.positions[0] - q.positions[0];
    let mut total = 0.0;
    while i < np && j < nq {
        let b = zp[i + 1].min(zq[j + 1]);
        let fb = if b == zp[i + 1] && b == zq[j + 1] {
            p.positions[i + 1] - q.positions[j + 1]
        } else if b == zp[i + 1] {
            p.positions[i + 1] - q.on_cell(j, b)
        } else {
            p.on_cell(i, b) - q.positions[j + 1]
        };
        total += segment_abs_integral(b - a, fa, fb);
        if b == zp[i + 1] {
            i += 1;
        }
        if b == zq[j + 1] {
            j += 1;
        }
        a = b;
        fa = fb;
    }
    total
}

/// `∫ |f|` over an interval of `width` on which `f` is linear from `p` to `q`.
#[inline]
fn segment_abs_integral(width: f64, p: f64, q: f64) -> f64 {
    if width <= 0.0 {
        return 0.0;
    }
    if p * q >= 0.0 {
        0.5 * width * (p.abs() + q.abs())
    } else {
        0.5 * width * (p * p + q * q) / (p.abs() + q.abs())
    }
}

/// `∫ |ρ₁ − ρ₂| dx` over the common interval.
pub fn l1_distance(d1: &DiscreteDensity, d2: &DiscreteDensity) -> Result<f64> {
    let (a1, b1) = d1.support();
    let (a2, b2) = d2.support();
    let tol = 1e-12 * (b1 - a1).abs().max(b2 - a2).max(1.0);
    if (a1 - a2).abs() > tol || (b1 - b2).abs() > tol {
        return Err(Error::DomainMismatch {
            datum: b1 - a1,
            declared: b2 - a2,
        });
    }
    let (x, y) = (&d1.breakpoints, &d2.breakpoints);
    let (n1, n2) = (d1.cells(), d2.cells());
    let (mut i, mut j) = (0usize, 0usize);
    let mut left = a1;
    let mut total = 0.0;
    loop {
        // interior breakpoints only; the shared right end closes the sweep
        let ri = if i + 1 < n1 { x[i + 1] } else { f64::INFINITY };
        let rj = if j + 1 < n2 { y[j + 1] } else { f64::INFINITY };
        let right = ri.min(rj);
        let end = if right.is_finite() { right } else { b1 };
        total += (d1.values[i] - d2.values[j]).abs() * (end - left);
        if !right.is_finite() {
            break;
        }
        if ri == right {
            i += 1;
        }
        if rj == right {
            j += 1;
        }
        left = right;
    }
    Ok(total)
}

/// Variation of the density extended by zero outside its support.
pub fn total_variation(density: &DiscreteDensity) -> f64 {
    let v = &density.values;
    let inner: f64 = v.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    v[0] + v[v.len() - 1] + inner
}

pub fn min_max(density: &DiscreteDensity) -> (f64, f64) {
    density
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Largest jump between neighbouring cells, `max |Rᵢ₊₁ − Rᵢ|`.
pub fn max_jump(density: &DiscreteDensity) -> f64 {
    density
        .values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
}
