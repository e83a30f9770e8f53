use crate::error::{Error, Result};
use crate::model::{InitialDatum, ModelSpec};

/// Ordered particle positions `0 = x₀ < x₁ < … < x_N = ℓ` at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub time: f64,
    positions: Vec<f64>,
    mass: f64,
}

impl ParticleState {
    /// Builds a state after checking ordering and finiteness. Endpoints are
    /// taken as given; they are not required to sit at `0` and `ℓ`, which
    /// lets fixtures use translated windows.
    pub fn new(time: f64, positions: Vec<f64>, mass: f64) -> Result<Self> {
        if positions.len() < 3 {
            return Err(Error::CorruptState(format!(
                "need at least 3 particles, got {}",
                positions.len()
            )));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "mass",
                value: mass,
                reason: "must be positive and finite",
            });
        }
        if let Some(index) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "position",
                index,
            });
        }
        if let Some(i) = positions.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::CorruptState(format!(
                "gap {i} is not positive: x[{i}] = {}, x[{}] = {}",
                positions[i],
                i + 1,
                positions[i + 1]
            )));
        }
        Ok(Self {
            time,
            positions,
            mass,
        })
    }

    /// Skips the checks; callers guarantee the invariants.
    pub(crate) fn from_parts(time: f64, positions: Vec<f64>, mass: f64) -> Self {
        Self {
            time,
            positions,
            mass,
        }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Number of cells `N`; there are `N + 1` particles.
    pub fn cells(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.positions.windows(2).map(|w| w[1] - w[0])
    }

    /// Smallest gap and its cell index.
    pub fn min_gap(&self) -> (f64, usize) {
        self.gaps().enumerate().fold(
            (f64::INFINITY, 0),
            |(g, k), (i, d)| if d < g { (d, i) } else { (g, k) },
        )
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps().fold(0.0, f64::max)
    }
}

/// Places `N + 1` particles at equal-mass quantiles `i σ / N` of the datum.
pub fn atomize(datum: &InitialDatum, spec: &ModelSpec, n: usize) -> Result<ParticleState> {
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "particles",
            value: n as f64,
            reason: "need at least 2 cells",
        });
    }
    let ell = spec.domain_length();
    let sigma = spec.mass();
    if (datum.length() - ell).abs() > 1e-12 * ell {
        return Err(Error::DomainMismatch {
            datum: datum.length(),
            declared: ell,
        });
    }
    let total = datum.cumulative(ell);
    if !((total - sigma).abs() <= 1e-10 * sigma) {
        return Err(Error::MassMismatch {
            datum: total,
            declared: sigma,
        });
    }

    let mut positions = Vec::with_capacity(n + 1);
    positions.push(0.0);
    let tolerance = 1e-13 * ell;
    let mut lo = 0.0;
    for i in 1..n {
        let x = match datum.closed_form_quantile(i as f64 / n as f64) {
            Some(x) => x,
            None => {
                let level = total * i as f64 / n as f64;
                let x = invert_cumulative(datum, level, lo, ell, tolerance)?;
                lo = x;
                x
            }
        };
        positions.push(x);
    }
    positions.push(ell);
    ParticleState::new(0.0, positions, sigma)
}

// Isolated zeros of a smooth datum leave the cumulative flat to rounding over
// a window of order (ulp)^(1/3); only wider flat stretches count as plateaus.
const PLATEAU_WIDTH: f64 = 1e-5;

/// Leftmost `x` in `[lo, hi]` with `cumulative(x) ≥ level`, by bisection.
fn invert_cumulative(
    datum: &InitialDatum,
    level: f64,
    mut lo: f64,
    mut hi: f64,
    tolerance: f64,
) -> Result<f64> {
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if datum.cumulative(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // the level is attained on a whole interval when the datum vanishes there
    let probe = (hi + 4.0 * tolerance).min(datum.length());
    if probe > hi && datum.cumulative(probe) <= level && datum.cumulative(hi) >= level {
        let mut right = probe;
        let mut step = 4.0 * tolerance;
        while right < datum.length() && datum.cumulative(right) <= level {
            step *= 2.0;
            right = (hi + step).min(datum.length());
        }
        if right - hi > PLATEAU_WIDTH * datum.length() {
            return Err(Error::Plateau {
                level,
                left: hi,
                right,
            });
        }
    }
    Ok(hi)
}

/// `R_i = σ / (N (x_{i+1} − x_i))` for `i = 0..N−1`.
pub fn local_densities(state: &ParticleState) -> Result<Vec<f64>> {
    let n = state.cells() as f64;
    let sigma = state.mass();
    state
        .gaps()
        .enumerate()
        .map(|(i, g)| {
            if g > 0.0 {
                Ok(sigma / (n * g))
            } else {
                Err(Error::CorruptState(format!(
                    "gap {i} = {g} is not positive"
                )))
            }
        })
        .collect()
}
