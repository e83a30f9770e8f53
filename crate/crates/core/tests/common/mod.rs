#![allow(dead_code)]

use aggdiff::{
    DiffusionLaw, DiscreteDensity, InitialDatum, IntegratorConfig, InteractionKernel, ModelSpec,
    ParticleState, VelocityLaw,
};
use rand::Rng;

pub const MASS: f64 = 0.7;

/// Porous-medium diffusion, `v = (1 − ρ)₊`, Gaussian attraction of unit
/// strength, constant datum 0.7 on `[0, 1]`.
pub fn confronto_spec(epsilon: f64) -> ModelSpec {
    ModelSpec::new(
        DiffusionLaw::porous_medium(epsilon).unwrap(),
        VelocityLaw::saturating(1.0).unwrap(),
        InteractionKernel::gaussian(1.0, 1.0).unwrap(),
        1.0,
        MASS,
    )
    .unwrap()
}

pub fn confronto_datum() -> InitialDatum {
    InitialDatum::constant(MASS, 1.0).unwrap()
}

pub fn zero_spec(length: f64, mass: f64) -> ModelSpec {
    ModelSpec::new(
        DiffusionLaw::zero(),
        VelocityLaw::saturating(1.0).unwrap(),
        InteractionKernel::none(),
        length,
        mass,
    )
    .unwrap()
}

pub fn config(t_final: f64, snapshots: usize) -> IntegratorConfig {
    IntegratorConfig::new(t_final).with_snapshots(snapshots)
}

/// Ordered positions on `[0, length]` whose gaps vary by at most `spread`
/// around their mean.
pub fn random_positions(rng: &mut impl Rng, cells: usize, length: f64, spread: f64) -> Vec<f64> {
    let gaps: Vec<f64> = (0..cells)
        .map(|_| 1.0 + spread * rng.gen::<f64>())
        .collect();
    let total: f64 = gaps.iter().sum();
    let mut x = Vec::with_capacity(cells + 1);
    let mut acc = 0.0;
    x.push(0.0);
    for g in &gaps[..cells - 1] {
        acc += g / total * length;
        x.push(acc);
    }
    x.push(length);
    x
}

pub fn random_state(rng: &mut impl Rng, cells: usize, mass: f64) -> ParticleState {
    ParticleState::new(0.0, random_positions(rng, cells, 1.0, 0.4), mass).unwrap()
}

/// Which closed-form laws the reference below should use.
#[derive(Clone, Copy, Debug)]
pub enum Law {
    PorousMedium(f64),
    TwoPoint(f64, f64),
    StronglyDegenerate(f64),
}

impl Law {
    pub fn build(self) -> DiffusionLaw {
        match self {
            Law::PorousMedium(e) => DiffusionLaw::porous_medium(e).unwrap(),
            Law::TwoPoint(e, m) => DiffusionLaw::two_point(e, m).unwrap(),
            Law::StronglyDegenerate(e) => DiffusionLaw::strongly_degenerate(e).unwrap(),
        }
    }

    pub fn phi(self, rho: f64) -> f64 {
        match self {
            Law::PorousMedium(e) => 0.5 * e * rho * rho,
            Law::TwoPoint(e, m) => {
                let r = rho.min(1.0);
                e * r.powf(m) / m - e * r.powf(m + 1.0) / (m + 1.0)
            }
            Law::StronglyDegenerate(e) => {
                if rho < 0.4 {
                    0.5 * e * rho * rho
                } else if rho < 0.6 {
                    2.0 * e / 25.0
                } else {
                    2.0 * e / 25.0 + 0.5 * e * (rho - 0.6) * (rho - 0.6)
                }
            }
        }
    }
}

/// Term-by-term velocities straight from the scheme, with the diffusion,
/// mobility and Gaussian kernel written out by hand.
pub fn reference_velocity(
    x: &[f64],
    mass: f64,
    law: Law,
    rho_max: f64,
    strength: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() - 1;
    let nf = n as f64;
    let rho = |i: usize| mass / (nf * (x[i + 1] - x[i]));
    let vel = |r: f64| (1.0 - r / rho_max).max(0.0);
    let dk = |d: f64| 2.0 * strength * d * (-d * d).exp();
    let mut total = vec![0.0; n + 1];
    let mut scale = vec![0.0; n + 1];
    for i in 1..n {
        let diffusive = nf / mass * (law.phi(rho(i - 1)) - law.phi(rho(i)));
        let mut right = 0.0;
        for j in i + 1..=n {
            right += dk(x[i] - x[j]);
        }
        let mut left = 0.0;
        for j in 0..i {
            left += dk(x[i] - x[j]);
        }
        let nonlocal = -mass / nf * (vel(rho(i)) * right + vel(rho(i - 1)) * left);
        total[i] = diffusive + nonlocal;
        scale[i] = diffusive.abs() + nonlocal.abs();
    }
    (total, scale)
}

/// `max |a − b| / scale` over components with nonzero scale.
pub fn max_relative_error(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(scale)
        .filter(|(_, s)| **s > 0.0)
        .map(|((p, q), s)| (p - q).abs() / s)
        .fold(0.0, f64::max)
}

pub fn scaled(breakpoints: Vec<f64>, values: Vec<f64>, mass: f64) -> DiscreteDensity {
    let d = DiscreteDensity::new(breakpoints.clone(), values.clone()).unwrap();
    let k = mass / d.mass();
    DiscreteDensity::new(breakpoints, values.into_iter().map(|v| v * k).collect()).unwrap()
}

pub fn random_density(rng: &mut impl Rng, lo: f64, hi: f64, mass: f64) -> DiscreteDensity {
    let cells = rng.gen_range(1..30);
    let mut cuts: Vec<f64> = (0..cells - 1).map(|_| rng.gen_range(lo..hi)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut b = vec![lo];
    b.extend(cuts);
    b.push(hi);
    b.dedup();
    let values = (0..b.len() - 1).map(|_| rng.gen_range(0.05..2.0)).collect();
    scaled(b, values, mass)
}

/// Midpoint rule on a uniform grid of mass levels, walking both quantile
/// functions cell by cell.
pub fn brute_force_w1(a: &DiscreteDensity, b: &DiscreteDensity, points: usize) -> f64 {
    struct Walker<'a> {
        d: &'a DiscreteDensity,
        cell: usize,
        below: f64,
    }
    impl Walker<'_> {
        fn at(&mut self, z: f64) -> f64 {
            let (x, v) = (self.d.breakpoints(), self.d.values());
            while self.cell + 1 < v.len()
                && self.below + v[self.cell] * (x[self.cell + 1] - x[self.cell]) < z
            {
                self.below += v[self.cell] * (x[self.cell + 1] - x[self.cell]);
                self.cell += 1;
            }
            x[self.cell] + (z - self.below) / v[self.cell]
        }
    }
    let mass = a.mass();
    let h = mass / points as f64;
    let mut wa = Walker {
        d: a,
        cell: 0,
        below: 0.0,
    };
    let mut wb = Walker {
        d: b,
        cell: 0,
        below: 0.0,
    };
    let mut sum = 0.0;
    for k in 0..points {
        let z = (k as f64 + 0.5) * h;
        sum += (wa.at(z) - wb.at(z)).abs();
    }
    sum * h
}
