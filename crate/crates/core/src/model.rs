//! Model laws for the aggregation-diffusion problem
//!
//! ```text
//! ∂ₜρ = ∂ₓₓ φ(ρ) + ∂ₓ(ρ v(ρ) K' ∗ ρ)   on [0, ℓ], zero flux at both ends
//! ```
//!
//! Laws are plain value maps together with the constants the scheme and the
//! diagnostics need (Lipschitz bounds, saturation density). Admissibility is
//! checked by dense sampling in [`validate`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Shared scalar map used by custom laws.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Densities up to this value are covered by the preset Lipschitz bounds.
pub const PRESET_DENSITY_RANGE: f64 = 2.0;

/// Sample count used when estimating the kernel constant `L`.
pub const KERNEL_SAMPLES: usize = 10_000;

/// Inflation applied to the sampled supremum when declaring `L`.
pub const KERNEL_BOUND_INFLATION: f64 = 1.05;

fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

#[derive(Clone)]
pub enum DiffusionShape {
    Zero,
    /// `φ(ρ) = ε ρ² / 2`
    PorousMedium {
        epsilon: f64,
    },
    /// `φ(ρ) = ε ρ^m / m − ε ρ^{m+1} / (m+1)` on `[0, 1]`, constant above.
    TwoPoint {
        epsilon: f64,
        exponent: f64,
    },
    /// Porous medium branches glued by a flat plateau on `[2/5, 3/5)`.
    StronglyDegenerate {
        epsilon: f64,
    },
    Custom(ScalarFn),
}

/// Diffusion function `φ`, consumed only through point values.
#[derive(Clone)]
pub struct DiffusionLaw {
    shape: DiffusionShape,
    lipschitz_bound: f64,
    density_range: f64,
}

const SD_LOW: f64 = 2.0 / 5.0;
const SD_HIGH: f64 = 3.0 / 5.0;

impl DiffusionLaw {
    pub fn zero() -> Self {
        Self {
            shape: DiffusionShape::Zero,
            lipschitz_bound: 0.0,
            density_range: f64::INFINITY,
        }
    }

    pub fn porous_medium(epsilon: f64) -> Result<Self> {
        require_positive("epsilon", epsilon)?;
        Ok(Self {
            shape: DiffusionShape::PorousMedium { epsilon },
            lipschitz_bound: epsilon * PRESET_DENSITY_RANGE,
            density_range: PRESET_DENSITY_RANGE,
        })
    }

    pub fn two_point(epsilon: f64, exponent: f64) -> Result<Self> {
        require_positive("epsilon", epsilon)?;
        if !(exponent >= 2.0 && exponent.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "exponent",
                value: exponent,
                reason: "must be at least 2",
            });
        }
        // φ' = ε ρ^{m-1} (1 - ρ) peaks at ρ = (m-1)/m
        let peak = (exponent - 1.0) / exponent;
        let lipschitz_bound = epsilon * peak.powf(exponent - 1.0) / exponent;
        Ok(Self {
            shape: DiffusionShape::TwoPoint { epsilon, exponent },
            lipschitz_bound,
            density_range: f64::INFINITY,
        })
    }

    pub fn strongly_degenerate(epsilon: f64) -> Result<Self> {
        require_positive("epsilon", epsilon)?;
        Ok(Self {
            shape: DiffusionShape::StronglyDegenerate { epsilon },
            lipschitz_bound: epsilon * (PRESET_DENSITY_RANGE - SD_HIGH).max(SD_LOW),
            density_range: PRESET_DENSITY_RANGE,
        })
    }

    pub fn custom(evaluate: ScalarFn, lipschitz_bound: f64, density_range: f64) -> Result<Self> {
        if !(lipschitz_bound >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lipschitz_bound",
                value: lipschitz_bound,
                reason: "must be nonnegative",
            });
        }
        require_positive("density_range", density_range)?;
        Ok(Self {
            shape: DiffusionShape::Custom(evaluate),
            lipschitz_bound,
            density_range,
        })
    }

    #[inline]
    pub fn evaluate(&self, rho: f64) -> f64 {
        match &self.shape {
            DiffusionShape::Zero => 0.0,
            DiffusionShape::PorousMedium { epsilon } => 0.5 * epsilon * rho * rho,
            DiffusionShape::TwoPoint { epsilon, exponent } => {
                let r = rho.min(1.0);
                let m = *exponent;
                epsilon * r.powf(m) / m - epsilon * r.powf(m + 1.0) / (m + 1.0)
            }
            DiffusionShape::StronglyDegenerate { epsilon } => {
                if rho < SD_LOW {
                    0.5 * epsilon * rho * rho
                } else if rho < SD_HIGH {
                    2.0 * epsilon / 25.0
                } else {
                    let d = rho - SD_HIGH;
                    2.0 * epsilon / 25.0 + 0.5 * epsilon * d * d
                }
            }
            DiffusionShape::Custom(f) => f(rho),
        }
    }

    pub fn shape(&self) -> &DiffusionShape {
        &self.shape
    }

    /// Lipschitz constant of `φ`, valid on `[0, density_range]`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn density_range(&self) -> f64 {
        self.density_range
    }
}

impl fmt::Debug for DiffusionLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.shape {
            DiffusionShape::Zero => "Zero".to_string(),
            DiffusionShape::PorousMedium { epsilon } => format!("PorousMedium(ε={epsilon})"),
            DiffusionShape::TwoPoint { epsilon, exponent } => {
                format!("TwoPoint(ε={epsilon}, m={exponent})")
            }
            DiffusionShape::StronglyDegenerate { epsilon } => {
                format!("StronglyDegenerate(ε={epsilon})")
            }
            DiffusionShape::Custom(_) => "Custom".to_string(),
        };
        f.debug_struct("DiffusionLaw")
            .field("shape", &name)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish()
    }
}

#[derive(Clone)]
pub enum VelocityShape {
    /// `v(ρ) = (1 − ρ/ρ_max)₊`
    Saturating {
        rho_max: f64,
    },
    Constant {
        value: f64,
    },
    Custom(ScalarFn),
}

/// Mobility velocity `v`; the mobility is `ρ v(ρ)`.
#[derive(Clone)]
pub struct VelocityLaw {
    shape: VelocityShape,
    saturation_density: f64,
    v_max: f64,
    lipschitz_bound: f64,
}

impl VelocityLaw {
    pub fn saturating(rho_max: f64) -> Result<Self> {
        require_positive("rho_max", rho_max)?;
        Ok(Self {
            shape: VelocityShape::Saturating { rho_max },
            saturation_density: rho_max,
            v_max: 1.0,
            lipschitz_bound: 1.0 / rho_max,
        })
    }

    /// Density-independent velocity. Never saturates, so it does not satisfy
    /// the velocity hypothesis; useful for isolating the interaction term.
    pub fn constant(value: f64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "value",
                value,
                reason: "must be nonnegative and finite",
            });
        }
        Ok(Self {
            shape: VelocityShape::Constant { value },
            saturation_density: f64::INFINITY,
            v_max: value,
            lipschitz_bound: 0.0,
        })
    }

    pub fn custom(
        evaluate: ScalarFn,
        saturation_density: f64,
        v_max: f64,
        lipschitz_bound: f64,
    ) -> Result<Self> {
        require_positive("saturation_density", saturation_density)?;
        Ok(Self {
            shape: VelocityShape::Custom(evaluate),
            saturation_density,
            v_max,
            lipschitz_bound,
        })
    }

    #[inline]
    pub fn evaluate(&self, rho: f64) -> f64 {
        match &self.shape {
            VelocityShape::Saturating { rho_max } => {
                if rho >= *rho_max {
                    0.0
                } else {
                    1.0 - rho / rho_max
                }
            }
            VelocityShape::Constant { value } => *value,
            VelocityShape::Custom(f) => f(rho),
        }
    }

    pub fn shape(&self) -> &VelocityShape {
        &self.shape
    }

    pub fn saturation_density(&self) -> f64 {
        self.saturation_density
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }
}

impl fmt::Debug for VelocityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.shape {
            VelocityShape::Saturating { rho_max } => format!("Saturating(ρ_max={rho_max})"),
            VelocityShape::Constant { value } => format!("Constant({value})"),
            VelocityShape::Custom(_) => "Custom".to_string(),
        };
        f.debug_struct("VelocityLaw")
            .field("shape", &name)
            .field("saturation_density", &self.saturation_density)
            .field("v_max", &self.v_max)
            .finish()
    }
}

#[derive(Clone)]
pub enum KernelShape {
    None,
    /// `K(x) = 𝒦 (1 − e^{−x²})`
    Gaussian {
        strength: f64,
    },
    Custom {
        potential: ScalarFn,
        derivative: ScalarFn,
    },
}

/// Interaction potential `K` and its derivative `K'`.
#[derive(Clone)]
pub struct InteractionKernel {
    shape: KernelShape,
    bound: f64,
}

impl InteractionKernel {
    pub fn none() -> Self {
        Self {
            shape: KernelShape::None,
            bound: 0.0,
        }
    }

    /// Attractive Gaussian potential. `L` is the inflated sampled supremum of
    /// `|K''|` and `|K'''|` over `[−2ℓ, 2ℓ]`; `sup |K''|` is also the Lipschitz
    /// constant of `K'`.
    pub fn gaussian(strength: f64, domain_length: f64) -> Result<Self> {
        require_positive("strength", strength)?;
        require_positive("domain_length", domain_length)?;
        let second = |x: f64| 2.0 * strength * (1.0 - 2.0 * x * x) * (-x * x).exp();
        let third = |x: f64| 2.0 * strength * (4.0 * x * x * x - 6.0 * x) * (-x * x).exp();
        let sup = sample_sup(domain_length, |x| second(x).abs().max(third(x).abs()));
        Ok(Self {
            shape: KernelShape::Gaussian { strength },
            bound: KERNEL_BOUND_INFLATION * sup,
        })
    }

    /// Custom kernel. Without closed-form higher derivatives, `L` is estimated
    /// from divided differences of `K'` on the sampling grid.
    pub fn custom(potential: ScalarFn, derivative: ScalarFn, domain_length: f64) -> Result<Self> {
        require_positive("domain_length", domain_length)?;
        let a = -2.0 * domain_length;
        let h = 4.0 * domain_length / KERNEL_SAMPLES as f64;
        let values: Vec<f64> = (0..=KERNEL_SAMPLES)
            .map(|k| derivative(a + h * k as f64))
            .collect();
        let d1: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let d2: Vec<f64> = d1.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let sup = d1
            .iter()
            .chain(d2.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        Ok(Self {
            shape: KernelShape::Custom {
                potential,
                derivative,
            },
            bound: KERNEL_BOUND_INFLATION * sup,
        })
    }

    #[inline]
    pub fn potential(&self, x: f64) -> f64 {
        match &self.shape {
            KernelShape::None => 0.0,
            KernelShape::Gaussian { strength } => -strength * (-x * x).exp_m1(),
            KernelShape::Custom { potential, .. } => potential(x),
        }
    }

    /// `K'(x)`. For the Gaussian, `K'(−x)` is bitwise `−K'(x)`.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.shape {
            KernelShape::None => 0.0,
            KernelShape::Gaussian { strength } => 2.0 * strength * x * (-x * x).exp(),
            KernelShape::Custom { derivative, .. } => derivative(x),
        }
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    /// Declared `L = max{L₁, L₂, L₃}` over `[−2ℓ, 2ℓ]`.
    pub fn bound(&self) -> f64 {
        self.bound
    }
}

impl fmt::Debug for InteractionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.shape {
            KernelShape::None => "None".to_string(),
            KernelShape::Gaussian { strength } => format!("Gaussian(𝒦={strength})"),
            KernelShape::Custom { .. } => "Custom".to_string(),
        };
        f.debug_struct("InteractionKernel")
            .field("shape", &name)
            .field("bound", &self.bound)
            .finish()
    }
}

fn sample_sup(domain_length: f64, f: impl Fn(f64) -> f64) -> f64 {
    let a = -2.0 * domain_length;
    let h = 4.0 * domain_length / KERNEL_SAMPLES as f64;
    (0..=KERNEL_SAMPLES)
        .map(|k| f(a + h * k as f64))
        .fold(0.0_f64, f64::max)
}

/// One instance of the problem: laws, domain `[0, ℓ]` and total mass `σ`.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub diffusion: DiffusionLaw,
    pub velocity: VelocityLaw,
    pub kernel: InteractionKernel,
    domain_length: f64,
    mass: f64,
}

impl ModelSpec {
    pub fn new(
        diffusion: DiffusionLaw,
        velocity: VelocityLaw,
        kernel: InteractionKernel,
        domain_length: f64,
        mass: f64,
    ) -> Result<Self> {
        require_positive("domain_length", domain_length)?;
        require_positive("mass", mass)?;
        Ok(Self {
            diffusion,
            velocity,
            kernel,
            domain_length,
            mass,
        })
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }
}

#[derive(Clone)]
pub enum DatumShape {
    Constant {
        value: f64,
    },
    TwoStep {
        left: f64,
        right: f64,
        split: f64,
    },
    /// `½ (cos 4πx + 1)` on `[0, 2]`
    Cosine,
    Custom {
        density: ScalarFn,
        cumulative: ScalarFn,
    },
}

/// Initial density `ρ̄` on `[0, ℓ]` with its cumulative mass and declared bounds.
#[derive(Clone)]
pub struct InitialDatum {
    shape: DatumShape,
    length: f64,
    lower_bound: f64,
    upper_bound: f64,
    total_variation_bound: f64,
}

/// Domain of the oscillating preset.
pub const COSINE_DATUM_LENGTH: f64 = 2.0;

impl InitialDatum {
    pub fn constant(value: f64, length: f64) -> Result<Self> {
        require_positive("value", value)?;
        require_positive("length", length)?;
        Ok(Self {
            shape: DatumShape::Constant { value },
            length,
            lower_bound: value,
            upper_bound: value,
            total_variation_bound: 2.0 * value,
        })
    }

    /// `left` on `[0, split)`, `right` on `[split, length]`.
    pub fn two_step(left: f64, right: f64, split: f64, length: f64) -> Result<Self> {
        require_positive("left", left)?;
        require_positive("right", right)?;
        require_positive("length", length)?;
        if !(split > 0.0 && split < length) {
            return Err(Error::InvalidParameter {
                name: "split",
                value: split,
                reason: "must lie strictly inside the domain",
            });
        }
        Ok(Self {
            shape: DatumShape::TwoStep { left, right, split },
            length,
            lower_bound: left.min(right),
            upper_bound: left.max(right),
            total_variation_bound: left + right + (left - right).abs(),
        })
    }

    /// The oscillating datum `½ (cos 4πx + 1)` on `[0, 2]`. It vanishes at
    /// four points, so its declared lower bound is zero.
    pub fn cosine() -> Self {
        Self {
            shape: DatumShape::Cosine,
            length: COSINE_DATUM_LENGTH,
            lower_bound: 0.0,
            upper_bound: 1.0,
            // boundary jumps of 1 each plus four full oscillations of swing 2
            total_variation_bound: 10.0,
        }
    }

    pub fn custom(
        density: ScalarFn,
        cumulative: ScalarFn,
        length: f64,
        lower_bound: f64,
        upper_bound: f64,
        total_variation_bound: f64,
    ) -> Result<Self> {
        require_positive("length", length)?;
        if !(upper_bound >= lower_bound) {
            return Err(Error::InvalidParameter {
                name: "upper_bound",
                value: upper_bound,
                reason: "must not be below the lower bound",
            });
        }
        Ok(Self {
            shape: DatumShape::Custom {
                density,
                cumulative,
            },
            length,
            lower_bound,
            upper_bound,
            total_variation_bound,
        })
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        match &self.shape {
            DatumShape::Constant { value } => *value,
            DatumShape::TwoStep { left, right, split } => {
                if x < *split {
                    *left
                } else {
                    *right
                }
            }
            DatumShape::Cosine => 0.5 * ((4.0 * std::f64::consts::PI * x).cos() + 1.0),
            DatumShape::Custom { density, .. } => density(x),
        }
    }

    /// `∫₀ˣ ρ̄`
    pub fn cumulative(&self, x: f64) -> f64 {
        match &self.shape {
            DatumShape::Constant { value } => value * x,
            DatumShape::TwoStep { left, right, split } => {
                if x < *split {
                    left * x
                } else {
                    left * split + right * (x - split)
                }
            }
            DatumShape::Cosine => {
                let four_pi = 4.0 * std::f64::consts::PI;
                0.5 * x + (four_pi * x).sin() / (2.0 * four_pi)
            }
            DatumShape::Custom { cumulative, .. } => cumulative(x),
        }
    }

    /// Closed-form position holding a `fraction` of the total mass to its
    /// left, when the preset admits one.
    pub(crate) fn closed_form_quantile(&self, fraction: f64) -> Option<f64> {
        match &self.shape {
            DatumShape::Constant { .. } => Some(self.length * fraction),
            DatumShape::TwoStep { left, right, split } => {
                let level = fraction * self.total_mass();
                let left_mass = left * split;
                if level <= left_mass {
                    Some(level / left)
                } else {
                    Some(split + (level - left_mass) / right)
                }
            }
            _ => None,
        }
    }

    pub fn shape(&self) -> &DatumShape {
        &self.shape
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn total_mass(&self) -> f64 {
        self.cumulative(self.length)
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn total_variation_bound(&self) -> f64 {
        self.total_variation_bound
    }

    /// Whether the declared bounds satisfy `0 < m ≤ M`.
    pub fn bounded_away_from_vacuum(&self) -> bool {
        self.lower_bound > 0.0
    }
}

impl fmt::Debug for InitialDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.shape {
            DatumShape::Constant { value } => format!("Constant({value})"),
            DatumShape::TwoStep { left, right, split } => {
                format!("TwoStep({left}, {right}, split={split})")
            }
            DatumShape::Cosine => "Cosine".to_string(),
            DatumShape::Custom { .. } => "Custom".to_string(),
        };
        f.debug_struct("InitialDatum")
            .field("shape", &name)
            .field("length", &self.length)
            .field("lower_bound", &self.lower_bound)
            .field("upper_bound", &self.upper_bound)
            .finish()
    }
}

/// Hypothesis a validation entry refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Hypothesis {
    Diffusion,
    Velocity,
    Kernel,
    /// Bounded variation, positive mass.
    DatumMass,
    /// Bounds away from vacuum and overcrowding.
    DatumBounds,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Hypothesis::Diffusion => "Diff",
            Hypothesis::Velocity => "Vel",
            Hypothesis::Kernel => "Ker",
            Hypothesis::DatumMass => "In1",
            Hypothesis::DatumBounds => "In2",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub hypothesis: Hypothesis,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, hypothesis: Hypothesis) -> bool {
        self.violations.iter().any(|v| v.hypothesis == hypothesis)
    }

    fn push(&mut self, hypothesis: Hypothesis, message: String) {
        self.violations.push(Violation {
            hypothesis,
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "admissible at the sampled resolution");
        }
        for v in &self.violations {
            writeln!(f, "[{}] {}", v.hypothesis, v.message)?;
        }
        Ok(())
    }
}

// Relative slack for comparisons of computed values that agree analytically.
const ROUNDING: f64 = 1e-12;

/// Samples every hypothesis on uniform grids with `grid_points` nodes and
/// collects the violations found. The first violation of each kind is
/// reported with its location; later ones of the same kind are not repeated.
pub fn validate(spec: &ModelSpec, datum: &InitialDatum, grid_points: usize) -> ValidationReport {
    let grid_points = grid_points.max(2);
    let mut report = ValidationReport::default();
    let ell = spec.domain_length();
    let sigma = spec.mass();
    let m_upper = datum.upper_bound().max(f64::MIN_POSITIVE);

    // (Diff)
    let phi = &spec.diffusion;
    if phi.evaluate(0.0) != 0.0 {
        report.push(
            Hypothesis::Diffusion,
            format!("φ(0) = {} instead of 0", phi.evaluate(0.0)),
        );
    }
    let rho_top = 2.0 * m_upper;
    let rhos = linspace(0.0, rho_top, grid_points);
    let phis: Vec<f64> = rhos.iter().map(|&r| phi.evaluate(r)).collect();
    let scale = phis.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    if let Some(k) = (1..grid_points).find(|&k| phis[k] < phis[k - 1] - ROUNDING * scale) {
        report.push(
            Hypothesis::Diffusion,
            format!(
                "φ decreases between ρ = {} and ρ = {}",
                rhos[k - 1],
                rhos[k]
            ),
        );
    }
    let lip = phi.lipschitz_bound();
    if let Some(k) = (1..grid_points)
        .find(|&k| (phis[k] - phis[k - 1]).abs() > lip * (rhos[k] - rhos[k - 1]) + ROUNDING * scale)
    {
        report.push(
            Hypothesis::Diffusion,
            format!(
                "φ exceeds its Lipschitz bound {lip} between ρ = {} and ρ = {}",
                rhos[k - 1],
                rhos[k]
            ),
        );
    }
    if phis.iter().any(|v| !v.is_finite()) {
        report.push(
            Hypothesis::Diffusion,
            "φ is not finite on the sampled range".into(),
        );
    }

    // (Vel)
    let v = &spec.velocity;
    let sat = v.saturation_density();
    let v_top = if sat.is_finite() {
        2.0 * sat.max(m_upper / sigma)
    } else {
        2.0 * (m_upper / sigma)
    };
    let rhos = linspace(0.0, v_top, grid_points);
    let vs: Vec<f64> = rhos.iter().map(|&r| v.evaluate(r)).collect();
    if let Some(k) = (1..grid_points).find(|&k| vs[k] > vs[k - 1] + ROUNDING) {
        report.push(
            Hypothesis::Velocity,
            format!(
                "v increases between ρ = {} and ρ = {}",
                rhos[k - 1],
                rhos[k]
            ),
        );
    }
    if (vs[0] - v.v_max()).abs() > ROUNDING * v.v_max().abs().max(1.0) {
        report.push(
            Hypothesis::Velocity,
            format!(
                "v(0) = {} differs from declared v_max = {}",
                vs[0],
                v.v_max()
            ),
        );
    }
    if let Some(k) = (0..grid_points).find(|&k| vs[k] < 0.0 || vs[k] > v.v_max() + ROUNDING) {
        report.push(
            Hypothesis::Velocity,
            format!("v({}) = {} leaves [0, v_max]", rhos[k], vs[k]),
        );
    }
    if let Some(k) = (0..grid_points).find(|&k| rhos[k] >= sat && vs[k] != 0.0) {
        report.push(
            Hypothesis::Velocity,
            format!(
                "v({}) = {} above the saturation density {sat}",
                rhos[k], vs[k]
            ),
        );
    }
    let threshold = m_upper / sigma;
    if let Some(k) = (0..grid_points).find(|&k| rhos[k] >= threshold && vs[k] != 0.0) {
        report.push(
            Hypothesis::Velocity,
            format!(
                "v must vanish from M/σ = {threshold} on, but v({}) = {}",
                rhos[k], vs[k]
            ),
        );
    }

    // (Ker)
    let kernel = &spec.kernel;
    let k0 = kernel.derivative(0.0);
    if k0 != 0.0 {
        report.push(Hypothesis::Kernel, format!("K'(0) = {k0} instead of 0"));
    }
    let xs = linspace(-2.0 * ell, 2.0 * ell, grid_points);
    let dk: Vec<f64> = xs.iter().map(|&x| kernel.derivative(x)).collect();
    let kscale = dk.iter().fold(f64::MIN_POSITIVE, |a, v| a.max(v.abs()));
    if let Some(&x) = xs
        .iter()
        .find(|&&x| x > 0.0 && !(kernel.derivative(x) > 0.0))
    {
        report.push(
            Hypothesis::Kernel,
            format!("K'({x}) = {} is not positive", kernel.derivative(x)),
        );
    }
    if let Some(&x) = xs
        .iter()
        .find(|&&x| (kernel.derivative(-x) + kernel.derivative(x)).abs() > ROUNDING * kscale)
    {
        report.push(Hypothesis::Kernel, format!("K' is not odd at x = {x}"));
    }
    let big_l = kernel.bound();
    if let Some(k) = (1..grid_points)
        .find(|&k| (dk[k] - dk[k - 1]).abs() > big_l * (xs[k] - xs[k - 1]) + ROUNDING * kscale)
    {
        report.push(
            Hypothesis::Kernel,
            format!(
                "K' exceeds the declared bound L = {big_l} between x = {} and x = {}",
                xs[k - 1],
                xs[k]
            ),
        );
    }

    // (In1) / (In2)
    if (datum.length() - ell).abs() > ROUNDING * ell {
        report.push(
            Hypothesis::DatumMass,
            format!(
                "datum lives on [0, {}] but the domain is [0, {ell}]",
                datum.length()
            ),
        );
    }
    let c0 = datum.cumulative(0.0);
    if c0 != 0.0 {
        report.push(Hypothesis::DatumMass, format!("cumulative(0) = {c0}"));
    }
    let total = datum.cumulative(datum.length());
    if !(total > 0.0) || (total - sigma).abs() > 1e-10 * sigma {
        report.push(
            Hypothesis::DatumMass,
            format!("cumulative(ℓ) = {total} but σ = {sigma}"),
        );
    }
    let xs = linspace(0.0, datum.length(), grid_points);
    let cums: Vec<f64> = xs.iter().map(|&x| datum.cumulative(x)).collect();
    if let Some(k) = (1..grid_points).find(|&k| cums[k] < cums[k - 1] - ROUNDING * sigma) {
        report.push(
            Hypothesis::DatumMass,
            format!(
                "cumulative decreases between x = {} and x = {}",
                xs[k - 1],
                xs[k]
            ),
        );
    }
    let m = datum.lower_bound();
    let big_m = datum.upper_bound();
    if !(m > 0.0) {
        report.push(
            Hypothesis::DatumBounds,
            format!("declared lower bound m = {m} is not positive"),
        );
    }
    if let Some(&x) = xs.iter().find(|&&x| {
        let r = datum.evaluate(x);
        !(r >= m && r > 0.0)
    }) {
        report.push(
            Hypothesis::DatumBounds,
            format!(
                "ρ̄({x}) = {} is below a positive lower bound",
                datum.evaluate(x)
            ),
        );
    }
    if let Some(&x) = xs.iter().find(|&&x| datum.evaluate(x) > big_m) {
        report.push(
            Hypothesis::DatumBounds,
            format!("ρ̄({x}) = {} exceeds M = {big_m}", datum.evaluate(x)),
        );
    }

    report
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { b } else { a + h * k as f64 })
        .collect()
}
