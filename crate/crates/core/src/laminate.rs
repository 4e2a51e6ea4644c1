//! Laminate descriptions and the map between physical and scaled variables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cellfn::{CellFnError, UnitCellFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaminateError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    CellFn(#[from] CellFnError),
}

fn invalid(field: &str, reason: impl Into<String>) -> LaminateError {
    LaminateError::Invalid { field: field.to_string(), reason: reason.into() }
}

fn positive(field: &str, x: f64) -> Result<(), LaminateError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and strictly positive, got {x}")))
    }
}

/// Model 1: modulated capacity and conductivity.
/// Model 2: modulated density with the corrective advection term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Model1,
    Model2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialProfile {
    pub sigma: UnitCellFunction,
    pub gamma: UnitCellFunction,
    pub rho: Option<UnitCellFunction>,
    pub c_specific: Option<f64>,
}

impl MaterialProfile {
    pub fn capacity(sigma: UnitCellFunction, gamma: UnitCellFunction) -> Result<Self, LaminateError> {
        let p = Self { sigma, gamma, rho: None, c_specific: None };
        p.check_positive()?;
        Ok(p)
    }

    /// Density profile with specific capacity `c`; the capacity is `c·rho`.
    pub fn density(sigma: UnitCellFunction, rho: UnitCellFunction, c: f64) -> Result<Self, LaminateError> {
        positive("c", c)?;
        let p = Self { gamma: rho.scale(c), sigma, rho: Some(rho), c_specific: Some(c) };
        p.check_positive()?;
        Ok(p)
    }

    fn check_positive(&self) -> Result<(), LaminateError> {
        if !(self.sigma.min_value() > 0.0) {
            return Err(invalid("sigma", "conductivity must be strictly positive"));
        }
        if !(self.gamma.min_value() > 0.0) {
            return Err(invalid("gamma", "capacity must be strictly positive"));
        }
        if let Some(rho) = &self.rho {
            if !(rho.min_value() > 0.0) {
                return Err(invalid("rho", "density must be strictly positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaminateSpec {
    pub profile: MaterialProfile,
    pub h: f64,
    pub v_m: f64,
    pub model: Model,
}

impl LaminateSpec {
    pub fn new(profile: MaterialProfile, h: f64, v_m: f64, model: Model) -> Result<Self, LaminateError> {
        positive("h", h)?;
        if !v_m.is_finite() {
            return Err(invalid("v_m", "must be finite"));
        }
        profile.check_positive()?;
        if model == Model::Model2 && (profile.rho.is_none() || profile.c_specific.is_none()) {
            return Err(invalid("rho", "model2 requires a density profile and a specific capacity"));
        }
        Ok(Self { profile, h, v_m, model })
    }

    /// ⟨1/σ̄⟩⁻¹.
    pub fn harmonic_sigma(&self) -> f64 {
        1.0 / self.profile.sigma.recip().map(|r| r.mean()).unwrap_or(f64::NAN)
    }

    pub fn mean_gamma(&self) -> f64 {
        self.profile.gamma.mean()
    }
}

/// Phase properties of a two-phase cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BilayerCapacity {
    Capacities { gamma_a: f64, gamma_b: f64 },
    Densities { rho_a: f64, rho_b: f64, c: f64 },
}

/// Phase A occupies `[0, φh)`, phase B `[φh, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilayerSpec {
    pub sigma_a: f64,
    pub sigma_b: f64,
    #[serde(flatten)]
    pub capacity: BilayerCapacity,
    pub phi: f64,
    pub h: f64,
    pub v_m: f64,
}

impl BilayerSpec {
    pub fn model1(sigma: (f64, f64), gamma: (f64, f64), phi: f64, h: f64, v_m: f64) -> Self {
        Self {
            sigma_a: sigma.0,
            sigma_b: sigma.1,
            capacity: BilayerCapacity::Capacities { gamma_a: gamma.0, gamma_b: gamma.1 },
            phi,
            h,
            v_m,
        }
    }

    pub fn model2(sigma: (f64, f64), rho: (f64, f64), c: f64, phi: f64, h: f64, v_m: f64) -> Self {
        Self {
            sigma_a: sigma.0,
            sigma_b: sigma.1,
            capacity: BilayerCapacity::Densities { rho_a: rho.0, rho_b: rho.1, c },
            phi,
            h,
            v_m,
        }
    }

    pub fn model(&self) -> Model {
        match self.capacity {
            BilayerCapacity::Capacities { .. } => Model::Model1,
            BilayerCapacity::Densities { .. } => Model::Model2,
        }
    }

    /// Capacities `(γ_A, γ_B)`; `c·ρ` for density cells.
    pub fn gammas(&self) -> (f64, f64) {
        match self.capacity {
            BilayerCapacity::Capacities { gamma_a, gamma_b } => (gamma_a, gamma_b),
            BilayerCapacity::Densities { rho_a, rho_b, c } => (c * rho_a, c * rho_b),
        }
    }

    pub fn with_v_m(&self, v_m: f64) -> Self {
        Self { v_m, ..*self }
    }

    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..*self }
    }

    pub fn with_phi(&self, phi: f64) -> Self {
        Self { phi, ..*self }
    }

    pub fn validate(&self) -> Result<(), LaminateError> {
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(invalid("phi", format!("volume fraction must lie in (0,1), got {}", self.phi)));
        }
        positive("sigma_a", self.sigma_a)?;
        positive("sigma_b", self.sigma_b)?;
        match self.capacity {
            BilayerCapacity::Capacities { gamma_a, gamma_b } => {
                positive("gamma_a", gamma_a)?;
                positive("gamma_b", gamma_b)?;
            }
            BilayerCapacity::Densities { rho_a, rho_b, c } => {
                positive("rho_a", rho_a)?;
                positive("rho_b", rho_b)?;
                positive("c", c)?;
            }
        }
        positive("h", self.h)?;
        if !self.v_m.is_finite() {
            return Err(invalid("v_m", "must be finite"));
        }
        Ok(())
    }
}

pub fn make_bilayer(spec: &BilayerSpec) -> Result<LaminateSpec, LaminateError> {
    spec.validate()?;
    let sigma = UnitCellFunction::two_phase(spec.phi, spec.sigma_a, spec.sigma_b)?;
    let profile = match spec.capacity {
        BilayerCapacity::Capacities { gamma_a, gamma_b } => {
            MaterialProfile::capacity(sigma, UnitCellFunction::two_phase(spec.phi, gamma_a, gamma_b)?)?
        }
        BilayerCapacity::Densities { rho_a, rho_b, c } => {
            MaterialProfile::density(sigma, UnitCellFunction::two_phase(spec.phi, rho_a, rho_b)?, c)?
        }
    };
    LaminateSpec::new(profile, spec.h, spec.v_m, spec.model())
}

/// Reference scales; `alpha* = σ*/γ*`, `v* = α*κ*`, `η = κ*h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub kappa_star: f64,
    pub sigma_star: f64,
    pub gamma_star: f64,
    pub theta_star: f64,
}

impl ScaleSet {
    pub fn new(kappa_star: f64, sigma_star: f64, gamma_star: f64, theta_star: f64) -> Result<Self, LaminateError> {
        positive("kappa_star", kappa_star)?;
        positive("sigma_star", sigma_star)?;
        positive("gamma_star", gamma_star)?;
        positive("theta_star", theta_star)?;
        Ok(Self { kappa_star, sigma_star, gamma_star, theta_star })
    }

    /// σ* = ⟨1/σ̄⟩⁻¹ (so that ⟨1/σ⟩ = 1), γ* = ⟨γ̄⟩, κ* = 1/h.
    pub fn natural(spec: &LaminateSpec) -> Self {
        Self {
            kappa_star: 1.0 / spec.h,
            sigma_star: spec.harmonic_sigma(),
            gamma_star: spec.mean_gamma(),
            theta_star: 1.0,
        }
    }

    pub fn with_kappa_star(self, kappa_star: f64) -> Self {
        Self { kappa_star, ..self }
    }

    pub fn alpha_star(&self) -> f64 {
        self.sigma_star / self.gamma_star
    }

    pub fn v_star(&self) -> f64 {
        self.alpha_star() * self.kappa_star
    }

    pub fn eta(&self, h: f64) -> f64 {
        self.kappa_star * h
    }

    /// Physical value of the coefficient `c` of `η^n ∂t^a ∂x^b` in an equation scaled by `σ*κ*²`.
    pub fn dimensional_coefficient(&self, c: f64, h: f64, n: i32, a: i32, b: i32) -> f64 {
        c * h.powi(n) * self.kappa_star.powi(n - 2 * a - b + 2) * self.sigma_star / self.alpha_star().powi(a)
    }
}

/// Scaled problem: `σ = σ̄/σ*`, `γ = γ̄/γ*`, `v = v_m/v*`; for density cells
/// `c = c̄/c*` with `c* = c̄` (so `c = 1`) and `ρ = ρ̄/ρ*` with `ρ* = γ*/c*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondimProblem {
    pub model: Model,
    pub sigma: UnitCellFunction,
    pub gamma: UnitCellFunction,
    pub rho: Option<UnitCellFunction>,
    pub c: Option<f64>,
    pub c_star: Option<f64>,
    pub v: f64,
    pub eta: f64,
    pub h: f64,
    pub scales: ScaleSet,
}

impl NondimProblem {
    pub fn rho_star(&self) -> Option<f64> {
        self.c_star.map(|cs| self.scales.gamma_star / cs)
    }

    /// Same physics expressed with other reference scales.
    pub fn rescaled(&self, scales: ScaleSet) -> Result<Self, LaminateError> {
        nondimensionalize(&dimensionalize(self)?, scales)
    }
}

pub fn nondimensionalize(spec: &LaminateSpec, scales: ScaleSet) -> Result<NondimProblem, LaminateError> {
    let scales = ScaleSet::new(scales.kappa_star, scales.sigma_star, scales.gamma_star, scales.theta_star)?;
    let p = &spec.profile;
    let (rho, c, c_star) = match spec.model {
        Model::Model1 => (None, None, None),
        Model::Model2 => {
            let cb = p.c_specific.ok_or_else(|| invalid("c", "model2 requires a specific capacity"))?;
            let rho = p.rho.as_ref().ok_or_else(|| invalid("rho", "model2 requires a density profile"))?;
            let rho_star = scales.gamma_star / cb;
            (Some(rho.scale(1.0 / rho_star)), Some(1.0), Some(cb))
        }
    };
    Ok(NondimProblem {
        model: spec.model,
        sigma: p.sigma.scale(1.0 / scales.sigma_star),
        gamma: p.gamma.scale(1.0 / scales.gamma_star),
        rho,
        c,
        c_star,
        v: spec.v_m / scales.v_star(),
        eta: scales.eta(spec.h),
        h: spec.h,
        scales,
    })
}

pub fn dimensionalize(problem: &NondimProblem) -> Result<LaminateSpec, LaminateError> {
    let s = &problem.scales;
    let sigma = problem.sigma.scale(s.sigma_star);
    let profile = match problem.model {
        Model::Model1 => MaterialProfile::capacity(sigma, problem.gamma.scale(s.gamma_star))?,
        Model::Model2 => {
            let (rho, c, cs) = match (&problem.rho, problem.c, problem.c_star) {
                (Some(r), Some(c), Some(cs)) => (r, c, cs),
                _ => return Err(invalid("rho", "model2 requires a density profile")),
            };
            let rho_star = s.gamma_star / cs;
            MaterialProfile::density(sigma, rho.scale(rho_star), c * cs)?
        }
    };
    LaminateSpec::new(profile, problem.h, problem.v * s.v_star(), problem.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn bilayer_harmonic_mean_matches_direct_value() {
        let spec = make_bilayer(&BilayerSpec::model1((500.0, 1e5), (1.0, 1.0), 0.2, 0.1, 0.05)).unwrap();
        assert!(rel(spec.harmonic_sigma(), 1.0 / (0.2 / 500.0 + 0.8 / 1e5)) < 1e-12);
        let spec = make_bilayer(&BilayerSpec::model1((10.0, 190.0), (2e6, 1.4e6), 0.3, 0.02, 5e-3)).unwrap();
        assert!((spec.harmonic_sigma() - 29.6875).abs() < 1e-10);
        assert!(rel(spec.profile.sigma.mean(), 0.3 * 10.0 + 0.7 * 190.0) < 1e-12);
    }

    #[test]
    fn bilayer_rejects_bad_fields_by_name() {
        let err = make_bilayer(&BilayerSpec::model1((1.0, 1.0), (1.0, 1.0), 1.2, 0.1, 0.0)).unwrap_err();
        assert!(matches!(err, LaminateError::Invalid { ref field, .. } if field == "phi"));
        let err = make_bilayer(&BilayerSpec::model1((1.0, -1.0), (1.0, 1.0), 0.5, 0.1, 0.0)).unwrap_err();
        assert!(matches!(err, LaminateError::Invalid { ref field, .. } if field == "sigma_b"));
        let err = make_bilayer(&BilayerSpec::model2((1.0, 1.0), (1.0, 0.0), 3.0, 0.5, 0.1, 0.0)).unwrap_err();
        assert!(matches!(err, LaminateError::Invalid { ref field, .. } if field == "rho_b"));
    }

    #[test]
    fn unit_speed_and_unit_conductivity() {
        let spec = make_bilayer(&BilayerSpec::model1((4.0, 4.0), (2.0, 3.0), 0.5, 0.1, 0.0)).unwrap();
        let scales = ScaleSet::new(3.0, 4.0, 2.0, 1.0).unwrap();
        let spec = LaminateSpec { v_m: scales.v_star(), ..spec };
        let nd = nondimensionalize(&spec, scales).unwrap();
        assert!((nd.v - 1.0).abs() < 1e-15);
        assert!(nd.sigma.is_constant(0.0) && nd.sigma.eval(0.3) == 1.0);
    }

    #[test]
    fn eta_for_gaussian_wavelength() {
        let nu = 1.0;
        let s = ScaleSet::new(2.0 * std::f64::consts::PI / (6.0 * nu), 1.0, 1.0, 1.0).unwrap();
        assert!((s.eta(0.1) - std::f64::consts::PI / 30.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_is_identity() {
        for b in [
            BilayerSpec::model1((10.0, 190.0), (2e6, 1.4e6), 0.3, 0.02, 5e-3),
            BilayerSpec::model2((190.0, 50.0), (2e6, 1.4e6), 1000.0, 0.2, 0.05, -5e-3),
        ] {
            let spec = make_bilayer(&b).unwrap();
            let nd = nondimensionalize(&spec, ScaleSet::new(7.0, 3.0, 11.0, 2.0).unwrap()).unwrap();
            let back = dimensionalize(&nd).unwrap();
            for y in [0.1, 0.5, 0.9] {
                assert!(rel(back.profile.sigma.eval(y), spec.profile.sigma.eval(y)) < 1e-12);
                assert!(rel(back.profile.gamma.eval(y), spec.profile.gamma.eval(y)) < 1e-12);
            }
            assert!(rel(back.v_m, spec.v_m) < 1e-12);
            assert_eq!(back.h, spec.h);
        }
    }

    #[test]
    fn zero_scale_is_rejected() {
        assert!(ScaleSet::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(ScaleSet::new(1.0, 1.0, -2.0, 1.0).is_err());
    }

    #[test]
    fn model2_requires_density() {
        let sigma = UnitCellFunction::constant(1.0);
        let p = MaterialProfile::capacity(sigma.clone(), sigma).unwrap();
        assert!(LaminateSpec::new(p, 0.1, 0.0, Model::Model2).is_err());
    }
}
