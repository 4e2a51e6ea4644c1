//! Homogenized dispersion relations (orders 0–2) and dimensional effective equations.
//!
//! Plane waves are `exp(i(Ωτ − κX))` throughout: `∂τ → iΩ`, `∂X → −iκ`, and
//! `Im Ω > 0` means decay.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{homogenize, CellError, EffectiveCoefficients, Homogenization, CONSTANT_TOL};
use crate::laminate::{
    make_bilayer, nondimensionalize, BilayerSpec, LaminateError, LaminateSpec, Model, NondimProblem, ScaleSet,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectiveError {
    #[error("variant {variant:?} does not apply: {reason}")]
    VariantMismatch { variant: PdeVariant, reason: &'static str },
    #[error("order must be 0, 1 or 2, got {0}")]
    BadOrder(u8),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Laminate(#[from] LaminateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeVariant {
    Order0Both,
    SigmaOnlyOrder2,
    Model2RhoOnlyOrder2,
    CascadeGeneral,
}

/// Which material parameters vary across the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    Uniform,
    SigmaOnly,
    GammaOnly,
    Both,
    DensityOnly,
    DensityAndSigma,
}

pub fn modulation_of(problem: &NondimProblem) -> Modulation {
    let sc = problem.sigma.is_constant(CONSTANT_TOL);
    let gc = problem.gamma.is_constant(CONSTANT_TOL);
    match (problem.model, sc, gc) {
        (_, true, true) => Modulation::Uniform,
        (Model::Model1, false, true) => Modulation::SigmaOnly,
        (Model::Model1, true, false) => Modulation::GammaOnly,
        (Model::Model1, false, false) => Modulation::Both,
        (Model::Model2, true, false) => Modulation::DensityOnly,
        (Model::Model2, false, _) => Modulation::DensityAndSigma,
    }
}

/// Space-time forcing `F(X, τ)`.
#[derive(Clone)]
pub struct SourceTerm(pub Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SourceTerm(..)")
    }
}

/// `c_t ∂τΘ + c_x ∂XΘ + c_xx ∂²XΘ + c_xxx ∂³XΘ + c_txx ∂τ∂²XΘ = F`, SI units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectivePde {
    pub coeff_t: f64,
    pub coeff_x: f64,
    pub coeff_xx: f64,
    pub coeff_xxx: f64,
    pub coeff_txx: f64,
    #[serde(skip)]
    pub source: Option<SourceTerm>,
    pub variant: PdeVariant,
}

impl EffectivePde {
    pub fn new(coeffs: [f64; 5], variant: PdeVariant) -> Self {
        let [coeff_t, coeff_x, coeff_xx, coeff_xxx, coeff_txx] = coeffs;
        Self { coeff_t, coeff_x, coeff_xx, coeff_xxx, coeff_txx, source: None, variant }
    }

    pub fn with_source(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(SourceTerm(Arc::new(f)));
        self
    }

    pub fn coeffs(&self) -> [f64; 5] {
        [self.coeff_t, self.coeff_x, self.coeff_xx, self.coeff_xxx, self.coeff_txx]
    }

    /// Mirror image `X → −X`: odd-order coefficients change sign.
    pub fn mirrored(&self) -> Self {
        Self { coeff_x: -self.coeff_x, coeff_xxx: -self.coeff_xxx, ..self.clone() }
    }

    /// Plane-wave frequency.
    pub fn omega(&self, kappa: f64) -> C64 {
        let k = kappa;
        let num = C64::new(k * self.coeff_x - k * k * k * self.coeff_xxx, -k * k * self.coeff_xx);
        num / (self.coeff_t - self.coeff_txx * k * k)
    }
}

/// Plane-wave frequencies of a constant-coefficient equation.
pub fn dispersion(pde: &EffectivePde, kappa: &[f64]) -> Vec<C64> {
    kappa.iter().map(|&k| pde.omega(k)).collect()
}

fn check(ok: bool, variant: PdeVariant, reason: &'static str) -> Result<(), EffectiveError> {
    if ok {
        Ok(())
    } else {
        Err(EffectiveError::VariantMismatch { variant, reason })
    }
}

/// Dimensional equation for a variant, each term mapped back through the scale set.
pub fn assemble_pde(
    coeffs: &EffectiveCoefficients,
    problem: &NondimProblem,
    variant: PdeVariant,
) -> Result<EffectivePde, EffectiveError> {
    let s = &problem.scales;
    let h = problem.h;
    let v = problem.v;
    let dim = |c: f64, n: i32, a: i32, b: i32| s.dimensional_coefficient(c, h, n, a, b);
    let sigma_const = problem.sigma.is_constant(CONSTANT_TOL);
    let gamma_const = problem.gamma.is_constant(CONSTANT_TOL);
    let g0 = coeffs.gamma0;
    let s0 = coeffs.sigma0;
    let out = match variant {
        PdeVariant::Order0Both => {
            check(problem.model == Model::Model1, variant, "leading-order convection-diffusion is a capacity/conductivity law")?;
            [dim(g0, 0, 1, 0), -dim(coeffs.w0, 0, 0, 1), -dim(s0, 0, 0, 2), 0.0, 0.0]
        }
        PdeVariant::SigmaOnlyOrder2 => {
            check(problem.model == Model::Model1, variant, "requires a capacity/conductivity laminate")?;
            check(gamma_const, variant, "requires constant capacity")?;
            let b1 = coeffs.beta1;
            let b2 = coeffs.beta2 * s.sigma_star;
            [
                dim(g0, 0, 1, 0),
                0.0,
                -(dim(s0, 0, 0, 2) + dim(v * v * g0 * g0 * b2, 2, 0, 2)),
                -dim(2.0 * v * g0 * b1, 2, 0, 3),
                -dim(g0 * b1, 2, 1, 2),
            ]
        }
        PdeVariant::Model2RhoOnlyOrder2 => {
            check(problem.model == Model::Model2, variant, "requires a density laminate")?;
            check(sigma_const, variant, "requires constant conductivity")?;
            let rs = problem.rho_star().unwrap_or(1.0);
            let b3 = coeffs.beta3.ok_or(EffectiveError::VariantMismatch { variant, reason: "beta3 unavailable" })? / (rs * rs);
            let rho0 = coeffs.rho0.unwrap_or(g0);
            let c = problem.c.unwrap_or(1.0);
            [
                dim(g0, 0, 1, 0),
                0.0,
                -(dim(s0, 0, 0, 2) + dim(v * v * c * c * b3 / s0, 2, 0, 2)),
                -dim(2.0 * v * (c / rho0) * b3, 2, 0, 3),
                -dim((c / rho0) * b3, 2, 1, 2),
            ]
        }
        PdeVariant::CascadeGeneral => {
            return Err(EffectiveError::VariantMismatch {
                variant,
                reason: "the general second-order model is a cascade of three equations; use CascadeChain",
            })
        }
    };
    Ok(EffectivePde::new(out, variant))
}

/// The three coupled levels 𝒯₀, 𝒯₁, 𝒯₂ in scaled variables, all with the operator
/// `γ₀∂t − σ₀∂²x − W₀∂x`; sources `ℱ = d_xx∂²x + d_x∂x` and `ℰ` (seven terms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeChain {
    pub gamma0: f64,
    pub sigma0: f64,
    pub w0: f64,
    pub d_xx: f64,
    pub d_x: f64,
    pub e_xxx: f64,
    pub e_txx: f64,
    pub e_tx: f64,
    pub e_tt: f64,
    pub e_xx: f64,
    pub e_x: f64,
    pub e_t: f64,
    pub eta: f64,
}

impl CascadeChain {
    pub fn from_coefficients(c: &EffectiveCoefficients, eta: f64) -> Self {
        Self {
            gamma0: c.gamma0,
            sigma0: c.sigma0,
            w0: c.w0,
            d_xx: c.d_xx,
            d_x: c.d_x,
            e_xxx: c.e_xxx,
            e_txx: c.e_txx,
            e_tx: c.e_tx,
            e_tt: c.e_tt,
            e_xx: c.e_xx,
            e_x: c.e_x,
            e_t: c.e_t,
            eta,
        }
    }

    /// Growth rate of the shared operator on `exp(−ikx)`.
    pub fn lambda(&self, k: f64) -> C64 {
        C64::new(-self.sigma0 * k * k, -self.w0 * k) / self.gamma0
    }

    /// Symbol of ℱ.
    pub fn f_symbol(&self, k: f64) -> C64 {
        C64::new(-self.d_xx * k * k, -self.d_x * k)
    }

    /// Symbol of ℰ on a leading-order mode (time derivatives act as λ).
    pub fn e_symbol(&self, k: f64) -> C64 {
        let l = self.lambda(k);
        let i = C64::i();
        i * (self.e_xxx * k * k * k) - l * (self.e_txx * k * k) - i * l * (self.e_tx * k) + l * l * self.e_tt
            - self.e_xx * k * k
            - i * (self.e_x * k)
            + l * self.e_t
    }

    /// Exact evolution of one Fourier mode of the three levels (unforced).
    pub fn evolve_mode(&self, k: f64, t: f64, init: [C64; 3]) -> [C64; 3] {
        let l = self.lambda(k);
        let f = self.f_symbol(k);
        let e = self.e_symbol(k);
        let g = self.gamma0;
        let ex = (l * t).exp();
        let [t0, t1, t2] = init;
        [
            ex * t0,
            ex * (t1 + f * t0 * (t / g)),
            ex * (t2 + (f * t1 + e * t0) * (t / g) + f * f * t0 * (t * t / (2.0 * g * g))),
        ]
    }

    /// `𝒯⁽²⁾ = 𝒯₀ + η𝒯₁ + η²𝒯₂`.
    pub fn reconstruct(&self, levels: [C64; 3]) -> C64 {
        levels[0] + levels[1] * self.eta + levels[2] * (self.eta * self.eta)
    }

    /// Scaled frequency through `order`: `ω₀ + ηω₁ + η²ω₂`.
    pub fn omega(&self, k: f64, order: u8) -> C64 {
        let mi = -C64::i();
        let mut w = mi * self.lambda(k);
        if order >= 1 {
            w += mi * self.f_symbol(k) * (self.eta / self.gamma0);
        }
        if order >= 2 {
            w += mi * self.e_symbol(k) * (self.eta * self.eta / self.gamma0);
        }
        w
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DispersionLaw {
    Pde(EffectivePde),
    Cascade { chain: CascadeChain, scales: ScaleSet },
}

/// Effective `κ ↦ Ω` (fixed frame, physical units).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveDispersion {
    pub order: u8,
    pub variant: PdeVariant,
    pub law: DispersionLaw,
}

impl EffectiveDispersion {
    pub fn omega(&self, kappa: f64) -> C64 {
        match &self.law {
            DispersionLaw::Pde(p) => p.omega(kappa),
            DispersionLaw::Cascade { chain, scales } => {
                let w = chain.omega(kappa / scales.kappa_star, self.order);
                w * (scales.alpha_star() * scales.kappa_star * scales.kappa_star)
            }
        }
    }

    pub fn omegas(&self, kappa: &[f64]) -> Vec<C64> {
        kappa.iter().map(|&k| self.omega(k)).collect()
    }
}

/// Scaled problem and its homogenization for a laminate, with `κ* = 1/h`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: NondimProblem,
    pub homogenization: Homogenization,
    pub modulation: Modulation,
}

pub fn prepare(spec: &LaminateSpec) -> Result<Prepared, EffectiveError> {
    prepare_scaled(spec, ScaleSet::natural(spec))
}

pub fn prepare_scaled(spec: &LaminateSpec, scales: ScaleSet) -> Result<Prepared, EffectiveError> {
    let problem = nondimensionalize(spec, scales)?;
    let homogenization = homogenize(&problem)?;
    let modulation = modulation_of(&problem);
    Ok(Prepared { problem, homogenization, modulation })
}

pub fn prepare_bilayer(b: &BilayerSpec) -> Result<Prepared, EffectiveError> {
    prepare(&make_bilayer(b)?)
}

impl Prepared {
    pub fn coefficients(&self) -> &EffectiveCoefficients {
        &self.homogenization.coefficients
    }

    pub fn cascade(&self) -> CascadeChain {
        CascadeChain::from_coefficients(self.coefficients(), self.problem.eta)
    }

    /// Single equation of the given order where one exists; cascade otherwise.
    pub fn dispersion(&self, order: u8) -> Result<EffectiveDispersion, EffectiveError> {
        if order > 2 {
            return Err(EffectiveError::BadOrder(order));
        }
        let c = self.coefficients();
        let p = &self.problem;
        let pde = |variant| -> Result<EffectiveDispersion, EffectiveError> {
            Ok(EffectiveDispersion { order, variant, law: DispersionLaw::Pde(assemble_pde(c, p, variant)?) })
        };
        let cascade = || EffectiveDispersion {
            order,
            variant: PdeVariant::CascadeGeneral,
            law: DispersionLaw::Cascade { chain: self.cascade(), scales: p.scales },
        };
        match (self.modulation, order) {
            (Modulation::Uniform | Modulation::SigmaOnly, 2) if p.model == Model::Model1 => pde(PdeVariant::SigmaOnlyOrder2),
            (Modulation::Uniform | Modulation::DensityOnly, 2) if p.model == Model::Model2 => pde(PdeVariant::Model2RhoOnlyOrder2),
            (_, 0) if p.model == Model::Model1 => pde(PdeVariant::Order0Both),
            (Modulation::SigmaOnly | Modulation::Uniform, 1) if p.model == Model::Model1 => pde(PdeVariant::Order0Both),
            _ => Ok(cascade()),
        }
    }

    /// The equation integrated in time for this laminate and order.
    pub fn pde(&self, order: u8) -> Result<EffectivePde, EffectiveError> {
        match self.dispersion(order)?.law {
            DispersionLaw::Pde(p) => Ok(p),
            DispersionLaw::Cascade { .. } if order == 0 => {
                // density laminates at leading order: plain diffusion with the homogenized constants
                let c = self.coefficients();
                let s = &self.problem.scales;
                let h = self.problem.h;
                Ok(EffectivePde::new(
                    [
                        s.dimensional_coefficient(c.gamma0, h, 0, 1, 0),
                        -s.dimensional_coefficient(c.w0, h, 0, 0, 1),
                        -s.dimensional_coefficient(c.sigma0, h, 0, 0, 2),
                        0.0,
                        0.0,
                    ],
                    PdeVariant::Order0Both,
                ))
            }
            DispersionLaw::Cascade { .. } => Err(EffectiveError::VariantMismatch {
                variant: PdeVariant::CascadeGeneral,
                reason: "no single equation at this order for this laminate",
            }),
        }
    }
}

/// Order-2 effective prediction used to seed the exact root finder.
pub fn default_guess(b: &BilayerSpec) -> Result<impl Fn(f64) -> C64, EffectiveError> {
    let d = prepare_bilayer(b)?.dispersion(2)?;
    Ok(move |k: f64| d.omega(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigma_only() -> BilayerSpec {
        BilayerSpec::model1((500.0, 1e5), (2e6, 2e6), 0.2, 0.1, 0.05)
    }

    #[test]
    fn sigma_only_pde_matches_closed_form() {
        let b = sigma_only();
        let prep = prepare_bilayer(&b).unwrap();
        let pde = prep.pde(2).unwrap();
        let beta1 = 0.050_750_993_207_740_63;
        let beta2 = crate::cell::bilayer_closed_forms(&b).beta2;
        let s0 = 1.0 / (0.2 / 500.0 + 0.8 / 1e5);
        let (h, v, g) = (0.1, 0.05, 2e6);
        let want = [g, 0.0, -(s0 + h * h * v * v * g * g * beta2), -2.0 * h * h * v * g * beta1, -h * h * g * beta1];
        for (a, b) in pde.coeffs().iter().zip(want) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "{a} vs {b}");
        }
        let k = 7.0;
        let w = pde.omega(k);
        let den = 1.0 + h * h * beta1 * k * k;
        assert!((w.re - 2.0 * v * h * h * beta1 * k.powi(3) / den).abs() < 1e-12 * w.norm());
        assert!((w.im - (s0 + h * h * v * v * g * g * beta2) * k * k / (g * den)).abs() < 1e-12 * w.norm());
    }

    #[test]
    fn cascade_agrees_with_single_equation_to_second_order() {
        // same physics, tiny cell: order-2 laws differ only at O(h⁴)
        let b = sigma_only().with_h(1e-3);
        let prep = prepare_bilayer(&b).unwrap();
        let pde = prep.pde(2).unwrap();
        let casc = EffectiveDispersion {
            order: 2,
            variant: PdeVariant::CascadeGeneral,
            law: DispersionLaw::Cascade { chain: prep.cascade(), scales: prep.problem.scales },
        };
        for k in [1.0, 3.0, 10.0] {
            let (a, c) = (pde.omega(k), casc.omega(k));
            let o0 = prep.dispersion(0).unwrap().omega(k);
            // the order-2 correction itself is resolved to high relative accuracy
            assert!((a - c).norm() <= 1e-4 * (a - o0).norm(), "k={k}: {a} vs {c}");
        }
    }

    #[test]
    fn density_cascade_agrees_with_single_equation() {
        let b = BilayerSpec::model2((190.0, 190.0), (2e3, 1.4e3), 1000.0, 0.3, 1e-4, 5e-3);
        let prep = prepare_bilayer(&b).unwrap();
        assert_eq!(prep.modulation, Modulation::DensityOnly);
        let pde = prep.pde(2).unwrap();
        let casc = EffectiveDispersion {
            order: 2,
            variant: PdeVariant::CascadeGeneral,
            law: DispersionLaw::Cascade { chain: prep.cascade(), scales: prep.problem.scales },
        };
        let o0 = prep.dispersion(0).unwrap();
        for k in [10.0, 100.0] {
            let (a, c) = (pde.omega(k), casc.omega(k));
            assert!((a - c).norm() <= 1e-4 * (a - o0.omega(k)).norm(), "k={k}: {a} vs {c}");
        }
    }

    #[test]
    fn leading_order_advection_sign() {
        let b = BilayerSpec::model1((10.0, 190.0), (2e6, 1.4e6), 0.3, 0.02, 5e-3);
        let d = prepare_bilayer(&b).unwrap().dispersion(0).unwrap();
        let w = d.omega(3.0);
        assert!(w.re < 0.0 && w.im > 0.0);
        assert_eq!(d.omega(0.0), C64::new(0.0, 0.0));
        let wm = d.omega(-3.0);
        assert!((wm.re + w.re).abs() < 1e-15 * w.norm() && (wm.im - w.im).abs() < 1e-15 * w.norm());
    }

    #[test]
    fn static_laminates_are_reciprocal() {
        for b in [
            BilayerSpec::model1((10.0, 190.0), (2e6, 1.4e6), 0.3, 0.1, 0.0),
            sigma_only().with_v_m(0.0),
        ] {
            let prep = prepare_bilayer(&b).unwrap();
            for order in 0..=2 {
                let d = prep.dispersion(order).unwrap();
                for k in [0.5, 2.0, 9.0] {
                    assert!(d.omega(k).re.abs() <= 1e-14 * d.omega(k).norm());
                }
            }
        }
    }

    #[test]
    fn cascade_mode_evolution() {
        let prep = prepare_bilayer(&BilayerSpec::model1((10.0, 190.0), (2e6, 1.4e6), 0.3, 0.1, 5e-3)).unwrap();
        let ch = prep.cascade();
        let zero = C64::new(0.0, 0.0);
        let out = ch.evolve_mode(1.3, 0.7, [zero, zero, zero]);
        assert!(out.iter().all(|z| z.norm() == 0.0));
        // each level solves its forced equation: check by finite differences in t
        let k = 1.3;
        let init = [C64::new(1.0, 0.0), zero, zero];
        let dt = 1e-6;
        let t = 0.4;
        let a = ch.evolve_mode(k, t - dt, init);
        let b = ch.evolve_mode(k, t + dt, init);
        let m = ch.evolve_mode(k, t, init);
        let l = ch.lambda(k);
        let d1 = (b[1] - a[1]) / (2.0 * dt);
        assert!((d1 - (l * m[1] + ch.f_symbol(k) * m[0] / ch.gamma0)).norm() < 1e-6 * d1.norm().max(1.0));
        let d2 = (b[2] - a[2]) / (2.0 * dt);
        let rhs = l * m[2] + (ch.f_symbol(k) * m[1] + ch.e_symbol(k) * m[0]) / ch.gamma0;
        assert!((d2 - rhs).norm() < 1e-6 * d2.norm().max(1.0));
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let prep = prepare_bilayer(&BilayerSpec::model1((10.0, 190.0), (2e6, 1.4e6), 0.3, 0.1, 5e-3)).unwrap();
        let e = assemble_pde(prep.coefficients(), &prep.problem, PdeVariant::SigmaOnlyOrder2);
        assert!(matches!(e, Err(EffectiveError::VariantMismatch { .. })));
    }
}
