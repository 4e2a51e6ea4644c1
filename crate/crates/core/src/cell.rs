//! Periodic cell problems `∂y[σX′ + G] = H` and the effective coefficients built from their solutions.
//!
//! Everything here works on the scaled problem. Correctors of piecewise-constant
//! laminates are piecewise polynomials, so every mean is exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cellfn::{CellFnError, UnitCellFunction as Ucf};
use crate::laminate::{BilayerCapacity, BilayerSpec, Model, NondimProblem};

/// Largest admissible `|⟨H⟩|` for an O(1) source.
pub const SOLVABILITY_TOL: f64 = 1e-10;

/// Profiles whose pieces agree to this relative tolerance count as constant.
pub const CONSTANT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error("cell problem `{name}` is not solvable: ⟨H⟩ = {mean:e} exceeds {tol:e}")]
    Solvability { name: String, mean: f64, tol: f64 },
    #[error("conductivity must be piecewise constant and strictly positive")]
    BadConductivity,
    #[error("both capacity and conductivity are modulated; use the full second-order sources instead")]
    BothModulated,
    #[error("neither parameter is modulated; the medium is reciprocal")]
    NothingModulated,
    #[error("{0}")]
    WrongModel(&'static str),
    #[error(transparent)]
    CellFn(#[from] CellFnError),
}

#[derive(Debug, Clone)]
pub struct CellProblem {
    pub name: String,
    pub sigma: Ucf,
    pub flux_offset: Ucf,
    pub source: Ucf,
}

impl CellProblem {
    pub fn new(name: &str, sigma: &Ucf, flux_offset: Ucf, source: Ucf) -> Result<Self, CellError> {
        if !sigma.is_piecewise_constant() || !(sigma.min_value() > 0.0) {
            return Err(CellError::BadConductivity);
        }
        let mean = source.mean();
        let tol = SOLVABILITY_TOL * source.max_abs().max(1.0);
        if !(mean.abs() <= tol) {
            return Err(CellError::Solvability { name: name.to_string(), mean, tol });
        }
        Ok(Self { name: name.to_string(), sigma: sigma.clone(), flux_offset, source })
    }
}

/// A corrector together with its derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrector {
    pub value: Ucf,
    pub derivative: Ucf,
}

impl Corrector {
    pub fn zero() -> Self {
        Self { value: Ucf::zero(), derivative: Ucf::zero() }
    }
}

/// Zero-mean periodic solution with continuous flux `σX′ + G`.
pub fn solve_cell(problem: &CellProblem) -> Result<Corrector, CellError> {
    let sigma = &problem.sigma;
    let flux = problem.source.antiderivative().sub(&problem.flux_offset);
    let inv = sigma.recip()?;
    let c0 = -flux.div_piecewise_constant(sigma)?.mean() / inv.mean();
    let derivative = flux.add_constant(c0).div_piecewise_constant(sigma)?;
    let value = derivative.antiderivative().zero_mean();
    Ok(Corrector { value, derivative })
}

fn solve(name: &str, sigma: &Ucf, g: Ucf, h: Ucf) -> Result<Corrector, CellError> {
    solve_cell(&CellProblem::new(name, sigma, g, h)?)
}

fn mean2(a: &Ucf, b: &Ucf) -> Result<f64, CellError> {
    Ok(a.mean_of_product(b)?)
}

fn mean3(a: &Ucf, b: &Ucf, c: &Ucf) -> Result<f64, CellError> {
    Ok(a.mul(b)?.mean_of_product(c)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Order0 {
    pub gamma0: f64,
    pub sigma0: f64,
    pub w0: f64,
}

/// P and Q.
pub fn correctors_order1(sigma: &Ucf, gamma: &Ucf, v: f64) -> Result<(Corrector, Corrector), CellError> {
    let p = solve("P", sigma, sigma.clone(), Ucf::zero())?;
    let q = if v == 0.0 { Corrector::zero() } else { solve("Q", sigma, gamma.scale(v), Ucf::zero())? };
    Ok((p, q))
}

pub fn effective_order0(sigma: &Ucf, gamma: &Ucf, p: &Corrector, q: &Corrector) -> Result<Order0, CellError> {
    Ok(Order0 {
        gamma0: gamma.mean(),
        sigma0: mean2(sigma, &p.derivative.add_constant(1.0))?,
        w0: mean2(sigma, &q.derivative)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model1Correctors {
    pub p: Corrector,
    pub q: Corrector,
    pub r: Corrector,
    pub s: Corrector,
    pub v: Corrector,
    pub a: Corrector,
    pub l: Corrector,
    pub m_corr: Corrector,
    pub n: Corrector,
    pub o: Corrector,
    pub b: Corrector,
    pub c: Corrector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderSources {
    pub d_xx: f64,
    pub d_x: f64,
    pub a_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderSources {
    pub e_xxx: f64,
    pub e_txx: f64,
    pub e_tx: f64,
    pub e_tt: f64,
    pub e_xx: f64,
    pub e_x: f64,
    pub e_t: f64,
    pub b_xx: f64,
    pub b_x: f64,
    pub b_t: f64,
    pub b_0: f64,
}

/// R, S, V, A.
pub fn correctors_order2(
    sigma: &Ucf,
    gamma: &Ucf,
    v: f64,
    p: &Corrector,
    q: &Corrector,
    o: &Order0,
) -> Result<[Corrector; 4], CellError> {
    let sp = sigma.mul(&p.value)?;
    let g_r = gamma.mul(&p.value)?.scale(v).add(&sigma.mul(&q.value)?).axpy(-o.w0 / o.sigma0, &sp);
    let h_r = sigma.mul(&q.derivative)?.scale(-1.0).add_constant(o.w0);
    let r = solve("R", sigma, g_r, h_r)?;
    let s = solve("S", sigma, sp.scale(o.gamma0 / o.sigma0), gamma.add_constant(-o.gamma0))?;
    let vv = if v == 0.0 {
        Corrector::zero()
    } else {
        solve("V", sigma, gamma.mul(&q.value)?.scale(v), Ucf::zero())?
    };
    let a = solve("A", sigma, sp.scale(-1.0 / o.sigma0), Ucf::zero())?;
    Ok([r, s, vv, a])
}

pub fn first_order_sources(
    sigma: &Ucf,
    gamma: &Ucf,
    p: &Corrector,
    q: &Corrector,
    r: &Corrector,
    vv: &Corrector,
    o: &Order0,
) -> Result<FirstOrderSources, CellError> {
    let gq = mean2(gamma, &q.value)?;
    Ok(FirstOrderSources {
        d_xx: mean2(sigma, &q.value.add(&r.derivative))? - o.w0 / o.sigma0 * mean2(sigma, &p.value)?
            - o.sigma0 / o.gamma0 * gq,
        d_x: mean2(sigma, &vv.derivative)? - o.w0 / o.gamma0 * gq,
        a_f: -gq / o.gamma0,
    })
}

/// Full Model 1 homogenization of a scaled problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model1Result {
    pub correctors: Model1Correctors,
    pub order0: Order0,
    pub first: FirstOrderSources,
    pub c1: f64,
    pub c2: f64,
    pub second: SecondOrderSources,
}

pub fn homogenize_model1(sigma: &Ucf, gamma: &Ucf, v: f64) -> Result<Model1Result, CellError> {
    let (p, q) = correctors_order1(sigma, gamma, v)?;
    let o = effective_order0(sigma, gamma, &p, &q)?;
    let [r, s, vv, a] = correctors_order2(sigma, gamma, v, &p, &q, &o)?;
    let first = first_order_sources(sigma, gamma, &p, &q, &r, &vv, &o)?;

    let (s0, g0, w0) = (o.sigma0, o.gamma0, o.w0);
    let sp = sigma.mul(&p.value)?;
    let gq_fn = gamma.mul(&q.value)?;
    let gq = gq_fn.mean();
    let c1 = -mean2(sigma, &q.value.add(&r.derivative))? / s0 + w0 / (s0 * s0) * sp.mean() + gq / g0;
    let c2 = -v / s0 * gq_fn.mean_of_product(&p.derivative)? + w0 / (g0 * s0) * gq;

    let vg = gamma.scale(v);
    let g_l = sigma.mul(&r.value)?.add(&vg.mul(&s.value)?.scale(s0 / g0)).axpy(c1, &sp);
    let h_l = sigma
        .mul(&q.value.add(&r.derivative))?
        .scale(-1.0)
        .axpy(w0 / s0, &sp)
        .axpy(s0 / g0, &gq_fn)
        .add_constant(-s0 * c1);
    let l = solve("L", sigma, g_l, h_l)?;

    let g_n = sigma
        .mul(&vv.value.axpy(c2, &p.value))?
        .add(&vg.mul(&r.value.axpy(w0 / g0, &s.value))?);
    let h_n = sigma.mul(&vv.derivative)?.scale(-1.0).axpy(w0 / g0, &gq_fn).add_constant(-s0 * c2);
    let n = solve("N", sigma, g_n, h_n)?;

    let h_m = sigma
        .mul(&s.derivative)?
        .scale(-1.0)
        .add(&gamma.mul(&p.value)?)
        .axpy(-g0 / s0, &sp);
    let m_corr = solve("M", sigma, sigma.mul(&s.value)?, h_m)?;

    let o_corr = if v == 0.0 { Corrector::zero() } else { solve("O", sigma, vg.mul(&vv.value)?, Ucf::zero())? };

    let g_b = sp.scale(gq / (g0 * s0)).add(&vg.mul(&a.value.axpy(1.0 / g0, &s.value))?);
    let h_b = gq_fn.scale(1.0 / g0).add_constant(-gq / g0);
    let b = solve("B", sigma, g_b, h_b)?;

    let h_c = sigma.mul(&a.derivative)?.scale(-1.0).axpy(1.0 / s0, &sp);
    let c = solve("C", sigma, sigma.mul(&a.value)?, h_c)?;

    let msp = sp.mean();
    let second = SecondOrderSources {
        e_xxx: mean2(sigma, &r.value)? + mean2(sigma, &l.derivative)? + msp * c1,
        e_txx: mean2(sigma, &s.value)? + mean2(sigma, &m_corr.derivative)?,
        e_tx: -mean2(gamma, &r.value)?,
        e_tt: -mean2(gamma, &s.value)?,
        e_xx: mean2(sigma, &vv.value)? + mean2(sigma, &n.derivative)? + gq * s0 / g0 * c1 + msp * c2,
        e_x: mean2(sigma, &o_corr.derivative)? + gq * s0 / g0 * c2,
        e_t: -mean2(gamma, &vv.value)?,
        b_xx: mean2(sigma, &a.value)? + mean2(sigma, &c.derivative)?,
        b_x: mean2(sigma, &b.derivative)? + msp * gq / (g0 * s0),
        b_t: -mean2(gamma, &a.value)?,
        b_0: gq * gq / (g0 * g0),
    };

    Ok(Model1Result {
        correctors: Model1Correctors { p, q, r, s, v: vv, a, l, m_corr, n, o: o_corr, b, c },
        order0: o,
        first,
        c1,
        c2,
        second,
    })
}

/// Which single parameter carries the modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonReciprocityKind {
    CapacityOnly,
    ConductivityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonReciprocity {
    pub kind: NonReciprocityKind,
    pub assembled: f64,
    pub closed_form: f64,
}

/// Single-parameter non-reciprocity coefficient in its assembled and closed forms.
pub fn nonreciprocity_model1(sigma: &Ucf, gamma: &Ucf, v: f64, res: &Model1Result) -> Result<NonReciprocity, CellError> {
    let sc = sigma.is_constant(CONSTANT_TOL);
    let gc = gamma.is_constant(CONSTANT_TOL);
    let k = &res.correctors;
    match (sc, gc) {
        (true, true) => Err(CellError::NothingModulated),
        (false, false) => Err(CellError::BothModulated),
        (true, false) => {
            let assembled = -mean2(gamma, &k.r.value)?;
            let closed_form = if v == 0.0 { 0.0 } else { 2.0 / v * mean2(&k.q.value, &k.q.value)? };
            Ok(NonReciprocity { kind: NonReciprocityKind::CapacityOnly, assembled, closed_form })
        }
        (false, true) => {
            let assembled = mean2(sigma, &k.r.value)? + mean2(sigma, &k.l.derivative)?
                - mean2(sigma, &k.p.value)? * mean2(sigma, &k.r.derivative)? / res.order0.sigma0;
            let closed_form = 2.0 * v * mean2(&k.p.value, &k.p.value)?;
            Ok(NonReciprocity { kind: NonReciprocityKind::ConductivityOnly, assembled, closed_form })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model2Correctors {
    pub p: Corrector,
    pub s: Corrector,
    pub a: Corrector,
    pub m_corr: Corrector,
    pub c: Corrector,
    pub r_adv: Corrector,
    pub l_adv: Corrector,
    pub n_adv_corr: Corrector,
    pub b_adv: Corrector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model2Result {
    pub correctors: Model2Correctors,
    pub order0: Order0,
    pub rho0: f64,
    pub e_txx: f64,
    pub e_xx: f64,
    pub n_adv: f64,
    pub n_adv_reduced: f64,
    pub b_t: f64,
    pub b_xx: f64,
    pub b_x: f64,
}

/// Density-modulated homogenization (`γ = cρ`).
pub fn homogenize_model2(sigma: &Ucf, rho: &Ucf, c: f64, v: f64) -> Result<Model2Result, CellError> {
    let gamma = rho.scale(c);
    let rho0 = rho.mean();
    let p = solve("P", sigma, sigma.clone(), Ucf::zero())?;
    let s0 = mean2(sigma, &p.derivative.add_constant(1.0))?;
    let g0 = c * rho0;
    let sp = sigma.mul(&p.value)?;
    let drho = rho.add_constant(-rho0);

    let s = solve("S", sigma, sp.scale(g0 / s0), gamma.add_constant(-g0))?;
    let a = solve("A", sigma, sp.scale(-1.0 / s0), Ucf::zero())?;
    let h_m = sigma.mul(&s.derivative)?.scale(-1.0).add(&gamma.mul(&p.value)?).axpy(-g0 / s0, &sp);
    let m_corr = solve("M", sigma, sigma.mul(&s.value)?, h_m)?;
    let h_c = sigma.mul(&a.derivative)?.scale(-1.0).axpy(1.0 / s0, &sp);
    let c_corr = solve("C", sigma, sigma.mul(&a.value)?, h_c)?;

    let r_adv = solve("R_adv", sigma, p.value.scale(v * c * rho0), drho.scale(c * v))?;
    let h_l = drho.mul(&p.value)?.scale(c * v).sub(&sigma.mul(&r_adv.derivative)?);
    let l_adv = solve("L_adv", sigma, s.value.scale(v * s0).add(&sigma.mul(&r_adv.value)?), h_l)?;
    let n_adv_corr = solve("N_adv", sigma, r_adv.value.scale(rho0 * c * v), Ucf::zero())?;
    let h_b = a.derivative.scale(-v * rho0 * c).axpy(-v, &s.derivative);
    let b_adv = solve("B_adv", sigma, Ucf::zero(), h_b)?;

    let rs = mean2(rho, &s.value)?;
    let rr = mean2(rho, &r_adv.value)?;
    let ra = mean2(rho, &a.value)?;
    let n_adv = -s0 / rho0 * rr - v * s0 / rho0 * rs + mean2(sigma, &r_adv.value)? + mean2(sigma, &l_adv.derivative)?;
    let n_adv_reduced = n_adv_reduced_formula(sigma, rho, c, v, &p.value, s0)?;

    Ok(Model2Result {
        e_txx: -s0 / rho0 * rs + mean2(sigma, &s.value)? + mean2(sigma, &m_corr.derivative)?,
        e_xx: -c * v * rr + mean2(sigma, &n_adv_corr.derivative)?,
        n_adv,
        n_adv_reduced,
        b_t: -rs / rho0 - c * ra,
        b_xx: mean2(sigma, &c_corr.derivative)? + mean2(sigma, &a.value)?,
        b_x: -rr / rho0 - c * v * ra + mean2(sigma, &b_adv.derivative)? - v / rho0 * rs,
        correctors: Model2Correctors { p, s, a, m_corr, c: c_corr, r_adv, l_adv, n_adv_corr, b_adv },
        order0: Order0 { gamma0: g0, sigma0: s0, w0: 0.0 },
        rho0,
    })
}

/// Reduced moment formula for 𝒩_adv, evaluated with `⟨1/σ⟩ = 1` and mapped back.
fn n_adv_reduced_formula(sigma: &Ucf, rho: &Ucf, c: f64, v: f64, p: &Ucf, sigma0: f64) -> Result<f64, CellError> {
    // rescaling σ → σ/σ0 and v → v/σ0 enforces ⟨1/σ⟩ = 1; P is unchanged.
    let sn = sigma.scale(1.0 / sigma0);
    let vn = v / sigma0;
    let rho0 = rho.mean();
    let j = rho.add_constant(-rho0).antiderivative();
    let inv = sn.recip()?;
    let var = mean3(&j, &j, &inv)? - mean2(&inv, &j)?.powi(2);
    let red = 2.0 * c * vn / rho0 * var + 2.0 * c * vn * mean3(rho, p, p)? - 4.0 * c * vn * mean2(p, &j)?;
    Ok(sigma0 * red)
}

/// Every homogenized scalar for one scaled problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoefficients {
    pub gamma0: f64,
    pub sigma0: f64,
    #[serde(rename = "W0")]
    pub w0: f64,
    pub d_xx: f64,
    pub d_x: f64,
    pub a_f: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub e_xxx: f64,
    pub e_txx: f64,
    pub e_tx: f64,
    pub e_tt: f64,
    pub e_xx: f64,
    pub e_x: f64,
    pub e_t: f64,
    pub b_xx: f64,
    pub b_x: f64,
    pub b_t: f64,
    pub b_0: f64,
    #[serde(rename = "N_gamma")]
    pub n_gamma: Option<f64>,
    #[serde(rename = "N_sigma")]
    pub n_sigma: Option<f64>,
    #[serde(rename = "N_adv")]
    pub n_adv: Option<f64>,
    /// ⟨P²⟩ (dimensionless).
    pub beta1: f64,
    /// ⟨P²/σ⟩/σ*, in units of inverse conductivity.
    pub beta2: f64,
    /// ρ*²⟨(σS′/c)²⟩ for density cells with constant conductivity.
    pub beta3: Option<f64>,
    pub rho0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Correctors {
    Model1(Box<Model1Correctors>),
    Model2(Box<Model2Correctors>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Homogenization {
    pub coefficients: EffectiveCoefficients,
    pub correctors: Correctors,
    pub nonreciprocity: Option<NonReciprocity>,
    pub model1: Option<Model1Result>,
    pub model2: Option<Model2Result>,
}

/// Runs the full pipeline matching the problem's model.
pub fn homogenize(problem: &NondimProblem) -> Result<Homogenization, CellError> {
    let sigma = &problem.sigma;
    match problem.model {
        Model::Model1 => {
            let res = homogenize_model1(sigma, &problem.gamma, problem.v)?;
            let nr = nonreciprocity_model1(sigma, &problem.gamma, problem.v, &res).ok();
            let k = &res.correctors;
            let beta1 = mean2(&k.p.value, &k.p.value)?;
            let beta2 = mean3(&k.p.value, &k.p.value, &sigma.recip()?)? / problem.scales.sigma_star;
            let (n_gamma, n_sigma) = match nr {
                Some(NonReciprocity { kind: NonReciprocityKind::CapacityOnly, assembled, .. }) => (Some(assembled), None),
                Some(NonReciprocity { kind: NonReciprocityKind::ConductivityOnly, assembled, .. }) => (None, Some(assembled)),
                None => (None, None),
            };
            let s2 = &res.second;
            let coefficients = EffectiveCoefficients {
                gamma0: res.order0.gamma0,
                sigma0: res.order0.sigma0,
                w0: res.order0.w0,
                d_xx: res.first.d_xx,
                d_x: res.first.d_x,
                a_f: res.first.a_f,
                c1: res.c1,
                c2: res.c2,
                e_xxx: s2.e_xxx,
                e_txx: s2.e_txx,
                e_tx: s2.e_tx,
                e_tt: s2.e_tt,
                e_xx: s2.e_xx,
                e_x: s2.e_x,
                e_t: s2.e_t,
                b_xx: s2.b_xx,
                b_x: s2.b_x,
                b_t: s2.b_t,
                b_0: s2.b_0,
                n_gamma,
                n_sigma,
                n_adv: None,
                beta1,
                beta2,
                beta3: None,
                rho0: None,
            };
            Ok(Homogenization {
                coefficients,
                correctors: Correctors::Model1(Box::new(res.correctors.clone())),
                nonreciprocity: nr,
                model1: Some(res),
                model2: None,
            })
        }
        Model::Model2 => {
            let (rho, c) = match (&problem.rho, problem.c) {
                (Some(r), Some(c)) => (r, c),
                _ => return Err(CellError::WrongModel("density pipeline requires a density profile")),
            };
            let res = homogenize_model2(sigma, rho, c, problem.v)?;
            let k = &res.correctors;
            let beta1 = mean2(&k.p.value, &k.p.value)?;
            let beta2 = mean3(&k.p.value, &k.p.value, &sigma.recip()?)? / problem.scales.sigma_star;
            let beta3 = if sigma.is_constant(CONSTANT_TOL) {
                let rs = problem.rho_star().unwrap_or(1.0);
                let f = sigma.mul(&k.s.derivative)?.scale(1.0 / c);
                Some(rs * rs * mean2(&f, &f)?)
            } else {
                None
            };
            let coefficients = EffectiveCoefficients {
                gamma0: res.order0.gamma0,
                sigma0: res.order0.sigma0,
                w0: 0.0,
                d_xx: 0.0,
                d_x: 0.0,
                a_f: 0.0,
                c1: 0.0,
                c2: 0.0,
                e_xxx: res.n_adv,
                e_txx: res.e_txx,
                e_tx: 0.0,
                e_tt: 0.0,
                e_xx: res.e_xx,
                e_x: 0.0,
                e_t: 0.0,
                b_xx: res.b_xx,
                b_x: res.b_x,
                b_t: res.b_t,
                b_0: 0.0,
                n_gamma: None,
                n_sigma: None,
                n_adv: Some(res.n_adv),
                beta1,
                beta2,
                beta3,
                rho0: Some(res.rho0),
            };
            Ok(Homogenization {
                coefficients,
                correctors: Correctors::Model2(Box::new(res.correctors.clone())),
                nonreciprocity: None,
                model1: None,
                model2: Some(res),
            })
        }
    }
}

/// Bilayer closed forms; β₁ dimensionless, β₂ in 1/σ̄, β₃ in ρ̄².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilayerBetas {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: Option<f64>,
}

pub fn bilayer_closed_forms(b: &BilayerSpec) -> BilayerBetas {
    let (sa, sb, phi) = (b.sigma_a, b.sigma_b, b.phi);
    let d = sa * (1.0 - phi) + sb * phi;
    let num = (sa - sb).powi(2) * (1.0 - phi).powi(2) * phi * phi;
    let beta3 = match b.capacity {
        BilayerCapacity::Densities { rho_a, rho_b, .. } => {
            Some((rho_a - rho_b).powi(2) * (1.0 - phi).powi(2) * phi * phi / 12.0)
        }
        BilayerCapacity::Capacities { .. } => None,
    };
    BilayerBetas { beta1: num / (12.0 * d * d), beta2: num / (12.0 * sa * sb * d), beta3 }
}

/// One checked relation between two computed quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
}

fn check(out: &mut Vec<IdentityCheck>, name: &str, lhs: f64, rhs: f64) {
    out.push(IdentityCheck { name: name.to_string(), lhs, rhs });
}

/// Largest pointwise deviation between two cell functions, over breakpoints and interior samples.
pub fn sup_distance(a: &Ucf, b: &Ucf) -> f64 {
    let d = a.sub(b);
    d.max_abs()
}

fn is_unit(f: &Ucf) -> bool {
    f.is_constant(CONSTANT_TOL) && (f.eval(0.0) - 1.0).abs() <= CONSTANT_TOL
}

/// Integration-by-parts and pointwise relations of the Model 1 correctors.
pub fn model1_identities(sigma: &Ucf, gamma: &Ucf, v: f64, res: &Model1Result) -> Result<Vec<IdentityCheck>, CellError> {
    let k = &res.correctors;
    let o = &res.order0;
    let (s0, g0, w0) = (o.sigma0, o.gamma0, o.w0);
    let (p, q) = (&k.p.value, &k.q.value);
    let dp = &k.p.derivative;
    let mut out = Vec::new();

    let flux = sigma.mul(&dp.add_constant(1.0))?;
    check(&mut out, "flux sigma(P'+1) equals sigma0 pointwise", sup_distance(&flux, &Ucf::constant(s0)), 0.0);
    check(&mut out, "sigma0 equals harmonic mean", s0, 1.0 / sigma.recip()?.mean());
    check(&mut out, "W0 from sigma Q' equals v<gamma P'>", w0, v * mean2(gamma, dp)?);
    check(&mut out, "<sigma R'> by parts", mean2(sigma, &k.r.derivative)?,
        v * mean3(gamma, p, dp)? + mean3(sigma, q, dp)? + w0 / s0 * mean2(sigma, p)? - mean3(sigma, &k.q.derivative, p)?);
    check(&mut out, "<sigma S'> by parts", mean2(sigma, &k.s.derivative)?, mean2(gamma, p)? - g0 / s0 * mean2(sigma, p)?);
    check(&mut out, "<sigma V'> by parts", mean2(sigma, &k.v.derivative)?, v * mean3(gamma, q, dp)?);
    check(&mut out, "<sigma A'> by parts", mean2(sigma, &k.a.derivative)?, mean2(sigma, p)? / s0);
    check(&mut out, "<sigma P P'> equals -<sigma P>", mean3(sigma, p, dp)?, -mean2(sigma, p)?);

    for (name, c) in [
        ("P", &k.p), ("Q", &k.q), ("R", &k.r), ("S", &k.s), ("V", &k.v), ("A", &k.a),
        ("L", &k.l), ("M", &k.m_corr), ("N", &k.n), ("O", &k.o), ("B", &k.b), ("C", &k.c),
    ] {
        check(&mut out, &format!("corrector {name} has zero mean"), c.value.mean(), 0.0);
        check(&mut out, &format!("corrector {name} is continuous"), c.value.max_jump(), 0.0);
    }

    if is_unit(sigma) {
        check(&mut out, "<gamma Q> vanishes for unit conductivity", mean2(gamma, q)?, 0.0);
        check(&mut out, "R' equals -2Q for unit conductivity", sup_distance(&k.r.derivative, &q.scale(-2.0)), 0.0);
        if v != 0.0 {
            let rebuilt = k.q.derivative.scale(-1.0 / v).add_constant(g0);
            check(&mut out, "gamma equals gamma0 - Q'/v for unit conductivity", sup_distance(gamma, &rebuilt), 0.0);
            check(&mut out, "N_gamma equals (2/v)<Q^2>", -mean2(gamma, &k.r.value)?, 2.0 / v * mean2(q, q)?);
        }
    }
    if is_unit(gamma) {
        let rd = &k.r.derivative;
        let sd = &k.s.derivative;
        let inv = sigma.recip()?;
        check(&mut out, "S' equals -P/sigma0 for unit capacity", sup_distance(sd, &p.scale(-1.0 / s0)), 0.0);
        check(&mut out, "<P/sigma> vanishes for unit capacity", mean2(p, &inv)?, 0.0);
        check(&mut out, "<sigma L'> by parts for unit capacity", mean2(sigma, &k.l.derivative)?,
            mean3(sigma, &k.r.value, dp)? - mean3(sigma, rd, p)? - s0 * v * mean2(sd, p)?
                + mean2(sigma, rd)? * mean2(sigma, p)? / s0);
        check(&mut out, "<sigma R' P> equals -v<P^2>", mean3(sigma, rd, p)?, -v * mean2(p, p)?);
        check(&mut out, "<sigma P' R> equals -<sigma R>", mean3(sigma, dp, &k.r.value)?, -mean2(sigma, &k.r.value)?);
        check(&mut out, "<sigma M'> by parts for unit capacity", mean2(sigma, &k.m_corr.derivative)?,
            mean3(sigma, &k.s.value, dp)? - mean3(sigma, sd, p)? + mean2(p, p)? - mean3(sigma, p, p)? / s0);
        check(&mut out, "<sigma S> + <sigma M'> equals <P^2>",
            mean2(sigma, &k.s.value)? + mean2(sigma, &k.m_corr.derivative)?, mean2(p, p)?);
        check(&mut out, "<sigma N'> equals -v<P R'>", mean2(sigma, &k.n.derivative)?, -v * mean2(p, rd)?);
        check(&mut out, "<sigma N'> equals v^2<P^2/sigma>", mean2(sigma, &k.n.derivative)?, v * v * mean3(p, p, &inv)?);
        let rd_formula = p.scale(-1.0).mul(&inv)?.scale(v);
        check(&mut out, "R' equals -vP/sigma for unit capacity", sup_distance(rd, &rd_formula), 0.0);
        let explicit = explicit_p(sigma)?;
        check(&mut out, "P matches its explicit integral form", sup_distance(p, &explicit), 0.0);
        let n_sigma = mean2(sigma, &k.r.value)? + mean2(sigma, &k.l.derivative)? - mean2(sigma, p)? * mean2(sigma, rd)? / s0;
        check(&mut out, "N_sigma equals 2v<P^2>", n_sigma, 2.0 * v * mean2(p, p)?);
    }
    Ok(out)
}

/// `P(y) = σ0∫₀^y 1/σ − y − σ0∫₀^1∫₀^s 1/σ + 1/2`.
pub fn explicit_p(sigma: &Ucf) -> Result<Ucf, CellError> {
    let inv = sigma.recip()?;
    let s0 = 1.0 / inv.mean();
    let i1 = inv.antiderivative();
    let y = Ucf::from_pieces(vec![0.0, 1.0], vec![vec![0.0, 1.0]])?;
    Ok(i1.scale(s0).sub(&y).add_constant(-s0 * i1.mean() + 0.5))
}

/// Relations of the density-cell correctors.
pub fn model2_identities(sigma: &Ucf, rho: &Ucf, c: f64, v: f64, res: &Model2Result) -> Result<Vec<IdentityCheck>, CellError> {
    let k = &res.correctors;
    let p = &k.p.value;
    let dp = &k.p.derivative;
    let rho0 = res.rho0;
    let mut out = Vec::new();
    check(&mut out, "N_adv assembled equals reduced formula", res.n_adv, res.n_adv_reduced);
    let drho = rho.add_constant(-rho0);
    check(&mut out, "<sigma R_adv'> by parts", mean2(sigma, &k.r_adv.derivative)?, c * v * mean2(&drho, p)?);
    check(&mut out, "<sigma N_adv'> by parts", mean2(sigma, &k.n_adv_corr.derivative)?, rho0 * c * v * mean2(&k.r_adv.value, dp)?);
    for (name, cc) in [("R_adv", &k.r_adv), ("L_adv", &k.l_adv), ("N_adv", &k.n_adv_corr), ("B_adv", &k.b_adv)] {
        check(&mut out, &format!("corrector {name} has zero mean"), cc.value.mean(), 0.0);
        check(&mut out, &format!("corrector {name} is continuous"), cc.value.max_jump(), 0.0);
    }
    if rho.is_constant(CONSTANT_TOL) {
        check(&mut out, "N_adv equals 2cv rho0 <P^2> for constant density", res.n_adv, 2.0 * c * v * rho0 * mean2(p, p)?);
    }
    if sigma.is_constant(CONSTANT_TOL) {
        let j = drho.antiderivative();
        let var = mean2(&j, &j)? - j.mean().powi(2);
        check(&mut out, "N_adv equals (2cv/rho0) Var(int drho) for constant conductivity", res.n_adv, 2.0 * c * v / rho0 * var);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn trivial_problem_has_zero_solution() {
        let one = Ucf::constant(1.0);
        let x = solve_cell(&CellProblem::new("X", &one, Ucf::zero(), Ucf::zero()).unwrap()).unwrap();
        assert_eq!(x.value.max_abs(), 0.0);
    }

    #[test]
    fn unsolvable_source_is_rejected() {
        let one = Ucf::constant(1.0);
        let err = CellProblem::new("X", &one, Ucf::zero(), Ucf::constant(1e-6)).unwrap_err();
        assert!(matches!(err, CellError::Solvability { .. }));
    }

    #[test]
    fn bilayer_p_slopes() {
        // normalised so that sigma0 = 1: sigma = sigma_bar / 2450.98...
        let s0 = 1.0 / (0.2 / 500.0 + 0.8 / 1e5);
        let sigma = Ucf::two_phase(0.2, 500.0, 1e5).unwrap();
        let (p, _) = correctors_order1(&sigma, &Ucf::constant(1.0), 0.0).unwrap();
        assert!(rel(p.derivative.eval(0.1), s0 / 500.0 - 1.0) < 1e-12);
        assert!(rel(p.derivative.eval(0.6), s0 / 1e5 - 1.0) < 1e-12);
        assert!((p.derivative.eval(0.1) - 3.902).abs() < 1e-3);
        assert!((p.derivative.eval(0.6) + 0.9755).abs() < 1e-4);
        assert!(rel(p.value.mean_of_product(&p.value).unwrap(), 0.050_750_993_207_740_63) < 1e-9);
    }

    #[test]
    fn static_laminate_has_no_q() {
        let sigma = Ucf::two_phase(0.3, 1.0, 3.0).unwrap();
        let gamma = Ucf::two_phase(0.3, 2.0, 1.0).unwrap();
        let (_, q) = correctors_order1(&sigma, &gamma, 0.0).unwrap();
        assert_eq!(q.value.max_abs(), 0.0);
    }

    #[test]
    fn uniform_medium_has_no_higher_correctors() {
        let one = Ucf::constant(1.0);
        let res = homogenize_model1(&one, &one, 0.7).unwrap();
        let k = &res.correctors;
        for c in [&k.p, &k.q, &k.r, &k.s, &k.v, &k.a, &k.l, &k.m_corr, &k.n, &k.o, &k.b, &k.c] {
            assert!(c.value.max_abs() < 1e-15);
        }
        assert_eq!(res.first.d_xx, 0.0);
        assert_eq!(res.first.d_x, 0.0);
    }

    #[test]
    fn betas_match_moments() {
        let b = BilayerSpec::model1((500.0, 1e5), (1.0, 1.0), 0.2, 0.1, 0.05);
        let cf = bilayer_closed_forms(&b);
        let sigma = Ucf::two_phase(0.2, 500.0, 1e5).unwrap();
        let (p, _) = correctors_order1(&sigma, &Ucf::constant(1.0), 0.0).unwrap();
        assert!(rel(cf.beta1, p.value.mean_of_product(&p.value).unwrap()) < 1e-12);
        let p2s = p.value.mul(&p.value).unwrap().mean_of_product(&sigma.recip().unwrap()).unwrap();
        assert!(rel(cf.beta2, p2s) < 1e-12);
        let flat = bilayer_closed_forms(&BilayerSpec::model1((3.0, 3.0), (1.0, 2.0), 0.4, 0.1, 0.0));
        assert_eq!(flat.beta1, 0.0);
        assert_eq!(flat.beta2, 0.0);
    }

    #[test]
    fn beta3_literal_value() {
        let b = BilayerSpec::model2((190.0, 190.0), (2e6, 1.4e6), 1000.0, 0.2, 0.05, 5e-3);
        let beta3 = bilayer_closed_forms(&b).beta3.unwrap();
        assert!(rel(beta3, 7.68e8) < 1e-12);
    }
}
