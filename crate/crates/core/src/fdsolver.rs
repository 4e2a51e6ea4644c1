//! Crank–Nicolson integration of an [`EffectivePde`] on a periodic grid.
//!
//! All difference operators are circulant, so each step is an exact per-mode
//! division in Fourier space:
//! `(c_t + c_txx·D₂)(Θⁿ⁺¹ − Θⁿ)/dt = ½K(Θⁿ⁺¹ + Θⁿ) + Fⁿ⁺¹ᐟ²`,
//! `K = −c_x D₁ − c_xx D₂ − c_xxx D₃`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effective::EffectivePde;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdError {
    #[error("invalid simulation setting `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("implicit operator is singular for Fourier mode {mode}")]
    SingularMode { mode: usize },
    #[error("non-finite field after step {step}")]
    NonFinite { step: usize },
    #[error("energy audit needs an unforced equation")]
    Forced,
}

fn cfg(field: &'static str, reason: impl Into<String>) -> FdError {
    FdError::Config { field, reason: reason.into() }
}

/// `Θ(X, 0) = exp(−((X − x0)/ν)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianIc {
    pub x0: f64,
    pub nu: f64,
}

impl GaussianIc {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.x0) / self.nu;
        (-z * z).exp()
    }

    /// Sum over periodic images, matching `gaussian_reference` at `t = 0`.
    pub fn periodic(&self, x: f64, length: f64) -> f64 {
        (-3i32..=3).map(|i| self.eval(x + i as f64 * length)).sum()
    }
}

/// Grid on `[0, L)` with `x_j = jL/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub domain_length: f64,
    pub n_points: usize,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    pub ic: GaussianIc,
}

impl SimConfig {
    pub fn dx(&self) -> f64 {
        self.domain_length / self.n_points as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_points).map(|j| j as f64 * dx).collect()
    }

    /// Checks the configuration; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, FdError> {
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return Err(cfg("domain_length", "must be positive"));
        }
        if self.n_points < 8 || self.n_points % 2 != 0 {
            return Err(cfg("n_points", format!("must be even and at least 8, got {}", self.n_points)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(cfg("dt", "must be positive"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(cfg("t_end", "must be non-negative"));
        }
        if let Some(t) = self.snapshot_times.iter().find(|&&t| !(t >= 0.0 && t <= self.t_end)) {
            return Err(cfg("snapshot_times", format!("{t} lies outside [0, t_end]")));
        }
        if !(self.ic.nu > 0.0) {
            return Err(cfg("ic.nu", "must be positive"));
        }
        let mut warnings = Vec::new();
        if self.ic.nu < 8.0 * self.dx() {
            warnings.push(format!("pulse width {} is resolved by fewer than 8 points (dx = {})", self.ic.nu, self.dx()));
        }
        if self.domain_length < 40.0 * self.ic.nu {
            warnings.push(format!("box length {} is shorter than 40 pulse widths", self.domain_length));
        }
        Ok(warnings)
    }

    /// Step giving an advective Courant number of one half.
    pub fn courant_dt(pde: &EffectivePde, dx: f64) -> Option<f64> {
        let u = (pde.coeff_x / pde.coeff_t).abs();
        (u > 0.0).then(|| 0.5 * dx / u)
    }
}

/// `η = κh` of the dominant wavelength `≈ 6ν` of a Gaussian pulse.
pub fn pulse_eta(nu: f64, h: f64) -> f64 {
    PI * h / (3.0 * nu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mass: f64,
    pub energy: f64,
    pub centroid: f64,
    pub skewness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub time: f64,
    pub values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Per-step record kept for audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub diagnostics: Diagnostics,
    /// `c_xx ∫(∂XΘ)²` with a spectral derivative.
    pub dissipation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub snapshots: Vec<FieldState>,
    pub history: Vec<StepRecord>,
    pub warnings: Vec<String>,
    pub steps: usize,
}

/// Minimal-image offset in `[−L/2, L/2)`.
fn min_image(d: f64, l: f64) -> f64 {
    d - l * (d / l + 0.5).floor()
}

/// Mass, energy, periodic centroid and third central moment of a grid field.
pub fn diagnostics(pde: &EffectivePde, values: &[f64], length: f64) -> Diagnostics {
    let n = values.len();
    let dx = length / n as f64;
    let mass: f64 = values.iter().sum::<f64>() * dx;
    let mut energy = 0.0;
    for j in 0..n {
        let d = (values[(j + 1) % n] - values[j]) / dx;
        energy += pde.coeff_t * values[j] * values[j] - pde.coeff_txx * d * d;
    }
    energy *= 0.5 * dx;
    let (mut sc, mut ss) = (0.0, 0.0);
    for (j, &v) in values.iter().enumerate() {
        let a = 2.0 * PI * j as f64 / n as f64;
        sc += v * a.cos();
        ss += v * a.sin();
    }
    let mut c = (ss.atan2(sc) / (2.0 * PI)).rem_euclid(1.0) * length;
    let total: f64 = values.iter().sum();
    // refine the circular mean into the minimal-image first moment
    for _ in 0..3 {
        let m1: f64 = values.iter().enumerate().map(|(j, &v)| v * min_image(j as f64 * dx - c, length)).sum();
        c = (c + m1 / total).rem_euclid(length);
    }
    let m3: f64 = values
        .iter()
        .enumerate()
        .map(|(j, &v)| v * min_image(j as f64 * dx - c, length).powi(3))
        .sum::<f64>()
        / total;
    Diagnostics { mass, energy, centroid: c, skewness: m3 }
}

/// Crank–Nicolson stepper with cached FFT plans.
pub struct Stepper {
    pde: EffectivePde,
    n: usize,
    length: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    dt: f64,
    gain: Vec<C64>,
    forcing: Vec<C64>,
    buf: Vec<C64>,
}

impl Stepper {
    pub fn new(pde: &EffectivePde, n: usize, length: f64, dt: f64) -> Result<Self, FdError> {
        let mut planner = FftPlanner::new();
        let mut s = Self {
            pde: pde.clone(),
            n,
            length,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            dt: 0.0,
            gain: vec![C64::new(0.0, 0.0); n],
            forcing: vec![C64::new(0.0, 0.0); n],
            buf: vec![C64::new(0.0, 0.0); n],
        };
        s.set_dt(dt)?;
        Ok(s)
    }

    /// Symbols of the mass and stiffness operators for mode `m`.
    pub fn symbols(pde: &EffectivePde, m: usize, n: usize, dx: f64) -> (C64, C64) {
        let th = 2.0 * PI * m as f64 / n as f64;
        let d1 = C64::new(0.0, th.sin() / dx);
        let d2 = C64::new((2.0 * th.cos() - 2.0) / (dx * dx), 0.0);
        let d3 = C64::new(0.0, ((2.0 * th).sin() - 2.0 * th.sin()) / (dx * dx * dx));
        let mass = d2 * pde.coeff_txx + pde.coeff_t;
        let stiff = -(d1 * pde.coeff_x) - d2 * pde.coeff_xx - d3 * pde.coeff_xxx;
        (mass, stiff)
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<(), FdError> {
        if dt == self.dt {
            return Ok(());
        }
        let dx = self.length / self.n as f64;
        for m in 0..self.n {
            let (mass, k) = Self::symbols(&self.pde, m, self.n, dx);
            let den = mass - k * (0.5 * dt);
            if mass.norm() <= 1e-14 * self.pde.coeff_t.abs() || den.norm() <= 1e-14 * self.pde.coeff_t.abs() {
                return Err(FdError::SingularMode { mode: m });
            }
            self.gain[m] = (mass + k * (0.5 * dt)) / den;
            self.forcing[m] = C64::new(dt, 0.0) / den;
        }
        self.dt = dt;
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `values` (at time `t`) by one step.
    pub fn step(&mut self, values: &mut [f64], t: f64) {
        for (b, &v) in self.buf.iter_mut().zip(values.iter()) {
            *b = C64::new(v, 0.0);
        }
        self.fwd.process(&mut self.buf);
        for (b, g) in self.buf.iter_mut().zip(&self.gain) {
            *b *= g;
        }
        if let Some(src) = &self.pde.source {
            let dx = self.length / self.n as f64;
            let tm = t + 0.5 * self.dt;
            let mut f: Vec<C64> = (0..self.n).map(|j| C64::new((src.0)(j as f64 * dx, tm), 0.0)).collect();
            self.fwd.process(&mut f);
            for ((b, fh), w) in self.buf.iter_mut().zip(&f).zip(&self.forcing) {
                *b += fh * w;
            }
        }
        self.inv.process(&mut self.buf);
        let s = 1.0 / self.n as f64;
        for (v, b) in values.iter_mut().zip(&self.buf) {
            *v = b.re * s;
        }
    }

    /// `c_xx ∫(∂XΘ)²`, spectral derivative.
    pub fn dissipation(&mut self, values: &[f64]) -> f64 {
        for (b, &v) in self.buf.iter_mut().zip(values.iter()) {
            *b = C64::new(v, 0.0);
        }
        self.fwd.process(&mut self.buf);
        let n = self.n;
        let mut sum = 0.0;
        for (m, b) in self.buf.iter().enumerate() {
            if 2 * m == n {
                continue;
            }
            let mm = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            let k = 2.0 * PI * mm / self.length;
            sum += (k * b.norm()).powi(2);
        }
        // Parseval: Σ|Θ_X|²dx = (L/N²)Σ|kΘ̂|²
        self.pde.coeff_xx * sum * self.length / (n as f64 * n as f64)
    }
}

/// One step of the scheme (plans created per call; use [`Stepper`] in loops).
pub fn step(pde: &EffectivePde, state: &FieldState, dt: f64, length: f64) -> Result<FieldState, FdError> {
    let mut st = Stepper::new(pde, state.values.len(), length, dt)?;
    let mut values = state.values.clone();
    st.step(&mut values, state.time);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FdError::NonFinite { step: 1 });
    }
    let diagnostics = diagnostics(pde, &values, length);
    Ok(FieldState { time: state.time + dt, values, diagnostics })
}

/// Integrates to `t_end`, landing exactly on every snapshot time.
pub fn run(pde: &EffectivePde, config: &SimConfig) -> Result<RunOutput, FdError> {
    let warnings = config.validate()?;
    let n = config.n_points;
    let l = config.domain_length;
    let x = config.grid();
    let mut values: Vec<f64> = x.iter().map(|&xi| config.ic.periodic(xi, l)).collect();
    let mut stepper = Stepper::new(pde, n, l, config.dt)?;

    let mut marks: Vec<f64> = config.snapshot_times.clone();
    marks.push(config.t_end);
    marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    marks.dedup();

    let mut t = 0.0;
    let mut snapshots = Vec::new();
    let mut history = Vec::new();
    let record = |stepper: &mut Stepper, values: &[f64], t: f64| StepRecord {
        time: t,
        diagnostics: diagnostics(pde, values, l),
        dissipation: stepper.dissipation(values),
    };
    history.push(record(&mut stepper, &values, t));
    let wants = |t: f64| config.snapshot_times.contains(&t);
    if wants(0.0) {
        snapshots.push(FieldState { time: 0.0, values: values.clone(), diagnostics: history[0].diagnostics });
    }
    let mut steps = 0;
    for &mark in &marks {
        let span = mark - t;
        if span <= 0.0 {
            continue;
        }
        let k = (span / config.dt - 1e-9).ceil().max(1.0) as usize;
        stepper.set_dt(span / k as f64)?;
        for i in 0..k {
            stepper.step(&mut values, t);
            steps += 1;
            t = if i + 1 == k { mark } else { t + stepper.dt() };
            if values.iter().any(|v| !v.is_finite()) {
                return Err(FdError::NonFinite { step: steps });
            }
            history.push(record(&mut stepper, &values, t));
        }
        if wants(mark) {
            let d = history.last().unwrap().diagnostics;
            snapshots.push(FieldState { time: mark, values: values.clone(), diagnostics: d });
        }
    }
    Ok(RunOutput { snapshots, history, warnings, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub monotone: bool,
    pub max_rel_error: f64,
    pub worst_step: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the discrete energy decay with the continuous dissipation, step by step.
pub fn energy_audit(pde: &EffectivePde, history: &[StepRecord], tolerance: f64) -> Result<EnergyAudit, FdError> {
    if pde.source.is_some() {
        return Err(FdError::Forced);
    }
    let scale = history.iter().map(|r| r.dissipation.abs()).fold(0.0, f64::max);
    let escale = history.iter().map(|r| r.diagnostics.energy.abs()).fold(0.0, f64::max);
    let mut monotone = true;
    let mut worst = (0.0, 0);
    for (i, w) in history.windows(2).enumerate() {
        let dt = w[1].time - w[0].time;
        let de = w[1].diagnostics.energy - w[0].diagnostics.energy;
        if de > 1e-14 * escale {
            monotone = false;
        }
        let rhs = 0.5 * (w[0].dissipation + w[1].dissipation);
        let err = (de / dt - rhs).abs() / rhs.abs().max(1e-12 * scale).max(f64::MIN_POSITIVE);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    let pass = monotone && worst.0 <= tolerance;
    Ok(EnergyAudit { monotone, max_rel_error: worst.0, worst_step: worst.1, tolerance, pass })
}

/// Exact periodic solution for `c_t∂τ + c_x∂X + c_xx∂XX = 0` from the Gaussian data.
pub fn gaussian_reference(pde: &EffectivePde, ic: &GaussianIc, length: f64, x: f64, t: f64) -> f64 {
    let u = pde.coeff_x / pde.coeff_t;
    let d = -pde.coeff_xx / pde.coeff_t;
    let w2 = ic.nu * ic.nu + 4.0 * d * t;
    let amp = ic.nu / w2.sqrt();
    let c = ic.x0 + u * t;
    let mut s = 0.0;
    for img in -3i32..=3 {
        let z = x - c + img as f64 * length;
        s += (-z * z / w2).exp();
    }
    amp * s
}

/// Unwraps a periodic centroid series into a continuous path.
pub fn unwrap_centroids(c: &[f64], length: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(c.len());
    for (i, &x) in c.iter().enumerate() {
        if i == 0 {
            out.push(x);
        } else {
            let prev: f64 = out[i - 1];
            out.push(prev + min_image(x - prev.rem_euclid(length), length));
        }
    }
    out
}

/// Discrete L² norm `(Σ|a−b|²dx)^½`.
pub fn l2_distance(a: &[f64], b: &[f64], dx: f64) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * dx).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::PdeVariant;

    fn heat(c_x: f64) -> EffectivePde {
        EffectivePde::new([2.0, c_x, -0.5, 0.0, 0.0], PdeVariant::Order0Both)
    }

    fn conf(n: usize, dt: f64) -> SimConfig {
        SimConfig {
            domain_length: 20.0,
            n_points: n,
            dt,
            t_end: 1.0,
            snapshot_times: vec![0.5, 1.0],
            ic: GaussianIc { x0: 10.0, nu: 1.0 },
        }
    }

    #[test]
    fn heat_kernel_second_order() {
        let pde = heat(0.3);
        let mut errs = Vec::new();
        for (n, dt) in [(64, 0.04), (128, 0.02), (256, 0.01)] {
            let c = conf(n, dt);
            let out = run(&pde, &c).unwrap();
            let last = out.snapshots.last().unwrap();
            let exact: Vec<f64> = c.grid().iter().map(|&x| gaussian_reference(&pde, &c.ic, c.domain_length, x, 1.0)).collect();
            errs.push(l2_distance(&last.values, &exact, c.dx()));
        }
        let p1 = (errs[0] / errs[1]).log2();
        let p2 = (errs[1] / errs[2]).log2();
        assert!(p1 > 1.9 && p2 > 1.9, "{errs:?}");
    }

    #[test]
    fn mass_conserved_and_energy_decays() {
        let pde = EffectivePde::new([2e6, 0.0, -2500.0, -3e2, -1e4], PdeVariant::SigmaOnlyOrder2);
        let c = SimConfig { t_end: 200.0, dt: 1.0, ..conf(256, 1.0) };
        let c = SimConfig { snapshot_times: vec![100.0], ..c };
        let out = run(&pde, &c).unwrap();
        let m0 = out.history[0].diagnostics.mass;
        for r in &out.history {
            assert!((r.diagnostics.mass - m0).abs() <= 1e-12 * m0);
        }
        let a = energy_audit(&pde, &out.history, 0.01).unwrap();
        assert!(a.monotone);
    }

    #[test]
    fn singular_mass_operator_is_rejected() {
        // c_t + c_txx·D₂ vanishes at the Nyquist mode: D₂ = −4/dx²
        let dx = 20.0 / 16.0;
        let pde = EffectivePde::new([4.0 / (dx * dx), 0.0, -1.0, 0.0, 1.0], PdeVariant::SigmaOnlyOrder2);
        assert!(matches!(Stepper::new(&pde, 16, 20.0, 0.1), Err(FdError::SingularMode { mode: 8 })));
    }

    #[test]
    fn config_errors_name_field() {
        let mut c = conf(63, 0.1);
        assert!(matches!(c.validate(), Err(FdError::Config { field: "n_points", .. })));
        c.n_points = 64;
        c.snapshot_times = vec![2.0];
        assert!(matches!(c.validate(), Err(FdError::Config { field: "snapshot_times", .. })));
    }

    #[test]
    fn periodic_centroid_and_skewness() {
        let l = 10.0;
        let n = 1000;
        let ic = GaussianIc { x0: 9.5, nu: 0.3 };
        let v: Vec<f64> = (0..n)
            .map(|j| {
                let x = j as f64 * l / n as f64;
                (-3..=3).map(|i| ic.eval(x + i as f64 * l)).sum()
            })
            .collect();
        let d = diagnostics(&heat(0.0), &v, l);
        assert!((d.centroid - 9.5).abs() < 1e-10);
        assert!(d.skewness.abs() < 1e-12);
    }

    #[test]
    fn unwraps_across_the_seam() {
        let u = unwrap_centroids(&[9.0, 9.8, 0.5, 1.2], 10.0);
        assert!((u[2] - 10.5).abs() < 1e-12 && (u[3] - 11.2).abs() < 1e-12);
    }
}
