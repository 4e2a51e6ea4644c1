//! Exact dispersion of a two-phase laminate by Floquet-Bloch analysis in the moving frame.
//!
//! Two determinants are provided:
//! * [`assemble`] / [`det_scaled`]: the sixteen textbook entries built on `exp(r_j^± ξ)`,
//!   evaluated in the log domain so that `exp(r h)` never overflows;
//! * [`det_regularized`]: the same conditions written on the basis
//!   `e^{−aξ}cosh(sξ)`, `e^{−aξ}sinh(sξ)/s` of each layer. It is entire in `Ω̃`, has no
//!   spurious zero where `Δ_j = 0`, and is the function the root finders work on.
//!   Up to row scaling, `det(M) = 4 s_A s_B · det_regularized`.

use nalgebra::Matrix4;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::laminate::{BilayerCapacity, BilayerSpec, LaminateError, Model};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlochError {
    #[error("row {row} of the Floquet matrix vanishes identically")]
    SingularRow { row: usize },
    #[error("wavenumber grid must be finite and sorted increasingly")]
    BadGrid,
    #[error("branch count must be at least 1")]
    NoBranches,
    #[error(transparent)]
    Laminate(#[from] LaminateError),
}

/// Acceptance bound on `|det_scaled|` at a root.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Moving,
    Fixed,
}

/// Phase data of a two-phase cell in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochMedium {
    pub model: Model,
    pub sigma: [f64; 2],
    pub gamma: [f64; 2],
    /// Coefficient of `u′` in the layer equation `σu″ + adv·u′ − iΩ̃γu = 0`.
    pub adv: [f64; 2],
    /// Coefficient of `u` in the interface flux `σu′ + flux_adv·u`.
    pub flux_adv: [f64; 2],
    pub phi: f64,
    pub h: f64,
    pub v_m: f64,
}

impl BlochMedium {
    pub fn from_bilayer(b: &BilayerSpec) -> Result<Self, BlochError> {
        b.validate()?;
        let (ga, gb) = b.gammas();
        let v = b.v_m;
        let (adv, flux_adv) = match b.capacity {
            BilayerCapacity::Capacities { .. } => ([v * ga, v * gb], [v * ga, v * gb]),
            BilayerCapacity::Densities { rho_a, rho_b, c } => {
                let rho0 = b.phi * rho_a + (1.0 - b.phi) * rho_b;
                ([v * rho0 * c; 2], [0.0; 2])
            }
        };
        Ok(Self {
            model: b.model(),
            sigma: [b.sigma_a, b.sigma_b],
            gamma: [ga, gb],
            adv,
            flux_adv,
            phi: b.phi,
            h: b.h,
            v_m: v,
        })
    }

    /// `Δ_j = adv_j² + 4σ_jγ_j·iΩ̃`.
    pub fn discriminant(&self, j: usize, omega_t: C64) -> C64 {
        C64::new(self.adv[j] * self.adv[j], 0.0) + C64::i() * omega_t * (4.0 * self.sigma[j] * self.gamma[j])
    }

    /// Roots `r_j^± = (−adv_j ± √Δ_j)/(2σ_j)`.
    pub fn layer_exponents(&self, j: usize, omega_t: C64) -> (C64, C64) {
        let sq = self.discriminant(j, omega_t).sqrt();
        let d = 2.0 * self.sigma[j];
        let adv = self.adv[j];
        // the root with −adv ± √Δ ≈ 0 comes from the product r⁺r⁻ = −iγΩ̃/σ
        let prod = C64::i() * omega_t * (2.0 * self.gamma[j]);
        if (sq * adv).re >= 0.0 && adv != 0.0 {
            (prod / (sq + adv), (-adv - sq) / d)
        } else if adv != 0.0 {
            ((-adv + sq) / d, -prod / (adv - sq))
        } else {
            (sq / d, -sq / d)
        }
    }

    /// Typical decay rate, used for tolerances and search windows.
    pub fn rate_scale(&self) -> f64 {
        let d = self.sigma[0].max(self.sigma[1]) / self.gamma[0].min(self.gamma[1]);
        let q = std::f64::consts::PI / self.h;
        d * q * q + self.v_m.abs() * q
    }
}

/// Textbook Floquet matrix; row `i` equals `entries[i] · exp(row_log_scale[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochMatrix {
    pub entries: [[C64; 4]; 4],
    pub row_log_scale: [f64; 4],
    pub r_plus: [C64; 2],
    pub r_minus: [C64; 2],
    pub model: Model,
}

/// Entry `coef · exp(expo)`.
#[derive(Clone, Copy)]
struct LogEntry {
    coef: C64,
    expo: C64,
}

fn le(coef: C64, expo: C64) -> LogEntry {
    LogEntry { coef, expo }
}

fn normalize_row(row: [LogEntry; 4]) -> ([C64; 4], f64) {
    let mut lmax = f64::NEG_INFINITY;
    for e in &row {
        if e.coef != C64::new(0.0, 0.0) {
            lmax = lmax.max(e.expo.re + e.coef.norm().ln());
        }
    }
    if !lmax.is_finite() {
        return ([C64::new(0.0, 0.0); 4], 0.0);
    }
    let mut out = [C64::new(0.0, 0.0); 4];
    for (o, e) in out.iter_mut().zip(row.iter()) {
        *o = e.coef * (e.expo - lmax).exp();
    }
    (out, lmax)
}

/// The sixteen entries at `(κ̃, Ω̃)`; unknowns multiply `exp(r_j^± ξ)` in global `ξ`.
pub fn assemble(kappa_t: f64, omega_t: C64, m: &BlochMedium) -> BlochMatrix {
    let (rap, ram) = m.layer_exponents(0, omega_t);
    let (rbp, rbm) = m.layer_exponents(1, omega_t);
    let (sa, sb) = (m.sigma[0], m.sigma[1]);
    let (h, ph) = (m.h, m.phi * m.h);
    let bloch = C64::new(0.0, -kappa_t * h);
    let one = C64::new(1.0, 0.0);
    let (fa, fb) = (m.flux_adv[0], m.flux_adv[1]);
    // Model 1 carries the vγ flux terms; flux_adv is zero for Model 2.
    let row1 = [le(one, bloch), le(one, bloch), le(-one, rbp * h), le(-one, rbm * h)];
    let row2 = [
        le(rap * sa, bloch),
        le(ram * sa, bloch),
        le(-(rbp * sb + (fb - fa)), rbp * h),
        le(-(rbm * sb + (fb - fa)), rbm * h),
    ];
    let row3 = [le(one, rap * ph), le(one, ram * ph), le(-one, rbp * ph), le(-one, rbm * ph)];
    let row4 = [
        le(rap * sa + fa, rap * ph),
        le(ram * sa + fa, ram * ph),
        le(-(rbp * sb + fb), rbp * ph),
        le(-(rbm * sb + fb), rbm * ph),
    ];
    let mut entries = [[C64::new(0.0, 0.0); 4]; 4];
    let mut row_log_scale = [0.0; 4];
    for (i, row) in [row1, row2, row3, row4].into_iter().enumerate() {
        let (e, l) = normalize_row(row);
        entries[i] = e;
        row_log_scale[i] = l;
    }
    BlochMatrix { entries, row_log_scale, r_plus: [rap, rbp], r_minus: [ram, rbm], model: m.model }
}

/// Determinant after dividing each row by its largest-modulus entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledDet {
    pub value: C64,
    /// Natural log of the product of all removed row factors.
    pub log_scale: f64,
}

pub fn det_scaled(m: &BlochMatrix) -> Result<ScaledDet, BlochError> {
    let mut a = Matrix4::<C64>::zeros();
    let mut log_scale = 0.0;
    for i in 0..4 {
        let mx = m.entries[i].iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !(mx > 0.0) || !mx.is_finite() {
            return Err(BlochError::SingularRow { row: i });
        }
        for j in 0..4 {
            a[(i, j)] = m.entries[i][j] / mx;
        }
        log_scale += m.row_log_scale[i] + mx.ln();
    }
    Ok(ScaledDet { value: a.determinant(), log_scale })
}

/// `(e^{−ax}cosh(sx), e^{−ax}sinh(sx)/s)` and their x-derivatives, all times `e^{−g}`.
struct LayerBasis {
    c: C64,
    s: C64,
    dc: C64,
    ds: C64,
    g: f64,
}

/// `s² = a² + eps`; `eps` is passed separately so that `s − a` keeps full precision.
fn layer_basis(a: C64, eps: C64, x: f64) -> LayerBasis {
    let s2 = a * a + eps;
    let mut s = s2.sqrt();
    if (s * a.conj()).re < 0.0 {
        s = -s;
    }
    let z = s * x;
    let (ch, shs, g);
    if z.norm() < 1.0 {
        // series for cosh z and sinh(z)/z, prefactor e^{-ax}
        let z2 = z * z;
        let mut term_c = C64::new(1.0, 0.0);
        let mut term_s = C64::new(1.0, 0.0);
        let mut sc = term_c;
        let mut ss = term_s;
        for k in 1..30 {
            let k = k as f64;
            term_c *= z2 / ((2.0 * k - 1.0) * (2.0 * k));
            term_s *= z2 / ((2.0 * k) * (2.0 * k + 1.0));
            sc += term_c;
            ss += term_s;
            if term_c.norm() < 1e-18 * sc.norm() && term_s.norm() < 1e-18 * ss.norm() {
                break;
            }
        }
        g = -(a * x).re;
        let pref = (-(a * x) - g).exp();
        ch = sc * pref;
        shs = ss * pref * x;
    } else {
        let d = if a.norm() > 0.0 { eps / (s + a) } else { s };
        let ep = d * x;
        let em = -(d + a * 2.0) * x;
        g = ep.re.max(em.re);
        let p = (ep - g).exp();
        let q = (em - g).exp();
        ch = (p + q) * 0.5;
        shs = (p - q) / (s * 2.0);
    }
    // c' = s²·(sinh/s) − a·c ;  s' = c − a·(sinh/s)  (both under e^{-ax})
    LayerBasis { c: ch, s: shs, dc: s2 * shs - a * ch, ds: ch - a * shs, g }
}

/// Entire determinant of the interface and Floquet conditions on the regular layer basis.
pub fn det_regularized(kappa_t: f64, omega_t: C64, m: &BlochMedium) -> C64 {
    let la = m.phi * m.h;
    let lb = (1.0 - m.phi) * m.h;
    let mut a = [C64::new(0.0, 0.0); 2];
    let mut eps = [C64::new(0.0, 0.0); 2];
    for j in 0..2 {
        a[j] = C64::new(m.adv[j] / (2.0 * m.sigma[j]), 0.0);
        eps[j] = C64::i() * omega_t * (m.gamma[j] / m.sigma[j]);
    }
    let a0 = layer_basis(a[0], eps[0], 0.0);
    let a1 = layer_basis(a[0], eps[0], la);
    let b0 = layer_basis(a[1], eps[1], 0.0);
    let b1 = layer_basis(a[1], eps[1], lb);
    let flux = |j: usize, lb: &LayerBasis| -> (C64, C64) {
        (lb.dc * m.sigma[j] + lb.c * m.flux_adv[j], lb.ds * m.sigma[j] + lb.s * m.flux_adv[j])
    };
    let bloch = C64::new(0.0, -kappa_t * m.h).exp();
    let (fa0c, fa0s) = flux(0, &a0);
    let (fa1c, fa1s) = flux(0, &a1);
    let (fb0c, fb0s) = flux(1, &b0);
    let (fb1c, fb1s) = flux(1, &b1);
    // rows mixing two layers are brought to a common exponent
    let mix = |ga: f64, gb: f64| -> (f64, f64) {
        let g = ga.max(gb);
        ((ga - g).exp(), (gb - g).exp())
    };
    let (wa1, wb0) = mix(a1.g, b0.g);
    let (wa0, wb1) = mix(a0.g, b1.g);
    let mut mat = Matrix4::<C64>::zeros();
    let rows = [
        [a1.c * wa1, a1.s * wa1, -b0.c * wb0, -b0.s * wb0],
        [fa1c * wa1, fa1s * wa1, -fb0c * wb0, -fb0s * wb0],
        [-bloch * a0.c * wa0, -bloch * a0.s * wa0, b1.c * wb1, b1.s * wb1],
        [-bloch * fa0c * wa0, -bloch * fa0s * wa0, fb1c * wb1, fb1s * wb1],
    ];
    // flux rows are measured against σ/h so that all rows are O(1)
    let flux_scale = [1.0, m.h / m.sigma[0].max(m.sigma[1]), 1.0, m.h / m.sigma[0].max(m.sigma[1])];
    for i in 0..4 {
        for j in 0..4 {
            mat[(i, j)] = rows[i][j] * flux_scale[i];
        }
    }
    mat.determinant()
}

/// `|det_scaled|` of the textbook matrix.
pub fn residual(kappa_t: f64, omega_t: C64, m: &BlochMedium) -> f64 {
    det_scaled(&assemble(kappa_t, omega_t, m)).map(|d| d.value.norm()).unwrap_or(f64::INFINITY)
}

/// Newton settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootOptions {
    pub step_tol: f64,
    pub max_iter: usize,
    pub slow_iter: usize,
    pub max_halvings: usize,
    pub residual_tol: f64,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { step_tol: 1e-12, max_iter: 50, slow_iter: 10, max_halvings: 6, residual_tol: RESIDUAL_TOL }
    }
}

#[derive(Debug, Clone, Copy)]
struct NewtonOutcome {
    root: C64,
    iterations: usize,
    converged: bool,
}

/// Damped complex Newton with a central-difference derivative and a secant fallback.
fn newton<F: Fn(C64) -> C64>(f: &F, z0: C64, scale: f64, opts: &RootOptions) -> NewtonOutcome {
    let mut z = z0;
    let mut fz = f(z);
    let mut prev: Option<(C64, C64)> = None;
    for it in 1..=opts.max_iter {
        if fz == C64::new(0.0, 0.0) {
            return NewtonOutcome { root: z, iterations: it, converged: true };
        }
        let hstep = 1e-7 * z.norm().max(1e-9 * scale);
        let d = (f(z + hstep) - f(z - hstep)) / (2.0 * hstep);
        let d = if d.norm() > 0.0 && d.is_finite() {
            d
        } else if let Some((zp, fp)) = prev {
            (fz - fp) / (z - zp)
        } else {
            return NewtonOutcome { root: z, iterations: it, converged: false };
        };
        let step = fz / d;
        if !step.is_finite() {
            return NewtonOutcome { root: z, iterations: it, converged: false };
        }
        let mut lambda = 1.0;
        let mut znew = z - step;
        let mut fnew = f(znew);
        for _ in 0..8 {
            if fnew.is_finite() && fnew.norm() <= fz.norm() {
                break;
            }
            lambda *= 0.5;
            znew = z - step * lambda;
            fnew = f(znew);
        }
        prev = Some((z, fz));
        let dz = (znew - z).norm();
        z = znew;
        fz = fnew;
        if dz <= opts.step_tol * z.norm().max(1e-9 * scale) {
            // one polishing step from the converged point
            let hstep = 1e-7 * z.norm().max(1e-9 * scale);
            let d = (f(z + hstep) - f(z - hstep)) / (2.0 * hstep);
            let zp = z - fz / d;
            if zp.is_finite() && (zp - z).norm() <= dz.max(f64::EPSILON * z.norm()) * 10.0 {
                z = zp;
            }
            return NewtonOutcome { root: z, iterations: it, converged: true };
        }
    }
    NewtonOutcome { root: z, iterations: opts.max_iter, converged: false }
}

/// A sampled dispersion curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionBranch {
    pub kappa: Vec<f64>,
    pub omega: Vec<C64>,
    pub frame: Frame,
    pub branch_index: usize,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    pub warnings: Vec<String>,
}

impl DispersionBranch {
    /// `Ω = Ω̃ + v_m κ̃`, `κ = κ̃`.
    pub fn to_frame(&self, frame: Frame, v_m: f64) -> Self {
        let shift = match (self.frame, frame) {
            (Frame::Moving, Frame::Fixed) => 1.0,
            (Frame::Fixed, Frame::Moving) => -1.0,
            _ => 0.0,
        };
        let omega = self.kappa.iter().zip(&self.omega).map(|(&k, &w)| w + shift * v_m * k).collect();
        Self { omega, frame, ..self.clone() }
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPair {
    pub moving: DispersionBranch,
    pub fixed: DispersionBranch,
}

fn check_grid(kappa: &[f64]) -> Result<(), BlochError> {
    if kappa.is_empty() || kappa.iter().any(|k| !k.is_finite()) || kappa.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BlochError::BadGrid);
    }
    Ok(())
}

/// Follows one root of the determinant along `kappa_grid` by continuation.
///
/// `initial_guess` maps κ to a fixed-frame Ω used at the first point and whenever
/// continuation loses the root.
pub fn find_branch(
    m: &BlochMedium,
    kappa_grid: &[f64],
    initial_guess: &dyn Fn(f64) -> C64,
    opts: &RootOptions,
) -> Result<BranchPair, BlochError> {
    check_grid(kappa_grid)?;
    let scale = m.rate_scale();
    let mut omega = Vec::with_capacity(kappa_grid.len());
    let mut converged = Vec::with_capacity(kappa_grid.len());
    let mut warnings = Vec::new();
    // last two accepted (κ, Ω̃) for the predictor
    let mut hist: Vec<(f64, C64)> = Vec::new();

    let solve_at = |k: f64, z0: C64| -> NewtonOutcome {
        let f = |w: C64| det_regularized(k, w, m);
        newton(&f, z0, scale, opts)
    };
    let predict = |hist: &[(f64, C64)], k: f64| -> Option<C64> {
        match hist {
            [.., (k1, w1), (k2, w2)] => Some(*w2 + (*w2 - *w1) * ((k - k2) / (k2 - k1))),
            [(_, w)] => Some(*w),
            _ => None,
        }
    };

    for &k in kappa_grid {
        let guess = predict(&hist, k).unwrap_or_else(|| initial_guess(k) - m.v_m * k);
        let mut out = solve_at(k, guess);
        if (!out.converged || out.iterations > opts.slow_iter) && !hist.is_empty() {
            // refine the continuation step by successive halving
            let (k0, _) = *hist.last().unwrap();
            let mut local = hist.clone();
            let mut ok = false;
            for depth in 1..=opts.max_halvings {
                let n = 1usize << depth;
                let mut trial = local.clone();
                let mut good = true;
                let mut last = out;
                for i in 1..=n {
                    let ki = k0 + (k - k0) * i as f64 / n as f64;
                    let g = predict(&trial, ki).unwrap();
                    last = solve_at(ki, g);
                    if !last.converged {
                        good = false;
                        break;
                    }
                    trial.push((ki, last.root));
                    if trial.len() > 2 {
                        trial.remove(0);
                    }
                }
                if good {
                    out = last;
                    ok = true;
                    local = trial;
                    break;
                }
            }
            if !ok {
                let fresh = solve_at(k, initial_guess(k) - m.v_m * k);
                if fresh.converged {
                    out = fresh;
                }
            }
            let _ = local;
        }
        if !out.converged {
            warnings.push(format!("no convergence at kappa = {k:e}"));
        }
        if let Some(p) = predict(&hist, k) {
            if let Some(&(_, wl)) = hist.last() {
                let step = (out.root - wl).norm();
                let corr = (out.root - p).norm();
                if hist.len() >= 2 && corr > 0.5 * step.max(1e-9 * scale) && corr > 1e-9 * out.root.norm() {
                    warnings.push(format!("possible branch switch at kappa = {k:e}"));
                }
            }
        }
        omega.push(out.root);
        converged.push(out.converged);
        if out.converged {
            hist.push((k, out.root));
            if hist.len() > 2 {
                hist.remove(0);
            }
        }
    }
    let residuals = kappa_grid.iter().zip(&omega).map(|(&k, &w)| residual(k, w, m)).collect();
    let moving = DispersionBranch {
        kappa: kappa_grid.to_vec(),
        omega,
        frame: Frame::Moving,
        branch_index: 0,
        residuals,
        converged,
        warnings,
    };
    let fixed = moving.to_frame(Frame::Fixed, m.v_m);
    Ok(BranchPair { moving, fixed })
}

/// Gauss–Legendre nodes on [−1, 1].
pub fn gauss_legendre_nodes(n: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x.push(t);
    }
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    x
}

/// Rectangle `[re0, re1] × [im0, im1]` in the moving-frame Ω̃ plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

struct Winding<'a, F: Fn(C64) -> C64> {
    f: &'a F,
    nodes: Vec<f64>,
}

impl<'a, F: Fn(C64) -> C64> Winding<'a, F> {
    fn phase_change(&self, a: C64, fa: C64, b: C64, fb: C64, depth: usize) -> Option<f64> {
        let d = (fb / fa).arg();
        if d.abs() <= std::f64::consts::FRAC_PI_4 {
            return Some(d);
        }
        if depth == 0 {
            return None;
        }
        let mid = (a + b) * 0.5;
        let fm = (self.f)(mid);
        if fm.norm() == 0.0 || !fm.is_finite() {
            return None;
        }
        Some(self.phase_change(a, fa, mid, fm, depth - 1)? + self.phase_change(mid, fm, b, fb, depth - 1)?)
    }

    /// Number of zeros inside, or None when the boundary passes too close to a zero.
    fn count(&self, w: &SearchWindow) -> Option<i64> {
        let c = [
            C64::new(w.re.0, w.im.0),
            C64::new(w.re.1, w.im.0),
            C64::new(w.re.1, w.im.1),
            C64::new(w.re.0, w.im.1),
        ];
        let mut total = 0.0;
        for e in 0..4 {
            let (a, b) = (c[e], c[(e + 1) % 4]);
            let mut pts = vec![a];
            pts.extend(self.nodes.iter().map(|&t| a + (b - a) * (0.5 * (t + 1.0))));
            pts.push(b);
            let vals: Vec<C64> = pts.iter().map(|&z| (self.f)(z)).collect();
            if vals.iter().any(|v| v.norm() == 0.0 || !v.is_finite()) {
                return None;
            }
            for i in 0..pts.len() - 1 {
                total += self.phase_change(pts[i], vals[i], pts[i + 1], vals[i + 1], 24)?;
            }
        }
        Some((total / (2.0 * std::f64::consts::PI)).round() as i64)
    }
}

fn split(w: &SearchWindow) -> [SearchWindow; 4] {
    // off-centre cuts keep grid-aligned roots off the new edges
    let xr = w.re.0 + (w.re.1 - w.re.0) * 0.5123;
    let xi = w.im.0 + (w.im.1 - w.im.0) * 0.4871;
    [
        SearchWindow { re: (w.re.0, xr), im: (w.im.0, xi) },
        SearchWindow { re: (xr, w.re.1), im: (w.im.0, xi) },
        SearchWindow { re: (w.re.0, xr), im: (xi, w.im.1) },
        SearchWindow { re: (xr, w.re.1), im: (xi, w.im.1) },
    ]
}

fn inside(w: &SearchWindow, z: C64) -> bool {
    let mr = 1e-9 * (w.re.1 - w.re.0);
    let mi = 1e-9 * (w.im.1 - w.im.0);
    z.re >= w.re.0 - mr && z.re <= w.re.1 + mr && z.im >= w.im.0 - mi && z.im <= w.im.1 + mi
}

fn wiggle(w: &SearchWindow) -> SearchWindow {
    let dr = 1.37e-3 * (w.re.1 - w.re.0);
    let di = 1.13e-3 * (w.im.1 - w.im.0);
    SearchWindow { re: (w.re.0 - dr, w.re.1 + dr), im: (w.im.0 - di, w.im.1 + di) }
}

/// All zeros of the regularized determinant inside `window` at one κ̃.
pub fn roots_in_window(m: &BlochMedium, kappa_t: f64, window: &SearchWindow, opts: &RootOptions) -> Vec<C64> {
    let f = |w: C64| det_regularized(kappa_t, w, m);
    let wind = Winding { f: &f, nodes: gauss_legendre_nodes(256) };
    let scale = m.rate_scale();
    let mut roots: Vec<C64> = Vec::new();
    let mut stack: Vec<(SearchWindow, usize)> = vec![(*window, 0)];
    while let Some((w, depth)) = stack.pop() {
        let n = match wind.count(&w) {
            Some(n) => n,
            None => match wind.count(&wiggle(&w)) {
                Some(n) => n,
                None => {
                    if depth < 40 {
                        stack.extend(split(&w).into_iter().map(|b| (b, depth + 1)));
                    }
                    continue;
                }
            },
        };
        if n <= 0 {
            continue;
        }
        if n == 1 {
            let centre = C64::new(0.5 * (w.re.0 + w.re.1), 0.5 * (w.im.0 + w.im.1));
            let out = newton(&f, centre, scale, opts);
            if out.converged && inside(&w, out.root) {
                roots.push(out.root);
                continue;
            }
            if depth >= 40 {
                if out.converged {
                    roots.push(out.root);
                }
                continue;
            }
        }
        if depth < 40 {
            stack.extend(split(&w).into_iter().map(|b| (b, depth + 1)));
        }
    }
    roots.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
    let mut out: Vec<C64> = Vec::new();
    for r in roots {
        if !out.iter().any(|q| (q - r).norm() <= 1e-8 * r.norm().max(1e-6 * scale)) {
            out.push(r);
        }
    }
    out
}

/// Default rectangle for `n` roots at κ̃: Floquet-ladder estimate of the n-th decay rate.
pub fn default_window(m: &BlochMedium, kappa_t: f64, n: usize) -> SearchWindow {
    let d = m.sigma[0].max(m.sigma[1]) / m.gamma[0].min(m.gamma[1]);
    let q = kappa_t.abs() + 2.0 * std::f64::consts::PI * ((n as f64) / 2.0).ceil() / m.h;
    let y = 2.0 * d * q * q;
    let x = m.v_m.abs() * (kappa_t.abs() + 2.0 * std::f64::consts::PI * (n as f64 + 1.0) / m.h) + y;
    SearchWindow { re: (-x, x), im: (-0.013 * y, y) }
}

/// Branches located by argument-principle counting and reported per κ̃.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSet {
    pub branches: Vec<BranchPair>,
    /// `(κ̃, roots found)` where fewer than the requested number were located.
    pub partial: Vec<(f64, usize)>,
}

impl BranchSet {
    pub fn is_complete(&self) -> bool {
        self.partial.is_empty()
    }
}

/// The `n` slowest-decaying roots per κ̃, ordered by `Im(Ω)`.
pub fn find_branches(
    m: &BlochMedium,
    kappa_grid: &[f64],
    n: usize,
    window: Option<SearchWindow>,
    opts: &RootOptions,
) -> Result<BranchSet, BlochError> {
    if n == 0 {
        return Err(BlochError::NoBranches);
    }
    check_grid(kappa_grid)?;
    let mut per_branch: Vec<Vec<Option<C64>>> = vec![Vec::with_capacity(kappa_grid.len()); n];
    let mut partial = Vec::new();
    for &k in kappa_grid {
        let mut w = window.unwrap_or_else(|| default_window(m, k, n));
        let mut roots = roots_in_window(m, k, &w, opts);
        let mut grow = 0;
        while roots.len() < n && window.is_none() && grow < 6 {
            w = SearchWindow { re: (2.0 * w.re.0, 2.0 * w.re.1), im: (2.0 * w.im.0, 2.0 * w.im.1) };
            roots = roots_in_window(m, k, &w, opts);
            grow += 1;
        }
        if roots.len() < n {
            partial.push((k, roots.len()));
        }
        for (i, b) in per_branch.iter_mut().enumerate() {
            b.push(roots.get(i).copied());
        }
    }
    let branches = per_branch
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            let omega: Vec<C64> = b.iter().map(|z| z.unwrap_or(C64::new(f64::NAN, f64::NAN))).collect();
            let converged = b.iter().map(|z| z.is_some()).collect();
            let residuals = kappa_grid
                .iter()
                .zip(&omega)
                .map(|(&k, &w)| if w.is_finite() { residual(k, w, m) } else { f64::INFINITY })
                .collect();
            let moving = DispersionBranch {
                kappa: kappa_grid.to_vec(),
                omega,
                frame: Frame::Moving,
                branch_index: i,
                residuals,
                converged,
                warnings: Vec::new(),
            };
            let fixed = moving.to_frame(Frame::Fixed, m.v_m);
            BranchPair { moving, fixed }
        })
        .collect();
    Ok(BranchSet { branches, partial })
}

/// `n` points spread over `(0, κ_max]`.
pub fn kappa_grid(kappa_max: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| kappa_max * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(v: f64) -> BlochMedium {
        BlochMedium::from_bilayer(&BilayerSpec::model1((10.0, 10.0), (2e6, 2e6), 0.3, 0.1, v)).unwrap()
    }

    #[test]
    fn gauss_nodes_integrate_polynomials() {
        let x = gauss_legendre_nodes(8);
        assert_eq!(x.len(), 8);
        assert!(x.windows(2).all(|w| w[0] < w[1]));
        assert!(x.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn uniform_medium_root_on_both_determinants() {
        let m = uniform(0.05);
        let k = 1.0;
        let omega_t = C64::new(-0.05 * k, 10.0 * k * k / 2e6);
        let at = det_regularized(k, omega_t, &m).norm();
        assert!(residual(k, omega_t, &m) < 1e-10);
        let off = omega_t + C64::new(0.0, 3e-6);
        assert!(det_regularized(k, off, &m).norm() > 1e6 * at);
    }

    #[test]
    fn models_coincide_without_modulation() {
        let b1 = BilayerSpec::model1((10.0, 190.0), (2e6, 1.4e6), 0.3, 0.1, 0.0);
        let b2 = BilayerSpec::model2((10.0, 190.0), (2e3, 1.4e3), 1000.0, 0.3, 0.1, 0.0);
        let w = C64::new(0.1, 2e-5);
        let m1 = assemble(3.0, w, &BlochMedium::from_bilayer(&b1).unwrap());
        let m2 = assemble(3.0, w, &BlochMedium::from_bilayer(&b2).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                assert!((m1.entries[i][j] - m2.entries[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn exponents_solve_the_layer_equation() {
        let m = BlochMedium::from_bilayer(&BilayerSpec::model1((10.0, 190.0), (2e6, 1.4e6), 0.3, 0.1, 5e-3)).unwrap();
        let w = C64::new(0.3, 1e-4);
        for j in 0..2 {
            let (rp, rm) = m.layer_exponents(j, w);
            for r in [rp, rm] {
                let res = r * r * m.sigma[j] + r * m.adv[j] - C64::i() * w * m.gamma[j];
                assert!(res.norm() < 1e-9 * (m.gamma[j] * w.norm()));
            }
        }
    }

    #[test]
    fn diagonal_scaled_det() {
        let mut e = [[C64::new(0.0, 0.0); 4]; 4];
        let d = [2.0, -3.0, 0.5, 4.0];
        for i in 0..4 {
            e[i][i] = C64::new(d[i], 0.0);
        }
        let m = BlochMatrix { entries: e, row_log_scale: [0.0; 4], r_plus: [C64::new(0.0, 0.0); 2], r_minus: [C64::new(0.0, 0.0); 2], model: Model::Model1 };
        let s = det_scaled(&m).unwrap();
        assert!((s.value + C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((s.log_scale - (2.0f64 * 3.0 * 0.5 * 4.0).ln()).abs() < 1e-14);
        let mut z = m.clone();
        z.entries[2] = [C64::new(0.0, 0.0); 4];
        assert!(matches!(det_scaled(&z), Err(BlochError::SingularRow { row: 2 })));
    }

    #[test]
    fn row_scaling_preserves_zeros() {
        let m = uniform(0.05);
        let k = 2.0;
        let root = C64::new(-0.05 * k, 10.0 * k * k / 2e6);
        let mut a = assemble(k, root, &m);
        a.row_log_scale[3] -= (1e6f64).ln();
        for j in 0..4 {
            a.entries[3][j] *= 1e6;
        }
        assert!(det_scaled(&a).unwrap().value.norm() < 1e-10);
    }
}
