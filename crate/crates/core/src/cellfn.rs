//! Exact algebra on 1-periodic piecewise-polynomial functions of the unit cell.
//!
//! A [`UnitCellFunction`] stores a partition `0 = a_0 < a_1 < … < a_n = 1` and, on
//! each piece, polynomial coefficients in the local variable `t = y − a_i`.
//! Means, antiderivatives and products are computed in closed form, so identities
//! between correctors hold up to rounding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest polynomial degree a piece may carry.
pub const MAX_DEGREE: usize = 8;

/// Breakpoints closer than this are merged.
const BREAK_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellFnError {
    #[error("polynomial degree {degree} exceeds the bound {MAX_DEGREE}; resample the profile onto a piecewise-constant partition")]
    DegreeOverflow { degree: usize },
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("divisor is not constant on piece {piece}")]
    NonConstantDivisor { piece: usize },
    #[error("divisor vanishes on piece {piece}")]
    ZeroDivisor { piece: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCellFunction {
    breaks: Vec<f64>,
    pieces: Vec<Vec<f64>>,
}

fn trim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && c[c.len() - 1] == 0.0 {
        c.pop();
    }
    if c.is_empty() {
        c.push(0.0);
    }
    c
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * t + k)
}

/// Coefficients of `p(t + d)`.
fn poly_shift(c: &[f64], d: f64) -> Vec<f64> {
    if d == 0.0 {
        return c.to_vec();
    }
    // repeated synthetic division (Taylor shift)
    let mut q = c.to_vec();
    let n = q.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            q[j] += d * q[j + 1];
        }
    }
    q
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    trim(out)
}

fn poly_add(a: &[f64], b: &[f64], sb: f64) -> Vec<f64> {
    let n = a.len().max(b.len());
    let out = (0..n)
        .map(|k| a.get(k).copied().unwrap_or(0.0) + sb * b.get(k).copied().unwrap_or(0.0))
        .collect();
    trim(out)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    trim(c.iter().enumerate().skip(1).map(|(k, &x)| k as f64 * x).collect())
}

/// Antiderivative vanishing at t = 0.
fn poly_integ(c: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(c.len() + 1);
    out.push(0.0);
    out.extend(c.iter().enumerate().map(|(k, &x)| x / (k as f64 + 1.0)));
    trim(out)
}

fn merge_breaks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for x in all {
        match out.last() {
            Some(&l) if (x - l).abs() <= BREAK_TOL => {}
            _ => out.push(x),
        }
    }
    // keep the end point exactly 1
    let n = out.len();
    out[n - 1] = 1.0;
    out
}

impl UnitCellFunction {
    /// Builds a function from a partition (including 0 and 1) and local-coordinate coefficients.
    pub fn from_pieces(breaks: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self, CellFnError> {
        if breaks.len() < 2 || pieces.len() + 1 != breaks.len() {
            return Err(CellFnError::Partition(format!(
                "{} breakpoints for {} pieces",
                breaks.len(),
                pieces.len()
            )));
        }
        if breaks[0] != 0.0 || breaks[breaks.len() - 1] != 1.0 {
            return Err(CellFnError::Partition("partition must start at 0 and end at 1".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(CellFnError::Partition("breakpoints must be strictly increasing".into()));
        }
        let mut out = Vec::with_capacity(pieces.len());
        for p in pieces {
            let p = trim(p);
            if p.len() - 1 > MAX_DEGREE {
                return Err(CellFnError::DegreeOverflow { degree: p.len() - 1 });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(CellFnError::Partition("non-finite coefficient".into()));
            }
            out.push(p);
        }
        Ok(Self { breaks, pieces: out })
    }

    pub fn constant(value: f64) -> Self {
        Self { breaks: vec![0.0, 1.0], pieces: vec![vec![value]] }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Piecewise-constant function with `values[i]` on `[breaks[i], breaks[i+1])`.
    pub fn piecewise_constant(breaks: Vec<f64>, values: &[f64]) -> Result<Self, CellFnError> {
        Self::from_pieces(breaks, values.iter().map(|&v| vec![v]).collect())
    }

    /// `a` on `[0, phi)`, `b` on `[phi, 1)`.
    pub fn two_phase(phi: f64, a: f64, b: f64) -> Result<Self, CellFnError> {
        Self::piecewise_constant(vec![0.0, phi, 1.0], &[a, b])
    }

    /// Cell averages of a smooth profile on `n` equal pieces (midpoint values).
    pub fn sampled<F: Fn(f64) -> f64>(f: F, n: usize) -> Result<Self, CellFnError> {
        if n == 0 {
            return Err(CellFnError::Partition("sample count must be positive".into()));
        }
        let breaks: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let values: Vec<f64> = (0..n).map(|i| f((i as f64 + 0.5) / n as f64)).collect();
        Self::piecewise_constant(breaks, &values)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Vec<f64>] {
        &self.pieces
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn degree(&self) -> usize {
        self.pieces.iter().map(|p| p.len() - 1).max().unwrap_or(0)
    }

    fn piece_index(&self, y: f64) -> usize {
        let i = self.breaks.partition_point(|&b| b <= y);
        i.saturating_sub(1).min(self.pieces.len() - 1)
    }

    /// Value at `y` (wrapped into [0,1)); right-continuous at breakpoints.
    pub fn eval(&self, y: f64) -> f64 {
        let mut y = y.rem_euclid(1.0);
        if y >= 1.0 {
            y = 0.0;
        }
        let i = self.piece_index(y);
        poly_eval(&self.pieces[i], y - self.breaks[i])
    }

    /// Left and right limits at breakpoint `i` (index into `breaks`, periodic).
    pub fn limits_at(&self, i: usize) -> (f64, f64) {
        let n = self.pieces.len();
        let i = i % n;
        let left_piece = if i == 0 { n - 1 } else { i - 1 };
        let left = poly_eval(
            &self.pieces[left_piece],
            self.breaks[left_piece + 1] - self.breaks[left_piece],
        );
        let right = self.pieces[i][0];
        (left, right)
    }

    /// Largest jump across any breakpoint, including the periodic seam.
    pub fn max_jump(&self) -> f64 {
        (0..self.pieces.len())
            .map(|i| {
                let (l, r) = self.limits_at(i);
                (l - r).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Exact mean over the unit cell.
    pub fn mean(&self) -> f64 {
        self.pieces
            .iter()
            .enumerate()
            .map(|(i, p)| poly_eval(&poly_integ(p), self.breaks[i + 1] - self.breaks[i]))
            .sum()
    }

    /// Re-expands onto a finer partition that contains every current breakpoint.
    fn refine(&self, breaks: &[f64]) -> Vec<Vec<f64>> {
        let mut j = 0;
        breaks[..breaks.len() - 1]
            .iter()
            .map(|&a| {
                while j + 1 < self.pieces.len() && self.breaks[j + 1] <= a + BREAK_TOL {
                    j += 1;
                }
                poly_shift(&self.pieces[j], a - self.breaks[j])
            })
            .collect()
    }

    fn zip_with<F>(&self, other: &Self, f: F) -> Result<Self, CellFnError>
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64>,
    {
        let breaks = if self.breaks == other.breaks {
            self.breaks.clone()
        } else {
            merge_breaks(&self.breaks, &other.breaks)
        };
        let a = self.refine(&breaks);
        let b = other.refine(&breaks);
        let pieces: Vec<Vec<f64>> = a.iter().zip(b.iter()).map(|(p, q)| f(p, q)).collect();
        if let Some(d) = pieces.iter().map(|p| p.len() - 1).max() {
            if d > MAX_DEGREE {
                return Err(CellFnError::DegreeOverflow { degree: d });
            }
        }
        Ok(Self { breaks, pieces })
    }

    fn map_pieces<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Self {
        Self { breaks: self.breaks.clone(), pieces: self.pieces.iter().map(|p| trim(f(p))).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |p, q| poly_add(p, q, 1.0)).expect("sum never raises the degree")
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |p, q| poly_add(p, q, -1.0)).expect("difference never raises the degree")
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_with(other, |p, q| poly_add(p, q, s)).expect("sum never raises the degree")
    }

    pub fn mul(&self, other: &Self) -> Result<Self, CellFnError> {
        self.zip_with(other, poly_mul)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_pieces(|p| p.iter().map(|c| c * s).collect())
    }

    pub fn add_constant(&self, s: f64) -> Self {
        self.map_pieces(|p| {
            let mut q = p.to_vec();
            q[0] += s;
            q
        })
    }

    pub fn derivative(&self) -> Self {
        self.map_pieces(poly_deriv)
    }

    /// `y ↦ ∫₀^y f`, continuous on [0,1).
    pub fn antiderivative(&self) -> Self {
        let mut acc = 0.0;
        let pieces = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut q = poly_integ(p);
                q[0] += acc;
                acc = poly_eval(&q, self.breaks[i + 1] - self.breaks[i]);
                q
            })
            .collect();
        Self { breaks: self.breaks.clone(), pieces }
    }

    /// `f − ⟨f⟩`.
    pub fn zero_mean(&self) -> Self {
        self.add_constant(-self.mean())
    }

    /// ⟨f g⟩ without keeping the product.
    pub fn mean_of_product(&self, other: &Self) -> Result<f64, CellFnError> {
        Ok(self.mul(other)?.mean())
    }

    pub fn is_piecewise_constant(&self) -> bool {
        self.pieces.iter().all(|p| p.len() == 1)
    }

    /// True when piecewise constant with all values equal to within `rel_tol`.
    pub fn is_constant(&self, rel_tol: f64) -> bool {
        if !self.is_piecewise_constant() {
            return false;
        }
        let first = self.pieces[0][0];
        self.pieces.iter().all(|p| (p[0] - first).abs() <= rel_tol * first.abs().max(f64::MIN_POSITIVE))
    }

    /// Division by a piecewise-constant, nowhere-vanishing divisor.
    pub fn div_piecewise_constant(&self, divisor: &Self) -> Result<Self, CellFnError> {
        let breaks = merge_breaks(&self.breaks, &divisor.breaks);
        let a = self.refine(&breaks);
        let b = divisor.refine(&breaks);
        let mut pieces = Vec::with_capacity(a.len());
        for (i, (p, q)) in a.iter().zip(b.iter()).enumerate() {
            if q.len() != 1 {
                return Err(CellFnError::NonConstantDivisor { piece: i });
            }
            if q[0] == 0.0 {
                return Err(CellFnError::ZeroDivisor { piece: i });
            }
            pieces.push(trim(p.iter().map(|c| c / q[0]).collect()));
        }
        Ok(Self { breaks, pieces })
    }

    /// `1/f` for piecewise-constant `f`.
    pub fn recip(&self) -> Result<Self, CellFnError> {
        Self::constant(1.0).div_piecewise_constant(self)
    }

    /// Lower bound estimate: exact for piecewise-linear, sampled otherwise.
    pub fn min_value(&self) -> f64 {
        self.sample_extremes().0
    }

    pub fn max_abs(&self) -> f64 {
        let (lo, hi) = self.sample_extremes();
        lo.abs().max(hi.abs())
    }

    fn sample_extremes(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, p) in self.pieces.iter().enumerate() {
            let len = self.breaks[i + 1] - self.breaks[i];
            let n = if p.len() <= 2 { 1 } else { 16 };
            for k in 0..=n {
                let v = poly_eval(p, len * k as f64 / n as f64);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// Values on `n` equispaced points `y_k = k/n`.
    pub fn sample_grid(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|k| {
            let y = k as f64 / n as f64;
            (y, self.eval(y))
        }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hat() -> UnitCellFunction {
        // continuous, periodic: y on [0, 1/2), 1 - y on [1/2, 1)
        UnitCellFunction::from_pieces(vec![0.0, 0.5, 1.0], vec![vec![0.0, 1.0], vec![0.5, -1.0]]).unwrap()
    }

    #[test]
    fn constant_has_its_value_as_mean_and_zero_derivative() {
        let f = UnitCellFunction::constant(3.25);
        assert_eq!(f.mean(), 3.25);
        assert_eq!(f.derivative().mean(), 0.0);
        assert_eq!(f.derivative().max_abs(), 0.0);
    }

    #[test]
    fn two_phase_mean_is_weighted_average() {
        let f = UnitCellFunction::two_phase(0.3, 10.0, 190.0).unwrap();
        assert!((f.mean() - (0.3 * 10.0 + 0.7 * 190.0)).abs() < 1e-12);
    }

    #[test]
    fn shift_reexpands_exactly() {
        let c = [1.0, -2.0, 0.5, 3.0];
        let s = poly_shift(&c, 0.37);
        for t in [0.0, 0.1, 0.4] {
            assert!((poly_eval(&s, t) - poly_eval(&c, t + 0.37)).abs() < 1e-14);
        }
    }

    #[test]
    fn product_merges_partitions() {
        let f = UnitCellFunction::two_phase(0.3, 1.0, 2.0).unwrap();
        let g = UnitCellFunction::two_phase(0.6, 5.0, 7.0).unwrap();
        let p = f.mul(&g).unwrap();
        assert_eq!(p.breaks(), &[0.0, 0.3, 0.6, 1.0]);
        let expect = 0.3 * 5.0 + 0.3 * 2.0 * 5.0 + 0.4 * 2.0 * 7.0;
        assert!((p.mean() - expect).abs() < 1e-14);
    }

    #[test]
    fn antiderivative_of_hat_is_continuous() {
        let h = hat();
        let a = h.antiderivative();
        assert!((a.eval(1.0 - 1e-15) - h.mean()).abs() < 1e-12);
        assert!(a.max_jump() - h.mean().abs() < 1e-14); // only the seam jumps
        assert!((h.mean() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn degree_overflow_is_reported() {
        let mut f = hat();
        let mut err = None;
        for _ in 0..10 {
            match f.mul(&hat()) {
                Ok(g) => f = g,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        assert!(matches!(err, Some(CellFnError::DegreeOverflow { .. })));
    }

    #[test]
    fn division_requires_constant_divisor() {
        let f = UnitCellFunction::constant(1.0);
        assert!(matches!(f.div_piecewise_constant(&hat()), Err(CellFnError::NonConstantDivisor { .. })));
        let s = UnitCellFunction::two_phase(0.25, 2.0, 4.0).unwrap();
        let r = f.div_piecewise_constant(&s).unwrap();
        assert!((r.mean() - (0.25 / 2.0 + 0.75 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn sampled_profile_approximates_mean() {
        let f = UnitCellFunction::sampled(|y| (2.0 * std::f64::consts::PI * y).sin().powi(2), 4096).unwrap();
        assert!((f.mean() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn from_pieces_rejects_bad_partitions() {
        assert!(UnitCellFunction::from_pieces(vec![0.0, 0.6, 0.5, 1.0], vec![vec![1.0]; 3]).is_err());
        assert!(UnitCellFunction::from_pieces(vec![0.1, 1.0], vec![vec![1.0]]).is_err());
    }
}
