//! Dense coordinate vectors and diagonal preconditioners.
//!
//! Every quantity in the simulator (iterates, gradients, momenta) lives in
//! `R^d` and is combined coordinate-wise, so a thin newtype over `Vec<f64>`
//! is all that is needed.

use std::ops::Index;

use crate::error::{Error, Result};

/// A dense vector of finite `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("vector entries"));
        }
        if let Some((index, &value)) = entries.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    /// Wraps entries produced by arithmetic on already-valid vectors.
    /// Finiteness is re-checked by the optimizer at every step boundary.
    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, found: self.dim() });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Coordinate-wise combination of two vectors of equal dimension.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        other.check_dim(self.dim())?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        other.check_dim(self.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

/// Diagonal positive-definite preconditioner `H = diag(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagPrecond {
    diag: Vector,
}

impl DiagPrecond {
    pub fn new(diag: Vector) -> Result<Self> {
        if let Some((index, &value)) = diag.iter().enumerate().find(|(_, &h)| h <= 0.0) {
            return Err(Error::NonPositiveDiagonal { index, value });
        }
        Ok(Self { diag })
    }

    pub fn identity(dim: usize) -> Self {
        Self { diag: Vector::filled(dim, 1.0) }
    }

    /// `H = diag(sqrt(v + lambda^2))`, the Adam denominator built from a
    /// second-moment vector.
    pub fn from_second_moment(v: &Vector, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be positive, got {lambda}"),
            });
        }
        Self::new(v.map(|vi| (vi + lambda * lambda).sqrt()))
    }

    pub fn diag(&self) -> &Vector {
        &self.diag
    }

    pub fn dim(&self) -> usize {
        self.diag.dim()
    }

    pub fn min_diag(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_diag(&self) -> f64 {
        self.diag.iter().copied().fold(0.0, f64::max)
    }

    /// `H x`
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        x.zip_map(&self.diag, |a, h| a * h)
    }

    /// `H^{-1} x`
    pub fn solve(&self, x: &Vector) -> Result<Vector> {
        x.zip_map(&self.diag, |a, h| a / h)
    }
}

/// `sum_i h_i x_i^2`, or `sum_i x_i^2 / h_i` when `inverse` is set.
pub fn weighted_norm_sq(x: &Vector, h: &DiagPrecond, inverse: bool) -> Result<f64> {
    x.check_dim(h.dim())?;
    let d = h.diag().as_slice();
    if let Some((index, &value)) = d.iter().enumerate().find(|(_, &v)| v <= 0.0) {
        return Err(Error::NonPositiveDiagonal { index, value });
    }
    let sum = x
        .iter()
        .zip(d)
        .map(|(&xi, &hi)| if inverse { xi * xi / hi } else { hi * xi * xi })
        .sum();
    Ok(sum)
}

/// Coordinate-wise mean over workers, summed in ascending worker order.
pub fn worker_mean<'a, I>(vs: I) -> Result<Vector>
where
    I: IntoIterator<Item = &'a Vector>,
{
    let mut iter = vs.into_iter();
    let first = iter.next().ok_or(Error::Empty("worker list"))?;
    let mut acc = first.0.clone();
    let mut count = 1usize;
    for v in iter {
        v.check_dim(acc.len())?;
        for (a, &b) in acc.iter_mut().zip(&v.0) {
            *a += b;
        }
        count += 1;
    }
    let inv = count as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    Ok(Vector(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn weighted_norm_examples() {
        let id = DiagPrecond::identity(2);
        assert_eq!(weighted_norm_sq(&v(&[1.0, 2.0]), &id, false).unwrap(), 5.0);
        let h = DiagPrecond::new(v(&[4.0, 9.0])).unwrap();
        assert_eq!(weighted_norm_sq(&v(&[2.0, 0.0]), &h, true).unwrap(), 1.0);
        assert_eq!(weighted_norm_sq(&Vector::zeros(2), &h, false).unwrap(), 0.0);
        assert_eq!(weighted_norm_sq(&Vector::zeros(2), &h, true).unwrap(), 0.0);
    }

    #[test]
    fn weighted_norm_identity_is_plain_norm() {
        let x = v(&[0.3, -1.7, 2.5]);
        let id = DiagPrecond::identity(3);
        assert_eq!(weighted_norm_sq(&x, &id, false).unwrap(), x.norm_sq());
        assert_eq!(weighted_norm_sq(&x, &id, true).unwrap(), x.norm_sq());
    }

    #[test]
    fn weighted_norm_errors() {
        let h = DiagPrecond::identity(3);
        assert!(matches!(
            weighted_norm_sq(&v(&[1.0]), &h, false),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            DiagPrecond::new(v(&[1.0, 0.0])),
            Err(Error::NonPositiveDiagonal { index: 1, .. })
        ));
    }

    #[test]
    fn mean_examples() {
        assert_eq!(worker_mean(&[v(&[1.0, 1.0]), v(&[3.0, 3.0])]).unwrap(), v(&[2.0, 2.0]));
        let x = v(&[0.1, -7.0]);
        assert_eq!(worker_mean(std::slice::from_ref(&x)).unwrap(), x);
        assert_eq!(
            worker_mean(&[v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[2.0, 2.0])]).unwrap(),
            v(&[1.0, 1.0])
        );
        assert!(matches!(worker_mean(&[] as &[Vector]), Err(Error::Empty(_))));
        assert!(worker_mean(&[v(&[1.0]), v(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(Vector::new(vec![1.0, f64::NAN]), Err(Error::NonFinite { index: 1, .. })));
        assert!(Vector::new(vec![]).is_err());
    }

    #[test]
    fn precond_from_second_moment_dominates_lambda() {
        let h = DiagPrecond::from_second_moment(&v(&[0.0, 3.0]), 1.0).unwrap();
        assert_eq!(h.diag().as_slice(), &[1.0, 2.0]);
        assert!(h.min_diag() >= 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mean_permutation_invariant(
                rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..9),
                rot in 0usize..8,
            ) {
                let vs: Vec<Vector> = rows.iter().map(|r| v(r)).collect();
                let mut permuted = vs.clone();
                let n = permuted.len();
                permuted.rotate_left(rot % n);
                permuted.reverse();
                let a = worker_mean(&vs).unwrap();
                let b = worker_mean(&permuted).unwrap();
                let m = vs.len() as f64;
                for i in 0..4 {
                    let scale = vs.iter().map(|x| x[i].abs()).fold(0.0, f64::max).max(1e-300);
                    prop_assert!((a[i] - b[i]).abs() <= 4.0 * m * f64::EPSILON * scale);
                }
                prop_assert_eq!(worker_mean(&vs).unwrap(), a);
            }

            #[test]
            fn weighted_norm_sign_symmetric(
                xs in prop::collection::vec(-1e3f64..1e3, 5),
                hs in prop::collection::vec(0.01f64..100.0, 5),
                inverse: bool,
            ) {
                let x = v(&xs);
                let h = DiagPrecond::new(v(&hs)).unwrap();
                let a = weighted_norm_sq(&x, &h, inverse).unwrap();
                let b = weighted_norm_sq(&x.scale(-1.0), &h, inverse).unwrap();
                prop_assert!(a >= 0.0);
                prop_assert_eq!(a, b);
            }
        }
    }
}
