//! Vector math on the unit hypersphere.
//!
//! Everything here is a pure function over immutable values. Text and image
//! features are compared only after projection onto the sphere, so the two
//! primitives are normalization and cosine similarity.

use crate::error::{Error, Result};

/// Norms at or below this are treated as degenerate.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Tolerance on the unit-norm flag.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// A point in feature or word-vector space.
///
/// The dimension is fixed at construction. When `is_unit()` is true the
/// vector lies on the unit sphere to within [`UNIT_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    unit_norm: bool,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            unit_norm: false,
        }
    }

    /// Wraps values that are claimed to be unit-norm, checking the claim.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        let norm = norm(&values);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self {
            values,
            unit_norm: true,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_unit(&self) -> bool {
        self.unit_norm
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, other: &FeatureVector) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Projects `v` onto the unit sphere.
///
/// A vector already flagged unit-norm is returned unchanged, which makes the
/// operation idempotent bit for bit.
pub fn l2_normalize(v: &FeatureVector) -> Result<FeatureVector> {
    if v.unit_norm {
        return Ok(v.clone());
    }
    let n = v.norm();
    if !(n > ZERO_NORM_THRESHOLD) {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(FeatureVector {
        values: v.values.iter().map(|x| x / n).collect(),
        unit_norm: true,
    })
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    for n in [na, nb] {
        if !(n > ZERO_NORM_THRESHOLD) {
            return Err(Error::ZeroVector { norm: n });
        }
    }
    Ok((dot(&a.values, &b.values) / (na * nb)).clamp(-1.0, 1.0))
}

/// Checks the unit-norm invariant numerically, independent of the flag.
pub fn require_unit(v: &FeatureVector) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NotNormalized { norm: n });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec())
    }

    #[test]
    fn normalize_pythagorean() {
        let u = l2_normalize(&fv(&[3.0, 4.0])).unwrap();
        assert!((u.values()[0] - 0.6).abs() < 1e-15);
        assert!((u.values()[1] - 0.8).abs() < 1e-15);
        assert!(u.is_unit());
    }

    #[test]
    fn normalize_unit_is_identity() {
        let u = l2_normalize(&fv(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(u.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_fails() {
        assert!(matches!(
            l2_normalize(&fv(&[0.0, 0.0])),
            Err(Error::ZeroVector { .. })
        ));
        assert!(matches!(
            l2_normalize(&fv(&[1e-13, 0.0])),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn cosine_basics() {
        let u = fv(&[0.3, -1.2, 2.0]);
        let neg = fv(&[-0.3, 1.2, -2.0]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&fv(&[1.0, 0.0]), &fv(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&fv(&[1.0, 0.0]), &fv(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 3
            })
        ));
        assert!(matches!(
            cosine(&fv(&[1.0, 0.0]), &fv(&[0.0, 0.0])),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn unit_constructor_checks() {
        assert!(FeatureVector::unit(vec![0.6, 0.8]).is_ok());
        assert!(matches!(
            FeatureVector::unit(vec![0.6, 0.9]),
            Err(Error::NotNormalized { .. })
        ));
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim).prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn normalize_idempotent(v in nonzero_vec(7)) {
            let once = l2_normalize(&fv(&v)).unwrap();
            let twice = l2_normalize(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!((once.norm() - 1.0).abs() <= UNIT_TOLERANCE);
        }

        #[test]
        fn cosine_symmetric_scale_invariant(
            a in nonzero_vec(6),
            b in nonzero_vec(6),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            let c = cosine(&fv(&a), &fv(&b)).unwrap();
            let sym = cosine(&fv(&b), &fv(&a)).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            let sb: Vec<f64> = b.iter().map(|x| beta * x).collect();
            let scaled = cosine(&fv(&sa), &fv(&sb)).unwrap();
            prop_assert!((c - sym).abs() <= 1e-12);
            prop_assert!((c - scaled).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&c));
        }

        #[test]
        fn cosine_of_parallel_stays_in_range(v in nonzero_vec(5), k in 0.5f64..3.0) {
            let w: Vec<f64> = v.iter().map(|x| k * x).collect();
            let c = cosine(&fv(&v), &fv(&w)).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
