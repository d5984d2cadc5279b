//! Scalar abstraction: every numeric quantity in the crate (bounds, masses,
//! heights, probabilities) is generic over a floating-point type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used for bounds, masses and probabilities.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Tolerance for "total mass equals one" checks. Exact construction and
    /// renormalization keep densities far inside this bound; it only exists
    /// to catch misuse.
    fn mass_tolerance() -> Self;

    /// Conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    /// Lossy view as `f64`, for formatting and JSON.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f64 {
    fn mass_tolerance() -> Self {
        1e-9
    }
}

impl Real for f32 {
    fn mass_tolerance() -> Self {
        1e-4
    }
}

/// Total order for scalars that are known to be non-NaN (densities never
/// store NaN). NaN sorts last so a corrupted value cannot panic a sort.
pub fn cmp_real<F: Real>(a: &F, b: &F) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or_else(|| {
        if a.is_nan() && b.is_nan() {
            std::cmp::Ordering::Equal
        } else if a.is_nan() {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Less
        }
    })
}
