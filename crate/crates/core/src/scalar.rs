use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating point type the numeric core is generic over.
pub trait Scalar: NdFloat + FromPrimitive + Default {
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
