use core::fmt::Debug;
use core::iter::Sum;

use num_traits::Float;

/// Scalar type the network, backbone and optimizer are generic over.
///
/// Training runs in `f32`; gradient checks run in `f64`.
pub trait Real: Float + Default + Debug + Sum + Send + Sync + 'static {
    fn lit(x: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
