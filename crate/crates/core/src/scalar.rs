use num_traits::Float;

/// Element type for tensors and network parameters.
///
/// Everything numeric in this crate is generic over `Scalar` so the same
/// network code can run in f32 (production) and f64 (gradient checking,
/// oracle comparisons). The two conversion hooks exist because metric and
/// target computations are specified in f64 regardless of the model dtype.
pub trait Scalar: Float + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static {
    fn as_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;

    /// Smallest positive normal value; used to floor probabilities that a
    /// softmax in this dtype may round to zero.
    fn tiny() -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn tiny() -> Self {
        f32::MIN_POSITIVE
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn tiny() -> Self {
        f64::MIN_POSITIVE
    }
}
