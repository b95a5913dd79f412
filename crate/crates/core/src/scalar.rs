use ndarray::NdFloat;
use num_traits::FromPrimitive;
use rand::distributions::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scalar type the learning kernels are generic over.
///
/// `NdFloat` brings the ndarray linear-algebra bounds (so `f32` and `f64`
/// both get the fast matmul path); the extra supertraits cover uniform
/// sampling and literal conversion. The shipped pipeline pins `f64` via
/// [`crate::Real`] — model digests and chain payloads are defined on 64-bit
/// weights only.
pub trait Float: NdFloat + FromPrimitive + SampleUniform {
    /// One draw from N(0, 1) on this scalar.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Convert an f64 literal; panics only on literals that cannot be
    /// represented at all, which no call site passes.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Float for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Float for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}
