//! Scalar abstraction for retrieval math.
//!
//! Vectors, similarity scores and ranking weights are generic over [`Scalar`],
//! implemented for `f32` and `f64`. The crate root exposes `f64` aliases.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type usable for embeddings and scores.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Descending comparison on scores; NaN sorts last.
pub(crate) fn cmp_desc<F: Scalar>(a: F, b: F) -> std::cmp::Ordering {
    b.partial_cmp(&a).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan()))
}
