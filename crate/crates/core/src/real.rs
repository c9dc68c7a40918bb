//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is generic over [`Real`] so maps,
//! patterns, and models can be instantiated at `f32` or `f64`. Random draws
//! are always generated in `f64` and then cast, so the two instantiations
//! consume identical RNG streams.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Default + Send + Sync + 'static
{
    fn from_f(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }

    fn to_f(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Default + Send + Sync + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn casts_round_trip() {
        let x: f32 = Real::from_f(0.25);
        assert_eq!(x, 0.25f32);
        assert_eq!(x.to_f(), 0.25f64);
        let y: f64 = Real::from_f(1.5e-7);
        assert_eq!(y, 1.5e-7);
    }
}
