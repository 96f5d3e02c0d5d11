//! Scalar abstraction shared by the autodiff engine and the model.
//!
//! Training runs in `f32`; gradient checks instantiate the same code with
//! `f64` so central finite differences resolve below 1e-6.

use num_traits::Float;

/// Element type of tensors. `f32` for training/inference, `f64` for the
/// finite-difference shadow mode.
pub trait Scalar: Float + core::fmt::Debug + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_f32(x: f32) -> Self {
        Self::from_f64(x as f64)
    }
    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// GELU with the tanh approximation used by most transformer stacks.
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = S::from_f64(0.044_715);
    let half = S::from_f64(0.5);
    let one = S::one();
    half * x * (one + (c * (x + k * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.797_884_560_802_865_4);
    let k = S::from_f64(0.044_715);
    let half = S::from_f64(0.5);
    let one = S::one();
    let three = S::from_f64(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = one - t * t;
    let dinner = c * (one + three * k * x * x);
    half * (one + t) + half * x * sech2 * dinner
}
