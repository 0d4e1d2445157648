use ndarray::{Array2, ArrayView2, Zip};

use crate::Real;

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Real>(x: ArrayView2<T>) -> Array2<T> {
    let slope = T::of(LEAKY_SLOPE);
    x.mapv(|v| if v > T::zero() { v } else { slope * v })
}

/// Backward through leaky ReLU given the forward input.
pub fn leaky_relu_backward<T: Real>(x: ArrayView2<T>, d_out: ArrayView2<T>) -> Array2<T> {
    let slope = T::of(LEAKY_SLOPE);
    Zip::from(&x)
        .and(&d_out)
        .map_collect(|&v, &d| if v > T::zero() { d } else { slope * d })
}

pub fn relu<T: Real>(x: ArrayView2<T>) -> Array2<T> {
    x.mapv(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(x: ArrayView2<T>, d_out: ArrayView2<T>) -> Array2<T> {
    Zip::from(&x)
        .and(&d_out)
        .map_collect(|&v, &d| if v > T::zero() { d } else { T::zero() })
}

/// ln(1 + eˣ), stable for large |x|.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else if x < T::of(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// d softplus / dx = σ(x).
pub fn softplus_backward<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
