//! Dense tensors, reverse-mode autodiff and the layer primitives the
//! planner network is built from.

mod gradcheck;
mod params;
mod tape;
mod tensor;
mod weights_io;

pub use gradcheck::{grad_check, grad_check_coordinates, primitive_suite, CoordinateCheck, GradCheckReport};
pub use params::{fan_in_uniform, Gradients, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use weights_io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

/// `ln(1 + e^x)`, evaluated as `x + ln(1 + e^-x)` above 20.
pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Huber loss with unit threshold.
pub fn smooth_l1(prediction: f64, target: f64) -> f64 {
    let d = prediction - target;
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_activations() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(smooth_l1(1.0, 1.0), 0.0);
        assert_eq!(smooth_l1(0.5, 0.0), 0.125);
        assert_eq!(smooth_l1(2.0, 0.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 0.0), 1.5);
    }
}
