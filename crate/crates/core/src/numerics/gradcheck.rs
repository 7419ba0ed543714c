//! Central-difference verification of analytic backward passes.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor4D;
use crate::scalar::Scalar;

/// A map from one tensor to another with trainable parameters and an exact
/// backward pass.
pub trait Differentiable<T: Scalar> {
    fn label(&self) -> String;

    /// False when repeated forward passes on the same input may differ.
    fn is_deterministic(&self) -> bool {
        true
    }

    fn param_names(&self) -> Vec<String>;

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>>;

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>>;

    /// Returns the input gradient and one gradient per parameter, in
    /// [`Differentiable::param_names`] order.
    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor holding the worst element (`"input"` for the layer input).
    pub parameter_name: String,
    pub tolerance: f64,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

/// Gradients smaller than this are compared absolutely. A convolution bias
/// feeding batch normalisation has an exactly zero gradient, and its central
/// difference is pure rounding noise.
pub const ABSOLUTE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABSOLUTE_FLOOR)
}

/// Fixed pseudo-random projection `r` so the scalar objective is `Σ out·r`.
fn projection(len: usize) -> Vec<f64> {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

fn objective<T: Scalar>(out: &Tensor4D<T>, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(o, w)| o.widen() * w).sum()
}

/// Compares analytic gradients against central differences for every input
/// and parameter element.
pub fn finite_difference_check<T: Scalar, L: Differentiable<T> + ?Sized>(
    layer: &mut L,
    input: &Tensor4D<T>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    finite_difference_check_sampled(layer, input, step, tolerance, usize::MAX)
}

/// As [`finite_difference_check`], probing at most `per_tensor` evenly spaced
/// elements of each tensor.
pub fn finite_difference_check_sampled<T: Scalar, L: Differentiable<T> + ?Sized>(
    layer: &mut L,
    input: &Tensor4D<T>,
    step: f64,
    tolerance: f64,
    per_tensor: usize,
) -> Result<GradCheckReport> {
    if !(1e-4..=1e-2).contains(&step) {
        return Err(Error::Precondition(format!("finite-difference step {step} outside [1e-4, 1e-2]")));
    }
    if !layer.is_deterministic() {
        return Err(Error::Precondition(format!(
            "{} is in a non-deterministic mode; disable dropout before checking gradients",
            layer.label()
        )));
    }
    let out = layer.forward(input)?;
    let r = projection(out.len());
    let grad_out = Tensor4D::new(out.shape(), r.iter().map(|&v| T::narrow(v)).collect())?;
    let (grad_in, grad_params) = layer.backward(input, &grad_out)?;
    let names = layer.param_names();
    if grad_params.len() != names.len() {
        return Err(Error::dim("parameter gradients", names.len(), grad_params.len()));
    }

    let pick = |len: usize| -> Vec<usize> {
        if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|i| i * len / per_tensor).collect()
        }
    };

    let mut worst = (0.0f64, String::from("input"));
    let mut checked = 0usize;
    let note = |err: f64, name: &str, worst: &mut (f64, String)| {
        if err > worst.0 || err.is_nan() {
            *worst = (err, name.to_string());
        }
    };

    let mut probe = input.clone();
    for i in pick(input.len()) {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::narrow(orig.widen() + step);
        let plus = objective(&layer.forward(&probe)?, &r);
        probe.data_mut()[i] = T::narrow(orig.widen() - step);
        let minus = objective(&layer.forward(&probe)?, &r);
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        note(relative_error(grad_in.data()[i].widen(), numeric), "input", &mut worst);
        checked += 1;
    }

    for (p, name) in names.iter().enumerate() {
        let len = layer.params_mut()[p].len();
        for i in pick(len) {
            let orig = layer.params_mut()[p].data()[i];
            layer.params_mut()[p].data_mut()[i] = T::narrow(orig.widen() + step);
            let plus = objective(&layer.forward(input)?, &r);
            layer.params_mut()[p].data_mut()[i] = T::narrow(orig.widen() - step);
            let minus = objective(&layer.forward(input)?, &r);
            layer.params_mut()[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            note(relative_error(grad_params[p].data()[i].widen(), numeric), name, &mut worst);
            checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_relative_error: worst.0,
        parameter_name: worst.1,
        tolerance,
        elements_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::{Conv2dLayer, DropoutLayer, SigmoidLayer};
    use crate::numerics::tensor::Shape;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let mut l = SigmoidLayer;
        let x = Tensor4D::<f64>::zeros(Shape::new(1, 1, 1, 1));
        assert!(matches!(
            finite_difference_check(&mut l, &x, 0.1, 1e-3),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn training_dropout_is_rejected() {
        let mut l = DropoutLayer::new(0.05, true, 1);
        let x = Tensor4D::<f64>::zeros(Shape::new(1, 1, 2, 2));
        assert!(matches!(
            finite_difference_check(&mut l, &x, 1e-3, 1e-3),
            Err(Error::Precondition(_))
        ));
        let mut off = DropoutLayer::new(0.05, false, 1);
        assert!(finite_difference_check(&mut off, &x, 1e-3, 1e-9).unwrap().passed());
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut l = SigmoidLayer;
        let x = Tensor4D::<f64>::zeros(Shape::new(1, 1, 1, 1));
        let r = finite_difference_check(&mut l, &x, 1e-3, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
        let (g, _) = l.backward(&x, &Tensor4D::filled(x.shape(), 1.0)).unwrap();
        assert_eq!(g.data(), &[0.25]);
    }

    #[test]
    fn pointwise_conv_is_exact() {
        let mut l = Conv2dLayer::<f64>::random(3, 2, 1, 1, 1, 4);
        let x = Tensor4D::from_fn(Shape::new(2, 2, 4, 4), |n, c, y, x| ((n + 2 * c + 3 * y + 5 * x) % 7) as f64 / 3.0 - 1.0);
        let r = finite_difference_check(&mut l, &x, 1e-3, 1e-5).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.elements_checked, x.len() + 3 * 2 + 3);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        struct Broken;
        impl Differentiable<f64> for Broken {
            fn label(&self) -> String {
                "broken".into()
            }
            fn param_names(&self) -> Vec<String> {
                vec![]
            }
            fn params_mut(&mut self) -> Vec<&mut Tensor4D<f64>> {
                vec![]
            }
            fn forward(&self, x: &Tensor4D<f64>) -> Result<Tensor4D<f64>> {
                Ok(x.map(|v| v * v))
            }
            fn backward(&self, x: &Tensor4D<f64>, g: &Tensor4D<f64>) -> Result<(Tensor4D<f64>, Vec<Tensor4D<f64>>)> {
                Ok((g.zip_map(x, |g, x| g * x)?, vec![]))
            }
        }
        let x = Tensor4D::filled(Shape::new(1, 1, 2, 2), 0.7);
        let r = finite_difference_check(&mut Broken, &x, 1e-3, 1e-3).unwrap();
        assert!(!r.passed());
        assert_eq!(r.parameter_name, "input");
    }
}
