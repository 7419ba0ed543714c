use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::numerics::Tensor4D;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Where in training a step happens, for diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepPosition {
    pub epoch: usize,
    pub batch: usize,
}

/// Adam moments, kept in `f64` whatever the parameter storage type.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &ParamStore<T>) -> Self {
        Self::for_tensors(params.tensors())
    }

    pub fn for_tensors<T: Scalar>(tensors: &[Tensor4D<T>]) -> Self {
        let zeros: Vec<Vec<f64>> = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    /// One bias-corrected update. Every gradient is checked before anything
    /// changes, so a non-finite gradient leaves parameters and moments as
    /// they were.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [Tensor4D<T>],
        names: &[String],
        grads: &[Tensor4D<T>],
        lr: f64,
        at: StepPosition,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::dim("parameter tensors", self.m.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.shape().expect(&g.shape())?;
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    param: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
                    epoch: at.epoch,
                    batch: at.batch,
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.widen();
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *w = T::narrow(w.widen() - update);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to every parameter of `store`.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Tensor4D<T>],
    state: &mut AdamState,
    lr: f64,
    at: StepPosition,
) -> Result<()> {
    let names = store.names().to_vec();
    state.step(store.tensors_mut(), &names, grads, lr, at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Shape;

    fn scalar(v: f64) -> Vec<Tensor4D<f64>> {
        vec![Tensor4D::filled(Shape::new(1, 1, 1, 1), v)]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.0);
        let mut st = AdamState::for_tensors(&p);
        st.step(&mut p, &["w".into()], &scalar(1.0), 1e-4, StepPosition::default()).unwrap();
        // m̂ = 1, v̂ = 1, so the update is lr / (1 + eps)
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-18);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut q = scalar(0.7);
        let mut fresh = AdamState::for_tensors(&q);
        for _ in 0..5 {
            fresh.step(&mut q, &["w".into()], &scalar(0.0), 1e-3, StepPosition::default()).unwrap();
        }
        assert_eq!(q[0].data()[0], 0.7);
        assert_eq!((fresh.m[0][0], fresh.v[0][0]), (0.0, 0.0));

        let mut p = scalar(0.7);
        let mut st = AdamState::for_tensors(&p);
        st.m[0][0] = 0.5;
        st.v[0][0] = 0.25;
        st.t = 3;
        st.step(&mut p, &["w".into()], &scalar(0.0), 1e-3, StepPosition::default()).unwrap();
        assert_eq!(st.m[0][0], 0.45);
        assert!((st.v[0][0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = vec![Tensor4D::<f32>::zeros(Shape::new(1, 1, 1, 2)), Tensor4D::zeros(Shape::new(1, 1, 1, 1))];
        let mut st = AdamState::for_tensors(&p);
        let mut grads = vec![Tensor4D::zeros(Shape::new(1, 1, 1, 2)), Tensor4D::zeros(Shape::new(1, 1, 1, 1))];
        grads[1].data_mut()[0] = f32::NAN;
        let names = vec!["a.kernels".to_string(), "b.bias".to_string()];
        let err = st.step(&mut p, &names, &grads, 1e-4, StepPosition { epoch: 3, batch: 7 }).unwrap_err();
        match err {
            Error::NonFinite { param, epoch, batch, .. } => assert_eq!((param.as_str(), epoch, batch), ("b.bias", 3, 7)),
            e => panic!("{e}"),
        }
        assert_eq!(st.t, 0);
    }
}
