use crate::error::{Error, Result};
use crate::numerics::Tensor4D;
use crate::scalar::Scalar;

/// Predictions are clamped into `[PRED_CLAMP, 1 - PRED_CLAMP]` inside the
/// logarithms.
pub const PRED_CLAMP: f64 = 1e-7;

/// Batch-averaged loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub bce: f64,
    pub soft_jaccard: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.bce + 1.0 - self.soft_jaccard
    }
}

fn check<T: Scalar>(pred: &Tensor4D<T>, target: &Tensor4D<T>) -> Result<()> {
    pred.shape().expect(&target.shape())?;
    if pred.is_empty() {
        return Err(Error::Precondition("loss of an empty batch".into()));
    }
    if let Some(v) = target.data().iter().find(|v| **v != T::zero() && **v != T::one()) {
        return Err(Error::Validation(format!("target value {v} is not 0 or 1")));
    }
    Ok(())
}

/// Per-sample sums `(Σ BCE, Σ p·g, Σ p, Σ g)`.
fn sums<T: Scalar>(p: &[T], g: &[T]) -> (f64, f64, f64, f64) {
    let (mut bce, mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in p.iter().zip(g) {
        let (p, g) = (p.widen(), g.widen());
        let pc = p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
        bce -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
        inter += p * g;
        sp += p;
        sg += g;
    }
    (bce, inter, sp, sg)
}

/// Both loss terms without the gradient.
pub fn loss_terms<T: Scalar>(pred: &Tensor4D<T>, target: &Tensor4D<T>, epsilon: f64) -> Result<LossTerms> {
    check(pred, target)?;
    let n = pred.shape().n;
    let (mut bce, mut jac) = (0.0, 0.0);
    for i in 0..n {
        let (b, inter, sp, sg) = sums(pred.item(i), target.item(i));
        bce += b / pred.item(i).len() as f64;
        jac += (inter + epsilon) / (sp + sg - inter + epsilon);
    }
    Ok(LossTerms {
        bce: bce / n as f64,
        soft_jaccard: jac / n as f64,
    })
}

/// Binary cross-entropy plus `1 - softJaccard`, each averaged over the
/// batch, and its gradient with respect to `pred`. The soft Jaccard index
/// of one sample is `(Σpg + ε) / (Σp + Σg − Σpg + ε)`.
pub fn bce_jaccard_loss<T: Scalar>(pred: &Tensor4D<T>, target: &Tensor4D<T>, epsilon: f64) -> Result<(f64, Tensor4D<T>)> {
    check(pred, target)?;
    let n = pred.shape().n;
    let inv_n = 1.0 / n as f64;
    let mut grad = Tensor4D::zeros(pred.shape());
    let mut total = 0.0;
    for i in 0..n {
        let (p, g) = (pred.item(i), target.item(i));
        let m = p.len() as f64;
        let (b, inter, sp, sg) = sums(p, g);
        let num = inter + epsilon;
        let den = sp + sg - inter + epsilon;
        total += b / m + 1.0 - num / den;
        let start = i * p.len();
        let out = &mut grad.data_mut()[start..start + p.len()];
        for ((o, &p), &g) in out.iter_mut().zip(p).zip(g) {
            let (p, g) = (p.widen(), g.widen());
            let d_bce = if p > PRED_CLAMP && p < 1.0 - PRED_CLAMP {
                (p - g) / (p * (1.0 - p) * m)
            } else {
                0.0
            };
            // d(num/den)/dp = (g·den − num·(1 − g)) / den²
            let d_jac = (g * den - num * (1.0 - g)) / (den * den);
            *o = T::narrow((d_bce - d_jac) * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_prediction_on_full_target() {
        let s = Shape::new(1, 1, 10, 10);
        let pred = Tensor4D::<f64>::filled(s, 0.5);
        let target = Tensor4D::<f64>::filled(s, 1.0);
        let (loss, _) = bce_jaccard_loss(&pred, &target, 1.0).unwrap();
        let expected = std::f64::consts::LN_2 + 1.0 - 51.0 / 101.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 1.188).abs() < 1e-3);
        let terms = loss_terms(&pred, &target, 1.0).unwrap();
        assert!((terms.total() - loss).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let s = Shape::new(2, 1, 6, 6);
        let target = Tensor4D::<f64>::from_fn(s, |n, _, y, x| ((x + y + n) % 2) as f64);
        let (loss, _) = bce_jaccard_loss(&target, &target, 1.0).unwrap();
        assert!(loss < 1e-5, "{loss}");
    }

    #[test]
    fn rejects_soft_targets() {
        let s = Shape::new(1, 1, 2, 2);
        let pred = Tensor4D::<f32>::filled(s, 0.5);
        let target = Tensor4D::<f32>::filled(s, 0.3);
        assert!(matches!(bce_jaccard_loss(&pred, &target, 1.0), Err(Error::Validation(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = Shape::new(3, 1, 8, 8);
        for kind in 0..3 {
            let pred = Tensor4D::<f64>::from_fn(s, |_, _, _, _| rng.random_range(0.02..0.98));
            let target = Tensor4D::<f64>::from_fn(s, |_, _, _, _| match kind {
                0 => 0.0,
                1 => 1.0,
                _ => (rng.random::<f64>() < 0.4) as u8 as f64,
            });
            let (_, grad) = bce_jaccard_loss(&pred, &target, 1.0).unwrap();
            let h = 1e-6;
            for i in 0..pred.len() {
                let mut plus = pred.clone();
                plus.data_mut()[i] += h;
                let mut minus = pred.clone();
                minus.data_mut()[i] -= h;
                let fd = (loss_terms(&plus, &target, 1.0).unwrap().total()
                    - loss_terms(&minus, &target, 1.0).unwrap().total())
                    / (2.0 * h);
                let a = grad.data()[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "element {i}: analytic {a}, numeric {fd}");
            }
        }
    }
}
