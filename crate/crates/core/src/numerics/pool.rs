use crate::error::{Error, Result};
use crate::numerics::tensor::{Shape, Tensor4D};
use crate::scalar::Scalar;

/// 2×2, stride-2 max pooling.
///
/// Returns the pooled tensor and, per output element, the flat input index
/// that won. Ties go to the first element in row-major scan order.
pub fn maxpool2d<T: Scalar>(input: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<usize>)> {
    let s = input.shape();
    if s.h % 2 != 0 {
        return Err(Error::Dimension {
            axis: "height (must be even for 2x2 pooling)".into(),
            expected: s.h + 1,
            actual: s.h,
        });
    }
    if s.w % 2 != 0 {
        return Err(Error::Dimension {
            axis: "width (must be even for 2x2 pooling)".into(),
            expected: s.w + 1,
            actual: s.w,
        });
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut best = s.index(n, c, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = s.index(n, c, 2 * oy + dy, 2 * ox + dx);
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor4D::new(out_shape, out)?, argmax))
}

/// Routes each output gradient to the input element recorded in `argmax`.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: Shape,
    argmax: &[usize],
    grad_output: &Tensor4D<T>,
) -> Result<Tensor4D<T>> {
    if argmax.len() != grad_output.len() {
        return Err(Error::dim("argmax length", grad_output.len(), argmax.len()));
    }
    grad_output
        .shape()
        .expect(&Shape::new(input_shape.n, input_shape.c, input_shape.h / 2, input_shape.w / 2))?;
    let mut grad = Tensor4D::zeros(input_shape);
    let g = grad.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_output.data()) {
        g[i] += v;
    }
    Ok(grad)
}
