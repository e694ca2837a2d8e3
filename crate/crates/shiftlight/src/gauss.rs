//! Shared 11-tap Gaussian window (sigma 1.5) and the separable
//! valid-window blur built on it. Both the structural-similarity metric and
//! the multi-scale structural loss use these to form local means.

use crate::error::{Error, Result};
use crate::tensor::{sc, Scalar, Shape, Tensor};

pub(crate) const WINDOW: usize = 11;
pub(crate) const SIGMA: f64 = 1.5;

/// Normalized 1-D Gaussian taps, computed in f64 and converted once.
pub(crate) fn kernel<T: Scalar>() -> Vec<T> {
    let mid = (WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..WINDOW)
        .map(|i| {
            let d = i as f64 - mid;
            (-d * d / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| sc(v / total)).collect()
}

/// Separable valid-window Gaussian blur: output is `(h-10, w-10)`.
/// With a unit-sum kernel this is a local weighted mean.
pub(crate) fn valid_blur<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.height < WINDOW || s.width < WINDOW {
        return Err(Error::Shape(format!(
            "valid blur needs spatial size >= {WINDOW}, got {s}"
        )));
    }
    let k = kernel::<T>();
    Ok(blur_rows_valid(&blur_cols_valid(t, &k), &k))
}

/// Adjoint of `valid_blur`: scatter a `(h-10, w-10)` upstream gradient back
/// onto the `(src_h, src_w)` source.
pub(crate) fn valid_blur_adjoint<T: Scalar>(
    upstream: &Tensor<T>,
    src_h: usize,
    src_w: usize,
) -> Result<Tensor<T>> {
    let s = upstream.shape();
    if src_h != s.height + WINDOW - 1 || src_w != s.width + WINDOW - 1 {
        return Err(Error::Shape(format!(
            "blur adjoint: upstream {} inconsistent with source {}x{}",
            s, src_h, src_w
        )));
    }
    let k = kernel::<T>();
    // forward is rows-after-cols, so the adjoint is cols-scatter after
    // rows-scatter
    Ok(scatter_cols(&scatter_rows(upstream, &k), &k))
}

/// Horizontal valid convolution: `(h, w)` -> `(h, w-10)`.
fn blur_cols_valid<T: Scalar>(t: &Tensor<T>, k: &[T]) -> Tensor<T> {
    let s = t.shape();
    let ow = s.width - (WINDOW - 1);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, s.height, ow));
    for n in 0..s.batch {
        for c in 0..s.channels {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.height {
                let row = &src[y * s.width..(y + 1) * s.width];
                let drow = &mut dst[y * ow..(y + 1) * ow];
                for (x, d) in drow.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for (i, &kv) in k.iter().enumerate() {
                        acc = acc + kv * row[x + i];
                    }
                    *d = acc;
                }
            }
        }
    }
    out
}

/// Vertical valid convolution: `(h, w)` -> `(h-10, w)`.
fn blur_rows_valid<T: Scalar>(t: &Tensor<T>, k: &[T]) -> Tensor<T> {
    let s = t.shape();
    let oh = s.height - (WINDOW - 1);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, oh, s.width));
    for n in 0..s.batch {
        for c in 0..s.channels {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                for (i, &kv) in k.iter().enumerate() {
                    let srow = &src[(y + i) * s.width..(y + i + 1) * s.width];
                    let drow = &mut dst[y * s.width..(y + 1) * s.width];
                    for (d, &v) in drow.iter_mut().zip(srow) {
                        *d = *d + kv * v;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `blur_rows_valid`: `(h, w)` -> `(h+10, w)`.
fn scatter_rows<T: Scalar>(t: &Tensor<T>, k: &[T]) -> Tensor<T> {
    let s = t.shape();
    let oh = s.height + (WINDOW - 1);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, oh, s.width));
    for n in 0..s.batch {
        for c in 0..s.channels {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.height {
                let srow = &src[y * s.width..(y + 1) * s.width];
                for (i, &kv) in k.iter().enumerate() {
                    let drow = &mut dst[(y + i) * s.width..(y + i + 1) * s.width];
                    for (d, &v) in drow.iter_mut().zip(srow) {
                        *d = *d + kv * v;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `blur_cols_valid`: `(h, w)` -> `(h, w+10)`.
fn scatter_cols<T: Scalar>(t: &Tensor<T>, k: &[T]) -> Tensor<T> {
    let s = t.shape();
    let ow = s.width + (WINDOW - 1);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, s.height, ow));
    for n in 0..s.batch {
        for c in 0..s.channels {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.height {
                let srow = &src[y * s.width..(y + 1) * s.width];
                let drow = &mut dst[y * ow..(y + 1) * ow];
                for (x, &v) in srow.iter().enumerate() {
                    for (i, &kv) in k.iter().enumerate() {
                        drow[x + i] = drow[x + i] + kv * v;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::numeric_gradient;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = kernel::<f64>();
        assert_eq!(k.len(), WINDOW);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..WINDOW / 2 {
            assert_eq!(k[i], k[WINDOW - 1 - i]);
        }
        assert!(k[WINDOW / 2] > k[0]);
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 13, 15), 0.42);
        let b = valid_blur(&x).unwrap();
        assert_eq!(b.shape(), Shape::new(1, 1, 3, 5));
        for &v in b.data() {
            assert!((v - 0.42).abs() < 1e-14);
        }
        assert!(valid_blur(&Tensor::<f64>::zeros(Shape::new(1, 1, 10, 12))).is_err());
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let mut rng = seeded(71);
        let x = Tensor::<f64>::random(Shape::new(1, 1, 13, 14), -1.0, 1.0, &mut rng);
        let r = Tensor::<f64>::random(Shape::new(1, 1, 3, 4), -1.0, 1.0, &mut rng);
        let analytic = valid_blur_adjoint(&r, 13, 14).unwrap();
        let numeric = numeric_gradient(
            |t| valid_blur(t).unwrap().mul(&r).unwrap().sum(),
            &x,
            1e-6,
        );
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(e <= 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn adjoint_preserves_inner_products() {
        // <blur(x), y> == <x, adjoint(y)> for random x, y
        let mut rng = seeded(72);
        let x = Tensor::<f64>::random(Shape::new(1, 2, 12, 16), -1.0, 1.0, &mut rng);
        let y = Tensor::<f64>::random(Shape::new(1, 2, 2, 6), -1.0, 1.0, &mut rng);
        let lhs = valid_blur(&x).unwrap().mul(&y).unwrap().sum();
        let rhs = valid_blur_adjoint(&y, 12, 16).unwrap().mul(&x).unwrap().sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }
}
