//! The composite training objective: smooth-L1 reconstruction, a
//! multi-scale structural-similarity term, and a multi-level Sobel gradient
//! consistency term, each with exact reverse-mode gradients with respect to
//! the predictions.

use crate::error::{Error, Result};
use crate::gauss::{valid_blur, valid_blur_adjoint, WINDOW};
use crate::tensor::{sc, Scalar, Tensor};

/// Stabilizers of the similarity ratios, for a dynamic range of 1.0:
/// `C1 = (K1*R)^2`, `C2 = (K2*R)^2` with `K1 = 0.01`, `K2 = 0.03`.
const C1: f64 = 0.0001;
const C2: f64 = 0.0009;

/// Per-scale exponents of the five-scale structural similarity product.
const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Copy, Debug)]
pub struct LossWeights<T> {
    pub lambda_rec: T,
    pub lambda_ms_ssim: T,
    pub lambda_grad: T,
    /// Per-decoder-scale weights of the gradient term, finest first.
    pub omega: [T; 3],
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> LossWeights<T> {
        LossWeights {
            lambda_rec: sc(0.975),
            lambda_ms_ssim: sc(0.025),
            lambda_grad: sc(1.0),
            omega: [sc(1.0), sc(1.0), sc(0.04)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub rec: T,
    pub ms_ssim: T,
    pub grad: T,
    pub total: T,
}

/// Mean smooth-L1 penalty of `e - g`: `0.5 x^2` inside the unit interval,
/// `|x| - 0.5` outside; the derivative is continuous at `|x| = 1`.
pub fn smooth_l1<T: Scalar>(e: &Tensor<T>, g: &Tensor<T>) -> Result<T> {
    if e.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "smooth_l1 requires identical shapes, got {} vs {}",
            e.shape(),
            g.shape()
        )));
    }
    let half = sc::<T>(0.5);
    let mut acc = T::zero();
    for (&a, &b) in e.data().iter().zip(g.data()) {
        let x = a - b;
        let ax = x.abs();
        acc = acc + if ax < T::one() { half * x * x } else { ax - half };
    }
    Ok(acc / sc(e.data().len() as f64))
}

/// Gradient of [`smooth_l1`] with respect to `e`, scaled by `upstream`.
pub fn smooth_l1_backward<T: Scalar>(
    e: &Tensor<T>,
    g: &Tensor<T>,
    upstream: T,
) -> Result<Tensor<T>> {
    if e.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "smooth_l1 requires identical shapes, got {} vs {}",
            e.shape(),
            g.shape()
        )));
    }
    let scale = upstream / sc(e.data().len() as f64);
    e.zip_map(g, |a, b| {
        let x = a - b;
        let d = if x.abs() < T::one() { x } else { T::one().copysign(x) };
        d * scale
    })
}

/// One pyramid level's saved state for the structural term's backward pass.
struct ScaleCache<T> {
    x: Tensor<T>,
    y: Tensor<T>,
    mu_x: Tensor<T>,
    mu_y: Tensor<T>,
    l_map: Tensor<T>,
    cs_map: Tensor<T>,
    b1: Tensor<T>,
    b2: Tensor<T>,
    /// Per-batch-item map means: `mean(cs)` below the top scale,
    /// `mean(l * cs)` at the top.
    per_item: Vec<T>,
}

/// Multi-scale structural similarity machinery shared by the forward-only
/// and gradient paths. `B` is the batch size; `caches[s]` holds scale `s`.
struct MsSsimEval<T> {
    caches: Vec<ScaleCache<T>>,
    weights: Vec<T>,
    /// 1 - mean over items of the weighted per-scale mean products.
    loss: T,
}

fn per_item_mean<T: Scalar>(map: &Tensor<T>) -> Vec<T> {
    let s = map.shape();
    let denom = sc::<T>((s.channels * s.plane()) as f64);
    (0..s.batch)
        .map(|n| {
            let mut acc = T::zero();
            for c in 0..s.channels {
                for &v in map.plane(n, c) {
                    acc = acc + v;
                }
            }
            acc / denom
        })
        .collect()
}

fn ms_ssim_eval<T: Scalar>(e: &Tensor<T>, g: &Tensor<T>) -> Result<MsSsimEval<T>> {
    if e.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "structural loss requires identical shapes, got {} vs {}",
            e.shape(),
            g.shape()
        )));
    }
    let s = e.shape();
    if s.height < WINDOW || s.width < WINDOW {
        return Err(Error::Shape(format!(
            "structural loss needs spatial size >= {WINDOW}, got {s}"
        )));
    }

    // grayscale pyramid with dyadic pooling; use as many of the five scales
    // as the resolution supports and renormalize their exponents to sum 1
    let mut x = e.to_grayscale()?;
    let mut y = g.to_grayscale()?;
    let mut levels = vec![(x.clone(), y.clone())];
    while levels.len() < SCALE_WEIGHTS.len() {
        let sh = x.shape();
        if sh.height / 2 < WINDOW || sh.width / 2 < WINDOW {
            break;
        }
        x = x.avg_pool2()?;
        y = y.avg_pool2()?;
        levels.push((x.clone(), y.clone()));
    }
    let m = levels.len();
    let wsum: f64 = SCALE_WEIGHTS[..m].iter().sum();
    let weights: Vec<T> = SCALE_WEIGHTS[..m].iter().map(|&w| sc(w / wsum)).collect();

    let c1 = sc::<T>(C1);
    let c2 = sc::<T>(C2);
    let two = sc::<T>(2.0);
    let mut caches = Vec::with_capacity(m);
    for (scale, (x, y)) in levels.into_iter().enumerate() {
        let mu_x = valid_blur(&x)?;
        let mu_y = valid_blur(&y)?;
        let gxx = valid_blur(&x.mul(&x)?)?;
        let gyy = valid_blur(&y.mul(&y)?)?;
        let gxy = valid_blur(&x.mul(&y)?)?;
        let var_x = gxx.sub(&mu_x.mul(&mu_x)?)?;
        let var_y = gyy.sub(&mu_y.mul(&mu_y)?)?;
        let cov = gxy.sub(&mu_x.mul(&mu_y)?)?;

        let a1 = mu_x.mul(&mu_y)?.scale(two).map(|v| v + c1);
        let b1 = mu_x
            .mul(&mu_x)?
            .add(&mu_y.mul(&mu_y)?)?
            .map(|v| v + c1);
        let a2 = cov.scale(two).map(|v| v + c2);
        let b2 = var_x.add(&var_y)?.map(|v| v + c2);
        let l_map = a1.zip_map(&b1, |a, b| a / b)?;
        let cs_map = a2.zip_map(&b2, |a, b| a / b)?;

        let per_item = if scale + 1 == m {
            per_item_mean(&l_map.mul(&cs_map)?)
        } else {
            per_item_mean(&cs_map)
        };
        caches.push(ScaleCache { x, y, mu_x, mu_y, l_map, cs_map, b1, b2, per_item });
    }

    // weighted product per item over relu-clamped means (negative structure
    // means would otherwise put a fractional power outside its domain)
    let batch = s.batch;
    let mut products = Vec::with_capacity(batch);
    for n in 0..batch {
        let mut p = T::one();
        for (cache, &w) in caches.iter().zip(&weights) {
            let v = cache.per_item[n].max(T::zero());
            p = p * v.powf(w);
        }
        products.push(p);
    }
    let mean = products.iter().fold(T::zero(), |a, &b| a + b) / sc(batch as f64);
    Ok(MsSsimEval { caches, weights, loss: T::one() - mean })
}

/// `1 - MS-SSIM(e, g)` on grayscale, five scales (or as many as fit).
pub fn ms_ssim_loss<T: Scalar>(e: &Tensor<T>, g: &Tensor<T>) -> Result<T> {
    Ok(ms_ssim_eval(e, g)?.loss)
}

/// [`ms_ssim_loss`] plus its gradient with respect to `e`, scaled by
/// `upstream`.
pub fn ms_ssim_loss_backward<T: Scalar>(
    e: &Tensor<T>,
    g: &Tensor<T>,
    upstream: T,
) -> Result<(T, Tensor<T>)> {
    let eval = ms_ssim_eval(e, g)?;
    let m = eval.caches.len();
    let batch = e.shape().batch;
    let two = sc::<T>(2.0);

    // d loss / d product_n = -upstream / B
    let d_product = upstream.neg() / sc::<T>(batch as f64);

    // accumulated gradient at the full-resolution grayscale level
    let gray_shape = eval.caches[0].x.shape();
    let mut d_gray = Tensor::<T>::zeros(gray_shape);

    for (scale, cache) in eval.caches.iter().enumerate() {
        let w = eval.weights[scale];
        let ms = cache.x.shape();

        // d product / d per_item mean, via the weighted product rule;
        // clamped (non-positive) means contribute no gradient
        let mut d_mean = vec![T::zero(); batch];
        for n in 0..batch {
            let v = cache.per_item[n];
            if v > T::zero() {
                let others = eval
                    .caches
                    .iter()
                    .zip(&eval.weights)
                    .enumerate()
                    .filter(|&(t, _)| t != scale)
                    .map(|(_, (c, &wt))| c.per_item[n].max(T::zero()).powf(wt))
                    .fold(T::one(), |a, b| a * b);
                d_mean[n] = d_product * w * others * v.powf(w - T::one());
            }
        }

        // spread the per-item mean gradient uniformly over that item's map
        let map_shape = cache.l_map.shape();
        let denom = sc::<T>((map_shape.channels * map_shape.plane()) as f64);
        let spread = |dm: &[T]| {
            Tensor::<T>::from_fn(map_shape, |n, _, _, _| dm[n] / denom)
        };
        let (d_l, d_cs) = if scale + 1 == m {
            // top scale: mean of l*cs
            let base = spread(&d_mean);
            (base.mul(&cache.cs_map)?, base.mul(&cache.l_map)?)
        } else {
            (Tensor::<T>::zeros(map_shape), spread(&d_mean))
        };

        // similarity-ratio backward at this scale, prediction side only
        let d_a2 = d_cs.zip_map(&cache.b2, |d, b| d / b)?;
        let d_b2 = d_cs
            .mul(&cache.cs_map)?
            .zip_map(&cache.b2, |d, b| (d / b).neg())?;
        let d_cov = d_a2.scale(two);
        let d_var_x = d_b2.clone();
        let d_a1 = d_l.zip_map(&cache.b1, |d, b| d / b)?;
        let d_b1 = d_l
            .mul(&cache.l_map)?
            .zip_map(&cache.b1, |d, b| (d / b).neg())?;

        // mu_x receives terms from a1, b1, var_x = gxx - mu_x^2, and
        // cov = gxy - mu_x mu_y
        let mut d_mu_x = d_a1.mul(&cache.mu_y)?.scale(two);
        d_mu_x.add_assign(&d_b1.mul(&cache.mu_x)?.scale(two))?;
        d_mu_x.add_assign(&d_var_x.mul(&cache.mu_x)?.scale(two.neg()))?;
        d_mu_x.add_assign(&d_cov.mul(&cache.mu_y)?.scale(T::one().neg()))?;

        // x receives blur-adjoints of mu_x, gxx (chain 2x), gxy (chain y)
        let (sh, sw) = (ms.height, ms.width);
        let mut d_x = valid_blur_adjoint(&d_mu_x, sh, sw)?;
        d_x.add_assign(&valid_blur_adjoint(&d_var_x, sh, sw)?.mul(&cache.x)?.scale(two))?;
        d_x.add_assign(&valid_blur_adjoint(&d_cov, sh, sw)?.mul(&cache.y)?)?;

        // walk back up the pooling chain to full resolution
        let mut d_level = d_x;
        for src in (0..scale).rev() {
            d_level = Tensor::avg_pool2_backward(&d_level, eval.caches[src].x.shape())?;
        }
        d_gray.add_assign(&d_level)?;
    }

    let de = Tensor::to_grayscale_backward(&d_gray)?;
    Ok((eval.loss, de))
}

/// Multi-level Sobel gradient consistency: each decoder scale's grayscale
/// gradients against those of the reference resized to that scale.
pub fn grad_loss<T: Scalar>(
    o1: &Tensor<T>,
    o2: &Tensor<T>,
    o3: &Tensor<T>,
    g: &Tensor<T>,
    weights: &LossWeights<T>,
) -> Result<T> {
    let (loss, _) = grad_loss_impl(o1, o2, o3, g, weights, false, T::zero())?;
    Ok(loss)
}

/// [`grad_loss`] plus gradients with respect to the three predictions,
/// scaled by `upstream`.
pub fn grad_loss_backward<T: Scalar>(
    o1: &Tensor<T>,
    o2: &Tensor<T>,
    o3: &Tensor<T>,
    g: &Tensor<T>,
    weights: &LossWeights<T>,
    upstream: T,
) -> Result<(T, [Tensor<T>; 3])> {
    let (loss, grads) = grad_loss_impl(o1, o2, o3, g, weights, true, upstream)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn grad_loss_impl<T: Scalar>(
    o1: &Tensor<T>,
    o2: &Tensor<T>,
    o3: &Tensor<T>,
    g: &Tensor<T>,
    weights: &LossWeights<T>,
    want_grads: bool,
    upstream: T,
) -> Result<(T, Option<[Tensor<T>; 3]>)> {
    let mut loss = T::zero();
    let mut grads: Vec<Tensor<T>> = Vec::with_capacity(3);
    for (o, &omega) in [o1, o2, o3].into_iter().zip(&weights.omega) {
        let os = o.shape();
        if os.batch != g.shape().batch {
            return Err(Error::Shape(format!(
                "prediction batch {} does not match reference batch {}",
                os.batch,
                g.shape().batch
            )));
        }
        // reference resized to this scale (identity at matching size)
        let target = g.bilinear_resize(os.height, os.width)?;
        let o_gray = o.to_grayscale()?;
        let t_gray = target.to_grayscale()?;
        let (ox, oy) = o_gray.sobel_gradients()?;
        let (tx, ty) = t_gray.sobel_gradients()?;
        loss = loss + omega * (smooth_l1(&ox, &tx)? + smooth_l1(&oy, &ty)?);

        if want_grads {
            let up = upstream * omega;
            let d_ox = smooth_l1_backward(&ox, &tx, up)?;
            let d_oy = smooth_l1_backward(&oy, &ty, up)?;
            let d_gray = Tensor::sobel_backward(&d_ox, &d_oy)?;
            grads.push(Tensor::to_grayscale_backward(&d_gray)?);
        }
    }
    let grads = want_grads.then(|| {
        let mut it = grads.into_iter();
        [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
    });
    Ok((loss, grads))
}

/// The full objective: reconstruction and structural terms on the finest
/// output, the gradient term across all three scales, combined in a fixed
/// summation order.
pub fn total_loss<T: Scalar>(
    o1: &Tensor<T>,
    o2: &Tensor<T>,
    o3: &Tensor<T>,
    g: &Tensor<T>,
    weights: &LossWeights<T>,
) -> Result<LossBreakdown<T>> {
    let rec = smooth_l1(o1, g)?;
    let ms_ssim = ms_ssim_loss(o1, g)?;
    let grad = grad_loss(o1, o2, o3, g, weights)?;
    Ok(breakdown(rec, ms_ssim, grad, weights))
}

/// [`total_loss`] plus gradients with respect to the three predictions.
pub fn total_loss_backward<T: Scalar>(
    o1: &Tensor<T>,
    o2: &Tensor<T>,
    o3: &Tensor<T>,
    g: &Tensor<T>,
    weights: &LossWeights<T>,
) -> Result<(LossBreakdown<T>, [Tensor<T>; 3])> {
    let rec = smooth_l1(o1, g)?;
    let d_rec = smooth_l1_backward(o1, g, weights.lambda_rec)?;
    let (ms_ssim, d_ms) = ms_ssim_loss_backward(o1, g, weights.lambda_ms_ssim)?;
    let (grad, [mut d_o1, d_o2, d_o3]) =
        grad_loss_backward(o1, o2, o3, g, weights, weights.lambda_grad)?;

    // d_o1 starts as the gradient-term contribution; fold in the other two
    d_o1.add_assign(&d_rec)?;
    d_o1.add_assign(&d_ms)?;

    Ok((breakdown(rec, ms_ssim, grad, weights), [d_o1, d_o2, d_o3]))
}

fn breakdown<T: Scalar>(rec: T, ms_ssim: T, grad: T, w: &LossWeights<T>) -> LossBreakdown<T> {
    LossBreakdown {
        rec,
        ms_ssim,
        grad,
        total: w.lambda_rec * rec + w.lambda_ms_ssim * ms_ssim + w.lambda_grad * grad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::{numeric_gradient, numeric_gradient_at, Shape};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
    }

    fn noisy<T: Scalar>(base: &Tensor<T>, sigma: f64, seed: u64) -> Tensor<T> {
        let mut rng = seeded(seed);
        let mut out = base.clone();
        for v in out.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = *v + crate::tensor::sc::<T>(z * sigma);
        }
        out
    }

    #[test]
    fn smooth_l1_hits_the_quoted_branch_values() {
        let shape = Shape::new(1, 3, 4, 4);
        let g = Tensor::<f64>::random(shape, 0.0, 1.0, &mut seeded(1));
        assert_eq!(smooth_l1(&g, &g).unwrap(), 0.0);
        let e = g.map(|v| v + 0.5);
        assert!((smooth_l1(&e, &g).unwrap() - 0.125).abs() < 1e-15);
        let e = g.map(|v| v - 2.0);
        assert!((smooth_l1(&e, &g).unwrap() - 1.5).abs() < 1e-15);
        assert!(smooth_l1(&g, &Tensor::zeros(Shape::new(1, 3, 4, 5))).is_err());
    }

    #[test]
    fn smooth_l1_derivative_is_continuous_at_the_knee() {
        let shape = Shape::new(1, 1, 1, 1);
        let g = Tensor::<f64>::zeros(shape);
        for x in [1.0 - 1e-9, 1.0 + 1e-9, -1.0 + 1e-9, -1.0 - 1e-9] {
            let e = Tensor::new(shape, vec![x]).unwrap();
            let d = smooth_l1_backward(&e, &g, 1.0).unwrap().data()[0];
            assert!((d.abs() - 1.0).abs() < 1e-8, "x={x} d={d}");
            assert_eq!(d.signum(), x.signum());
        }
    }

    #[test]
    fn smooth_l1_backward_matches_finite_differences() {
        let shape = Shape::new(2, 3, 5, 5);
        // spread differences across both branches
        let g = Tensor::<f64>::random(shape, 0.0, 1.0, &mut seeded(2));
        let e = g
            .zip_map(
                &Tensor::<f64>::random(shape, -2.5, 2.5, &mut seeded(3)),
                |gv, d| gv + d,
            )
            .unwrap();
        let analytic = smooth_l1_backward(&e, &g, 1.7).unwrap();
        let numeric = numeric_gradient(|t| 1.7 * smooth_l1(t, &g).unwrap(), &e, 1e-6);
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            assert!(rel_err(a, n) <= 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn ms_ssim_is_zero_for_identical_images() {
        // large enough for all five scales: min dim 176
        let img = Tensor::<f64>::random(Shape::new(1, 3, 180, 180), 0.0, 1.0, &mut seeded(4));
        let loss = ms_ssim_loss(&img, &img).unwrap();
        assert!(loss.abs() < 1e-6, "loss {loss}");

        // constant pair is also a perfect match, with an exactly-zero gradient
        let c = Tensor::<f64>::full(Shape::new(1, 3, 32, 32), 0.4);
        let (loss, de) = ms_ssim_loss_backward(&c, &c, 1.0).unwrap();
        assert!(loss.abs() < 1e-9);
        assert!(de.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn ms_ssim_grows_with_noise() {
        let base = Tensor::<f64>::from_fn(Shape::new(1, 3, 64, 64), |_, c, y, x| {
            0.3 + 0.2 * ((x + y + 10 * c) as f64 / 40.0).sin().abs()
        });
        let mut prev = ms_ssim_loss(&base, &base).unwrap();
        for (i, sigma) in [0.01, 0.05, 0.1].into_iter().enumerate() {
            let cur = ms_ssim_loss(&noisy(&base, sigma, 5), &base).unwrap();
            assert!(cur > prev, "sigma {sigma}: {cur} !> {prev} (step {i})");
            prev = cur;
        }
    }

    #[test]
    fn ms_ssim_reduces_scales_on_small_inputs() {
        // 40x40 supports scales at 40 and 20 only (10 < window)
        let img = Tensor::<f64>::random(Shape::new(2, 3, 40, 40), 0.0, 1.0, &mut seeded(6));
        let loss = ms_ssim_loss(&img, &img).unwrap();
        assert!(loss.abs() < 1e-6);
        let other = Tensor::<f64>::random(Shape::new(2, 3, 40, 40), 0.0, 1.0, &mut seeded(7));
        let loss = ms_ssim_loss(&img, &other).unwrap();
        assert!(loss.is_finite() && loss > 0.0);

        // below one window is a structural error
        let tiny = Tensor::<f64>::zeros(Shape::new(1, 3, 10, 10));
        assert!(ms_ssim_loss(&tiny, &tiny).is_err());
    }

    #[test]
    fn ms_ssim_backward_matches_finite_differences() {
        // 24x24 keeps two scales and the finite-difference loop fast
        let shape = Shape::new(1, 3, 24, 24);
        let g = Tensor::<f64>::random(shape, 0.1, 0.9, &mut seeded(8));
        let e = noisy(&g, 0.05, 9);
        let (_, analytic) = ms_ssim_loss_backward(&e, &g, 1.0).unwrap();
        let coords: Vec<usize> = (0..shape.count()).step_by(31).collect();
        let numeric = numeric_gradient_at(|t| ms_ssim_loss(t, &g).unwrap(), &e, 1e-6, &coords);
        for (k, &c) in coords.iter().enumerate() {
            let (a, n) = (analytic.data()[c], numeric[k]);
            assert!(rel_err(a, n) <= 1e-5, "coord {c}: {a} vs {n}");
        }
    }

    #[test]
    fn grad_loss_zeroes_and_weights() {
        let w = LossWeights::<f64>::default();
        let g = Tensor::<f64>::random(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut seeded(10));
        let d2 = g.bilinear_resize(16, 16).unwrap();
        let d3 = g.bilinear_resize(8, 8).unwrap();
        // perfectly consistent predictions cost nothing
        let loss = grad_loss(&g, &d2, &d3, &g, &w).unwrap();
        assert!(loss.abs() < 1e-12);

        // matching constants cost nothing at any level (resize of a
        // constant is the same constant, so every edge map pair agrees)
        let c1 = Tensor::<f64>::full(Shape::new(1, 3, 32, 32), 0.7);
        let c2 = Tensor::<f64>::full(Shape::new(1, 3, 16, 16), 0.7);
        let c3 = Tensor::<f64>::full(Shape::new(1, 3, 8, 8), 0.7);
        let cg = Tensor::<f64>::full(Shape::new(1, 3, 32, 32), 0.7);
        assert!(grad_loss(&c1, &c2, &c3, &cg, &w).unwrap().abs() < 1e-12);

        // omega_3 = 0 removes all sensitivity to the coarsest prediction
        let mut w0 = w;
        w0.omega[2] = 0.0;
        let o3a = Tensor::<f64>::random(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut seeded(11));
        let o3b = noisy(&o3a, 0.3, 12);
        let la = grad_loss(&g, &d2, &o3a, &g, &w0).unwrap();
        let lb = grad_loss(&g, &d2, &o3b, &g, &w0).unwrap();
        assert_eq!(la, lb);
        // while the default weights do feel it
        let la = grad_loss(&g, &d2, &o3a, &g, &w).unwrap();
        let lb = grad_loss(&g, &d2, &o3b, &g, &w).unwrap();
        assert_ne!(la, lb);
    }

    #[test]
    fn grad_loss_backward_matches_finite_differences() {
        let w = LossWeights::<f64>::default();
        let g = Tensor::<f64>::random(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut seeded(13));
        let o1 = noisy(&g, 0.1, 14);
        let o2 = Tensor::<f64>::random(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut seeded(15));
        let o3 = Tensor::<f64>::random(Shape::new(1, 3, 4, 4), 0.0, 1.0, &mut seeded(16));
        let (_, grads) = grad_loss_backward(&o1, &o2, &o3, &g, &w, 1.3).unwrap();

        for (o, analytic, label) in [(&o1, &grads[0], "o1"), (&o2, &grads[1], "o2"), (&o3, &grads[2], "o3")] {
            let numeric = numeric_gradient(
                |t| {
                    let (a, b, c) = match label {
                        "o1" => (t, &o2, &o3),
                        "o2" => (&o1, t, &o3),
                        _ => (&o1, &o2, t),
                    };
                    1.3 * grad_loss(a, b, c, &g, &w).unwrap()
                },
                o,
                1e-6,
            );
            for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
                assert!(rel_err(a, n) <= 1e-5, "{label}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn total_loss_combines_components_exactly() {
        let w = LossWeights::<f64>::default();
        let g = Tensor::<f64>::random(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut seeded(17));
        let d2 = g.bilinear_resize(16, 16).unwrap();
        let d3 = g.bilinear_resize(8, 8).unwrap();

        // perfect prediction: every component is (numerically) zero
        let b = total_loss(&g, &d2, &d3, &g, &w).unwrap();
        assert!(b.rec == 0.0 && b.grad.abs() < 1e-12 && b.ms_ssim.abs() < 1e-6);
        assert!(b.total.abs() < 1e-6);

        // weighting arithmetic is exact
        let o1 = noisy(&g, 0.1, 18);
        let b = total_loss(&o1, &d2, &d3, &g, &w).unwrap();
        assert_eq!(b.total, 0.975 * b.rec + 0.025 * b.ms_ssim + 1.0 * b.grad);
        let rec_only = LossWeights { lambda_ms_ssim: 0.0, lambda_grad: 0.0, ..w };
        let b = total_loss(&o1, &d2, &d3, &g, &rec_only).unwrap();
        assert_eq!(b.total, 0.975 * smooth_l1(&o1, &g).unwrap());
    }

    #[test]
    fn total_loss_backward_matches_finite_differences() {
        let w = LossWeights::<f64>::default();
        let g = Tensor::<f64>::random(Shape::new(1, 3, 24, 24), 0.1, 0.9, &mut seeded(19));
        let o1 = noisy(&g, 0.08, 20);
        let o2 = Tensor::<f64>::random(Shape::new(1, 3, 12, 12), 0.0, 1.0, &mut seeded(21));
        let o3 = Tensor::<f64>::random(Shape::new(1, 3, 6, 6), 0.0, 1.0, &mut seeded(22));
        let (_, grads) = total_loss_backward(&o1, &o2, &o3, &g, &w).unwrap();

        let coords1: Vec<usize> = (0..o1.shape().count()).step_by(29).collect();
        let numeric = numeric_gradient_at(
            |t| total_loss(t, &o2, &o3, &g, &w).unwrap().total,
            &o1,
            1e-6,
            &coords1,
        );
        for (k, &c) in coords1.iter().enumerate() {
            let (a, n) = (grads[0].data()[c], numeric[k]);
            assert!(rel_err(a, n) <= 1e-5, "o1[{c}]: {a} vs {n}");
        }
        // coarser outputs only feel the gradient term
        let numeric = numeric_gradient(
            |t| total_loss(&o1, t, &o3, &g, &w).unwrap().total,
            &o2,
            1e-6,
        );
        for (&a, &n) in grads[1].data().iter().zip(numeric.data()) {
            assert!(rel_err(a, n) <= 1e-5, "o2: {a} vs {n}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn components_are_non_negative(seed in 0u64..1000) {
            let w = LossWeights::<f64>::default();
            let g = Tensor::<f64>::random(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut seeded(seed));
            let o1 = Tensor::<f64>::random(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut seeded(seed ^ 1));
            let o2 = Tensor::<f64>::random(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut seeded(seed ^ 2));
            let o3 = Tensor::<f64>::random(Shape::new(1, 3, 4, 4), 0.0, 1.0, &mut seeded(seed ^ 3));
            let b = total_loss(&o1, &o2, &o3, &g, &w).unwrap();
            prop_assert!(b.rec >= 0.0);
            prop_assert!(b.ms_ssim >= 0.0);
            prop_assert!(b.grad >= 0.0);
            prop_assert_eq!(b.total, 0.975 * b.rec + 0.025 * b.ms_ssim + b.grad);
        }

        #[test]
        fn smooth_l1_is_symmetric_and_shift_invariant(seed in 0u64..1000, c in -0.5f64..0.5) {
            let shape = Shape::new(1, 3, 8, 8);
            let e = Tensor::<f64>::random(shape, 0.0, 1.0, &mut seeded(seed));
            let g = Tensor::<f64>::random(shape, 0.0, 1.0, &mut seeded(seed ^ 7));
            let base = smooth_l1(&e, &g).unwrap();
            prop_assert_eq!(base, smooth_l1(&g, &e).unwrap());
            let shifted = smooth_l1(&e.map(|v| v + c), &g.map(|v| v + c)).unwrap();
            prop_assert!((shifted - base).abs() < 1e-12);
        }
    }
}
