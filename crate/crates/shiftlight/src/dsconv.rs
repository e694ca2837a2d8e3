//! The shift-based convolution kernel: a per-channel affine map feeding a
//! 9-way shifted aggregation whose sigmoid gate multiplies the feature back.
//! Includes exact reverse-mode gradients, Kaiming-scaled initialization, and
//! parameter/FLOP audits with the dilated-convolution comparison.

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{sc, Scalar, Shape, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

/// Where the kernel sits in the encoder/decoder: `Plain` keeps resolution,
/// `Down` average-pools its output 2x, `Up` bilinearly resizes its input to
/// the target resolution before anything else runs.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DsConvVariant {
    Plain,
    Down,
    Up,
}

/// Learnable state of one kernel: two per-channel affine maps (a 1x1 grouped
/// convolution each) plus the fixed dilation and variant.
#[derive(Clone, Debug, PartialEq)]
pub struct DsConvParams<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub dia: usize,
    pub variant: DsConvVariant,
}

impl<T: Scalar> DsConvParams<T> {
    pub fn channels(&self) -> usize {
        self.w1.len()
    }

    /// Total scalar count; always equals [`dsconv_param_count`].
    pub fn param_count(&self) -> u64 {
        (self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()) as u64
    }
}

/// Gradients of one kernel's learnables, laid out like [`DsConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct DsConvGrads<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> DsConvGrads<T> {
    pub fn zeros(channels: usize) -> DsConvGrads<T> {
        DsConvGrads {
            w1: vec![T::zero(); channels],
            b1: vec![T::zero(); channels],
            w2: vec![T::zero(); channels],
            b2: vec![T::zero(); channels],
        }
    }

    /// Accumulate another kernel's gradients (weight tying sums gradients
    /// across every site sharing the parameters).
    pub fn add_assign(&mut self, other: &DsConvGrads<T>) {
        for (a, b) in [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
        ] {
            debug_assert_eq!(a.len(), b.len());
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }
}

/// Saved intermediates from a forward pass, sufficient for backward. Carries
/// a copy of the (tiny) parameter vectors so backward needs no extra inputs.
#[derive(Clone, Debug)]
pub struct DsConvCache<T> {
    params: DsConvParams<T>,
    /// Shape of the original input, before any up-variant resampling.
    input_shape: Shape,
    /// Input to the first affine map (the resampled input for `Up`).
    conv1_input: Tensor<T>,
    /// Post-ReLU feature; both the gated path and the aggregation read it.
    feature: Tensor<T>,
    /// 9-way shift aggregation of the feature.
    aggregated: Tensor<T>,
    /// Sigmoid gate.
    gate: Tensor<T>,
}

/// Sum of the nine windows of `x` shifted by `{-dia, 0, dia}` in each axis,
/// with zero padding: `out[y,x] = sum x[y + i*dia, x + j*dia]` over in-bounds
/// taps. Equivalent to cross-correlation with an all-ones 3x3 kernel at
/// dilation `dia` and zero padding `dia`.
pub fn aggregate_shifts<T: Scalar>(x: &Tensor<T>, dia: usize) -> Tensor<T> {
    let s = x.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    let d = dia as isize;
    let mut out = Tensor::zeros(s);
    for n in 0..s.batch {
        for c in 0..s.channels {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for di in [-d, 0, d] {
                let y0 = 0.max(-di);
                let y1 = h.min(h - di);
                for dj in [-d, 0, d] {
                    let x0 = 0.max(-dj);
                    let x1 = w.min(w - dj);
                    if y0 >= y1 || x0 >= x1 {
                        continue;
                    }
                    let len = (x1 - x0) as usize;
                    for y in y0..y1 {
                        let s0 = ((y + di) * w + x0 + dj) as usize;
                        let d0 = (y * w + x0) as usize;
                        for k in 0..len {
                            dst[d0 + k] = dst[d0 + k] + src[s0 + k];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`aggregate_shifts`]. The shift offsets form a symmetric set
/// (for every `(i,j)` the set contains `(-i,-j)`), so the adjoint of the
/// aggregation is the aggregation itself.
pub fn aggregate_shifts_backward<T: Scalar>(upstream: &Tensor<T>, dia: usize) -> Tensor<T> {
    aggregate_shifts(upstream, dia)
}

/// Kernel forward pass. `up_target` supplies the output resolution for the
/// `Up` variant (defaulting to 2x the input); other variants must not
/// receive one.
pub fn dsconv_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &DsConvParams<T>,
    up_target: Option<(usize, usize)>,
) -> Result<(Tensor<T>, DsConvCache<T>)> {
    let s = x.shape();
    if s.channels != p.channels() {
        return Err(Error::Shape(format!(
            "kernel has {} channels but input has {}",
            p.channels(),
            s.channels
        )));
    }
    if p.variant != DsConvVariant::Up && up_target.is_some() {
        return Err(Error::InvalidArgument(
            "up_target is only meaningful for the up variant".into(),
        ));
    }

    let conv1_input = match p.variant {
        DsConvVariant::Up => {
            let (th, tw) = up_target.unwrap_or((2 * s.height, 2 * s.width));
            x.bilinear_resize(th, tw)?
        }
        _ => x.clone(),
    };

    let feature = conv1_input.channel_affine(&p.w1, &p.b1)?.relu();
    let aggregated = aggregate_shifts(&feature, p.dia);
    let gate = aggregated.channel_affine(&p.w2, &p.b2)?.sigmoid();
    let gated = gate.mul(&feature)?;

    let y = match p.variant {
        DsConvVariant::Down => gated.avg_pool2()?,
        _ => gated,
    };

    Ok((
        y,
        DsConvCache {
            params: p.clone(),
            input_shape: s,
            conv1_input,
            feature,
            aggregated,
            gate,
        },
    ))
}

/// Exact reverse-mode gradients of the kernel w.r.t. its input and
/// learnables.
pub fn dsconv_backward<T: Scalar>(
    cache: &DsConvCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, DsConvGrads<T>)> {
    let p = &cache.params;
    let fs = cache.feature.shape();
    let expected = match p.variant {
        DsConvVariant::Down => Shape::new(fs.batch, fs.channels, fs.height / 2, fs.width / 2),
        _ => fs,
    };
    if dy.shape() != expected {
        return Err(Error::Shape(format!(
            "upstream gradient shape {} does not match forward output {}",
            dy.shape(),
            expected
        )));
    }

    // undo the output pooling first for the down variant
    let d_gated = match p.variant {
        DsConvVariant::Down => Tensor::avg_pool2_backward(dy, fs)?,
        _ => dy.clone(),
    };

    // Y = G * X_r
    let (d_gate, d_feature_direct) = Tensor::mul_backward(&cache.gate, &cache.feature, &d_gated)?;
    // G = sigmoid(affine2(X_agg))
    let d_affine2 = Tensor::sigmoid_backward(&cache.gate, &d_gate)?;
    let (d_agg, dw2, db2) =
        Tensor::channel_affine_backward(&cache.aggregated, &p.w2, &d_affine2)?;
    // X_agg = aggregate(X_r); the aggregation path and the direct gate path
    // both feed X_r
    let mut d_feature = aggregate_shifts_backward(&d_agg, p.dia);
    d_feature.add_assign(&d_feature_direct)?;
    // X_r = relu(affine1(input))
    let d_affine1 = Tensor::relu_backward(&cache.feature, &d_feature)?;
    let (d_input, dw1, db1) =
        Tensor::channel_affine_backward(&cache.conv1_input, &p.w1, &d_affine1)?;

    // undo the input resampling last for the up variant
    let dx = match p.variant {
        DsConvVariant::Up => Tensor::bilinear_resize_backward(
            &d_input,
            cache.input_shape.height,
            cache.input_shape.width,
        )?,
        _ => d_input,
    };

    Ok((dx, DsConvGrads { w1: dw1, b1: db1, w2: dw2, b2: db2 }))
}

/// Kaiming-scaled initialization: weights drawn from N(0, 2) — fan_in 1 for
/// a 1x1 grouped kernel with ReLU gain sqrt(2) — then damped by 0.1; biases
/// start at exactly 0. Deterministic per seed.
pub fn init_params<T: Scalar>(
    channels: usize,
    dia: usize,
    variant: DsConvVariant,
    seed: u64,
) -> DsConvParams<T> {
    let mut rng = seeded(seed);
    let sigma = 2f64.sqrt();
    let scale = 0.1;
    let mut draw = |n: usize| -> Vec<T> {
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                sc(z * sigma * scale)
            })
            .collect()
    };
    DsConvParams {
        w1: draw(channels),
        b1: vec![T::zero(); channels],
        w2: draw(channels),
        b2: vec![T::zero(); channels],
        dia,
        variant,
    }
}

/// Learnable scalars in one kernel: two affine maps of `C` weights and `C`
/// biases each.
pub fn dsconv_param_count(channels: usize) -> u64 {
    4 * channels as u64
}

/// Learnable scalars in the reference 3x3 dilated convolution over the same
/// channel count: `9 C^2 + C`.
pub fn dilated_param_count(channels: usize) -> u64 {
    let c = channels as u64;
    9 * c * c + c
}

/// Itemized FLOP count for one kernel application at a given resolution.
/// The first affine map is billed at `4CHW` (the convention the totals are
/// quoted in), aggregation at `8CHW` (eight adds per output element), the
/// gate affine at `2CHW`, and the gate multiply at `CHW`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DsConvFlops {
    pub conv1: u64,
    pub aggregation: u64,
    pub conv2: u64,
    pub gate_mul: u64,
    pub total: u64,
}

pub fn dsconv_flop_count(channels: usize, height: usize, width: usize) -> DsConvFlops {
    let chw = (channels * height * width) as u64;
    let f = DsConvFlops {
        conv1: 4 * chw,
        aggregation: 8 * chw,
        conv2: 2 * chw,
        gate_mul: chw,
        total: 15 * chw,
    };
    debug_assert_eq!(f.conv1 + f.aggregation + f.conv2 + f.gate_mul, f.total);
    f
}

/// FLOPs of the reference 3x3 dilated convolution at the same resolution:
/// `18 C^2 H W + C H W`.
pub fn dilated_flop_count(channels: usize, height: usize, width: usize) -> u64 {
    let c = channels as u64;
    let hw = (height * width) as u64;
    18 * c * c * hw + c * hw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::numeric_gradient;
    use proptest::prelude::*;

    /// Scalar-by-scalar all-ones dilated cross-correlation used as the
    /// independent oracle for the aggregation's rectangle arithmetic.
    fn ones_dilated_corr<T: Scalar>(x: &Tensor<T>, dia: usize) -> Tensor<T> {
        let s = x.shape();
        let (h, w, d) = (s.height as isize, s.width as isize, dia as isize);
        Tensor::from_fn(s, |n, c, y, xc| {
            let mut acc = T::zero();
            for i in -1..=1isize {
                for j in -1..=1isize {
                    let sy = y as isize + i * d;
                    let sx = xc as isize + j * d;
                    if sy >= 0 && sy < h && sx >= 0 && sx < w {
                        acc = acc + x.get(n, c, sy as usize, sx as usize);
                    }
                }
            }
            acc
        })
    }

    /// Literal composition of pad -> nine windows -> sum, the definitional
    /// form of the aggregation.
    fn naive_aggregate<T: Scalar>(x: &Tensor<T>, dia: usize) -> Tensor<T> {
        let s = x.shape();
        let padded = x.zero_pad(dia);
        let mut acc = Tensor::zeros(s);
        for i in -1..=1 {
            for j in -1..=1 {
                acc.add_assign(&padded.shifted_window(i, j, dia, s.height, s.width).unwrap())
                    .unwrap();
            }
        }
        acc
    }

    fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs().to_f64().unwrap())
            .fold(0.0, f64::max)
    }

    #[test]
    fn aggregation_at_dia_zero_is_nine_x() {
        let x = Tensor::<f64>::random(Shape::new(1, 2, 5, 5), -1.0, 1.0, &mut seeded(1));
        let a = aggregate_shifts(&x, 0);
        assert!(max_abs_diff(&a, &x.scale(9.0)) < 1e-12);
    }

    #[test]
    fn aggregation_matches_both_oracles() {
        let mut rng = seeded(2);
        for dia in 0..5 {
            for (h, w) in [(3, 3), (5, 8), (12, 7)] {
                let x = Tensor::<f64>::random(Shape::new(2, 2, h, w), -1.0, 1.0, &mut rng);
                let fast = aggregate_shifts(&x, dia);
                assert!(max_abs_diff(&fast, &ones_dilated_corr(&x, dia)) < 1e-12);
                assert!(max_abs_diff(&fast, &naive_aggregate(&x, dia)) < 1e-12);
            }
        }
    }

    #[test]
    fn aggregation_of_constant_counts_taps() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 5, 5), 2.0);
        let a = aggregate_shifts(&x, 1);
        assert_eq!(a.get(0, 0, 2, 2), 18.0); // interior: 9 taps
        assert_eq!(a.get(0, 0, 0, 0), 8.0); // corner: 4 taps
        assert_eq!(a.get(0, 0, 0, 2), 12.0); // edge: 6 taps
    }

    #[test]
    fn aggregation_is_self_adjoint() {
        // <A x, y> == <x, A y> because the offset set is symmetric
        let mut rng = seeded(3);
        for dia in [0, 1, 3] {
            let x = Tensor::<f64>::random(Shape::new(1, 2, 7, 9), -1.0, 1.0, &mut rng);
            let y = Tensor::<f64>::random(Shape::new(1, 2, 7, 9), -1.0, 1.0, &mut rng);
            let lhs = aggregate_shifts(&x, dia).mul(&y).unwrap().sum();
            let rhs = aggregate_shifts_backward(&y, dia).mul(&x).unwrap().sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_with_zero_gate_params_halves_the_feature() {
        let mut p = init_params::<f64>(3, 2, DsConvVariant::Plain, 4);
        p.w2 = vec![0.0; 3];
        p.b2 = vec![0.0; 3];
        let x = Tensor::<f64>::random(Shape::new(1, 3, 6, 6), -1.0, 1.0, &mut seeded(5));
        let (y, _) = dsconv_forward(&x, &p, None).unwrap();
        let expect = x.channel_affine(&p.w1, &p.b1).unwrap().relu().scale(0.5);
        assert!(max_abs_diff(&y, &expect) < 1e-12);
    }

    #[test]
    fn forward_matches_naive_equation_composition() {
        let p = init_params::<f64>(3, 1, DsConvVariant::Plain, 6);
        let x = Tensor::<f64>::random(Shape::new(1, 3, 6, 6), 0.0, 1.0, &mut seeded(7));
        let (y, _) = dsconv_forward(&x, &p, None).unwrap();

        let feature = x.channel_affine(&p.w1, &p.b1).unwrap().relu();
        let agg = naive_aggregate(&feature, p.dia);
        let gate = agg.channel_affine(&p.w2, &p.b2).unwrap().sigmoid();
        let expect = gate.mul(&feature).unwrap();
        assert!(max_abs_diff(&y, &expect) < 1e-9);
    }

    #[test]
    fn variant_shape_contracts() {
        let x = Tensor::<f64>::random(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut seeded(8));
        let down = init_params::<f64>(3, 1, DsConvVariant::Down, 9);
        let (y, _) = dsconv_forward(&x, &down, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 4, 4));

        let small = Tensor::<f64>::random(Shape::new(1, 3, 4, 4), 0.0, 1.0, &mut seeded(10));
        let up = init_params::<f64>(3, 1, DsConvVariant::Up, 11);
        let (y, _) = dsconv_forward(&small, &up, Some((8, 8))).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 8, 8));
        // default up target is 2x
        let (y, _) = dsconv_forward(&small, &up, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 8, 8));
        // odd targets are honoured exactly
        let (y, _) = dsconv_forward(&small, &up, Some((9, 5))).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 9, 5));

        // channel mismatch and misplaced up_target are structural errors
        assert!(dsconv_forward(&x, &init_params::<f64>(2, 1, DsConvVariant::Plain, 1), None).is_err());
        assert!(dsconv_forward(&x, &down, Some((4, 4))).is_err());
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let p = init_params::<f64>(3, 2, DsConvVariant::Plain, 12);
        let x = Tensor::<f64>::random(Shape::new(1, 3, 6, 6), -1.0, 1.0, &mut seeded(13));
        let (y, cache) = dsconv_forward(&x, &p, None).unwrap();
        let (dx, dp) = dsconv_backward(&cache, &Tensor::zeros(y.shape())).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dp.w1.iter().chain(&dp.b1).chain(&dp.w2).chain(&dp.b2).all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences_across_variants_and_dilations() {
        let mut case_rng = seeded(14);
        for variant in [DsConvVariant::Plain, DsConvVariant::Down, DsConvVariant::Up] {
            for dia in 0..5 {
                let seed: u64 = case_rng.random();
                let p = init_params::<f64>(2, dia, variant, seed);
                let x = Tensor::<f64>::random(Shape::new(1, 2, 6, 6), -1.0, 1.0, &mut seeded(seed ^ 1));
                let up_target = (variant == DsConvVariant::Up).then_some((9, 8));
                let (y, cache) = dsconv_forward(&x, &p, up_target).unwrap();
                let r = Tensor::<f64>::random(y.shape(), -1.0, 1.0, &mut seeded(seed ^ 2));

                let (dx, dp) = dsconv_backward(&cache, &r).unwrap();
                let numeric = numeric_gradient(
                    |t| {
                        let (y, _) = dsconv_forward(t, &p, up_target).unwrap();
                        y.mul(&r).unwrap().sum()
                    },
                    &x,
                    1e-6,
                );
                for (k, (&a, &n)) in dx.data().iter().zip(numeric.data()).enumerate() {
                    let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                    assert!(e <= 1e-5, "{variant:?} dia {dia} dx[{k}]: {a} vs {n}");
                }

                // parameter gradients via scalar perturbation
                let fields: [(&[f64], &dyn Fn(&mut DsConvParams<f64>) -> &mut Vec<f64>); 4] = [
                    (&dp.w1, &|p| &mut p.w1),
                    (&dp.b1, &|p| &mut p.b1),
                    (&dp.w2, &|p| &mut p.w2),
                    (&dp.b2, &|p| &mut p.b2),
                ];
                for (analytic, field) in fields {
                    for c in 0..2 {
                        let h = 1e-6;
                        let mut pp = p.clone();
                        field(&mut pp)[c] += h;
                        let fp = dsconv_forward(&x, &pp, up_target).unwrap().0.mul(&r).unwrap().sum();
                        let mut pm = p.clone();
                        field(&mut pm)[c] -= h;
                        let fm = dsconv_forward(&x, &pm, up_target).unwrap().0.mul(&r).unwrap().sum();
                        let n = (fp - fm) / (2.0 * h);
                        let a = analytic[c];
                        let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                        assert!(e <= 1e-5, "{variant:?} dia {dia} param[{c}]: {a} vs {n}");
                    }
                }
            }
        }
    }

    #[test]
    fn constant_gate_input_gradient_reduces_to_primitive_composition() {
        let mut p = init_params::<f64>(3, 1, DsConvVariant::Plain, 15);
        p.w2 = vec![0.0; 3];
        p.b2 = vec![0.0; 3];
        let x = Tensor::<f64>::random(Shape::new(1, 3, 5, 5), -1.0, 1.0, &mut seeded(16));
        let (y, cache) = dsconv_forward(&x, &p, None).unwrap();
        let r = Tensor::<f64>::random(y.shape(), -1.0, 1.0, &mut seeded(17));
        let (dx, _) = dsconv_backward(&cache, &r).unwrap();

        // with w2 = 0 the gate path carries nothing into x, so dx is exactly
        // the 0.5-scaled relu/affine chain composed from the primitives
        let feature = x.channel_affine(&p.w1, &p.b1).unwrap().relu();
        let d_affine = Tensor::relu_backward(&feature, &r.scale(0.5)).unwrap();
        let (expect, _, _) = Tensor::channel_affine_backward(&x, &p.w1, &d_affine).unwrap();
        assert!(max_abs_diff(&dx, &expect) < 1e-12);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_kaiming_scale() {
        let a = init_params::<f64>(3, 2, DsConvVariant::Plain, 42);
        let b = init_params::<f64>(3, 2, DsConvVariant::Plain, 42);
        assert_eq!(a, b);
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert!(a.b2.iter().all(|&v| v == 0.0));
        assert_ne!(a.w1, init_params::<f64>(3, 2, DsConvVariant::Plain, 43).w1);

        // empirical std of many draws sits within 2% of 0.1 * sqrt(2)
        let big = init_params::<f64>(50_000, 0, DsConvVariant::Plain, 44);
        let all: Vec<f64> = big.w1.iter().chain(&big.w2).copied().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let target = 0.1 * 2f64.sqrt();
        assert!(
            (var.sqrt() - target).abs() / target < 0.02,
            "std {} vs {}",
            var.sqrt(),
            target
        );
    }

    #[test]
    fn audit_counts_match_quoted_figures() {
        assert_eq!(dsconv_param_count(3), 12);
        assert_eq!(dsconv_param_count(1), 4);
        assert_eq!(dsconv_param_count(256), 1024);
        assert_eq!(dilated_param_count(256), 590_080);
        // reciprocal ratios round to the quoted 1/576 and 1/307
        let pr = dilated_param_count(256) as f64 / dsconv_param_count(256) as f64;
        assert_eq!(pr.round() as u64, 576);
        let fr = dilated_flop_count(256, 32, 32) as f64
            / dsconv_flop_count(256, 32, 32).total as f64;
        assert_eq!(fr.round() as u64, 307);

        let f = dsconv_flop_count(3, 4, 4);
        assert_eq!(f.total, 720);
        assert_eq!(
            (f.conv1, f.aggregation, f.conv2, f.gate_mul),
            (192, 384, 96, 48)
        );
        assert_eq!(dsconv_flop_count(1, 1, 1).total, 15);

        let p = init_params::<f64>(7, 1, DsConvVariant::Plain, 0);
        assert_eq!(p.param_count(), dsconv_param_count(7));
    }

    proptest! {
        #[test]
        fn output_is_gated_below_the_feature(
            seed in 0u64..500, dia in 0usize..5
        ) {
            let p = init_params::<f64>(3, dia, DsConvVariant::Plain, seed);
            let x = Tensor::<f64>::random(Shape::new(1, 3, 6, 6), -2.0, 2.0, &mut seeded(seed ^ 99));
            let (y, _) = dsconv_forward(&x, &p, None).unwrap();
            let feature = x.channel_affine(&p.w1, &p.b1).unwrap().relu();
            for (&yo, &f) in y.data().iter().zip(feature.data()) {
                prop_assert!(yo >= 0.0 && yo <= f);
            }
        }

        #[test]
        fn dia_zero_forward_is_pointwise(seed in 0u64..500) {
            // permuting pixels before the kernel equals permuting after
            let p = init_params::<f64>(3, 0, DsConvVariant::Plain, seed);
            let x = Tensor::<f64>::random(Shape::new(1, 3, 4, 4), -1.0, 1.0, &mut seeded(seed ^ 7));
            let mut perm: Vec<usize> = (0..16).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut seeded(seed ^ 8));

            let permute = |t: &Tensor<f64>| {
                Tensor::<f64>::from_fn(t.shape(), |n, c, y, xc| {
                    let k = perm[y * 4 + xc];
                    t.get(n, c, k / 4, k % 4)
                })
            };
            let (y_then_perm, _) = dsconv_forward(&x, &p, None).unwrap();
            let (perm_then_y, _) = dsconv_forward(&permute(&x), &p, None).unwrap();
            prop_assert_eq!(permute(&y_then_perm), perm_then_y);
        }
    }
}
