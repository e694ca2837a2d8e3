//! Finite-difference verification suite covering every backward pass in the
//! crate, from tensor primitives up through the full network and composite
//! loss. Everything runs in 64-bit: central differences with step 1e-6 are
//! too noisy in `f32`.
//!
//! Three details keep the comparisons honest:
//!
//! * Tensor-valued operators are scalarized by a random projection
//!   `⟨op(x), r⟩`, so one check exercises the whole Jacobian-transpose
//!   product. Deep-network projections are kept small so the difference
//!   quotient's roundoff — which scales with the objective — stays far below
//!   the comparison floor.
//! * Network parameters are moved to a generic point (magnitudes in
//!   [0.05, 0.3], bias slots positive) before differentiating. Freshly
//!   initialized biases are exactly zero, which parks ReLU pre-activations
//!   on their kink where one-sided and central derivatives legitimately
//!   disagree.
//! * Every numeric derivative is cross-checked at half step. Where the two
//!   disagree, a kink (ReLU corner, smooth-L1 knee) lies inside the step
//!   interval and central differences are meaningless there, so the
//!   coordinate is excluded and counted instead of compared. The guard
//!   cannot hide a wrong backward: it fires only when the numeric side
//!   disagrees with itself, never when a converged numeric value disagrees
//!   with the analytic one.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dsconv::{dsconv_backward, dsconv_forward, init_params, DsConvVariant};
use crate::error::Result;
use crate::gauss::{valid_blur, valid_blur_adjoint};
use crate::loss::{
    grad_loss, grad_loss_backward, ms_ssim_loss, ms_ssim_loss_backward, smooth_l1,
    smooth_l1_backward, total_loss, total_loss_backward, LossWeights,
};
use crate::network::{
    net_backward, net_forward_with_cache, Network, NetworkConfig, SkipMode, TieMode,
};
use crate::rng::{mix_seed, seeded};
use crate::tensor::{numeric_gradient_at, Shape, Tensor};

/// Acceptance threshold on the relative error.
pub const TOLERANCE: f64 = 1e-5;
/// Central-difference step.
pub const STEP: f64 = 1e-6;
/// A numeric derivative is trusted only if halving the step moves it by less
/// than this relative amount. Smooth points land orders of magnitude below
/// (truncation error shrinks 4×, roundoff stays ~1e-6 of scale); a kink
/// inside the step interval lands orders of magnitude above.
const KINK_GUARD: f64 = 1e-4;

/// Worst relative error observed for one backward implementation.
#[derive(Clone, Debug)]
pub struct ComponentReport {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    /// Coordinates excluded because central differences were invalid there
    /// (see the module docs). Zero or near-zero in practice.
    pub kink_skips: usize,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

pub fn all_passed(reports: &[ComponentReport]) -> bool {
    reports.iter().all(ComponentReport::passed)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum()
}

/// Accumulates analytic-vs-numeric comparisons, applying the half-step kink
/// guard per coordinate.
struct Comparison {
    max_rel_err: f64,
    kink_skips: usize,
}

impl Comparison {
    fn new() -> Comparison {
        Comparison {
            max_rel_err: 0.0,
            kink_skips: 0,
        }
    }

    fn add(&mut self, analytic: f64, n_full: f64, n_half: f64) {
        let motion = (n_full - n_half).abs() / n_full.abs().max(n_half.abs()).max(1e-3);
        if motion > KINK_GUARD {
            self.kink_skips += 1;
        } else {
            self.max_rel_err = self.max_rel_err.max(rel_err(analytic, n_full));
        }
    }

    fn add_slices(&mut self, analytic: &[f64], n_full: &[f64], n_half: &[f64]) {
        for i in 0..analytic.len() {
            self.add(analytic[i], n_full[i], n_half[i]);
        }
    }

    fn merge(&mut self, other: Comparison) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.kink_skips += other.kink_skips;
    }
}

/// Central differences at full and half step for a tensor argument.
fn two_step_gradient(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    coords: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let full = numeric_gradient_at(&mut f, x, STEP, coords);
    let half = numeric_gradient_at(&mut f, x, STEP / 2.0, coords);
    (full, half)
}

/// Central differences at full and half step over a flat parameter vector.
fn two_step_over_params(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    coords: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let mut work = params.to_vec();
    let mut at = |c: usize, h: f64| {
        let saved = work[c];
        work[c] = saved + h;
        let plus = f(&work);
        work[c] = saved - h;
        let minus = f(&work);
        work[c] = saved;
        (plus - minus) / (2.0 * h)
    };
    let full: Vec<f64> = coords.iter().map(|&c| at(c, STEP)).collect();
    let half: Vec<f64> = coords.iter().map(|&c| at(c, STEP / 2.0)).collect();
    (full, half)
}

fn all_coords(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn every_kth(n: usize, k: usize) -> Vec<usize> {
    (0..n).step_by(k.max(1)).collect()
}

/// Run `cases` seeded instances of one check and keep the worst error.
fn component(
    name: &str,
    cases: usize,
    seed: u64,
    mut case: impl FnMut(u64) -> Result<Comparison>,
) -> Result<ComponentReport> {
    let mut total = Comparison::new();
    for i in 0..cases {
        total.merge(case(mix_seed(seed, i as u64))?);
    }
    Ok(ComponentReport {
        name: name.to_string(),
        cases,
        max_rel_err: total.max_rel_err,
        kink_skips: total.kink_skips,
    })
}

/// Values bounded away from zero on both sides, so ReLU-style kinks are
/// never within a finite-difference step of the evaluation point.
fn signed_away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.random_range(0.05..1.0);
        *v = if rng.random::<bool>() { mag } else { -mag };
    }
    t
}

/// The generic-point parameter vector used for whole-network checks.
fn generic_params(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let mag = rng.random_range(0.05..0.3);
            // layout per kernel is w1|b1|w2|b2 over `channels` slots each;
            // keep bias slots positive so pre-activations stay off the kink
            let is_bias = (i % 12) / 3 == 1 || (i % 12) / 3 == 3;
            if is_bias || rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn check_pointwise(seed: u64) -> Result<Vec<ComponentReport>> {
    let shape = Shape::new(1, 2, 6, 7);
    let mut out = Vec::new();

    out.push(component("relu", 20, mix_seed(seed, 1), |s| {
        let mut rng = seeded(s);
        let x = signed_away_from_zero(shape, &mut rng);
        let r = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let analytic = Tensor::relu_backward(&x, &r)?;
        let (full, half) =
            two_step_gradient(|t| dot(&t.relu(), &r), &x, &all_coords(shape.count()));
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("sigmoid", 20, mix_seed(seed, 2), |s| {
        let mut rng = seeded(s);
        let x = Tensor::random(shape, -4.0, 4.0, &mut rng);
        let r = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let y = x.sigmoid();
        let analytic = Tensor::sigmoid_backward(&y, &r)?;
        let (full, half) =
            two_step_gradient(|t| dot(&t.sigmoid(), &r), &x, &all_coords(shape.count()));
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("gate_mul", 20, mix_seed(seed, 3), |s| {
        let mut rng = seeded(s);
        let a = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let b = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let r = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let (da, db) = Tensor::mul_backward(&a, &b, &r)?;
        let coords = all_coords(shape.count());
        let mut cmp = Comparison::new();
        let (full, half) = two_step_gradient(|t| dot(&t.mul(&b).unwrap(), &r), &a, &coords);
        cmp.add_slices(da.data(), &full, &half);
        let (full, half) = two_step_gradient(|t| dot(&a.mul(t).unwrap(), &r), &b, &coords);
        cmp.add_slices(db.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("channel_affine", 20, mix_seed(seed, 4), |s| {
        let mut rng = seeded(s);
        let x = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let w: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..1.5)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.random_range(-0.3..0.3)).collect();
        let r = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let (dx, dw, db) = Tensor::channel_affine_backward(&x, &w, &r)?;
        let mut cmp = Comparison::new();
        let (full, half) = two_step_gradient(
            |t| dot(&t.channel_affine(&w, &b).unwrap(), &r),
            &x,
            &all_coords(shape.count()),
        );
        cmp.add_slices(dx.data(), &full, &half);
        let coords = all_coords(2);
        let (full, half) =
            two_step_over_params(|wv| dot(&x.channel_affine(wv, &b).unwrap(), &r), &w, &coords);
        cmp.add_slices(&dw, &full, &half);
        let (full, half) =
            two_step_over_params(|bv| dot(&x.channel_affine(&w, bv).unwrap(), &r), &b, &coords);
        cmp.add_slices(&db, &full, &half);
        Ok(cmp)
    })?);

    Ok(out)
}

fn check_structural(seed: u64) -> Result<Vec<ComponentReport>> {
    let mut out = Vec::new();

    out.push(component("zero_pad", 20, mix_seed(seed, 5), |s| {
        let mut rng = seeded(s);
        let margin = rng.random_range(1..4usize);
        let shape = Shape::new(1, 2, 5, 6);
        let x = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let padded_shape = Shape::new(1, 2, 5 + 2 * margin, 6 + 2 * margin);
        let r = Tensor::random(padded_shape, -1.0, 1.0, &mut rng);
        let analytic = Tensor::zero_pad_backward(&r, margin)?;
        let (full, half) =
            two_step_gradient(|t| dot(&t.zero_pad(margin), &r), &x, &all_coords(shape.count()));
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("shifted_window", 20, mix_seed(seed, 6), |s| {
        let mut rng = seeded(s);
        let dia = rng.random_range(1..4usize);
        let (i, j) = (rng.random_range(-1..=1i32), rng.random_range(-1..=1i32));
        let inner = Shape::new(1, 2, 7, 8);
        let padded = Shape::new(1, 2, 7 + 2 * dia, 8 + 2 * dia);
        let x = Tensor::random(padded, -1.0, 1.0, &mut rng);
        let r = Tensor::random(inner, -1.0, 1.0, &mut rng);
        let analytic = Tensor::shifted_window_backward(&r, i, j, dia)?;
        let (full, half) = two_step_gradient(
            |t| dot(&t.shifted_window(i, j, dia, 7, 8).unwrap(), &r),
            &x,
            &all_coords(padded.count()),
        );
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("aggregate_shifts", 20, mix_seed(seed, 7), |s| {
        let mut rng = seeded(s);
        let dia = rng.random_range(0..5usize);
        let shape = Shape::new(1, 2, 9, 9);
        let x = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let r = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let analytic = crate::dsconv::aggregate_shifts_backward(&r, dia);
        let (full, half) = two_step_gradient(
            |t| dot(&crate::dsconv::aggregate_shifts(t, dia), &r),
            &x,
            &all_coords(shape.count()),
        );
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("avg_pool2", 20, mix_seed(seed, 8), |s| {
        let mut rng = seeded(s);
        let h = rng.random_range(4..9usize);
        let w = rng.random_range(4..9usize);
        let shape = Shape::new(1, 2, h, w);
        let x = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let pooled = x.avg_pool2()?;
        let r = Tensor::random(pooled.shape(), -1.0, 1.0, &mut rng);
        let analytic = Tensor::avg_pool2_backward(&r, shape)?;
        let (full, half) =
            two_step_gradient(|t| dot(&t.avg_pool2().unwrap(), &r), &x, &all_coords(shape.count()));
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("bilinear_resize", 20, mix_seed(seed, 9), |s| {
        let mut rng = seeded(s);
        let shape = Shape::new(1, 2, 7, 9);
        let (oh, ow) = (rng.random_range(3..15usize), rng.random_range(3..15usize));
        let x = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let r = Tensor::random(Shape::new(1, 2, oh, ow), -1.0, 1.0, &mut rng);
        let analytic = Tensor::bilinear_resize_backward(&r, 7, 9)?;
        let (full, half) = two_step_gradient(
            |t| dot(&t.bilinear_resize(oh, ow).unwrap(), &r),
            &x,
            &all_coords(shape.count()),
        );
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("grayscale", 20, mix_seed(seed, 10), |s| {
        let mut rng = seeded(s);
        let shape = Shape::new(2, 3, 5, 5);
        let x = Tensor::random(shape, 0.0, 1.0, &mut rng);
        let r = Tensor::random(Shape::new(2, 1, 5, 5), -1.0, 1.0, &mut rng);
        let analytic = Tensor::to_grayscale_backward(&r)?;
        let (full, half) = two_step_gradient(
            |t| dot(&t.to_grayscale().unwrap(), &r),
            &x,
            &all_coords(shape.count()),
        );
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("sobel", 20, mix_seed(seed, 11), |s| {
        let mut rng = seeded(s);
        let shape = Shape::new(1, 1, 8, 8);
        let x = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let rx = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let ry = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let analytic = Tensor::sobel_backward(&rx, &ry)?;
        let (full, half) = two_step_gradient(
            |t| {
                let (gx, gy) = t.sobel_gradients().unwrap();
                dot(&gx, &rx) + dot(&gy, &ry)
            },
            &x,
            &all_coords(shape.count()),
        );
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("gauss_blur", 20, mix_seed(seed, 12), |s| {
        let mut rng = seeded(s);
        let shape = Shape::new(1, 1, 13, 12);
        let x = Tensor::random(shape, -1.0, 1.0, &mut rng);
        let blurred = valid_blur(&x)?;
        let r = Tensor::random(blurred.shape(), -1.0, 1.0, &mut rng);
        let analytic = valid_blur_adjoint(&r, 13, 12)?;
        let (full, half) =
            two_step_gradient(|t| dot(&valid_blur(t).unwrap(), &r), &x, &all_coords(shape.count()));
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    Ok(out)
}

fn check_losses(seed: u64) -> Result<Vec<ComponentReport>> {
    let mut out = Vec::new();

    out.push(component("smooth_l1", 20, mix_seed(seed, 13), |s| {
        let mut rng = seeded(s);
        let shape = Shape::new(1, 3, 6, 6);
        let g = Tensor::<f64>::random(shape, 0.0, 1.0, &mut rng);
        let mut e = g.clone();
        for v in e.data_mut() {
            // both branches, bounded away from the |x| = 1 knee
            let mut d: f64 = rng.random_range(-2.5..2.5);
            if (d.abs() - 1.0).abs() < 0.01 {
                d += 0.05;
            }
            *v += d;
        }
        let analytic = smooth_l1_backward(&e, &g, 1.3)?;
        let (full, half) = two_step_gradient(
            |t| 1.3 * smooth_l1(t, &g).unwrap(),
            &e,
            &all_coords(shape.count()),
        );
        let mut cmp = Comparison::new();
        cmp.add_slices(analytic.data(), &full, &half);
        Ok(cmp)
    })?);

    out.push(component("ms_ssim", 20, mix_seed(seed, 14), |s| {
        let mut rng = seeded(s);
        let shape = Shape::new(1, 3, 16, 16);
        let g = Tensor::<f64>::random(shape, 0.1, 0.9, &mut rng);
        let mut e = g.clone();
        for v in e.data_mut() {
            *v = (*v + rng.random_range(-0.08..0.08f64)).clamp(0.01, 0.99);
        }
        let (_, analytic) = ms_ssim_loss_backward(&e, &g, 1.0)?;
        let coords = every_kth(shape.count(), 17);
        let (full, half) = two_step_gradient(|t| ms_ssim_loss(t, &g).unwrap(), &e, &coords);
        let picked: Vec<f64> = coords.iter().map(|&c| analytic.data()[c]).collect();
        let mut cmp = Comparison::new();
        cmp.add_slices(&picked, &full, &half);
        Ok(cmp)
    })?);

    out.push(component("grad_loss", 20, mix_seed(seed, 15), |s| {
        let mut rng = seeded(s);
        let w = LossWeights::<f64>::default();
        let g = Tensor::random(Shape::new(1, 3, 12, 12), 0.0, 1.0, &mut rng);
        let o1 = Tensor::random(Shape::new(1, 3, 12, 12), 0.0, 1.0, &mut rng);
        let o2 = Tensor::random(Shape::new(1, 3, 6, 6), 0.0, 1.0, &mut rng);
        let o3 = Tensor::random(Shape::new(1, 3, 3, 3), 0.0, 1.0, &mut rng);
        let (_, grads) = grad_loss_backward(&o1, &o2, &o3, &g, &w, 1.0)?;
        let mut cmp = Comparison::new();
        for (k, (o, analytic)) in [(&o1, &grads[0]), (&o2, &grads[1]), (&o3, &grads[2])]
            .into_iter()
            .enumerate()
        {
            let (full, half) = two_step_gradient(
                |t| {
                    let (a, b, c) = match k {
                        0 => (t, &o2, &o3),
                        1 => (&o1, t, &o3),
                        _ => (&o1, &o2, t),
                    };
                    grad_loss(a, b, c, &g, &w).unwrap()
                },
                o,
                &all_coords(o.shape().count()),
            );
            cmp.add_slices(analytic.data(), &full, &half);
        }
        Ok(cmp)
    })?);

    out.push(component("total_loss", 20, mix_seed(seed, 16), |s| {
        let mut rng = seeded(s);
        let w = LossWeights::<f64>::default();
        let g = Tensor::<f64>::random(Shape::new(1, 3, 32, 32), 0.1, 0.9, &mut rng);
        let mut o1 = g.clone();
        for v in o1.data_mut() {
            *v = (*v + rng.random_range(-0.1..0.1f64)).clamp(0.01, 0.99);
        }
        let o2 = Tensor::random(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
        let o3 = Tensor::random(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng);
        let (_, grads) = total_loss_backward(&o1, &o2, &o3, &g, &w)?;
        let mut cmp = Comparison::new();
        for (k, (o, analytic)) in [(&o1, &grads[0]), (&o2, &grads[1]), (&o3, &grads[2])]
            .into_iter()
            .enumerate()
        {
            let coords = every_kth(o.shape().count(), 23);
            let (full, half) = two_step_gradient(
                |t| {
                    let (a, b, c) = match k {
                        0 => (t, &o2, &o3),
                        1 => (&o1, t, &o3),
                        _ => (&o1, &o2, t),
                    };
                    total_loss(a, b, c, &g, &w).unwrap().total
                },
                o,
                &coords,
            );
            let picked: Vec<f64> = coords.iter().map(|&c| analytic.data()[c]).collect();
            cmp.add_slices(&picked, &full, &half);
        }
        Ok(cmp)
    })?);

    Ok(out)
}

fn check_dsconv(seed: u64) -> Result<ComponentReport> {
    // 5 dilations × 3 variants × 2 seeds = 30 cases
    let combos: Vec<(usize, DsConvVariant)> = (0..5)
        .flat_map(|dia| {
            [DsConvVariant::Plain, DsConvVariant::Down, DsConvVariant::Up]
                .into_iter()
                .map(move |v| (dia, v))
        })
        .collect();
    let cases = combos.len() * 2;
    let mut case_no = 0usize;
    component("dsconv", cases, seed, move |s| {
        let (dia, variant) = combos[case_no % combos.len()];
        case_no += 1;
        let mut rng = seeded(s);
        let shape = Shape::new(1, 3, 10, 10);
        let x = Tensor::random(shape, 0.1, 1.0, &mut rng);
        let mut params = init_params::<f64>(3, dia, variant, mix_seed(s, 77));
        // generic point: positive biases keep ReLU inputs off the kink
        for slot in params.b1.iter_mut().chain(params.b2.iter_mut()) {
            *slot = rng.random_range(0.05..0.3);
        }
        for slot in params.w1.iter_mut().chain(params.w2.iter_mut()) {
            let mag = rng.random_range(0.05..0.3);
            *slot = if rng.random::<bool>() { mag } else { -mag };
        }

        let (y, cache) = dsconv_forward(&x, &params, None)?;
        let r = Tensor::random(y.shape(), -1.0, 1.0, &mut rng);
        let (dx, dp) = dsconv_backward(&cache, &r)?;

        let mut cmp = Comparison::new();
        let (full, half) = two_step_gradient(
            |t| dot(&dsconv_forward(t, &params, None).unwrap().0, &r),
            &x,
            &all_coords(shape.count()),
        );
        cmp.add_slices(dx.data(), &full, &half);

        // all four per-channel parameter vectors via scalar perturbation
        type Field = fn(&mut crate::dsconv::DsConvParams<f64>) -> &mut Vec<f64>;
        let fields: [(Field, &[f64]); 4] = [
            (|p| &mut p.w1, dp.w1.as_slice()),
            (|p| &mut p.b1, dp.b1.as_slice()),
            (|p| &mut p.w2, dp.w2.as_slice()),
            (|p| &mut p.b2, dp.b2.as_slice()),
        ];
        for (field, analytic) in fields {
            for c in 0..3 {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    field(&mut p)[c] += delta;
                    dot(&dsconv_forward(&x, &p, None).unwrap().0, &r)
                };
                let n_full = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                let n_half = (eval(STEP / 2.0) - eval(-STEP / 2.0)) / STEP;
                cmp.add(analytic[c], n_full, n_half);
            }
        }
        Ok(cmp)
    })
}

fn mode_combo(i: usize) -> (TieMode, SkipMode) {
    let tie = if i % 2 == 0 {
        TieMode::MirrorTied
    } else {
        TieMode::Untied
    };
    let skip = if (i / 2) % 2 == 0 {
        SkipMode::Literal
    } else {
        SkipMode::Single
    };
    (tie, skip)
}

fn check_network(seed: u64) -> Result<ComponentReport> {
    let mut case_no = 0usize;
    component("network", 20, seed, move |s| {
        let (tie_mode, skip_mode) = mode_combo(case_no);
        case_no += 1;
        let mut rng = seeded(s);
        let config = NetworkConfig {
            dia_set: vec![0, 1, 2],
            tie_mode,
            skip_mode,
            ..NetworkConfig::default()
        };
        let mut net: Network<f64> = Network::init(config.clone(), s)?;
        let params = generic_params(net.param_count() as usize, &mut rng);
        net.load_param_vector(&params)?;

        let x = Tensor::random(Shape::new(1, 3, 16, 16), 0.1, 1.0, &mut rng);
        let ((o1, o2, o3), cache) = net_forward_with_cache(&net, &x)?;
        // Small projections keep the scalarized objective O(1): the
        // difference quotient's roundoff scales with the projection, so this
        // conditions the comparison without loosening it — a backward bug
        // still shows up proportionally.
        let proj = 1.0 / 32.0;
        let r1 = Tensor::random(o1.shape(), -1.0, 1.0, &mut rng).scale(proj);
        let r2 = Tensor::random(o2.shape(), -1.0, 1.0, &mut rng).scale(proj);
        let r3 = Tensor::random(o3.shape(), -1.0, 1.0, &mut rng).scale(proj);
        let (dx, grads) = net_backward(&cache, &r1, &r2, &r3)?;
        let grad_vec = grads.to_vector();

        let mut scratch = net.clone();
        let objective = |theta: &[f64]| {
            scratch.load_param_vector(theta).unwrap();
            let ((a, b, c), _) = net_forward_with_cache(&scratch, &x).unwrap();
            dot(&a, &r1) + dot(&b, &r2) + dot(&c, &r3)
        };

        let mut cmp = Comparison::new();
        let coords = every_kth(params.len(), 7);
        let (full, half) = two_step_over_params(objective, &params, &coords);
        let picked: Vec<f64> = coords.iter().map(|&c| grad_vec[c]).collect();
        cmp.add_slices(&picked, &full, &half);

        let x_coords = every_kth(x.shape().count(), 31);
        let (full, half) = two_step_gradient(
            |t| {
                let ((a, b, c), _) = net_forward_with_cache(&net, t).unwrap();
                dot(&a, &r1) + dot(&b, &r2) + dot(&c, &r3)
            },
            &x,
            &x_coords,
        );
        let picked: Vec<f64> = x_coords.iter().map(|&c| dx.data()[c]).collect();
        cmp.add_slices(&picked, &full, &half);
        Ok(cmp)
    })
}

fn check_loss_through_network(seed: u64) -> Result<ComponentReport> {
    let mut case_no = 0usize;
    component("loss_through_network", 20, seed, move |s| {
        let (tie_mode, skip_mode) = mode_combo(case_no);
        case_no += 1;
        let mut rng = seeded(s);
        let config = NetworkConfig {
            dia_set: vec![0, 2],
            tie_mode,
            skip_mode,
            ..NetworkConfig::default()
        };
        let mut net: Network<f64> = Network::init(config.clone(), s)?;
        let params = generic_params(net.param_count() as usize, &mut rng);
        net.load_param_vector(&params)?;

        let x = Tensor::random(Shape::new(1, 3, 16, 16), 0.1, 1.0, &mut rng);
        let g = Tensor::random(Shape::new(1, 3, 16, 16), 0.1, 0.9, &mut rng);
        let w = LossWeights::<f64>::default();

        let ((o1, o2, o3), cache) = net_forward_with_cache(&net, &x)?;
        let (_, [d1, d2, d3]) = total_loss_backward(&o1, &o2, &o3, &g, &w)?;
        let (_, grads) = net_backward(&cache, &d1, &d2, &d3)?;
        let grad_vec = grads.to_vector();

        let mut scratch = net.clone();
        let objective = |theta: &[f64]| {
            scratch.load_param_vector(theta).unwrap();
            let ((a, b, c), _) = net_forward_with_cache(&scratch, &x).unwrap();
            total_loss(&a, &b, &c, &g, &w).unwrap().total
        };
        let coords = every_kth(params.len(), 5);
        let (full, half) = two_step_over_params(objective, &params, &coords);
        let picked: Vec<f64> = coords.iter().map(|&c| grad_vec[c]).collect();
        let mut cmp = Comparison::new();
        cmp.add_slices(&picked, &full, &half);
        Ok(cmp)
    })
}

/// Run the whole suite. Components and case counts are fixed; `seed` varies
/// the sampled tensors.
pub fn run_all(seed: u64) -> Result<Vec<ComponentReport>> {
    let mut reports = Vec::new();
    reports.extend(check_pointwise(mix_seed(seed, 100))?);
    reports.extend(check_structural(mix_seed(seed, 200))?);
    reports.extend(check_losses(mix_seed(seed, 300))?);
    reports.push(check_dsconv(mix_seed(seed, 400))?);
    reports.push(check_network(mix_seed(seed, 500))?);
    reports.push(check_loss_through_network(mix_seed(seed, 600))?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_whole_suite_stays_under_tolerance() {
        let reports = run_all(7).unwrap();
        assert!(reports.len() >= 15);
        let mut skips = 0usize;
        for r in &reports {
            assert!(r.cases >= 20, "{}: only {} cases", r.name, r.cases);
            assert!(
                r.passed(),
                "{}: max relative error {} exceeds {TOLERANCE}",
                r.name,
                r.max_rel_err
            );
            skips += r.kink_skips;
        }
        assert!(all_passed(&reports));
        // the guard is a scalpel, not a loophole: across the hundreds of
        // thousands of compared coordinates it should barely ever fire
        assert!(skips <= 10, "kink guard fired {skips} times");
    }

    #[test]
    fn reports_carry_real_error_magnitudes() {
        // the suite must measure something: errors are positive (numerics
        // are never exactly equal) yet tiny
        let reports = run_all(3).unwrap();
        for r in &reports {
            assert!(r.max_rel_err > 0.0, "{} reported an exact zero", r.name);
            assert!(r.max_rel_err.is_finite());
        }
    }
}
