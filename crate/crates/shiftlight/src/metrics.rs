//! Full-reference quality metrics (PSNR, SSIM) and a dataset evaluation
//! runner.
//!
//! PSNR assumes images normalized to `[0,1]` (peak 1.0) and caps identical
//! images at 99 dB so reports never contain infinities. SSIM is the standard
//! single-scale index: grayscale, 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
//! K2 = 0.03, valid windows only.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::{valid_blur, WINDOW};
use crate::imageio::scan_dataset;
use crate::network::{load_checkpoint, net_forward};
use crate::tensor::{sc, Scalar, Tensor};

/// Cap reported for identical images (and a ceiling for near-identical ones).
pub const PSNR_CAP: f64 = 99.0;

const SSIM_C1: f64 = 0.0001; // (K1·L)² with K1 = 0.01, L = 1
const SSIM_C2: f64 = 0.0009; // (K2·L)² with K2 = 0.03, L = 1

/// Peak signal-to-noise ratio in dB: `10·log₁₀(1/MSE)` for unit peak.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let diff = a.sub(b)?;
    let mse = diff.mul(&diff)?.mean().to_f64().unwrap_or(f64::NAN);
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean local structural similarity over valid 11×11 Gaussian windows on
/// grayscale. Symmetric in its arguments; 1.0 iff the images are identical.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "ssim needs matching shapes, got {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let s = a.shape();
    if s.height < WINDOW || s.width < WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            s.height, s.width
        )));
    }
    let x = a.to_grayscale()?;
    let y = b.to_grayscale()?;
    let mu_x = valid_blur(&x)?;
    let mu_y = valid_blur(&y)?;
    let xx = valid_blur(&x.mul(&x)?)?;
    let yy = valid_blur(&y.mul(&y)?)?;
    let xy = valid_blur(&x.mul(&y)?)?;
    let c1 = sc::<T>(SSIM_C1);
    let c2 = sc::<T>(SSIM_C2);
    let two = sc::<T>(2.0);
    let mut acc = 0.0;
    let data_mu_x = mu_x.data();
    let data_mu_y = mu_y.data();
    for (i, (&mx, &my)) in data_mu_x.iter().zip(data_mu_y).enumerate() {
        let var_x = xx.data()[i] - mx * mx;
        let var_y = yy.data()[i] - my * my;
        let cov = xy.data()[i] - mx * my;
        let l = (two * mx * my + c1) / (mx * mx + my * my + c1);
        let cs = (two * cov + c2) / (var_x + var_y + c2);
        acc += (l * cs).to_f64().unwrap_or(f64::NAN);
    }
    Ok(acc / mu_x.shape().count() as f64)
}

/// One row of an [`EvalReport`].
#[derive(Clone, Debug, Serialize)]
pub struct ImageEval {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image quality metrics plus their arithmetic means.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    fn from_rows(images: Vec<ImageEval>) -> EvalReport {
        let n = images.len().max(1) as f64;
        let mean_psnr = images.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = images.iter().map(|r| r.ssim).sum::<f64>() / n;
        EvalReport {
            images,
            mean_psnr,
            mean_ssim,
        }
    }

    /// Aligned-column text rendering, one row per image plus the means.
    pub fn format_text(&self) -> String {
        let name_w = self
            .images
            .iter()
            .map(|r| r.name.len())
            .chain(["image".len(), "mean".len()].into_iter())
            .max()
            .unwrap_or(5);
        let mut out = format!("{:<name_w$}  {:>8}  {:>7}\n", "image", "psnr_db", "ssim");
        for r in &self.images {
            out.push_str(&format!(
                "{:<name_w$}  {:>8.3}  {:>7.4}\n",
                r.name, r.psnr, r.ssim
            ));
        }
        out.push_str(&format!(
            "{:<name_w$}  {:>8.3}  {:>7.4}\n",
            "mean", self.mean_psnr, self.mean_ssim
        ));
        out
    }
}

/// Enhance every low image under `root` with the checkpointed network, clamp
/// to `[0,1]`, and score it against its paired reference. Rows appear in
/// dataset (lexicographic) order; metrics run in 64-bit.
pub fn evaluate(root: &Path, checkpoint: &Path) -> Result<EvalReport> {
    let net = load_checkpoint::<f64>(checkpoint)?;
    let mut rows = Vec::new();
    for entry in scan_dataset(root)? {
        let pair = entry.load::<f64>()?;
        let (enhanced, _, _) = net_forward(&net, &pair.low)?;
        let enhanced = enhanced.clamp01();
        rows.push(ImageEval {
            name: pair.name,
            psnr: psnr(&enhanced, &pair.high)?,
            ssim: ssim(&enhanced, &pair.high)?,
        });
    }
    Ok(EvalReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::write_image;
    use crate::network::{save_checkpoint, Network, NetworkConfig};
    use crate::rng::seeded;
    use crate::tensor::Shape;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use tempfile::tempdir;

    #[test]
    fn psnr_hits_the_standard_anchors() {
        let shape = Shape::new(1, 3, 4, 4);
        let g = Tensor::<f64>::random(shape, 0.2, 0.8, &mut seeded(1));
        // uniform +0.1 error => MSE 0.01 => 20 dB
        let a = g.map(|v| v + 0.1);
        assert!((psnr(&a, &g).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&g, &g).unwrap(), 99.0);
        let zeros = Tensor::<f64>::zeros(shape);
        let ones = Tensor::<f64>::full(shape, 1.0);
        assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
        assert!(psnr(&zeros, &Tensor::zeros(Shape::new(1, 3, 4, 5))).is_err());
    }

    #[test]
    fn psnr_decreases_as_noise_grows() {
        let g = Tensor::<f64>::random(Shape::new(1, 3, 16, 16), 0.3, 0.7, &mut seeded(2));
        let mut prev = f64::INFINITY;
        for sigma in [0.05, 0.1, 0.2] {
            let mut rng = seeded(3);
            let mut noisy = g.clone();
            for v in noisy.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += z * sigma;
            }
            let p = psnr(&noisy, &g).unwrap();
            assert!(p < prev, "sigma {sigma}: {p} !< {prev}");
            prev = p;
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_size_guard() {
        let a = Tensor::<f64>::random(Shape::new(1, 3, 20, 20), 0.0, 1.0, &mut seeded(4));
        let b = Tensor::<f64>::random(Shape::new(1, 3, 20, 20), 0.0, 1.0, &mut seeded(5));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let tiny = Tensor::<f64>::zeros(Shape::new(1, 3, 10, 10));
        assert!(ssim(&tiny, &tiny).is_err());
    }

    /// Brute-force sliding-window reference: recomputes the Gaussian weights
    /// from scratch and evaluates each window with direct weighted sums.
    fn naive_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let gray = |t: &Tensor<f64>| t.to_grayscale().unwrap();
        let (x, y) = (gray(a), gray(b));
        let s = x.shape();
        let mut k1 = [0.0f64; 11];
        for (i, slot) in k1.iter_mut().enumerate() {
            let d = i as f64 - 5.0;
            *slot = (-d * d / (2.0 * 1.5 * 1.5)).exp();
        }
        let norm: f64 = k1.iter().sum();
        let mut acc = 0.0;
        let mut count = 0usize;
        for n in 0..s.batch {
            for oy in 0..s.height - 10 {
                for ox in 0..s.width - 10 {
                    let (mut mx, mut my) = (0.0, 0.0);
                    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                    for wy in 0..11 {
                        for wx in 0..11 {
                            let w = k1[wy] * k1[wx] / (norm * norm);
                            let xv = x.get(n, 0, oy + wy, ox + wx);
                            let yv = y.get(n, 0, oy + wy, ox + wx);
                            mx += w * xv;
                            my += w * yv;
                            sxx += w * xv * xv;
                            syy += w * yv * yv;
                            sxy += w * xv * yv;
                        }
                    }
                    let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    let l = (2.0 * mx * my + 0.0001) / (mx * mx + my * my + 0.0001);
                    let cs = (2.0 * cov + 0.0009) / (vx + vy + 0.0009);
                    acc += l * cs;
                    count += 1;
                }
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_the_naive_reference() {
        for seed in 0..5u64 {
            let a = Tensor::<f64>::random(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut seeded(seed));
            let b = Tensor::<f64>::random(
                Shape::new(1, 3, 32, 32),
                0.0,
                1.0,
                &mut seeded(seed + 50),
            );
            let fast = ssim(&a, &b).unwrap();
            let slow = naive_ssim(&a, &b);
            assert!((fast - slow).abs() <= 1e-6, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn report_means_recompute_from_rows() {
        let rows = vec![
            ImageEval { name: "a".into(), psnr: 10.0, ssim: 0.5 },
            ImageEval { name: "b".into(), psnr: 30.0, ssim: 0.9 },
        ];
        let report = EvalReport::from_rows(rows);
        assert_eq!(report.mean_psnr, 20.0);
        assert_eq!(report.mean_ssim, 0.7);
        let text = report.format_text();
        assert!(text.contains("mean"), "{text}");
        assert!(text.lines().count() == 4);
    }

    #[test]
    fn evaluate_is_transparent_plumbing() {
        let dir = tempdir().unwrap();
        let root = dir.path();
        let mut rng = seeded(6);
        for name in ["x", "y"] {
            let high = Tensor::<f32>::random(Shape::new(1, 3, 16, 16), 0.4, 1.0, &mut rng);
            let low = high.map(|v| v * 0.3);
            write_image(&low, &root.join("low").join(format!("{name}.png"))).unwrap();
            write_image(&high, &root.join("high").join(format!("{name}.png"))).unwrap();
        }
        let ckpt = root.join("net.json");
        let net: Network<f32> = Network::init(NetworkConfig::default(), 11).unwrap();
        save_checkpoint(&net, &ckpt).unwrap();

        let report = evaluate(root, &ckpt).unwrap();
        assert_eq!(report.images.len(), 2);
        assert_eq!(report.images[0].name, "x");

        // rows equal a hand-rolled loop over the same pipeline
        let net64 = load_checkpoint::<f64>(&ckpt).unwrap();
        for (row, entry) in report.images.iter().zip(scan_dataset(root).unwrap()) {
            let pair = entry.load::<f64>().unwrap();
            let (o1, _, _) = net_forward(&net64, &pair.low).unwrap();
            let o1 = o1.clamp01();
            assert_eq!(row.psnr, psnr(&o1, &pair.high).unwrap());
            assert_eq!(row.ssim, ssim(&o1, &pair.high).unwrap());
        }

        // determinism: a second run reproduces the report verbatim
        let again = evaluate(root, &ckpt).unwrap();
        assert_eq!(
            serde_json::to_string(&again).unwrap(),
            serde_json::to_string(&report).unwrap()
        );
        assert_eq!(
            report.mean_psnr,
            (report.images[0].psnr + report.images[1].psnr) / 2.0
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn ssim_stays_in_range_and_symmetric(seed in 0u64..500) {
            let a = Tensor::<f64>::random(Shape::new(1, 3, 14, 14), 0.0, 1.0, &mut seeded(seed));
            let b = Tensor::<f64>::random(Shape::new(1, 3, 14, 14), 0.0, 1.0, &mut seeded(seed ^ 9));
            let v = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert!((v - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
