//! Image codec boundary, dataset directory contract, and a seeded synthetic
//! low/normal-light pair generator for desk-scale experiments.
//!
//! Datasets live on disk as `<root>/low/<name>.png` + `<root>/high/<name>.png`
//! with pairs matched by basename. PNG is the canonical format: reading is
//! permissive (grayscale promoted to three channels, alpha dropped), writing
//! is strict 8-bit RGB.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{mix_seed, seeded};
use crate::tensor::{sc, Scalar, Shape, Tensor};

/// A matched low/normal-light pair loaded into memory.
#[derive(Clone, Debug)]
pub struct ImagePair<T> {
    pub low: Tensor<T>,
    pub high: Tensor<T>,
    pub name: String,
}

/// A matched pair on disk, found by [`scan_dataset`] but not yet decoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub name: String,
    pub low_path: PathBuf,
    pub high_path: PathBuf,
}

impl PairEntry {
    /// Decode both sides of the pair.
    pub fn load<T: Scalar>(&self) -> Result<ImagePair<T>> {
        Ok(ImagePair {
            low: read_image(&self.low_path)?,
            high: read_image(&self.high_path)?,
            name: self.name.clone(),
        })
    }
}

/// Pixel dimensions `(height, width)` read from the file header, without
/// decoding the image.
pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::image(path, e.to_string()))?;
    Ok((h as usize, w as usize))
}

/// Decode an image file into a `(1,3,H,W)` tensor with each 8-bit value
/// mapped to `v/255` exactly. Grayscale is promoted to three channels and
/// alpha is dropped.
pub fn read_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path)
        .map_err(|e| Error::image(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let shape = Shape::new(1, 3, h as usize, w as usize);
    let mut out = Tensor::zeros(shape);
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(
                0,
                c,
                y as usize,
                x as usize,
                sc::<T>(pixel.0[c] as f64 / 255.0),
            );
        }
    }
    Ok(out)
}

/// Encode a `(1,3,H,W)` tensor as an 8-bit RGB PNG, quantizing each value
/// as `round(clamp(v,0,1)·255)`.
pub fn write_image<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let s = t.shape();
    if s.batch != 1 || s.channels != 3 {
        return Err(Error::Shape(format!(
            "write_image expects a single 3-channel image, got {s}"
        )));
    }
    let mut img = image::RgbImage::new(s.width as u32, s.height as u32);
    for y in 0..s.height {
        for x in 0..s.width {
            let mut px = [0u8; 3];
            for (c, slot) in px.iter_mut().enumerate() {
                let v = t.get(0, c, y, x).to_f64().unwrap_or(0.0);
                *slot = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e.to_string()))
}

fn basenames(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Enumerate the matched pairs under `root`, which must contain `low/` and
/// `high/` subdirectories. Pairs are matched by identical basename and
/// returned in lexicographic order; any unmatched basename on either side is
/// an error naming it. Empty directories yield an empty list with a warning
/// on stderr.
pub fn scan_dataset(root: &Path) -> Result<Vec<PairEntry>> {
    let low_dir = root.join("low");
    let high_dir = root.join("high");
    for dir in [&low_dir, &high_dir] {
        if !dir.is_dir() {
            return Err(Error::Dataset(format!(
                "missing dataset subdirectory {}",
                dir.display()
            )));
        }
    }
    let low = basenames(&low_dir)?;
    let high = basenames(&high_dir)?;
    let mut unmatched: Vec<String> = Vec::new();
    unmatched.extend(
        low.iter()
            .filter(|n| !high.contains(n))
            .map(|n| format!("low/{n}")),
    );
    unmatched.extend(
        high.iter()
            .filter(|n| !low.contains(n))
            .map(|n| format!("high/{n}")),
    );
    if !unmatched.is_empty() {
        return Err(Error::Dataset(format!(
            "unpaired images under {}: {}",
            root.display(),
            unmatched.join(", ")
        )));
    }
    if low.is_empty() {
        eprintln!("warning: dataset {} contains no images", root.display());
    }
    Ok(low
        .into_iter()
        .map(|name| PairEntry {
            low_path: low_dir.join(format!("{name}.png")),
            high_path: high_dir.join(format!("{name}.png")),
            name,
        })
        .collect())
}

/// Paint one procedural normal-light image: a smooth bilinear color gradient
/// with a handful of alpha-blended rectangles and disks on top. Values are
/// kept bright so the darkened counterpart is unambiguously dimmer.
fn synth_high(size: usize, rng: &mut impl Rng) -> Tensor<f64> {
    // corner colors in [0.25, 1.0] per channel, interpolated bilinearly
    let corners: [[f64; 3]; 4] = std::array::from_fn(|_| {
        std::array::from_fn(|_| rng.random_range(0.25..1.0))
    });
    let n = (size - 1) as f64;
    let mut img = Tensor::<f64>::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| {
        let (fy, fx) = (y as f64 / n, x as f64 / n);
        let top = corners[0][c] * (1.0 - fx) + corners[1][c] * fx;
        let bottom = corners[2][c] * (1.0 - fx) + corners[3][c] * fx;
        top * (1.0 - fy) + bottom * fy
    });
    let shapes = rng.random_range(3..=6);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..1.0));
        let alpha = rng.random_range(0.3..0.9);
        let cy = rng.random_range(0.0..size as f64);
        let cx = rng.random_range(0.0..size as f64);
        let half = rng.random_range(size as f64 * 0.08..size as f64 * 0.3);
        let disk = rng.random_range(0..2u8) == 0;
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if disk {
                    dy * dy + dx * dx <= half * half
                } else {
                    dy.abs() <= half && dx.abs() <= half
                };
                if inside {
                    for (c, &col) in color.iter().enumerate() {
                        let v = img.get(0, c, y, x);
                        img.set(0, c, y, x, v * (1.0 - alpha) + col * alpha);
                    }
                }
            }
        }
    }
    img
}

/// Generate `count` synthetic low/normal pairs of side `size` under `root`
/// in the [`scan_dataset`] layout. The normal-light image is procedural; the
/// low image is `clamp(gain·highᵞ + noise, 0, 1)` with per-image
/// γ ∈ [2,5], gain ∈ [0.1,0.5], and Gaussian noise σ ∈ [0,0.02]. Everything
/// derives from `seed`, so reruns are bit-identical.
pub fn synth_pairs(count: usize, size: usize, seed: u64, root: &Path) -> Result<()> {
    if size < 16 {
        return Err(Error::InvalidArgument(format!(
            "synthetic image size must be at least 16, got {size}"
        )));
    }
    let width = count.max(1).to_string().len().max(3);
    for i in 0..count {
        let mut rng = seeded(mix_seed(seed, i as u64));
        let high = synth_high(size, &mut rng);
        let gamma = rng.random_range(2.0..=5.0);
        let gain = rng.random_range(0.1..=0.5);
        let sigma = rng.random_range(0.0..=0.02);
        let mut low = high.clone();
        for v in low.data_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *v = (gain * v.powf(gamma) + noise * sigma).clamp(0.0, 1.0);
        }
        let name = format!("{i:0width$}");
        write_image(&high, &root.join("high").join(format!("{name}.png")))?;
        write_image(&low, &root.join("low").join(format!("{name}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn read_write_round_trips_on_the_quantization_grid() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.png");
        // values already on the 1/255 grid survive exactly
        let t = Tensor::<f32>::from_fn(Shape::new(1, 3, 5, 7), |_, c, y, x| {
            ((c * 83 + y * 17 + x * 3) % 256) as f32 / 255.0
        });
        write_image(&t, &path).unwrap();
        let back: Tensor<f32> = read_image(&path).unwrap();
        assert_eq!(t.shape(), back.shape());
        assert_eq!(t.data(), back.data());
    }

    #[test]
    fn write_clamps_and_rounds_half_up() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.png");
        let t = Tensor::<f64>::new(
            Shape::new(1, 3, 1, 1),
            vec![1.2, -0.1, 0.5],
        )
        .unwrap();
        write_image(&t, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [255, 0, 128]);
    }

    #[test]
    fn read_promotes_grayscale_and_drops_alpha() {
        let dir = tempdir().unwrap();
        let gray_path = dir.path().join("g.png");
        let mut gray = image::GrayImage::new(2, 2);
        gray.put_pixel(0, 0, image::Luma([200]));
        gray.save(&gray_path).unwrap();
        let t: Tensor<f64> = read_image(&gray_path).unwrap();
        assert_eq!(t.shape().channels, 3);
        for c in 0..3 {
            assert_eq!(t.get(0, c, 0, 0), 200.0 / 255.0);
        }

        let rgba_path = dir.path().join("a.png");
        let mut rgba = image::RgbaImage::new(1, 1);
        rgba.put_pixel(0, 0, image::Rgba([10, 20, 30, 40]));
        rgba.save(&rgba_path).unwrap();
        let t: Tensor<f64> = read_image(&rgba_path).unwrap();
        assert_eq!(t.shape().channels, 3);
        assert_eq!(t.get(0, 0, 0, 0), 10.0 / 255.0);
        assert_eq!(t.get(0, 2, 0, 0), 30.0 / 255.0);
    }

    #[test]
    fn read_names_the_missing_path() {
        let err = read_image::<f32>(Path::new("/nonexistent/zz.png")).unwrap_err();
        assert!(err.to_string().contains("zz.png"), "{err}");
    }

    #[test]
    fn scan_matches_pairs_and_names_strays() {
        let dir = tempdir().unwrap();
        let root = dir.path();
        let px = Tensor::<f32>::full(Shape::new(1, 3, 2, 2), 0.5);
        for name in ["b", "a"] {
            write_image(&px, &root.join("low").join(format!("{name}.png"))).unwrap();
            write_image(&px, &root.join("high").join(format!("{name}.png"))).unwrap();
        }
        let pairs = scan_dataset(root).unwrap();
        assert_eq!(
            pairs.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(),
            ["a", "b"],
        );
        assert!(pairs[0].low_path.ends_with("low/a.png"));

        // a stray low image is an error naming it
        write_image(&px, &root.join("low").join("c.png")).unwrap();
        let err = scan_dataset(root).unwrap_err();
        assert!(err.to_string().contains("low/c"), "{err}");

        // a missing subdirectory is an error
        let empty = tempdir().unwrap();
        fs::create_dir(empty.path().join("low")).unwrap();
        let err = scan_dataset(empty.path()).unwrap_err();
        assert!(err.to_string().contains("high"), "{err}");

        // empty-but-present directories are a valid empty dataset
        fs::create_dir(empty.path().join("high")).unwrap();
        assert!(scan_dataset(empty.path()).unwrap().is_empty());
    }

    #[test]
    fn synth_writes_matched_deterministic_pairs() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        synth_pairs(4, 24, 99, dir_a.path()).unwrap();
        synth_pairs(4, 24, 99, dir_b.path()).unwrap();
        let pairs = scan_dataset(dir_a.path()).unwrap();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            let a = fs::read(&p.low_path).unwrap();
            let b = fs::read(dir_b.path().join("low").join(format!("{}.png", p.name))).unwrap();
            assert_eq!(a, b, "low/{} differs between same-seed runs", p.name);
        }
        // a different seed actually changes the content
        let dir_c = tempdir().unwrap();
        synth_pairs(1, 24, 100, dir_c.path()).unwrap();
        let c = fs::read(dir_c.path().join("low/000.png")).unwrap();
        let a = fs::read(dir_a.path().join("low/000.png")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_low_images_are_strictly_darker() {
        let dir = tempdir().unwrap();
        synth_pairs(8, 32, 7, dir.path()).unwrap();
        for p in scan_dataset(dir.path()).unwrap() {
            let pair: ImagePair<f64> = p.load().unwrap();
            assert!(
                pair.low.mean() < pair.high.mean(),
                "{}: {} !< {}",
                p.name,
                pair.low.mean(),
                pair.high.mean()
            );
            for &v in pair.low.data().iter().chain(pair.high.data()) {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn synth_rejects_tiny_sizes() {
        let dir = tempdir().unwrap();
        assert!(synth_pairs(1, 15, 0, dir.path()).is_err());
    }
}
