//! Rank-4 tensors in BCHW layout plus the differentiable primitives the
//! network is assembled from. Every forward op has a matching analytic
//! backward; `numeric_gradient` is the central-difference oracle used to
//! verify them in 64-bit mode.

use crate::error::{Error, Result};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Scalar element type. `f32` is the production kind; `f64` is the
/// verification kind (finite differences are too noisy in `f32`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the active scalar kind.
pub(crate) fn sc<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("constant representable in scalar kind")
}

/// BT.601 luma weights, also used by the grayscale backward.
pub(crate) const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Shape {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn count(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Shape(format!("all dimensions must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense rank-4 tensor, row-major BCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Tensor<T>> {
        shape.validate()?;
        if data.len() != shape.count() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.count()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Tensor<T> {
        Tensor::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Tensor<T> {
        shape.validate().expect("valid shape");
        Tensor {
            shape,
            data: vec![value; shape.count()],
        }
    }

    /// Build from a function of (batch, channel, row, col).
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Tensor<T> {
        shape.validate().expect("valid shape");
        let mut data = Vec::with_capacity(shape.count());
        for n in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Uniform random tensor in `[lo, hi)`; values are drawn in `f64` so the
    /// same seed produces the same underlying sequence for both scalar kinds.
    pub fn random<R: rand::Rng>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
        shape.validate().expect("valid shape");
        let data = (0..shape.count())
            .map(|_| sc(rng.random_range(lo..hi)))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.shape.batch && c < self.shape.channels);
        debug_assert!(y < self.shape.height && x < self.shape.width);
        ((n * self.shape.channels + c) * self.shape.height + y) * self.shape.width + x
    }

    /// One (batch, channel) image plane as a contiguous slice.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op requires identical shapes, got {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.map(|v| v * s)
    }

    pub fn clamp01(&self) -> Tensor<T> {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    /// In-place `self += other`; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "accumulate requires identical shapes, got {} vs {}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / sc(self.data.len() as f64)
    }

    /// Backward of `mul(a, b)`: `(dy * b, dy * a)`.
    pub fn mul_backward(a: &Tensor<T>, b: &Tensor<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((upstream.mul(b)?, upstream.mul(a)?))
    }

    /// Zero-pad by `margin` pixels on all four borders.
    pub fn zero_pad(&self, margin: usize) -> Tensor<T> {
        if margin == 0 {
            return self.clone();
        }
        let s = self.shape;
        let out_shape = Shape::new(s.batch, s.channels, s.height + 2 * margin, s.width + 2 * margin);
        let mut out = Tensor::zeros(out_shape);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                let ow = out_shape.width;
                for y in 0..s.height {
                    let d0 = (y + margin) * ow + margin;
                    dst[d0..d0 + s.width].copy_from_slice(&src[y * s.width..(y + 1) * s.width]);
                }
            }
        }
        out
    }

    /// Backward of `zero_pad`: crop the interior.
    pub fn zero_pad_backward(upstream: &Tensor<T>, margin: usize) -> Result<Tensor<T>> {
        let s = upstream.shape;
        if s.height < 2 * margin + 1 || s.width < 2 * margin + 1 {
            return Err(Error::Shape(format!(
                "padded tensor {} too small for margin {margin}",
                s
            )));
        }
        let out_shape = Shape::new(s.batch, s.channels, s.height - 2 * margin, s.width - 2 * margin);
        let mut out = Tensor::zeros(out_shape);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = upstream.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..out_shape.height {
                    let s0 = (y + margin) * s.width + margin;
                    dst[y * out_shape.width..(y + 1) * out_shape.width]
                        .copy_from_slice(&src[s0..s0 + out_shape.width]);
                }
            }
        }
        Ok(out)
    }

    /// Crop an `(height, width)` window out of a padded tensor at offset
    /// `((i+1)*dia, (j+1)*dia)` with `i, j` in `{-1, 0, 1}`.
    pub fn shifted_window(
        &self,
        i: i32,
        j: i32,
        dia: usize,
        height: usize,
        width: usize,
    ) -> Result<Tensor<T>> {
        if !(-1..=1).contains(&i) || !(-1..=1).contains(&j) {
            return Err(Error::InvalidArgument(format!(
                "offset indices must be in {{-1,0,1}}, got ({i},{j})"
            )));
        }
        let s = self.shape;
        if s.height != height + 2 * dia || s.width != width + 2 * dia {
            return Err(Error::Shape(format!(
                "padded shape {} inconsistent with window {}x{} at dia {dia}",
                s, height, width
            )));
        }
        let oy = (i + 1) as usize * dia;
        let ox = (j + 1) as usize * dia;
        let out_shape = Shape::new(s.batch, s.channels, height, width);
        let mut out = Tensor::zeros(out_shape);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..height {
                    let s0 = (y + oy) * s.width + ox;
                    dst[y * width..(y + 1) * width].copy_from_slice(&src[s0..s0 + width]);
                }
            }
        }
        Ok(out)
    }

    /// Backward of `shifted_window`: scatter the upstream gradient back into
    /// a zero tensor of the padded shape.
    pub fn shifted_window_backward(
        upstream: &Tensor<T>,
        i: i32,
        j: i32,
        dia: usize,
    ) -> Result<Tensor<T>> {
        if !(-1..=1).contains(&i) || !(-1..=1).contains(&j) {
            return Err(Error::InvalidArgument(format!(
                "offset indices must be in {{-1,0,1}}, got ({i},{j})"
            )));
        }
        let s = upstream.shape;
        let padded_shape = Shape::new(s.batch, s.channels, s.height + 2 * dia, s.width + 2 * dia);
        let oy = (i + 1) as usize * dia;
        let ox = (j + 1) as usize * dia;
        let mut out = Tensor::zeros(padded_shape);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = upstream.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..s.height {
                    let d0 = (y + oy) * padded_shape.width + ox;
                    for x in 0..s.width {
                        dst[d0 + x] = dst[d0 + x] + src[y * s.width + x];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Per-channel affine map `out[c] = w[c] * in[c] + b[c]` (a 1x1 grouped
    /// convolution with groups = channels).
    pub fn channel_affine(&self, w: &[T], b: &[T]) -> Result<Tensor<T>> {
        let c = self.shape.channels;
        if w.len() != c || b.len() != c {
            return Err(Error::Shape(format!(
                "channel_affine needs {c} weights and biases, got {} and {}",
                w.len(),
                b.len()
            )));
        }
        let mut out = Tensor::zeros(self.shape);
        for n in 0..self.shape.batch {
            for ch in 0..c {
                let (wc, bc) = (w[ch], b[ch]);
                let src = self.plane(n, ch);
                let dst = out.plane_mut(n, ch);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = wc * s + bc;
                }
            }
        }
        Ok(out)
    }

    /// Backward of `channel_affine`: returns `(dx, dw, db)`.
    pub fn channel_affine_backward(
        input: &Tensor<T>,
        w: &[T],
        upstream: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        let c = input.shape.channels;
        if w.len() != c {
            return Err(Error::Shape(format!(
                "channel_affine_backward needs {c} weights, got {}",
                w.len()
            )));
        }
        if input.shape != upstream.shape {
            return Err(Error::Shape(format!(
                "upstream shape {} does not match input {}",
                upstream.shape, input.shape
            )));
        }
        let mut dx = Tensor::zeros(input.shape);
        let mut dw = vec![T::zero(); c];
        let mut db = vec![T::zero(); c];
        for n in 0..input.shape.batch {
            for ch in 0..c {
                let wc = w[ch];
                let x = input.plane(n, ch);
                let dy = upstream.plane(n, ch);
                let dxp = dx.plane_mut(n, ch);
                let mut sw = T::zero();
                let mut sb = T::zero();
                for ((g, &u), &xi) in dxp.iter_mut().zip(dy).zip(x) {
                    *g = wc * u;
                    sw = sw + u * xi;
                    sb = sb + u;
                }
                dw[ch] = dw[ch] + sw;
                db[ch] = db[ch] + sb;
            }
        }
        Ok((dx, dw, db))
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map(|v| v.max(T::zero()))
    }

    /// Backward of `relu`: passes upstream where `mask_src > 0`. Ties at
    /// exactly 0 propagate 0. `mask_src` may be the op's input or its output;
    /// their positivity patterns coincide.
    pub fn relu_backward(mask_src: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        mask_src.zip_map(upstream, |m, u| if m > T::zero() { u } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    /// Backward of `sigmoid` given the forward *output* `g`: `dy * g * (1-g)`.
    pub fn sigmoid_backward(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        output.zip_map(upstream, |g, u| u * g * (T::one() - g))
    }

    /// 2x2 average pooling with stride 2; odd trailing rows/columns are
    /// dropped (floor rule).
    pub fn avg_pool2(&self) -> Result<Tensor<T>> {
        let s = self.shape;
        if s.height < 2 || s.width < 2 {
            return Err(Error::Shape(format!(
                "avg_pool2 requires spatial size >= 2, got {}",
                s
            )));
        }
        let (oh, ow) = (s.height / 2, s.width / 2);
        let out_shape = Shape::new(s.batch, s.channels, oh, ow);
        let mut out = Tensor::zeros(out_shape);
        let quarter = sc::<T>(0.25);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..oh {
                    let r0 = 2 * y * s.width;
                    let r1 = r0 + s.width;
                    for x in 0..ow {
                        let i = 2 * x;
                        dst[y * ow + x] =
                            (src[r0 + i] + src[r0 + i + 1] + src[r1 + i] + src[r1 + i + 1]) * quarter;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Backward of `avg_pool2`: each pooled cell spreads `dy/4` over its 2x2
    /// block; dropped rows/columns receive 0.
    pub fn avg_pool2_backward(upstream: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
        let s = upstream.shape;
        if s.batch != input_shape.batch
            || s.channels != input_shape.channels
            || s.height != input_shape.height / 2
            || s.width != input_shape.width / 2
        {
            return Err(Error::Shape(format!(
                "pool upstream {} inconsistent with input shape {}",
                s, input_shape
            )));
        }
        let mut out = Tensor::zeros(input_shape);
        let quarter = sc::<T>(0.25);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = upstream.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..s.height {
                    let r0 = 2 * y * input_shape.width;
                    let r1 = r0 + input_shape.width;
                    for x in 0..s.width {
                        let g = src[y * s.width + x] * quarter;
                        let i = 2 * x;
                        dst[r0 + i] = dst[r0 + i] + g;
                        dst[r0 + i + 1] = dst[r0 + i + 1] + g;
                        dst[r1 + i] = dst[r1 + i] + g;
                        dst[r1 + i + 1] = dst[r1 + i + 1] + g;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Bilinear resize with half-pixel source centers and edge clamping.
    /// Resizing to the same size is a bit-exact identity.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(
                "bilinear_resize target dimensions must be >= 1".into(),
            ));
        }
        let s = self.shape;
        if out_h == s.height && out_w == s.width {
            return Ok(self.clone());
        }
        let ys = axis_taps(s.height, out_h);
        let xs = axis_taps(s.width, out_w);
        let out_shape = Shape::new(s.batch, s.channels, out_h, out_w);
        let mut out = Tensor::zeros(out_shape);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
                    let (fy, gy) = (sc::<T>(fy), sc::<T>(1.0 - fy));
                    let row0 = y0 * s.width;
                    let row1 = y1 * s.width;
                    for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let (fx, gx) = (sc::<T>(fx), sc::<T>(1.0 - fx));
                        let v = gy * (gx * src[row0 + x0] + fx * src[row0 + x1])
                            + fy * (gx * src[row1 + x0] + fx * src[row1 + x1]);
                        dst[y * out_w + x] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Backward of `bilinear_resize`: distribute the upstream gradient onto
    /// the source pixels with the same blend weights.
    pub fn bilinear_resize_backward(
        upstream: &Tensor<T>,
        src_h: usize,
        src_w: usize,
    ) -> Result<Tensor<T>> {
        let s = upstream.shape;
        if s.height == src_h && s.width == src_w {
            return Ok(upstream.clone());
        }
        let ys = axis_taps(src_h, s.height);
        let xs = axis_taps(src_w, s.width);
        let src_shape = Shape::new(s.batch, s.channels, src_h, src_w);
        let mut out = Tensor::zeros(src_shape);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let up = upstream.plane(n, c);
                let dst = out.plane_mut(n, c);
                for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
                    let (fy, gy) = (sc::<T>(fy), sc::<T>(1.0 - fy));
                    let row0 = y0 * src_w;
                    let row1 = y1 * src_w;
                    for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let (fx, gx) = (sc::<T>(fx), sc::<T>(1.0 - fx));
                        let g = up[y * s.width + x];
                        dst[row0 + x0] = dst[row0 + x0] + gy * gx * g;
                        dst[row0 + x1] = dst[row0 + x1] + gy * fx * g;
                        dst[row1 + x0] = dst[row1 + x0] + fy * gx * g;
                        dst[row1 + x1] = dst[row1 + x1] + fy * fx * g;
                    }
                }
            }
        }
        Ok(out)
    }

    /// BT.601 grayscale: `0.299 R + 0.587 G + 0.114 B`.
    pub fn to_grayscale(&self) -> Result<Tensor<T>> {
        let s = self.shape;
        if s.channels != 3 {
            return Err(Error::Shape(format!(
                "to_grayscale requires 3 channels, got {}",
                s.channels
            )));
        }
        let out_shape = Shape::new(s.batch, 1, s.height, s.width);
        let mut out = Tensor::zeros(out_shape);
        for n in 0..s.batch {
            for (ch, &wf) in LUMA_WEIGHTS.iter().enumerate() {
                let wc = sc::<T>(wf);
                let src = self.plane(n, ch);
                for (d, &v) in out.plane_mut(n, 0).iter_mut().zip(src) {
                    *d = *d + wc * v;
                }
            }
        }
        Ok(out)
    }

    /// Backward of `to_grayscale`: spread the single-channel upstream over
    /// RGB with the luma weights.
    pub fn to_grayscale_backward(upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let s = upstream.shape;
        if s.channels != 1 {
            return Err(Error::Shape(format!(
                "grayscale upstream must have 1 channel, got {}",
                s.channels
            )));
        }
        let out_shape = Shape::new(s.batch, 3, s.height, s.width);
        let mut out = Tensor::zeros(out_shape);
        for n in 0..s.batch {
            for (ch, &wf) in LUMA_WEIGHTS.iter().enumerate() {
                let wc = sc::<T>(wf);
                let up = upstream.plane(n, 0);
                for (d, &u) in out.plane_mut(n, ch).iter_mut().zip(up) {
                    *d = wc * u;
                }
            }
        }
        Ok(out)
    }

    /// Horizontal and vertical Sobel gradient maps (3x3 kernels, zero
    /// padding 1, output shape equals input shape).
    pub fn sobel_gradients(&self) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = self.shape;
        if s.channels != 1 {
            return Err(Error::Shape(format!(
                "sobel_gradients requires 1 channel, got {}",
                s.channels
            )));
        }
        let gx = self.correlate3(&SOBEL_X);
        let gy = self.correlate3(&SOBEL_Y);
        Ok((gx, gy))
    }

    /// Backward of `sobel_gradients`: cross-correlation of each upstream map
    /// with the 180-degree-rotated kernel.
    pub fn sobel_backward(d_gx: &Tensor<T>, d_gy: &Tensor<T>) -> Result<Tensor<T>> {
        if d_gx.shape != d_gy.shape {
            return Err(Error::Shape(format!(
                "sobel upstream shapes differ: {} vs {}",
                d_gx.shape, d_gy.shape
            )));
        }
        let mut kx = SOBEL_X;
        let mut ky = SOBEL_Y;
        kx.reverse();
        ky.reverse();
        let mut out = d_gx.correlate3(&kx);
        out.add_assign(&d_gy.correlate3(&ky))?;
        Ok(out)
    }

    /// 3x3 cross-correlation with zero padding 1 (same-shape output).
    fn correlate3(&self, kernel: &[f64; 9]) -> Tensor<T> {
        let s = self.shape;
        let k: Vec<T> = kernel.iter().map(|&v| sc(v)).collect();
        let mut out = Tensor::zeros(s);
        let (h, w) = (s.height as isize, s.width as isize);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = T::zero();
                        for dy in -1..=1isize {
                            let sy = y + dy;
                            if sy < 0 || sy >= h {
                                continue;
                            }
                            for dx in -1..=1isize {
                                let sx = x + dx;
                                if sx < 0 || sx >= w {
                                    continue;
                                }
                                let kv = k[((dy + 1) * 3 + (dx + 1)) as usize];
                                acc = acc + kv * src[(sy * w + sx) as usize];
                            }
                        }
                        dst[(y * w + x) as usize] = acc;
                    }
                }
            }
        }
        out
    }
}

/// Per-axis bilinear taps: (low index, high index, fraction toward high),
/// using half-pixel centers `src = (dst + 0.5) * size / out - 0.5` with edge
/// clamping. Coordinates are computed in f64 for both scalar kinds.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// A tensor paired with its (eventually) accumulated gradient.
#[derive(Clone, Debug)]
pub struct GradPair<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> GradPair<T> {
    pub fn new(value: Tensor<T>) -> GradPair<T> {
        GradPair { value, grad: None }
    }

    pub fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {} does not match value {}",
                g.shape(),
                self.value.shape()
            )));
        }
        match &mut self.grad {
            Some(acc) => acc.add_assign(g)?,
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }
}

/// Central-difference gradient of a scalar-valued function of a tensor:
/// `(f(x + h e_k) - f(x - h e_k)) / (2h)` per element. Use the 64-bit scalar
/// kind for tight tolerances.
pub fn numeric_gradient<T: Scalar, F>(mut f: F, x: &Tensor<T>, h: T) -> Tensor<T>
where
    F: FnMut(&Tensor<T>) -> T,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    let two_h = h + h;
    for k in 0..x.data().len() {
        let v = probe.data()[k];
        probe.data_mut()[k] = v + h;
        let fp = f(&probe);
        probe.data_mut()[k] = v - h;
        let fm = f(&probe);
        probe.data_mut()[k] = v;
        grad.data_mut()[k] = (fp - fm) / two_h;
    }
    grad
}

/// Central differences restricted to a subset of flat coordinates.
pub fn numeric_gradient_at<T: Scalar, F>(mut f: F, x: &Tensor<T>, h: T, coords: &[usize]) -> Vec<T>
where
    F: FnMut(&Tensor<T>) -> T,
{
    let mut probe = x.clone();
    let two_h = h + h;
    coords
        .iter()
        .map(|&k| {
            let v = probe.data()[k];
            probe.data_mut()[k] = v + h;
            let fp = f(&probe);
            probe.data_mut()[k] = v - h;
            let fm = f(&probe);
            probe.data_mut()[k] = v;
            (fp - fm) / two_h
        })
        .collect()
}
