//! Image and tensor containers, resampling and color utilities.

mod io;
mod resample;
mod tensor;

pub use io::{read_png, read_tensor, write_png, write_tensor, BitDepth};
pub use resample::{axis_taps, Tap};
pub use tensor::{Scalar, Tensor};

use crate::error::{invalid, Result};

/// H×W×C raster with values in `[0,1]`, stored row-major with interleaved
/// channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Rec. 601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

impl Image {
    /// Builds an image from interleaved data, rejecting values outside `[0,1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::check_dims(height, width, channels, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("pixel value {bad} outside [0,1]"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every value into `[0,1]`. NaN becomes 0.
    pub fn clamped(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::check_dims(height, width, channels, data.len())?;
        let data = data.into_iter().map(clamp01).collect();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from a per-sample closure `f(y, x, c)`; results are clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::clamped(height, width, channels, data)
    }

    fn check_dims(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
        if height == 0 || width == 0 {
            return invalid(format!("image dims must be >= 1, got {height}x{width}"));
        }
        if channels != 1 && channels != 3 {
            return invalid(format!("unsupported channel count {channels}"));
        }
        if len != height * width * channels {
            return invalid(format!("data length {len} does not match {height}x{width}x{channels}"));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    /// Copies out the `h×w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || y + h > self.height || x + w > self.width {
            return invalid(format!("crop {h}x{w}@({y},{x}) outside {}x{}", self.height, self.width));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for row in y..y + h {
            let start = (row * self.width + x) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image {
            height: h,
            width: w,
            channels: c,
            data,
        })
    }

    /// Pads to `(h, w)` by mirroring about the last row/column (no edge repeat).
    pub fn pad_reflect(&self, h: usize, w: usize) -> Result<Image> {
        if h < self.height || w < self.width {
            return invalid("reflect padding cannot shrink an image");
        }
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i % period;
            if m < n {
                m
            } else {
                period - m
            }
        };
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            let sy = reflect(y, self.height);
            for x in 0..w {
                data.extend_from_slice(self.pixel(sy, reflect(x, self.width)));
            }
        }
        Ok(Image {
            height: h,
            width: w,
            channels: c,
            data,
        })
    }
}

#[inline]
pub fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Bilinear resampling with half-pixel-centered coordinates.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return invalid(format!("resize target must be >= 1, got {out_h}x{out_w}"));
    }
    if (out_h, out_w) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let c = img.channels;
    let ys = axis_taps(img.height, out_h);
    let xs = axis_taps(img.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for ty in &ys {
        for tx in &xs {
            for ch in 0..c {
                let v = |y: usize, x: usize| f64::from(img.get(y, x, ch));
                let top = v(ty.i0, tx.i0) * (1.0 - tx.w) + v(ty.i0, tx.i1) * tx.w;
                let bot = v(ty.i1, tx.i0) * (1.0 - tx.w) + v(ty.i1, tx.i1) * tx.w;
                data.push((top * (1.0 - ty.w) + bot * ty.w) as f32);
            }
        }
    }
    Image::new(out_h, out_w, c, data)
}

/// Luma conversion; single-channel images pass through unchanged.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let data = img
                .data
                .chunks_exact(3)
                .map(|p| clamp01(LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]))
                .collect();
            Image::new(img.height, img.width, 1, data)
        }
        c => invalid(format!("unsupported channel count {c}")),
    }
}

/// Stacks images into an N×C×H×W tensor.
pub fn image_to_tensor(imgs: &[Image]) -> Result<Tensor<f32>> {
    let Some(first) = imgs.first() else {
        return invalid("image_to_tensor needs at least one image");
    };
    let (h, w, c) = first.dims();
    if let Some(bad) = imgs.iter().find(|i| i.dims() != first.dims()) {
        return invalid(format!("mismatched image dims {:?} vs {:?}", bad.dims(), first.dims()));
    }
    let mut data = Vec::with_capacity(imgs.len() * c * h * w);
    for img in imgs {
        for ch in 0..c {
            data.extend(img.data.iter().skip(ch).step_by(c).copied());
        }
    }
    Tensor::from_vec(imgs.len(), c, h, w, data)
}

/// Extracts sample `index` of a tensor as an image; values must already lie in `[0,1]`.
pub fn tensor_to_image(t: &Tensor<f32>, index: usize) -> Result<Image> {
    let (n, c, h, w) = t.shape();
    if index >= n {
        return invalid(format!("sample index {index} out of range for batch {n}"));
    }
    let plane = h * w;
    let sample = t.sample(index);
    let mut data = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            data.push(sample[ch * plane + p]);
        }
    }
    Image::new(h, w, c, data)
}

/// Like [`tensor_to_image`] but clamps raw network output into `[0,1]`.
pub fn tensor_to_image_clamped(t: &Tensor<f32>, index: usize) -> Result<Image> {
    let (n, c, h, w) = t.shape();
    if index >= n {
        return invalid(format!("sample index {index} out of range for batch {n}"));
    }
    let plane = h * w;
    let sample = t.sample(index);
    let mut data = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            data.push(sample[ch * plane + p]);
        }
    }
    Image::clamped(h, w, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, v: &[f32]) -> Image {
        Image::new(h, w, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = Image::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 105.0).unwrap();
        assert_eq!(resize_bilinear(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(6, 9, 3, 0.37).unwrap();
        let out = resize_bilinear(&img, 13, 4).unwrap();
        assert_eq!(out.dims(), (13, 4, 3));
        assert!(out.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn resize_checkerboard_to_single_pixel() {
        let img = gray(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = resize_bilinear(&img, 1, 1).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = gray(2, 2, &[0.0; 4]);
        assert!(resize_bilinear(&img, 0, 3).is_err());
        assert!(resize_bilinear(&img, 3, 0).is_err());
    }

    #[test]
    fn grayscale_luma() {
        let img = Image::new(1, 3, 3, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = to_grayscale(&img).unwrap();
        assert_eq!(g.get(0, 0, 0), 0.0);
        assert!((g.get(0, 1, 0) - 1.0).abs() < 1e-7);
        assert!((g.get(0, 2, 0) - 0.299).abs() < 1e-7);
        let one = gray(1, 1, &[0.25]);
        assert_eq!(to_grayscale(&one).unwrap(), one);
    }

    #[test]
    fn new_rejects_out_of_range_and_bad_channels() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(0, 1, 1, vec![]).is_err());
        let c = Image::clamped(1, 2, 1, vec![-0.5, 2.0]).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0]);
    }

    #[test]
    fn tensor_batch_shape_and_empty_error() {
        let a = Image::filled(4, 5, 3, 0.1).unwrap();
        let t = image_to_tensor(&[a.clone(), a]).unwrap();
        assert_eq!(t.shape(), (2, 3, 4, 5));
        assert!(image_to_tensor(&[]).is_err());
        let b = Image::filled(4, 6, 3, 0.1).unwrap();
        let c = Image::filled(4, 5, 3, 0.1).unwrap();
        assert!(image_to_tensor(&[c, b]).is_err());
    }

    #[test]
    fn reflect_padding_mirrors() {
        let img = gray(1, 3, &[0.1, 0.2, 0.3]);
        let p = img.pad_reflect(1, 6).unwrap();
        assert_eq!(p.data(), &[0.1, 0.2, 0.3, 0.2, 0.1, 0.2]);
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..9, 1usize..9, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(h, w, c)| {
            proptest::collection::vec(0.0f32..=1.0, h * w * c).prop_map(move |d| Image::new(h, w, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn resize_stays_within_input_range(img in arb_image(), oh in 1usize..12, ow in 1usize..12) {
            let lo = img.data().iter().copied().fold(f32::INFINITY, f32::min);
            let hi = img.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let out = resize_bilinear(&img, oh, ow).unwrap();
            prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn tensor_round_trip_is_bit_exact(img in arb_image()) {
            let t = image_to_tensor(std::slice::from_ref(&img)).unwrap();
            prop_assert_eq!(tensor_to_image(&t, 0).unwrap(), img);
        }
    }
}
