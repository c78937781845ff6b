use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{Image, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TXS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Reads an 8- or 16-bit PNG. Gray(+alpha) loads as one channel, everything
/// else as RGB; alpha is dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let img = match dynimg {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            let b = dynimg.to_luma8();
            Image::new(
                h,
                w,
                1,
                b.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect(),
            )
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let b = dynimg.to_luma16();
            Image::new(
                h,
                w,
                1,
                b.into_raw().into_iter().map(|v| f32::from(v) / 65535.0).collect(),
            )
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let b = dynimg.to_rgb16();
            Image::new(
                h,
                w,
                3,
                b.into_raw().into_iter().map(|v| f32::from(v) / 65535.0).collect(),
            )
        }
        other => {
            let b = other.to_rgb8();
            Image::new(
                h,
                w,
                3,
                b.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect(),
            )
        }
    };
    img.map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_png(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = img.dims();
    let (w32, h32) = (w as u32, h as u32);
    let q8 = |v: &f32| (v * 255.0).round() as u8;
    let q16 = |v: &f32| (v * 65535.0).round() as u16;
    let dynimg = match (c, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, img.data().iter().map(q8).collect()).expect("buffer size"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, img.data().iter().map(q16).collect()).expect("buffer size"),
        ),
        (_, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, img.data().iter().map(q8).collect()).expect("buffer size"),
        ),
        (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, img.data().iter().map(q16).collect()).expect("buffer size"),
        ),
    };
    dynimg
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes `TXS1`, the four dims as little-endian u32 (n, c, h, w), then the
/// values as little-endian f32.
pub fn write_tensor(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (n, c, h, w) = t.shape();
    let mut buf = Vec::with_capacity(20 + 4 * t.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    for d in [n, c, h, w] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::format(path, "missing TXS1 header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    let count = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format(path, "dims overflow"))?;
    if bytes.len() != 20 + 4 * count {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", 4 * count, bytes.len() - 20),
        ));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor::from_vec(n, c, h, w, data).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_tensor_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let t = Tensor::from_vec(1, 2, 1, 2, vec![1.0f32, -2.5, 0.0, 3.25]).unwrap();
        write_tensor(&t, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"TXS1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 16);
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let t = Tensor::from_vec(1, 1, 2, 2, vec![0.0f32; 4]).unwrap();
        write_tensor(&t, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_tensor(&p).is_err());
    }

    #[test]
    fn png_round_trip_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(3, 4, 3, |y, x, c| ((y * 4 + x) * 3 + c) as f32 / 35.0).unwrap();
        let p16 = dir.path().join("a16.png");
        write_png(&img, &p16, BitDepth::Sixteen).unwrap();
        let back = read_png(&p16).unwrap();
        assert_eq!(back.dims(), (3, 4, 3));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }

        let g = Image::from_fn(2, 2, 1, |y, x, _| (y * 2 + x) as f32 * 85.0 / 255.0).unwrap();
        let p8 = dir.path().join("g8.png");
        write_png(&g, &p8, BitDepth::Eight).unwrap();
        assert_eq!(read_png(&p8).unwrap(), g);
    }
}
