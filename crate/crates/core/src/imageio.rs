//! Image and raw-tensor file IO.
//!
//! Images are 8-bit RGB PNGs decoded to `[0, 1]`. A small raw tensor
//! format (`.tns`: magic, rank, extents, little-endian f32 payload) is
//! accepted wherever an image is, which keeps synthetic test fixtures
//! independent of any codec.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use std::io::{Read, Write};
use std::path::Path;

const RAW_MAGIC: &[u8; 4] = b"TNSR";
const RAW_VERSION: u32 = 1;

/// Writes a tensor in the raw fixture format.
pub fn save_raw_tensor<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(RAW_MAGIC)?;
    file.write_all(&RAW_VERSION.to_le_bytes())?;
    file.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        file.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in tensor.data() {
        file.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a tensor in the raw fixture format.
pub fn load_raw_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Image(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != RAW_MAGIC {
        return Err(fail("not a raw tensor file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != RAW_VERSION {
        return Err(fail(&format!("unsupported raw tensor version {version}")));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + 4 * rank {
        return Err(fail("truncated header"));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 12 + 4 * i;
        shape.push(u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    let data_start = 12 + 4 * rank;
    if bytes.len() < data_start + 4 * numel {
        return Err(fail("truncated payload"));
    }
    let data: Vec<T> = (0..numel)
        .map(|i| {
            let at = data_start + 4 * i;
            T::from_f64(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64)
        })
        .collect();
    Tensor::new(shape, data)
}

/// Loads an image file (PNG or raw tensor) as a `3×H×W` tensor in `[0, 1]`.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    if path.extension().and_then(|e| e.to_str()) == Some("tns") {
        let t = load_raw_tensor::<T>(path)?;
        if t.rank() != 3 || t.shape()[0] != 3 {
            return Err(Error::Image(format!(
                "{}: raw image must be 3×H×W, got {:?}",
                path.display(),
                t.shape()
            )));
        }
        return Ok(t);
    }
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                data[c * h * w + y * w + x] = T::from_f64(px[c] as f64 / 255.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Writes a `3×H×W` tensor in `[0, 1]` as an RGB PNG.
pub fn save_rgb_png<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let (h, w) = match tensor.shape() {
        [3, h, w] => (*h, *w),
        other => {
            return Err(Error::Image(format!(
                "rgb png expects 3×H×W, got {other:?}"
            )))
        }
    };
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| {
                (tensor.data()[c * h * w + y * w + x].as_f64().clamp(0.0, 1.0) * 255.0).round()
                    as u8
            };
            img.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes a single-channel map as a min-max normalized grayscale PNG and
/// returns the normalization range for the sidecar file.
pub fn save_gray_png<T: Scalar>(path: &Path, map: &Tensor<T>) -> Result<(f64, f64)> {
    let (h, w) = match map.shape() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        other => {
            return Err(Error::Image(format!(
                "grayscale png expects 1×H×W or H×W, got {other:?}"
            )))
        }
    };
    let lo = map.iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min);
    let hi = map.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (map.data()[y * w + x].as_f64() - lo) / span;
            img.put_pixel(x as u32, y as u32, image::Luma([(v * 255.0).round() as u8]));
        }
    }
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_tensor_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tns");
        let t = Tensor::<f32>::new(vec![3, 2, 2], (0..12).map(|v| v as f32 * 0.1).collect()).unwrap();
        save_raw_tensor(&path, &t).unwrap();
        let back = load_raw_tensor::<f32>(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
        // raw tensors load through the generic image entry point too
        let as_img = load_image::<f32>(&path).unwrap();
        assert_eq!(as_img.data(), t.data());
    }

    #[test]
    fn png_roundtrip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let t = Tensor::<f32>::new(
            vec![3, 2, 3],
            (0..18).map(|v| (v as f32) / 17.0).collect(),
        )
        .unwrap();
        save_rgb_png(&path, &t).unwrap();
        let back = load_image::<f32>(&path).unwrap();
        assert_eq!(back.shape(), &[3, 2, 3]);
        for (a, b) in back.iter().zip(t.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn gray_png_reports_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let t = Tensor::<f64>::new(vec![1, 2, 2], vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        let (lo, hi) = save_gray_png(&path, &t).unwrap();
        assert_eq!((lo, hi), (0.25, 1.0));
    }

    #[test]
    fn truncated_raw_tensor_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tns");
        let t = Tensor::<f32>::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_raw_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_raw_tensor::<f32>(&path).is_err());
    }
}
