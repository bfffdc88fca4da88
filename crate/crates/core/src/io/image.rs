//! 8-bit RGB PNG input/output and dataset directories.

use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::resample::bicubic;
use crate::tensor::Tensor;
use crate::trainer::Dataset;

/// `p` in `[0, 255]` to `2 p / 255 - 1`.
pub fn pixel_to_unit(p: u8) -> f32 {
    2.0 * p as f32 / 255.0 - 1.0
}

/// Clamps to `[-1, 1]` then quantizes, rounding halves up.
pub fn unit_to_pixel(v: f32) -> u8 {
    let v = if v.is_nan() { -1.0 } else { v.clamp(-1.0, 1.0) };
    ((v as f64 + 1.0) * 127.5 + 0.5).floor().min(255.0) as u8
}

/// Interleaved RGB bytes to a `[3, h, w]` tensor.
pub fn from_rgb_bytes(bytes: &[u8], h: usize, w: usize) -> Result<Tensor<f32>> {
    if bytes.len() != 3 * h * w {
        return Err(Error::Data(format!("{} bytes for a {h}x{w} RGB image", bytes.len())));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[3, h, w]);
    let data = out.data_mut();
    for (i, px) in bytes.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = pixel_to_unit(px[c]);
        }
    }
    Ok(out)
}

/// A `[3, h, w]` (or `[1, 3, h, w]`) tensor to interleaved RGB bytes.
pub fn to_rgb_bytes(img: &Tensor<f32>) -> Result<(Vec<u8>, usize, usize)> {
    let s = img.shape();
    let (c, h, w) = match *s {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(Error::Shape(format!("cannot encode tensor of shape {s:?} as an image"))),
    };
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = img.data();
    let bytes = (0..plane).flat_map(|i| (0..3).map(move |ch| unit_to_pixel(d[ch * plane + i]))).collect();
    Ok((bytes, h, w))
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Data(format!("cannot read image {}: {e}", path.display())))?.to_rgb8();
    let (w, h) = img.dimensions();
    from_rgb_bytes(img.as_raw(), h as usize, w as usize)
}

pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (bytes, h, w) = to_rgb_bytes(img)?;
    let buf = RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(format!("cannot write {}: {e}", path.display()))))
}

/// Center square crop of a `[C, H, W]` image.
pub fn center_crop_square(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::Shape(format!("expected [C, H, W], got {:?}", img.shape())));
    };
    let n = h.min(w);
    let (oy, ox) = ((h - n) / 2, (w - n) / 2);
    let d = img.data();
    Ok(Tensor::from_fn(&[c, n, n], |i| {
        let (ch, r) = (i / (n * n), i % (n * n));
        d[ch * h * w + (oy + r / n) * w + ox + r % n]
    }))
}

/// PNG files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Data(format!("cannot read dataset directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", dir.display())));
    }
    Ok(paths)
}

/// Loads every PNG in `dir`, center-cropped and bicubically resized to `hr_size` squared.
pub fn load_dataset(dir: &Path, hr_size: usize) -> Result<Dataset<f32>> {
    let mut data = Dataset::default();
    for path in list_images(dir)? {
        let img = center_crop_square(&load_image(&path)?)?;
        data.images.push(bicubic(&img, hr_size, hr_size)?);
        data.names.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    Ok(data)
}
