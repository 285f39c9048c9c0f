//! Map conditioning helpers shared by the pipeline, the metrics, and the IO
//! layers: resizing, smoothing, normalization, and 8-bit image conversion.

use std::path::Path;

use image::{GrayImage, ImageReader, Luma, RgbImage};

use crate::tensor::{Tensor, TensorError};

/// Bilinear resize of an `[H, W]` map using half-pixel centres.
pub fn resize_bilinear(map: &Tensor, out_w: usize, out_h: usize) -> Result<Tensor, TensorError> {
    let (h, w) = map.dims2()?;
    let data = resize_plane(map.data(), w, h, out_w, out_h);
    Tensor::new(vec![out_h, out_w], data)
}

/// Bilinear resize applied to every channel of a `[C, H, W]` stack.
pub fn resize_bilinear_chw(t: &Tensor, out_w: usize, out_h: usize) -> Result<Tensor, TensorError> {
    let (c, h, w) = t.dims3()?;
    let mut data = Vec::with_capacity(c * out_w * out_h);
    for ch in 0..c {
        data.extend(resize_plane(t.channel(ch), w, h, out_w, out_h));
    }
    Tensor::new(vec![c, out_h, out_w], data)
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

fn resize_plane(src: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    if w == out_w && h == out_h {
        return src.to_vec();
    }
    let xs = axis_taps(w, out_w);
    let ys = axis_taps(h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Normalized 1-D Gaussian kernel truncated at three standard deviations.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / sum) as f32).collect()
}

/// Separable Gaussian blur of an `[H, W]` map with edge replication.
/// `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(map: &Tensor, sigma: f64) -> Result<Tensor, TensorError> {
    let (h, w) = map.dims2()?;
    if sigma <= 0.0 {
        return Ok(map.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let src = map.data();
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xi = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for (k, &kv) in kernel.iter().enumerate() {
        for y in 0..h {
            let yi = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp[yi * w..(yi + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Min-max normalization to `[0, 1]`. Constant maps become all-zero.
pub fn minmax_normalize(map: &Tensor) -> Tensor {
    let (lo, hi) = map.min_max();
    if !(hi > lo) {
        return Tensor::zeros(map.shape().to_vec());
    }
    let range = (hi - lo) as f64;
    map.map(|v| (((v - lo) as f64) / range) as f32)
}

/// Quantize a `[0, 1]` map to an 8-bit grayscale image.
pub fn to_gray_image(map: &Tensor) -> Result<GrayImage, TensorError> {
    let (h, w) = map.dims2()?;
    let mut img = GrayImage::new(w as u32, h as u32);
    for (px, &v) in img.pixels_mut().zip(map.data()) {
        *px = Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]);
    }
    Ok(img)
}

pub fn gray_image_to_tensor(img: &GrayImage) -> Tensor {
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
    Tensor::new(vec![h as usize, w as usize], data).expect("dimensions match pixel count")
}

/// RGB image to a `[3, H, W]` tensor with values in `[0, 1]`.
pub fn rgb_image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h as usize, w as usize], data).expect("dimensions match pixel count")
}

pub fn tensor_to_rgb_image(t: &Tensor) -> Result<RgbImage, TensorError> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            shape: t.shape().to_vec(),
        });
    }
    let plane = h * w;
    let data = t.data();
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        for ch in 0..3 {
            px.0[ch] = (data[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok(img)
}

pub fn load_rgb(path: &Path) -> image::ImageResult<Tensor> {
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?;
    Ok(rgb_image_to_tensor(&img.to_rgb8()))
}

pub fn load_gray(path: &Path) -> image::ImageResult<Tensor> {
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?;
    Ok(gray_image_to_tensor(&img.to_luma8()))
}

pub fn save_gray_png(map: &Tensor, path: &Path) -> Result<(), crate::Error> {
    to_gray_image(map)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
