//! Low-level pixel buffer helpers shared by feature extraction and the transform stages.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Bilinear resize of an interleaved `u8` buffer using half-pixel-center sampling:
/// output pixel `x` samples source coordinate `(x + 0.5) * src_w / dst_w - 0.5`,
/// clamped to the valid range. Results are rounded half away from zero.
pub fn resize_bilinear(
    pixels: &[u8],
    width: usize,
    height: usize,
    channels: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height * channels);
    if dst_w == width && dst_h == height {
        return pixels.to_vec();
    }
    let sx = width as f64 / dst_w as f64;
    let sy = height as f64 / dst_h as f64;
    let taps = |dst: usize, scale: f64, src_len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..dst_w).map(|x| taps(x, sx, width)).collect();
    let mut out = Vec::with_capacity(dst_w * dst_h * channels);
    for y in 0..dst_h {
        let (y0, y1, fy) = taps(y, sy, height);
        for &(x0, x1, fx) in &cols {
            for c in 0..channels {
                let p = |xx: usize, yy: usize| pixels[(yy * width + xx) * channels + c] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Luminance in `[0, 1]` per pixel using 0.299/0.587/0.114 weights (no rounding).
pub fn luminance(rgb: &[u8]) -> Vec<f64> {
    rgb.chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect()
}

/// Decodes PNG/JPEG bytes into `(width, height, rgb)`.
pub fn decode_rgb(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
    let rgb = img.to_rgb8();
    Ok((rgb.width(), rgb.height(), rgb.into_raw()))
}

/// Encodes an RGB (3 channels) or grayscale (1 channel) buffer as PNG.
pub fn encode_png(pixels: &[u8], width: u32, height: u32, channels: usize) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    match channels {
        3 => RgbImage::from_raw(width, height, pixels.to_vec())
            .expect("buffer matches dimensions")
            .write_to(&mut out, ImageFormat::Png),
        1 => image::GrayImage::from_raw(width, height, pixels.to_vec())
            .expect("buffer matches dimensions")
            .write_to(&mut out, ImageFormat::Png),
        n => panic!("unsupported channel count {n}"),
    }
    .expect("PNG encoding to memory cannot fail");
    out.into_inner()
}
