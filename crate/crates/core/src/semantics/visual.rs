use serde::{Deserialize, Serialize};

use crate::raster;

/// Side length of the square copy that visual attributes are measured on.
pub const ANALYSIS_SIZE: usize = 224;

/// Pixels whose unnormalized 3x3 Sobel gradient magnitude (luminance in `[0,1]`)
/// exceeds this value count as edges.
pub const SOBEL_EDGE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualAttributes {
    /// Mean luminance.
    pub brightness: f64,
    /// Population standard deviation of luminance.
    pub contrast: f64,
    /// Fraction of edge pixels.
    pub edge_density: f64,
}

impl VisualAttributes {
    pub fn is_valid(&self) -> bool {
        [self.brightness, self.contrast, self.edge_density]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }

    /// Measures an RGB image after a bilinear resize to 224x224.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Self {
        let resized = raster::resize_bilinear(rgb, width, height, 3, ANALYSIS_SIZE, ANALYSIS_SIZE);
        Self::from_luma(ANALYSIS_SIZE, ANALYSIS_SIZE, &raster::luminance(&resized))
    }

    /// Measures a luminance plane with values in `[0, 1]`.
    pub fn from_luma(width: usize, height: usize, luma: &[f64]) -> Self {
        let n = luma.len() as f64;
        let brightness = luma.iter().sum::<f64>() / n;
        let variance = luma.iter().map(|v| (v - brightness).powi(2)).sum::<f64>() / n;
        let edges = sobel_magnitude(width, height, luma)
            .into_iter()
            .filter(|&m| m > SOBEL_EDGE_THRESHOLD)
            .count();
        Self {
            brightness: brightness.clamp(0.0, 1.0),
            contrast: variance.sqrt().clamp(0.0, 1.0),
            edge_density: edges as f64 / n,
        }
    }

    /// `1 - mean |a - b|` over the three attributes.
    pub fn similarity(&self, other: &VisualAttributes) -> f64 {
        let d = (self.brightness - other.brightness).abs()
            + (self.contrast - other.contrast).abs()
            + (self.edge_density - other.edge_density).abs();
        1.0 - d / 3.0
    }
}

/// Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(width: usize, height: usize, luma: &[f64]) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        let xx = x.clamp(0, width as isize - 1) as usize;
        let yy = y.clamp(0, height as isize - 1) as usize;
        luma[yy * width + xx]
    };
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_image_is_all_zero() {
        let v = VisualAttributes::from_rgb(32, 20, &vec![0; 32 * 20 * 3]);
        assert_eq!(
            v,
            VisualAttributes {
                brightness: 0.0,
                contrast: 0.0,
                edge_density: 0.0
            }
        );
    }

    /// Independent brute-force Sobel over an explicit 3x3 window list.
    fn oracle_edge_density(w: usize, h: usize, luma: &[f64]) -> f64 {
        const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                let (mut gx, mut gy) = (0.0, 0.0);
                for (j, (rx, ry)) in KX.iter().zip(KY.iter()).enumerate() {
                    for i in 0..3 {
                        let sx = (x as isize + i as isize - 1).max(0).min(w as isize - 1) as usize;
                        let sy = (y as isize + j as isize - 1).max(0).min(h as isize - 1) as usize;
                        gx += rx[i] * luma[sy * w + sx];
                        gy += ry[i] * luma[sy * w + sx];
                    }
                }
                if (gx * gx + gy * gy).sqrt() > SOBEL_EDGE_THRESHOLD {
                    count += 1;
                }
            }
        }
        count as f64 / (w * h) as f64
    }

    #[test]
    fn checkerboard_edge_density_matches_oracle() {
        let n = ANALYSIS_SIZE;
        let mut rgb = Vec::with_capacity(n * n * 3);
        for y in 0..n {
            for x in 0..n {
                let v = if (x / 2 + y / 2) % 2 == 0 { 0 } else { 255 };
                rgb.extend_from_slice(&[v, v, v]);
            }
        }
        let attrs = VisualAttributes::from_rgb(n, n, &rgb);
        let luma: Vec<f64> = rgb.chunks(3).map(|p| p[0] as f64 / 255.0).collect();
        let expected = oracle_edge_density(n, n, &luma);
        // Only the replicated image corners see a flat 3x3 neighbourhood.
        assert!(expected > 0.99, "{expected}");
        assert!((attrs.edge_density - expected).abs() < 1e-12);
        assert!((attrs.brightness - 0.5).abs() < 1e-9);
        assert!((attrs.contrast - 0.5).abs() < 1e-9);
    }

    #[test]
    fn similarity_of_identical_is_one() {
        let v = VisualAttributes {
            brightness: 0.3,
            contrast: 0.2,
            edge_density: 0.1,
        };
        assert_eq!(v.similarity(&v), 1.0);
    }
}
