//! Training-time augmentation: per-sample horizontal flip and small
//! rotation with nearest-neighbor resampling.

use sfl_nn::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub max_rot_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { flip_p: 0.5, max_rot_deg: 15.0 }
    }
}

/// Mirror the width axis of one (C,H,W) image stored flat.
pub fn flip_horizontal(img: &mut [f32], channels: usize, h: usize, w: usize) {
    for c in 0..channels {
        for row in 0..h {
            let base = (c * h + row) * w;
            img[base..base + w].reverse();
        }
    }
}

/// Rotate one (C,H,W) image about its center by `deg` degrees,
/// nearest-neighbor, zero fill outside. `deg` = 0 is the identity.
pub fn rotate_nearest(img: &[f32], channels: usize, h: usize, w: usize, deg: f64) -> Vec<f32> {
    let rad = deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0f32; img.len()];
    for c in 0..channels {
        for oy in 0..h {
            for ox in 0..w {
                // Inverse-rotate the output coordinate to find the source.
                let dy = oy as f64 - cy;
                let dx = ox as f64 - cx;
                let sy = cy + dy * cos - dx * sin;
                let sx = cx + dy * sin + dx * cos;
                let (ry, rx) = (sy.round(), sx.round());
                if ry < 0.0 || rx < 0.0 || ry >= h as f64 || rx >= w as f64 {
                    continue;
                }
                out[(c * h + oy) * w + ox] = img[(c * h + ry as usize) * w + rx as usize];
            }
        }
    }
    out
}

/// Independently flip (p = flip_p) and rotate (uniform in +-max_rot_deg)
/// every sample of a batch. Shape and pixel range are preserved.
pub fn augment_batch(batch: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut Rng) -> Tensor<f32> {
    let [bsz, c, h, w] = *batch.dims() else {
        panic!("augment expects (B, C, H, W), got {:?}", batch.dims())
    };
    let n = c * h * w;
    let mut out = batch.data().to_vec();
    for i in 0..bsz {
        let img = &mut out[i * n..(i + 1) * n];
        if rng.uniform_f64() < cfg.flip_p {
            flip_horizontal(img, c, h, w);
        }
        let deg = rng.range_f64(-cfg.max_rot_deg, cfg.max_rot_deg);
        let rotated = rotate_nearest(img, c, h, w, deg);
        for (dst, src) in img.iter_mut().zip(rotated) {
            *dst = src.clamp(0.0, 1.0);
        }
    }
    Tensor::new(batch.dims().to_vec(), out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_flip_is_identity() {
        let orig: Vec<f32> = (0..2 * 3 * 4).map(|i| i as f32).collect();
        let mut img = orig.clone();
        flip_horizontal(&mut img, 2, 3, 4);
        assert_ne!(img, orig);
        flip_horizontal(&mut img, 2, 3, 4);
        assert_eq!(img, orig);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img: Vec<f32> = (0..64).map(|i| (i as f32) / 64.0).collect();
        assert_eq!(rotate_nearest(&img, 1, 8, 8, 0.0), img);
    }

    #[test]
    fn augment_preserves_shape_and_range() {
        let mut rng = Rng::from_seed(8);
        let batch = Tensor::new(vec![5, 1, 8, 8], (0..320).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap();
        let out = augment_batch(&batch, &AugmentConfig::default(), &mut rng);
        assert_eq!(out.dims(), batch.dims());
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
