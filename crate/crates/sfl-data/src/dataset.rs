//! In-memory image classification datasets and the synthetic generator.

use sfl_nn::{Rng, Tensor};

use crate::error::DataError;

/// Images in [0,1], dims (count, channels, H, W), with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u32>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u32>, n_classes: usize) -> Result<Self, DataError> {
        if images.dims().len() != 4 {
            return Err(DataError::Malformed(format!(
                "images must be (count, C, H, W), got {:?}",
                images.dims()
            )));
        }
        if images.dims()[0] != labels.len() {
            return Err(DataError::Malformed(format!(
                "{} images but {} labels",
                images.dims()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(DataError::BadLabel { label: bad, classes: n_classes });
        }
        Ok(Dataset { images, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dims of one sample: (C, H, W).
    pub fn sample_dims(&self) -> &[usize] {
        &self.images.dims()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_dims().iter().product()
    }

    /// Copy out the samples at `indices` as a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * n..(i + 1) * n]);
            labels.push(self.labels[i]);
        }
        let mut dims = vec![indices.len()];
        dims.extend_from_slice(self.sample_dims());
        Dataset {
            images: Tensor::new(dims, data).unwrap(),
            labels,
            n_classes: self.n_classes,
        }
    }

    /// Batch tensor plus labels for samples [start, start+len).
    pub fn batch(&self, start: usize, len: usize) -> (Tensor<f32>, Vec<usize>) {
        let n = self.sample_len();
        let data = self.images.data()[start * n..(start + len) * n].to_vec();
        let mut dims = vec![len];
        dims.extend_from_slice(self.sample_dims());
        let labels = self.labels[start..start + len].iter().map(|&l| l as usize).collect();
        (Tensor::new(dims, data).unwrap(), labels)
    }
}

/// Parameters of the class-conditional blob renderer. Each class is a pair
/// of Gaussian blobs at a class-specific angle; per-sample jitter, noise and
/// a random background gradient keep the task from being linearly trivial.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Rotates the whole prototype wheel; 0.5 yields prototypes disjoint
    /// from the default wheel (auxiliary-dataset analog).
    pub angle_offset: f64,
    /// Amplitude of the additive uniform pixel noise.
    pub noise: f64,
    /// Per-sample rotation jitter, degrees.
    pub jitter_deg: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn desk(classes: usize, count: usize, seed: u64) -> Self {
        SyntheticSpec {
            classes,
            count,
            height: 8,
            width: 8,
            angle_offset: 0.0,
            noise: 0.30,
            jitter_deg: 12.0,
            seed,
        }
    }
}

/// Render the synthetic dataset. Labels cycle 0..classes so per-class
/// counts differ by at most one; everything is driven by the spec seed.
pub fn synthesize(spec: &SyntheticSpec) -> Dataset {
    let (h, w) = (spec.height, spec.width);
    let scale = h.min(w) as f64;
    let radius = 0.30 * scale;
    let sigma1 = 0.16 * scale;
    let sigma2 = 0.11 * scale;
    let mut rng = Rng::from_seed(spec.seed).stream("synth");
    let mut data = Vec::with_capacity(spec.count * h * w);
    let mut labels = Vec::with_capacity(spec.count);
    let (cy0, cx0) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    for i in 0..spec.count {
        let c = i % spec.classes;
        labels.push(c as u32);
        let jitter = spec.jitter_deg.to_radians();
        let theta = std::f64::consts::TAU * (c as f64 + spec.angle_offset) / spec.classes as f64
            + rng.range_f64(-jitter, jitter);
        let cy = cy0 + rng.range_f64(-0.9, 0.9);
        let cx = cx0 + rng.range_f64(-0.9, 0.9);
        let r = radius * rng.range_f64(0.85, 1.15);
        let (b1y, b1x) = (cy - r * theta.cos(), cx + r * theta.sin());
        let theta2 = theta + 2.4;
        let (b2y, b2x) = (cy - 0.55 * r * theta2.cos(), cx + 0.55 * r * theta2.sin());
        let amp1 = rng.range_f64(0.7, 1.0);
        let amp2 = rng.range_f64(0.35, 0.55);
        let bg = rng.range_f64(0.0, 0.15);
        let (gy, gx) = (rng.range_f64(-0.1, 0.1), rng.range_f64(-0.1, 0.1));
        for py in 0..h {
            for px in 0..w {
                let d1 = (py as f64 - b1y).powi(2) + (px as f64 - b1x).powi(2);
                let d2 = (py as f64 - b2y).powi(2) + (px as f64 - b2x).powi(2);
                let mut v = amp1 * (-d1 / (2.0 * sigma1 * sigma1)).exp()
                    + amp2 * (-d2 / (2.0 * sigma2 * sigma2)).exp()
                    + bg
                    + gy * (py as f64 - cy0) / scale
                    + gx * (px as f64 - cx0) / scale
                    + spec.noise * rng.uniform_f64();
                v = v.clamp(0.0, 1.0);
                data.push(v as f32);
            }
        }
    }
    Dataset {
        images: Tensor::new(vec![spec.count, 1, h, w], data).unwrap(),
        labels,
        n_classes: spec.classes,
    }
}

/// Uniform [0,1) pixel noise; the attacker's "noise data".
pub fn uniform_noise_images(count: usize, dims: &[usize], rng: &mut Rng) -> Tensor<f32> {
    let mut all = vec![count];
    all.extend_from_slice(dims);
    let n: usize = all.iter().product();
    let data = (0..n).map(|_| rng.uniform_f32()).collect();
    Tensor::new(all, data).unwrap()
}
