use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::resample::{from_f64_vec, to_f64_vec};
use crate::error::{Error, Result};

/// Gaussian blur parameters. The kernel size defaults to `2·ceil(3σ)+1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub sigma: f64,
    pub kernel_size: usize,
}

impl GaussianSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Contract(format!("blur sigma must be > 0, got {sigma}")));
        }
        Ok(Self {
            sigma,
            kernel_size: 2 * (3.0 * sigma).ceil() as usize + 1,
        })
    }

    pub fn with_kernel_size(sigma: f64, kernel_size: usize) -> Result<Self> {
        let spec = Self { sigma, kernel_size };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Contract(format!(
                "blur sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Contract(format!(
                "blur kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Normalized 1-D kernel, `k[t] ∝ exp(−t²/(2σ²))` for `t` in `[−r, r]`.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.kernel_size / 2) as i64;
        let raw: Vec<f64> = (-r..=r)
            .map(|t| (-((t * t) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    j as usize
}

/// Separable Gaussian blur (rows, then columns) with reflect padding.
/// Output shape equals input shape.
pub fn gaussian_blur(x: &Tensor, spec: &GaussianSpec) -> Result<Tensor> {
    spec.validate()?;
    let (b, c, h, w) = x.dims4()?;
    if spec.kernel_size > h.min(w) {
        return Err(Error::Contract(format!(
            "blur kernel size {} exceeds image size {h}x{w}",
            spec.kernel_size
        )));
    }
    let k = spec.kernel();
    let r = (k.len() / 2) as isize;
    let src = to_f64_vec(x)?;
    let mut out = Vec::with_capacity(src.len());
    let mut tmp = vec![0.0; h * w];
    for plane in src.chunks_exact(h * w) {
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for xx in 0..w {
                tmp[y * w + xx] = k
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * row[reflect(xx as isize + t as isize - r, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for xx in 0..w {
                out.push(
                    k.iter()
                        .enumerate()
                        .map(|(t, kv)| kv * tmp[reflect(y as isize + t as isize - r, h) * w + xx])
                        .sum(),
                );
            }
        }
    }
    from_f64_vec(out, &[b, c, h, w], x)
}

#[cfg(test)]
mod tests {
    use candle_core::Device;

    use super::*;

    #[test]
    fn default_size_covers_three_sigma() {
        assert_eq!(GaussianSpec::new(1.5).unwrap().kernel_size, 11);
        assert_eq!(GaussianSpec::new(1.0).unwrap().kernel_size, 7);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = GaussianSpec::new(1.5).unwrap().kernel();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn non_positive_sigma_is_rejected() {
        assert!(matches!(GaussianSpec::new(0.0), Err(Error::Contract(_))));
        assert!(matches!(GaussianSpec::new(-1.0), Err(Error::Contract(_))));
        assert!(GaussianSpec::with_kernel_size(1.0, 4).is_err());
    }

    #[test]
    fn constant_image_is_unchanged() {
        let x = Tensor::full(0.3f64, (1, 3, 16, 16), &Device::Cpu).unwrap();
        let y = gaussian_blur(&x, &GaussianSpec::new(1.5).unwrap()).unwrap();
        for v in to_f64_vec(&y).unwrap() {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_larger_than_image_is_rejected() {
        let x = Tensor::zeros((1, 1, 6, 6), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(gaussian_blur(&x, &GaussianSpec::new(1.5).unwrap()).is_err());
    }
}
