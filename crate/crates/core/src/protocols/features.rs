//! Toy image features: average pooling, upsampling, the branch-aware feature
//! map φ, and the coarse/fine split of a pair discrepancy.

use serde::{Deserialize, Serialize};

use crate::diffusion::GaussianMixture;
use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::protocols::prior::branch_direction;

/// Channel-major image layout, `x[c·H·W + i·W + j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn square(side: usize) -> Self {
        Self { channels: 1, height: side, width: side }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::Dimension(format!("image has {} values, shape {self:?} needs {}", x.len(), self.len())));
        }
        Ok(())
    }

    fn check_pool(&self, pool: usize) -> Result<()> {
        if pool == 0 || !self.height.is_multiple_of(pool) || !self.width.is_multiple_of(pool) {
            return Err(Error::Config(format!("pool size {pool} does not divide {}x{}", self.height, self.width)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    /// Half-pixel-centred bilinear interpolation with edge clamping.
    #[default]
    Bilinear,
    /// Piecewise-constant; makes `U∘P` an orthogonal projection.
    Nearest,
}

/// Non-overlapping `pool×pool` average pooling per channel.
pub fn avg_pool(x: &[f64], shape: ImageShape, pool: usize) -> Result<Vec<f64>> {
    shape.check(x)?;
    shape.check_pool(pool)?;
    let (hc, wc) = (shape.height / pool, shape.width / pool);
    let area = (pool * pool) as f64;
    let mut out = vec![0.0; shape.channels * hc * wc];
    for c in 0..shape.channels {
        for i in 0..shape.height {
            for j in 0..shape.width {
                out[c * hc * wc + (i / pool) * wc + j / pool] +=
                    x[c * shape.height * shape.width + i * shape.width + j];
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

/// Source index and weight pair for bilinear sampling along one axis.
fn bilinear_taps(i: usize, factor: usize, n_coarse: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_coarse - 1);
    let i1 = (i0 + 1).min(n_coarse - 1);
    (i0, i1, src - i0 as f64)
}

/// Upsamples a pooled image back to `shape`.
pub fn upsample(coarse: &[f64], shape: ImageShape, pool: usize, mode: Upsample) -> Result<Vec<f64>> {
    shape.check_pool(pool)?;
    let (hc, wc) = (shape.height / pool, shape.width / pool);
    if coarse.len() != shape.channels * hc * wc {
        return Err(Error::Dimension(format!(
            "coarse image has {} values, expected {}",
            coarse.len(),
            shape.channels * hc * wc
        )));
    }
    let mut out = vec![0.0; shape.len()];
    for c in 0..shape.channels {
        let src = &coarse[c * hc * wc..(c + 1) * hc * wc];
        for i in 0..shape.height {
            for j in 0..shape.width {
                out[c * shape.height * shape.width + i * shape.width + j] = match mode {
                    Upsample::Nearest => src[(i / pool) * wc + j / pool],
                    Upsample::Bilinear => {
                        let (i0, i1, ti) = bilinear_taps(i, pool, hc);
                        let (j0, j1, tj) = bilinear_taps(j, pool, wc);
                        let top = (1.0 - tj) * src[i0 * wc + j0] + tj * src[i0 * wc + j1];
                        let bot = (1.0 - tj) * src[i1 * wc + j0] + tj * src[i1 * wc + j1];
                        (1.0 - ti) * top + ti * bot
                    }
                };
            }
        }
    }
    Ok(out)
}

/// `(d_low, d_high)`: squared distance of the pooled images and of the
/// fine residuals `x − U P x`.
pub fn scale_decomposition(
    xa: &[f64],
    xb: &[f64],
    shape: ImageShape,
    pool: usize,
    mode: Upsample,
) -> Result<(f64, f64)> {
    let (pa, pb) = (avg_pool(xa, shape, pool)?, avg_pool(xb, shape, pool)?);
    shape.check(xb)?;
    let d_low = pa.iter().zip(&pb).map(|(a, b)| (a - b).powi(2)).sum();
    let (ua, ub) = (upsample(&pa, shape, pool, mode)?, upsample(&pb, shape, pool, mode)?);
    let d_high = (0..shape.len()).map(|i| ((xa[i] - ua[i]) - (xb[i] - ub[i])).powi(2)).sum();
    Ok((d_low, d_high))
}

/// φ(x) = centre([x·m̂, P x]): the branch coordinate plus the pooled image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub shape: ImageShape,
    pub pool: usize,
    pub branch: Vec<f64>,
}

impl FeatureMap {
    pub fn new(mix: &GaussianMixture, shape: ImageShape, pool: usize) -> Result<Self> {
        if mix.dim() != shape.len() {
            return Err(Error::Dimension(format!("mixture dimension {} for image shape {shape:?}", mix.dim())));
        }
        shape.check_pool(pool)?;
        Ok(Self { shape, pool, branch: branch_direction(mix)? })
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut f = vec![dot(x, &self.branch)];
        f.extend(avg_pool(x, self.shape, self.pool)?);
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        f.iter_mut().for_each(|v| *v -= mean);
        Ok(f)
    }
}

/// Cosine similarity of φ(xa) and φ(xb); `None` when either feature vector vanishes.
pub fn feature_agreement(xa: &[f64], xb: &[f64], phi: &FeatureMap) -> Result<Option<f64>> {
    let (fa, fb) = (phi.features(xa)?, phi.features(xb)?);
    let (na, nb) = (dot(&fa, &fa).sqrt(), dot(&fb, &fb).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Ok(None);
    }
    Ok(Some((dot(&fa, &fb) / (na * nb)).clamp(-1.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::gaussian_stream;
    use crate::protocols::prior::ImagePrior;

    #[test]
    fn constant_offset_is_coarse() {
        let shape = ImageShape::square(4);
        let xa = gaussian_stream(1, &[], 16);
        let kappa = 0.7;
        let xb: Vec<f64> = xa.iter().map(|x| x + kappa).collect();
        for mode in [Upsample::Bilinear, Upsample::Nearest] {
            let (lo, hi) = scale_decomposition(&xa, &xb, shape, 2, mode).unwrap();
            assert!((lo - 4.0 * kappa * kappa).abs() < 1e-12);
            assert!(hi < 1e-24);
        }
    }

    #[test]
    fn checkerboard_is_fine() {
        let shape = ImageShape::square(4);
        let xa = gaussian_stream(2, &[], 16);
        let xb: Vec<f64> = (0..16).map(|p| xa[p] + if (p / 4 + p % 4) % 2 == 0 { 0.3 } else { -0.3 }).collect();
        let (lo, hi) = scale_decomposition(&xa, &xb, shape, 2, Upsample::Bilinear).unwrap();
        assert!(lo < 1e-24);
        assert!((hi - 16.0 * 0.09).abs() < 1e-12);
        assert_eq!(scale_decomposition(&xa, &xa, shape, 2, Upsample::Bilinear).unwrap(), (0.0, 0.0));
        assert!(matches!(scale_decomposition(&xa, &xb, shape, 3, Upsample::Bilinear), Err(Error::Config(_))));
    }

    #[test]
    fn bilinear_matches_hand_values() {
        // 2x2 -> 4x4, half-pixel centres: weights 1, 3/4, 1/4, 1 along each axis
        let shape = ImageShape::square(4);
        let up = upsample(&[0.0, 4.0, 8.0, 12.0], shape, 2, Upsample::Bilinear).unwrap();
        assert_eq!(&up[..4], &[0.0, 1.0, 3.0, 4.0]);
        assert_eq!(&up[4..8], &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(&up[12..], &[8.0, 9.0, 11.0, 12.0]);
    }

    #[test]
    fn agreement_limits() {
        let mix = ImagePrior::default().mixture().unwrap();
        let phi = FeatureMap::new(&mix, ImageShape::square(8), 2).unwrap();
        let x = gaussian_stream(3, &[], 64);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((feature_agreement(&x, &x, &phi).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!((feature_agreement(&x, &neg, &phi).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(feature_agreement(&x, &[0.0; 64], &phi).unwrap(), None);
    }
}
