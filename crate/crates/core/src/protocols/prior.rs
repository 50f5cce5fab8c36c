use serde::{Deserialize, Serialize};

use crate::diffusion::GaussianMixture;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Orthonormal DCT-II basis; row `k` is frequency `k`.
pub fn dct_basis(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |k, i| {
        let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos() * norm
    })
}

/// Two-branch image prior on a square single-channel grid: a shared smooth
/// covariance with DCT spectrum `amplitude / (1 + a² + b²)^decay` and branch
/// means `±mean_amplitude` times one low-frequency DCT atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagePrior {
    pub side: usize,
    pub amplitude: f64,
    pub decay: f64,
    pub mean_amplitude: f64,
    /// Frequencies `(a, b)` of the branch atom.
    pub mean_mode: (usize, usize),
}

impl Default for ImagePrior {
    fn default() -> Self {
        Self { side: 8, amplitude: 10.0, decay: 1.0, mean_amplitude: 3.0, mean_mode: (0, 1) }
    }
}

impl ImagePrior {
    pub fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(Error::Config("prior side must be positive".into()));
        }
        if !(self.amplitude > 0.0) || !self.decay.is_finite() || !self.mean_amplitude.is_finite() {
            return Err(Error::Config(format!("invalid prior spectrum {self:?}")));
        }
        if self.mean_mode.0 >= self.side || self.mean_mode.1 >= self.side {
            return Err(Error::Config(format!("mean mode {:?} outside a {}-point basis", self.mean_mode, self.side)));
        }
        Ok(())
    }

    /// 2-D DCT atom `(a, b)` flattened row-major.
    fn atom(basis: &Matrix, a: usize, b: usize) -> Vec<f64> {
        let n = basis.rows();
        (0..n * n).map(|p| basis[(a, p / n)] * basis[(b, p % n)]).collect()
    }

    pub fn mixture(&self) -> Result<GaussianMixture> {
        self.validate()?;
        let n = self.side;
        let basis = dct_basis(n);
        let d = n * n;
        let mut c = Matrix::zeros(d, d);
        for a in 0..n {
            for b in 0..n {
                let lam = self.amplitude / (1.0 + (a * a + b * b) as f64).powf(self.decay);
                let f = Self::atom(&basis, a, b);
                for i in 0..d {
                    for j in 0..d {
                        c[(i, j)] += lam * f[i] * f[j];
                    }
                }
            }
        }
        // exact symmetry for the Cholesky factor
        let c = Matrix::from_fn(d, d, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
        let (a, b) = self.mean_mode;
        let m = Self::atom(&basis, a, b).into_iter().map(|x| self.mean_amplitude * x).collect();
        GaussianMixture::new(m, c)
    }
}

/// Unit vector along the branch mean `m`.
pub fn branch_direction(mix: &GaussianMixture) -> Result<Vec<f64>> {
    let norm = mix.mean().iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Input("mixture has coincident branches".into()));
    }
    Ok(mix.mean().iter().map(|x| x / norm).collect())
}
