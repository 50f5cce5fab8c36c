use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::gaussian_vec;
use crate::numerics::{dot, Cholesky, Matrix};

/// Symmetric two-component mixture `½N(m, C) + ½N(−m, C)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct GaussianMixture {
    m: Vec<f64>,
    c: Matrix,
    chol: Cholesky,
    precision: Matrix,
    /// C⁻¹m
    pm: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMixture {
    m: Vec<f64>,
    c: Matrix,
}

impl TryFrom<RawMixture> for GaussianMixture {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        GaussianMixture::new(raw.m, raw.c)
    }
}

impl From<GaussianMixture> for RawMixture {
    fn from(mix: GaussianMixture) -> Self {
        RawMixture { m: mix.m, c: mix.c }
    }
}

impl GaussianMixture {
    pub fn new(m: Vec<f64>, c: Matrix) -> Result<Self> {
        if !c.is_square() || c.rows() != m.len() {
            return Err(Error::Dimension(format!("mean of length {} with covariance {:?}", m.len(), c.shape())));
        }
        if c.relative_asymmetry() > 1e-12 {
            return Err(Error::LinearAlgebra("covariance is not symmetric".into()));
        }
        let chol = Cholesky::new(&c)?;
        let precision = chol.inverse()?;
        let pm = precision.matvec(&m)?;
        Ok(Self { m, c, chol, precision, pm })
    }

    pub fn diagonal(m: Vec<f64>, diag: &[f64]) -> Result<Self> {
        Self::new(m, Matrix::diag(diag))
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.m
    }

    pub fn cov(&self) -> &Matrix {
        &self.c
    }

    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    /// `C⁻¹m`.
    pub fn precision_mean(&self) -> &[f64] {
        &self.pm
    }

    /// `∇ log p(h) = −C⁻¹h + C⁻¹m·tanh(mᵀC⁻¹h)`.
    pub fn score(&self, h: &[f64]) -> Result<Vec<f64>> {
        let ph = self.precision.matvec(h)?;
        let t = dot(&self.pm, h).tanh();
        Ok(ph.iter().zip(&self.pm).map(|(p, w)| -p + w * t).collect())
    }

    /// `Λ_eff = C⁻¹ − C⁻¹mmᵀC⁻¹`, the negated score Jacobian at `h = 0`.
    pub fn effective_precision(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(d, d, |i, j| self.precision[(i, j)] - self.pm[i] * self.pm[j])
    }

    pub fn density(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.dim() {
            return Err(Error::Dimension(format!("point of length {} for {}-d mixture", h.len(), self.dim())));
        }
        let d = self.dim() as f64;
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.chol.log_det());
        let quad = |sign: f64| {
            let r: Vec<f64> = h.iter().zip(&self.m).map(|(x, m)| x - sign * m).collect();
            dot(&r, &self.precision.matvec(&r).expect("dimension checked"))
        };
        Ok(0.5 * (log_norm - 0.5 * quad(1.0)).exp() + 0.5 * (log_norm - 0.5 * quad(-1.0)).exp())
    }

    /// Marginal of the forward process `α z₀ + σ ε` with `α² = alpha_bar`:
    /// means scale by `α`, covariance becomes `ᾱC + (1−ᾱ)I`.
    pub fn forward(&self, alpha_bar: f64) -> Result<Self> {
        let a = alpha_bar.sqrt();
        let d = self.dim();
        let c = Matrix::from_fn(d, d, |i, j| alpha_bar * self.c[(i, j)] + if i == j { 1.0 - alpha_bar } else { 0.0 });
        Self::new(self.m.iter().map(|x| a * x).collect(), c)
    }

    /// Draws a sample and its branch label (+1 or −1).
    pub fn sample(&self, rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let label = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let xi = gaussian_vec(rng, self.dim());
        let l = self.chol.factor();
        let x = (0..self.dim()).map(|i| label * self.m[i] + dot(&l.row(i)[..=i], &xi[..=i])).collect();
        (x, label)
    }
}

pub fn mixture_score(mix: &GaussianMixture, h: &[f64]) -> Result<Vec<f64>> {
    mix.score(h)
}

pub fn effective_precision(mix: &GaussianMixture) -> Matrix {
    mix.effective_precision()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::rng_for;
    use rand_distr::{Distribution, StandardNormal};

    fn random_mixture(d: usize, seed: u64) -> GaussianMixture {
        let mut rng = rng_for(seed, &[]);
        let b = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let c = b.matmul_transposed(&b).unwrap().add(&Matrix::identity(d)).unwrap();
        let c = Matrix::from_fn(d, d, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
        GaussianMixture::new(gaussian_vec(&mut rng, d), c).unwrap()
    }

    #[test]
    fn score_examples() {
        let mix = random_mixture(3, 1);
        assert!(mix.score(&[0.0; 3]).unwrap().iter().all(|&x| x == 0.0));
        let single = GaussianMixture::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(single.score(&[1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        let scalar = GaussianMixture::diagonal(vec![1.0], &[1.0]).unwrap();
        let s = scalar.score(&[0.5]).unwrap()[0];
        assert!((s - (-0.5 + 0.5f64.tanh())).abs() < 1e-15);
        assert!((s + 0.037883).abs() < 1e-6);
    }

    #[test]
    fn score_matches_log_density_gradient() {
        let mix = random_mixture(2, 5);
        let h = [0.4, -0.3];
        let s = mix.score(&h).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            let mut hp = h;
            let mut hm = h;
            hp[i] += eps;
            hm[i] -= eps;
            let fd = (mix.density(&hp).unwrap().ln() - mix.density(&hm).unwrap().ln()) / (2.0 * eps);
            assert!((fd - s[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn effective_precision_is_negated_jacobian() {
        let scalar = GaussianMixture::diagonal(vec![1.0], &[1.0]).unwrap();
        assert_eq!(scalar.effective_precision()[(0, 0)], 0.0);
        let zero_m = GaussianMixture::diagonal(vec![0.0, 0.0], &[2.0, 4.0]).unwrap();
        assert_eq!(zero_m.effective_precision(), *zero_m.precision());

        for seed in 0..5 {
            let mix = random_mixture(4, seed);
            let lam = mix.effective_precision();
            assert!(lam.relative_asymmetry() == 0.0);
            let eps = 1e-5;
            for j in 0..4 {
                let mut hp = vec![0.0; 4];
                let mut hm = vec![0.0; 4];
                hp[j] = eps;
                hm[j] = -eps;
                let sp = mix.score(&hp).unwrap();
                let sm = mix.score(&hm).unwrap();
                for i in 0..4 {
                    let fd = (sp[i] - sm[i]) / (2.0 * eps);
                    assert!((fd + lam[(i, j)]).abs() < 1e-6, "seed {seed} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn density_integrates_to_one_in_2d() {
        let c = Matrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.3]]).unwrap();
        let mix = GaussianMixture::new(vec![1.0, -0.5], c).unwrap();
        let (lo, hi, n) = (-6.0, 6.0, 600);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                total += mix.density(&x).unwrap() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn singular_covariance_rejected() {
        let c = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(GaussianMixture::new(vec![0.0, 0.0], c), Err(Error::LinearAlgebra(_))));
    }

    #[test]
    fn serde_round_trip() {
        let mix = random_mixture(3, 9);
        let back: GaussianMixture = serde_json::from_str(&serde_json::to_string(&mix).unwrap()).unwrap();
        assert_eq!(back.mean(), mix.mean());
        assert_eq!(back.cov(), mix.cov());
    }
}
