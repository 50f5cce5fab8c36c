use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, sym_eig, Matrix};

/// Gram eigenvalues below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Fixed principal modes of the step-0 difference stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBasis {
    pub layer: usize,
    /// Unit vectors `r_k`, leading mode first.
    pub vectors: Vec<Vec<f64>>,
    /// `λ_k⁽⁰⁾`, eigenvalues of `V₀ᵀV₀/M`, descending.
    pub eigenvalues: Vec<f64>,
    /// `‖V₀ r_k‖²`, the normalisation of every later energy.
    pub initial_energy: Vec<f64>,
    pub seeds: usize,
    pub dim: usize,
}

/// Eigenpairs of `V Vᵀ / M` (descending) and the count above [`RANK_TOL`].
pub fn gram_spectrum(v: &Matrix) -> Result<(crate::numerics::SymEigen, usize)> {
    let m = v.rows();
    if m == 0 || v.cols() == 0 {
        return Err(Error::Input("empty difference stack".into()));
    }
    let gram = v.matmul_transposed(v)?.scale(1.0 / m as f64);
    let eig = sym_eig(&gram)?;
    let top = eig.values[0];
    let usable = if top > 0.0 { eig.values.iter().take_while(|&&l| l > RANK_TOL * top).count() } else { 0 };
    Ok((eig, usable))
}

/// Builds the leading `k` modes of the row stack `v0` (one √2-scaled replica
/// difference per seed) through the dual Gram matrix, which is `M×M` instead
/// of `D×D`.
pub fn build_mode_basis(v0: &Matrix, k: usize, layer: usize) -> Result<ModeBasis> {
    let (m, d) = v0.shape();
    if k == 0 || k > m.min(d) {
        return Err(Error::Config(format!("cannot extract {k} modes from a {m}x{d} stack")));
    }
    let (eig, usable) = gram_spectrum(v0)?;
    if usable < k {
        return Err(Error::Rank { requested: k, usable });
    }
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut r = v0.matvec_transposed(&eig.vector(j))?;
        // re-orthogonalise against earlier modes; only rounding is removed
        for prev in &vectors {
            let c = dot(&r, prev);
            r.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
        }
        let n = dot(&r, &r).sqrt();
        if !(n > 0.0) {
            return Err(Error::Rank { requested: k, usable: j });
        }
        r.iter_mut().for_each(|x| *x /= n);
        vectors.push(r);
    }
    let initial_energy = vectors.iter().map(|r| squared_projection(v0, r)).collect::<Result<Vec<_>>>()?;
    Ok(ModeBasis { layer, vectors, eigenvalues: eig.values[..k].to_vec(), initial_energy, seeds: m, dim: d })
}

fn squared_projection(v: &Matrix, r: &[f64]) -> Result<f64> {
    Ok(v.matvec(r)?.iter().map(|x| x * x).sum())
}

impl ModeBasis {
    pub fn modes(&self) -> usize {
        self.vectors.len()
    }

    fn check(&self, vs: &Matrix, k: usize) -> Result<()> {
        if vs.cols() != self.dim {
            return Err(Error::Dimension(format!("stack has {} columns, basis dimension is {}", vs.cols(), self.dim)));
        }
        if k >= self.modes() {
            return Err(Error::Bounds { index: k, max: self.modes() - 1 });
        }
        if !(self.initial_energy[k] > 0.0) {
            return Err(Error::Domain(format!("mode {k} has zero initial energy")));
        }
        Ok(())
    }

    /// Per-seed projections `V_s r_k`, one row per seed.
    pub fn project(&self, vs: &Matrix) -> Result<Matrix> {
        let rows: Result<Vec<Vec<f64>>> =
            vs.iter_rows().map(|row| Ok(self.vectors.iter().map(|r| dot(row, r)).collect())).collect();
        Matrix::from_rows(&rows?)
    }
}

/// `λ_k(s) = ‖V_s r_k‖² / ‖V₀ r_k‖²` (mode index `k` is 0-based).
pub fn mode_energy(vs: &Matrix, basis: &ModeBasis, k: usize) -> Result<f64> {
    basis.check(vs, k)?;
    Ok(squared_projection(vs, &basis.vectors[k])? / basis.initial_energy[k])
}

/// The same energy through the empirical covariance, `r_kᵀ C_s r_k / r_kᵀ C₀ r_k`
/// with `C = VᵀV/M`. Costs a `D×D` product; meant for cross-checks.
pub fn mode_energy_covariance(vs: &Matrix, basis: &ModeBasis, k: usize) -> Result<f64> {
    basis.check(vs, k)?;
    let cov = vs.transpose().matmul(vs)?.scale(1.0 / vs.rows() as f64);
    let r = &basis.vectors[k];
    let c0 = basis.initial_energy[k] / basis.seeds as f64;
    Ok(dot(r, &cov.matvec(r)?) / c0)
}
