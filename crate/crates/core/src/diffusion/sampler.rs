use crate::diffusion::{NoiseSchedule, ReplicaPair};
use crate::error::{Error, Result};

/// One Euler–Maruyama step of the coupled reverse SDE
///
/// ```text
/// dz^A = [f(z^A, t) + g(z^A − z^B)] dt + √β dW̄^A,   f(z, t) = −½βz − β∇log p_t(z)
/// ```
///
/// (and the mirror equation for B), integrated backwards in time. The sign of
/// `dt` is ignored: the step is always taken towards the data end, i.e. with
/// `dt = −|dt|`, which makes the coupling attract the replicas. `β` is the
/// instantaneous rate [`NoiseSchedule::rate`] at index `s`.
///
/// `score_fn(z, s)` returns `∇log p_s(z)`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_reverse_step(
    pair: &ReplicaPair,
    s: usize,
    sched: &NoiseSchedule,
    g: f64,
    score_fn: impl Fn(&[f64], usize) -> Result<Vec<f64>>,
    noise_a: &[f64],
    noise_b: &[f64],
    dt: f64,
) -> Result<ReplicaPair> {
    if !(g >= 0.0) {
        return Err(Error::Config(format!("coupling g must be >= 0, got {g}")));
    }
    if s == 0 || s > sched.steps() {
        return Err(Error::Bounds { index: s, max: sched.steps() });
    }
    let d = pair.dim();
    if noise_a.len() != d || noise_b.len() != d {
        return Err(Error::Dimension("noise length does not match the latent dimension".into()));
    }
    let h = dt.abs();
    let beta = sched.rate(s);
    let diffusion = (beta * h).sqrt();
    let score_a = score_fn(&pair.za, s)?;
    let score_b = score_fn(&pair.zb, s)?;

    let update = |z: &[f64], other: &[f64], score: &[f64], noise: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| {
                // reverse-time drift −[f + g(z − z')] evaluated with dt = −h
                let drift = 0.5 * beta * z[i] + beta * score[i] - g * (z[i] - other[i]);
                z[i] + drift * h + diffusion * noise[i]
            })
            .collect()
    };
    let next = ReplicaPair {
        za: update(&pair.za, &pair.zb, &score_a, noise_a),
        zb: update(&pair.zb, &pair.za, &score_b, noise_b),
    };
    if !next.is_finite() {
        return Err(Error::Numeric(format!("coupled SDE diverged at step {s}")));
    }
    Ok(next)
}

/// DDIM update from index `s` to `s − 1` with stochasticity `eta`.
///
/// `eta = 0` is the deterministic sampler; `eta = 1` injects the ancestral
/// (DDPM posterior) variance.
pub fn ddim_step(
    z: &[f64],
    s: usize,
    sched: &NoiseSchedule,
    eps_hat: &[f64],
    eta: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if s == 0 || s > sched.steps() {
        return Err(Error::Bounds { index: s, max: sched.steps() });
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
    }
    if eps_hat.len() != z.len() || (eta > 0.0 && noise.len() != z.len()) {
        return Err(Error::Dimension("eps_hat/noise length does not match the latent".into()));
    }
    if eps_hat.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numeric(format!("non-finite noise prediction at step {s}")));
    }
    let a_t = sched.alpha_bar(s);
    let a_prev = sched.alpha_bar(s - 1);
    let s2_t = sched.sigma2(s);
    let s2_prev = sched.sigma2(s - 1);
    let sigma_eta = if s2_t > 0.0 { eta * (s2_prev / s2_t * (1.0 - a_t / a_prev)).max(0.0).sqrt() } else { 0.0 };
    let dir = (s2_prev - sigma_eta * sigma_eta).max(0.0).sqrt();
    let sqrt_t = s2_t.sqrt();
    let ratio = (a_prev / a_t).sqrt();
    let out: Vec<f64> = (0..z.len())
        .map(|i| {
            let x0 = (z[i] - sqrt_t * eps_hat[i]) / a_t.sqrt();
            let n = if sigma_eta > 0.0 { sigma_eta * noise[i] } else { 0.0 };
            if s2_t == 0.0 {
                // noiseless transition: the state is already clean
                return ratio * z[i] + n;
            }
            a_prev.sqrt() * x0 + dir * eps_hat[i] + n
        })
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("DDIM step diverged at step {s}")));
    }
    Ok(out)
}

/// Posterior standard deviation used by [`ddim_step`] at `eta`.
pub fn ddim_sigma(sched: &NoiseSchedule, s: usize, eta: f64) -> f64 {
    let s2_t = sched.sigma2(s);
    if s2_t == 0.0 {
        return 0.0;
    }
    eta * (sched.sigma2(s - 1) / s2_t * (1.0 - sched.alpha_bar(s) / sched.alpha_bar(s - 1))).max(0.0).sqrt()
}

/// Latent-space coupling for backends without internal replica mixing: the
/// exact flow of `dv = −2g v dt` over a time `dt_c` applied to the difference
/// mode, leaving the common mode untouched.
pub fn couple_latents(pair: &mut ReplicaPair, g: f64, dt_c: f64) {
    if g == 0.0 {
        return;
    }
    let damp = (-2.0 * g * dt_c).exp();
    for (a, b) in pair.za.iter_mut().zip(pair.zb.iter_mut()) {
        let mean = 0.5 * (*a + *b);
        let half = 0.5 * (*a - *b) * damp;
        *a = mean + half;
        *b = mean - half;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_vp_schedule;
    use crate::numerics::rng::gaussian_stream;

    fn linear_score(z: &[f64], _s: usize) -> Result<Vec<f64>> {
        Ok(z.iter().map(|x| -x).collect())
    }

    #[test]
    fn symmetric_state_preserved_at_g0() {
        let sched = make_vp_schedule(10, 1e-3, 0.2).unwrap();
        let z = gaussian_stream(1, &[0], 5);
        let pair = ReplicaPair::new(z.clone(), z).unwrap();
        let n = gaussian_stream(1, &[1], 5);
        let next = coupled_reverse_step(&pair, 5, &sched, 0.0, linear_score, &n, &n, -0.1).unwrap();
        assert_eq!(next.za, next.zb);
    }

    #[test]
    fn exchange_symmetry() {
        let sched = make_vp_schedule(10, 1e-3, 0.2).unwrap();
        let pair = ReplicaPair::new(gaussian_stream(2, &[0], 6), gaussian_stream(2, &[1], 6)).unwrap();
        let na = gaussian_stream(2, &[2], 6);
        let nb = gaussian_stream(2, &[3], 6);
        let fwd = coupled_reverse_step(&pair, 7, &sched, 0.6, linear_score, &na, &nb, -0.1).unwrap();
        let bwd = coupled_reverse_step(&pair.swapped(), 7, &sched, 0.6, linear_score, &nb, &na, -0.1).unwrap();
        assert_eq!(fwd, bwd.swapped());
    }

    #[test]
    fn v_mode_gain_matches_linear_dynamics() {
        let sched = make_vp_schedule(10, 1e-3, 0.2).unwrap();
        let pair = ReplicaPair::new(gaussian_stream(3, &[0], 4), gaussian_stream(3, &[1], 4)).unwrap();
        let zero = vec![0.0; 4];
        let dt = -0.01;
        for &g in &[0.0, 0.3, 1.0] {
            let next = coupled_reverse_step(&pair, 4, &sched, g, linear_score, &zero, &zero, dt).unwrap();
            let beta = sched.rate(4);
            let (_, v0) = pair.uv();
            let (_, v1) = next.uv();
            for (a, b) in v0.iter().zip(&v1) {
                let predicted = (-0.5 * beta + beta + 2.0 * g) * dt * a;
                assert!((b - a - predicted).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ddim_deterministic_inversion() {
        let sched = make_vp_schedule(2, 0.1, 0.3).unwrap();
        let z0 = gaussian_stream(4, &[0], 8);
        let eps = gaussian_stream(4, &[1], 8);
        let a = sched.alpha(1);
        let s = sched.sigma(1);
        let z1: Vec<f64> = z0.iter().zip(&eps).map(|(x, e)| a * x + s * e).collect();
        let back = ddim_step(&z1, 1, &sched, &eps, 0.0, &[]).unwrap();
        for (b, x) in back.iter().zip(&z0) {
            assert!((b - x).abs() < 1e-10);
        }
        // and from s=2 to the s=1 marginal
        let z2: Vec<f64> = z0.iter().zip(&eps).map(|(x, e)| sched.alpha(2) * x + sched.sigma(2) * e).collect();
        let mid = ddim_step(&z2, 2, &sched, &eps, 0.0, &[]).unwrap();
        for ((m, x), e) in mid.iter().zip(&z0).zip(&eps) {
            assert!((m - (a * x + s * e)).abs() < 1e-10);
        }
        assert_eq!(ddim_step(&z2, 2, &sched, &eps, 0.0, &[]).unwrap(), mid);
    }

    #[test]
    fn ddim_ancestral_variance() {
        let sched = make_vp_schedule(20, 1e-3, 0.2).unwrap();
        let s = 10;
        let z = gaussian_stream(5, &[0], 3);
        let zero = vec![0.0; 3];
        let noise = gaussian_stream(5, &[1], 3);
        let out = ddim_step(&z, s, &sched, &zero, 1.0, &noise).unwrap();
        let ratio = (sched.alpha_bar(s - 1) / sched.alpha_bar(s)).sqrt();
        let posterior_var = sched.sigma2(s - 1) / sched.sigma2(s) * sched.beta(s);
        let sig = ddim_sigma(&sched, s, 1.0);
        assert!((sig * sig - posterior_var).abs() < 1e-15);
        for i in 0..3 {
            assert!((out[i] - ratio * z[i] - sig * noise[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ddim_bounds() {
        let sched = make_vp_schedule(4, 1e-3, 0.2).unwrap();
        assert!(matches!(ddim_step(&[0.0], 0, &sched, &[0.0], 0.0, &[]), Err(Error::Bounds { .. })));
        assert!(matches!(ddim_step(&[0.0], 5, &sched, &[0.0], 0.0, &[]), Err(Error::Bounds { .. })));
    }

    #[test]
    fn latent_coupling_damps_difference_only() {
        let mut pair = ReplicaPair::new(vec![1.0, 3.0], vec![-1.0, 1.0]).unwrap();
        let (u0, v0) = pair.uv();
        couple_latents(&mut pair, 0.5, 0.2);
        let (u1, v1) = pair.uv();
        for i in 0..2 {
            assert!((u1[i] - u0[i]).abs() < 1e-15);
            assert!((v1[i] - v0[i] * (-0.2f64).exp()).abs() < 1e-15);
        }
    }
}
