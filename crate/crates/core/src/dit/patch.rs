use crate::dit::DitConfig;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Token matrix (`N × width`), one row per token.
pub type TokenSequence = Matrix;

/// Splits a `(C, H, W)` latent (row-major, channel first) into non-overlapping
/// `p × p` patches. Tokens are ordered row-major over the patch grid; each token
/// lists its values in `(c, i, j)` order.
pub fn patchify(latent: &[f64], cfg: &DitConfig) -> Result<TokenSequence> {
    let (c, h, w, p) = (cfg.channels, cfg.height, cfg.width, cfg.patch);
    if h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!("patch size {p} does not divide {h}x{w}")));
    }
    if latent.len() != c * h * w {
        return Err(Error::Dimension(format!("latent of length {} for shape ({c},{h},{w})", latent.len())));
    }
    let (gh, gw) = (h / p, w / p);
    let mut out = Matrix::zeros(gh * gw, c * p * p);
    for t in 0..gh * gw {
        let (pi, pj) = (t / gw, t % gw);
        let token = out.row_mut(t);
        let mut k = 0;
        for ch in 0..c {
            for i in 0..p {
                for j in 0..p {
                    token[k] = latent[ch * h * w + (pi * p + i) * w + pj * p + j];
                    k += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &TokenSequence, cfg: &DitConfig) -> Result<Vec<f64>> {
    let (c, h, w, p) = (cfg.channels, cfg.height, cfg.width, cfg.patch);
    let (gh, gw) = (h / p, w / p);
    if tokens.shape() != (gh * gw, c * p * p) {
        return Err(Error::Dimension(format!("token matrix {:?} for a ({c},{h},{w}) latent", tokens.shape())));
    }
    let mut latent = vec![0.0; c * h * w];
    for t in 0..gh * gw {
        let (pi, pj) = (t / gw, t % gw);
        let token = tokens.row(t);
        let mut k = 0;
        for ch in 0..c {
            for i in 0..p {
                for j in 0..p {
                    latent[ch * h * w + (pi * p + i) * w + pj * p + j] = token[k];
                    k += 1;
                }
            }
        }
    }
    Ok(latent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::gaussian_stream;

    #[test]
    fn token_counts() {
        let cfg = DitConfig::default();
        let t = patchify(&vec![0.0; 64], &cfg).unwrap();
        assert_eq!(t.shape(), (16, 4));
        let single = DitConfig { height: 2, width: 2, ..DitConfig::default() };
        assert_eq!(patchify(&[1.0, 2.0, 3.0, 4.0], &single).unwrap().rows(), 1);
    }

    #[test]
    fn round_trip() {
        let cfg = DitConfig { channels: 2, height: 4, width: 6, ..DitConfig::default() };
        let z = gaussian_stream(0, &[], cfg.latent_dim());
        assert_eq!(unpatchify(&patchify(&z, &cfg).unwrap(), &cfg).unwrap(), z);
    }

    #[test]
    fn patch_contents() {
        let cfg = DitConfig { height: 4, width: 4, ..DitConfig::default() };
        let z: Vec<f64> = (0..16).map(f64::from).collect();
        let t = patchify(&z, &cfg).unwrap();
        assert_eq!(t.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(t.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn indivisible_is_config_error() {
        let cfg = DitConfig { patch: 3, ..DitConfig::default() };
        assert!(matches!(patchify(&vec![0.0; 64], &cfg), Err(Error::Config(_))));
    }
}
