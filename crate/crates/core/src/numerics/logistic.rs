use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Four-parameter logistic `a + b / (1 + exp(-(x - tau) / w))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub a: f64,
    pub b: f64,
    pub tau: f64,
    pub w: f64,
    /// Sum of squared residuals at the optimum.
    pub residual: f64,
}

impl LogisticFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a + self.b * sigmoid((x - self.tau) / self.w)
    }
}

const W_GRID: usize = 32;
const NM_MAX_ITER: usize = 2000;

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Least-squares (a, b) for fixed (tau, w); returns (a, b, sse).
fn profile(xs: &[f64], ys: &[f64], tau: f64, w: f64) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let (mut sf, mut sff, mut sy, mut sfy) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let f = sigmoid((x - tau) / w);
        sf += f;
        sff += f * f;
        sy += y;
        sfy += f * y;
    }
    let det = n * sff - sf * sf;
    let (a, b) = if det.abs() <= 1e-14 * n * sff.max(1e-300) {
        // sigmoid is (numerically) constant over the data; fit the mean
        (sy / n, 0.0)
    } else {
        let b = (n * sfy - sf * sy) / det;
        ((sy - b * sf) / n, b)
    };
    let sse = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - a - b * sigmoid((x - tau) / w);
            r * r
        })
        .sum();
    (a, b, sse)
}

/// Fits the four-parameter logistic by a coarse (tau, w) grid followed by
/// Nelder–Mead refinement over (tau, ln w), with (a, b) profiled out in
/// closed form at every evaluation. Deterministic for fixed input.
pub fn fit_logistic(xs: &[f64], ys: &[f64]) -> Result<LogisticFit> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("{} xs but {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 6 {
        return Err(Error::Input(format!("logistic fit needs at least 6 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in logistic fit data".into()));
    }
    if xs.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Input("xs must be strictly increasing".into()));
    }
    let (y_min, y_max) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    if y_max - y_min < 1e-12 {
        return Err(Error::DegenerateFit(format!("flat data (range {:.3e})", y_max - y_min)));
    }

    let x0 = xs[0];
    let x1 = *xs.last().unwrap();
    let range = x1 - x0;
    let dx = xs.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);

    let mut best = (f64::INFINITY, x0, dx);
    let n_tau = (range / dx).round() as usize;
    for i in 0..=n_tau {
        let tau = x0 + i as f64 * dx;
        for j in 0..W_GRID {
            let w = dx * (range / dx).powf(j as f64 / (W_GRID - 1) as f64);
            let (_, _, sse) = profile(xs, ys, tau, w);
            if sse < best.0 {
                best = (sse, tau, w);
            }
        }
    }

    // refinement; w is kept positive through the log parameterization and tau is
    // confined to a window around the data so flat tails cannot run away
    let w_min = dx * 1e-3;
    let w_max = range * 1e3;
    let objective = |p: [f64; 2]| -> f64 {
        let (tau, w) = (p[0], p[1].exp());
        if tau < x0 - range || tau > x1 + range || w < w_min || w > w_max {
            return f64::INFINITY;
        }
        profile(xs, ys, tau, w).2
    };
    let start = [best.1, best.2.ln()];
    let p = nelder_mead(objective, start, [0.5 * dx, 0.2]);
    let (tau, w) = if objective(p) <= best.0 { (p[0], p[1].exp()) } else { (best.1, best.2) };
    let (a, b, residual) = profile(xs, ys, tau, w);
    Ok(LogisticFit { a, b, tau, w, residual })
}

fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], step: [f64; 2]) -> [f64; 2] {
    let mut simplex = [start, [start[0] + step[0], start[1]], [start[0], start[1] + step[1]]];
    let mut values = simplex.map(&f);
    for _ in 0..NM_MAX_ITER {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = idx.map(|i| simplex[i]);
        values = idx.map(|i| values[i]);

        let size = (0..2)
            .map(|d| (simplex[1][d] - simplex[0][d]).abs().max((simplex[2][d] - simplex[0][d]).abs()))
            .fold(0.0, f64::max);
        if size < 1e-11 || (values[2] - values[0]).abs() <= 1e-15 * values[0].abs().max(1e-300) {
            break;
        }

        let centroid = [0.5 * (simplex[0][0] + simplex[1][0]), 0.5 * (simplex[0][1] + simplex[1][1])];
        let along =
            |t: f64| [centroid[0] + t * (simplex[2][0] - centroid[0]), centroid[1] + t * (simplex[2][1] - centroid[1])];

        let reflected = along(-1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] { along(-0.5) } else { along(0.5) };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = [
                        simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
                    ];
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    simplex[best]
}
