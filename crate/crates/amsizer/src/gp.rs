//! Gaussian-process surrogate over unit coordinates: Matérn-5/2 kernel,
//! constant mean, hyperparameters by marginal-likelihood maximization from
//! a fixed multi-start grid (plus an optional warm start) refined with
//! Nelder-Mead. Targets are standardized internally. Cholesky jitter
//! escalates from 1e-10 by decades up to 1e-4 before giving up.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("need at least 2 distinct training points, got {0}")]
    InsufficientData(usize),
    #[error("kernel matrix is singular even at maximum jitter")]
    SingularKernel,
    #[error("dimension mismatch: point has {got}, model has {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct GpParams {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GpConfig {
    /// Nelder-Mead iterations per start.
    pub nm_iters: usize,
    /// Extra restarts beyond the fixed grid are truncated to this count.
    pub max_starts: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            nm_iters: 60,
            max_starts: 6,
        }
    }
}

pub struct Surrogate {
    x: Vec<Vec<f64>>,
    params: GpParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    pub log_marginal_likelihood: f64,
}

fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_matrix(x: &[Vec<f64>], p: &GpParams, jitter: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let r = sq_dist(&x[i], &x[j]).sqrt() / p.lengthscale;
            let v = p.signal_variance * matern52(r);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += p.noise_variance + jitter;
    }
    k
}

/// Cholesky with escalating jitter.
fn robust_cholesky(
    x: &[Vec<f64>],
    p: &GpParams,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut jitter = 1e-10;
    while jitter <= 1e-4 {
        if let Some(chol) = Cholesky::new(kernel_matrix(x, p, jitter)) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(GpError::SingularKernel)
}

fn log_marginal(x: &[Vec<f64>], y: &DVector<f64>, p: &GpParams) -> f64 {
    let Ok((chol, _)) = robust_cholesky(x, p) else {
        return f64::NEG_INFINITY;
    };
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    let n = y.len() as f64;
    -0.5 * y.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

const THETA_LO: [f64; 3] = [-4.6, -4.6, -13.8]; // ln(1e-2), ln(1e-2), ln(1e-6)
const THETA_HI: [f64; 3] = [2.3, 4.6, 0.0]; // ln(10), ln(100), ln(1)

fn theta_to_params(theta: &[f64; 3]) -> GpParams {
    GpParams {
        lengthscale: theta[0].exp(),
        signal_variance: theta[1].exp(),
        noise_variance: theta[2].exp(),
    }
}

fn clamp_theta(theta: &mut [f64; 3]) {
    for i in 0..3 {
        theta[i] = theta[i].clamp(THETA_LO[i], THETA_HI[i]);
    }
}

/// Deterministic Nelder-Mead ascent on the log marginal likelihood.
fn nelder_mead(
    mut objective: impl FnMut(&[f64; 3]) -> f64,
    start: [f64; 3],
    iters: usize,
) -> ([f64; 3], f64) {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let push = |pt: [f64; 3], obj: &mut dyn FnMut(&[f64; 3]) -> f64| {
        let mut pt = pt;
        clamp_theta(&mut pt);
        (pt, obj(&pt))
    };
    simplex.push(push(start, &mut objective));
    for i in 0..3 {
        let mut v = start;
        v[i] += 0.5;
        simplex.push(push(v, &mut objective));
    }

    for _ in 0..iters {
        simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[3].1;
        if (best - worst).abs() < 1e-9 {
            break;
        }
        let centroid = {
            let mut c = [0.0; 3];
            for (pt, _) in &simplex[..3] {
                for i in 0..3 {
                    c[i] += pt[i] / 3.0;
                }
            }
            c
        };
        let reflect = |t: f64| {
            let mut p = [0.0; 3];
            for i in 0..3 {
                p[i] = centroid[i] + t * (centroid[i] - simplex[3].0[i]);
            }
            p
        };
        let (xr, fr) = push(reflect(1.0), &mut objective);
        if fr > simplex[0].1 {
            let (xe, fe) = push(reflect(2.0), &mut objective);
            simplex[3] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let (xc, fc) = push(reflect(-0.5), &mut objective);
            if fc > simplex[3].1 {
                simplex[3] = (xc, fc);
            } else {
                // shrink toward the best vertex
                for k in 1..4 {
                    let mut p = [0.0; 3];
                    for i in 0..3 {
                        p[i] = simplex[0].0[i] + 0.5 * (simplex[k].0[i] - simplex[0].0[i]);
                    }
                    simplex[k] = push(p, &mut objective);
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    simplex[0]
}

/// Fit on unit-coordinate points and raw objective values.
pub fn fit_surrogate(
    x: &[Vec<f64>],
    y: &[f64],
    warm_start: Option<GpParams>,
    cfg: &GpConfig,
) -> Result<Surrogate, GpError> {
    let distinct = {
        let mut seen: Vec<&Vec<f64>> = Vec::new();
        for p in x {
            if !seen.iter().any(|q| sq_dist(q, p) < 1e-24) {
                seen.push(p);
            }
        }
        seen.len()
    };
    if distinct < 2 {
        return Err(GpError::InsufficientData(distinct));
    }

    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / y.len() as f64;
    let y_scale = var.sqrt().max(1e-12);
    let y_std = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));

    let mut starts: Vec<[f64; 3]> = vec![
        [(0.3f64).ln(), 0.0, (1e-4f64).ln()],
        [(1.0f64).ln(), 0.0, (1e-4f64).ln()],
        [(0.1f64).ln(), 0.0, (1e-2f64).ln()],
        [(0.5f64).ln(), (2.0f64).ln(), (1e-6f64).ln()],
    ];
    if let Some(p) = warm_start {
        starts.insert(
            0,
            [
                p.lengthscale.ln(),
                p.signal_variance.ln(),
                p.noise_variance.ln(),
            ],
        );
    }
    starts.truncate(cfg.max_starts);

    let mut best: Option<([f64; 3], f64)> = None;
    for start in starts {
        let result = nelder_mead(|t| log_marginal(x, &y_std, &theta_to_params(t)), start, cfg.nm_iters);
        if best.as_ref().map_or(true, |(_, f)| result.1 > *f) {
            best = Some(result);
        }
    }
    let (theta, lml) = best.expect("at least one start");
    let params = theta_to_params(&theta);
    let (chol, _) = robust_cholesky(x, &params)?;
    let alpha = chol.solve(&y_std);

    Ok(Surrogate {
        x: x.to_vec(),
        params,
        chol,
        alpha,
        y_mean,
        y_scale,
        log_marginal_likelihood: lml,
    })
}

impl Surrogate {
    pub fn params(&self) -> GpParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |p| p.len())
    }

    /// Posterior mean and variance (of the latent function) at a unit point.
    pub fn posterior(&self, point: &[f64]) -> Result<(f64, f64), GpError> {
        if point.len() != self.dim() {
            return Err(GpError::DimensionMismatch {
                got: point.len(),
                expected: self.dim(),
            });
        }
        let kstar = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| {
                self.params.signal_variance
                    * matern52(sq_dist(xi, point).sqrt() / self.params.lengthscale)
            }),
        );
        let mean_std = kstar.dot(&self.alpha);
        let v = self.chol.solve(&kstar);
        let var_std = (self.params.signal_variance - kstar.dot(&v)).max(0.0);
        Ok((
            self.y_mean + self.y_scale * mean_std,
            var_std * self.y_scale * self.y_scale,
        ))
    }
}
