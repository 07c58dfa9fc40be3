use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::CoefficientField;
use crate::covariance::{covariance_matrix, Drift};
use crate::error::{Error, Result};
use crate::grid::{Grid, GriddedFunction};
use crate::kernel::GapKernel;
use crate::linalg::Matrix;
use crate::sampling::{stream_rng, uniform};
use crate::scalar::Real;
use crate::structure::{ModelStructure, SpaceTimePoint};

use super::SolutionField;

const CHUNK: usize = 1024;

/// Empirical moments of `X(t)` with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub mean_stderr: Vec<f64>,
    pub cov_stderr: Vec<Vec<f64>>,
    pub paths: usize,
    pub steps: usize,
}

impl MomentReport {
    /// Largest `|empirical - expected| / stderr` over mean and covariance
    /// entries.
    pub fn max_z_score(&self, mean: &[f64], cov: &Matrix<f64>) -> f64 {
        let n = self.mean.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            worst = worst.max(z(self.mean[i], mean[i], self.mean_stderr[i]));
            for j in 0..n {
                worst = worst.max(z(self.cov[i][j], cov[(i, j)], self.cov_stderr[i][j]));
            }
        }
        worst
    }
}

fn z(got: f64, want: f64, se: f64) -> f64 {
    let d = (got - want).abs();
    if se > 0.0 {
        d / se
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Euler–Maruyama for `dX = -BᵀX ds + √2 σ dW`, `σσᵀ = A₀`, from the pole
/// position at the pole time to `t`. Paths run in chunks of 1024, each on
/// its own seeded stream.
pub fn mc_sample_moments<T: Real>(
    model: &ModelStructure<T>,
    pole: &SpaceTimePoint<T>,
    t: T,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<MomentReport> {
    let n = model.dim();
    let m0 = model.m0();
    if pole.dim() != n {
        return Err(Error::DimensionMismatch(format!("pole has {} coordinates, N = {n}", pole.dim())));
    }
    let span = (t - pole.t).to_f64_lossy();
    if !(span > 0.0) {
        return Err(Error::NonpositiveTime(span));
    }
    if n_paths < 10_000 || n_steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10^4 paths and one step, got {n_paths} and {n_steps}"
        )));
    }
    let b: Matrix<f64> = model.b().cast();
    let sigma = model.a0().cast::<f64>().block(0, 0, m0, m0).cholesky(0.0)?;
    let x0: Vec<f64> = pole.x.iter().map(|v| v.to_f64_lossy()).collect();
    let h = span / n_steps as f64;
    let noise = (2.0 * h).sqrt();

    let chunks = n_paths.div_ceil(CHUNK);
    let finals: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = CHUNK.min(n_paths - c * CHUNK);
            let mut out = Vec::with_capacity(count * n);
            let mut x = vec![0.0; n];
            let mut drift = vec![0.0; n];
            let mut dw = vec![0.0; m0];
            for _ in 0..count {
                x.copy_from_slice(&x0);
                for _ in 0..n_steps {
                    for (j, d) in drift.iter_mut().enumerate() {
                        *d = -(0..n).map(|i| b[(i, j)] * x[i]).sum::<f64>();
                    }
                    for w in dw.iter_mut() {
                        *w = StandardNormal.sample(&mut rng);
                    }
                    for j in 0..n {
                        x[j] += h * drift[j];
                    }
                    for i in 0..m0 {
                        x[i] += noise * (0..=i).map(|k| sigma[(i, k)] * dw[k]).sum::<f64>();
                    }
                }
                out.extend_from_slice(&x);
            }
            out
        })
        .collect();
    let samples: Vec<&[f64]> = finals.iter().flat_map(|c| c.chunks(n)).collect();
    let np = samples.len() as f64;

    let mut mean = vec![0.0; n];
    for s in &samples {
        for i in 0..n {
            mean[i] += s[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= np);
    let mut cov = vec![vec![0.0; n]; n];
    let mut fourth = vec![vec![0.0; n]; n];
    for s in &samples {
        for i in 0..n {
            for j in 0..n {
                let p = (s[i] - mean[i]) * (s[j] - mean[j]);
                cov[i][j] += p;
                fourth[i][j] += p * p;
            }
        }
    }
    let mut cov_stderr = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let c = cov[i][j] / np;
            let var_p = (fourth[i][j] / np - c * c).max(0.0);
            cov_stderr[i][j] = (var_p / np).sqrt();
            cov[i][j] = cov[i][j] / (np - 1.0);
        }
    }
    let mean_stderr = (0..n).map(|i| (cov[i][i] / np).sqrt()).collect();
    Ok(MomentReport {
        mean,
        cov,
        mean_stderr,
        cov_stderr,
        paths: n_paths,
        steps: n_steps,
    })
}

/// `u(x, t) = Σ_ξ Γ((x, t), (ξ, t₀)) u₀(ξ) w_ξ` over the nodes of the
/// single-slice `initial`, with trapezoid weights `w_ξ`.
pub fn convolution_reference<T: Real>(
    model: &ModelStructure<T>,
    initial: &GriddedFunction<T>,
    t: T,
) -> Result<GriddedFunction<T>> {
    let grid = initial.grid();
    if grid.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial data has {} axes, model has N = {}",
            grid.dim(),
            model.dim()
        )));
    }
    if grid.time.steps != 0 {
        return Err(Error::InvalidArgument("initial data must be a single time slice".into()));
    }
    let t0: T = grid.time_at(0);
    let s = t - t0;
    if !(s > T::zero()) {
        return Err(Error::NonpositiveTime(s.to_f64_lossy()));
    }
    let c = covariance_matrix(model, s, Drift::Full)?.c;
    for (i, h) in grid.steps().into_iter().enumerate() {
        let width = (T::lit(2.0) * c[(i, i)]).sqrt().to_f64_lossy();
        if width < 0.5 * h {
            return Err(Error::GridTooCoarse(format!(
                "kernel width {width:e} on axis {i} is below half the step {h:e}"
            )));
        }
    }
    let kernel = GapKernel::new(model, s)?;
    let n = model.dim();
    let peak = kernel.at_offset(&vec![T::zero(); n]);
    let inv = kernel.covariance().inverse();
    let cell = T::lit(grid.spatial_cell_volume());
    let nodes = grid.nodes::<T>();
    let u0 = initial.values();
    let scale = u0.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let cut = T::lit(1e-15) * scale;
    let sources: Vec<(Vec<T>, T)> = (0..nodes.len())
        .filter(|&k| u0[k].abs() > cut)
        .map(|k| (kernel.mean(&nodes[k]), u0[k] * cell * T::lit(grid.spatial_trapezoid(k))))
        .collect();
    let limit = T::lit(4.0 * 745.0);
    let values: Vec<T> = nodes
        .par_iter()
        .map_init(
            || vec![T::zero(); n],
            |y, x| {
                let mut acc = T::zero();
                for (mean, w) in &sources {
                    for i in 0..n {
                        y[i] = x[i] - mean[i];
                    }
                    let mut q = T::zero();
                    for i in 0..n {
                        let mut row = T::zero();
                        for j in 0..n {
                            row += inv[(i, j)] * y[j];
                        }
                        q += row * y[i];
                    }
                    if q < limit {
                        acc += *w * (-q / T::lit(4.0)).exp();
                    }
                }
                peak * acc
            },
        )
        .collect();
    let out = Grid::slice(grid.space.clone(), t.to_f64_lossy())?;
    GriddedFunction::new(out, values)
}

/// Relative discrete residual of `∫∫ φ (⟨x, B Du⟩ - ∂_t u) - (D_{m₀}u)ᵀ a D_{m₀}φ`
/// for `tests` random smooth bumps `φ` supported strictly inside the
/// space-time box; the largest ratio `|R(φ)| / (∫∫|φ Yu| + |Duᵀ a Dφ|)`.
pub fn weak_form_residual<T: Real>(
    model: &ModelStructure<T>,
    coeff: &CoefficientField<T>,
    field: &SolutionField<T>,
    tests: usize,
    seed: u64,
) -> Result<f64> {
    if field.len() < 3 {
        return Err(Error::InvalidArgument("weak form needs at least three slices".into()));
    }
    let grid = field.spatial_grid();
    let n = model.dim();
    let m0 = model.m0();
    let times: Vec<f64> = field.times().iter().map(|t| t.to_f64_lossy()).collect();
    let h = grid.steps();
    let strides = grid.strides();
    let ns = grid.spatial_len();
    let nodes = grid.nodes::<f64>();
    let interior: Vec<usize> = (0..ns).filter(|&k| !grid.is_boundary(k)).collect();
    let b: Matrix<f64> = model.b().cast();
    let slices: Vec<Vec<f64>> = field
        .slices()
        .iter()
        .map(|s| s.iter().map(|v| v.to_f64_lossy()).collect())
        .collect();
    let central = |u: &[f64], k: usize, a: usize| (u[k + strides[a]] - u[k - strides[a]]) / (2.0 * h[a]);

    let mut rng = stream_rng(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..tests {
        let center: Vec<f64> = grid
            .space
            .iter()
            .map(|a| uniform(&mut rng, a.min + 0.3 * (a.max - a.min), a.max - 0.3 * (a.max - a.min)))
            .collect();
        let radius: Vec<f64> = grid.space.iter().map(|a| 0.2 * (a.max - a.min)).collect();
        let (t_lo, t_hi) = (times[0], times[times.len() - 1]);
        let tc = uniform(&mut rng, t_lo + 0.3 * (t_hi - t_lo), t_hi - 0.3 * (t_hi - t_lo));
        let tr = 0.25 * (t_hi - t_lo);
        let phi = |x: &[f64], t: f64| -> (f64, Vec<f64>) {
            let mut r2 = ((t - tc) / tr).powi(2);
            for i in 0..n {
                r2 += ((x[i] - center[i]) / radius[i]).powi(2);
            }
            if r2 >= 1.0 {
                return (0.0, vec![0.0; m0]);
            }
            let v = (1.0 - r2).powi(4);
            let dv = -4.0 * (1.0 - r2).powi(3);
            let g = (0..m0).map(|i| dv * 2.0 * (x[i] - center[i]) / (radius[i] * radius[i])).collect();
            (v, g)
        };
        let mut residual = 0.0;
        let mut scale = 0.0;
        for it in 1..times.len() - 1 {
            let dt_w = 0.5 * (times[it + 1] - times[it - 1]);
            let u = &slices[it];
            for &k in &interior {
                let x = &nodes[k];
                let (p, dp) = phi(x, times[it]);
                if p == 0.0 && dp.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let du: Vec<f64> = (0..n).map(|a| central(u, k, a)).collect();
                let ut = (slices[it + 1][k] - slices[it - 1][k]) / (times[it + 1] - times[it - 1]);
                let transport: f64 = (0..n)
                    .map(|j| (0..n).map(|i| b[(i, j)] * x[i]).sum::<f64>() * du[j])
                    .sum();
                let xt: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
                let a = coeff.eval(&xt, T::lit(times[it]));
                let mut diffusion = 0.0;
                for i in 0..m0 {
                    for j in 0..m0 {
                        diffusion += du[i] * a[(i, j)].to_f64_lossy() * dp[j];
                    }
                }
                let w = dt_w * grid.spatial_cell_volume();
                residual += w * (p * (transport - ut) - diffusion);
                scale += w * ((p * (transport - ut)).abs() + diffusion.abs());
            }
        }
        if scale > 0.0 {
            worst = worst.max(residual.abs() / scale);
        }
    }
    Ok(worst)
}
