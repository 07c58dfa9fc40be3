//! Discrete potentials `Γ(f)(z) = ∫ Γ(z, ζ) f(ζ) dζ` and
//! `Γ(D_{m₀} f)(z) = -∫ D_ξ Γ(z, ζ) f(ζ) dζ` on a space-time grid, and the
//! empirical `L² → L^q` norm ratios they satisfy.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GriddedFunction};
use crate::kernel::{gamma_eval, GapKernel};
use crate::linalg::Matrix;
use crate::sampling::{stream_rng, unit_sphere_point};
use crate::scalar::Real;
use crate::structure::{ModelStructure, SpaceTimePoint};

/// Kernel contributions with `¼⟨C⁻¹y, y⟩` above this are skipped.
const EXPONENT_CUT: f64 = 40.0;

/// Per-lag data for the convolution sums.
struct LagKernel<T> {
    kernel: GapKernel<T>,
    /// `C̃⁻¹`.
    k_tilde: Matrix<T>,
    /// Rows `i < m₀` of `Eᵀ D_{s^{-1/2}} C̃⁻¹`, applied to `ỹ`.
    grad_map: Matrix<T>,
    /// `s^{α_i/2}`.
    scale: Vec<T>,
    /// Half-widths of the box outside which the exponent exceeds the cut.
    reach: Vec<T>,
    log_norm: T,
}

impl<T: Real> LagKernel<T> {
    fn new(model: &ModelStructure<T>, s: T) -> Result<Self> {
        let kernel = GapKernel::new(model, s)?;
        let cov = kernel.covariance();
        let n = model.dim();
        let k_tilde = cov.tilde().inverse()?.symmetrize();
        let scale: Vec<T> = model.alpha().iter().map(|&a| s.sqrt().powi(a as i32)).collect();
        let d_inv_k = Matrix::from_fn(n, n, |i, j| k_tilde[(i, j)] / scale[i]);
        let full = &kernel.flow().transpose() * &d_inv_k;
        let grad_map = full.block(0, 0, model.m0(), n);
        let lam_max = cov.tilde().symmetric_eigen().values.into_iter().fold(T::zero(), T::max);
        let radius = (T::lit(4.0 * EXPONENT_CUT) * lam_max).sqrt();
        let reach = scale.iter().map(|&d| d * radius).collect();
        // value = exp(log_norm - q/4) with q on ỹ
        let at0 = kernel.at_offset(&vec![T::zero(); n]);
        Ok(Self {
            kernel,
            k_tilde,
            grad_map,
            scale,
            reach,
            log_norm: at0.ln(),
        })
    }
}

/// Both potentials of `f`: `value` is `Γ(f)` and `gradient` is the pointwise
/// magnitude of the vector field `Γ(D_{m₀} f)`.
#[derive(Debug, Clone)]
pub struct Potentials<T> {
    pub value: GriddedFunction<T>,
    pub gradient: GriddedFunction<T>,
}

fn check_grid(model: &ModelStructure<impl Real>, grid: &Grid) -> Result<()> {
    if grid.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} spatial axes, model has N = {}",
            grid.dim(),
            model.dim()
        )));
    }
    if grid.time.steps < 8 {
        return Err(Error::GridTooCoarse(format!(
            "time step is larger than T/8 ({} steps)",
            grid.time.steps
        )));
    }
    Ok(())
}

/// Trapezoid-rule convolution of `f` against `Γ` and `D_ξ Γ`. Source nodes
/// with `f = 0` and the zero-gap nodes are skipped.
pub fn apply_potentials<T: Real>(model: &ModelStructure<T>, f: &GriddedFunction<T>) -> Result<Potentials<T>> {
    let grid = f.grid();
    check_grid(model, grid)?;
    let n = model.dim();
    let m0 = model.m0();
    let nt = grid.time_len();
    let ns = grid.spatial_len();
    let dt = grid.time.step();
    let lags: Vec<LagKernel<T>> = (1..nt)
        .map(|l| LagKernel::new(model, T::lit(l as f64 * dt)))
        .collect::<Result<_>>()?;
    let nodes = grid.nodes::<T>();
    let coords: Vec<Vec<T>> = grid
        .space
        .iter()
        .map(|a| (0..a.nodes()).map(|i| T::lit(a.coord(i))).collect())
        .collect();
    let vol = grid.cell_volume();
    // nonzero sources per slice, weight folded in
    let sources: Vec<Vec<(usize, T)>> = (0..nt)
        .map(|it| {
            let w_t = grid.time.trapezoid(it);
            f.time_slice(it)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != T::zero())
                .map(|(k, &v)| (k, v * T::lit(vol * w_t * grid.spatial_trapezoid(k))))
                .collect()
        })
        .collect();
    let axes = &grid.space;
    let strides = grid.strides();

    let slices: Vec<(Vec<T>, Vec<T>)> = (0..nt)
        .into_par_iter()
        .map(|it| {
            let mut val = vec![T::zero(); ns];
            let mut grad = vec![T::zero(); ns * m0];
            let mut lo = vec![0usize; n];
            let mut hi = vec![0usize; n];
            let mut idx = vec![0usize; n];
            let mut yt = vec![T::zero(); n];
            let mut gbase = vec![T::zero(); m0];
            let mut gslope = vec![T::zero(); m0];
            let (two, four, cut) = (T::lit(2.0), T::lit(4.0), T::lit(EXPONENT_CUT));
            for (itau, src) in sources.iter().enumerate().take(it) {
                let lag = &lags[it - itau - 1];
                let flow = lag.kernel.flow();
                for &(k, w) in src {
                    let mean = flow.matvec(&nodes[k]);
                    // index box around the mean
                    let mut empty = false;
                    for a in 0..n {
                        let ax = &axes[a];
                        let h = ax.step();
                        let m = mean[a].to_f64_lossy();
                        let r = lag.reach[a].to_f64_lossy();
                        let l = ((m - r - ax.min) / h).ceil().max(0.0);
                        let u = ((m + r - ax.min) / h).floor().min(ax.steps as f64);
                        if l > u {
                            empty = true;
                            break;
                        }
                        lo[a] = l as usize;
                        hi[a] = u as usize;
                    }
                    if empty {
                        continue;
                    }
                    // outer axes by odometer, the last axis as a line where
                    // q = q₀ + 2 y c + k y² and the gradient is affine in y
                    let last = n - 1;
                    let k_ll = lag.k_tilde[(last, last)];
                    idx.copy_from_slice(&lo);
                    'sweep: loop {
                        let mut base = 0usize;
                        for a in 0..last {
                            yt[a] = (coords[a][idx[a]] - mean[a]) / lag.scale[a];
                            base += idx[a] * strides[a];
                        }
                        let mut q0 = T::zero();
                        let mut c = T::zero();
                        for a in 0..last {
                            let mut acc = T::zero();
                            for b in 0..last {
                                acc += lag.k_tilde[(a, b)] * yt[b];
                            }
                            q0 += acc * yt[a];
                            c += lag.k_tilde[(last, a)] * yt[a];
                        }
                        for i in 0..m0 {
                            let mut acc = T::zero();
                            for b in 0..last {
                                acc += lag.grad_map[(i, b)] * yt[b];
                            }
                            gbase[i] = acc;
                            gslope[i] = lag.grad_map[(i, last)];
                        }
                        // segment where k y² + 2 c y + q₀ ≤ 4·cut
                        let disc = c * c - k_ll * (q0 - four * cut);
                        if disc >= T::zero() {
                            let root = disc.sqrt();
                            let (ml, sl) = (mean[last], lag.scale[last]);
                            let y_lo = (-c - root) / k_ll;
                            let y_hi = (-c + root) / k_ll;
                            let ax = &axes[last];
                            let h = T::lit(ax.step());
                            let x0 = T::lit(ax.min);
                            let j_lo = ((ml + y_lo * sl - x0) / h).ceil().to_f64_lossy().max(lo[last] as f64);
                            let j_hi = ((ml + y_hi * sl - x0) / h).floor().to_f64_lossy().min(hi[last] as f64);
                            if j_lo <= j_hi {
                                let (j_lo, j_hi) = (j_lo as usize, j_hi as usize);
                                // Gaussian ratio recurrence along the line
                                let step = h / sl;
                                let mut y = (coords[last][j_lo] - ml) / sl;
                                let mut g = (lag.log_norm - (q0 + y * (two * c + k_ll * y)) / four).exp() * w;
                                let mut ratio = (-(two * c + k_ll * (two * y + step)) * step / four).exp();
                                let decay = (-k_ll * step * step / two).exp();
                                for j in j_lo..=j_hi {
                                    let flat = base + j;
                                    val[flat] += g;
                                    // -D_ξ Γ = -½ Γ Eᵀ C⁻¹ y
                                    for i in 0..m0 {
                                        grad[flat * m0 + i] -= g * (gbase[i] + gslope[i] * y) / two;
                                    }
                                    g *= ratio;
                                    ratio *= decay;
                                    y += step;
                                }
                            }
                        }
                        let mut a = last;
                        loop {
                            if a == 0 {
                                break 'sweep;
                            }
                            a -= 1;
                            if idx[a] < hi[a] {
                                idx[a] += 1;
                                break;
                            }
                            idx[a] = lo[a];
                        }
                    }
                }
            }
            let mag: Vec<T> = (0..ns)
                .map(|k| {
                    grad[k * m0..(k + 1) * m0]
                        .iter()
                        .map(|&v| v * v)
                        .sum::<T>()
                        .sqrt()
                })
                .collect();
            (val, mag)
        })
        .collect();
    let mut value = Vec::with_capacity(grid.len());
    let mut gradient = Vec::with_capacity(grid.len());
    for (v, g) in slices {
        value.extend(v);
        gradient.extend(g);
    }
    Ok(Potentials {
        value: GriddedFunction::new(grid.clone(), value)?,
        gradient: GriddedFunction::new(grid.clone(), gradient)?,
    })
}

/// `Γ(f)`.
pub fn apply_gamma_potential<T: Real>(model: &ModelStructure<T>, f: &GriddedFunction<T>) -> Result<GriddedFunction<T>> {
    Ok(apply_potentials(model, f)?.value)
}

/// `|Γ(D_{m₀} f)|`.
pub fn apply_gamma_gradient_potential<T: Real>(model: &ModelStructure<T>, f: &GriddedFunction<T>) -> Result<GriddedFunction<T>> {
    Ok(apply_potentials(model, f)?.gradient)
}

/// `q = (1/p - α/(Q+2))⁻¹` for `p = 2`: `α = 2` gives `2k̃ = 2(1 + 4/(Q-2))`
/// and `α = 1` gives `2k = 2(1 + 2/Q)`.
pub fn potential_exponents(q: usize) -> Result<(f64, f64)> {
    if q <= 2 {
        return Err(Error::HomogeneousDimensionTooSmall(q));
    }
    let q = q as f64;
    Ok((2.0 * (1.0 + 4.0 / (q - 2.0)), 2.0 * (1.0 + 2.0 / q)))
}

/// Tensor Gaussian bump `exp(-Σ u_i²)` set to zero where `Σ u_i² > 9`, with
/// random center and widths inside the grid box.
pub fn random_bump<T: Real, R: Rng + ?Sized>(grid: &Grid, rng: &mut R) -> GriddedFunction<T> {
    let mut axes = grid.space.clone();
    axes.push(grid.time);
    let params: Vec<(f64, f64)> = axes
        .iter()
        .map(|a| {
            let len = a.max - a.min;
            let c = a.min + len * rng.gen_range(0.3..0.7);
            let w = len * rng.gen_range(0.08..0.2);
            (c, w)
        })
        .collect();
    let n = grid.dim();
    GriddedFunction::from_fn(grid.clone(), |x: &[T], t: T| {
        let mut e = 0.0f64;
        for (i, &(c, w)) in params.iter().enumerate() {
            let v = if i < n { x[i].to_f64_lossy() } else { t.to_f64_lossy() };
            e += ((v - c) / w).powi(2);
        }
        if e > 9.0 {
            T::zero()
        } else {
            T::lit((-e).exp())
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NormRatioReport {
    /// `max ‖Γ(f)‖_{2k̃} / ‖f‖₂`.
    pub ratio_2ktilde: f64,
    /// `max ‖Γ(D_{m₀} f)‖_{2k} / ‖f‖₂`.
    pub ratio_2k: f64,
    pub exponent_2ktilde: f64,
    pub exponent_2k: f64,
    pub trials: usize,
    pub seed: u64,
    pub grid: Grid,
}

/// Max norm ratios over `trials` random bumps.
pub fn norm_ratio_estimate<T: Real>(model: &ModelStructure<T>, grid: &Grid, trials: usize, seed: u64) -> Result<NormRatioReport> {
    let (p1, p2) = potential_exponents(model.q())?;
    if trials < 20 {
        return Err(Error::InvalidArgument(format!("norm ratio estimate needs ≥ 20 trials, got {trials}")));
    }
    check_grid(model, grid)?;
    let mut r1 = 0.0f64;
    let mut r2 = 0.0f64;
    for k in 0..trials {
        let mut rng = stream_rng(seed, k as u64);
        let f = random_bump::<T, _>(grid, &mut rng);
        let (a, b) = norm_ratios(model, &f, p1, p2)?;
        r1 = r1.max(a);
        r2 = r2.max(b);
    }
    Ok(NormRatioReport {
        ratio_2ktilde: r1,
        ratio_2k: r2,
        exponent_2ktilde: p1,
        exponent_2k: p2,
        trials,
        seed,
        grid: grid.clone(),
    })
}

/// `(‖Γ(f)‖_{p1} / ‖f‖₂, ‖Γ(D f)‖_{p2} / ‖f‖₂)`, both zero for `f = 0`.
pub fn norm_ratios<T: Real>(model: &ModelStructure<T>, f: &GriddedFunction<T>, p1: f64, p2: f64) -> Result<(f64, f64)> {
    let l2 = f.lp_norm(T::lit(2.0)).to_f64_lossy();
    if l2 == 0.0 {
        return Ok((0.0, 0.0));
    }
    let pot = apply_potentials(model, f)?;
    Ok((
        pot.value.lp_norm(T::lit(p1)).to_f64_lossy() / l2,
        pot.gradient.lp_norm(T::lit(p2)).to_f64_lossy() / l2,
    ))
}

/// Worst relative defects of `Γ(δ_λ z, 0) = λ^{-Q} Γ(z, 0)` and of the pole
/// gradient, of degree `-Q-1`, over random unit-sphere points with `t > 0`
/// and random `λ ∈ [1/4, 4]`; meaningful for `B = B₀`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HomogeneityDefect {
    pub value: f64,
    pub gradient: f64,
}

pub fn kernel_homogeneity_defect<T: Real>(model: &ModelStructure<T>, samples: usize, seed: u64) -> HomogeneityDefect {
    let mut rng = stream_rng(seed, 0);
    let pole = SpaceTimePoint::origin(model.dim());
    let q = model.q() as i32;
    let (mut dv, mut dg) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < samples {
        let mut z: SpaceTimePoint<T> = unit_sphere_point(model.dim(), &mut rng);
        z.t = z.t.abs();
        if z.t < T::lit(0.05) {
            continue;
        }
        let lam = T::lit(4f64.powf(rng.gen_range(-1.0..1.0)));
        let a = gamma_eval(model, &z, &pole);
        if a.value < T::lit(1e-200) {
            continue;
        }
        let b = gamma_eval(model, &model.dilate_unchecked(lam, &z), &pole);
        let scaled = b.value * lam.powi(q);
        dv = dv.max(((scaled - a.value) / a.value).abs().to_f64_lossy());
        let gnorm = a.grad_m0.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        for (ga, gb) in a.grad_m0.iter().zip(&b.grad_m0) {
            let d = (*gb * lam.powi(q + 1) - *ga).abs() / gnorm.max(T::min_positive_value());
            dg = dg.max(d.to_f64_lossy());
        }
        done += 1;
    }
    HomogeneityDefect { value: dv, gradient: dg }
}
