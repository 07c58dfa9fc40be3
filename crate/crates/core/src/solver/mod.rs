//! Finite-difference solver for `∂_t u = div(A D u) + ⟨x, B D u⟩` with a
//! diffusion substep on the first `m₀` axes followed by an upwind transport
//! substep, plus Monte Carlo and superposition oracles for constant
//! coefficients.

mod field;
mod oracle;

pub use field::SolutionField;
pub use oracle::{convolution_reference, mc_sample_moments, weak_form_residual, MomentReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Grid, GriddedFunction};
use crate::kernel::GapKernel;
use crate::linalg::solve_tridiagonal;
use crate::sampling::{stream_rng, uniform};
use crate::scalar::Real;
use crate::structure::{ModelStructure, SpaceTimePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionScheme {
    Explicit,
    /// Backward Euler line solves along each diffusion axis; off-diagonal
    /// coefficient terms stay explicit.
    #[default]
    Implicit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCondition<T> {
    /// Boundary nodes follow `Γ(·, pole)`.
    KernelDirichlet { pole: SpaceTimePoint<T> },
    /// Boundary nodes keep their initial values.
    FixedDirichlet,
    /// Zero normal derivative on every face of the box.
    Neumann,
}

#[derive(Debug, Clone)]
pub struct SolverConfig<T> {
    pub dt: T,
    pub horizon: T,
    pub diffusion: DiffusionScheme,
    pub boundary: BoundaryCondition<T>,
    /// Keep every `save_every`-th slice (the first and last are always kept).
    pub save_every: usize,
    pub ellipticity_samples: usize,
    pub seed: u64,
}

impl<T: Real> SolverConfig<T> {
    pub fn new(dt: T, horizon: T) -> Self {
        Self {
            dt,
            horizon,
            diffusion: DiffusionScheme::Implicit,
            boundary: BoundaryCondition::Neumann,
            save_every: 1,
            ellipticity_samples: 1000,
            seed: 0,
        }
    }

    pub fn with_boundary(mut self, boundary: BoundaryCondition<T>) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_diffusion(mut self, diffusion: DiffusionScheme) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn with_save_every(mut self, k: usize) -> Self {
        self.save_every = k.max(1);
        self
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > T::zero() && self.horizon > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} and T = {} must be positive",
                self.dt, self.horizon
            )));
        }
        let n = (self.horizon / self.dt).round();
        let steps = n.to_f64_lossy() as usize;
        if steps == 0 || (n * self.dt - self.horizon).abs() > T::lit(1e-9) * self.horizon {
            return Err(Error::InvalidArgument(format!(
                "T = {} is not a whole number of steps dt = {}",
                self.horizon, self.dt
            )));
        }
        Ok(steps)
    }
}

/// Largest stable time steps of the current grid, coefficients and drift.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CflLimits {
    /// `h'²/(2λm₀)`; binding only for explicit diffusion.
    pub diffusion: f64,
    /// `min_j h_j / max|⟨x, B e_j⟩|`, per axis.
    pub transport: f64,
}

pub fn cfl_limits<T: Real>(model: &ModelStructure<T>, coeff: &CoefficientField<T>, grid: &Grid) -> CflLimits {
    let h = grid.steps();
    let m0 = model.m0();
    let h_min = h[..m0].iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda = coeff.lambda().to_f64_lossy();
    let diffusion = h_min * h_min / (2.0 * lambda * m0 as f64);
    let b = model.b();
    let mut transport = f64::INFINITY;
    for j in 0..model.dim() {
        // |Σ_i b_ij x_i| is maximal at a corner of the box
        let c: f64 = (0..model.dim())
            .map(|i| {
                let bij = b[(i, j)].to_f64_lossy();
                let ax = &grid.space[i];
                (bij * ax.min).abs().max((bij * ax.max).abs())
            })
            .sum();
        if c > 0.0 {
            transport = transport.min(h[j] / c);
        }
    }
    CflLimits { diffusion, transport }
}

struct Workspace<T> {
    ns: usize,
    n: usize,
    m0: usize,
    h: Vec<T>,
    nodes_per_axis: Vec<usize>,
    strides: Vec<usize>,
    nodes: Vec<Vec<T>>,
    index: Vec<Vec<usize>>,
    boundary: Vec<bool>,
    /// `c_j(x) = Σ_i b_ij x_i` per node for axes with a nonzero column.
    speed: Vec<Option<Vec<T>>>,
}

impl<T: Real> Workspace<T> {
    fn new(model: &ModelStructure<T>, grid: &Grid) -> Self {
        let n = model.dim();
        let ns = grid.spatial_len();
        let nodes = grid.nodes::<T>();
        let b = model.b();
        let speed = (0..n)
            .map(|j| {
                if (0..n).all(|i| b[(i, j)] == T::zero()) {
                    None
                } else {
                    Some(
                        nodes
                            .iter()
                            .map(|x| (0..n).map(|i| b[(i, j)] * x[i]).sum())
                            .collect(),
                    )
                }
            })
            .collect();
        Self {
            ns,
            n,
            m0: model.m0(),
            h: grid.steps().into_iter().map(T::lit).collect(),
            nodes_per_axis: grid.space.iter().map(|a| a.nodes()).collect(),
            strides: grid.strides(),
            index: (0..ns).map(|k| grid.multi_index(k)).collect(),
            boundary: (0..ns).map(|k| grid.is_boundary(k)).collect(),
            nodes,
            speed,
        }
    }

    fn has_next(&self, k: usize, axis: usize) -> bool {
        self.index[k][axis] + 1 < self.nodes_per_axis[axis]
    }

    fn has_prev(&self, k: usize, axis: usize) -> bool {
        self.index[k][axis] > 0
    }

    /// Central difference along `axis`, one-sided at the box edge.
    fn central(&self, u: &[T], k: usize, axis: usize) -> T {
        let s = self.strides[axis];
        let hi = if self.has_next(k, axis) { k + s } else { k };
        let lo = if self.has_prev(k, axis) { k - s } else { k };
        let span = T::from_usize_lossy((hi - lo) / s) * self.h[axis];
        if span == T::zero() {
            T::zero()
        } else {
            (u[hi] - u[lo]) / span
        }
    }

    fn face_point(&self, k: usize, axis: usize, buf: &mut Vec<T>) {
        buf.clear();
        buf.extend_from_slice(&self.nodes[k]);
        buf[axis] += self.h[axis] / T::lit(2.0);
    }

    /// `Σ_j a_ij ∂_j u` on the face between `k` and `k + e_i`; only the
    /// off-diagonal `j ≠ i` terms when `off_only`.
    fn face_flux(&self, coeff: &CoefficientField<T>, u: &[T], k: usize, i: usize, t: T, off_only: bool, buf: &mut Vec<T>) -> T {
        let s = self.strides[i];
        self.face_point(k, i, buf);
        let mut flux = T::zero();
        for j in 0..self.m0 {
            let g = if j == i {
                if off_only {
                    continue;
                }
                (u[k + s] - u[k]) / self.h[i]
            } else {
                (self.central(u, k, j) + self.central(u, k + s, j)) / T::lit(2.0)
            };
            let a = coeff.entry(i, j, buf, t);
            if a != T::zero() {
                flux += a * g;
            }
        }
        flux
    }

    /// `Σ_i ∂_i(a_ij ∂_j u)` in conservative form; faces leaving the box
    /// carry zero flux.
    fn divergence(&self, coeff: &CoefficientField<T>, u: &[T], k: usize, t: T, off_only: bool, buf: &mut Vec<T>) -> T {
        let mut acc = T::zero();
        for i in 0..self.m0 {
            let s = self.strides[i];
            let up = if self.has_next(k, i) {
                self.face_flux(coeff, u, k, i, t, off_only, buf)
            } else {
                T::zero()
            };
            let down = if self.has_prev(k, i) {
                self.face_flux(coeff, u, k - s, i, t, off_only, buf)
            } else {
                T::zero()
            };
            acc += (up - down) / self.h[i];
        }
        acc
    }
}

struct Stepper<'a, T> {
    coeff: &'a CoefficientField<T>,
    ws: Workspace<T>,
    dirichlet: bool,
    scheme: DiffusionScheme,
    off_diagonal: bool,
}

impl<T: Real> Stepper<'_, T> {
    fn updatable(&self, k: usize) -> bool {
        !(self.dirichlet && self.ws.boundary[k])
    }

    fn explicit_diffusion(&self, u: &[T], dt: T, t: T, off_only: bool) -> Vec<T> {
        (0..self.ws.ns)
            .into_par_iter()
            .map_init(Vec::new, |buf, k| {
                if self.updatable(k) {
                    u[k] + dt * self.ws.divergence(self.coeff, u, k, t, off_only, buf)
                } else {
                    u[k]
                }
            })
            .collect()
    }

    /// `(I - dt ∂_i(a_ii ∂_i)) u_new = u` along every line of axis `i`.
    fn implicit_axis(&self, u: &mut [T], axis: usize, dt: T, t: T) {
        let ws = &self.ws;
        let s = ws.strides[axis];
        let len = ws.nodes_per_axis[axis];
        let h2 = ws.h[axis] * ws.h[axis];
        let starts: Vec<usize> = (0..ws.ns).filter(|&k| ws.index[k][axis] == 0).collect();
        let solved: Vec<(usize, Vec<T>)> = starts
            .par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(buf, scratch), &start| {
                    let line: Vec<usize> = (0..len).map(|p| start + p * s).collect();
                    // a on the faces p + ½
                    let faces: Vec<T> = (0..len - 1)
                        .map(|p| {
                            ws.face_point(line[p], axis, buf);
                            self.coeff.entry(axis, axis, buf, t)
                        })
                        .collect();
                    let (first, last) = if self.dirichlet {
                        if len < 3 || (0..ws.n).any(|a| a != axis && ws.boundary_on(start, a)) {
                            return (start, Vec::new());
                        }
                        (1, len - 1)
                    } else {
                        (0, len)
                    };
                    let m = last - first;
                    let mut lower = vec![T::zero(); m];
                    let mut diag = vec![T::one(); m];
                    let mut upper = vec![T::zero(); m];
                    let mut rhs: Vec<T> = line[first..last].iter().map(|&k| u[k]).collect();
                    for r in 0..m {
                        let p = first + r;
                        let w_up = if p + 1 < len { dt * faces[p] / h2 } else { T::zero() };
                        let w_dn = if p > 0 { dt * faces[p - 1] / h2 } else { T::zero() };
                        diag[r] += w_up + w_dn;
                        if p + 1 < len {
                            if r + 1 < m {
                                upper[r] = -w_up;
                            } else {
                                rhs[r] += w_up * u[line[p + 1]];
                            }
                        }
                        if p > 0 {
                            if r > 0 {
                                lower[r] = -w_dn;
                            } else {
                                rhs[r] += w_dn * u[line[p - 1]];
                            }
                        }
                    }
                    solve_tridiagonal(&lower, &diag, &upper, &mut rhs, scratch);
                    (start, rhs)
                },
            )
            .collect();
        for (start, vals) in solved {
            if vals.is_empty() {
                continue;
            }
            let first = if self.dirichlet { 1 } else { 0 };
            for (r, v) in vals.into_iter().enumerate() {
                u[start + (first + r) * s] = v;
            }
        }
    }

    fn transport(&self, u: &[T], axis: usize, dt: T) -> Option<Vec<T>> {
        let speed = self.ws.speed[axis].as_ref()?;
        let ws = &self.ws;
        let s = ws.strides[axis];
        let h = ws.h[axis];
        Some(
            (0..ws.ns)
                .into_par_iter()
                .map(|k| {
                    if !self.updatable(k) {
                        return u[k];
                    }
                    let c = speed[k];
                    let d = if c > T::zero() {
                        if ws.has_next(k, axis) {
                            (u[k + s] - u[k]) / h
                        } else {
                            T::zero()
                        }
                    } else if c < T::zero() {
                        if ws.has_prev(k, axis) {
                            (u[k] - u[k - s]) / h
                        } else {
                            T::zero()
                        }
                    } else {
                        T::zero()
                    };
                    u[k] + dt * c * d
                })
                .collect(),
        )
    }

    fn step(&self, u: &mut Vec<T>, dt: T, t: T) {
        match self.scheme {
            DiffusionScheme::Explicit => {
                *u = self.explicit_diffusion(u, dt, t, false);
            }
            DiffusionScheme::Implicit => {
                if self.off_diagonal {
                    *u = self.explicit_diffusion(u, dt, t, true);
                }
                for axis in 0..self.ws.m0 {
                    self.implicit_axis(u, axis, dt, t);
                }
            }
        }
        for axis in 0..self.ws.n {
            if let Some(next) = self.transport(u, axis, dt) {
                *u = next;
            }
        }
    }
}

impl<T: Real> Workspace<T> {
    fn boundary_on(&self, k: usize, axis: usize) -> bool {
        let i = self.index[k][axis];
        i == 0 || i + 1 == self.nodes_per_axis[axis]
    }
}

/// Nonnegative sum of three Gaussian bumps with seeded centers in the middle
/// half of each axis and widths between 0.1 and 0.3 of the axis length.
pub fn random_initial_data<T: Real>(grid: &Grid, seed: u64) -> GriddedFunction<T> {
    let mut rng = stream_rng(seed, 0);
    let bumps: Vec<(f64, Vec<(f64, f64)>)> = (0..3)
        .map(|_| {
            let amp = uniform(&mut rng, 0.5, 1.0);
            let params = grid
                .space
                .iter()
                .map(|a| {
                    let len = a.max - a.min;
                    (a.min + len * uniform(&mut rng, 0.25, 0.75), len * uniform(&mut rng, 0.1, 0.3))
                })
                .collect();
            (amp, params)
        })
        .collect();
    GriddedFunction::from_fn(grid.clone(), |x: &[T], _| {
        let v: f64 = bumps
            .iter()
            .map(|(amp, p)| {
                let e: f64 = p
                    .iter()
                    .zip(x)
                    .map(|(&(c, w), &xi)| ((xi.to_f64_lossy() - c) / w).powi(2))
                    .sum();
                amp * (-e).exp()
            })
            .sum();
        T::lit(v)
    })
}

/// Advances `initial` (a single time slice) to `t₀ + T`.
pub fn solve_forward<T: Real>(
    model: &ModelStructure<T>,
    coeff: &CoefficientField<T>,
    config: &SolverConfig<T>,
    initial: &GriddedFunction<T>,
) -> Result<SolutionField<T>> {
    solve_forward_with(model, coeff, config, initial, |_, _, _| Ok(()))
}

/// As [`solve_forward`], calling `on_saved(slot, t, values)` for every kept
/// slice as soon as it is produced.
pub fn solve_forward_with<T: Real>(
    model: &ModelStructure<T>,
    coeff: &CoefficientField<T>,
    config: &SolverConfig<T>,
    initial: &GriddedFunction<T>,
    mut on_saved: impl FnMut(usize, T, &[T]) -> Result<()>,
) -> Result<SolutionField<T>> {
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
    if coeff.m0() != model.m0() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient block is {0}x{0}, model has m₀ = {1}",
            coeff.m0(),
            model.m0()
        )));
    }
    let steps = config.steps()?;
    let dt = config.dt;
    let t0: T = grid.time_at(0);

    let mut lo: Vec<T> = grid.space.iter().map(|a| T::lit(a.min)).collect();
    let mut hi: Vec<T> = grid.space.iter().map(|a| T::lit(a.max)).collect();
    lo.push(t0);
    hi.push(t0 + config.horizon);
    coeff.verify_ellipticity(&lo, &hi, config.ellipticity_samples, config.seed)?;

    let limits = cfl_limits(model, coeff, grid);
    let dtf = dt.to_f64_lossy();
    let slack = 1.0 + 1e-12;
    if config.diffusion == DiffusionScheme::Explicit && dtf > limits.diffusion * slack {
        return Err(Error::CflViolation(format!(
            "explicit diffusion needs dt ≤ {:e}, got {dtf:e}",
            limits.diffusion
        )));
    }
    let off_diagonal = model.m0() > 1 && !coeff.is_isotropic();
    if config.diffusion == DiffusionScheme::Implicit && off_diagonal {
        let off_limit = limits.diffusion * model.m0() as f64 / (model.m0() - 1) as f64;
        if dtf > off_limit * slack {
            return Err(Error::CflViolation(format!(
                "explicit off-diagonal diffusion needs dt ≤ {off_limit:e}, got {dtf:e}"
            )));
        }
    }
    if dtf > limits.transport * slack {
        return Err(Error::CflViolation(format!(
            "transport needs dt ≤ {:e}, got {dtf:e}",
            limits.transport
        )));
    }

    let stepper = Stepper {
        coeff,
        ws: Workspace::new(model, grid),
        dirichlet: !matches!(config.boundary, BoundaryCondition::Neumann),
        scheme: config.diffusion,
        off_diagonal,
    };
    let mut field = SolutionField::new(grid.space.clone(), model.spec());
    let mut u = initial.values().to_vec();
    let set_kernel_boundary = |u: &mut [T], t: T| {
        if let BoundaryCondition::KernelDirichlet { pole } = &config.boundary {
            let kernel = GapKernel::new(model, t - pole.t).ok();
            for k in 0..stepper.ws.ns {
                if stepper.ws.boundary[k] {
                    u[k] = match &kernel {
                        Some(g) => g.value(&stepper.ws.nodes[k], &pole.x),
                        None => T::zero(),
                    };
                    if !u[k].is_finite() {
                        u[k] = T::zero();
                    }
                }
            }
        }
    };
    set_kernel_boundary(&mut u, t0);
    on_saved(0, t0, &u)?;
    field.push(t0, u.clone())?;
    for n in 0..steps {
        let t = t0 + T::from_usize_lossy(n) * dt;
        let t_next = t0 + T::from_usize_lossy(n + 1) * dt;
        set_kernel_boundary(&mut u, t_next);
        stepper.step(&mut u, dt, t);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonfiniteValue { step: n + 1 });
        }
        if (n + 1) % config.save_every == 0 || n + 1 == steps {
            on_saved(field.len(), t_next, &u)?;
            field.push(t_next, u.clone())?;
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::structure::ModelSpec;

    fn kolmogorov() -> ModelStructure<f64> {
        ModelSpec::kolmogorov().build().unwrap()
    }

    fn slice_grid(n1: usize, n2: usize) -> Grid {
        Grid::slice(vec![Axis::new(-2.0, 2.0, n1), Axis::new(-1.0, 1.0, n2)], 0.0).unwrap()
    }

    #[test]
    fn constants_are_preserved_with_neumann() {
        let m: ModelStructure<f64> = ModelSpec {
            n: 2,
            m: vec![1, 1],
            b: vec![vec![0.7, 1.0], vec![0.0, -0.4]],
        }
        .build()
        .unwrap();
        let init = GriddedFunction::from_fn(slice_grid(20, 20), |_, _| 1.0);
        let coeff = CoefficientField::checkerboard(1, 2.0, 1.0, 8.0).unwrap();
        for scheme in [DiffusionScheme::Explicit, DiffusionScheme::Implicit] {
            let cfg = SolverConfig::new(0.005, 0.2).with_diffusion(scheme);
            let sol = solve_forward(&m, &coeff, &cfg, &init).unwrap();
            let steps = sol.len() - 1;
            for s in sol.slices() {
                assert!(s.iter().all(|&v| (v - 1.0).abs() <= 1e-8 * steps as f64));
            }
        }
    }

    #[test]
    fn cfl_violations_are_reported() {
        let init = GriddedFunction::from_fn(slice_grid(40, 20), |_, _| 0.0);
        let coeff = CoefficientField::identity(1);
        let explicit = SolverConfig::new(0.01, 0.1).with_diffusion(DiffusionScheme::Explicit);
        assert!(matches!(solve_forward(&kolmogorov(), &coeff, &explicit, &init), Err(Error::CflViolation(_))));
        let fast = SolverConfig::new(0.1, 0.2);
        assert!(matches!(solve_forward(&kolmogorov(), &coeff, &fast, &init), Err(Error::CflViolation(_))));
        let bad = CoefficientField::custom(1, 2.0, |_: &[f64], _| crate::linalg::Matrix::identity(1).scale(5.0)).unwrap();
        let cfg = SolverConfig::new(0.01, 0.1);
        assert!(matches!(solve_forward(&kolmogorov(), &bad, &cfg, &init), Err(Error::EllipticityViolation(_))));
    }

    #[test]
    fn maximum_principle_and_nonnegativity() {
        let grid = slice_grid(40, 40);
        let init = GriddedFunction::from_fn(grid, |x: &[f64], _| 0.2 + 0.6 * (-(x[0] * x[0] + 4.0 * x[1] * x[1])).exp());
        let coeff = CoefficientField::checkerboard(1, 2.0, 1.0, 8.0).unwrap();
        for scheme in [DiffusionScheme::Explicit, DiffusionScheme::Implicit] {
            let dt = if scheme == DiffusionScheme::Explicit { 0.0015 } else { 0.01 };
            let steps = (0.3f64 / dt).round();
            let cfg = SolverConfig::new(dt, steps * dt)
                .with_diffusion(scheme)
                .with_boundary(BoundaryCondition::FixedDirichlet);
            let sol = solve_forward(&kolmogorov(), &coeff, &cfg, &init).unwrap();
            for s in sol.slices() {
                assert!(s.iter().all(|&v| (0.2 - 1e-12..=0.8 + 1e-12).contains(&v)));
            }
        }
    }

    #[test]
    fn saved_slices_and_round_trip() {
        let init = GriddedFunction::from_fn(slice_grid(10, 10), |x: &[f64], _| (-x[0] * x[0]).exp());
        let cfg = SolverConfig::new(0.01, 0.1).with_save_every(3);
        let mut seen = Vec::new();
        let sol = solve_forward_with(&kolmogorov(), &CoefficientField::identity(1), &cfg, &init, |k, t, _| {
            seen.push((k, t));
            Ok(())
        })
        .unwrap();
        let times: Vec<f64> = sol.times().to_vec();
        assert_eq!(times.len(), 5);
        assert!((times[4] - 0.1).abs() < 1e-12);
        assert_eq!(seen.len(), 5);
        let dir = std::env::temp_dir().join(format!("ultrakfp-field-{}", std::process::id()));
        sol.save(&dir, serde_json::json!({"dt": 0.01})).unwrap();
        let back = SolutionField::<f64>::load(&dir).unwrap();
        assert_eq!(back, sol);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn horizon_must_be_whole_steps() {
        assert!(SolverConfig::new(0.3, 1.0).steps().is_err());
        assert_eq!(SolverConfig::new(0.25, 1.0).steps().unwrap(), 4);
    }
}
