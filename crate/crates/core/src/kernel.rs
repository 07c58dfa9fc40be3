//! The explicit fundamental solution `Γ(z, ζ) = Γ(ζ⁻¹ ∘ z, 0)` of the
//! constant-coefficient operator, its gradients, its mass and the empirical
//! sup of its scale-invariant bounds.

use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{Drift, ScaledCovariance};
use crate::error::{Error, Result};
use crate::geometry::norm_with_exponents;
use crate::linalg::{dot, Matrix};
use crate::sampling::{stream_rng, uniform, unit_sphere_point};
use crate::scalar::Real;
use crate::structure::{ModelStructure, SpaceTimePoint};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelEvaluation<T> {
    pub value: T,
    /// `∂_{ξ_i} Γ` for the pole coordinates `i < m₀`.
    pub grad_m0: Vec<T>,
    /// `∇_x Γ` in the evaluation point.
    pub grad_z: Vec<T>,
    pub gap_norm: T,
    pub t_gap: T,
    /// The gap was positive but too small to represent `C(s)`.
    pub underflow: bool,
}

/// `Γ` for one fixed time gap `s > 0`: flow, normalized covariance and the
/// log normalization are computed once and reused for every spatial pair.
#[derive(Debug, Clone)]
pub struct GapKernel<T> {
    s: T,
    m0: usize,
    flow: Matrix<T>,
    cov: ScaledCovariance<T>,
    log_norm: T,
}

impl<T: Real> GapKernel<T> {
    pub fn new(model: &ModelStructure<T>, s: T) -> Result<Self> {
        let cov = ScaledCovariance::new(model, s, Drift::Full)?;
        let n = T::from_usize_lossy(model.dim());
        let log_norm = -(n / T::lit(2.0)) * (T::lit(4.0) * T::PI()).ln()
            - cov.log_det() / T::lit(2.0)
            - s * model.trace_b();
        Ok(Self {
            s,
            m0: model.m0(),
            flow: model.flow_matrix(s),
            cov,
            log_norm,
        })
    }

    pub fn gap(&self) -> T {
        self.s
    }

    /// `E(s)`.
    pub fn flow(&self) -> &Matrix<T> {
        &self.flow
    }

    pub fn covariance(&self) -> &ScaledCovariance<T> {
        &self.cov
    }

    /// Mean position `E(s) ξ` of the density started at `ξ`.
    pub fn mean(&self, pole_x: &[T]) -> Vec<T> {
        self.flow.matvec(pole_x)
    }

    /// Density at the offset `y = x - E(s) ξ`.
    pub fn at_offset(&self, y: &[T]) -> T {
        (self.log_norm - self.cov.inverse_form(y) / T::lit(4.0)).exp()
    }

    pub fn value(&self, x: &[T], pole_x: &[T]) -> T {
        self.at_offset(&self.offset(x, pole_x))
    }

    fn offset(&self, x: &[T], pole_x: &[T]) -> Vec<T> {
        let mean = self.mean(pole_x);
        x.iter().zip(&mean).map(|(&a, &b)| a - b).collect()
    }

    /// Value with both gradients.
    pub fn value_and_gradients(&self, x: &[T], pole_x: &[T]) -> (T, Vec<T>, Vec<T>) {
        let y = self.offset(x, pole_x);
        let cinv_y = self.cov.solve(&y);
        let value = (self.log_norm - dot(&y, &cinv_y) / T::lit(4.0)).exp();
        let half = value / T::lit(2.0);
        let grad_z: Vec<T> = cinv_y.iter().map(|&v| -half * v).collect();
        let pulled = self.flow.transpose().matvec(&cinv_y);
        let grad_m0 = pulled[..self.m0].iter().map(|&v| half * v).collect();
        (value, grad_m0, grad_z)
    }
}

/// `Γ(z, pole)`; zero whenever `t ≤ τ`.
pub fn gamma_eval<T: Real>(model: &ModelStructure<T>, z: &SpaceTimePoint<T>, pole: &SpaceTimePoint<T>) -> KernelEvaluation<T> {
    let w = model.relative(pole, z);
    let gap_norm = norm_with_exponents(model.alpha(), &w);
    let zero = |underflow| KernelEvaluation {
        value: T::zero(),
        grad_m0: vec![T::zero(); model.m0()],
        grad_z: vec![T::zero(); model.dim()],
        gap_norm,
        t_gap: w.t,
        underflow,
    };
    if !(w.t > T::zero()) {
        return zero(false);
    }
    let Ok(kernel) = GapKernel::new(model, w.t) else {
        return zero(true);
    };
    let (value, grad_m0, grad_z) = kernel.value_and_gradients(&z.x, &pole.x);
    if !value.is_finite() {
        return zero(true);
    }
    KernelEvaluation {
        value,
        grad_m0,
        grad_z,
        gap_norm,
        t_gap: w.t,
        underflow: false,
    }
}

/// Physicists' Gauss–Hermite nodes and weights (weight `e^{-u²}`) from the
/// eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    let jac = Matrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            T::lit((i.max(j) as f64 / 2.0).sqrt())
        } else {
            T::zero()
        }
    });
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(T, T)> = (0..n)
        .map(|k| {
            let v0 = eig.vectors[(0, k)];
            (eig.values[k], T::PI().sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    pairs.into_iter().unzip()
}

pub const MASS_NODES: usize = 40;
const MASS_MAX_NODES_TOTAL: f64 = 2.0e6;

/// `∫ Γ((x, t), pole) dx` by tensor Gauss–Hermite quadrature whitened by
/// `2C(t - τ)`.
pub fn kernel_mass<T: Real>(model: &ModelStructure<T>, t: T, pole: &SpaceTimePoint<T>) -> Result<T> {
    let s = t - pole.t;
    if !(s > T::zero()) {
        return Err(Error::NonpositiveTime(s.to_f64_lossy()));
    }
    let kernel = GapKernel::new(model, s)?;
    let n = model.dim();
    let per_axis = (MASS_MAX_NODES_TOTAL.powf(1.0 / n as f64).floor() as usize).clamp(4, MASS_NODES);
    let fine = gaussian_tensor_quadrature(&kernel, &pole.x, per_axis);
    let coarse = gaussian_tensor_quadrature(&kernel, &pole.x, per_axis / 2);
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(1e3));
    if (fine - coarse).abs() > tol * fine.abs().max(T::one()) {
        return Err(Error::QuadratureNotConverged(format!(
            "mass {} with {per_axis} nodes vs {} with {}",
            fine,
            coarse,
            per_axis / 2
        )));
    }
    Ok(fine)
}

/// `Σ_u Π w · Γ(x(u)) e^{|u|²} · |det J|` with `x = E(s)ξ + 2 D chol(C̃) u`.
fn gaussian_tensor_quadrature<T: Real>(kernel: &GapKernel<T>, pole_x: &[T], nodes: usize) -> T {
    let (u, w) = gauss_hermite::<T>(nodes);
    let n = pole_x.len();
    let cov = kernel.covariance();
    let mean = kernel.mean(pole_x);
    let d: Vec<T> = cov.normalize(&vec![T::one(); n]).iter().map(|&v| T::one() / v).collect();
    let chol = cov.lower_factor();
    let two = T::lit(2.0);
    let mut jac = T::one();
    for i in 0..n {
        jac *= two * d[i] * chol[(i, i)];
    }
    let total = nodes.pow(n as u32);
    let terms: Vec<T> = (0..total)
        .into_par_iter()
        .with_min_len(256)
        .map(|flat| {
            let mut rem = flat;
            let mut idx = vec![0usize; n];
            for slot in idx.iter_mut().rev() {
                *slot = rem % nodes;
                rem /= nodes;
            }
            let uu: Vec<T> = idx.iter().map(|&k| u[k]).collect();
            let weight: T = idx.iter().map(|&k| w[k]).fold(T::one(), |a, b| a * b);
            let lu = chol.matvec(&uu);
            let x: Vec<T> = (0..n).map(|i| mean[i] + two * d[i] * lu[i]).collect();
            let y: Vec<T> = x.iter().zip(&mean).map(|(&a, &b)| a - b).collect();
            let r2 = dot(&uu, &uu);
            weight * kernel.at_offset(&y) * r2.exp()
        })
        .collect();
    terms.into_iter().sum::<T>() * jac
}

/// Empirical sups of `Γ ‖ζ⁻¹∘z‖^Q` and `|∂_ξ Γ| ‖ζ⁻¹∘z‖^{Q+1}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelBoundReport {
    pub sup_q: f64,
    pub sup_q1: f64,
    pub samples: usize,
    pub r_min: f64,
    pub r_max: f64,
}

/// Random pairs with gap `w = ζ⁻¹∘z` uniformly directed on the homogeneous
/// unit sphere and `‖w‖` log-uniform in `radius_range`.
pub fn kernel_bound_sup<T: Real>(
    model: &ModelStructure<T>,
    samples: usize,
    radius_range: (T, T),
    seed: u64,
) -> Result<KernelBoundReport> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!("kernel_bound_sup needs ≥ 1000 samples, got {samples}")));
    }
    let (lo, hi) = radius_range;
    if !(lo > T::zero() && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidArgument("radius range must satisfy 0 < lo ≤ hi".into()));
    }
    let q = model.q() as i32;
    let chunk = 512usize;
    let chunks = samples.div_ceil(chunk);
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = chunk.min(samples - c * chunk);
            let (mut s0, mut s1) = (0.0f64, 0.0f64);
            for _ in 0..count {
                let dir: SpaceTimePoint<T> = unit_sphere_point(model.dim(), &mut rng);
                let r = (uniform(&mut rng, lo.ln(), hi.ln())).exp();
                let w = model.dilate_unchecked(r, &dir);
                let pole = SpaceTimePoint::new(
                    (0..model.dim()).map(|_| uniform(&mut rng, -T::one(), T::one())).collect(),
                    uniform(&mut rng, -T::one(), T::one()),
                );
                let z = model.compose(&pole, &w);
                let ev = gamma_eval(model, &z, &pole);
                let norm = ev.gap_norm;
                s0 = s0.max((ev.value * norm.powi(q)).to_f64_lossy());
                let g = ev.grad_m0.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
                s1 = s1.max((g * norm.powi(q + 1)).to_f64_lossy());
            }
            (s0, s1)
        })
        .collect();
    let (sup_q, sup_q1) = parts.into_iter().fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(KernelBoundReport {
        sup_q,
        sup_q1,
        samples,
        r_min: lo.to_f64_lossy(),
        r_max: hi.to_f64_lossy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::ModelSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn kolmogorov() -> ModelStructure<f64> {
        ModelSpec::kolmogorov().build().unwrap()
    }

    fn with_trace() -> ModelStructure<f64> {
        ModelSpec {
            n: 2,
            m: vec![1, 1],
            b: vec![vec![1.0, 1.0], vec![0.0, 0.0]],
        }
        .build()
        .unwrap()
    }

    fn pt(x: &[f64], t: f64) -> SpaceTimePoint<f64> {
        SpaceTimePoint::new(x.to_vec(), t)
    }

    #[test]
    fn kolmogorov_point_values() {
        let k = kolmogorov();
        let origin = pt(&[0.0, 0.0], 0.0);
        let at0 = gamma_eval(&k, &pt(&[0.0, 0.0], 1.0), &origin);
        let expect0 = 12f64.sqrt() / (4.0 * std::f64::consts::PI);
        assert_relative_eq!(at0.value, expect0, max_relative = 1e-12);
        assert!((at0.value - 0.275664).abs() < 1e-6);
        let at1 = gamma_eval(&k, &pt(&[1.0, 0.0], 1.0), &origin);
        assert_relative_eq!(at1.value, expect0 * (-1f64).exp(), max_relative = 1e-12);
        assert!((at1.value - 0.101405).abs() < 1e-5);
    }

    #[test]
    fn zero_for_nonpositive_gap() {
        let k = kolmogorov();
        for t in [0.0, -0.5] {
            let ev = gamma_eval(&k, &pt(&[0.3, 0.1], t), &pt(&[0.0, 0.0], 0.0));
            assert_eq!(ev.value, 0.0);
            assert!(!ev.underflow);
        }
        let tiny = gamma_eval(&k, &pt(&[0.0, 0.0], 1e-300), &pt(&[0.0, 0.0], 0.0));
        assert!(tiny.value == 0.0 || tiny.value.is_finite());
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let (u, w) = gauss_hermite::<f64>(20);
        let m0: f64 = w.iter().sum();
        let m2: f64 = u.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert_relative_eq!(m0, std::f64::consts::PI.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(m2, std::f64::consts::PI.sqrt() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn mass_identity() {
        let k = kolmogorov();
        let m = kernel_mass(&k, 1.0, &pt(&[0.0, 0.0], 0.0)).unwrap();
        assert!((m - 1.0).abs() < 1e-6);
        let heat: ModelStructure<f64> = ModelSpec::heat(2).build().unwrap();
        let m = kernel_mass(&heat, 0.5, &pt(&[0.2, -0.1], 0.0)).unwrap();
        assert!((m - 1.0).abs() < 1e-8);
        let m = kernel_mass(&with_trace(), 1.0, &pt(&[0.5, 0.5], 0.0)).unwrap();
        assert!((m - (-1f64).exp()).abs() < 1e-6);
        assert!(kernel_mass(&k, 0.0, &pt(&[0.0, 0.0], 0.0)).is_err());
    }

    #[test]
    fn chapman_kolmogorov() {
        let k = kolmogorov();
        let pole = pt(&[0.2, -0.1], 0.0);
        let mid_t = 0.4;
        let z = pt(&[0.5, -0.3], 1.0);
        let inner = GapKernel::new(&k, mid_t - pole.t).unwrap();
        let cov = inner.covariance();
        let mean = inner.mean(&pole.x);
        let d: Vec<f64> = cov.normalize(&[1.0, 1.0]).iter().map(|v| 1.0 / v).collect();
        let chol = cov.lower_factor();
        let (u, w) = gauss_hermite::<f64>(40);
        let jac = 4.0 * d[0] * d[1] * chol[(0, 0)] * chol[(1, 1)];
        let mut sum = 0.0;
        for (a, wa) in u.iter().zip(&w) {
            for (b, wb) in u.iter().zip(&w) {
                let lu = chol.matvec(&[*a, *b]);
                let y = [mean[0] + 2.0 * d[0] * lu[0], mean[1] + 2.0 * d[1] * lu[1]];
                let mid = pt(&y, mid_t);
                let g1 = gamma_eval(&k, &z, &mid).value;
                let g2 = gamma_eval(&k, &mid, &pole).value;
                sum += wa * wb * g1 * g2 * (a * a + b * b).exp();
            }
        }
        let direct = gamma_eval(&k, &z, &pole).value;
        assert!((sum * jac - direct).abs() <= 1e-4 * direct, "{} vs {}", sum * jac, direct);
    }

    #[test]
    fn bound_sups_are_finite_and_stable() {
        let k = kolmogorov();
        let a = kernel_bound_sup(&k, 10_000, (0.01, 10.0), 1).unwrap();
        let b = kernel_bound_sup(&k, 20_000, (0.01, 10.0), 2).unwrap();
        assert!(a.sup_q.is_finite() && a.sup_q > 0.0);
        assert!(a.sup_q1.is_finite() && a.sup_q1 > 0.0);
        assert!((a.sup_q - b.sup_q).abs() <= 0.1 * b.sup_q, "{a:?} {b:?}");
        assert!((a.sup_q1 - b.sup_q1).abs() <= 0.1 * b.sup_q1, "{a:?} {b:?}");
        assert!(kernel_bound_sup(&k, 10, (0.1, 1.0), 0).is_err());
    }

    #[test]
    fn reduced_kernel_is_dilation_homogeneous() {
        let k = kolmogorov();
        let pole = pt(&[0.0, 0.0], 0.0);
        for (x, t) in [([0.3, 0.2], 0.5), ([-1.0, 0.4], 1.3), ([0.05, -0.02], 0.02)] {
            let z = pt(&x, t);
            let zd = k.dilate(2.0, &z).unwrap();
            let a = gamma_eval(&k, &z, &pole);
            let b = gamma_eval(&k, &zd, &pole);
            let lhs = a.value * a.gap_norm.powi(4);
            let rhs = b.value * b.gap_norm.powi(4);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-8);
        }
    }

    // differences of ln Γ, which is quadratic in the coordinates, so the
    // check stays meaningful in the far tail
    fn fd_check(model: &ModelStructure<f64>, z: &SpaceTimePoint<f64>, pole: &SpaceTimePoint<f64>) -> f64 {
        let ev = gamma_eval(model, z, pole);
        let mut worst = 0.0f64;
        let scale = ev
            .grad_z
            .iter()
            .chain(&ev.grad_m0)
            .fold(0.0f64, |a, b| a.max(b.abs()))
            .max(1e-300);
        for i in 0..model.dim() {
            let h = 1e-6 * (1.0 + z.x[i].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.x[i] += h;
            zm.x[i] -= h;
            let fd = ev.value * (gamma_eval(model, &zp, pole).value.ln() - gamma_eval(model, &zm, pole).value.ln()) / (2.0 * h);
            worst = worst.max((fd - ev.grad_z[i]).abs() / scale);
        }
        for i in 0..model.m0() {
            let h = 1e-6 * (1.0 + pole.x[i].abs());
            let mut pp = pole.clone();
            let mut pm = pole.clone();
            pp.x[i] += h;
            pm.x[i] -= h;
            let fd = ev.value * (gamma_eval(model, z, &pp).value.ln() - gamma_eval(model, z, &pm).value.ln()) / (2.0 * h);
            worst = worst.max((fd - ev.grad_m0[i]).abs() / scale);
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn gradient_matches_central_differences(
            x in prop::array::uniform2(-1.0f64..1.0),
            xi in prop::array::uniform2(-1.0f64..1.0),
            s in 0.01f64..2.0,
        ) {
            let m = with_trace();
            let z = pt(&x, s + 0.1);
            let pole = pt(&xi, 0.1);
            prop_assert!(fd_check(&m, &z, &pole) <= 1e-6);
        }

        #[test]
        fn left_invariance(
            x in prop::array::uniform2(-1.0f64..1.0),
            xi in prop::array::uniform2(-1.0f64..1.0),
            g in prop::array::uniform3(-1.0f64..1.0),
            s in 0.05f64..2.0,
        ) {
            let m = with_trace();
            let z = pt(&x, s);
            let pole = pt(&xi, 0.0);
            let w = pt(&g[..2], g[2]);
            let a = gamma_eval(&m, &z, &pole).value;
            let b = gamma_eval(&m, &m.compose(&w, &z), &m.compose(&w, &pole)).value;
            prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        }

        #[test]
        fn value_is_positive_after_pole(
            x in prop::array::uniform2(-2.0f64..2.0),
            s in 0.5f64..3.0,
        ) {
            let ev = gamma_eval(&kolmogorov(), &pt(&x, s), &pt(&[0.0, 0.0], 0.0));
            prop_assert!(ev.value > 0.0 && ev.value.is_finite());
        }
    }
}
