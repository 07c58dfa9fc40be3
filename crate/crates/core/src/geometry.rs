//! Homogeneous norm, balls and cubes of the dilation-invariant geometry.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampling::{stream_rng, uniform, unit_sphere_point};
use crate::scalar::Real;
use crate::structure::{relative_with_flow, ModelStructure, SpaceTimePoint};

/// Left-hand side of the defining equation, `Σ x_i² / r^{2α_i} + t² / r⁴`.
pub fn norm_equation_lhs<T: Real>(alpha: &[u32], z: &SpaceTimePoint<T>, r: T) -> T {
    let mut s = (z.t / (r * r)).powi(2);
    for (&x, &a) in z.x.iter().zip(alpha) {
        s += (x / r.powi(a as i32)).powi(2);
    }
    s
}

fn norm_equation_derivative<T: Real>(alpha: &[u32], z: &SpaceTimePoint<T>, r: T) -> T {
    let two = T::lit(2.0);
    let mut d = -T::lit(4.0) * (z.t / (r * r)).powi(2) / r;
    for (&x, &a) in z.x.iter().zip(alpha) {
        let af = T::lit(a as f64);
        d -= two * af * (x / r.powi(a as i32)).powi(2) / r;
    }
    d
}

/// Cube gauge `max_i |x_i|^{1/α_i} ∨ |t|^{1/2}`: the smallest `r` with
/// `z ∈ C_r`.
pub fn cube_gauge<T: Real>(alpha: &[u32], z: &SpaceTimePoint<T>) -> T {
    z.x.iter().zip(alpha).fold(z.t.abs().sqrt(), |acc, (&x, &a)| {
        acc.max(x.abs().powf(T::one() / T::lit(a as f64)))
    })
}

/// The unique `r > 0` solving the defining equation, or `0` at the origin.
pub fn homogeneous_norm<T: Real>(model: &ModelStructure<T>, z: &SpaceTimePoint<T>) -> T {
    norm_with_exponents(model.alpha(), z)
}

pub(crate) fn norm_with_exponents<T: Real>(alpha: &[u32], z: &SpaceTimePoint<T>) -> T {
    let tiny = T::lit(1e-300).max(T::min_positive_value());
    if z.t.abs() < tiny && z.x.iter().all(|v| v.abs() < tiny) {
        return T::zero();
    }
    let r0 = cube_gauge(alpha, z);
    // F(r0) >= 1 because the dominant term equals one there.
    let mut lo = r0;
    let mut hi = r0;
    while norm_equation_lhs(alpha, z, hi) > T::one() {
        lo = hi;
        hi = hi * T::lit(2.0);
    }
    if norm_equation_lhs(alpha, z, lo) <= T::one() {
        return lo;
    }
    // F is convex and decreasing, so Newton started left of the root
    // increases monotonically towards it; bisection guards roundoff.
    let tol = T::solver_tol();
    let mut r = lo;
    for _ in 0..200 {
        let h = norm_equation_lhs(alpha, z, r) - T::one();
        if h == T::zero() {
            return r;
        }
        if h > T::zero() {
            lo = lo.max(r);
        } else {
            hi = hi.min(r);
        }
        let dh = norm_equation_derivative(alpha, z, r);
        let mut next = r - h / dh;
        if !(next > lo && next < hi) {
            next = (lo + hi) * T::lit(0.5);
        }
        if (next - r).abs() <= tol * r || hi - lo <= tol * r {
            return next;
        }
        r = next;
    }
    r
}

/// A homogeneous ball `B_r(z₀)`, or the past half `B_r⁻(z₀)` when `half`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSpec<T> {
    pub center: SpaceTimePoint<T>,
    pub radius: T,
    pub half: bool,
}

impl<T: Real> BallSpec<T> {
    pub fn new(center: SpaceTimePoint<T>, radius: T, half: bool) -> Result<Self> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(Error::NonpositiveScale(radius.to_f64_lossy()));
        }
        Ok(Self {
            center,
            radius,
            half,
        })
    }

    /// Membership with a precomputed `E(z.t - center.t)`.
    pub fn contains_with_flow(&self, alpha: &[u32], e_gap: &Matrix<T>, z: &SpaceTimePoint<T>) -> bool {
        if self.half && !(z.t < self.center.t) {
            return false;
        }
        let w = relative_with_flow(e_gap, &self.center, z);
        // cheap rejection: B_r ⊂ C_r
        if cube_gauge(alpha, &w) > self.radius {
            return false;
        }
        norm_with_exponents(alpha, &w) <= self.radius
    }
}

/// `‖center⁻¹ ∘ z‖ ≤ r`, and `t < t₀` for a half ball.
pub fn ball_membership<T: Real>(model: &ModelStructure<T>, ball: &BallSpec<T>, z: &SpaceTimePoint<T>) -> bool {
    let e = model.flow_matrix(z.t - ball.center.t);
    ball.contains_with_flow(model.alpha(), &e, z)
}

/// Box test for the cube `C_r` at the origin.
pub fn cube_membership<T: Real>(model: &ModelStructure<T>, r: T, z: &SpaceTimePoint<T>) -> Result<bool> {
    if !(r > T::zero()) || !r.is_finite() {
        return Err(Error::NonpositiveScale(r.to_f64_lossy()));
    }
    Ok(in_cube(model.alpha(), r, z))
}

fn in_cube<T: Real>(alpha: &[u32], r: T, z: &SpaceTimePoint<T>) -> bool {
    z.t.abs() <= r * r
        && z
            .x
            .iter()
            .zip(alpha)
            .all(|(&x, &a)| x.abs() <= r.powi(a as i32))
}

/// Fitted ball/cube inclusion constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InclusionFit {
    pub lambda: f64,
    pub samples: usize,
}

const INCLUSION_MAX: f64 = 64.0;
const INCLUSION_STEP: f64 = 1e-2;

/// Smallest `Λ` (to 1e-2) with `C_{1/Λ} ⊂ B_1 ⊂ C_Λ` on `samples` points of
/// the unit sphere; homogeneity extends the inclusions to every radius.
pub fn fit_inclusion_constant<T: Real>(model: &ModelStructure<T>, samples: usize, seed: u64) -> Result<InclusionFit> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "inclusion fit needs at least 1000 sphere samples, got {samples}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let alpha = model.alpha();
    let outward = T::one() + T::lit(1e-9);
    let sphere: Vec<(SpaceTimePoint<T>, SpaceTimePoint<T>)> = (0..samples)
        .map(|_| {
            let z = unit_sphere_point::<T, _>(model.dim(), &mut rng);
            let outside = model.dilate_unchecked(outward, &z);
            (z, outside)
        })
        .collect();
    let holds = |lam: f64| {
        let lam_t = T::lit(lam);
        let inner = T::one() / lam_t;
        sphere
            .iter()
            .all(|(z, outside)| in_cube(alpha, lam_t, z) && !in_cube(alpha, inner, outside))
    };
    let coarse = (1..=INCLUSION_MAX as u32)
        .map(f64::from)
        .find(|&lam| holds(lam))
        .ok_or_else(|| Error::FitFailed(format!("no inclusion constant up to {INCLUSION_MAX}")))?;
    let steps = (1.0 / INCLUSION_STEP).round() as u32;
    let mut best = coarse;
    if coarse > 1.0 {
        for k in (0..steps).rev() {
            let cand = coarse - 1.0 + f64::from(k) * INCLUSION_STEP;
            if holds(cand) {
                best = cand;
            } else {
                break;
            }
        }
    }
    Ok(InclusionFit {
        lambda: best,
        samples,
    })
}

/// Monte Carlo volume of a homogeneous ball.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VolumeEstimate {
    pub r: f64,
    pub volume: f64,
    pub stderr: f64,
}

const VOLUME_CHUNK: usize = 4096;

/// Volume of `B_r(0,0)` by uniform sampling of the enclosing cube `C_r`.
pub fn ball_volume_mc<T: Real>(model: &ModelStructure<T>, r: T, samples: usize, seed: u64) -> Result<VolumeEstimate> {
    if !(r > T::zero()) {
        return Err(Error::NonpositiveScale(r.to_f64_lossy()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("volume estimate needs samples".into()));
    }
    let alpha = model.alpha();
    let half_widths = model.spatial_dilation(r);
    let t_half = r * r;
    let chunks = samples.div_ceil(VOLUME_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = VOLUME_CHUNK.min(samples - c * VOLUME_CHUNK);
            (0..count)
                .filter(|_| {
                    let x = half_widths.iter().map(|&h| uniform(&mut rng, -h, h)).collect();
                    let z = SpaceTimePoint::new(x, uniform(&mut rng, -t_half, t_half));
                    norm_with_exponents(alpha, &z) <= r
                })
                .count()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let box_volume = half_widths
        .iter()
        .map(|h| 2.0 * h.to_f64_lossy())
        .product::<f64>()
        * 2.0
        * t_half.to_f64_lossy();
    let p = hits as f64 / samples as f64;
    Ok(VolumeEstimate {
        r: r.to_f64_lossy(),
        volume: p * box_volume,
        stderr: box_volume * (p * (1.0 - p) / samples as f64).sqrt(),
    })
}

/// Largest `|‖δ_r z‖ - r‖z‖| / (r‖z‖)` over `samples` points of the cube
/// `[-2, 2]^{N+1}` and `r` log-uniform in `[0.1, 10]`.
pub fn norm_homogeneity_residual<T: Real>(model: &ModelStructure<T>, samples: usize, seed: u64) -> f64 {
    let n = model.dim();
    let chunks = samples.div_ceil(VOLUME_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = VOLUME_CHUNK.min(samples - c * VOLUME_CHUNK);
            let mut worst = 0.0f64;
            for _ in 0..count {
                let x = (0..n).map(|_| uniform(&mut rng, T::lit(-2.0), T::lit(2.0))).collect();
                let z = SpaceTimePoint::new(x, uniform(&mut rng, T::lit(-2.0), T::lit(2.0)));
                let r = T::lit(10f64.powf(uniform(&mut rng, -1.0, 1.0)));
                let base = homogeneous_norm(model, &z);
                let scaled = homogeneous_norm(model, &model.dilate_unchecked(r, &z));
                let rel = ((scaled - r * base) / (r * base)).abs().to_f64_lossy();
                worst = worst.max(rel);
            }
            worst
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::ModelSpec;
    use approx::assert_relative_eq;

    fn kolmogorov() -> ModelStructure<f64> {
        ModelSpec::kolmogorov().build().unwrap()
    }

    fn pt(x: &[f64], t: f64) -> SpaceTimePoint<f64> {
        SpaceTimePoint::new(x.to_vec(), t)
    }

    /// Plain bisection on the monotone defining equation.
    fn norm_by_bisection(alpha: &[u32], z: &SpaceTimePoint<f64>) -> f64 {
        let (mut lo, mut hi) = (1e-6f64, 1e6f64);
        for _ in 0..300 {
            let mid = (lo * hi).sqrt();
            if norm_equation_lhs(alpha, z, mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    }

    #[test]
    fn norm_examples() {
        let m = kolmogorov();
        assert_eq!(homogeneous_norm(&m, &pt(&[1.0, 0.0], 0.0)), 1.0);
        assert_relative_eq!(homogeneous_norm(&m, &pt(&[0.0, 0.0], 1.0)), 1.0, max_relative = 1e-14);
        let z = pt(&[1.0, 1.0], 0.0);
        let r = homogeneous_norm(&m, &z);
        assert_relative_eq!(r, norm_by_bisection(m.alpha(), &z), max_relative = 1e-12);
        assert!((r - 1.21061).abs() < 1e-4);
        // r² solves s³ - s² - 1 = 0
        let s = r * r;
        assert!((s * s * s - s * s - 1.0).abs() < 1e-12);
        assert_eq!(homogeneous_norm(&m, &SpaceTimePoint::origin(2)), 0.0);
    }

    #[test]
    fn residual_of_returned_root_is_tiny() {
        let m = kolmogorov();
        let mut rng = stream_rng(11, 0);
        for _ in 0..500 {
            let z: SpaceTimePoint<f64> = unit_sphere_point(2, &mut rng);
            let scale = uniform(&mut rng, -3.0f64, 3.0).exp();
            let z = m.dilate(scale, &z).unwrap();
            let r = homogeneous_norm(&m, &z);
            assert!((norm_equation_lhs(m.alpha(), &z, r) - 1.0).abs() <= 1e-12);
            assert_relative_eq!(r, scale, max_relative = 1e-10);
        }
    }

    #[test]
    fn single_precision_norm() {
        let m: ModelStructure<f32> = ModelSpec::kolmogorov().build().unwrap();
        let r = homogeneous_norm(&m, &SpaceTimePoint::new(vec![1.0f32, 1.0], 0.0));
        assert!((r - 1.21061).abs() < 1e-4);
    }

    #[test]
    fn ball_examples() {
        let m = kolmogorov();
        let unit = BallSpec::new(SpaceTimePoint::origin(2), 1.0, false).unwrap();
        assert!(ball_membership(&m, &unit, &pt(&[1.0, 0.0], 0.0)));
        let half = BallSpec::new(SpaceTimePoint::origin(2), 1.0, true).unwrap();
        assert!(!ball_membership(&m, &half, &SpaceTimePoint::origin(2)));
        let center = pt(&[1.0, 0.0], 1.0);
        let ball = BallSpec::new(center.clone(), 1.0, false).unwrap();
        let mut rng = stream_rng(5, 0);
        for _ in 0..100 {
            let w: SpaceTimePoint<f64> = unit_sphere_point(2, &mut rng);
            let z = m.compose(&center, &m.dilate(0.5, &w).unwrap());
            assert!(ball_membership(&m, &ball, &z));
        }
        assert!(BallSpec::new(center, 0.0, false).is_err());
    }

    #[test]
    fn cube_examples() {
        let m = kolmogorov();
        assert!(cube_membership(&m, 1.0, &pt(&[1.0, 1.0], 1.0)).unwrap());
        assert!(!cube_membership(&m, 0.5, &pt(&[0.6, 0.0], 0.0)).unwrap());
        assert!(matches!(
            cube_membership(&m, -1.0, &pt(&[0.0, 0.0], 0.0)),
            Err(Error::NonpositiveScale(_))
        ));
    }

    #[test]
    fn inclusion_constant_heat_and_kolmogorov() {
        for n in 1..=3 {
            let heat: ModelStructure<f64> = ModelSpec::heat(n).build().unwrap();
            let fit = fit_inclusion_constant(&heat, 20_000, 3).unwrap();
            assert!(fit.lambda >= 1.0);
            assert!(fit.lambda <= ((n + 1) as f64).sqrt() + 1e-2, "n={n} lambda={}", fit.lambda);
        }
        let m = kolmogorov();
        let fit = fit_inclusion_constant(&m, 20_000, 4).unwrap();
        assert!((1.0..=64.0).contains(&fit.lambda));
        // fresh samples: cube C_{r/Λ} points lie in B_r
        let mut rng = stream_rng(99, 0);
        for _ in 0..2000 {
            let r = uniform(&mut rng, 0.1f64, 3.0);
            let side = r / fit.lambda;
            let z = pt(
                &[uniform(&mut rng, -side, side), uniform(&mut rng, -side.powi(3), side.powi(3))],
                uniform(&mut rng, -side * side, side * side),
            );
            assert!(cube_membership(&m, side, &z).unwrap());
            let ball = BallSpec::new(SpaceTimePoint::origin(2), r, false).unwrap();
            assert!(ball_membership(&m, &ball, &z));
        }
        assert!(fit_inclusion_constant(&m, 10, 0).is_err());
    }

    #[test]
    fn volume_is_deterministic() {
        let m = kolmogorov();
        let a = ball_volume_mc(&m, 1.0, 10_000, 17).unwrap();
        let b = ball_volume_mc(&m, 1.0, 10_000, 17).unwrap();
        assert_eq!(a.volume.to_bits(), b.volume.to_bits());
        assert!(a.volume > 0.0 && a.stderr > 0.0);
    }
}
