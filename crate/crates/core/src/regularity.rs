//! Empirical checks of the local regularity estimates on gridded solutions:
//! sup bounds over half balls, level-set fractions, the growth conclusion and
//! oscillation decay over nested half balls `B_r⁻(z₀) = B_r(z₀) ∩ {t < t₀}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::BallSpec;
use crate::scalar::Real;
use crate::solver::SolutionField;
use crate::structure::{ModelStructure, SpaceTimePoint};

const EDGE_SLACK: f64 = 1e-12;

/// Nodes `(slice, flat)` of a half ball with their quadrature weights.
#[derive(Debug, Clone)]
pub struct HalfBallNodes {
    pub nodes: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl HalfBallNodes {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn time_weights<T: Real>(times: &[T]) -> Vec<f64> {
    let t: Vec<f64> = times.iter().map(|v| v.to_f64_lossy()).collect();
    let n = t.len();
    (0..n)
        .map(|k| {
            if n == 1 {
                return 0.0;
            }
            let lo = if k == 0 { t[0] } else { 0.5 * (t[k - 1] + t[k]) };
            let hi = if k + 1 == n { t[n - 1] } else { 0.5 * (t[k] + t[k + 1]) };
            hi - lo
        })
        .collect()
}

/// Grid nodes of `B_r⁻(center)`. Fails with `BallOutsideGrid` unless the
/// bounding box of the half ball lies inside the space-time grid.
pub fn half_ball_nodes<T: Real>(
    model: &ModelStructure<T>,
    u: &SolutionField<T>,
    center: &SpaceTimePoint<T>,
    r: T,
) -> Result<HalfBallNodes> {
    let ball = BallSpec::new(center.clone(), r, true)?;
    let grid = u.spatial_grid();
    if center.dim() != grid.dim() || model.dim() != grid.dim() {
        return Err(Error::DimensionMismatch(format!(
            "center has {} coordinates, grid {} axes, model N = {}",
            center.dim(),
            grid.dim(),
            model.dim()
        )));
    }
    let times = u.times();
    let (t_first, t_last) = match (times.first(), times.last()) {
        (Some(a), Some(b)) => (a.to_f64_lossy(), b.to_f64_lossy()),
        _ => return Err(Error::BallOutsideGrid("solution has no slices".into())),
    };
    let t0 = center.t.to_f64_lossy();
    let rf = r.to_f64_lossy();
    let t_span = (t_last - t_first).abs().max(1.0);
    if t0 - rf * rf < t_first - EDGE_SLACK * t_span || t0 > t_last + EDGE_SLACK * t_span {
        return Err(Error::BallOutsideGrid(format!(
            "time range [{}, {t0}) not inside [{t_first}, {t_last}]",
            t0 - rf * rf
        )));
    }
    let alpha = model.alpha();
    let reach: Vec<f64> = alpha.iter().map(|&a| rf.powi(a as i32)).collect();
    let h = grid.steps();
    let strides = grid.strides();
    let cell = grid.spatial_cell_volume();
    let tw = time_weights(times);
    let slices: Vec<usize> = (0..times.len())
        .filter(|&k| {
            let t = times[k].to_f64_lossy();
            t < t0 && t >= t0 - rf * rf
        })
        .collect();
    let per_slice: Vec<Result<Vec<usize>>> = slices
        .par_iter()
        .map(|&k| {
            let gap = times[k] - center.t;
            let e = model.flow_matrix(gap);
            let moved: Vec<f64> = e.matvec(&center.x).iter().map(|v| v.to_f64_lossy()).collect();
            let mut lo = Vec::with_capacity(grid.dim());
            let mut hi = Vec::with_capacity(grid.dim());
            for (i, ax) in grid.space.iter().enumerate() {
                let (a, b) = (moved[i] - reach[i], moved[i] + reach[i]);
                let slack = EDGE_SLACK * (ax.max - ax.min);
                if a < ax.min - slack || b > ax.max + slack {
                    return Err(Error::BallOutsideGrid(format!(
                        "axis {i} needs [{a}, {b}] at t = {}, grid is [{}, {}]",
                        times[k],
                        ax.min,
                        ax.max
                    )));
                }
                lo.push((((a - ax.min) / h[i]).ceil().max(0.0)) as usize);
                hi.push((((b - ax.min) / h[i]).floor() as usize).min(ax.steps));
            }
            let mut inside = Vec::new();
            if lo.iter().zip(&hi).any(|(a, b)| a > b) {
                return Ok(inside);
            }
            let mut idx = lo.clone();
            let mut x = vec![T::zero(); grid.dim()];
            loop {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = T::lit(grid.space[i].coord(idx[i]));
                }
                let z = SpaceTimePoint::new(x.clone(), times[k]);
                if ball.contains_with_flow(alpha, &e, &z) {
                    inside.push(idx.iter().zip(&strides).map(|(a, s)| a * s).sum());
                }
                let mut axis = grid.dim();
                loop {
                    if axis == 0 {
                        return Ok(inside);
                    }
                    axis -= 1;
                    if idx[axis] < hi[axis] {
                        idx[axis] += 1;
                        break;
                    }
                    idx[axis] = lo[axis];
                }
            }
        })
        .collect();
    let mut out = HalfBallNodes {
        nodes: Vec::new(),
        weights: Vec::new(),
    };
    for (&k, flats) in slices.iter().zip(per_slice) {
        for flat in flats? {
            out.nodes.push((k, flat));
            out.weights.push(cell * tw[k]);
        }
    }
    Ok(out)
}

/// Coordinate bounds `(lo, hi)` of `B_r⁻(center)` per spatial axis, padded by
/// `pad` times the axis reach, and the time interval `[t₀ - r², t₀]`.
pub fn half_ball_box<T: Real>(model: &ModelStructure<T>, center: &SpaceTimePoint<T>, r: T, pad: f64) -> (Vec<(f64, f64)>, (f64, f64)) {
    let rf = r.to_f64_lossy();
    let reach: Vec<f64> = model.alpha().iter().map(|&a| rf.powi(a as i32) * (1.0 + pad)).collect();
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); model.dim()];
    let (t0, samples) = (center.t, 64);
    for k in 0..=samples {
        let gap = -r * r * T::lit(k as f64 / samples as f64);
        let moved = model.flow_matrix(gap).matvec(&center.x);
        for (i, b) in bounds.iter_mut().enumerate() {
            let m = moved[i].to_f64_lossy();
            b.0 = b.0.min(m - reach[i]);
            b.1 = b.1.max(m + reach[i]);
        }
    }
    let t0 = t0.to_f64_lossy();
    (bounds, (t0 - rf * rf * (1.0 + pad), t0))
}

fn model_of<T: Real>(u: &SolutionField<T>) -> Result<ModelStructure<T>> {
    u.model().build()
}

fn nonempty(set: &HalfBallNodes, r: f64) -> Result<()> {
    if set.is_empty() {
        Err(Error::GridTooCoarse(format!("no grid node in the half ball of radius {r}")))
    } else {
        Ok(())
    }
}

/// `sup_{B_{r/2}⁻} u^p · r^{Q+2} / ∫_{B_r⁻} u^p`.
pub fn moser_ratio<T: Real>(u: &SolutionField<T>, center: &SpaceTimePoint<T>, r: T, p: T) -> Result<f64> {
    let rf = r.to_f64_lossy();
    let pf = p.to_f64_lossy();
    if !(rf > 0.0 && rf <= 1.0) {
        return Err(Error::InvalidArgument(format!("radius {rf} must lie in (0, 1]")));
    }
    if !(pf >= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent {pf} must be at least 1")));
    }
    let model = model_of(u)?;
    let big = half_ball_nodes(&model, u, center, r)?;
    nonempty(&big, rf)?;
    for &(k, flat) in &big.nodes {
        let v = u.slice(k)[flat].to_f64_lossy();
        if v < 0.0 {
            return Err(Error::NegativeValues { node: flat, value: v });
        }
    }
    let small = half_ball_nodes(&model, u, center, r / T::lit(2.0))?;
    nonempty(&small, rf / 2.0)?;
    let up = |k: usize, flat: usize| u.slice(k)[flat].to_f64_lossy().powf(pf);
    let sup = small.nodes.iter().map(|&(k, f)| up(k, f)).fold(0.0, f64::max);
    let integral: f64 = big.nodes.iter().zip(&big.weights).map(|(&(k, f), w)| up(k, f) * w).sum();
    let q2 = (model.q() + 2) as f64;
    Ok(sup * rf.powf(q2) / integral)
}

/// Measure fraction of `{u ≥ threshold}` inside `B_r⁻(center)`.
pub fn level_set_fraction<T: Real>(u: &SolutionField<T>, center: &SpaceTimePoint<T>, r: T, threshold: T) -> Result<f64> {
    let model = model_of(u)?;
    let set = half_ball_nodes(&model, u, center, r)?;
    nonempty(&set, r.to_f64_lossy())?;
    Ok(fraction(u, &set, threshold))
}

fn fraction<T: Real>(u: &SolutionField<T>, set: &HalfBallNodes, threshold: T) -> f64 {
    let above: f64 = set
        .nodes
        .iter()
        .zip(&set.weights)
        .filter(|(&(k, f), _)| u.slice(k)[f] >= threshold)
        .map(|(_, w)| w)
        .sum();
    above / set.measure()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthReport {
    /// Fraction of `B_r⁻` where `u ≥ 1`.
    pub fraction: f64,
    /// `min_{B_{θr}⁻} u`.
    pub h0_empirical: f64,
}

pub fn growth_lemma_check<T: Real>(u: &SolutionField<T>, center: &SpaceTimePoint<T>, r: T, theta: T) -> Result<GrowthReport> {
    let th = theta.to_f64_lossy();
    if !(th > 0.0 && th < 1.0) {
        return Err(Error::InvalidArgument(format!("θ = {th} must lie in (0, 1)")));
    }
    let model = model_of(u)?;
    let big = half_ball_nodes(&model, u, center, r)?;
    nonempty(&big, r.to_f64_lossy())?;
    let small = half_ball_nodes(&model, u, center, r * theta)?;
    nonempty(&small, (r * theta).to_f64_lossy())?;
    let h0 = small
        .nodes
        .iter()
        .map(|&(k, f)| u.slice(k)[f].to_f64_lossy())
        .fold(f64::INFINITY, f64::min);
    Ok(GrowthReport {
        fraction: fraction(u, &big, T::one()),
        h0_empirical: h0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationProfile {
    pub center: Vec<f64>,
    pub center_t: f64,
    pub theta: f64,
    pub radii: Vec<f64>,
    pub osc: Vec<f64>,
    /// `osc_{k+1} / osc_k`.
    pub ratios: Vec<f64>,
    /// Least-squares slope of `ln osc` against `ln r` over levels with
    /// nonzero oscillation; `None` with fewer than two such levels.
    pub fitted_alpha: Option<f64>,
    /// Geometric mean of the successive ratios.
    pub fitted_rho: f64,
}

impl OscillationProfile {
    /// Largest number of consecutive ratios at or below `rho`.
    pub fn longest_run_below(&self, rho: f64) -> usize {
        let mut best = 0;
        let mut run = 0;
        for &q in &self.ratios {
            if q <= rho {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best
    }
}

/// Oscillation `max - min` of `u` over `B_{θ^k r₀}⁻(center)`, `k < levels`.
pub fn oscillation_profile<T: Real>(
    u: &SolutionField<T>,
    center: &SpaceTimePoint<T>,
    r0: T,
    theta: T,
    levels: usize,
) -> Result<OscillationProfile> {
    let th = theta.to_f64_lossy();
    if !(th > 0.0 && th < 1.0) {
        return Err(Error::InvalidArgument(format!("θ = {th} must lie in (0, 1)")));
    }
    if levels < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 levels, got {levels}")));
    }
    let model = model_of(u)?;
    let radii: Vec<T> = (0..levels).map(|k| r0 * theta.powi(k as i32)).collect();
    let sets: Vec<HalfBallNodes> = radii
        .iter()
        .map(|&r| half_ball_nodes(&model, u, center, r))
        .collect::<Result<_>>()?;
    let mut osc = Vec::with_capacity(levels);
    for (set, r) in sets.iter().zip(&radii) {
        nonempty(set, r.to_f64_lossy())?;
        let (lo, hi) = set.nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(k, f)| {
            let v = u.slice(k)[f].to_f64_lossy();
            (lo.min(v), hi.max(v))
        });
        osc.push(hi - lo);
    }
    if osc[0] < 1e-12 {
        return Err(Error::DegenerateOscillation(osc[0]));
    }
    let ratios: Vec<f64> = osc.windows(2).map(|w| w[1] / w[0]).collect();
    let fitted_rho = (osc[levels - 1] / osc[0]).powf(1.0 / (levels - 1) as f64);
    let radii: Vec<f64> = radii.iter().map(|r| r.to_f64_lossy()).collect();
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(&osc)
        .filter(|(_, &o)| o > 0.0)
        .map(|(&r, &o)| (r.ln(), o.ln()))
        .collect();
    let fitted_alpha = (pts.len() >= 2).then(|| {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(OscillationProfile {
        center: center.x.iter().map(|v| v.to_f64_lossy()).collect(),
        center_t: center.t.to_f64_lossy(),
        theta: th,
        radii,
        osc,
        ratios,
        fitted_alpha,
        fitted_rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::kernel::gamma_eval;
    use crate::structure::ModelSpec;

    fn times(t0: f64, t1: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).collect()
    }

    fn ball_field(r: f64, f: impl Fn(&[f64], f64) -> f64 + Sync) -> (SolutionField<f64>, SpaceTimePoint<f64>) {
        // Kolmogorov half ball at the origin: |x1| ≤ r, |x2| ≤ r³ + r²·r, t ∈ [-r², 0)
        let space = vec![
            Axis::new(-1.2 * r, 1.2 * r, 60),
            Axis::new(-1.2 * (r.powi(3) + r.powi(3)), 1.2 * (r.powi(3) + r.powi(3)), 60),
        ];
        let u = SolutionField::from_fn(space, ModelSpec::kolmogorov(), &times(-1.1 * r * r, 0.0, 60), f).unwrap();
        (u, SpaceTimePoint::origin(2))
    }

    #[test]
    fn constants() {
        let (one, c) = ball_field(0.5, |_, _| 1.0);
        assert_eq!(level_set_fraction(&one, &c, 0.5, 1.0).unwrap(), 1.0);
        let g = growth_lemma_check(&one, &c, 0.5, 0.25).unwrap();
        assert_eq!(g.fraction, 1.0);
        assert_eq!(g.h0_empirical, 1.0);
        assert!(matches!(oscillation_profile(&one, &c, 0.5, 0.5, 3), Err(Error::DegenerateOscillation(_))));
        let (zero, c) = ball_field(0.5, |_, _| 0.0);
        assert_eq!(level_set_fraction(&zero, &c, 0.5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn moser_constant_is_ball_measure_scaling() {
        let ratios: Vec<f64> = [0.25, 0.5, 1.0]
            .iter()
            .map(|&r| {
                let (u, c) = ball_field(r, |_, _| 1.0);
                moser_ratio(&u, &c, r, 1.0).unwrap()
            })
            .collect();
        for q in &ratios {
            assert!((q / ratios[0] - 1.0).abs() < 0.02, "{ratios:?}");
        }
    }

    #[test]
    fn moser_is_scale_free_for_p_one() {
        let (u, c) = ball_field(0.5, |x, t| 1.0 + x[0] + t);
        let a = moser_ratio(&u, &c, 0.5, 1.0).unwrap();
        let b = moser_ratio(&u.map(|v| 7.5 * v), &c, 0.5, 1.0).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn errors() {
        let (u, c) = ball_field(0.5, |x, _| x[0]);
        assert!(matches!(moser_ratio(&u, &c, 0.5, 1.0), Err(Error::NegativeValues { .. })));
        assert!(matches!(level_set_fraction(&u, &c, 0.9, 0.0), Err(Error::BallOutsideGrid(_))));
        let shifted = SpaceTimePoint::new(vec![0.3, 0.0], 0.0);
        assert!(matches!(level_set_fraction(&u, &shifted, 0.5, 0.0), Err(Error::BallOutsideGrid(_))));
        assert!(oscillation_profile(&u, &c, 0.5, 0.5, 2).is_err());
    }

    #[test]
    fn ramp_fraction_converges() {
        let fr: Vec<f64> = [30usize, 60, 120]
            .iter()
            .map(|&n| {
                let space = vec![Axis::new(-0.6, 0.6, n), Axis::new(-0.3, 0.3, n)];
                let u = SolutionField::from_fn(space, ModelSpec::kolmogorov(), &times(-0.3, 0.0, n), |x: &[f64], _| 1.0 + x[0])
                    .unwrap();
                level_set_fraction(&u, &SpaceTimePoint::origin(2), 0.5, 1.0).unwrap()
            })
            .collect();
        for f in &fr {
            assert!((0.3..0.7).contains(f));
        }
        assert!((fr[2] - fr[1]).abs() <= (fr[1] - fr[0]).abs() + 1e-3);
        // symmetric ramp: the exact fraction is one half
        assert!((fr[2] - 0.5).abs() < 0.03);
    }

    #[test]
    fn monotone_in_threshold() {
        let (u, c) = ball_field(0.5, |x, t| (3.0 * x[0]).sin() + t);
        let mut prev = 1.0;
        for k in 0..20 {
            let f = level_set_fraction(&u, &c, 0.5, -1.0 + 0.1 * k as f64).unwrap();
            assert!(f <= prev);
            prev = f;
        }
    }

    #[test]
    fn smooth_kernel_decays_faster_than_lipschitz() {
        let m: ModelStructure<f64> = ModelSpec::kolmogorov().build().unwrap();
        let pole = SpaceTimePoint::new(vec![0.0, 0.0], -1.0);
        let center = SpaceTimePoint::new(vec![0.15, 0.0], 0.0);
        let space = vec![Axis::new(-0.15, 0.45, 80), Axis::new(-0.03, 0.03, 240)];
        let u = SolutionField::from_fn(space, ModelSpec::kolmogorov(), &times(-0.07, 0.0, 80), |x: &[f64], t| {
            gamma_eval(&m, &SpaceTimePoint::new(x.to_vec(), t), &pole).value
        })
        .unwrap();
        let p = oscillation_profile(&u, &center, 0.25, 0.5, 3).unwrap();
        for w in p.osc.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for q in &p.ratios {
            assert!(*q <= 0.5f64.powf(0.9), "{p:?}");
        }
    }
}
