//! Covariance `C(t) = ∫₀ᵗ E(s) A₀ Eᵀ(s) ds` of the constant-coefficient
//! operator, its reduced counterpart `C₀(t)`, and numerical checks of the
//! identities and two-sided bounds they satisfy.

use std::borrow::Cow;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, dot, Matrix};
use crate::sampling::{normal, stream_rng};
use crate::scalar::Real;
use crate::structure::ModelStructure;

/// Which drift the covariance is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drift {
    /// The full matrix `B`.
    Full,
    /// `B₀`: only the superdiagonal blocks of `B`.
    Reduced,
}

/// `A₀ = diag(I_{m₀}, 0)` and the reduced drift `B₀`.
#[derive(Debug, Clone)]
pub struct ConstantModel<T> {
    pub a0: Matrix<T>,
    pub b0: Matrix<T>,
}

impl<T: Real> ConstantModel<T> {
    pub fn new(model: &ModelStructure<T>) -> Self {
        Self {
            a0: model.a0(),
            b0: model.reduced().b().clone(),
        }
    }
}

fn select<T: Real>(model: &ModelStructure<T>, which: Drift) -> Cow<'_, ModelStructure<T>> {
    match which {
        Drift::Full => Cow::Borrowed(model),
        Drift::Reduced => Cow::Owned(model.reduced()),
    }
}

/// `C(t)` (or `C₀(t)`) at a positive time.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix<T> {
    pub t: T,
    pub c: Matrix<T>,
}

/// `∫₀¹ exp(-v Mᵀ) A₀ exp(-v M) dv` from the off-diagonal block of
/// `exp([[-Mᵀ, A₀], [0, M]])`, scaled by `t`.
fn augmented_integral<T: Real>(drift: &Matrix<T>, a0: &Matrix<T>, t: T) -> Matrix<T> {
    let n = drift.rows();
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.set_block(0, 0, &(-&drift.transpose()));
    aug.set_block(0, n, a0);
    aug.set_block(n, n, drift);
    let f = aug.scale(t).expm();
    let f11 = f.block(0, 0, n, n);
    let f12 = f.block(0, n, n, n);
    // F12 F22⁻¹ with F22⁻¹ = e^{-Bt} = F11ᵀ
    (&f12 * &f11.transpose()).symmetrize()
}

/// `C(t)` via the augmented matrix exponential.
pub fn covariance_matrix<T: Real>(model: &ModelStructure<T>, t: T, which: Drift) -> Result<CovarianceMatrix<T>> {
    check_time(t)?;
    let m = select(model, which);
    Ok(CovarianceMatrix {
        t,
        c: augmented_integral(m.b(), &m.a0(), t),
    })
}

/// `C(t)` by entrywise adaptive Simpson quadrature of `E(s) A₀ Eᵀ(s)`.
pub fn covariance_by_quadrature<T: Real>(model: &ModelStructure<T>, t: T, which: Drift, tol: T) -> Result<Matrix<T>> {
    check_time(t)?;
    let m = select(model, which);
    let a0 = m.a0();
    let integrand = |s: T| {
        let e = m.flow_matrix(s);
        &(&e * &a0) * &e.transpose()
    };
    let two = T::lit(2.0);
    let mid = t / two;
    let fa = integrand(T::zero());
    let fm = integrand(mid);
    let fb = integrand(t);
    let whole = simpson(&fa, &fm, &fb, t);
    adaptive_simpson(&integrand, T::zero(), t, fa, fm, fb, whole, tol, 50)
        .map(|c| c.symmetrize())
        .ok_or_else(|| Error::QuadratureNotConverged("covariance quadrature hit recursion limit".into()))
}

fn simpson<T: Real>(fa: &Matrix<T>, fm: &Matrix<T>, fb: &Matrix<T>, width: T) -> Matrix<T> {
    (&(fa + fb) + &fm.scale(T::lit(4.0))).scale(width / T::lit(6.0))
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<T: Real>(
    f: &impl Fn(T) -> Matrix<T>,
    a: T,
    b: T,
    fa: Matrix<T>,
    fm: Matrix<T>,
    fb: Matrix<T>,
    whole: Matrix<T>,
    tol: T,
    depth: u32,
) -> Option<Matrix<T>> {
    let two = T::lit(2.0);
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(&fa, &flm, &fm, m - a);
    let right = simpson(&fm, &frm, &fb, b - m);
    let sum = &left + &right;
    let err = (&sum - &whole).max_abs();
    if depth == 0 {
        return None;
    }
    if err <= T::lit(15.0) * tol {
        return Some(&sum + &(&sum - &whole).scale(T::one() / T::lit(15.0)));
    }
    let l = adaptive_simpson(f, a, m, fa, flm, fm.clone(), left, tol / two, depth - 1)?;
    let r = adaptive_simpson(f, m, b, fm, frm, fb, right, tol / two, depth - 1)?;
    Some(&l + &r)
}

fn check_time<T: Real>(t: T) -> Result<()> {
    if t > T::zero() && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveTime(t.to_f64_lossy()))
    }
}

/// Covariance in dilation-normalized form `C̃(s) = D_{s^{-1/2}} C(s) D_{s^{-1/2}}`.
///
/// `C̃(s)` is `O(1)` for every `s > 0`, so determinants, inverses and
/// quadratic forms are computed through it instead of through `C(s)`, whose
/// entries span `s^{2d+1}` orders of magnitude.
#[derive(Debug, Clone)]
pub struct ScaledCovariance<T> {
    s: T,
    alpha: Vec<u32>,
    q: usize,
    tilde: Matrix<T>,
    chol: Matrix<T>,
    log_det_tilde: T,
}

impl<T: Real> ScaledCovariance<T> {
    pub fn new(model: &ModelStructure<T>, s: T, which: Drift) -> Result<Self> {
        check_time(s)?;
        let m = select(model, which);
        let alpha = m.alpha().to_vec();
        let b = m.b();
        let n = m.dim();
        // D_{s^{1/2}} (s B) D_{s^{-1/2}} has entries s^{1 + (α_i - α_j)/2} b_ij
        let scaled = Matrix::from_fn(n, n, |i, j| {
            let v = b[(i, j)];
            if v == T::zero() {
                return v;
            }
            let expo = 2 + alpha[i] as i32 - alpha[j] as i32;
            if expo % 2 == 0 {
                v * s.powi(expo / 2)
            } else {
                v * s.powf(T::lit(expo as f64 / 2.0))
            }
        });
        let tilde = augmented_integral(&scaled, &m.a0(), T::one());
        let floor = T::lit(1e-300).max(T::min_positive_value());
        let chol = tilde.cholesky(floor)?;
        let log_det_tilde = (0..n).map(|i| chol[(i, i)].ln()).sum::<T>() * T::lit(2.0);
        Ok(Self {
            s,
            alpha,
            q: m.q(),
            tilde,
            chol,
            log_det_tilde,
        })
    }

    pub fn time(&self) -> T {
        self.s
    }

    pub fn tilde(&self) -> &Matrix<T> {
        &self.tilde
    }

    /// `D_{s^{-1/2}} y`.
    pub fn normalize(&self, y: &[T]) -> Vec<T> {
        let rs = self.s.sqrt();
        y.iter()
            .zip(&self.alpha)
            .map(|(&v, &a)| v / rs.powi(a as i32))
            .collect()
    }

    // C⁻¹ = D_{s^{-1/2}} C̃⁻¹ D_{s^{-1/2}}, so both sides use the same map
    fn denormalize(&self, y: &[T]) -> Vec<T> {
        self.normalize(y)
    }

    /// `C(s) = D_{√s} C̃ D_{√s}`.
    pub fn covariance(&self) -> Matrix<T> {
        let d: Vec<T> = self
            .alpha
            .iter()
            .map(|&a| self.s.sqrt().powi(a as i32))
            .collect();
        Matrix::from_fn(self.tilde.rows(), self.tilde.cols(), |i, j| {
            d[i] * self.tilde[(i, j)] * d[j]
        })
    }

    /// `ln det C(s) = Q ln s + ln det C̃`.
    pub fn log_det(&self) -> T {
        T::lit(self.q as f64) * self.s.ln() + self.log_det_tilde
    }

    pub fn det(&self) -> T {
        self.log_det().exp()
    }

    /// `C(s)⁻¹ y`.
    pub fn solve(&self, y: &[T]) -> Vec<T> {
        let w = cholesky_solve(&self.chol, &self.normalize(y));
        self.denormalize(&w)
    }

    /// `⟨C(s)⁻¹ y, y⟩`.
    pub fn inverse_form(&self, y: &[T]) -> T {
        let yt = self.normalize(y);
        dot(&yt, &cholesky_solve(&self.chol, &yt))
    }

    /// `⟨C(s) y, y⟩`.
    pub fn form(&self, y: &[T]) -> T {
        let rs = self.s.sqrt();
        let yd: Vec<T> = y
            .iter()
            .zip(&self.alpha)
            .map(|(&v, &a)| v * rs.powi(a as i32))
            .collect();
        self.tilde.bilinear(&yd, &yd)
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.tilde.rows();
        let mut out = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            for (i, v) in self.solve(&e).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out.symmetrize()
    }

    pub fn lower_factor(&self) -> &Matrix<T> {
        &self.chol
    }
}

/// Central difference of `C` against `A₀ - BᵀC - CB`, Frobenius norm.
pub fn covariance_ode_residual<T: Real>(model: &ModelStructure<T>, t: T) -> Result<T> {
    check_time(t)?;
    let h = (T::lit(1e-5) * t.max(T::one())).min(t * T::lit(0.5));
    let plus = covariance_matrix(model, t + h, Drift::Full)?.c;
    let minus = covariance_matrix(model, t - h, Drift::Full)?.c;
    let c = covariance_matrix(model, t, Drift::Full)?.c;
    let fd = (&plus - &minus).scale(T::one() / (T::lit(2.0) * h));
    let b = model.b();
    let rhs = &(&model.a0() - &(&b.transpose() * &c)) - &(&c * b);
    Ok((&fd - &rhs).norm_fro())
}

/// `‖C₀(t) - D_{√t} C₀(1) D_{√t}‖ / ‖C₀(t)‖`.
pub fn scaling_identity_residual<T: Real>(model: &ModelStructure<T>, t: T) -> Result<T> {
    check_time(t)?;
    let c_t = covariance_matrix(model, t, Drift::Reduced)?.c;
    let c_1 = covariance_matrix(model, T::one(), Drift::Reduced)?.c;
    let d = model.spatial_dilation(t.sqrt());
    let rhs = Matrix::from_fn(d.len(), d.len(), |i, j| d[i] * c_1[(i, j)] * d[j]);
    Ok((&c_t - &rhs).norm_fro() / c_t.norm_fro())
}

/// Residuals of the drift identities for `⟨C⁻¹(|t|)x, x⟩` and
/// `⟨C⁻¹(|t|)e^{tBᵀ}x, e^{tBᵀ}x⟩` at `t < 0`: the vector field `Y` is
/// applied by a central difference along its integral direction and compared
/// with the closed forms.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DriftIdentityResidual {
    pub plain: f64,
    pub transported: f64,
}

pub fn drift_identity_residuals<T: Real>(model: &ModelStructure<T>, x: &[T], t: T) -> Result<DriftIdentityResidual> {
    if !(t < T::zero()) {
        return Err(Error::InvalidArgument("drift identities are stated for t < 0".into()));
    }
    let b = model.b();
    let bt = b.transpose();
    let a0 = model.a0();
    let bt_x = bt.matvec(x);
    let h = T::lit(1e-4) * t.abs();
    // Y f(x, t) = d/dε f(x + ε Bᵀx, t - ε)
    let along = |eps: T, transported: bool| -> Result<T> {
        let xe: Vec<T> = x.iter().zip(&bt_x).map(|(&a, &v)| a + eps * v).collect();
        let te = t - eps;
        let cov = ScaledCovariance::new(model, te.abs(), Drift::Full)?;
        if transported {
            // e^{tBᵀ} = E(-t)
            let y = model.flow_matrix(-te).matvec(&xe);
            Ok(cov.inverse_form(&y))
        } else {
            Ok(cov.inverse_form(&xe))
        }
    };
    let cov = ScaledCovariance::new(model, t.abs(), Drift::Full)?;
    let two = T::lit(2.0);

    let fd_plain = (along(h, false)? - along(-h, false)?) / (two * h);
    let cinv_x = cov.solve(x);
    let term_b = T::lit(4.0) * dot(x, &b.matvec(&cinv_x));
    let term_a = dot(&cinv_x, &a0.matvec(&cinv_x));
    let plain = (fd_plain - (term_b - term_a)).abs() / (term_b.abs() + term_a.abs()).max(T::min_positive_value());

    let fd_tr = (along(h, true)? - along(-h, true)?) / (two * h);
    let e_bt = model.flow_matrix(-t);
    let y = e_bt.matvec(x);
    let cinv_y = cov.solve(&y);
    let e_b = e_bt.transpose();
    let term_b = two * dot(x, &b.matvec(&e_b.matvec(&cinv_y)));
    let term_a = dot(&cinv_y, &a0.matvec(&cinv_y));
    let transported = (fd_tr - (term_b - term_a)).abs() / (term_b.abs() + term_a.abs()).max(T::min_positive_value());

    Ok(DriftIdentityResidual {
        plain: plain.to_f64_lossy(),
        transported: transported.to_f64_lossy(),
    })
}

/// Sampling grid for the two-sided covariance bounds.
#[derive(Debug, Clone, Copy)]
pub struct Lemma21Grid {
    /// Random unit directions in `R^N` (coordinate axes are always added).
    pub directions: usize,
    /// Geometrically spaced times in `[T / 1000, T]`.
    pub times: usize,
    pub seed: u64,
}

impl Default for Lemma21Grid {
    fn default() -> Self {
        Self {
            directions: 64,
            times: 48,
            seed: 0,
        }
    }
}

/// Fitted constants of the two-sided covariance bounds.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma21Report {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "C_T")]
    pub c_t: f64,
    #[serde(rename = "C'_T")]
    pub c_prime_t: f64,
    pub max_violation: f64,
    pub samples: usize,
    /// Samples dropped because `t ≥ 1/C_T`.
    pub excluded: usize,
    pub directions: usize,
    pub times: usize,
}

const LEMMA21_LIMIT: f64 = 1e6;
const FIT_PAD: f64 = 1.0 + 1e-9;

/// Fits `C_T` for the quadratic-form bounds on `C` and `C⁻¹` and `C'_T` for
/// the determinant bound, then re-checks every retained sample.
pub fn fit_lemma21_constants<T: Real>(model: &ModelStructure<T>, horizon: T, grid: Lemma21Grid) -> Result<Lemma21Report> {
    check_time(horizon)?;
    let n = model.dim();
    let mut rng = stream_rng(grid.seed, 0);
    let mut dirs: Vec<Vec<T>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    for _ in 0..grid.directions {
        let v: Vec<T> = (0..n).map(|_| normal::<T, _>(&mut rng)).collect();
        let len = crate::linalg::norm2(&v);
        dirs.push(v.into_iter().map(|a| a / len).collect());
    }
    let times: Vec<T> = (0..grid.times.max(2))
        .map(|k| {
            let frac = T::lit(k as f64 / (grid.times.max(2) - 1) as f64);
            horizon * T::lit(1e-3).powf(T::one() - frac)
        })
        .collect();
    let q = model.q() as i32;

    struct Row {
        t: f64,
        quad_dev: f64,
        det_ratio: f64,
    }
    let mut rows = Vec::with_capacity(times.len() * dirs.len());
    for &t in &times {
        let full = ScaledCovariance::new(model, t, Drift::Full)?;
        let reduced = ScaledCovariance::new(model, t, Drift::Reduced)?;
        let det_ratio = (full.log_det() - T::lit(q as f64) * t.ln()).exp().to_f64_lossy();
        for x in &dirs {
            let r_direct = (full.form(x) / reduced.form(x)).to_f64_lossy();
            let r_inverse = (full.inverse_form(x) / reduced.inverse_form(x)).to_f64_lossy();
            rows.push(Row {
                t: t.to_f64_lossy(),
                quad_dev: (r_direct - 1.0).abs().max((r_inverse - 1.0).abs()),
                det_ratio,
            });
        }
    }
    let c_t = rows.iter().map(|r| r.quad_dev / r.t).fold(0.0, f64::max) * FIT_PAD;
    if !(c_t <= LEMMA21_LIMIT) {
        return Err(Error::FitFailed(format!("C_T = {c_t:e} exceeds {LEMMA21_LIMIT:e}")));
    }
    let retained: Vec<&Row> = rows.iter().filter(|r| c_t == 0.0 || r.t < 1.0 / c_t).collect();
    let excluded = rows.len() - retained.len();
    let c_prime = retained
        .iter()
        .map(|r| {
            let upper = r.det_ratio / (1.0 + c_t * r.t);
            let lower = (1.0 - c_t * r.t) / r.det_ratio;
            upper.max(lower)
        })
        .fold(0.0, f64::max)
        * FIT_PAD;
    if !(c_prime <= LEMMA21_LIMIT) || c_prime == 0.0 {
        return Err(Error::FitFailed(format!("C'_T = {c_prime:e} outside (0, {LEMMA21_LIMIT:e}]")));
    }
    let max_violation = retained
        .iter()
        .map(|r| {
            let quad = r.quad_dev - c_t * r.t;
            let det_hi = (r.det_ratio - c_prime * (1.0 + c_t * r.t)) / r.det_ratio;
            let det_lo = ((1.0 - c_t * r.t) / c_prime - r.det_ratio) / r.det_ratio;
            quad.max(det_hi).max(det_lo)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Lemma21Report {
        horizon: horizon.to_f64_lossy(),
        c_t,
        c_prime_t: c_prime,
        max_violation,
        samples: retained.len(),
        excluded,
        directions: dirs.len(),
        times: times.len(),
    })
}

/// Fitted constants of the small-time equivalences: `c_equiv` bounds the
/// ratio of `⟨C⁻¹(|t|)y, y⟩` (with `y = e^{tBᵀ}x`) to `|D_{|t|^{-1/2}}x|²`
/// from both sides; `c_drift` and `c_a0` bound the two other forms from
/// above after multiplying them by `|t|`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SmallTimeReport {
    pub c_equiv: f64,
    pub c_drift: f64,
    pub c_a0: f64,
    pub max_abs_t: f64,
    pub samples: usize,
}

pub fn small_time_equivalence<T: Real>(model: &ModelStructure<T>, max_abs_t: T, samples: usize, seed: u64) -> Result<SmallTimeReport> {
    check_time(max_abs_t)?;
    let n = model.dim();
    let bt = model.b().transpose();
    let a0 = model.a0();
    let mut rng = stream_rng(seed, 0);
    let (mut lo, mut hi, mut drift, mut a0_max) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let u: f64 = rand::Rng::gen(&mut rng);
        let abs_t = max_abs_t * T::lit(1e-4f64.powf(u));
        let x: Vec<T> = (0..n).map(|_| normal::<T, _>(&mut rng)).collect();
        let cov = ScaledCovariance::new(model, abs_t, Drift::Full)?;
        let e = model.flow_matrix(abs_t);
        let y = e.matvec(&x);
        let dx = cov.normalize(&x);
        let denom = dot(&dx, &dx);
        let cinv_y = cov.solve(&y);
        let equiv = (dot(&cinv_y, &y) / denom).to_f64_lossy();
        let bty = e.matvec(&bt.matvec(&x));
        let d2 = (dot(&cinv_y, &bty) * abs_t / denom).to_f64_lossy();
        let d3 = (dot(&cinv_y, &a0.matvec(&cinv_y)) * abs_t / denom).to_f64_lossy();
        lo = lo.min(equiv);
        hi = hi.max(equiv);
        drift = drift.max(d2.abs());
        a0_max = a0_max.max(d3);
    }
    Ok(SmallTimeReport {
        c_equiv: hi.max(1.0 / lo),
        c_drift: drift,
        c_a0: a0_max,
        max_abs_t: max_abs_t.to_f64_lossy(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::ModelSpec;
    use approx::assert_relative_eq;

    fn kolmogorov() -> ModelStructure<f64> {
        ModelSpec::kolmogorov().build().unwrap()
    }

    fn heat(n: usize) -> ModelStructure<f64> {
        ModelSpec::heat(n).build().unwrap()
    }

    /// Hand integral of [[1, -s], [-s, s²]].
    fn kolmogorov_closed_form(t: f64) -> [[f64; 2]; 2] {
        [[t, -t * t / 2.0], [-t * t / 2.0, t * t * t / 3.0]]
    }

    #[test]
    fn kolmogorov_covariance_matches_hand_integral() {
        let m = kolmogorov();
        for t in [0.1, 0.5, 1.0, 2.0] {
            let c = covariance_matrix(&m, t, Drift::Full).unwrap().c;
            let expect = kolmogorov_closed_form(t);
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(c[(i, j)], expect[i][j], max_relative = 1e-9);
                }
            }
            assert_relative_eq!(c.determinant(), t.powi(4) / 12.0, max_relative = 1e-9);
            let quad = covariance_by_quadrature(&m, t, Drift::Full, 1e-13).unwrap();
            assert!((&quad - &c).max_abs() <= 1e-10 * c.max_abs());
        }
        assert!(matches!(covariance_matrix(&m, 0.0, Drift::Full), Err(Error::NonpositiveTime(_))));
    }

    #[test]
    fn heat_covariance_is_scaled_identity() {
        let m = heat(3);
        let c = covariance_matrix(&m, 0.7, Drift::Full).unwrap().c;
        assert!((&c - &Matrix::identity(3).scale(0.7)).max_abs() <= 1e-12);
    }

    #[test]
    fn scaled_covariance_agrees_with_direct() {
        let spec = ModelSpec {
            n: 2,
            m: vec![1, 1],
            b: vec![vec![0.3, 1.0], vec![1.0, -0.2]],
        };
        let m: ModelStructure<f64> = spec.build().unwrap();
        for t in [0.05, 0.5, 1.5] {
            let direct = covariance_matrix(&m, t, Drift::Full).unwrap().c;
            let scaled = ScaledCovariance::new(&m, t, Drift::Full).unwrap();
            assert!((&direct - &scaled.covariance()).max_abs() <= 1e-12 * direct.max_abs());
            assert_relative_eq!(scaled.det(), direct.determinant(), max_relative = 1e-9);
            let inv = direct.inverse().unwrap();
            assert!((&inv - &scaled.inverse()).max_abs() <= 1e-8 * inv.max_abs());
        }
        // t^{-4} dynamic range is harmless in the normalized form
        let k = kolmogorov();
        let tiny = ScaledCovariance::new(&k, 1e-9, Drift::Full).unwrap();
        assert_relative_eq!(tiny.log_det(), (1e-36f64 / 12.0).ln(), max_relative = 1e-10);
    }

    #[test]
    fn kolmogorov_inverse_at_one() {
        let cov = ScaledCovariance::new(&kolmogorov(), 1.0, Drift::Full).unwrap();
        let inv = cov.inverse();
        let expect = [[4.0, 6.0], [6.0, 12.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(inv[(i, j)], expect[i][j], max_relative = 1e-10);
            }
        }
        assert_relative_eq!(cov.inverse_form(&[1.0, 0.0]), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn ode_residual_examples() {
        let k = kolmogorov();
        assert!(covariance_ode_residual(&k, 1.0).unwrap() <= 1e-6);
        assert!(covariance_ode_residual(&k, 0.01).unwrap() <= 1e-6);
        for t in [0.3, 2.0] {
            assert!(covariance_ode_residual(&heat(2), t).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn scaling_identity_example() {
        let k = kolmogorov();
        let c = covariance_matrix(&k, 0.25, Drift::Reduced).unwrap().c;
        assert_relative_eq!(c[(0, 0)], 0.25, max_relative = 1e-12);
        assert_relative_eq!(c[(0, 1)], -0.03125, max_relative = 1e-12);
        assert_relative_eq!(c[(1, 1)], 1.0 / 192.0, max_relative = 1e-12);
        assert!(scaling_identity_residual(&k, 0.25).unwrap() <= 1e-10);
        assert!(scaling_identity_residual(&k, 1.0).unwrap() <= 1e-14);
    }

    #[test]
    fn lemma21_constants_for_reduced_and_heat() {
        let k = kolmogorov();
        let rep = fit_lemma21_constants(&k, 1.0, Lemma21Grid::default()).unwrap();
        assert!(rep.c_t <= 1e-6, "C_T = {}", rep.c_t);
        assert_relative_eq!(rep.c_prime_t, 12.0, max_relative = 1e-6);
        assert!(rep.max_violation <= 0.0);
        let h = fit_lemma21_constants(&heat(2), 1.0, Lemma21Grid::default()).unwrap();
        assert_relative_eq!(h.c_prime_t, 1.0, max_relative = 1e-6);
        assert!(h.c_t <= 1e-6);
    }

    #[test]
    fn lemma21_constants_with_star_entry() {
        let spec = ModelSpec {
            n: 2,
            m: vec![1, 1],
            b: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        let m: ModelStructure<f64> = spec.build().unwrap();
        let rep = fit_lemma21_constants(&m, 1.0, Lemma21Grid::default()).unwrap();
        assert!(rep.c_t > 0.0 && rep.c_t.is_finite());
        assert!(rep.max_violation <= 0.0);
    }

    #[test]
    fn drift_identities_hold() {
        let spec = ModelSpec {
            n: 2,
            m: vec![1, 1],
            b: vec![vec![0.5, 1.0], vec![-1.0, 0.25]],
        };
        let m: ModelStructure<f64> = spec.build().unwrap();
        for (x, t) in [([1.0, 0.5], -0.3), ([-0.2, 2.0], -0.05), ([0.7, -0.1], -1.0)] {
            let r = drift_identity_residuals(&m, &x, t).unwrap();
            assert!(r.plain < 1e-6, "{r:?}");
            assert!(r.transported < 1e-6, "{r:?}");
        }
        assert!(drift_identity_residuals(&m, &[1.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn small_time_constants_are_finite() {
        let rep = small_time_equivalence(&kolmogorov(), 0.1, 500, 3).unwrap();
        assert!(rep.c_equiv >= 1.0 && rep.c_equiv.is_finite());
        assert!(rep.c_drift.is_finite() && rep.c_a0.is_finite());
    }
}
