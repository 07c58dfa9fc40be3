//! Measurable diffusion coefficients `a(x, t)` on the first `m₀ × m₀` block.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampling::{stream_rng, uniform};
use crate::scalar::Real;
use crate::structure::ModelStructure;

/// Serializable description of a coefficient field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `a = I`.
    Identity {},
    /// A constant symmetric matrix.
    Constant { a: Vec<Vec<f64>> },
    /// `a = (midpoint + amplitude · sign(Π sin(ω x_i) · sin(ω t))) I`.
    Checkerboard {
        #[serde(default = "default_midpoint")]
        midpoint: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_omega")]
        omega: f64,
    },
}

fn default_midpoint() -> f64 {
    2.0
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_omega() -> f64 {
    8.0
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        Self::Identity {}
    }
}

impl CoefficientSpec {
    pub fn checkerboard() -> Self {
        Self::Checkerboard {
            midpoint: default_midpoint(),
            amplitude: default_amplitude(),
            omega: default_omega(),
        }
    }
}

type CustomFn<T> = Arc<dyn Fn(&[T], T) -> Matrix<T> + Send + Sync>;

#[derive(Clone)]
enum Kind<T> {
    Constant(Matrix<T>),
    Checkerboard { midpoint: T, amplitude: T, omega: T },
    Custom(CustomFn<T>),
}

/// `a(x, t)` together with the ellipticity constant `λ`.
#[derive(Clone)]
pub struct CoefficientField<T> {
    m0: usize,
    lambda: T,
    kind: Kind<T>,
}

impl<T: Real> fmt::Debug for CoefficientField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            Kind::Constant(_) => "constant",
            Kind::Checkerboard { .. } => "checkerboard",
            Kind::Custom(_) => "custom",
        };
        f.debug_struct("CoefficientField")
            .field("m0", &self.m0)
            .field("lambda", &self.lambda)
            .field("kind", &kind)
            .finish()
    }
}

impl<T: Real> CoefficientField<T> {
    pub fn identity(m0: usize) -> Self {
        Self {
            m0,
            lambda: T::one(),
            kind: Kind::Constant(Matrix::identity(m0)),
        }
    }

    pub fn constant(a: Matrix<T>, lambda: T) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!("coefficient is {}x{}", a.rows(), a.cols())));
        }
        Self::check_lambda(lambda)?;
        Ok(Self {
            m0: a.rows(),
            lambda,
            kind: Kind::Constant(a),
        })
    }

    pub fn checkerboard(m0: usize, midpoint: T, amplitude: T, omega: T) -> Result<Self> {
        if !(amplitude >= T::zero() && midpoint > amplitude) {
            return Err(Error::EllipticityViolation(format!(
                "checkerboard needs midpoint > amplitude ≥ 0, got {midpoint} and {amplitude}"
            )));
        }
        let hi = midpoint + amplitude;
        let lo = midpoint - amplitude;
        Ok(Self {
            m0,
            lambda: hi.max(T::one() / lo),
            kind: Kind::Checkerboard {
                midpoint,
                amplitude,
                omega,
            },
        })
    }

    pub fn custom(m0: usize, lambda: T, f: impl Fn(&[T], T) -> Matrix<T> + Send + Sync + 'static) -> Result<Self> {
        Self::check_lambda(lambda)?;
        Ok(Self {
            m0,
            lambda,
            kind: Kind::Custom(Arc::new(f)),
        })
    }

    pub fn from_spec(spec: &CoefficientSpec, m0: usize) -> Result<Self> {
        match spec {
            CoefficientSpec::Identity {} => Ok(Self::identity(m0)),
            CoefficientSpec::Constant { a } => {
                let a = Matrix::<f64>::from_rows(a)?.cast::<T>();
                if a.rows() != m0 {
                    return Err(Error::DimensionMismatch(format!("coefficient is {}x{}, m₀ = {m0}", a.rows(), a.cols())));
                }
                let eig = a.symmetrize().symmetric_eigen();
                let hi = eig.values.iter().fold(T::zero(), |acc, &v| acc.max(v));
                let lo = eig.values.iter().fold(T::infinity(), |acc, &v| acc.min(v));
                if !(lo > T::zero()) {
                    return Err(Error::EllipticityViolation(format!("constant coefficient has eigenvalue {lo}")));
                }
                Self::constant(a, hi.max(T::one() / lo))
            }
            CoefficientSpec::Checkerboard {
                midpoint,
                amplitude,
                omega,
            } => Self::checkerboard(m0, T::lit(*midpoint), T::lit(*amplitude), T::lit(*omega)),
        }
    }

    fn check_lambda(lambda: T) -> Result<()> {
        if lambda > T::zero() && lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::EllipticityViolation(format!("λ must be positive, got {lambda}")))
        }
    }

    /// Raises `λ` to `‖B‖` when the drift is larger, with a warning.
    pub fn with_model(mut self, model: &ModelStructure<T>) -> Result<Self> {
        if self.m0 != model.m0() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient block is {0}x{0}, model has m₀ = {1}",
                self.m0,
                model.m0()
            )));
        }
        let norm = model.drift_norm();
        if norm > self.lambda {
            log::warn!("raising λ from {} to ‖B‖ = {}", self.lambda, norm);
            self.lambda = norm;
        }
        Ok(self)
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant(_))
    }

    /// Scalar multiple of the identity everywhere.
    pub fn is_isotropic(&self) -> bool {
        match &self.kind {
            Kind::Checkerboard { .. } => true,
            Kind::Constant(a) => (0..self.m0).all(|i| (0..self.m0).all(|j| i == j || a[(i, j)] == T::zero()) && a[(i, i)] == a[(0, 0)]),
            Kind::Custom(_) => false,
        }
    }

    /// `a(x, t)`.
    pub fn eval(&self, x: &[T], t: T) -> Matrix<T> {
        match &self.kind {
            Kind::Constant(a) => a.clone(),
            Kind::Checkerboard { .. } => Matrix::identity(self.m0).scale(self.scalar(x, t)),
            Kind::Custom(f) => f(x, t),
        }
    }

    /// Entry `a_ij(x, t)`.
    pub fn entry(&self, i: usize, j: usize, x: &[T], t: T) -> T {
        match &self.kind {
            Kind::Constant(a) => a[(i, j)],
            Kind::Checkerboard { .. } => {
                if i == j {
                    self.scalar(x, t)
                } else {
                    T::zero()
                }
            }
            Kind::Custom(f) => f(x, t)[(i, j)],
        }
    }

    fn scalar(&self, x: &[T], t: T) -> T {
        match &self.kind {
            Kind::Checkerboard {
                midpoint,
                amplitude,
                omega,
            } => {
                let p = x.iter().fold((*omega * t).sin(), |acc, &v| acc * (*omega * v).sin());
                let sign = if p > T::zero() {
                    T::one()
                } else if p < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                *midpoint + *amplitude * sign
            }
            Kind::Constant(a) => a[(0, 0)],
            Kind::Custom(f) => f(x, t)[(0, 0)],
        }
    }

    /// Checks symmetry and `λ⁻¹|ξ|² ≤ ⟨aξ, ξ⟩ ≤ λ|ξ|²` at random samples in
    /// the box `lo ≤ (x, t) ≤ hi`.
    pub fn verify_ellipticity(&self, lo: &[T], hi: &[T], samples: usize, seed: u64) -> Result<()> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch("sampling box bounds differ in length".into()));
        }
        let n = lo.len() - 1;
        let mut rng = stream_rng(seed, 0);
        let inv = T::one() / self.lambda;
        let slack = T::lit(1e3) * T::epsilon() * self.lambda;
        for _ in 0..samples {
            let p: Vec<T> = lo.iter().zip(hi).map(|(&a, &b)| uniform(&mut rng, a, b)).collect();
            let a = self.eval(&p[..n], p[n]);
            if a.rows() != self.m0 || a.cols() != self.m0 {
                return Err(Error::DimensionMismatch(format!("coefficient returned {}x{}", a.rows(), a.cols())));
            }
            let asym = (&a - &a.transpose()).max_abs();
            if asym > slack * a.max_abs().max(T::one()) {
                return Err(Error::EllipticityViolation(format!("a is not symmetric at {p:?} (defect {asym})")));
            }
            let eig = a.symmetric_eigen();
            for &v in &eig.values {
                if v < inv - slack || v > self.lambda + slack {
                    return Err(Error::EllipticityViolation(format!(
                        "eigenvalue {v} of a at {p:?} outside [{inv}, {}]",
                        self.lambda
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::ModelSpec;

    #[test]
    fn checkerboard_defaults_give_lambda_three() {
        let c = CoefficientField::<f64>::from_spec(&CoefficientSpec::checkerboard(), 1).unwrap();
        assert_eq!(c.lambda(), 3.0);
        let v = c.entry(0, 0, &[0.1, 0.1], 0.1);
        assert_eq!(v, 3.0);
        let v = c.entry(0, 0, &[-0.1, 0.1], 0.1);
        assert_eq!(v, 1.0);
        c.verify_ellipticity(&[-1.0, -1.0, 0.0], &[1.0, 1.0, 1.0], 1000, 0).unwrap();
    }

    #[test]
    fn lambda_is_raised_to_drift_norm() {
        let m: ModelStructure<f64> = ModelSpec {
            n: 2,
            m: vec![1, 1],
            b: vec![vec![0.0, 5.0], vec![0.0, 0.0]],
        }
        .build()
        .unwrap();
        let c = CoefficientField::identity(1).with_model(&m).unwrap();
        assert!((c.lambda() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn ellipticity_violation_is_reported() {
        let c = CoefficientField::custom(1, 2.0, |x: &[f64], _| Matrix::identity(1).scale(if x[0] > 0.5 { 10.0 } else { 1.0 })).unwrap();
        let err = c.verify_ellipticity(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 200, 1).unwrap_err();
        assert!(matches!(err, Error::EllipticityViolation(_)));
        let asym = CoefficientField::custom(2, 2.0, |_: &[f64], _| Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap()).unwrap();
        assert!(asym.verify_ellipticity(&[0.0; 3], &[1.0; 3], 10, 0).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let spec: CoefficientSpec = serde_json::from_str(r#"{"kind":"checkerboard","omega":4.0}"#).unwrap();
        assert_eq!(
            spec,
            CoefficientSpec::Checkerboard {
                midpoint: 2.0,
                amplitude: 1.0,
                omega: 4.0
            }
        );
        assert!(serde_json::from_str::<CoefficientSpec>(r#"{"kind":"identity","x":1}"#).is_err());
        assert!(CoefficientField::<f64>::from_spec(&CoefficientSpec::Constant { a: vec![vec![-1.0]] }, 1).is_err());
    }
}
