//! Algebraic data of the operator: the drift matrix `B` with its block
//! layout, the anisotropy exponents, and the Lie group built from
//! `E(τ) = exp(-τ Bᵀ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Relative singular-value threshold for the superdiagonal rank test.
pub const RANK_REL_TOL: f64 = 1e-10;
/// Entries of structurally zero blocks must not exceed this in magnitude.
pub const STRUCTURAL_ZERO_TOL: f64 = 1e-14;

/// Wire form of a model: `{"N": int, "m": [int...], "B": [[float...]...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: Vec<usize>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

/// Validated block structure of the drift matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStructure<T> {
    n: usize,
    blocks: Vec<usize>,
    b: Matrix<T>,
    alpha: Vec<u32>,
    q: usize,
}

/// A point `z = (x, t)` of the space-time group.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePoint<T> {
    pub x: Vec<T>,
    pub t: T,
}

impl<T: Real> SpaceTimePoint<T> {
    pub fn new(x: Vec<T>, t: T) -> Self {
        Self { x, t }
    }

    pub fn origin(n: usize) -> Self {
        Self {
            x: vec![T::zero(); n],
            t: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }

    /// Flat `[x_1, ..., x_N, t]` layout used by the JSON interfaces.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.x.clone();
        v.push(self.t);
        v
    }

    pub fn from_flat(v: &[T]) -> Result<Self> {
        match v.split_last() {
            Some((&t, x)) if !x.is_empty() => Ok(Self { x: x.to_vec(), t }),
            _ => Err(Error::DimensionMismatch(
                "a space-time point needs at least one spatial coordinate and a time".into(),
            )),
        }
    }

    /// Largest coordinate difference, used for approximate comparisons.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.x
            .iter()
            .zip(&other.x)
            .map(|(a, b)| (*a - *b).abs())
            .fold((self.t - other.t).abs(), T::max)
    }
}

impl ModelSpec {
    pub fn kolmogorov() -> Self {
        Self {
            n: 2,
            m: vec![1, 1],
            b: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        }
    }

    pub fn heat(n: usize) -> Self {
        Self {
            n,
            m: vec![n],
            b: vec![vec![0.0; n]; n],
        }
    }

    pub fn build<T: Real>(&self) -> Result<ModelStructure<T>> {
        if self.b.len() != self.n || self.b.iter().any(|r| r.len() != self.n) {
            return Err(Error::DimensionMismatch(format!(
                "B must be {n}x{n} for N = {n}",
                n = self.n
            )));
        }
        let rows: Vec<Vec<T>> = self
            .b
            .iter()
            .map(|r| r.iter().map(|&v| T::lit(v)).collect())
            .collect();
        ModelStructure::validate(Matrix::from_rows(&rows)?, &self.m)
    }
}

impl<T: Real> ModelStructure<T> {
    /// Checks the block hypotheses on `B` and derives the exponents and `Q`.
    pub fn validate(b: Matrix<T>, m: &[usize]) -> Result<Self> {
        let n = b.rows();
        if !b.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{}, expected square",
                b.rows(),
                b.cols()
            )));
        }
        if m.is_empty() || m.contains(&0) {
            return Err(Error::DimensionMismatch(
                "block sizes must be a non-empty list of positive integers".into(),
            ));
        }
        let total: usize = m.iter().sum();
        if total != n {
            return Err(Error::DimensionMismatch(format!(
                "block sizes sum to {total}, but N = {n}"
            )));
        }
        if !b.is_finite() {
            return Err(Error::NonFiniteInput("B has non-finite entries".into()));
        }
        for k in 1..m.len() {
            if m[k] > m[k - 1] {
                return Err(Error::NonMonotoneBlocks {
                    index: k,
                    smaller: m[k - 1],
                    larger: m[k],
                });
            }
        }
        let offsets = block_offsets(m);
        let zero_tol = T::lit(STRUCTURAL_ZERO_TOL);
        for (kr, &size_r) in m.iter().enumerate() {
            for (kc, &size_c) in m.iter().enumerate().skip(kr + 2) {
                for i in offsets[kr]..offsets[kr] + size_r {
                    for j in offsets[kc]..offsets[kc] + size_c {
                        if b[(i, j)].abs() > zero_tol {
                            return Err(Error::NonzeroForbiddenBlock {
                                row: i,
                                col: j,
                                value: b[(i, j)].to_f64_lossy(),
                            });
                        }
                    }
                }
            }
        }
        for k in 1..m.len() {
            let bk = b.block(offsets[k - 1], offsets[k], m[k - 1], m[k]);
            let rank = bk.rank(T::lit(RANK_REL_TOL));
            if rank < m[k] {
                return Err(Error::RankDeficientSuperdiagonal {
                    block: k,
                    rank,
                    expected: m[k],
                });
            }
        }
        let alpha: Vec<u32> = m
            .iter()
            .enumerate()
            .flat_map(|(k, &size)| std::iter::repeat(2 * k as u32 + 1).take(size))
            .collect();
        let q = alpha.iter().map(|&a| a as usize).sum();
        Ok(Self {
            n,
            blocks: m.to_vec(),
            b,
            alpha,
            q,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            n: self.n,
            m: self.blocks.clone(),
            b: self
                .b
                .to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(Real::to_f64_lossy).collect())
                .collect(),
        }
    }

    /// Spatial dimension `N`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Size `m₀` of the diffused block.
    #[inline]
    pub fn m0(&self) -> usize {
        self.blocks[0]
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    /// Number `d` of superdiagonal blocks.
    pub fn depth(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn alpha(&self) -> &[u32] {
        &self.alpha
    }

    /// Homogeneous spatial dimension `Q = Σ (2k+1) m_k`.
    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    /// Operator 2-norm of `B`.
    pub fn drift_norm(&self) -> T {
        self.b.norm_spectral()
    }

    pub fn trace_b(&self) -> T {
        self.b.trace()
    }

    /// `A₀ = diag(I_{m₀}, 0)`.
    pub fn a0(&self) -> Matrix<T> {
        Matrix::from_fn(self.n, self.n, |i, j| {
            if i == j && i < self.m0() {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// The model whose drift keeps only the superdiagonal blocks of `B`.
    pub fn reduced(&self) -> Self {
        let offsets = block_offsets(&self.blocks);
        let mut b0 = Matrix::zeros(self.n, self.n);
        for k in 1..self.blocks.len() {
            let bk = self
                .b
                .block(offsets[k - 1], offsets[k], self.blocks[k - 1], self.blocks[k]);
            b0.set_block(offsets[k - 1], offsets[k], &bk);
        }
        Self {
            b: b0,
            ..self.clone()
        }
    }

    /// True when `B` has no entries outside the superdiagonal blocks.
    pub fn is_reduced(&self) -> bool {
        self.reduced().b == self.b
    }

    /// `E(τ) = exp(-τ Bᵀ)`.
    pub fn flow_matrix(&self, tau: T) -> Matrix<T> {
        self.b.transpose().scale(-tau).expm()
    }

    /// `(x, t) ∘ (ξ, τ) = (ξ + E(τ) x, t + τ)`.
    pub fn compose(&self, z: &SpaceTimePoint<T>, w: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        let e = self.flow_matrix(w.t);
        compose_with_flow(&e, z, w)
    }

    /// `(x, t)⁻¹ = (-E(-t) x, -t)`.
    pub fn inverse(&self, z: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        let e = self.flow_matrix(-z.t);
        SpaceTimePoint {
            x: e.matvec(&z.x).into_iter().map(|v| -v).collect(),
            t: -z.t,
        }
    }

    /// `ζ⁻¹ ∘ z = (x - E(t - τ) ξ, t - τ)` for `z = (x, t)`, `ζ = (ξ, τ)`.
    pub fn relative(&self, pole: &SpaceTimePoint<T>, z: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        let s = z.t - pole.t;
        let e = self.flow_matrix(s);
        relative_with_flow(&e, pole, z)
    }

    /// Spatial dilation factors `r^{α_i}` (the diagonal of `D_r`).
    pub fn spatial_dilation(&self, r: T) -> Vec<T> {
        self.alpha.iter().map(|&a| r.powi(a as i32)).collect()
    }

    /// `δ_r z`: coordinate `i` scaled by `r^{α_i}`, time by `r²`.
    pub fn dilate(&self, r: T, z: &SpaceTimePoint<T>) -> Result<SpaceTimePoint<T>> {
        if !(r > T::zero()) || !r.is_finite() {
            return Err(Error::NonpositiveScale(r.to_f64_lossy()));
        }
        Ok(self.dilate_unchecked(r, z))
    }

    pub(crate) fn dilate_unchecked(&self, r: T, z: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        SpaceTimePoint {
            x: z
                .x
                .iter()
                .zip(&self.alpha)
                .map(|(&v, &a)| v * r.powi(a as i32))
                .collect(),
            t: z.t * r * r,
        }
    }

    pub fn cast<U: Real>(&self) -> ModelStructure<U> {
        ModelStructure {
            n: self.n,
            blocks: self.blocks.clone(),
            b: self.b.cast(),
            alpha: self.alpha.clone(),
            q: self.q,
        }
    }
}

/// Start index of each block.
pub fn block_offsets(m: &[usize]) -> Vec<usize> {
    m.iter()
        .scan(0, |acc, &s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect()
}

/// Group composition with a precomputed `E(τ)` for `w = (ξ, τ)`.
pub fn compose_with_flow<T: Real>(
    e_tau: &Matrix<T>,
    z: &SpaceTimePoint<T>,
    w: &SpaceTimePoint<T>,
) -> SpaceTimePoint<T> {
    let ex = e_tau.matvec(&z.x);
    SpaceTimePoint {
        x: w.x.iter().zip(ex).map(|(&a, b)| a + b).collect(),
        t: z.t + w.t,
    }
}

/// `ζ⁻¹ ∘ z` with a precomputed `E(t - τ)`.
pub fn relative_with_flow<T: Real>(
    e_gap: &Matrix<T>,
    pole: &SpaceTimePoint<T>,
    z: &SpaceTimePoint<T>,
) -> SpaceTimePoint<T> {
    let moved = e_gap.matvec(&pole.x);
    SpaceTimePoint {
        x: z.x.iter().zip(moved).map(|(&a, b)| a - b).collect(),
        t: z.t - pole.t,
    }
}
