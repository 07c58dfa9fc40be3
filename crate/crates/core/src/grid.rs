//! Tensor-product space-time grids and gridded functions.
//!
//! File layout: an unsigned 64-bit little-endian header length, the header
//! as UTF-8 JSON, then every value as a little-endian `f64`, row-major with
//! time slowest and the last spatial axis fastest.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `steps + 1` equispaced nodes on `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        Self { min, max, steps }
    }

    /// A single node at `at`.
    pub fn point(at: f64) -> Self {
        Self {
            min: at,
            max: at,
            steps: 0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn step(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            (self.max - self.min) / self.steps as f64
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i == self.steps {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }

    /// Trapezoid weight of node `i` in units of the step.
    pub fn trapezoid(&self, i: usize) -> f64 {
        if self.steps == 0 {
            1.0
        } else if i == 0 || i == self.steps {
            0.5
        } else {
            1.0
        }
    }

    /// Refined axis with the step halved.
    pub fn refined(&self) -> Self {
        Self {
            steps: self.steps * 2,
            ..*self
        }
    }

    fn validate(&self, what: &str, allow_point: bool) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::NonFiniteInput(format!("{what} axis bounds")));
        }
        let ok = if self.steps == 0 {
            allow_point && self.min == self.max
        } else {
            self.max > self.min
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{what} axis [{}, {}] with {} steps",
                self.min, self.max, self.steps
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub space: Vec<Axis>,
    pub time: Axis,
}

impl Grid {
    pub fn new(space: Vec<Axis>, time: Axis) -> Result<Self> {
        if space.is_empty() {
            return Err(Error::DimensionMismatch("grid needs at least one spatial axis".into()));
        }
        for (i, a) in space.iter().enumerate() {
            a.validate(&format!("spatial {i}"), false)?;
        }
        time.validate("time", true)?;
        Ok(Self { space, time })
    }

    /// Spatial grid at a single time.
    pub fn slice(space: Vec<Axis>, t: f64) -> Result<Self> {
        Self::new(space, Axis::point(t))
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn spatial_len(&self) -> usize {
        self.space.iter().map(Axis::nodes).product()
    }

    pub fn time_len(&self) -> usize {
        self.time.nodes()
    }

    pub fn len(&self) -> usize {
        self.spatial_len() * self.time_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> Vec<f64> {
        self.space.iter().map(Axis::step).collect()
    }

    /// Strides of the spatial axes inside one time slice.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.dim()];
        for k in (0..self.dim().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.space[k + 1].nodes();
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            let n = self.space[k].nodes();
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    /// Coordinates of spatial node `flat`.
    pub fn node<T: Real>(&self, flat: usize) -> Vec<T> {
        self.multi_index(flat)
            .iter()
            .zip(&self.space)
            .map(|(&i, a)| T::lit(a.coord(i)))
            .collect()
    }

    pub fn nodes<T: Real>(&self) -> Vec<Vec<T>> {
        (0..self.spatial_len()).map(|k| self.node(k)).collect()
    }

    pub fn time_at<T: Real>(&self, it: usize) -> T {
        T::lit(self.time.coord(it))
    }

    pub fn spatial_cell_volume(&self) -> f64 {
        self.space.iter().map(Axis::step).product()
    }

    /// Product of all steps; the time step counts only when the time axis has
    /// more than one node.
    pub fn cell_volume(&self) -> f64 {
        let dt = if self.time.steps == 0 { 1.0 } else { self.time.step() };
        self.spatial_cell_volume() * dt
    }

    /// Product trapezoid weight (in cell units) of spatial node `flat`.
    pub fn spatial_trapezoid(&self, flat: usize) -> f64 {
        self.multi_index(flat)
            .iter()
            .zip(&self.space)
            .map(|(&i, a)| a.trapezoid(i))
            .product()
    }

    /// Whether node `flat` lies on the boundary of the spatial box.
    pub fn is_boundary(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.space)
            .any(|(&i, a)| i == 0 || i == a.steps)
    }

    /// All axes, space and time, refined by two.
    pub fn refined(&self) -> Self {
        Self {
            space: self.space.iter().map(Axis::refined).collect(),
            time: self.time.refined(),
        }
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.space).all(|(&v, a)| v >= a.min && v <= a.max)
    }
}

/// Values on every node of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedFunction<T> {
    grid: Grid,
    values: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    space: Vec<Axis>,
    time: Axis,
    count: usize,
}

const FORMAT: &str = "ultrakfp-gridded-function";

impl<T: Real> GriddedFunction<T> {
    pub fn new(grid: Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![T::zero(); n],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[T], T) -> T) -> Self {
        let nodes = grid.nodes::<T>();
        let mut values = Vec::with_capacity(grid.len());
        for it in 0..grid.time_len() {
            let t = grid.time_at::<T>(it);
            values.extend(nodes.iter().map(|x| f(x, t)));
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn time_slice(&self, it: usize) -> &[T] {
        let n = self.grid.spatial_len();
        &self.values[it * n..(it + 1) * n]
    }

    pub fn get(&self, it: usize, flat: usize) -> T {
        self.values[it * self.grid.spatial_len() + flat]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `a·self + b·other` on the same grid.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch("functions live on different grids".into()));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(&u, &v)| a * u + b * v).collect(),
        })
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// `(Σ |u|^p · cell volume)^{1/p}`.
    pub fn lp_norm(&self, p: T) -> T {
        let vol = T::lit(self.grid.cell_volume());
        let sum: T = self.values.iter().map(|&v| v.abs().powf(p)).sum();
        (sum * vol).powf(T::one() / p)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            format: FORMAT.into(),
            version: 1,
            space: self.grid.space.clone(),
            time: self.grid.time,
            count: self.values.len(),
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + 8 * self.values.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format != FORMAT || header.version != 1 {
            return Err(bad("unknown format or version"));
        }
        let grid = Grid::new(header.space, header.time)?;
        if header.count != grid.len() {
            return Err(bad("value count does not match the grid"));
        }
        let data = &bytes[8 + hlen..];
        if data.len() != 8 * header.count {
            return Err(bad("value payload has the wrong length"));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::new(grid, values)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(vec![Axis::new(-1.0, 1.0, 4), Axis::new(0.0, 1.0, 2)], Axis::new(0.0, 1.0, 3)).unwrap()
    }

    #[test]
    fn indexing_is_row_major() {
        let g = grid();
        assert_eq!(g.spatial_len(), 15);
        assert_eq!(g.len(), 60);
        assert_eq!(g.strides(), vec![3, 1]);
        assert_eq!(g.multi_index(7), vec![2, 1]);
        assert_eq!(g.flat_index(&[2, 1]), 7);
        assert_eq!(g.node::<f64>(7), vec![0.0, 0.5]);
        assert!(g.is_boundary(0) && !g.is_boundary(7));
    }

    #[test]
    fn bytes_round_trip() {
        let f = GriddedFunction::<f64>::from_fn(grid(), |x, t| x[0] + 10.0 * x[1] + 100.0 * t);
        let bytes = f.to_bytes().unwrap();
        let back = GriddedFunction::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(f, back);
        assert!((back.get(1, 7) - (5.0 + 100.0 / 3.0)).abs() < 1e-12);
        let mut cut = bytes.clone();
        cut.pop();
        assert!(GriddedFunction::<f64>::from_bytes(&cut).is_err());
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(Grid::new(vec![Axis::new(0.0, 1.0, 0)], Axis::point(0.0)).is_err());
        assert!(Grid::new(vec![Axis::new(1.0, 0.0, 4)], Axis::point(0.0)).is_err());
        assert!(Grid::new(vec![Axis::new(0.0, 1.0, 4)], Axis::new(0.0, 1.0, 0)).is_err());
        assert!(GriddedFunction::<f64>::new(grid(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn lp_norm_of_constant() {
        let f = GriddedFunction::<f64>::from_fn(grid(), |_, _| 2.0);
        let vol = 0.5 * 0.5 * (1.0 / 3.0);
        let expect = (60.0 * vol * 8.0f64).powf(1.0 / 3.0);
        assert!((f.lp_norm(3.0) - expect).abs() < 1e-12);
    }
}
