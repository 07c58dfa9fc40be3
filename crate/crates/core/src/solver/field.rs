use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid, GriddedFunction};
use crate::scalar::Real;
use crate::structure::{ModelSpec, SpaceTimePoint};

/// Time slices of a numerical solution on a fixed spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField<T> {
    space: Vec<Axis>,
    model: ModelSpec,
    times: Vec<T>,
    slices: Vec<Vec<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    model: ModelSpec,
    space: Vec<Axis>,
    times: Vec<f64>,
    files: Vec<String>,
    #[serde(default)]
    config: serde_json::Value,
}

impl<T: Real> SolutionField<T> {
    pub fn new(space: Vec<Axis>, model: ModelSpec) -> Self {
        Self {
            space,
            model,
            times: Vec::new(),
            slices: Vec::new(),
        }
    }

    /// Samples `f(x, t)` on `space` at each of `times`.
    pub fn from_fn(space: Vec<Axis>, model: ModelSpec, times: &[T], f: impl Fn(&[T], T) -> T + Sync) -> Result<Self> {
        let grid = Grid::slice(space.clone(), 0.0)?;
        let nodes = grid.nodes::<T>();
        let mut out = Self::new(space, model);
        for &t in times {
            out.push(t, nodes.par_iter().map(|x| f(x, t)).collect())?;
        }
        Ok(out)
    }

    /// Appends a slice; times must increase.
    pub fn push(&mut self, t: T, values: Vec<T>) -> Result<()> {
        let n: usize = self.space.iter().map(Axis::nodes).product();
        if values.len() != n {
            return Err(Error::DimensionMismatch(format!("slice of {} values, grid has {n}", values.len())));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidArgument(format!("slice time {t} after {last}")));
            }
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("slice value at node {k}")));
        }
        self.times.push(t);
        self.slices.push(values);
        Ok(())
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn space(&self) -> &[Axis] {
        &self.space
    }

    pub fn spatial_grid(&self) -> Grid {
        Grid {
            space: self.space.clone(),
            time: Axis::point(self.times.first().map_or(0.0, |t| t.to_f64_lossy())),
        }
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn slice(&self, k: usize) -> &[T] {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[Vec<T>] {
        &self.slices
    }

    pub fn last(&self) -> Option<&[T]> {
        self.slices.last().map(Vec::as_slice)
    }

    /// Applies `f` to every value.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            space: self.space.clone(),
            model: self.model.clone(),
            times: self.times.clone(),
            slices: self
                .slices
                .iter()
                .map(|s| s.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    /// Slice `k` as a single-time gridded function.
    pub fn slice_function(&self, k: usize) -> Result<GriddedFunction<T>> {
        let grid = Grid::slice(self.space.clone(), self.times[k].to_f64_lossy())?;
        GriddedFunction::new(grid, self.slices[k].clone())
    }

    /// All values at space-time node `(k, flat)` as a point and value.
    pub fn node(&self, k: usize, flat: usize) -> (SpaceTimePoint<T>, T) {
        let g = self.spatial_grid();
        (SpaceTimePoint::new(g.node(flat), self.times[k]), self.slices[k][flat])
    }

    /// Writes `slice_NNNNN.bin` files in the gridded-function format and a
    /// `manifest.json` listing times and files.
    pub fn save(&self, dir: impl AsRef<Path>, config: serde_json::Value) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let name = format!("slice_{k:05}.bin");
            self.slice_function(k)?.write(dir.join(&name))?;
            files.push(name);
        }
        let manifest = Manifest {
            model: self.model.clone(),
            space: self.space.clone(),
            times: self.times.iter().map(|t| t.to_f64_lossy()).collect(),
            files,
            config,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.times.len() != manifest.files.len() {
            return Err(Error::Format("manifest times and files differ in length".into()));
        }
        let mut out = Self::new(manifest.space.clone(), manifest.model);
        for (t, name) in manifest.times.iter().zip(&manifest.files) {
            let f = GriddedFunction::<T>::read(dir.join(name))?;
            if f.grid().space != manifest.space {
                return Err(Error::Format(format!("{name} has a different spatial grid")));
            }
            out.push(T::lit(*t), f.into_values())?;
        }
        Ok(out)
    }
}
