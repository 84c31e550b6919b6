//! Uniform cell-centred grids, cell masks and connected components.

use std::collections::VecDeque;

use crate::domain::{BoundingBox, Region};
use crate::error::{Error, Result};
use crate::geometry::Point;

/// A box of `dims[0] x ... x dims[n-1]` cubic cells of side `h`. Cell
/// `(i_0, ..., i_{n-1})` spans `origin + h [i, i + 1]` per axis and has linear
/// index `i_0 + dims[0] (i_1 + dims[1] (...))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    origin: Vec<f64>,
    h: f64,
    dims: Vec<usize>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(origin: Vec<f64>, h: f64, dims: Vec<usize>) -> Result<Self> {
        if origin.len() != dims.len() {
            return Err(Error::DimensionMismatch { expected: dims.len(), got: origin.len() });
        }
        if dims.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one axis".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {h}")));
        }
        if dims.iter().any(|&d| d == 0) || origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid must have finite origin and nonzero extent".into()));
        }
        let mut strides = Vec::with_capacity(dims.len());
        let mut s = 1usize;
        for &d in &dims {
            strides.push(s);
            s = s
                .checked_mul(d)
                .ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
        }
        Ok(Grid { origin, h, dims, strides })
    }

    /// Smallest grid anchored at `bbox.min` with spacing `h` covering `bbox`.
    pub fn covering(bbox: &BoundingBox, h: f64) -> Result<Self> {
        if !bbox.is_finite() || bbox.is_empty() {
            return Err(Error::InvalidArgument("bounding box must be finite and nonempty".into()));
        }
        let dims = bbox
            .min
            .iter()
            .zip(&bbox.max)
            .map(|(a, b)| (((b - a) / h) - 1e-9).ceil().max(1.0) as usize)
            .collect();
        Grid::new(bbox.min.clone(), h, dims)
    }

    /// Grid with `res` cells along the longest side of `bbox`.
    pub fn with_resolution(bbox: &BoundingBox, res: usize) -> Result<Self> {
        if res == 0 {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        if !bbox.is_finite() || bbox.is_empty() {
            return Err(Error::InvalidArgument("bounding box must be finite and nonempty".into()));
        }
        let longest = bbox
            .min
            .iter()
            .zip(&bbox.max)
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max);
        if longest <= 0.0 {
            return Err(Error::InvalidArgument("bounding box is a point".into()));
        }
        Grid::covering(bbox, longest / res as f64)
    }

    /// Same lattice, dilated about the coordinate origin.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Grid::new(self.origin.iter().map(|v| v * s).collect(), self.h * s, self.dims.clone())
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::new(
            self.origin.clone(),
            self.origin.iter().zip(&self.dims).map(|(o, d)| o + self.h * *d as f64).collect(),
        )
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut m = Vec::with_capacity(self.dim());
        for &d in &self.dims {
            m.push(idx % d);
            idx /= d;
        }
        m
    }

    pub fn center_into(&self, idx: usize, out: &mut [f64]) {
        let mut r = idx;
        for (k, &d) in self.dims.iter().enumerate() {
            let i = r % d;
            r /= d;
            out[k] = self.origin[k] + (i as f64 + 0.5) * self.h;
        }
    }

    pub fn center(&self, idx: usize) -> Point {
        let mut c = vec![0.0; self.dim()];
        self.center_into(idx, &mut c);
        Point::new(c)
    }

    /// Cell containing `x`. Points within `1e-9 h` outside the outer boundary
    /// are clamped onto the nearest cell.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut idx = 0;
        for k in 0..self.dim() {
            let u = (x[k] - self.origin[k]) / self.h;
            let d = self.dims[k] as f64;
            if !(u >= -1e-9 && u <= d + 1e-9) {
                return Err(Error::OutsideGrid);
            }
            let i = (u.floor().max(0.0) as usize).min(self.dims[k] - 1);
            idx += i * self.strides[k];
        }
        Ok(idx)
    }

    /// Face neighbours of `idx` (at most `2n`).
    pub fn face_neighbors(&self, idx: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut r = idx;
        for k in 0..self.dim() {
            let i = r % self.dims[k];
            r /= self.dims[k];
            if i > 0 {
                out.push(idx - self.strides[k]);
            }
            if i + 1 < self.dims[k] {
                out.push(idx + self.strides[k]);
            }
        }
    }

    /// Neighbour of `idx` along signed axis direction, or `None` at the edge.
    pub fn step(&self, idx: usize, axis: usize, positive: bool) -> Option<usize> {
        let i = (idx / self.strides[axis]) % self.dims[axis];
        if positive {
            (i + 1 < self.dims[axis]).then(|| idx + self.strides[axis])
        } else {
            (i > 0).then(|| idx - self.strides[axis])
        }
    }

    /// Cell displaced by the integer vector `v`, if it stays inside the grid.
    pub fn offset(&self, idx: usize, v: &[i64]) -> Option<usize> {
        let mut out = idx as i64;
        for k in 0..self.dim() {
            let i = ((idx / self.strides[k]) % self.dims[k]) as i64 + v[k];
            if i < 0 || i >= self.dims[k] as i64 {
                return None;
            }
            out += v[k] * self.strides[k] as i64;
        }
        Some(out as usize)
    }
}

/// A set of grid cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMask {
    grid: Grid,
    bits: Vec<bool>,
}

impl CellMask {
    pub fn empty(grid: Grid) -> Self {
        let bits = vec![false; grid.len()];
        CellMask { grid, bits }
    }

    pub fn full(grid: Grid) -> Self {
        let bits = vec![true; grid.len()];
        CellMask { grid, bits }
    }

    pub fn from_bits(grid: Grid, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::InvalidArgument("mask length does not match the grid".into()));
        }
        Ok(CellMask { grid, bits })
    }

    /// Cells whose centre satisfies `pred`.
    pub fn from_predicate<F>(grid: Grid, pred: F) -> Self
    where
        F: Fn(&[f64]) -> bool + Sync,
    {
        let n = grid.dim();
        let eval = |i: usize, c: &mut Vec<f64>| {
            grid.center_into(i, c);
            pred(c)
        };
        #[cfg(feature = "parallel")]
        let bits = {
            use rayon::prelude::*;
            (0..grid.len())
                .into_par_iter()
                .map_init(|| vec![0.0; n], |c, i| eval(i, c))
                .collect()
        };
        #[cfg(not(feature = "parallel"))]
        let bits = {
            let mut c = vec![0.0; n];
            (0..grid.len()).map(|i| eval(i, &mut c)).collect()
        };
        CellMask { grid, bits }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn set(&mut self, idx: usize, v: bool) {
        self.bits[idx] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    pub fn and(&self, other: &CellMask) -> Result<CellMask> {
        self.same_grid(other)?;
        Ok(CellMask {
            grid: self.grid.clone(),
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn or(&self, other: &CellMask) -> Result<CellMask> {
        self.same_grid(other)?;
        Ok(CellMask {
            grid: self.grid.clone(),
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    fn same_grid(&self, other: &CellMask) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidArgument("masks live on different grids".into()));
        }
        Ok(())
    }

    /// Cells of this mask whose closed box touches the closure of `region`.
    pub fn touching(&self, region: &dyn Region) -> CellMask {
        let h = self.grid.h();
        let mut c = vec![0.0; self.grid.dim()];
        let mut out = CellMask::empty(self.grid.clone());
        for i in 0..self.bits.len() {
            if self.bits[i] {
                self.grid.center_into(i, &mut c);
                if region.touches_cell(&c, h) {
                    out.bits[i] = true;
                }
            }
        }
        out
    }
}

/// Cells whose centre lies in `region`. Fails if the grid does not cover the
/// region's bounding box.
pub fn rasterize(region: &dyn Region, grid: &Grid) -> Result<CellMask> {
    if region.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: region.dim() });
    }
    let bb = region.bounding_box();
    if !grid.bounding_box().contains_box(&bb, 1e-9 * grid.h()) {
        return Err(Error::GridDoesNotCover);
    }
    Ok(CellMask::from_predicate(grid.clone(), |x| region.contains(x)))
}

/// Like [`rasterize`] but only the part of the region inside the grid.
pub fn rasterize_clipped(region: &dyn Region, grid: &Grid) -> Result<CellMask> {
    if region.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: region.dim() });
    }
    Ok(CellMask::from_predicate(grid.clone(), |x| region.contains(x)))
}

/// Face-connected components of a mask; label `usize::MAX` marks cells
/// outside the mask.
#[derive(Clone, Debug)]
pub struct Components {
    grid: Grid,
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl Components {
    pub const NONE: usize = usize::MAX;

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> Option<usize> {
        let l = self.labels[idx];
        (l != Self::NONE).then_some(l)
    }

    pub fn size(&self, label: usize) -> Result<usize> {
        self.sizes.get(label).copied().ok_or(Error::UnknownLabel(label))
    }

    pub fn measure(&self, label: usize) -> Result<f64> {
        Ok(self.size(label)? as f64 * self.grid.cell_volume())
    }

    pub fn mask(&self, label: usize) -> Result<CellMask> {
        self.size(label)?;
        let bits = self.labels.iter().map(|l| *l == label).collect();
        CellMask::from_bits(self.grid.clone(), bits)
    }
}

/// Labels components by breadth-first flood fill in index order, so labels
/// are deterministic.
pub fn connected_components(mask: &CellMask) -> Components {
    let grid = mask.grid().clone();
    let mut labels = vec![Components::NONE; grid.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    let mut nb = Vec::with_capacity(2 * grid.dim());
    for start in 0..grid.len() {
        if !mask.get(start) || labels[start] != Components::NONE {
            continue;
        }
        let label = sizes.len();
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(c) = queue.pop_front() {
            size += 1;
            grid.face_neighbors(c, &mut nb);
            for &m in &nb {
                if mask.get(m) && labels[m] == Components::NONE {
                    labels[m] = label;
                    queue.push_back(m);
                }
            }
        }
        sizes.push(size);
    }
    Components { grid, labels, sizes }
}

pub fn component_measure(components: &Components, label: usize) -> Result<f64> {
    components.measure(label)
}

/// Mask cells with a face neighbour outside the mask or on the grid edge.
pub fn boundary_cells(mask: &CellMask) -> CellMask {
    let grid = mask.grid();
    let mut out = CellMask::empty(grid.clone());
    let mut nb = Vec::new();
    for c in mask.cells() {
        grid.face_neighbors(c, &mut nb);
        if nb.len() < 2 * grid.dim() || nb.iter().any(|&m| !mask.get(m)) {
            out.set(c, true);
        }
    }
    out
}
