//! Densities, polygonal paths, curve families and the shortest-path oracle.
//!
//! The ρ-length of a segment is evaluated with a midpoint rule: the segment
//! is cut into `m >= 2 len / h` equal pieces and each piece contributes its
//! length times ρ at the cell holding its midpoint. `m` is bumped until no
//! midpoint sits on a cell face, so the cell lookup is never ambiguous. The
//! grid graph uses exactly the same rule for its edge weights, which makes
//! the length reported by the oracle equal to [`rho_length`] of the returned
//! path.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{point_segment_dist, DomainSpec, Region};
use crate::error::{Error, Result};
use crate::geometry::{euclid_dist_unchecked, Point};
use crate::grid::{CellMask, Grid};
use crate::qc::PointMap;

/// Nonnegative per-cell density on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "density has {} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("density values must be finite and >= 0".into()));
        }
        Ok(DensityField { grid, values })
    }

    pub fn constant(grid: Grid, v: f64) -> Result<Self> {
        let values = vec![v; grid.len()];
        DensityField::new(grid, values)
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        DensityField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at the cell containing `x`.
    pub fn at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.values[self.grid.locate(x)?])
    }

    /// `sum rho^p h^n`.
    pub fn energy(&self, p: f64) -> f64 {
        self.values.iter().map(|v| v.powf(p)).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn scaled(&self, s: f64) -> Result<DensityField> {
        DensityField::new(self.grid.clone(), self.values.iter().map(|v| v * s).collect())
    }

    /// Writes one row per cell: centre coordinates then the value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.grid.dim();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..n).map(|k| format!("x{k}")).collect();
        header.push("rho".into());
        wtr.write_record(&header)?;
        let mut c = vec![0.0; n];
        for (i, v) in self.values.iter().enumerate() {
            self.grid.center_into(i, &mut c);
            let mut rec: Vec<String> = c.iter().map(|x| format!("{x:.17e}")).collect();
            rec.push(format!("{v:.17e}"));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Polygonal path. Consecutive vertices are distinct; a single vertex is a
/// constant path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct DiscretePath {
    vertices: Vec<Point>,
}

impl TryFrom<Vec<Point>> for DiscretePath {
    type Error = Error;

    fn try_from(v: Vec<Point>) -> Result<Self> {
        DiscretePath::new(v)
    }
}

impl From<DiscretePath> for Vec<Point> {
    fn from(p: DiscretePath) -> Self {
        p.vertices
    }
}

impl DiscretePath {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        let first = vertices.first().ok_or(Error::EmptySet)?;
        let n = first.dim();
        for v in &vertices {
            v.check_dim(n)?;
            if !v.is_finite() {
                return Err(Error::InvalidArgument("path vertex is not finite".into()));
            }
        }
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("consecutive path vertices coincide".into()));
        }
        Ok(DiscretePath { vertices })
    }

    /// Drops consecutive repeats before validating.
    pub fn new_dedup(mut vertices: Vec<Point>) -> Result<Self> {
        vertices.dedup();
        DiscretePath::new(vertices)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].dim()
    }

    pub fn is_constant(&self) -> bool {
        self.vertices.len() == 1
    }

    pub fn first(&self) -> &Point {
        &self.vertices[0]
    }

    pub fn last(&self) -> &Point {
        &self.vertices[self.vertices.len() - 1]
    }

    /// Path through the centres of the given cells.
    pub fn through_cells(grid: &Grid, cells: &[usize]) -> Result<Self> {
        DiscretePath::new(cells.iter().map(|&c| grid.center(c)).collect())
    }

    pub fn reversed(&self) -> DiscretePath {
        let mut v = self.vertices.clone();
        v.reverse();
        DiscretePath { vertices: v }
    }

    /// Distance from `x` to the path's trace.
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        if self.is_constant() {
            return euclid_dist_unchecked(x, &self.vertices[0]);
        }
        self.vertices
            .windows(2)
            .map(|w| point_segment_dist(x, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn euclid_length(path: &DiscretePath) -> f64 {
    path.vertices.windows(2).map(|w| euclid_dist_unchecked(&w[0], &w[1])).sum()
}

/// Sparse linear functional `rho -> sum coef[i] rho[cells[i]]`, cells sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub cells: Vec<usize>,
    pub coef: Vec<f64>,
}

impl Row {
    fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Row {
        pairs.sort_by_key(|p| p.0);
        let mut cells = Vec::with_capacity(pairs.len());
        let mut coef: Vec<f64> = Vec::with_capacity(pairs.len());
        for (c, w) in pairs {
            if cells.last() == Some(&c) {
                *coef.last_mut().unwrap() += w;
            } else {
                cells.push(c);
                coef.push(w);
            }
        }
        Row { cells, coef }
    }

    pub fn dot(&self, rho: &[f64]) -> f64 {
        self.cells.iter().zip(&self.coef).map(|(c, a)| a * rho[*c]).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

const FACE_CLEARANCE: f64 = 1e-7;

/// Number of midpoint pieces for the segment `a + t d` given in cell units
/// (coordinates relative to the grid origin, divided by h).
fn piece_count(a: &[f64], d: &[f64]) -> usize {
    let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let m0 = ((2.0 * len).ceil() as usize).max(1);
    'outer: for m in m0..m0 + 64 {
        for k in 0..m {
            let t = (k as f64 + 0.5) / m as f64;
            for i in 0..a.len() {
                let u = a[i] + t * d[i];
                let f = u - u.floor();
                if f.min(1.0 - f) < FACE_CLEARANCE {
                    continue 'outer;
                }
            }
        }
        return m;
    }
    m0
}

fn segment_samples(grid: &Grid, a: &[f64], b: &[f64], out: &mut Vec<(usize, f64)>) -> Result<()> {
    let n = grid.dim();
    let h = grid.h();
    let o = grid.origin();
    let au: Vec<f64> = (0..n).map(|i| (a[i] - o[i]) / h).collect();
    let du: Vec<f64> = (0..n).map(|i| (b[i] - a[i]) / h).collect();
    let len = euclid_dist_unchecked(a, b);
    let m = piece_count(&au, &du);
    let w = len / m as f64;
    let mut x = vec![0.0; n];
    for k in 0..m {
        let t = (k as f64 + 0.5) / m as f64;
        for i in 0..n {
            x[i] = a[i] + t * (b[i] - a[i]);
        }
        out.push((grid.locate(&x)?, w));
    }
    Ok(())
}

/// Quadrature row of a path on a grid. Fails if any vertex leaves the grid.
pub fn path_row(grid: &Grid, path: &DiscretePath) -> Result<Row> {
    if path.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: path.dim() });
    }
    for v in path.vertices() {
        grid.locate(v)?;
    }
    let mut pairs = Vec::new();
    for w in path.vertices.windows(2) {
        segment_samples(grid, &w[0], &w[1], &mut pairs)?;
    }
    Ok(Row::from_pairs(pairs))
}

/// Discrete ρ-length of a path.
pub fn rho_length(rho: &DensityField, path: &DiscretePath) -> Result<f64> {
    Ok(path_row(rho.grid(), path)?.dot(rho.values()))
}

/// Outcome of an admissibility test on a sample of paths.
#[derive(Clone, Debug, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    /// Index of the path with the smallest ρ-length.
    pub worst: usize,
    pub min_length: f64,
}

/// Checks `rho_length >= 1 - tol` on every sampled path.
pub fn is_admissible(rho: &DensityField, sample: &[DiscretePath], tol: f64) -> Result<Admissibility> {
    if sample.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut worst = 0;
    let mut min_length = f64::INFINITY;
    for (i, p) in sample.iter().enumerate() {
        let l = rho_length(rho, p)?;
        if l < min_length {
            min_length = l;
            worst = i;
        }
    }
    Ok(Admissibility { admissible: min_length >= 1.0 - tol, worst, min_length })
}

/// Subdivides each segment into pieces no longer than `h / 2` and maps every
/// vertex.
pub fn push_path(path: &DiscretePath, f: &dyn PointMap, h: f64) -> Result<DiscretePath> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("subdivision step must be positive".into()));
    }
    if f.dim() != path.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: path.dim() });
    }
    let mut out = vec![f.apply(path.first())?];
    for w in path.vertices.windows(2) {
        let len = euclid_dist_unchecked(&w[0], &w[1]);
        let m = ((2.0 * len / h).ceil() as usize).max(1);
        for k in 1..=m {
            out.push(f.apply(&w[0].lerp(&w[1], k as f64 / m as f64))?);
        }
    }
    DiscretePath::new_dedup(out)
}

/// A path family given symbolically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FamilySpec {
    /// A finite list of paths.
    Explicit { paths: Vec<DiscretePath> },
    /// All paths joining `from` to `to` inside `domain`.
    Join { from: DomainSpec, to: DomainSpec, domain: DomainSpec },
}

impl FamilySpec {
    pub fn join(from: DomainSpec, to: DomainSpec, domain: DomainSpec) -> Self {
        FamilySpec::Join { from, to, domain }
    }

    pub fn dim(&self) -> usize {
        match self {
            FamilySpec::Explicit { paths } => paths.first().map_or(0, |p| p.dim()),
            FamilySpec::Join { domain, .. } => domain.dim(),
        }
    }
}

/// Neighbourhood used by the grid graph. `Face` joins face-adjacent cells;
/// `Radius(k)` joins a cell to every cell whose offset `v` has
/// `max |v_i| <= k` and coprime entries (so no edge is a multiple of a
/// shorter one). `Radius(2)` is the 16-neighbour stencil in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    #[default]
    Face,
    Radius(usize),
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Stencil {
    pub fn offsets(&self, n: usize) -> Vec<Vec<i64>> {
        match *self {
            Stencil::Face => {
                let mut out = Vec::new();
                for k in 0..n {
                    for s in [-1, 1] {
                        let mut v = vec![0; n];
                        v[k] = s;
                        out.push(v);
                    }
                }
                out
            }
            Stencil::Radius(r) => {
                let r = r.max(1) as i64;
                let side = (2 * r + 1) as usize;
                let mut out = Vec::new();
                for code in 0..side.pow(n as u32) {
                    let mut c = code;
                    let v: Vec<i64> = (0..n)
                        .map(|_| {
                            let d = (c % side) as i64 - r;
                            c /= side;
                            d
                        })
                        .collect();
                    let g = v.iter().fold(0, |g, x| gcd(g, *x));
                    if g == 1 {
                        out.push(v);
                    }
                }
                out
            }
        }
    }
}

struct EdgeTemplate {
    linear: i64,
    samples: Vec<(i64, f64)>,
    valid: Vec<bool>,
}

/// Cells of a mask joined by the stencil's edges. An edge exists when every
/// quadrature sample of the centre-to-centre segment falls in the mask.
pub struct GridGraph {
    mask: CellMask,
    stencil: Stencil,
    templates: Vec<EdgeTemplate>,
}

impl GridGraph {
    pub fn new(mask: &CellMask, stencil: Stencil) -> Self {
        let grid = mask.grid();
        let n = grid.dim();
        let h = grid.h();
        let strides = grid.strides();
        let lin = |v: &[i64]| -> i64 { v.iter().zip(strides).map(|(a, s)| a * *s as i64).sum() };
        let mut templates = Vec::new();
        for offset in stencil.offsets(n) {
            let d: Vec<f64> = offset.iter().map(|v| *v as f64).collect();
            let a = vec![0.5; n];
            let m = piece_count(&a, &d);
            let len = d.iter().map(|v| v * v).sum::<f64>().sqrt() * h;
            let mut pairs = Vec::with_capacity(m);
            for k in 0..m {
                let t = (k as f64 + 0.5) / m as f64;
                let cell: Vec<i64> = d.iter().map(|di| (0.5 + t * di).floor() as i64).collect();
                pairs.push((lin(&cell), len / m as f64));
            }
            pairs.sort_by_key(|p| p.0);
            let mut samples: Vec<(i64, f64)> = Vec::new();
            for (c, w) in pairs {
                match samples.last_mut() {
                    Some(last) if last.0 == c => last.1 += w,
                    _ => samples.push((c, w)),
                }
            }
            let linear = lin(&offset);
            let valid = (0..grid.len())
                .map(|u| {
                    mask.get(u)
                        && grid.offset(u, &offset).is_some_and(|v| mask.get(v))
                        && samples.iter().all(|(o, _)| mask.get((u as i64 + o) as usize))
                })
                .collect();
            templates.push(EdgeTemplate { linear, samples, valid });
        }
        GridGraph { mask: mask.clone(), stencil, templates }
    }

    pub fn mask(&self) -> &CellMask {
        &self.mask
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    /// Neighbours of `u` with edge weights under `rho`.
    pub fn edges<'a>(&'a self, u: usize, rho: &'a [f64]) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.templates.iter().filter(move |t| t.valid[u]).map(move |t| {
            let w: f64 = t.samples.iter().map(|(o, a)| a * rho[(u as i64 + o) as usize]).sum();
            ((u as i64 + t.linear) as usize, w)
        })
    }

    /// Direction (axis, positive) of the face used for a terminal half-cell.
    fn stub_axis(&self, c: usize, toward: Option<usize>) -> (usize, bool) {
        let grid = self.mask.grid();
        for k in 0..grid.dim() {
            for pos in [false, true] {
                match grid.step(c, k, pos) {
                    None => return (k, pos),
                    Some(m) if !self.mask.get(m) => return (k, pos),
                    _ => {}
                }
            }
        }
        match toward {
            Some(t) => {
                // point away from the neighbouring path vertex
                let a = grid.multi_index(c);
                let b = grid.multi_index(t);
                let mut best = (0, true);
                let mut best_mag = -1i64;
                for k in 0..grid.dim() {
                    let v = a[k] as i64 - b[k] as i64;
                    if v.abs() > best_mag {
                        best_mag = v.abs();
                        best = (k, v > 0);
                    }
                }
                best
            }
            None => (0, false),
        }
    }

    fn stub_point(&self, c: usize, toward: Option<usize>, fallback_positive: bool) -> Point {
        let grid = self.mask.grid();
        let (k, mut pos) = self.stub_axis(c, toward);
        if toward.is_none() && !self.has_outside_face(c) {
            pos = fallback_positive;
        }
        let mut x = grid.center(c).into_inner();
        x[k] += if pos { 0.5 } else { -0.5 } * grid.h();
        Point::new(x)
    }

    fn has_outside_face(&self, c: usize) -> bool {
        let grid = self.mask.grid();
        (0..grid.dim()).any(|k| {
            [false, true]
                .iter()
                .any(|&pos| grid.step(c, k, pos).is_none_or(|m| !self.mask.get(m)))
        })
    }

    /// Turns a cell sequence into a path with half-cell stubs at both ends.
    pub fn cells_to_path(&self, cells: &[usize]) -> Result<DiscretePath> {
        let first = *cells.first().ok_or(Error::EmptySet)?;
        let last = *cells.last().unwrap();
        let half = |c: usize| Stub { seed: c, cell: c, anchor: None, samples: Vec::new() };
        self.cells_to_path_between(cells, &half(first), &half(last))
    }

    fn cells_to_path_between(&self, cells: &[usize], start: &Stub, end: &Stub) -> Result<DiscretePath> {
        let grid = self.mask.grid();
        let first = *cells.first().ok_or(Error::EmptySet)?;
        let last = *cells.last().unwrap();
        let single = cells.len() == 1;
        let start = match &start.anchor {
            Some(q) => q.clone(),
            None => self.stub_point(first, (!single).then(|| cells[1]), false),
        };
        let end = match &end.anchor {
            Some(q) => q.clone(),
            None => self.stub_point(last, (!single).then(|| cells[cells.len() - 2]), true),
        };
        let mut v = Vec::with_capacity(cells.len() + 2);
        v.push(start);
        v.extend(cells.iter().map(|&c| grid.center(c)));
        v.push(end);
        DiscretePath::new_dedup(v)
    }
}

/// Result of a shortest-path query.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortestPath {
    pub path: DiscretePath,
    pub cells: Vec<usize>,
    pub length: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Key {
    dist: f64,
    edges: u32,
    first: usize,
}

impl Key {
    const MAX: Key = Key { dist: f64::INFINITY, edges: u32::MAX, first: usize::MAX };

    fn cmp(&self, o: &Key) -> Ordering {
        self.dist
            .total_cmp(&o.dist)
            .then(self.edges.cmp(&o.edges))
            .then(self.first.cmp(&o.first))
    }
}

#[derive(PartialEq)]
struct Entry(Key, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap
        other.0.cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Dijkstra from `sources` to `targets` with half-cell terminal costs. Ties
/// are broken by edge count, then by starting cell, then by target cell.
pub fn shortest_cells(
    graph: &GridGraph,
    rho: &[f64],
    sources: &[usize],
    targets: &[bool],
) -> Result<ShortestPath> {
    let half = 0.5 * graph.mask.grid().h();
    let stub = |c: usize| Stub { seed: c, cell: c, anchor: None, samples: vec![(c, half)] };
    let mut exits: HashMap<usize, Vec<Stub>> = HashMap::new();
    for (c, _) in targets.iter().enumerate().filter(|(_, t)| **t) {
        exits.insert(c, vec![stub(c)]);
    }
    let term = Terminals { entries: sources.iter().map(|&c| stub(c)).collect(), exits };
    shortest_with(graph, &term, rho, f64::NEG_INFINITY, 1).map(|mut v| v.swap_remove(0))
}

/// A straight piece of path between an end-set anchor and a cell centre.
/// Without an anchor it stands for a half-cell stub through a face of
/// `seed`.
#[derive(Clone, Debug)]
struct Stub {
    seed: usize,
    cell: usize,
    anchor: Option<Point>,
    samples: Vec<(usize, f64)>,
}

impl Stub {
    fn cost(&self, rho: &[f64]) -> f64 {
        self.samples.iter().map(|(c, a)| a * rho[*c]).sum()
    }
}

/// Entry and exit pieces of a join family. From the anchor of a seed cell
/// a path may run straight to the centre of the seed or of any stencil
/// neighbour of it, provided the segment stays in the mask; exits mirror
/// this at the targets.
pub struct Terminals {
    entries: Vec<Stub>,
    /// Keyed by the cell the exit leaves from.
    exits: HashMap<usize, Vec<Stub>>,
}

impl Terminals {
    pub fn new(graph: &GridGraph, seeds: &JoinSeeds) -> Result<Terminals> {
        let grid = graph.mask.grid();
        let n = grid.dim();
        let mut offsets = vec![vec![0i64; n]];
        offsets.extend(graph.stencil.offsets(n));
        let stubs = |seed: usize, anchor: Option<&Point>| -> Result<Vec<Stub>> {
            let Some(q) = anchor else {
                let samples = vec![(seed, 0.5 * grid.h())];
                return Ok(vec![Stub { seed, cell: seed, anchor: None, samples }]);
            };
            let mut out = Vec::new();
            let mut pairs = Vec::new();
            for v in &offsets {
                let Some(cell) = grid.offset(seed, v) else { continue };
                if !graph.mask.get(cell) {
                    continue;
                }
                pairs.clear();
                let c = grid.center(cell);
                if c != *q {
                    segment_samples(grid, q, &c, &mut pairs)?;
                }
                if pairs.iter().all(|(m, _)| graph.mask.get(*m)) {
                    out.push(Stub { seed, cell, anchor: Some(q.clone()), samples: pairs.clone() });
                }
            }
            Ok(out)
        };
        let mut entries = Vec::new();
        for (&s, a) in seeds.sources.iter().zip(&seeds.source_anchors) {
            entries.extend(stubs(s, a.as_ref())?);
        }
        let mut exits: HashMap<usize, Vec<Stub>> = HashMap::new();
        for t in (0..seeds.targets.len()).filter(|&t| seeds.targets[t]) {
            for x in stubs(t, seeds.target_anchor(t))? {
                exits.entry(x.cell).or_default().push(x);
            }
        }
        Ok(Terminals { entries, exits })
    }
}

/// Shortest path of a join family. Each path starts at the anchor of a
/// source cell on the first end set and stops at the anchor of a target
/// cell on the second.
pub fn shortest_join(graph: &GridGraph, rho: &[f64], seeds: &JoinSeeds) -> Result<ShortestPath> {
    let term = Terminals::new(graph, seeds)?;
    shortest_with(graph, &term, rho, f64::NEG_INFINITY, 1).map(|mut v| v.swap_remove(0))
}

/// The shortest path, followed by up to `max_paths - 1` further paths of
/// ρ-length below `limit`, each ending at the best target reached from a
/// different source cell.
pub fn shortest_with(
    graph: &GridGraph,
    term: &Terminals,
    rho: &[f64],
    limit: f64,
    max_paths: usize,
) -> Result<Vec<ShortestPath>> {
    let n = graph.mask.grid().len();
    let mut best = vec![Key::MAX; n];
    let mut pred = vec![usize::MAX; n];
    let mut entry = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    for (i, e) in term.entries.iter().enumerate() {
        let k = Key { dist: e.cost(rho), edges: 0, first: e.seed };
        if k.cmp(&best[e.cell]) == Ordering::Less {
            best[e.cell] = k;
            entry[e.cell] = i;
            heap.push(Entry(k, e.cell));
        }
    }
    // (key, target seed, exit cell, exit index)
    let mut sinks: Vec<(Key, usize, usize, usize)> = Vec::new();
    let mut top = f64::INFINITY;
    while let Some(Entry(k, u)) = heap.pop() {
        if k.cmp(&best[u]) != Ordering::Equal {
            continue;
        }
        if top < k.dist && limit < k.dist {
            break;
        }
        if let Some(xs) = term.exits.get(&u) {
            for (j, x) in xs.iter().enumerate() {
                let cand = Key { dist: k.dist + x.cost(rho), ..k };
                top = top.min(cand.dist);
                sinks.push((cand, x.seed, u, j));
            }
        }
        for (v, w) in graph.edges(u, rho) {
            let cand = Key { dist: k.dist + w, edges: k.edges + 1, first: k.first };
            if cand.cmp(&best[v]) == Ordering::Less {
                best[v] = cand;
                pred[v] = u;
                heap.push(Entry(cand, v));
            }
        }
    }
    sinks.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
    let Some(&(key, _, u, j)) = sinks.first() else {
        return Err(Error::DisconnectedFamily);
    };
    let build = |key: Key, u: usize, j: usize| -> Result<ShortestPath> {
        let mut cells = vec![u];
        let mut c = u;
        while pred[c] != usize::MAX {
            c = pred[c];
            cells.push(c);
        }
        cells.reverse();
        let start = &term.entries[entry[cells[0]]];
        let end = &term.exits[&u][j];
        let path = graph.cells_to_path_between(&cells, start, end)?;
        Ok(ShortestPath { path, cells, length: key.dist })
    };
    let mut out = vec![build(key, u, j)?];
    let mut used = vec![key.first];
    for &(k, _, u, j) in &sinks[1..] {
        if out.len() >= max_paths || k.dist >= limit {
            break;
        }
        if used.contains(&k.first) {
            continue;
        }
        used.push(k.first);
        out.push(build(k, u, j)?);
    }
    Ok(out)
}

/// Source and target cells of a join family on a mask, with the point of the
/// end set where a path through each seed cell begins or ends.
#[derive(Clone, Debug)]
pub struct JoinSeeds {
    pub sources: Vec<usize>,
    pub targets: Vec<bool>,
    pub target_count: usize,
    /// Parallel to `sources`; `None` falls back to a half-cell stub.
    pub source_anchors: Vec<Option<Point>>,
    target_anchors: HashMap<usize, Point>,
}

impl JoinSeeds {
    /// Mask cells whose closed box touches `from` (resp. `to`).
    pub fn new(mask: &CellMask, from: &dyn Region, to: &dyn Region) -> JoinSeeds {
        let grid = mask.grid();
        let h = grid.h();
        let sources: Vec<usize> = mask.touching(from).cells().collect();
        let source_anchors = sources.iter().map(|&c| from.anchor(&grid.center(c), h)).collect();
        let t = mask.touching(to);
        let target_anchors = t.cells().filter_map(|c| to.anchor(&grid.center(c), h).map(|q| (c, q))).collect();
        JoinSeeds { sources, targets: t.bits().to_vec(), target_count: t.count(), source_anchors, target_anchors }
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty() || self.target_count == 0
    }

    pub fn source_anchor(&self, c: usize) -> Option<&Point> {
        let i = self.sources.iter().position(|&s| s == c)?;
        self.source_anchors[i].as_ref()
    }

    pub fn target_anchor(&self, c: usize) -> Option<&Point> {
        self.target_anchors.get(&c)
    }
}

/// Whether two regions meet, decided at the resolution of `grid`.
/// Polylines are handled exactly against each other and by dense sampling
/// against other regions.
pub fn domains_intersect(a: &DomainSpec, b: &DomainSpec, grid: &Grid) -> bool {
    use DomainSpec::Polyline;
    match (a, b) {
        (Polyline { vertices: va, radius: ra }, Polyline { vertices: vb, radius: rb }) => {
            polyline_pair_dist(va, vb) <= ra + rb + 1e-12
        }
        (Polyline { vertices, radius }, other) | (other, Polyline { vertices, radius }) => {
            DomainSpec::polyline_samples(vertices, grid.h() / 16.0)
                .iter()
                .any(|x| other.signed_distance(x) <= *radius + 1e-12)
        }
        _ => {
            let full = CellMask::full(grid.clone());
            let ta = full.touching(a);
            let tb = full.touching(b);
            let n = grid.dim();
            let h = grid.h();
            let mut x = vec![0.0; n];
            let mut c = vec![0.0; n];
            for cell in ta.and(&tb).expect("same grid").cells() {
                grid.center_into(cell, &mut c);
                for code in 0..5usize.pow(n as u32) {
                    let mut r = code;
                    for i in 0..n {
                        x[i] = c[i] + 0.25 * h * ((r % 5) as f64 - 2.0);
                        r /= 5;
                    }
                    if a.closure_contains(&x, 1e-12 * h) && b.closure_contains(&x, 1e-12 * h) {
                        return true;
                    }
                }
            }
            false
        }
    }
}

fn segment_pair_dist(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
    // distance from a point to a segment is convex along the other segment
    let n = a.len();
    let mut x = vec![0.0; n];
    let mut f = |s: f64| {
        for i in 0..n {
            x[i] = a[i] + s * (b[i] - a[i]);
        }
        point_segment_dist(&x, c, d)
    };
    let (mut l, mut r) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let m1 = l + (r - l) / 3.0;
        let m2 = r - (r - l) / 3.0;
        if f(m1) <= f(m2) {
            r = m2;
        } else {
            l = m1;
        }
        if r - l < 1e-15 {
            break;
        }
    }
    f(0.5 * (l + r)).min(f(0.0)).min(f(1.0))
}

fn polyline_pair_dist(a: &[Point], b: &[Point]) -> f64 {
    let segs = |v: &[Point]| -> Vec<(Point, Point)> {
        if v.len() == 1 {
            vec![(v[0].clone(), v[0].clone())]
        } else {
            v.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
        }
    };
    let sa = segs(a);
    let sb = segs(b);
    let mut best = f64::INFINITY;
    for (p, q) in &sa {
        for (r, s) in &sb {
            best = best.min(segment_pair_dist(p, q, r, s));
        }
    }
    best
}

/// Shortest path of a symbolic family under `rho`, restricted to `mask`.
pub fn shortest_rho_path(
    rho: &DensityField,
    fam: &FamilySpec,
    mask: &CellMask,
    stencil: Stencil,
) -> Result<ShortestPath> {
    if rho.grid() != mask.grid() {
        return Err(Error::InvalidArgument("density and mask live on different grids".into()));
    }
    match fam {
        FamilySpec::Explicit { paths } => {
            let mut best: Option<(f64, &DiscretePath)> = None;
            for p in paths {
                let l = rho_length(rho, p)?;
                if best.is_none_or(|(b, _)| l < b) {
                    best = Some((l, p));
                }
            }
            let (length, path) = best.ok_or(Error::EmptySet)?;
            Ok(ShortestPath { path: path.clone(), cells: Vec::new(), length })
        }
        FamilySpec::Join { from, to, .. } => {
            let seeds = JoinSeeds::new(mask, from, to);
            if seeds.is_empty() {
                return Err(Error::EmptyFamily("no mask cell touches both end sets".into()));
            }
            let graph = GridGraph::new(mask, stencil);
            shortest_join(&graph, rho.values(), &seeds)
        }
    }
}

/// Writes `path,vertex,x0,...` rows.
pub fn write_paths_csv<W: Write>(paths: &[DiscretePath], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let n = paths.first().map_or(0, |p| p.dim());
    let mut header = vec!["path".to_string(), "vertex".to_string()];
    header.extend((0..n).map(|k| format!("x{k}")));
    wtr.write_record(&header)?;
    for (i, p) in paths.iter().enumerate() {
        for (j, v) in p.vertices().iter().enumerate() {
            let mut rec = vec![i.to_string(), j.to_string()];
            rec.extend(v.iter().map(|x| format!("{x:.17e}")));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoundingBox;
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize, h: f64) -> Grid {
        Grid::new(vec![0.0, 0.0], h, vec![nx, ny]).unwrap()
    }

    #[test]
    fn straight_path_unit_density() {
        let g = grid(10, 10, 0.1);
        let rho = DensityField::constant(g.clone(), 1.0).unwrap();
        let cells: Vec<usize> = (0..10).map(|i| g.index(&[i, 3])).collect();
        let p = DiscretePath::through_cells(&g, &cells).unwrap();
        assert!((rho_length(&rho, &p).unwrap() - 0.9).abs() < 1e-12);
        assert!((euclid_length(&p) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn constant_density_gives_scaled_length() {
        let g = grid(20, 20, 0.05);
        let rho = DensityField::constant(g, 3.0).unwrap();
        let p = DiscretePath::new(vec![
            Point::from([0.013, 0.021]),
            Point::from([0.71, 0.33]),
            Point::from([0.2, 0.97]),
        ])
        .unwrap();
        assert!((rho_length(&rho, &p).unwrap() - 3.0 * euclid_length(&p)).abs() < 1e-12);
    }

    #[test]
    fn path_validation() {
        assert!(DiscretePath::new(vec![]).is_err());
        assert!(DiscretePath::new(vec![Point::from([0.0, 0.0]), Point::from([0.0, 0.0])]).is_err());
        assert!(DiscretePath::new(vec![Point::from([0.0, 0.0]), Point::from([0.0, 0.0, 1.0])]).is_err());
        let c = DiscretePath::new(vec![Point::from([0.5, 0.5])]).unwrap();
        assert!(c.is_constant());
        let rho = DensityField::constant(grid(2, 2, 1.0), 5.0).unwrap();
        assert_eq!(rho_length(&rho, &c).unwrap(), 0.0);
        let out = DiscretePath::new(vec![Point::from([0.5, 0.5]), Point::from([3.0, 0.5])]).unwrap();
        assert!(matches!(rho_length(&rho, &out), Err(Error::OutsideGrid)));
    }

    #[test]
    fn json_path_is_validated() {
        let ok: DiscretePath = serde_json::from_str("[[0,0],[1,0]]").unwrap();
        assert_eq!(ok.vertices().len(), 2);
        assert!(serde_json::from_str::<DiscretePath>("[[0,0],[0,0]]").is_err());
    }

    #[test]
    fn admissibility_flags_constant_path() {
        let g = grid(4, 4, 0.25);
        let rho = DensityField::constant(g, 100.0).unwrap();
        let sample = vec![
            DiscretePath::new(vec![Point::from([0.1, 0.1]), Point::from([0.9, 0.1])]).unwrap(),
            DiscretePath::new(vec![Point::from([0.3, 0.3])]).unwrap(),
        ];
        let a = is_admissible(&rho, &sample, 1e-9).unwrap();
        assert!(!a.admissible);
        assert_eq!(a.worst, 1);
        assert!(is_admissible(&rho, &[], 1e-9).is_err());
    }

    #[test]
    fn stencil_sizes() {
        assert_eq!(Stencil::Face.offsets(2).len(), 4);
        assert_eq!(Stencil::Radius(1).offsets(2).len(), 8);
        assert_eq!(Stencil::Radius(2).offsets(2).len(), 16);
        assert_eq!(Stencil::Radius(1).offsets(3).len(), 26);
    }

    /// Reference: Floyd-Warshall on the face graph with trapezoid edge
    /// weights and half-cell terminal costs.
    fn floyd_reference(g: &Grid, mask: &[bool], rho: &[f64], src: &[usize], tgt: &[usize]) -> f64 {
        let n = g.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        let mut nb = Vec::new();
        for u in 0..n {
            if !mask[u] {
                continue;
            }
            d[u][u] = 0.0;
            g.face_neighbors(u, &mut nb);
            for &v in &nb {
                if mask[v] {
                    d[u][v] = 0.5 * g.h() * (rho[u] + rho[v]);
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let c = d[i][k] + d[k][j];
                    if c < d[i][j] {
                        d[i][j] = c;
                    }
                }
            }
        }
        let mut best = f64::INFINITY;
        for &s in src {
            for &t in tgt {
                best = best.min(0.5 * g.h() * rho[s] + d[s][t] + 0.5 * g.h() * rho[t]);
            }
        }
        best
    }

    #[test]
    fn maze_matches_reference() {
        let rows = [
            "S..#....", ".#.#.##.", ".#...#..", ".####.#.", "......#.", "#.##.##.", "..#.....", ".##..##T",
        ];
        let g = grid(8, 8, 0.125);
        let mut bits = vec![false; 64];
        let mut src = vec![];
        let mut tgt = vec![];
        for (y, r) in rows.iter().enumerate() {
            for (x, ch) in r.chars().enumerate() {
                let i = g.index(&[x, y]);
                bits[i] = ch != '#';
                if ch == 'S' {
                    src.push(i);
                }
                if ch == 'T' {
                    tgt.push(i);
                }
            }
        }
        let mask = CellMask::from_bits(g.clone(), bits.clone()).unwrap();
        let rho: Vec<f64> = (0..64).map(|i| 1.0 + ((i * 37) % 11) as f64 / 7.0).collect();
        let graph = GridGraph::new(&mask, Stencil::Face);
        let mut targets = vec![false; 64];
        targets[tgt[0]] = true;
        let sp = shortest_cells(&graph, &rho, &src, &targets).unwrap();
        let expect = floyd_reference(&g, &bits, &rho, &src, &tgt);
        assert!((sp.length - expect).abs() < 1e-12, "{} vs {}", sp.length, expect);
        let field = DensityField::new(g, rho).unwrap();
        assert!((rho_length(&field, &sp.path).unwrap() - sp.length).abs() < 1e-12);
    }

    #[test]
    fn walled_off_target_is_disconnected() {
        let g = grid(3, 1, 1.0);
        let mask = CellMask::from_bits(g, vec![true, false, true]).unwrap();
        let graph = GridGraph::new(&mask, Stencil::Radius(2));
        let r = shortest_cells(&graph, &[1.0; 3], &[0], &[false, false, true]);
        assert!(matches!(r, Err(Error::DisconnectedFamily)));
    }

    #[test]
    fn join_family_across_square() {
        let d = DomainSpec::cube([0.0, 0.0], [1.0, 1.0]);
        let fam = FamilySpec::join(
            DomainSpec::segment([0.0, 0.0], [0.0, 1.0]),
            DomainSpec::segment([1.0, 0.0], [1.0, 1.0]),
            d.clone(),
        );
        let g = Grid::covering(&BoundingBox::new(vec![0.0, 0.0], vec![1.0, 1.0]), 0.125).unwrap();
        let mask = crate::grid::rasterize(&d, &g).unwrap();
        let rho = DensityField::constant(g, 1.0).unwrap();
        let sp = shortest_rho_path(&rho, &fam, &mask, Stencil::Face).unwrap();
        // straight across: the end pieces may skip the seed centres
        assert!((sp.length - 1.0).abs() < 1e-12);
        assert!((euclid_length(&sp.path) - 1.0).abs() < 1e-12);
        assert!(sp.cells.len() <= 8);
        assert_eq!(sp.path.first()[0], 0.0);
        assert_eq!(sp.path.last()[0], 1.0);
    }

    #[test]
    fn intersection_detection() {
        let g = grid(10, 10, 0.1);
        let a = DomainSpec::segment([0.0, 0.0], [1.0, 1.0]);
        let b = DomainSpec::segment([0.0, 1.0], [1.0, 0.0]);
        let c = DomainSpec::segment([0.0, 0.5], [0.2, 0.5]);
        assert!(domains_intersect(&a, &b, &g));
        assert!(!domains_intersect(&a, &c, &g));
        let disc = DomainSpec::ball([0.5, 0.5], 0.1);
        assert!(domains_intersect(&a, &disc, &g));
        assert!(!domains_intersect(&c, &disc, &g));
        let box1 = DomainSpec::cube([0.0, 0.0], [0.5, 0.5]);
        let box2 = DomainSpec::cube([0.5, 0.2], [0.9, 0.3]);
        assert!(domains_intersect(&box1, &box2, &g));
        assert!(!domains_intersect(&box2, &DomainSpec::ball([0.2, 0.8], 0.1), &g));
    }

    #[test]
    fn density_csv_has_one_row_per_cell() {
        let rho = DensityField::constant(grid(3, 2, 0.5), 2.0).unwrap();
        let mut buf = Vec::new();
        rho.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 7);
        assert!(s.starts_with("x0,x1,rho"));
    }

    proptest! {
        #[test]
        fn oracle_length_equals_rho_length(vals in proptest::collection::vec(0.0f64..3.0, 49), r in 1usize..3) {
            let g = grid(7, 7, 1.0 / 7.0);
            let mask = CellMask::full(g.clone());
            let graph = GridGraph::new(&mask, Stencil::Radius(r));
            let mut targets = vec![false; 49];
            for y in 0..7 { targets[g.index(&[6, y])] = true; }
            let sources: Vec<usize> = (0..7).map(|y| g.index(&[0, y])).collect();
            let sp = shortest_cells(&graph, &vals, &sources, &targets).unwrap();
            let field = DensityField::new(g, vals).unwrap();
            let l = rho_length(&field, &sp.path).unwrap();
            prop_assert!((l - sp.length).abs() <= 1e-12 * (1.0 + l));
        }

        #[test]
        fn anchored_oracle_length_equals_rho_length(vals in proptest::collection::vec(0.0f64..3.0, 144), r in 1usize..4) {
            let g = Grid::covering(&BoundingBox::new(vec![-1.5, -1.5], vec![1.5, 1.5]), 0.25).unwrap();
            let d = DomainSpec::ring([0.0, 0.0], 0.5, 1.4);
            let mask = crate::grid::rasterize(&d, &g).unwrap();
            let from = DomainSpec::sphere([0.0, 0.0], 0.5);
            let to = DomainSpec::sphere([0.0, 0.0], 1.4);
            let seeds = JoinSeeds::new(&mask, &from, &to);
            let graph = GridGraph::new(&mask, Stencil::Radius(r));
            let sp = shortest_join(&graph, &vals, &seeds).unwrap();
            prop_assert!((from.signed_distance(sp.path.first()) ).abs() < 1e-9);
            prop_assert!((to.signed_distance(sp.path.last())).abs() < 1e-9);
            let field = DensityField::new(g, vals).unwrap();
            let l = rho_length(&field, &sp.path).unwrap();
            prop_assert!((l - sp.length).abs() <= 1e-12 * (1.0 + l));
        }

        #[test]
        fn rho_length_is_linear(
            a in proptest::collection::vec(0.0f64..2.0, 25),
            b in proptest::collection::vec(0.0f64..2.0, 25),
            s in 0.0f64..3.0,
            x in proptest::collection::vec(0.01f64..0.99, 6),
        ) {
            let g = grid(5, 5, 0.2);
            let p = DiscretePath::new_dedup(x.chunks(2).map(|c| Point::from([c[0], c[1]])).collect()).unwrap();
            let ra = DensityField::new(g.clone(), a.clone()).unwrap();
            let rb = DensityField::new(g.clone(), b.clone()).unwrap();
            let sum = DensityField::new(g, a.iter().zip(&b).map(|(u, v)| s * u + v).collect()).unwrap();
            let lhs = rho_length(&sum, &p).unwrap();
            let rhs = s * rho_length(&ra, &p).unwrap() + rho_length(&rb, &p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn shortest_is_no_longer_than_any_straight_crossing(vals in proptest::collection::vec(0.1f64..3.0, 36)) {
            let g = grid(6, 6, 1.0 / 6.0);
            let mask = CellMask::full(g.clone());
            let graph = GridGraph::new(&mask, Stencil::Face);
            let sources: Vec<usize> = (0..6).map(|y| g.index(&[0, y])).collect();
            let mut targets = vec![false; 36];
            for y in 0..6 { targets[g.index(&[5, y])] = true; }
            let sp = shortest_cells(&graph, &vals, &sources, &targets).unwrap();
            let field = DensityField::new(g.clone(), vals).unwrap();
            for y in 0..6 {
                let cells: Vec<usize> = (0..6).map(|x| g.index(&[x, y])).collect();
                let p = graph.cells_to_path(&cells).unwrap();
                prop_assert!(sp.length <= rho_length(&field, &p).unwrap() + 1e-12);
            }
        }
    }
}
