//! Symbolic region descriptions.
//!
//! A [`DomainSpec`] is a tree of primitives combined by set operations. Every
//! node answers three questions: does it contain a point, does its closure
//! touch a grid cell, and what is its (approximate) signed distance. The JSON
//! form is tagged by `"type"`; see `docs/schemas.md` for the field names.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclid_dist_unchecked, Point};

/// Axis-aligned box, possibly unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundingBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BoundingBox {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Self {
        BoundingBox { min, max }
    }

    pub fn unbounded(n: usize) -> Self {
        BoundingBox {
            min: vec![f64::NEG_INFINITY; n],
            max: vec![f64::INFINITY; n],
        }
    }

    pub fn empty(n: usize) -> Self {
        BoundingBox {
            min: vec![f64::INFINITY; n],
            max: vec![f64::NEG_INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn is_finite(&self) -> bool {
        self.min.iter().chain(&self.max).all(|v| v.is_finite())
    }

    pub fn is_empty(&self) -> bool {
        self.min.iter().zip(&self.max).any(|(a, b)| a > b)
    }

    pub fn hull(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min: self.min.iter().zip(&other.min).map(|(a, b)| a.min(*b)).collect(),
            max: self.max.iter().zip(&other.max).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    pub fn intersect(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min: self.min.iter().zip(&other.min).map(|(a, b)| a.max(*b)).collect(),
            max: self.max.iter().zip(&other.max).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    pub fn include_point(&mut self, x: &[f64]) {
        for i in 0..x.len() {
            self.min[i] = self.min[i].min(x[i]);
            self.max[i] = self.max[i].max(x[i]);
        }
    }

    pub fn pad(&self, r: f64) -> BoundingBox {
        BoundingBox {
            min: self.min.iter().map(|v| v - r).collect(),
            max: self.max.iter().map(|v| v + r).collect(),
        }
    }

    pub fn contains_box(&self, other: &BoundingBox, tol: f64) -> bool {
        self.min.iter().zip(&other.min).all(|(a, b)| *a <= b + tol)
            && self.max.iter().zip(&other.max).all(|(a, b)| *a >= b - tol)
    }
}

/// Anything that can be sampled on a grid.
pub trait Region: Sync {
    fn dim(&self) -> usize;

    fn contains(&self, x: &[f64]) -> bool;

    fn bounding_box(&self) -> BoundingBox;

    /// Whether the closure meets the closed cube of side `h` centred at
    /// `center`. The default probes the 3^n lattice of centre, face centres
    /// and corners.
    fn touches_cell(&self, center: &[f64], h: f64) -> bool {
        let n = center.len();
        let mut x = center.to_vec();
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            for i in 0..n {
                let k = (c % 3) as f64 - 1.0;
                c /= 3;
                x[i] = center[i] + 0.5 * h * k;
            }
            if self.contains(&x) {
                return true;
            }
        }
        false
    }

    /// A function that is `<= 0` exactly on the closure and behaves like a
    /// distance near the boundary, if the region has one.
    fn level(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// A point of the closure inside the closed cube of side `h` centred at
    /// `center`, as near the centre as practical. `None` if none was found.
    fn anchor(&self, center: &[f64], h: f64) -> Option<Point> {
        anchor_in_cell(self, center, h)
    }
}

/// Newton projection onto the zero set of [`Region::level`], clamped to the
/// cell, with a lattice search as fallback.
fn anchor_in_cell<R: Region + ?Sized>(r: &R, center: &[f64], h: f64) -> Option<Point> {
    let n = center.len();
    let lo: Vec<f64> = center.iter().map(|c| c - 0.5 * h).collect();
    let hi: Vec<f64> = center.iter().map(|c| c + 0.5 * h).collect();
    let tol = 1e-9 * h;
    let inside = |x: &[f64]| match r.level(x) {
        Some(v) => v <= tol,
        None => r.contains(x),
    };
    if inside(center) {
        return Some(Point::new(center.to_vec()));
    }
    let eps = 1e-6 * h;
    let mut x = center.to_vec();
    let mut g = vec![0.0; n];
    let mut probe = x.clone();
    for _ in 0..64 {
        let Some(v) = r.level(&x) else { break };
        if v <= tol {
            return Some(Point::new(x));
        }
        for k in 0..n {
            probe.copy_from_slice(&x);
            probe[k] = x[k] + eps;
            let up = r.level(&probe).unwrap_or(v);
            probe[k] = x[k] - eps;
            let down = r.level(&probe).unwrap_or(v);
            g[k] = (up - down) / (2.0 * eps);
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if !(g2 > 0.0 && g2.is_finite()) {
            break;
        }
        let mut moved = 0.0f64;
        for k in 0..n {
            let next = (x[k] - v * g[k] / g2).clamp(lo[k], hi[k]);
            moved = moved.max((next - x[k]).abs());
            x[k] = next;
        }
        if moved <= 1e-15 * h {
            break;
        }
    }
    let steps = if n <= 3 { 8 } else { 2 };
    let total = (steps + 1usize).pow(n as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut y = center.to_vec();
    for code in 0..total {
        let mut c = code;
        for k in 0..n {
            y[k] = lo[k] + h * (c % (steps + 1)) as f64 / steps as f64;
            c /= steps + 1;
        }
        if inside(&y) {
            let d = euclid_dist_unchecked(&y, center);
            if best.as_ref().is_none_or(|(b, _)| d < *b) {
                best = Some((d, y.clone()));
            }
        }
    }
    best.map(|(_, y)| Point::new(y))
}

/// Comb domain: a box with `teeth_count` closed vertical slits removed from
/// its lower part. Slit `k` (1-based) sits at abscissa `1/k` with half-width
/// `halfwidths[k-1]` and rises from the bottom of the box to the fraction
/// `slit_height` of its height. The first two coordinates carry the comb; any
/// further coordinates are extruded over the base box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombDomain {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub teeth_count: usize,
    pub slit_height: f64,
    pub halfwidths: Vec<f64>,
}

impl CombDomain {
    /// Slits with half-widths `c / (k (k + 1))`.
    pub fn with_harmonic_widths(
        min: Vec<f64>,
        max: Vec<f64>,
        teeth_count: usize,
        slit_height: f64,
        c: f64,
    ) -> Result<Self> {
        let halfwidths = (1..=teeth_count)
            .map(|k| c / (k as f64 * (k as f64 + 1.0)))
            .collect();
        let comb = CombDomain {
            min,
            max,
            teeth_count,
            slit_height,
            halfwidths,
        };
        comb.validate()?;
        Ok(comb)
    }

    pub fn abscissa(&self, k: usize) -> f64 {
        1.0 / k as f64
    }

    pub fn slit_top(&self) -> f64 {
        self.min[1] + self.slit_height * (self.max[1] - self.min[1])
    }

    /// Horizontal extent of the tooth between slit `k + 1` and slit `k`
    /// (the leftmost tooth, `k == teeth_count`, ends at the box edge).
    pub fn tooth_interval(&self, k: usize) -> (f64, f64) {
        let right = self.abscissa(k) - self.halfwidths[k - 1];
        let left = if k < self.teeth_count {
            self.abscissa(k + 1) + self.halfwidths[k]
        } else {
            self.min[0]
        };
        (left, right)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.min.len();
        if n < 2 || self.max.len() != n {
            return Err(Error::InvalidArgument("comb base must be a box of dimension >= 2".into()));
        }
        if self.teeth_count < 1 || self.halfwidths.len() != self.teeth_count {
            return Err(Error::InvalidArgument(
                "comb needs teeth_count >= 1 and one half-width per slit".into(),
            ));
        }
        if !(self.slit_height > 0.0 && self.slit_height < 1.0) {
            return Err(Error::InvalidArgument("slit_height must lie in (0, 1)".into()));
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidArgument("comb base box is degenerate".into()));
        }
        if self.halfwidths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("slit half-widths must be positive".into()));
        }
        for k in 1..self.teeth_count {
            let right_of_next = self.abscissa(k + 1) + self.halfwidths[k];
            let left_of_this = self.abscissa(k) - self.halfwidths[k - 1];
            if !(right_of_next < left_of_this) {
                return Err(Error::InvalidArgument(format!("slits {k} and {} overlap", k + 1)));
            }
        }
        let kmax = self.teeth_count;
        if self.abscissa(kmax) - self.halfwidths[kmax - 1] <= self.min[0]
            || 1.0 + self.halfwidths[0] >= self.max[0]
        {
            return Err(Error::InvalidArgument("slits must lie inside the base box".into()));
        }
        Ok(())
    }

    fn in_base(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    fn in_slit(&self, x: &[f64]) -> bool {
        if x[1] > self.slit_top() {
            return false;
        }
        // slit k covers |x - 1/k| <= w_k; only slits near 1/x0 can match
        (1..=self.teeth_count).any(|k| (x[0] - self.abscissa(k)).abs() <= self.halfwidths[k - 1])
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.in_base(x) && !self.in_slit(x)
    }

    fn signed_distance(&self, x: &[f64]) -> f64 {
        let base = box_sdf(&self.min, &self.max, x);
        let top = self.slit_top();
        let mut slit = f64::INFINITY;
        for k in 1..=self.teeth_count {
            let c = self.abscissa(k);
            let w = self.halfwidths[k - 1];
            let mut lo = self.min.clone();
            let mut hi = self.max.clone();
            lo[0] = c - w;
            hi[0] = c + w;
            lo[1] = f64::NEG_INFINITY;
            hi[1] = top;
            slit = slit.min(box_sdf(&lo, &hi, x));
        }
        base.max(-slit)
    }
}

/// The region tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DomainSpec {
    /// Open ball.
    Ball { center: Point, radius: f64 },
    /// The sphere `|x - center| = radius` (a measure-zero set).
    Sphere { center: Point, radius: f64 },
    /// Closed axis-aligned box.
    Box { min: Point, max: Point },
    /// Open shell `r1 < |x - center| < r2`.
    Ring { center: Point, r1: f64, r2: f64 },
    /// Closed half-space `normal . x <= offset`.
    Halfspace { normal: Point, offset: f64 },
    /// Closed tube of the given radius around a polyline; radius 0 is the
    /// polyline itself.
    Polyline {
        vertices: Vec<Point>,
        #[serde(default)]
        radius: f64,
    },
    Comb(CombDomain),
    Union { children: Vec<DomainSpec> },
    Intersection { children: Vec<DomainSpec> },
    Difference { base: std::boxed::Box<DomainSpec>, minus: std::boxed::Box<DomainSpec> },
}

fn box_sdf(min: &[f64], max: &[f64], x: &[f64]) -> f64 {
    let mut outside = 0.0;
    let mut inside = f64::NEG_INFINITY;
    for i in 0..x.len() {
        let d = (min[i] - x[i]).max(x[i] - max[i]);
        if d > 0.0 {
            outside += d * d;
        }
        inside = inside.max(d);
    }
    if outside > 0.0 {
        outside.sqrt()
    } else {
        inside
    }
}

/// Distance from `x` to the closed box; 0 inside.
fn point_box_dist(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let d = (lo[i] - x[i]).max(x[i] - hi[i]).max(0.0);
        s += d * d;
    }
    s.sqrt()
}

fn point_box_maxdist(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let d = (x[i] - lo[i]).abs().max((x[i] - hi[i]).abs());
        s += d * d;
    }
    s.sqrt()
}

pub(crate) fn point_segment_dist(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    euclid_dist_unchecked(x, &segment_closest(x, a, b))
}

fn segment_closest(x: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut dd = 0.0;
    let mut dx = 0.0;
    for i in 0..x.len() {
        let d = b[i] - a[i];
        dd += d * d;
        dx += d * (x[i] - a[i]);
    }
    let t = if dd > 0.0 { (dx / dd).clamp(0.0, 1.0) } else { 0.0 };
    (0..x.len()).map(|i| a[i] + t * (b[i] - a[i])).collect()
}

/// Nearest point of the closed ball (or, with `sphere`, of the sphere) of
/// radius `r` about `c`.
fn onto_radius(x: &[f64], c: &[f64], r: f64, sphere: bool) -> Vec<f64> {
    let d = euclid_dist_unchecked(x, c);
    if (!sphere && d <= r) || (sphere && d == r) {
        return x.to_vec();
    }
    if d == 0.0 {
        let mut q = c.to_vec();
        q[0] += r;
        return q;
    }
    (0..x.len()).map(|i| c[i] + (x[i] - c[i]) * (r / d)).collect()
}

/// Distance between a segment and a closed box. The distance along a line
/// to a convex set is convex, so a ternary search is exact up to tolerance.
fn segment_box_dist(a: &[f64], b: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let n = a.len();
    let mut buf = vec![0.0; n];
    let mut eval = |t: f64| {
        for i in 0..n {
            buf[i] = a[i] + t * (b[i] - a[i]);
        }
        point_box_dist(&buf, lo, hi)
    };
    let (mut l, mut r) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let m1 = l + (r - l) / 3.0;
        let m2 = r - (r - l) / 3.0;
        if eval(m1) <= eval(m2) {
            r = m2;
        } else {
            l = m1;
        }
        if r - l < 1e-13 {
            break;
        }
    }
    eval(0.5 * (l + r)).min(eval(0.0)).min(eval(1.0))
}

pub(crate) fn polyline_dist(x: &[f64], vertices: &[Point]) -> f64 {
    if vertices.len() == 1 {
        return euclid_dist_unchecked(x, &vertices[0]);
    }
    vertices
        .windows(2)
        .map(|w| point_segment_dist(x, &w[0], &w[1]))
        .fold(f64::INFINITY, f64::min)
}

impl DomainSpec {
    /// Exact nearest point of the closure for primitives; `None` for the comb
    /// and set operations.
    pub fn closest_point(&self, x: &[f64]) -> Option<Point> {
        let q = match self {
            DomainSpec::Ball { center, radius } => onto_radius(x, center, *radius, false),
            DomainSpec::Sphere { center, radius } => onto_radius(x, center, *radius, true),
            DomainSpec::Box { min, max } => (0..x.len()).map(|i| x[i].clamp(min[i], max[i])).collect(),
            DomainSpec::Ring { center, r1, r2 } => {
                let d = euclid_dist_unchecked(x, center);
                if d < *r1 {
                    onto_radius(x, center, *r1, true)
                } else {
                    onto_radius(x, center, *r2, false)
                }
            }
            DomainSpec::Halfspace { normal, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(a, b)| a * b).sum();
                if dot <= *offset {
                    x.to_vec()
                } else {
                    let t = (dot - offset) / normal.dot(normal);
                    (0..x.len()).map(|i| x[i] - t * normal[i]).collect()
                }
            }
            DomainSpec::Polyline { vertices, radius } => {
                let near = if vertices.len() == 1 {
                    vertices[0].to_vec()
                } else {
                    vertices
                        .windows(2)
                        .map(|w| segment_closest(x, &w[0], &w[1]))
                        .min_by(|a, b| euclid_dist_unchecked(x, a).total_cmp(&euclid_dist_unchecked(x, b)))?
                };
                onto_radius(x, &near, *radius, false)
            }
            _ => return None,
        };
        Some(Point::new(q))
    }

    pub fn ball(center: impl Into<Point>, radius: f64) -> Self {
        DomainSpec::Ball { center: center.into(), radius }
    }

    pub fn sphere(center: impl Into<Point>, radius: f64) -> Self {
        DomainSpec::Sphere { center: center.into(), radius }
    }

    pub fn cube(min: impl Into<Point>, max: impl Into<Point>) -> Self {
        DomainSpec::Box { min: min.into(), max: max.into() }
    }

    pub fn ring(center: impl Into<Point>, r1: f64, r2: f64) -> Self {
        DomainSpec::Ring { center: center.into(), r1, r2 }
    }

    pub fn segment(a: impl Into<Point>, b: impl Into<Point>) -> Self {
        DomainSpec::Polyline { vertices: vec![a.into(), b.into()], radius: 0.0 }
    }

    pub fn polyline(vertices: Vec<Point>, radius: f64) -> Self {
        DomainSpec::Polyline { vertices, radius }
    }

    pub fn union(children: Vec<DomainSpec>) -> Self {
        DomainSpec::Union { children }
    }

    pub fn intersection(children: Vec<DomainSpec>) -> Self {
        DomainSpec::Intersection { children }
    }

    pub fn difference(base: DomainSpec, minus: DomainSpec) -> Self {
        DomainSpec::Difference { base: std::boxed::Box::new(base), minus: std::boxed::Box::new(minus) }
    }

    /// Checks parameter ranges and that every point has the same dimension.
    pub fn validate(&self) -> Result<usize> {
        fn same(n: usize, p: &Point) -> Result<()> {
            p.check_dim(n)?;
            if !p.is_finite() {
                return Err(Error::InvalidArgument("non-finite coordinate".into()));
            }
            Ok(())
        }
        let n = self.dim();
        if n < 1 {
            return Err(Error::InvalidArgument("empty coordinate vector".into()));
        }
        match self {
            DomainSpec::Ball { center, radius } | DomainSpec::Sphere { center, radius } => {
                same(n, center)?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidArgument("radius must be positive".into()));
                }
            }
            DomainSpec::Box { min, max } => {
                same(n, min)?;
                same(n, max)?;
                if min.iter().zip(max.iter()).any(|(a, b)| a > b) {
                    return Err(Error::InvalidArgument("box min exceeds max".into()));
                }
            }
            DomainSpec::Ring { center, r1, r2 } => {
                same(n, center)?;
                if !(*r1 > 0.0 && r1 < r2 && r2.is_finite()) {
                    return Err(Error::InvalidArgument("ring needs 0 < r1 < r2".into()));
                }
            }
            DomainSpec::Halfspace { normal, offset } => {
                same(n, normal)?;
                if normal.norm() == 0.0 || !offset.is_finite() {
                    return Err(Error::InvalidArgument("half-space normal must be nonzero".into()));
                }
            }
            DomainSpec::Polyline { vertices, radius } => {
                if vertices.is_empty() {
                    return Err(Error::InvalidArgument("polyline needs a vertex".into()));
                }
                for v in vertices {
                    same(n, v)?;
                }
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidArgument("tube radius must be >= 0".into()));
                }
            }
            DomainSpec::Comb(c) => c.validate()?,
            DomainSpec::Union { children } | DomainSpec::Intersection { children } => {
                if children.is_empty() {
                    return Err(Error::InvalidArgument("set operation needs children".into()));
                }
                for c in children {
                    if c.validate()? != n {
                        return Err(Error::DimensionMismatch { expected: n, got: c.dim() });
                    }
                }
            }
            DomainSpec::Difference { base, minus } => {
                base.validate()?;
                if minus.validate()? != n {
                    return Err(Error::DimensionMismatch { expected: n, got: minus.dim() });
                }
            }
        }
        Ok(n)
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Ball { center, .. }
            | DomainSpec::Sphere { center, .. }
            | DomainSpec::Ring { center, .. } => center.dim(),
            DomainSpec::Box { min, .. } => min.dim(),
            DomainSpec::Halfspace { normal, .. } => normal.dim(),
            DomainSpec::Polyline { vertices, .. } => vertices.first().map_or(0, |v| v.dim()),
            DomainSpec::Comb(c) => c.min.len(),
            DomainSpec::Union { children } | DomainSpec::Intersection { children } => {
                children.first().map_or(0, |c| c.dim())
            }
            DomainSpec::Difference { base, .. } => base.dim(),
        }
    }

    /// Approximate signed distance: exact for primitives, a bound for set
    /// operations. Negative inside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            DomainSpec::Ball { center, radius } => euclid_dist_unchecked(x, center) - radius,
            DomainSpec::Sphere { center, radius } => (euclid_dist_unchecked(x, center) - radius).abs(),
            DomainSpec::Box { min, max } => box_sdf(min, max, x),
            DomainSpec::Ring { center, r1, r2 } => {
                let d = euclid_dist_unchecked(x, center);
                (r1 - d).max(d - r2)
            }
            DomainSpec::Halfspace { normal, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(a, b)| a * b).sum();
                (dot - offset) / normal.norm()
            }
            DomainSpec::Polyline { vertices, radius } => polyline_dist(x, vertices) - radius,
            DomainSpec::Comb(c) => c.signed_distance(x),
            DomainSpec::Union { children } => children
                .iter()
                .map(|c| c.signed_distance(x))
                .fold(f64::INFINITY, f64::min),
            DomainSpec::Intersection { children } => children
                .iter()
                .map(|c| c.signed_distance(x))
                .fold(f64::NEG_INFINITY, f64::max),
            DomainSpec::Difference { base, minus } => {
                base.signed_distance(x).max(-minus.signed_distance(x))
            }
        }
    }

    /// Distance from `x` to the boundary of the region (approximate for set
    /// operations, never larger than the true value for unions/intersections
    /// of convex pieces).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.signed_distance(x).abs()
    }

    /// Membership in the closure, up to `tol`.
    pub fn closure_contains(&self, x: &[f64], tol: f64) -> bool {
        self.signed_distance(x) <= tol
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, s: f64) -> Result<DomainSpec> {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        Ok(match self {
            DomainSpec::Ball { center, radius } => DomainSpec::Ball { center: center.scale(s), radius: radius * s },
            DomainSpec::Sphere { center, radius } => {
                DomainSpec::Sphere { center: center.scale(s), radius: radius * s }
            }
            DomainSpec::Box { min, max } => DomainSpec::Box { min: min.scale(s), max: max.scale(s) },
            DomainSpec::Ring { center, r1, r2 } => DomainSpec::Ring { center: center.scale(s), r1: r1 * s, r2: r2 * s },
            DomainSpec::Halfspace { normal, offset } => {
                DomainSpec::Halfspace { normal: normal.clone(), offset: offset * s }
            }
            DomainSpec::Polyline { vertices, radius } => DomainSpec::Polyline {
                vertices: vertices.iter().map(|v| v.scale(s)).collect(),
                radius: radius * s,
            },
            DomainSpec::Comb(_) => {
                return Err(Error::InvalidArgument("comb abscissas are fixed at 1/k; cannot scale".into()))
            }
            DomainSpec::Union { children } => DomainSpec::Union {
                children: children.iter().map(|c| c.scaled(s)).collect::<Result<_>>()?,
            },
            DomainSpec::Intersection { children } => DomainSpec::Intersection {
                children: children.iter().map(|c| c.scaled(s)).collect::<Result<_>>()?,
            },
            DomainSpec::Difference { base, minus } => DomainSpec::difference(base.scaled(s)?, minus.scaled(s)?),
        })
    }

    /// Dense sample of points on a polyline (spacing at most `step`).
    pub fn polyline_samples(vertices: &[Point], step: f64) -> Vec<Point> {
        let mut out = vec![vertices[0].clone()];
        for w in vertices.windows(2) {
            let len = euclid_dist_unchecked(&w[0], &w[1]);
            let m = ((len / step).ceil() as usize).max(1);
            for k in 1..=m {
                out.push(w[0].lerp(&w[1], k as f64 / m as f64));
            }
        }
        out
    }
}

impl Region for DomainSpec {
    fn dim(&self) -> usize {
        DomainSpec::dim(self)
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self {
            DomainSpec::Ball { center, radius } => euclid_dist_unchecked(x, center) < *radius,
            DomainSpec::Sphere { center, radius } => euclid_dist_unchecked(x, center) == *radius,
            DomainSpec::Box { min, max } => x
                .iter()
                .zip(min.iter().zip(max.iter()))
                .all(|(v, (a, b))| *a <= *v && *v <= *b),
            DomainSpec::Ring { center, r1, r2 } => {
                let d = euclid_dist_unchecked(x, center);
                *r1 < d && d < *r2
            }
            DomainSpec::Halfspace { normal, offset } => {
                normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() <= *offset
            }
            DomainSpec::Polyline { vertices, radius } => polyline_dist(x, vertices) <= *radius,
            DomainSpec::Comb(c) => c.contains(x),
            DomainSpec::Union { children } => children.iter().any(|c| c.contains(x)),
            DomainSpec::Intersection { children } => children.iter().all(|c| c.contains(x)),
            DomainSpec::Difference { base, minus } => base.contains(x) && !minus.contains(x),
        }
    }

    fn bounding_box(&self) -> BoundingBox {
        let n = DomainSpec::dim(self);
        match self {
            DomainSpec::Ball { center, radius } | DomainSpec::Sphere { center, radius } => BoundingBox::new(
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            DomainSpec::Ring { center, r2, .. } => BoundingBox::new(
                center.iter().map(|c| c - r2).collect(),
                center.iter().map(|c| c + r2).collect(),
            ),
            DomainSpec::Box { min, max } => BoundingBox::new(min.to_vec(), max.to_vec()),
            DomainSpec::Halfspace { .. } => BoundingBox::unbounded(n),
            DomainSpec::Polyline { vertices, radius } => {
                let mut b = BoundingBox::empty(n);
                for v in vertices {
                    b.include_point(v);
                }
                b.pad(*radius)
            }
            DomainSpec::Comb(c) => BoundingBox::new(c.min.clone(), c.max.clone()),
            DomainSpec::Union { children } => children
                .iter()
                .map(|c| c.bounding_box())
                .fold(BoundingBox::empty(n), |a, b| a.hull(&b)),
            DomainSpec::Intersection { children } => children
                .iter()
                .map(|c| c.bounding_box())
                .fold(BoundingBox::unbounded(n), |a, b| a.intersect(&b)),
            DomainSpec::Difference { base, .. } => base.bounding_box(),
        }
    }

    fn level(&self, x: &[f64]) -> Option<f64> {
        Some(self.signed_distance(x))
    }

    fn anchor(&self, center: &[f64], h: f64) -> Option<Point> {
        if let Some(q) = self.closest_point(center) {
            if q.iter().zip(center).all(|(a, c)| (a - c).abs() <= 0.5 * h) {
                return Some(q);
            }
        }
        anchor_in_cell(self, center, h)
    }

    fn touches_cell(&self, center: &[f64], h: f64) -> bool {
        let lo: Vec<f64> = center.iter().map(|c| c - 0.5 * h).collect();
        let hi: Vec<f64> = center.iter().map(|c| c + 0.5 * h).collect();
        match self {
            DomainSpec::Ball { center: c, radius } => point_box_dist(c, &lo, &hi) <= *radius,
            DomainSpec::Sphere { center: c, radius } => {
                point_box_dist(c, &lo, &hi) <= *radius && point_box_maxdist(c, &lo, &hi) >= *radius
            }
            DomainSpec::Box { min, max } => (0..lo.len()).all(|i| lo[i] <= max[i] && min[i] <= hi[i]),
            DomainSpec::Ring { center: c, r1, r2 } => {
                point_box_dist(c, &lo, &hi) <= *r2 && point_box_maxdist(c, &lo, &hi) >= *r1
            }
            DomainSpec::Halfspace { normal, offset } => {
                let m: f64 = (0..lo.len())
                    .map(|i| if normal[i] >= 0.0 { normal[i] * lo[i] } else { normal[i] * hi[i] })
                    .sum();
                m <= *offset
            }
            DomainSpec::Polyline { vertices, radius } => {
                if vertices.len() == 1 {
                    return point_box_dist(&vertices[0], &lo, &hi) <= *radius;
                }
                vertices
                    .windows(2)
                    .any(|w| segment_box_dist(&w[0], &w[1], &lo, &hi) <= *radius + 1e-12 * h)
            }
            DomainSpec::Union { children } => children.iter().any(|c| c.touches_cell(center, h)),
            _ => {
                // set operations and the comb fall back to lattice probing
                let n = center.len();
                let mut x = center.to_vec();
                let total = 3usize.pow(n as u32);
                for code in 0..total {
                    let mut c = code;
                    for i in 0..n {
                        let k = (c % 3) as f64 - 1.0;
                        c /= 3;
                        x[i] = center[i] + 0.5 * h * k;
                    }
                    if self.contains_or_boundary(&x, h) {
                        return true;
                    }
                }
                false
            }
        }
    }
}

impl DomainSpec {
    fn contains_or_boundary(&self, x: &[f64], h: f64) -> bool {
        self.contains(x) || self.signed_distance(x).abs() <= 1e-12 * h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_tags() {
        let d = DomainSpec::difference(
            DomainSpec::cube([0.0, 0.0], [1.0, 1.0]),
            DomainSpec::union(vec![
                DomainSpec::ball([0.5, 0.5], 0.2),
                DomainSpec::ring([0.0, 0.0], 0.1, 0.2),
            ]),
        );
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains("\"type\":\"difference\""));
        assert!(s.contains("\"type\":\"ring\""));
        let back: DomainSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);

        let seg: DomainSpec =
            serde_json::from_str(r#"{"type":"polyline","vertices":[[0,0],[1,0]]}"#).unwrap();
        assert_eq!(seg, DomainSpec::segment([0.0, 0.0], [1.0, 0.0]));
    }

    #[test]
    fn membership_rules() {
        let b = DomainSpec::ball([0.0, 0.0], 1.0);
        assert!(b.contains(&[0.5, 0.5]));
        assert!(!b.contains(&[1.0, 0.0]));
        let bx = DomainSpec::cube([0.0, 0.0], [1.0, 1.0]);
        assert!(bx.contains(&[1.0, 0.0]));
        let hs = DomainSpec::Halfspace { normal: Point::from([1.0, 0.0]), offset: 0.5 };
        assert!(hs.contains(&[0.5, 7.0]));
        assert!(!hs.contains(&[0.6, 7.0]));
        assert!(!hs.bounding_box().is_finite());
        let i = DomainSpec::intersection(vec![bx.clone(), hs]);
        assert!(i.bounding_box().is_finite());
    }

    #[test]
    fn touching_is_exact_for_primitives() {
        let seg = DomainSpec::segment([0.0, 0.0], [0.0, 1.0]);
        // the segment lies on the face shared by two cells
        assert!(seg.touches_cell(&[0.25, 0.5], 0.5));
        assert!(seg.touches_cell(&[-0.25, 0.5], 0.5));
        assert!(!seg.touches_cell(&[0.75, 0.5], 0.5));
        let s = DomainSpec::sphere([0.0, 0.0], 1.0);
        assert!(s.touches_cell(&[0.95, 0.0], 0.2));
        assert!(!s.touches_cell(&[0.5, 0.0], 0.2));
        let diag = DomainSpec::segment([0.0, 0.0], [1.0, 1.0]);
        assert!(diag.touches_cell(&[0.45, 0.55], 0.1));
        assert!(!diag.touches_cell(&[0.3, 0.7], 0.1));
    }

    #[test]
    fn comb_geometry() {
        let comb =
            CombDomain::with_harmonic_widths(vec![0.0, 0.0], vec![1.25, 1.25], 5, 0.8, 0.25).unwrap();
        let top = comb.slit_top();
        assert!((top - 1.0).abs() < 1e-12);
        // inside slit 2 (x = 1/2)
        assert!(!comb.contains(&[0.5, 0.3]));
        // tooth between slits 3 and 2
        assert!(comb.contains(&[0.42, 0.3]));
        // above the slits everything is connected
        assert!(comb.contains(&[0.5, 1.1]));
        let (l, r) = comb.tooth_interval(2);
        assert!(l > 1.0 / 3.0 && r < 0.5);

        let bad = CombDomain {
            min: vec![0.0, 0.0],
            max: vec![1.5, 1.0],
            teeth_count: 2,
            slit_height: 0.5,
            halfwidths: vec![0.3, 0.3],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn signed_distances() {
        let b = DomainSpec::cube([0.0, 0.0], [2.0, 2.0]);
        assert!((b.signed_distance(&[1.0, 0.5]) + 0.5).abs() < 1e-12);
        assert!((b.signed_distance(&[3.0, 1.0]) - 1.0).abs() < 1e-12);
        let r = DomainSpec::ring([0.0, 0.0], 1.0, 2.0);
        assert!((r.signed_distance(&[1.5, 0.0]) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(DomainSpec::ball([0.0, 0.0], -1.0).validate().is_err());
        let mixed = DomainSpec::union(vec![
            DomainSpec::ball([0.0, 0.0], 1.0),
            DomainSpec::ball([0.0, 0.0, 0.0], 1.0),
        ]);
        assert!(mixed.validate().is_err());
        assert_eq!(DomainSpec::ring([0.0, 0.0, 0.0], 1.0, 2.0).validate().unwrap(), 3);
    }

    #[test]
    fn closest_points_and_anchors() {
        let s = DomainSpec::sphere([0.0, 0.0], 2.0);
        assert_eq!(s.closest_point(&[1.0, 0.0]).unwrap(), Point::from([2.0, 0.0]));
        let seg = DomainSpec::segment([0.0, 0.0], [0.0, 1.0]);
        assert_eq!(seg.closest_point(&[0.3, 0.5]).unwrap(), Point::from([0.0, 0.5]));
        assert_eq!(seg.closest_point(&[0.3, 2.0]).unwrap(), Point::from([0.0, 1.0]));
        let hs = DomainSpec::Halfspace { normal: Point::from([0.0, 2.0]), offset: 1.0 };
        assert_eq!(hs.closest_point(&[0.4, 1.5]).unwrap(), Point::from([0.4, 0.5]));

        // the generic projection lands on the exact anchor
        let c = [1.2, 1.2];
        let q = s.anchor(&c, 0.5).unwrap();
        let g = anchor_in_cell(&s, &c, 0.5).unwrap();
        assert!(euclid_dist_unchecked(&q, &g) < 1e-9);
        assert!(q.iter().zip(&c).all(|(a, b)| (a - b).abs() <= 0.25 + 1e-12));

        // set operations use the generic projection
        let u = DomainSpec::union(vec![DomainSpec::segment([0.0, 0.0], [1.0, 0.0]), DomainSpec::ball([5.0, 5.0], 1.0)]);
        let q = u.anchor(&[0.5, 0.1], 0.25).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-9 && q[1].abs() < 1e-9);
        assert!(u.anchor(&[0.5, 2.0], 0.25).is_none());
    }
}
