//! Piecewise-linear quasiconformal maps: similarities, the cone-stretch map
//! that slides a point along the axis of a cylinder while fixing everything
//! outside it, chains of such maps along a polyline, and their dilatations.
//!
//! In canonical position the cone-stretch acts on the cylinder
//! `C = {|x'| <= d0, 0 <= x_n <= d0 + d1}` (`x'` the first `n - 1`
//! coordinates) split into the lower cone `|x'| <= d0 - x_n`, the upper cone
//! `|x'| <= d0 (x_n - d0) / d1` and the shell between them. Every piece moves
//! points along `e_n` only and `d0 e_n` goes to `d1 e_n`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BoundingBox, DomainSpec, Region};
use crate::error::{Error, Result};
use crate::geometry::{euclid_dist_unchecked, Point};
use crate::grid::{rasterize_clipped, CellMask, Grid};
use crate::path::{push_path, DiscretePath, FamilySpec, JoinSeeds};
use crate::solver::{compute_modulus, compute_modulus_seeds, SolverOptions};

/// A map of `R^n` with an analytic derivative and inverse.
pub trait PointMap: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64]) -> Result<Point>;

    fn inverse(&self, y: &[f64]) -> Result<Point>;

    /// Analytic derivative at `x`.
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>>;

    /// Labels of the smooth pieces containing `x`; the derivative may jump
    /// where the signature changes.
    fn signature(&self, _x: &[f64]) -> Vec<u8> {
        Vec::new()
    }
}

/// `x -> offset + scale A x` with `A` orthogonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMap {
    pub offset: Point,
    /// Rows of `A`.
    pub matrix: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl SimilarityMap {
    pub fn new(offset: Point, matrix: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        let m = SimilarityMap { offset, matrix, scale };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let matrix = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        SimilarityMap { offset: Point::origin(n), matrix, scale: 1.0 }
    }

    pub fn translation(offset: Point) -> Self {
        let mut m = SimilarityMap::identity(offset.dim());
        m.offset = offset;
        m
    }

    /// Rotation by `angle` about `center` in the plane.
    pub fn rotation_2d(center: [f64; 2], angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let matrix = vec![vec![c, -s], vec![s, c]];
        let offset = Point::from([
            center[0] - (c * center[0] - s * center[1]),
            center[1] - (s * center[0] + c * center[1]),
        ]);
        SimilarityMap { offset, matrix, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.offset.dim();
        if self.matrix.len() != n || self.matrix.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: self.matrix.len() });
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument("similarity scale must be positive".into()));
        }
        let a = self.mat();
        let residual = (a.transpose() * &a - DMatrix::identity(n, n)).abs().max();
        if residual > 1e-10 {
            return Err(Error::InvalidArgument(format!("matrix is not orthogonal (residual {residual:.2e})")));
        }
        Ok(())
    }

    fn mat(&self) -> DMatrix<f64> {
        let n = self.matrix.len();
        DMatrix::from_fn(n, n, |i, j| self.matrix[i][j])
    }
}

impl PointMap for SimilarityMap {
    fn dim(&self) -> usize {
        self.offset.dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Point> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        Ok(Point::new(
            (0..n)
                .map(|i| self.offset[i] + self.scale * (0..n).map(|j| self.matrix[i][j] * x[j]).sum::<f64>())
                .collect(),
        ))
    }

    fn inverse(&self, y: &[f64]) -> Result<Point> {
        let n = self.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        Ok(Point::new(
            (0..n)
                .map(|j| (0..n).map(|i| self.matrix[i][j] * (y[i] - self.offset[i])).sum::<f64>() / self.scale)
                .collect(),
        ))
    }

    fn jacobian(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.mat() * self.scale)
    }
}

/// Piece of the cylinder a point falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeRegion {
    LowerCone,
    UpperCone,
    Shell,
    Outside,
}

impl ConeRegion {
    fn code(self) -> u8 {
        self as u8
    }
}

/// Cone-stretch map; `frame` carries world coordinates to canonical ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeStretchMap {
    pub d0: f64,
    pub d1: f64,
    pub frame: SimilarityMap,
}

impl ConeStretchMap {
    pub fn canonical(n: usize, d0: f64, d1: f64) -> Result<Self> {
        ConeStretchMap::new(d0, d1, SimilarityMap::identity(n))
    }

    pub fn new(d0: f64, d1: f64, frame: SimilarityMap) -> Result<Self> {
        if !(d0 > 0.0 && d0 < d1 && d1.is_finite()) {
            return Err(Error::InvalidArgument(format!("need 0 < d0 < d1, got d0 = {d0}, d1 = {d1}")));
        }
        if frame.dim() < 2 {
            return Err(Error::InvalidArgument("cone-stretch needs dimension >= 2".into()));
        }
        frame.validate()?;
        Ok(ConeStretchMap { d0, d1, frame })
    }

    /// `(d1 / d0)^(p (n - 1))`.
    pub fn dilatation_bound(&self, p: f64) -> f64 {
        (self.d1 / self.d0).powf(p * (self.frame.dim() as f64 - 1.0))
    }

    fn radial(z: &[f64]) -> f64 {
        z[..z.len() - 1].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Region of a canonical point, ties resolved lower cone, upper cone,
    /// shell, outside.
    pub fn classify_canonical(&self, z: &[f64]) -> ConeRegion {
        let (d0, d1) = (self.d0, self.d1);
        let s = Self::radial(z);
        let zn = z[z.len() - 1];
        if (0.0..=d0).contains(&zn) && s <= d0 - zn {
            ConeRegion::LowerCone
        } else if (d0..=d0 + d1).contains(&zn) && s <= d0 * (zn - d0) / d1 {
            ConeRegion::UpperCone
        } else if s <= d0 && (0.0..=d0 + d1).contains(&zn) {
            ConeRegion::Shell
        } else {
            ConeRegion::Outside
        }
    }

    pub fn classify(&self, x: &[f64]) -> Result<ConeRegion> {
        Ok(self.classify_canonical(&self.frame.apply(x)?))
    }

    /// Canonical displacement along `e_n`.
    fn shift(&self, region: ConeRegion, z: &[f64]) -> f64 {
        let (d0, d1) = (self.d0, self.d1);
        let zn = z[z.len() - 1];
        match region {
            ConeRegion::LowerCone => (d1 - d0) / d0 * zn,
            ConeRegion::UpperCone => (d1 - d0) / d1 * (d0 + d1 - zn),
            ConeRegion::Shell => (d1 - d0) / d0 * (d0 - Self::radial(z)),
            ConeRegion::Outside => 0.0,
        }
    }

    pub fn apply_canonical(&self, z: &[f64]) -> Point {
        let r = self.classify_canonical(z);
        let mut out = z.to_vec();
        let n = z.len();
        out[n - 1] += self.shift(r, z);
        Point::new(out)
    }

    /// Piecewise-linear inverse along the axis.
    pub fn inverse_canonical(&self, y: &[f64]) -> Point {
        let (d0, d1) = (self.d0, self.d1);
        let n = y.len();
        let s = Self::radial(y);
        let yn = y[n - 1];
        let mut out = y.to_vec();
        if s > d0 || !(0.0..=d0 + d1).contains(&yn) {
            return Point::new(out);
        }
        let ya = (d0 - s) * d1 / d0;
        let yb = d1 + s;
        out[n - 1] = if yn <= ya {
            yn * d0 / d1
        } else if yn <= yb {
            yn - (d1 - d0) / d0 * (d0 - s)
        } else {
            (yn - (d1 - d0) * (d0 + d1) / d1) * d1 / d0
        };
        Point::new(out)
    }

    /// Canonical derivative of the piece containing `z`.
    pub fn jacobian_canonical(&self, z: &[f64]) -> DMatrix<f64> {
        let n = z.len();
        let mut j = DMatrix::identity(n, n);
        match self.classify_canonical(z) {
            ConeRegion::LowerCone => j[(n - 1, n - 1)] = self.d1 / self.d0,
            ConeRegion::UpperCone => j[(n - 1, n - 1)] = self.d0 / self.d1,
            ConeRegion::Shell => {
                let k = (self.d1 - self.d0) / self.d0;
                let s = Self::radial(z);
                for i in 0..n - 1 {
                    j[(n - 1, i)] = -k * z[i] / s;
                }
            }
            ConeRegion::Outside => {}
        }
        j
    }
}

impl PointMap for ConeStretchMap {
    fn dim(&self) -> usize {
        self.frame.dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Point> {
        let z = self.frame.apply(x)?;
        if self.classify_canonical(&z) == ConeRegion::Outside {
            return Ok(Point::new(x.to_vec()));
        }
        self.frame.inverse(&self.apply_canonical(&z))
    }

    fn inverse(&self, y: &[f64]) -> Result<Point> {
        let z = self.frame.apply(y)?;
        if self.classify_canonical(&z) == ConeRegion::Outside {
            return Ok(Point::new(y.to_vec()));
        }
        self.frame.inverse(&self.inverse_canonical(&z))
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let z = self.frame.apply(x)?;
        let a = self.frame.mat();
        Ok(a.transpose() * self.jacobian_canonical(&z) * a)
    }

    fn signature(&self, x: &[f64]) -> Vec<u8> {
        vec![self.classify(x).map_or(u8::MAX, |r| r.code())]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapStep {
    Similarity(SimilarityMap),
    ConeStretch(ConeStretchMap),
}

impl MapStep {
    fn as_map(&self) -> &dyn PointMap {
        match self {
            MapStep::Similarity(m) => m,
            MapStep::ConeStretch(m) => m,
        }
    }
}

/// `f = f_last o ... o f_first`, optionally declared to be the identity
/// outside `support`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeMap {
    pub dim: usize,
    pub steps: Vec<MapStep>,
    #[serde(default)]
    pub support: Option<DomainSpec>,
}

impl CompositeMap {
    pub fn identity(n: usize) -> Self {
        CompositeMap { dim: n, steps: Vec::new(), support: None }
    }

    pub fn single(step: MapStep) -> Self {
        let dim = step.as_map().dim();
        CompositeMap { dim, steps: vec![step], support: None }
    }

    pub fn cone_stretches(&self) -> impl Iterator<Item = &ConeStretchMap> {
        self.steps.iter().filter_map(|s| match s {
            MapStep::ConeStretch(c) => Some(c),
            _ => None,
        })
    }

    /// Product of `(d1 / d0)^(p (n - 1))` over the cone-stretch steps.
    pub fn dilatation_bound(&self, p: f64) -> f64 {
        self.cone_stretches().map(|c| c.dilatation_bound(p)).product()
    }
}

impl PointMap for CompositeMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64]) -> Result<Point> {
        let mut y = Point::new(x.to_vec());
        for s in &self.steps {
            y = s.as_map().apply(&y)?;
        }
        Ok(y)
    }

    fn inverse(&self, y: &[f64]) -> Result<Point> {
        let mut x = Point::new(y.to_vec());
        for s in self.steps.iter().rev() {
            x = s.as_map().inverse(&x)?;
        }
        Ok(x)
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let mut j = DMatrix::identity(n, n);
        let mut y = Point::new(x.to_vec());
        for s in &self.steps {
            let m = s.as_map();
            j = m.jacobian(&y)? * j;
            y = m.apply(&y)?;
        }
        Ok(j)
    }

    fn signature(&self, x: &[f64]) -> Vec<u8> {
        let mut sig = Vec::new();
        let mut y = Point::new(x.to_vec());
        for s in &self.steps {
            let m = s.as_map();
            sig.extend(m.signature(&y));
            match m.apply(&y) {
                Ok(v) => y = v,
                Err(_) => break,
            }
        }
        sig
    }
}

/// Image `f(R)` of a region, tested through `f^{-1}`.
pub struct MappedRegion<'a> {
    pub inner: &'a dyn Region,
    pub map: &'a dyn PointMap,
    pub bbox: BoundingBox,
}

impl Region for MappedRegion<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.map.inverse(x).is_ok_and(|p| self.inner.contains(&p))
    }

    fn bounding_box(&self) -> BoundingBox {
        self.bbox.clone()
    }

    fn level(&self, x: &[f64]) -> Option<f64> {
        self.inner.level(&self.map.inverse(x).ok()?)
    }
}

/// Central differences with step `step` (default `1e-6 (1 + |x|)`); fails if
/// any probe leaves the smooth piece containing `x`.
pub fn jacobian_numeric(f: &dyn PointMap, x: &[f64], step: Option<f64>) -> Result<DMatrix<f64>> {
    let n = f.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = step.unwrap_or(1e-6 * (1.0 + norm));
    let sig = f.signature(x);
    let mut j = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    for k in 0..n {
        xp[k] = x[k] + h;
        xm[k] = x[k] - h;
        if f.signature(&xp) != sig || f.signature(&xm) != sig {
            return Err(Error::StraddlesBoundary);
        }
        let fp = f.apply(&xp)?;
        let fm = f.apply(&xm)?;
        for i in 0..n {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        xp[k] = x[k];
        xm[k] = x[k];
    }
    Ok(j)
}

/// Singular-value data of a derivative matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dilatations {
    /// Operator norm `|f'|`.
    pub norm: f64,
    /// Smallest stretch `l(f')`.
    pub min_stretch: f64,
    pub jacobian: f64,
    /// Inner dilatation of order `q`.
    pub k_inner: f64,
    /// Outer dilatation of order `p`.
    pub k_outer: f64,
}

pub fn matrix_dilatations(m: &DMatrix<f64>, p: f64, q: f64) -> Result<Dilatations> {
    let sv = m.clone().try_svd(false, false, 1e-14, 10_000).ok_or(Error::SvdFailure)?.singular_values;
    if sv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SvdFailure);
    }
    let norm = sv.max();
    let min_stretch = sv.min();
    let jacobian = m.determinant();
    let zero = m.iter().all(|v| *v == 0.0);
    let (k_inner, k_outer) = if jacobian != 0.0 {
        (jacobian.abs() / min_stretch.powf(q), norm.powf(p) / jacobian.abs())
    } else if zero {
        (1.0, 1.0)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(Dilatations { norm, min_stretch, jacobian, k_inner, k_outer })
}

/// `(K_{I,q}, K_{O,p})` of `f` at `x` from the analytic derivative.
pub fn dilatations(f: &dyn PointMap, x: &[f64], p: f64, q: f64) -> Result<Dilatations> {
    matrix_dilatations(&f.jacobian(x)?, p, q)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DilatationSample {
    pub x: Point,
    pub region: ConeRegion,
    #[serde(flatten)]
    pub d: Dilatations,
    /// `K_{O,alpha}^(p-1)` with `alpha = p (n-1) / (p-1)`.
    pub outer_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DilatationReport {
    pub d0: f64,
    pub d1: f64,
    pub n: usize,
    pub p: f64,
    pub samples: Vec<DilatationSample>,
    pub max_k_inner: f64,
    pub max_k_outer: f64,
    pub bound: f64,
    /// Largest entrywise gap between analytic and finite-difference
    /// derivatives.
    pub max_jacobian_deviation: f64,
    /// Whether `K_{I,p} <= K_{O,alpha}^(p-1)` held at every sample.
    pub outer_relation_holds: bool,
    pub pass: bool,
}

/// Samples `samples` interior points split evenly over the four regions and
/// checks `max K_{I,p} <= (d1/d0)^(p(n-1)) (1 + 1e-4)`.
pub fn verify_dilatation_bound(m: &ConeStretchMap, p: f64, samples: usize, seed: u64) -> Result<DilatationReport> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("p must exceed 1, got {p}")));
    }
    let n = m.dim();
    let (d0, d1) = (m.d0, m.d1);
    let height = d0 + d1;
    let quota = samples.div_ceil(4).max(1);
    let mut counts = [0usize; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = p * (n as f64 - 1.0) / (p - 1.0);
    let bound = m.dilatation_bound(p);
    let mut out = Vec::new();
    let mut deviation: f64 = 0.0;
    let mut outer_ok = true;
    let probe = 1e-6 * (1.0 + height);
    let mut attempts = 0usize;
    while counts.iter().any(|c| *c < quota) {
        attempts += 1;
        if attempts > 1000 * quota * 4 {
            break;
        }
        let mut z: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.5 * d0..1.5 * d0)).collect();
        z.push(rng.gen_range(-0.25 * height..1.25 * height));
        let r = m.classify_canonical(&z);
        let slot = r.code() as usize;
        if counts[slot] >= quota {
            continue;
        }
        let x = m.frame.inverse(&z)?;
        let numeric = match jacobian_numeric(m, &x, Some(probe)) {
            Ok(j) => j,
            Err(Error::StraddlesBoundary) => continue,
            Err(e) => return Err(e),
        };
        let analytic = m.jacobian(&x)?;
        deviation = deviation.max((numeric - &analytic).abs().max());
        let d = matrix_dilatations(&analytic, p, p)?;
        let ko_alpha = matrix_dilatations(&analytic, alpha, p)?.k_outer;
        let outer_bound = ko_alpha.powf(p - 1.0);
        outer_ok &= d.k_inner <= outer_bound * (1.0 + 1e-9);
        counts[slot] += 1;
        out.push(DilatationSample { x, region: r, d, outer_bound });
    }
    let max_k_inner = out.iter().map(|s| s.d.k_inner).fold(0.0, f64::max);
    let max_k_outer = out.iter().map(|s| s.d.k_outer).fold(0.0, f64::max);
    let pass = max_k_inner <= bound * (1.0 + 1e-4) && outer_ok;
    Ok(DilatationReport {
        d0,
        d1,
        n,
        p,
        samples: out,
        max_k_inner,
        max_k_outer,
        bound,
        max_jacobian_deviation: deviation,
        outer_relation_holds: outer_ok,
        pass,
    })
}

/// Orthogonal matrix with det +1 taking the unit vector `u` to `e_n`.
fn rotation_to_axis(u: &[f64]) -> Vec<Vec<f64>> {
    let n = u.len();
    let mut r = vec![vec![0.0; n]; n];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let c = u[n - 1];
    if c > 1.0 - 1e-15 {
        return r;
    }
    if c < -1.0 + 1e-15 {
        // half-turn in the (e_0, e_n) plane
        r[0][0] = -1.0;
        r[n - 1][n - 1] = -1.0;
        return r;
    }
    let mut v: Vec<f64> = u.iter().map(|x| -c * x).collect();
    v[n - 1] += 1.0;
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= s);
    for i in 0..n {
        for j in 0..n {
            r[i][j] += (c - 1.0) * (u[i] * u[j] + v[i] * v[j]) + s * (v[i] * u[j] - u[i] * v[j]);
        }
    }
    r
}

/// Chain of cone-stretches carrying `waypoints[0]` to the last waypoint
/// along the polyline, each supported in a cylinder of radius
/// `d0 = margin * dist(polyline, boundary of d0_domain) / sqrt(n)` around one
/// segment. Repeated waypoints are skipped.
pub fn build_chain(waypoints: &[Point], d0_domain: &DomainSpec, margin: f64) -> Result<CompositeMap> {
    let n = d0_domain.validate()?;
    if n < 2 {
        return Err(Error::InvalidArgument("chains need dimension >= 2".into()));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::InvalidArgument("margin factor must lie in (0, 1)".into()));
    }
    let mut pts: Vec<Point> = Vec::with_capacity(waypoints.len());
    for w in waypoints {
        w.check_dim(n)?;
        if pts.last() != Some(w) {
            pts.push(w.clone());
        }
    }
    let mut chain = CompositeMap { dim: n, steps: Vec::new(), support: Some(d0_domain.clone()) };
    if pts.len() < 2 {
        return Ok(chain);
    }
    let total: f64 = pts.windows(2).map(|w| euclid_dist_unchecked(&w[0], &w[1])).sum();
    let samples = DomainSpec::polyline_samples(&pts, total / 4096.0);
    let clearance = samples
        .iter()
        .map(|x| -d0_domain.signed_distance(x))
        .fold(f64::INFINITY, f64::min);
    let d0 = margin * clearance / (n as f64).sqrt();
    if !(d0 > 0.0) {
        return Err(Error::TooCloseToBoundary);
    }
    for w in pts.windows(2) {
        let delta = w[1].sub(&w[0]);
        let len = delta.norm();
        let u: Vec<f64> = delta.iter().map(|v| v / len).collect();
        let a = rotation_to_axis(&u);
        let rotated: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i][j] * w[0][j]).sum()).collect();
        let mut offset: Vec<f64> = rotated.iter().map(|v| -v).collect();
        offset[n - 1] += d0;
        let frame = SimilarityMap::new(Point::new(offset), a, 1.0)?;
        chain.steps.push(MapStep::ConeStretch(ConeStretchMap::new(d0, d0 + len, frame)?));
    }
    Ok(chain)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuasiInvarianceReport {
    pub p: f64,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub modulus: f64,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub image_modulus: f64,
    pub k_np: f64,
    /// `K_np M_p(Γ)`.
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub bound: f64,
    /// `sum K_{I,p}(x_c) rho_c^p h^n` with the extremal density of Γ.
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub weighted_bound: f64,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub ratio: f64,
    pub tol: f64,
    pub holds: bool,
    pub weighted_holds: bool,
    /// False when either solve stopped before converging; the inequality
    /// is then not decided.
    pub conclusive: bool,
}

fn image_of_end(set: &DomainSpec, f: &CompositeMap, h: f64) -> Result<Option<DomainSpec>> {
    if let DomainSpec::Polyline { vertices, radius } = set {
        if *radius == 0.0 {
            let path = DiscretePath::new_dedup(vertices.clone())?;
            let pushed = push_path(&path, f, h)?;
            return Ok(Some(DomainSpec::polyline(pushed.vertices().to_vec(), 0.0)));
        }
    }
    Ok(None)
}

/// Grid on the lattice of `grid` covering the image of the mask under `f`.
pub fn image_grid(mask: &CellMask, f: &dyn PointMap) -> Result<Grid> {
    let grid = mask.grid();
    let n = grid.dim();
    let h = grid.h();
    let mut bb = BoundingBox::empty(n);
    let mut c = vec![0.0; n];
    let mut corner = vec![0.0; n];
    for cell in mask.cells() {
        grid.center_into(cell, &mut c);
        for code in 0..(1usize << n) {
            for i in 0..n {
                corner[i] = c[i] + if code >> i & 1 == 1 { 0.5 } else { -0.5 } * h;
            }
            bb.include_point(&f.apply(&corner)?);
        }
    }
    if bb.is_empty() {
        return Err(Error::EmptySet);
    }
    let o = grid.origin();
    let origin: Vec<f64> = (0..n).map(|i| o[i] + ((bb.min[i] - o[i]) / h - 1.0).floor() * h).collect();
    let dims = (0..n).map(|i| (((bb.max[i] - origin[i]) / h) + 1.0).ceil() as usize).collect();
    Grid::new(origin, h, dims)
}

/// Computes `M_p(Γ)` and `M_p(f(Γ))` for a join family and checks
/// `M_p(f(Γ)) <= K M_p(Γ) (1 + tol)` with `K` the chain's dilatation bound,
/// together with the pointwise-weighted bound.
pub fn quasi_invariance_check(
    f: &CompositeMap,
    fam: &FamilySpec,
    mask: &CellMask,
    opts: &SolverOptions,
    tol: f64,
) -> Result<QuasiInvarianceReport> {
    let FamilySpec::Join { from, to, domain } = fam else {
        return Err(Error::InvalidArgument("quasi-invariance check needs a join family".into()));
    };
    let p = opts.p;
    let base = compute_modulus(fam, mask, opts)?;

    let grid = mask.grid();
    let h = grid.h();
    let igrid = image_grid(mask, f)?;
    let dmapped = MappedRegion { inner: domain, map: f, bbox: igrid.bounding_box() };
    let imask = rasterize_clipped(&dmapped, &igrid)?;
    let efrom = image_of_end(from, f, h)?;
    let eto = image_of_end(to, f, h)?;
    let mfrom = MappedRegion { inner: from, map: f, bbox: igrid.bounding_box() };
    let mto = MappedRegion { inner: to, map: f, bbox: igrid.bounding_box() };
    let rfrom: &dyn Region = match &efrom {
        Some(d) => d,
        None => &mfrom,
    };
    let rto: &dyn Region = match &eto {
        Some(d) => d,
        None => &mto,
    };
    let seeds = JoinSeeds::new(&imask, rfrom, rto);
    let image = compute_modulus_seeds(&imask, &seeds, opts)?;

    let k_np = f.dilatation_bound(p);
    let mut weighted = 0.0;
    let mut c = vec![0.0; grid.dim()];
    for (cell, rho) in base.density.values().iter().enumerate() {
        if *rho > 0.0 {
            grid.center_into(cell, &mut c);
            let k = dilatations(f, &c, p, p)?.k_inner;
            weighted += k * rho.powf(p);
        }
    }
    weighted *= grid.cell_volume();
    let bound = k_np * base.value;
    Ok(QuasiInvarianceReport {
        p,
        modulus: base.value,
        image_modulus: image.value,
        k_np,
        bound,
        weighted_bound: weighted,
        ratio: image.value / base.value,
        tol,
        holds: image.value <= bound * (1.0 + tol),
        weighted_holds: image.value <= weighted * (1.0 + tol),
        conclusive: base.converged && image.converged,
    })
}
