//! Points, balls, spheres and rings in R^n, together with the Euclidean and
//! chordal (spherical) metrics of the extended space.

use std::ops::{Deref, Index};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of R^n. The dimension is carried by the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn origin(n: usize) -> Self {
        Point(vec![0.0; n])
    }

    /// The k-th standard basis vector (0-based) of R^n.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut c = vec![0.0; n];
        c[k] = 1.0;
        Point(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Point {
        Point(self.0.iter().map(|a| a * s).collect())
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// `self + t * (other - self)`
    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + t * (b - a)).collect())
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(v: [f64; N]) -> Self {
        Point(v.to_vec())
    }
}

/// A point of the one-point compactification of R^n.
#[derive(Clone, Debug, PartialEq)]
pub enum ExtendedPoint {
    Finite(Point),
    Infinity,
}

impl From<Point> for ExtendedPoint {
    fn from(p: Point) -> Self {
        ExtendedPoint::Finite(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("ball radius {radius} must be positive")));
        }
        Ok(Ball { center, radius })
    }

    pub fn contains(&self, x: &Point) -> bool {
        euclid_dist_unchecked(&self.center, x) < self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Point,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("sphere radius {radius} must be positive")));
        }
        Ok(Sphere { center, radius })
    }
}

/// The open spherical shell `r1 < |x - center| < r2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub center: Point,
    pub r1: f64,
    pub r2: f64,
}

impl Ring {
    pub fn new(center: Point, r1: f64, r2: f64) -> Result<Self> {
        if !(r1 > 0.0 && r1 < r2 && r2.is_finite()) {
            return Err(Error::InvalidArgument(format!("ring needs 0 < r1 < r2, got {r1}, {r2}")));
        }
        Ok(Ring { center, r1, r2 })
    }

    pub fn contains(&self, x: &Point) -> bool {
        let d = euclid_dist_unchecked(&self.center, x);
        self.r1 < d && d < self.r2
    }
}

pub(crate) fn euclid_dist_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn euclid_dist(a: &Point, b: &Point) -> Result<f64> {
    b.check_dim(a.dim())?;
    Ok(euclid_dist_unchecked(a, b))
}

/// Chordal distance of the extended space.
pub fn spherical_dist(a: &ExtendedPoint, b: &ExtendedPoint) -> Result<f64> {
    use ExtendedPoint::*;
    match (a, b) {
        (Infinity, Infinity) => Ok(0.0),
        (Finite(x), Infinity) | (Infinity, Finite(x)) => {
            Ok(1.0 / (1.0 + x.dot(x)).sqrt())
        }
        (Finite(x), Finite(y)) => {
            let d = euclid_dist(x, y)?;
            Ok(d / ((1.0 + x.dot(x)).sqrt() * (1.0 + y.dot(y)).sqrt()))
        }
    }
}

/// Spherical diameter of a finite set: the largest pairwise chordal distance.
pub fn spherical_diameter(set: &[ExtendedPoint]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut best: f64 = 0.0;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            best = best.max(spherical_dist(&set[i], &set[j])?);
        }
    }
    Ok(best)
}

/// A point where a polyline crosses a sphere: segment index and local
/// parameter `t` in `[0, 1]` along that segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub segment: usize,
    pub t: f64,
}

const DISCRIMINANT_TOL: f64 = 1e-12;

/// Solves `|a + t (b - a) - c| = r` on every segment of `vertices`.
///
/// Roots landing on a shared vertex are reported once (on the earlier
/// segment's end only for the final segment).
pub fn sphere_crossings(vertices: &[Point], s: &Sphere) -> Result<Vec<Crossing>> {
    if vertices.len() < 2 {
        return Err(Error::InvalidArgument("path needs at least 2 vertices".into()));
    }
    let n = s.center.dim();
    let mut out = Vec::new();
    let last = vertices.len() - 2;
    for (i, w) in vertices.windows(2).enumerate() {
        w[0].check_dim(n)?;
        w[1].check_dim(n)?;
        let d = w[1].sub(&w[0]);
        let m = w[0].sub(&s.center);
        let qa = d.dot(&d);
        if qa == 0.0 {
            continue;
        }
        let qb = 2.0 * d.dot(&m);
        let qc = m.dot(&m) - s.radius * s.radius;
        let mut disc = qb * qb - 4.0 * qa * qc;
        let scale = qb * qb + (4.0 * qa * qc).abs();
        if disc < 0.0 {
            if -disc <= DISCRIMINANT_TOL * scale.max(f64::MIN_POSITIVE) {
                disc = 0.0;
            } else {
                continue;
            }
        }
        let sq = disc.sqrt();
        let mut roots = if sq == 0.0 {
            vec![-qb / (2.0 * qa)]
        } else {
            vec![(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)]
        };
        roots.retain(|t| *t >= 0.0 && (*t < 1.0 || (i == last && *t <= 1.0)));
        out.extend(roots.into_iter().map(|t| Crossing { segment: i, t }));
    }
    Ok(out)
}

/// Volume of the unit ball of R^n.
pub fn unit_ball_volume(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    // Omega_n = 2 pi / n * Omega_{n-2}, Omega_0 = 1, Omega_1 = 2
    let mut v = if n % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if n % 2 == 0 { 2 } else { 3 };
    while k <= n {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    Ok(v)
}

/// Surface area of the unit sphere S^{n-1}, `n * Omega_n`.
pub fn unit_sphere_area(n: usize) -> Result<f64> {
    Ok(n as f64 * unit_ball_volume(n)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> Point {
        Point::new(v.to_vec())
    }

    #[test]
    fn euclid_examples() {
        assert_eq!(euclid_dist(&p(&[0.0, 0.0]), &p(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(euclid_dist(&p(&[0.0, 0.0]), &p(&[3.0, 4.0])).unwrap(), 5.0);
        assert_relative_eq!(
            euclid_dist(&p(&[1.0, 1.0, 1.0]), &p(&[2.0, 2.0, 2.0])).unwrap(),
            1.7320508075688772,
            epsilon = 1e-12
        );
        assert!(matches!(
            euclid_dist(&p(&[0.0, 0.0]), &p(&[0.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spherical_examples() {
        let o: ExtendedPoint = p(&[0.0, 0.0]).into();
        assert_eq!(spherical_dist(&o, &ExtendedPoint::Infinity).unwrap(), 1.0);
        let e1: ExtendedPoint = p(&[1.0, 0.0]).into();
        assert_relative_eq!(spherical_dist(&o, &e1).unwrap(), 0.7071067811865475, epsilon = 1e-12);
        assert_eq!(spherical_dist(&e1, &e1).unwrap(), 0.0);
        assert_eq!(
            spherical_dist(&ExtendedPoint::Infinity, &ExtendedPoint::Infinity).unwrap(),
            0.0
        );
    }

    #[test]
    fn spherical_diameter_examples() {
        assert_eq!(spherical_diameter(&[p(&[3.0, 1.0]).into()]).unwrap(), 0.0);
        assert_eq!(
            spherical_diameter(&[p(&[0.0, 0.0]).into(), ExtendedPoint::Infinity]).unwrap(),
            1.0
        );
        let three: Vec<ExtendedPoint> = vec![
            p(&[0.0, 0.0]).into(),
            p(&[1.0, 0.0]).into(),
            p(&[0.0, 1.0]).into(),
        ];
        // pairs: 1/sqrt2, 1/sqrt2, sqrt2/2 = 1/sqrt2
        assert_relative_eq!(spherical_diameter(&three).unwrap(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(matches!(spherical_diameter(&[]), Err(Error::EmptySet)));
    }

    #[test]
    fn crossings_examples() {
        let unit = Sphere::new(p(&[0.0, 0.0]), 1.0).unwrap();
        let c = sphere_crossings(&[p(&[0.0, 0.0]), p(&[2.0, 0.0])], &unit).unwrap();
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c[0].t, 0.5, epsilon = 1e-14);

        let inside = sphere_crossings(&[p(&[0.1, 0.0]), p(&[0.0, 0.2]), p(&[-0.3, 0.1])], &unit).unwrap();
        assert!(inside.is_empty());

        let through = sphere_crossings(&[p(&[-2.0, 0.0]), p(&[2.0, 0.0])], &unit).unwrap();
        assert_eq!(through.len(), 2);
        assert_relative_eq!(through[0].t, 0.25, epsilon = 1e-14);
        assert_relative_eq!(through[1].t, 0.75, epsilon = 1e-14);

        // tangent segment touching at (0, 1)
        let tangent = sphere_crossings(&[p(&[-1.0, 1.0]), p(&[1.0, 1.0])], &unit).unwrap();
        assert_eq!(tangent.len(), 1);
        assert_relative_eq!(tangent[0].t, 0.5, epsilon = 1e-9);

        assert!(sphere_crossings(&[p(&[0.0, 0.0])], &unit).is_err());
    }

    #[test]
    fn ball_volumes() {
        assert_relative_eq!(unit_ball_volume(2).unwrap(), std::f64::consts::PI, epsilon = 1e-14);
        assert_relative_eq!(unit_ball_volume(3).unwrap(), 4.1887902047863905, epsilon = 1e-13);
        assert_eq!(unit_ball_volume(1).unwrap(), 2.0);
        assert_relative_eq!(
            unit_ball_volume(4).unwrap(),
            std::f64::consts::PI.powi(2) / 2.0,
            epsilon = 1e-13
        );
        assert!(unit_ball_volume(0).is_err());
        assert_relative_eq!(unit_sphere_area(3).unwrap(), 4.0 * std::f64::consts::PI, epsilon = 1e-13);
    }

    #[test]
    fn shape_validation() {
        assert!(Ball::new(p(&[0.0, 0.0]), 0.0).is_err());
        assert!(Ring::new(p(&[0.0, 0.0]), 2.0, 1.0).is_err());
        assert!(Sphere::new(p(&[0.0, 0.0]), -1.0).is_err());
        let r = Ring::new(p(&[0.0, 0.0]), 1.0, 2.0).unwrap();
        assert!(r.contains(&p(&[1.5, 0.0])));
        assert!(!r.contains(&p(&[0.5, 0.0])));
    }

    fn pt(n: usize, scale: f64) -> impl Strategy<Value = Point> {
        proptest::collection::vec(-scale..scale, n).prop_map(Point::new)
    }

    proptest! {
        #[test]
        fn spherical_is_bounded_and_symmetric(a in pt(3, 50.0), b in pt(3, 50.0)) {
            let ea: ExtendedPoint = a.clone().into();
            let eb: ExtendedPoint = b.clone().into();
            let h = spherical_dist(&ea, &eb).unwrap();
            prop_assert!(h <= 1.0 + 1e-15);
            prop_assert!((h - spherical_dist(&eb, &ea).unwrap()).abs() < 1e-15);
            prop_assert!(spherical_dist(&ea, &ExtendedPoint::Infinity).unwrap() <= 1.0);
        }

        #[test]
        fn spherical_matches_euclid_near_origin(a in pt(2, 1e-3), b in pt(2, 1e-3)) {
            // all coordinates bounded by eps/sqrt(2) keeps |x| <= eps
            let eps = 1e-3 * 2f64.sqrt();
            let d = euclid_dist(&a, &b).unwrap();
            let h = spherical_dist(&a.clone().into(), &b.clone().into()).unwrap();
            prop_assert!((h - d).abs() <= 2.0 * eps * eps * d + 1e-18);
        }

        #[test]
        fn triangle_inequality(a in pt(4, 10.0), b in pt(4, 10.0), c in pt(4, 10.0)) {
            let ab = euclid_dist(&a, &b).unwrap();
            let bc = euclid_dist(&b, &c).unwrap();
            let ac = euclid_dist(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn inside_to_outside_crosses(r in 0.5f64..3.0, t_in in 0.0f64..0.99, t_out in 1.01f64..3.0,
                                     th1 in 0.0f64..6.28, th2 in 0.0f64..6.28) {
            let s = Sphere::new(Point::origin(2), r).unwrap();
            let a = p(&[r * t_in * th1.cos(), r * t_in * th1.sin()]);
            let b = p(&[r * t_out * th2.cos(), r * t_out * th2.sin()]);
            let mid = p(&[0.3 * r, -0.2 * r]);
            let c = sphere_crossings(&[a, mid, b], &s).unwrap();
            prop_assert!(!c.is_empty());
        }
    }
}
