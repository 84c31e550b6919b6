//! Closed-form ring bounds, the radius and threshold constants of the
//! continuum arguments, and analytic moduli used as oracles.

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::geometry::{euclid_dist_unchecked, unit_sphere_area, Point};
use crate::grid::CellMask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub n: usize,
    pub p: f64,
    /// Constant of the ring lower bound. Its true value is not known in
    /// closed form; see [`calibrate_b_np`].
    pub b_np: f64,
    /// Quasi-invariance constant of the map chain, `>= 1`.
    pub k_np: f64,
}

impl BoundParams {
    /// Calibrated `b_np` and `k_np = 1`.
    pub fn new(n: usize, p: f64) -> Result<Self> {
        let params = BoundParams { n, p, b_np: 1.0, k_np: 1.0 };
        params.check_range()?;
        Ok(BoundParams { b_np: calibrate_b_np(n, p)?, ..params })
    }

    pub fn with_k(self, k_np: f64) -> Self {
        BoundParams { k_np, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("dimension must be at least 2, got {}", self.n)));
        }
        if !(self.b_np > 0.0 && self.b_np.is_finite()) {
            return Err(Error::InvalidArgument("b_np must be positive".into()));
        }
        if !(self.k_np >= 1.0 && self.k_np.is_finite()) {
            return Err(Error::InvalidArgument("k_np must be at least 1".into()));
        }
        self.check_range()
    }

    fn check_range(&self) -> Result<()> {
        let n = self.n as f64;
        if !(self.p > n - 1.0 && self.p <= n) {
            return Err(Error::OutsideRingBoundRange { p: self.p, n: self.n });
        }
        Ok(())
    }
}

/// `(b^t - a^t) / t`, continued by `ln(b/a)` at `t = 0`.
fn power_gap(a: f64, b: f64, t: f64) -> f64 {
    let l = (b / a).ln();
    if t == 0.0 {
        return l;
    }
    a.powf(t) * (t * l).exp_m1() / t
}

/// `2^n b_np / (n - p) * (b^(n-p) - a^(n-p))`, with the `p = n` limit
/// `2^n b_np ln(b/a)`.
pub fn ring_lower_bound(params: &BoundParams, a: f64, b: f64) -> Result<f64> {
    params.validate()?;
    if !(a > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("ring radii must be positive and finite, got ({a}, {b})")));
    }
    if a >= b {
        return Err(Error::InvalidArgument(format!("inner radius {a} must be below outer radius {b}")));
    }
    let n = params.n as f64;
    Ok(2f64.powi(params.n as i32) * params.b_np * power_gap(a, b, n - params.p))
}

/// Lower bound for the modulus of paths joining two continua whose
/// separation scale is `r`: `ring_lower_bound(r, 2r) / k_np`.
pub fn set_pair_bound(params: &BoundParams, r: f64) -> Result<f64> {
    Ok(ring_lower_bound(params, r, 2.0 * r)? / params.k_np)
}

/// Exact p-modulus of the family joining the two boundary spheres of the
/// ring `a < |x| < b` in R^n.
pub fn spherical_ring_exact(n: usize, p: f64, a: f64, b: f64) -> Result<f64> {
    if n < 2 || !(p > 1.0) || !(a > 0.0 && a < b) {
        return Err(Error::InvalidArgument(format!("need n >= 2, p > 1, 0 < a < b; got n={n} p={p} a={a} b={b}")));
    }
    // int_a^b t^((1-n)/(p-1)) dt
    let integral = power_gap(a, b, (p - n as f64) / (p - 1.0));
    Ok(unit_sphere_area(n)? * integral.powf(1.0 - p))
}

/// p-modulus of the family joining the two ends of a straight cylinder.
pub fn cylinder_exact(cross_section: f64, length: f64, p: f64) -> Result<f64> {
    if !(cross_section > 0.0 && length > 0.0 && p > 0.0) {
        return Err(Error::InvalidArgument("cylinder parameters must be positive".into()));
    }
    Ok(cross_section * length.powf(1.0 - p))
}

/// Inner radii of the calibration lattice; outer radii are `a * ratio`.
const CALIBRATION_RADII: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const CALIBRATION_RATIOS: [f64; 7] = [1.05, 1.25, 1.5, 2.0, std::f64::consts::E, 4.0, 8.0];

/// The largest `b_np <= 1` for which the ring lower bound stays below the
/// exact ring modulus on a fixed lattice of radii.
pub fn calibrate_b_np(n: usize, p: f64) -> Result<f64> {
    let unit = BoundParams { n, p, b_np: 1.0, k_np: 1.0 };
    unit.validate()?;
    let mut best: f64 = 1.0;
    for &a in &CALIBRATION_RADII {
        for &ratio in &CALIBRATION_RATIOS {
            let b = a * ratio;
            let exact = spherical_ring_exact(n, p, a, b)?;
            best = best.min(exact / ring_lower_bound(&unit, a, b)?);
        }
    }
    Ok(best)
}

/// The three terms whose minimum is `2r`, and the points realising the
/// distance between the two sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusChoice {
    pub r: f64,
    pub set_distance: f64,
    pub boundary_distance: f64,
    pub spread: f64,
    pub a0: Point,
    pub a_star: Point,
}

/// `r = min{d(A, A*), d(A*, dD), max_{x in A*} |x - a*|} / 2`, where `a*`
/// is the point of `A*` nearest to `A`. Boundary distances come from the
/// domain's distance function.
pub fn choose_r(a: &[Point], a_star: &[Point], domain: &DomainSpec) -> Result<RadiusChoice> {
    for x in a_star {
        if domain.signed_distance(x) >= 0.0 {
            return Err(Error::InvalidArgument("A* must lie inside the domain".into()));
        }
    }
    choose_r_with(a, a_star, |x| domain.boundary_distance(x))
}

/// As [`choose_r`], with the distance to the boundary measured to the
/// nearest outer face of a boundary cell of `mask`.
pub fn choose_r_on_mask(a: &[Point], a_star: &[Point], mask: &CellMask) -> Result<RadiusChoice> {
    let grid = mask.grid();
    let bits = mask.bits();
    // Faces between a set cell and an unset or out-of-grid neighbour.
    let mut faces: Vec<Point> = Vec::new();
    let half = grid.h() / 2.0;
    for c in mask.cells() {
        let centre = grid.center(c);
        for axis in 0..grid.dim() {
            for positive in [false, true] {
                let open = grid.step(c, axis, positive).is_none_or(|q| !bits[q]);
                if open {
                    let mut f = centre.clone().into_inner();
                    f[axis] += if positive { half } else { -half };
                    faces.push(f.into());
                }
            }
        }
    }
    for x in a_star {
        if !grid.locate(x).is_ok_and(|c| bits[c]) {
            return Err(Error::InvalidArgument("A* must lie inside the mask".into()));
        }
    }
    // A face centre is at most h*sqrt(n-1)/2 from any point of its face, so
    // the estimate is within that of the distance to the cell boundary.
    choose_r_with(a, a_star, |x| {
        faces.iter().map(|f| euclid_dist_unchecked(x, f)).fold(f64::INFINITY, f64::min)
    })
}

fn choose_r_with(a: &[Point], a_star: &[Point], boundary: impl Fn(&[f64]) -> f64) -> Result<RadiusChoice> {
    if a.is_empty() || a_star.is_empty() {
        return Err(Error::EmptySet);
    }
    let (mut best, mut i0, mut j0) = (f64::INFINITY, 0, 0);
    for (i, x) in a.iter().enumerate() {
        for (j, y) in a_star.iter().enumerate() {
            let d = euclid_dist_unchecked(x, y);
            if d < best {
                (best, i0, j0) = (d, i, j);
            }
        }
    }
    if best <= 1e-12 {
        return Err(Error::InvalidArgument("A and A* intersect".into()));
    }
    let star = &a_star[j0];
    let spread = a_star.iter().map(|x| euclid_dist_unchecked(x, star)).fold(0.0, f64::max);
    if spread <= 0.0 {
        return Err(Error::DegenerateContinuum);
    }
    let bd = a_star.iter().map(|x| boundary(x)).fold(f64::INFINITY, f64::min);
    Ok(RadiusChoice {
        r: best.min(bd).min(spread) / 2.0,
        set_distance: best,
        boundary_distance: bd,
        spread,
        a0: a[i0].clone(),
        a_star: star.clone(),
    })
}

/// The threshold of the continuum swap argument together with each term of
/// the minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaStar {
    pub value: f64,
    pub delta_over_q: f64,
    pub deltas: Vec<f64>,
    /// Ring bound over `r < |x - e| < 2r`.
    pub inner_ring: f64,
    /// Ring bound over `2r < |x - e| < 4r`.
    pub outer_ring: f64,
}

/// `3^-p min{delta/q, delta_1, .., delta_q, ring(r, 2r), ring(2r, 4r)}`.
pub fn delta_star(delta: f64, q: usize, deltas: &[f64], r: f64, params: &BoundParams) -> Result<DeltaStar> {
    if !(delta > 0.0) || q == 0 || !(r > 0.0) {
        return Err(Error::InvalidArgument("delta, q and r must be positive".into()));
    }
    if deltas.len() != q {
        return Err(Error::InvalidArgument(format!("expected {q} per-ball moduli, got {}", deltas.len())));
    }
    if deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidArgument("per-ball moduli must be positive".into()));
    }
    let inner_ring = ring_lower_bound(params, r, 2.0 * r)?;
    let outer_ring = ring_lower_bound(params, 2.0 * r, 4.0 * r)?;
    let delta_over_q = delta / q as f64;
    let m = deltas.iter().copied().fold(delta_over_q.min(inner_ring).min(outer_ring), f64::min);
    Ok(DeltaStar {
        value: 3f64.powf(-params.p) * m,
        delta_over_q,
        deltas: deltas.to_vec(),
        inner_ring,
        outer_ring,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Region;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{E, PI};

    fn params(n: usize, p: f64, b: f64) -> BoundParams {
        BoundParams { n, p, b_np: b, k_np: 1.0 }
    }

    #[test]
    fn ring_bound_examples() {
        let beta = 0.3;
        assert_relative_eq!(ring_lower_bound(&params(2, 1.5, beta), 1.0, 4.0).unwrap(), 8.0 * beta, epsilon = 1e-12);
        assert_relative_eq!(ring_lower_bound(&params(2, 2.0, beta), 1.0, E).unwrap(), 4.0 * beta, epsilon = 1e-12);
        let near = ring_lower_bound(&params(2, 2.0 - 1e-9, beta), 1.0, E).unwrap();
        assert_relative_eq!(near, 4.0 * beta, epsilon = 1e-8);
        let thin = ring_lower_bound(&params(2, 1.5, 1.0), 1.0, 1.0 + 1e-9).unwrap();
        assert!(thin > 0.0 && thin < 1e-8);
    }

    #[test]
    fn ring_bound_rejects() {
        assert!(ring_lower_bound(&params(2, 1.5, 1.0), 2.0, 1.0).is_err());
        assert!(ring_lower_bound(&params(2, 1.5, 1.0), 1.0, 1.0).is_err());
        assert!(matches!(
            ring_lower_bound(&params(3, 2.0, 1.0), 1.0, 2.0),
            Err(Error::OutsideRingBoundRange { .. })
        ));
        assert!(matches!(
            ring_lower_bound(&params(2, 2.5, 1.0), 1.0, 2.0),
            Err(Error::OutsideRingBoundRange { .. })
        ));
    }

    #[test]
    fn continuity_at_conformal_exponent() {
        // The central average of the general formula at n -/+ 1e-4 cancels
        // the first-order term and must reproduce the limit branch.
        for (a, b) in [(0.7, 2.3), (1.0, E), (0.1, 10.0)] {
            let limit = power_gap(a, b, 0.0);
            let avg = 0.5 * (power_gap(a, b, 1e-4) + power_gap(a, b, -1e-4));
            assert!((avg - limit).abs() <= 1e-8 * limit, "{a} {b}: {avg} vs {limit}");
        }
        let at = ring_lower_bound(&params(3, 3.0, 0.5), 0.7, 2.3).unwrap();
        let below = ring_lower_bound(&params(3, 3.0 - 1e-4, 0.5), 0.7, 2.3).unwrap();
        assert!((at - below).abs() / at < 1e-3);
    }

    #[test]
    fn set_pair_examples() {
        let beta = 0.2;
        let k1 = params(2, 1.5, beta);
        assert_relative_eq!(
            set_pair_bound(&k1, 1.3).unwrap(),
            ring_lower_bound(&k1, 1.3, 2.6).unwrap(),
            epsilon = 1e-14
        );
        let k2 = params(2, 1.5, beta).with_k(2.0);
        assert_relative_eq!(set_pair_bound(&k2, 1.0).unwrap(), 4.0 * beta * (2f64.sqrt() - 1.0), epsilon = 1e-12);
        let k4 = params(2, 1.5, beta).with_k(4.0);
        assert_relative_eq!(
            set_pair_bound(&k4, 1.0).unwrap() * 2.0,
            set_pair_bound(&k2, 1.0).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn exact_moduli() {
        assert_relative_eq!(spherical_ring_exact(2, 2.0, 1.0, E).unwrap(), 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(spherical_ring_exact(3, 3.0, 1.0, E).unwrap(), 4.0 * PI, epsilon = 1e-12);
        assert!(spherical_ring_exact(2, 2.0, 1.0, 1.0 + 1e-12).unwrap() > 1e10);
        // p = 1.5 in the plane: the radial integral of t^-2 is 1/a - 1/b
        let direct = 2.0 * PI * (1.0 - 1.0 / E).powf(-0.5);
        assert_relative_eq!(spherical_ring_exact(2, 1.5, 1.0, E).unwrap(), direct, epsilon = 1e-12);
        assert_relative_eq!(cylinder_exact(1.0, 1.0, 2.7).unwrap(), 1.0);
        assert_relative_eq!(cylinder_exact(1.0, 2.0, 2.0).unwrap(), 0.5);
        assert_relative_eq!(cylinder_exact(3.0, 1.0, 3.0).unwrap(), 3.0);
    }

    #[test]
    fn calibration_is_capped_and_safe() {
        for (n, p) in [(2, 1.5), (2, 2.0), (3, 2.5), (3, 3.0)] {
            let b = calibrate_b_np(n, p).unwrap();
            assert!(b > 0.0 && b <= 1.0);
            let params = params(n, p, b);
            for &a in &CALIBRATION_RADII {
                for &ratio in &CALIBRATION_RATIOS {
                    let lo = ring_lower_bound(&params, a, a * ratio).unwrap();
                    assert!(lo <= spherical_ring_exact(n, p, a, a * ratio).unwrap() * (1.0 + 1e-12));
                }
            }
        }
        assert!(BoundParams::new(2, 1.0).is_err());
    }

    fn segment(a: [f64; 2], b: [f64; 2], m: usize) -> Vec<Point> {
        (0..=m).map(|k| Point::from(a).lerp(&Point::from(b), k as f64 / m as f64)).collect()
    }

    #[test]
    fn choose_r_examples() {
        let big = DomainSpec::cube([-100.0, -100.0], [100.0, 100.0]);
        let a = segment([0.0, 0.0], [0.0, 5.0], 50);
        let a_star = segment([4.0, 0.0], [4.0, 10.0], 100);
        let c = choose_r(&a, &a_star, &big).unwrap();
        assert_relative_eq!(c.r, 2.0, epsilon = 1e-12);

        let near_wall = DomainSpec::cube([-100.0, -100.0], [21.0, 100.0]);
        let a_far = segment([0.0, 0.0], [0.0, 5.0], 50);
        let a_star = segment([10.0, 0.0], [20.0, 0.0], 100);
        let c = choose_r(&a_far, &a_star, &near_wall).unwrap();
        assert_relative_eq!(c.set_distance, 10.0, epsilon = 1e-12);
        assert_relative_eq!(c.r, 0.5, epsilon = 1e-12);

        let single = vec![Point::from([3.0, 3.0])];
        assert!(matches!(choose_r(&a, &single, &big), Err(Error::DegenerateContinuum)));
        assert!(choose_r(&a, &a, &big).is_err());
    }

    #[test]
    fn choose_r_on_mask_matches_domain_distance() {
        let d = DomainSpec::cube([-8.0, -8.0], [8.0, 8.0]);
        let grid = crate::grid::Grid::with_resolution(&d.bounding_box(), 64).unwrap();
        let mask = crate::grid::rasterize(&d, &grid).unwrap();
        let a = segment([-1.0, 0.0], [-1.0, 1.0], 10);
        let a_star = segment([1.0, -7.0], [1.0, 0.0], 70);
        let exact = choose_r(&a, &a_star, &d).unwrap();
        let est = choose_r_on_mask(&a, &a_star, &mask).unwrap();
        assert!((exact.r - est.r).abs() <= grid.h());
    }

    #[test]
    fn delta_star_examples() {
        let unit = params(2, 2.0, 1.0);
        let ds = delta_star(1.0, 1, &[1.0], 1.0, &unit).unwrap();
        // ring(1,2) = 4 ln 2 and ring(2,4) = 4 ln 2, both above 1
        assert_relative_eq!(ds.value, 1.0 / 9.0, epsilon = 1e-15);
        let big = delta_star(1e6, 1, &[1e6], 1.0, &unit).unwrap();
        assert_relative_eq!(big.value, 4.0 * 2f64.ln() / 9.0, epsilon = 1e-14);
        let half = delta_star(0.5, 1, &[0.5], 1.0, &unit).unwrap();
        assert_relative_eq!(half.value, 0.5 * ds.value, epsilon = 1e-15);
        assert!(delta_star(1.0, 2, &[1.0], 1.0, &unit).is_err());
        assert!(delta_star(1.0, 1, &[0.0], 1.0, &unit).is_err());
        assert!(delta_star(-1.0, 1, &[1.0], 1.0, &unit).is_err());
    }

    proptest! {
        #[test]
        fn ring_bound_monotone(a in 0.05f64..5.0, gap in 0.01f64..5.0, da in 0.001f64..0.5, p in 1.01f64..2.0) {
            let pr = params(2, p, 0.7);
            let b = a + gap;
            let base = ring_lower_bound(&pr, a, b).unwrap();
            prop_assert!(base > 0.0);
            prop_assert!(ring_lower_bound(&pr, a, b + da).unwrap() > base);
            if a + da < b {
                prop_assert!(ring_lower_bound(&pr, a + da, b).unwrap() < base);
            }
        }

        #[test]
        fn set_pair_positive(r in 1e-6f64..1e3, p in 2.01f64..3.0, k in 1.0f64..1e3) {
            let pr = params(3, p, 0.1).with_k(k);
            prop_assert!(set_pair_bound(&pr, r).unwrap() > 0.0);
        }

        #[test]
        fn delta_star_below_delta_over_q(delta in 1e-3f64..1e3, q in 1usize..6, r in 0.01f64..3.0, p in 1.1f64..2.0) {
            let pr = params(2, p, 0.5);
            let deltas: Vec<f64> = (0..q).map(|i| 0.1 + i as f64).collect();
            let ds = delta_star(delta, q, &deltas, r, &pr).unwrap();
            prop_assert!(ds.value <= 3f64.powf(-p) * delta / q as f64 * (1.0 + 1e-15));
            prop_assert!(ds.value > 0.0);
        }
    }
}
