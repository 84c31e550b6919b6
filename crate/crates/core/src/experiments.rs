//! Accessibility experiments: empirical lower modulus bounds over generated
//! continua, the continuum swap, the uniformity probe and the vanishing
//! modulus of comb teeth.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{delta_star, BoundParams, DeltaStar};
use crate::domain::{CombDomain, DomainSpec, Region};
use crate::error::{Error, Result};
use crate::geometry::{euclid_dist_unchecked, spherical_diameter, ExtendedPoint, Point};
use crate::grid::{connected_components, rasterize_clipped, CellMask, Grid};
use crate::path::{
    domains_intersect, shortest_cells, shortest_join, DiscretePath, FamilySpec, GridGraph,
    JoinSeeds, Stencil,
};
use crate::solver::{compute_modulus, compute_modulus_seeds, SolverOptions};

/// A boundary point `x0` of `domain` with neighbourhoods `v ⊂ u` and a
/// compact probe set `e` inside the domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityScenario {
    pub domain: DomainSpec,
    pub x0: Point,
    pub u: DomainSpec,
    pub v: DomainSpec,
    pub e: DomainSpec,
}

impl AccessibilityScenario {
    pub fn validate(&self, mask: &CellMask) -> Result<()> {
        let grid = mask.grid();
        let n = grid.dim();
        for d in [&self.domain, &self.u, &self.v, &self.e] {
            if d.validate()? != n {
                return Err(Error::DimensionMismatch { expected: n, got: d.dim() });
            }
        }
        if self.x0.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.x0.dim() });
        }
        if !self.domain.closure_contains(&self.x0, grid.h()) {
            return Err(Error::InvalidArgument("x0 is not in the closure of the domain".into()));
        }
        if !self.v.closure_contains(&self.x0, 0.0) {
            return Err(Error::InvalidArgument("V is not a neighbourhood of x0".into()));
        }
        let mut c = vec![0.0; n];
        for cell in mask.cells() {
            grid.center_into(cell, &mut c);
            if self.v.contains(&c) && !self.u.contains(&c) {
                return Err(Error::InvalidArgument("V is not contained in U at the working grid".into()));
            }
        }
        if mask.touching(&self.e).count() == 0 {
            return Err(Error::EmptyFamily("E does not meet the domain mask".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuumKind {
    /// Straight segment from x0 outward.
    Radial,
    /// Polyline whose direction turns while its distance from x0 grows.
    Spiral,
    /// Grid path under a random density between a cell of V and a cell
    /// just outside U.
    GridPath,
}

/// A generated continuum crossing both `∂V` and `∂U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Continuum {
    pub kind: ContinuumKind,
    pub vertices: Vec<Point>,
}

impl Continuum {
    pub fn spec(&self) -> DomainSpec {
        DomainSpec::polyline(self.vertices.clone(), 0.0)
    }
}

/// Per-continuum result of a probe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuumModulus {
    pub continuum: Continuum,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub value: f64,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub lower_bound: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub p: f64,
    pub moduli: Vec<ContinuumModulus>,
    /// Minimum over the finite values.
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub delta: f64,
    pub skipped: usize,
    pub converged: bool,
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r > 0.1 && r <= 1.0 {
            return v.iter().map(|x| x / r).collect();
        }
    }
}

fn along(x0: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    x0.iter().zip(dir).map(|(a, d)| a + t * d).collect()
}

/// Parameter at which the ray `x0 + t dir` first leaves `region`, found by
/// marching in steps of `step` and bisecting the last step.
fn exit_param(region: &DomainSpec, x0: &[f64], dir: &[f64], step: f64, tmax: f64) -> Option<f64> {
    let mut t = 0.0;
    while t < tmax {
        let next = t + step;
        if !region.contains(&along(x0, dir, next)) {
            let (mut lo, mut hi) = (t, next);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if region.contains(&along(x0, dir, mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        t = next;
    }
    None
}

struct Generator<'a> {
    s: &'a AccessibilityScenario,
    mask: &'a CellMask,
    graph: Option<GridGraph>,
    starts: Vec<usize>,
    ends: Vec<bool>,
    end_list: Vec<usize>,
    tmax: f64,
}

impl<'a> Generator<'a> {
    fn new(s: &'a AccessibilityScenario, mask: &'a CellMask) -> Self {
        let bb = mask.grid().bounding_box();
        let tmax = bb.min.iter().zip(&bb.max).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        Generator { s, mask, graph: None, starts: Vec::new(), ends: Vec::new(), end_list: Vec::new(), tmax }
    }

    fn h(&self) -> f64 {
        self.mask.grid().h()
    }

    /// A continuum lying in the domain (at grid resolution) and crossing
    /// both boundaries.
    fn accept(&self, vertices: &[Point]) -> bool {
        let grid = self.mask.grid();
        let samples = DomainSpec::polyline_samples(vertices, self.h() / 8.0);
        let in_domain = samples
            .iter()
            .all(|x| self.s.domain.contains(x) && grid.locate(x).is_ok_and(|c| self.mask.get(c)));
        in_domain && crosses(&self.s.v, &samples) && crosses(&self.s.u, &samples)
    }

    fn radii(&self, dir: &[f64]) -> Option<(f64, f64)> {
        let step = 0.25 * self.h();
        let tv = exit_param(&self.s.v, &self.s.x0, dir, step, self.tmax)?;
        let tu = exit_param(&self.s.u, &self.s.x0, dir, step, self.tmax)?;
        let delta = (0.5 * self.h()).min(0.25 * tv);
        (tv - delta > 0.0 && tu > tv).then_some((tv - delta, tu + delta))
    }

    fn radial(&self, rng: &mut ChaCha8Rng) -> Option<Vec<Point>> {
        let dir = random_direction(rng, self.s.x0.dim());
        let (a, b) = self.radii(&dir)?;
        Some(vec![along(&self.s.x0, &dir, a).into(), along(&self.s.x0, &dir, b).into()])
    }

    fn spiral(&self, rng: &mut ChaCha8Rng) -> Option<Vec<Point>> {
        let n = self.s.x0.dim();
        let d0 = random_direction(rng, n);
        let mut w = random_direction(rng, n);
        let dot: f64 = w.iter().zip(&d0).map(|(a, b)| a * b).sum();
        for (wi, di) in w.iter_mut().zip(&d0) {
            *wi -= dot * di;
        }
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn < 1e-6 {
            return None;
        }
        let (a, b) = self.radii(&d0)?;
        let turn = rng.gen_range(-1.0..1.0) * std::f64::consts::FRAC_PI_3;
        const PIECES: usize = 32;
        let vertices = (0..=PIECES)
            .map(|k| {
                let s = k as f64 / PIECES as f64;
                let (sin, cos) = (turn * s).sin_cos();
                let dir: Vec<f64> = d0.iter().zip(&w).map(|(d, wi)| cos * d + sin * wi / wn).collect();
                along(&self.s.x0, &dir, a + (b - a) * s).into()
            })
            .collect();
        Some(vertices)
    }

    fn grid_path(&mut self, rng: &mut ChaCha8Rng) -> Option<Vec<Point>> {
        let grid = self.mask.grid().clone();
        if self.graph.is_none() {
            let h = grid.h();
            let mut c = vec![0.0; grid.dim()];
            self.ends = vec![false; grid.len()];
            for cell in self.mask.cells() {
                grid.center_into(cell, &mut c);
                if self.s.v.contains(&c) {
                    self.starts.push(cell);
                } else if !self.s.u.contains(&c) && self.s.u.signed_distance(&c) <= 2.0 * h {
                    self.ends[cell] = true;
                    self.end_list.push(cell);
                }
            }
            self.graph = Some(GridGraph::new(self.mask, Stencil::Radius(1)));
        }
        if self.starts.is_empty() || self.end_list.is_empty() {
            return None;
        }
        let start = self.starts[rng.gen_range(0..self.starts.len())];
        let end = self.end_list[rng.gen_range(0..self.end_list.len())];
        let rho: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
        let mut targets = vec![false; grid.len()];
        targets[end] = true;
        let found = shortest_cells(self.graph.as_ref()?, &rho, &[start], &targets).ok()?;
        Some(DiscretePath::through_cells(&grid, &found.cells).ok()?.vertices().to_vec())
    }
}

fn crosses(region: &DomainSpec, samples: &[Point]) -> bool {
    let inside = samples.iter().filter(|x| region.contains(x)).count();
    inside > 0 && inside < samples.len()
}

const ATTEMPTS: usize = 200;

/// Generates `count` continua crossing `∂V` and `∂U`, cycling through the
/// radial, spiral and grid-path generators. Generators that fail
/// repeatedly are skipped; the number skipped is returned alongside.
pub fn generate_continua(
    s: &AccessibilityScenario,
    mask: &CellMask,
    count: usize,
    seed: u64,
) -> Result<(Vec<Continuum>, usize)> {
    s.validate(mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = Generator::new(s, mask);
    let mut out = Vec::with_capacity(count);
    let mut skipped = 0;
    for i in 0..count {
        let kind = [ContinuumKind::Radial, ContinuumKind::Spiral, ContinuumKind::GridPath][i % 3];
        let found = (0..ATTEMPTS).find_map(|_| {
            let v = match kind {
                ContinuumKind::Radial => gen.radial(&mut rng),
                ContinuumKind::Spiral => gen.spiral(&mut rng),
                ContinuumKind::GridPath => gen.grid_path(&mut rng),
            }?;
            gen.accept(&v).then_some(v)
        });
        match found {
            Some(vertices) => out.push(Continuum { kind, vertices }),
            None => {
                log::warn!("continuum {i} ({kind:?}) could not be generated; skipped");
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

/// Runs `f` over `items`, in parallel when the feature is enabled; results
/// keep the input order.
fn map_items<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

fn join_modulus(
    from: &DomainSpec,
    to: &DomainSpec,
    domain: &DomainSpec,
    mask: &CellMask,
    opts: &SolverOptions,
) -> Result<(f64, f64, bool)> {
    let fam = FamilySpec::join(from.clone(), to.clone(), domain.clone());
    let r = compute_modulus(&fam, mask, opts)?;
    Ok((r.value, r.lower_bound, r.converged))
}

fn probe(
    s: &AccessibilityScenario,
    set: &DomainSpec,
    continua: Vec<Continuum>,
    skipped: usize,
    mask: &CellMask,
    opts: &SolverOptions,
) -> Result<ProbeResult> {
    let moduli = map_items(&continua, |c| {
        let (value, lower_bound, converged) = join_modulus(set, &c.spec(), &s.domain, mask, opts)?;
        Ok(ContinuumModulus { continuum: c.clone(), value, lower_bound, converged })
    })?;
    let delta = moduli.iter().map(|m| m.value).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let converged = moduli.iter().all(|m| m.converged);
    Ok(ProbeResult { p: opts.p, moduli, delta, skipped, converged })
}

/// Empirical `δ` for `(U, V, E)`: the least modulus of `Γ(E, F, D)` over
/// `num_f` generated continua `F`.
pub fn estimate_delta(
    s: &AccessibilityScenario,
    mask: &CellMask,
    opts: &SolverOptions,
    num_f: usize,
    seed: u64,
) -> Result<ProbeResult> {
    let (continua, skipped) = generate_continua(s, mask, num_f, seed)?;
    if continua.is_empty() {
        return Err(Error::NoValidSets("every continuum generator failed".into()));
    }
    probe(s, &s.e, continua, skipped, mask, opts)
}

/// Points of `region` spaced at most `h sqrt(n)` apart: the anchor of
/// every grid cell the region touches.
pub fn region_samples(region: &dyn Region, grid: &Grid) -> Vec<Point> {
    let full = CellMask::full(grid.clone());
    full.touching(region)
        .cells()
        .filter_map(|c| region.anchor(&grid.center(c), grid.h()))
        .collect()
}

fn set_distance(a: &[Point], b: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for x in a {
        for y in b {
            best = best.min(euclid_dist_unchecked(x, y));
        }
    }
    best
}

/// The subadditivity chain for one continuum `F`:
/// `M(Γ(E,F)) <= M(Γ(∪E_i,F)) <= Σ M(Γ(E_i,F))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubadditivityChain {
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub whole: f64,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub union: f64,
    #[serde(serialize_with = "crate::report::ext_f64_vec")]
    pub parts: Vec<f64>,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub sum: f64,
    /// Some part reaches `δ/q`, where `δ` is the value for `E`.
    pub some_part_reaches_share: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwapReport {
    pub p: f64,
    pub r: f64,
    pub dist_e_estar: f64,
    pub dist_e_boundary: f64,
    pub t0: f64,
    pub centers: Vec<Point>,
    pub delta: ProbeResult,
    pub delta_star: DeltaStar,
    pub chain: Option<SubadditivityChain>,
    /// `M_p(Γ(E*, F, D))` per continuum; infinite when `F` meets `E*`.
    pub swapped: Vec<ContinuumModulus>,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub empirical_min: f64,
    pub holds: bool,
    pub converged: bool,
}

/// Builds the covering balls `E_1..E_q` of `E`, the per-ball moduli
/// `δ_i = M_p(Γ(E_i, E*, D))` and `δ*`, then checks
/// `M_p(Γ(E*, F, D)) >= δ*` over generated continua `F`.
pub fn continuum_swap_check(
    s: &AccessibilityScenario,
    e_star: &DomainSpec,
    mask: &CellMask,
    opts: &SolverOptions,
    num_f: usize,
    seed: u64,
) -> Result<SwapReport> {
    s.validate(mask)?;
    let grid = mask.grid();
    let n = grid.dim();
    let h = grid.h();
    if domains_intersect(&s.e, e_star, grid) {
        return Err(Error::InvalidArgument("E and E* must be disjoint".into()));
    }
    let params = BoundParams::new(n, opts.p)?;
    let e_pts = region_samples(&s.e, grid);
    let star_pts = region_samples(e_star, grid);
    if e_pts.is_empty() || star_pts.is_empty() {
        return Err(Error::EmptySet);
    }
    let dist_x0 = e_pts.iter().map(|x| euclid_dist_unchecked(x, &s.x0)).fold(f64::INFINITY, f64::min);
    let t0 = 0.5 * dist_x0;
    let dist_e_estar = set_distance(&e_pts, &star_pts);
    let dist_e_boundary = e_pts.iter().map(|x| s.domain.boundary_distance(x)).fold(f64::INFINITY, f64::min);
    // dist(E, B(x0, t0)) = dist(x0, E) - t0 = t0
    let r = dist_e_estar.min(dist_e_boundary).min(t0) / 4.0;
    let spacing = h * (n as f64).sqrt();
    if r <= 2.0 * spacing {
        return Err(Error::RefineGrid(format!("covering radius {r} is below twice the sample spacing {spacing}")));
    }
    // Greedy cover of the samples with radius r - spacing; every point of E
    // is within `spacing` of a sample, so the r-balls cover E.
    let mut covered = vec![false; e_pts.len()];
    let mut centers: Vec<Point> = Vec::new();
    for i in 0..e_pts.len() {
        if covered[i] {
            continue;
        }
        centers.push(e_pts[i].clone());
        for (j, y) in e_pts.iter().enumerate() {
            if euclid_dist_unchecked(&e_pts[i], y) <= r - spacing {
                covered[j] = true;
            }
        }
    }
    let balls: Vec<DomainSpec> = centers.iter().map(|c| DomainSpec::ball(c.clone(), r)).collect();

    let (continua, skipped) = generate_continua(s, mask, num_f, seed)?;
    if continua.is_empty() {
        return Err(Error::NoValidSets("every continuum generator failed".into()));
    }
    let delta = probe(s, &s.e, continua.clone(), skipped, mask, opts)?;
    if !(delta.delta > 0.0 && delta.delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("empirical delta {} is not a positive number", delta.delta)));
    }
    let per_ball = map_items(&balls, |b| join_modulus(b, e_star, &s.domain, mask, opts))?;
    let deltas: Vec<f64> = per_ball.iter().map(|v| v.0).collect();
    let ds = delta_star(delta.delta, balls.len(), &deltas, r, &params)?;

    let chain = match continua.first() {
        Some(f) => {
            let fs = f.spec();
            let whole = join_modulus(&s.e, &fs, &s.domain, mask, opts)?.0;
            let union = join_modulus(&DomainSpec::union(balls.clone()), &fs, &s.domain, mask, opts)?.0;
            let parts: Vec<f64> = map_items(&balls, |b| Ok(join_modulus(b, &fs, &s.domain, mask, opts)?.0))?;
            let sum: f64 = parts.iter().sum();
            let slack = 1.0 + 10.0 * opts.gap_tol;
            let share = whole / balls.len() as f64;
            Some(SubadditivityChain {
                whole,
                union,
                some_part_reaches_share: parts.iter().any(|v| *v * slack >= share),
                holds: whole <= union * slack && union <= sum * slack,
                parts,
                sum,
            })
        }
        None => None,
    };

    let swapped = probe(s, e_star, continua, 0, mask, opts)?;
    let empirical_min = swapped.delta;
    let converged = delta.converged && swapped.converged && per_ball.iter().all(|v| v.2);
    Ok(SwapReport {
        p: opts.p,
        r,
        dist_e_estar,
        dist_e_boundary,
        t0,
        centers,
        holds: empirical_min >= ds.value,
        delta,
        delta_star: ds,
        chain,
        swapped: swapped.moduli,
        empirical_min,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairModulus {
    pub first: Continuum,
    pub second: Continuum,
    pub first_diameter: f64,
    pub second_diameter: f64,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub value: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformityReport {
    pub p: f64,
    pub r: f64,
    pub pairs: Vec<PairModulus>,
    #[serde(serialize_with = "crate::report::ext_f64")]
    pub delta: f64,
    pub converged: bool,
}

fn spherical_diameter_of(vertices: &[Point], h: f64) -> Result<f64> {
    let pts: Vec<ExtendedPoint> = DomainSpec::polyline_samples(vertices, h)
        .into_iter()
        .map(ExtendedPoint::from)
        .collect();
    spherical_diameter(&pts)
}

/// Empirical uniformity constant `δ(r)`: the least modulus of `Γ(F*, F, D)`
/// over pairs of disjoint segments in `D` whose spherical diameters are at
/// least `r`. The candidate pool depends only on the seed, so `δ(r)` is
/// monotone in `r` for a fixed seed.
pub fn uniformity_probe(
    domain: &DomainSpec,
    r: f64,
    mask: &CellMask,
    opts: &SolverOptions,
    num_pairs: usize,
    seed: u64,
) -> Result<UniformityReport> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!("r must lie in (0, 1), got {r}")));
    }
    let grid = mask.grid();
    let h = grid.h();
    let cells: Vec<usize> = mask.cells().collect();
    if cells.is_empty() {
        return Err(Error::EmptySet);
    }
    // A cheap upper bound on the spherical diameter of the domain.
    let hull: Vec<ExtendedPoint> = cells.iter().map(|&c| ExtendedPoint::from(grid.center(c))).collect();
    let coarse: Vec<ExtendedPoint> = hull.iter().step_by((hull.len() / 2000).max(1)).cloned().collect();
    if spherical_diameter(&coarse)? + 2.0 * h < r {
        return Err(Error::NoValidSets(format!("r = {r} exceeds the spherical diameter of the domain")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = |v: &[Point]| {
        DomainSpec::polyline_samples(v, h / 8.0)
            .iter()
            .all(|x| domain.contains(x) && grid.locate(x).is_ok_and(|c| mask.get(c)))
    };
    let segment = |rng: &mut ChaCha8Rng| -> Option<(Continuum, f64)> {
        for _ in 0..ATTEMPTS {
            let a = grid.center(cells[rng.gen_range(0..cells.len())]);
            let b = grid.center(cells[rng.gen_range(0..cells.len())]);
            let v = vec![a, b];
            if v[0] != v[1] && inside(&v) {
                let d = spherical_diameter_of(&v, h).ok()?;
                return Some((Continuum { kind: ContinuumKind::Radial, vertices: v }, d));
            }
        }
        None
    };
    let mut pool = Vec::new();
    for _ in 0..num_pairs {
        if let (Some(a), Some(b)) = (segment(&mut rng), segment(&mut rng)) {
            pool.push((a, b));
        }
    }
    let valid: Vec<_> = pool
        .into_iter()
        .filter(|((a, da), (b, db))| {
            *da >= r && *db >= r && !domains_intersect(&a.spec(), &b.spec(), grid)
        })
        .collect();
    if valid.is_empty() {
        return Err(Error::NoValidSets(format!("no disjoint pair with spherical diameters >= {r}")));
    }
    let pairs = map_items(&valid, |((a, da), (b, db))| {
        let (value, _, converged) = join_modulus(&a.spec(), &b.spec(), domain, mask, opts)?;
        Ok(PairModulus {
            first: a.clone(),
            second: b.clone(),
            first_diameter: *da,
            second_diameter: *db,
            value,
            converged,
        })
    })?;
    let delta = pairs.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let converged = pairs.iter().all(|p| p.converged);
    Ok(UniformityReport { p: opts.p, r, pairs, delta, converged })
}

/// One tooth of the vanishing-modulus probe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToothRow {
    pub k: usize,
    pub label: usize,
    /// Measure of the component `E_k` of `B(x0, r0) ∩ D`.
    pub measure: f64,
    /// Energy `m(E_k) / (r0 - r)^p` of the constant density on `E_k`.
    pub bound: f64,
    /// Least ρ-length of the family under that density.
    pub proof_min_length: f64,
    pub proof_admissible: bool,
    pub value: f64,
    pub lower_bound: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VanishingReport {
    pub p: f64,
    pub r: f64,
    pub r0: f64,
    /// Sources are the cells of `E_k` within `r - margin` of `x0`.
    pub margin: f64,
    pub rows: Vec<ToothRow>,
    pub measures_below_inverse_k: bool,
    pub bounds_decreasing: bool,
    pub values_decreasing: bool,
    pub values_below_bounds: bool,
    pub converged: bool,
}

impl VanishingReport {
    /// First tooth whose modulus is below `delta`.
    pub fn first_below(&self, delta: f64) -> Option<usize> {
        self.rows.iter().find(|row| row.value < delta).map(|row| row.k)
    }

    /// Writes `k,measure,bound,value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k", "measure", "bound", "value"])?;
        for row in &self.rows {
            wtr.write_record([
                row.k.to_string(),
                format!("{:.16e}", row.measure),
                format!("{:.16e}", row.bound),
                format!("{:.16e}", row.value),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// For each tooth `k`, the component `E_k` of `B(x0, r0) ∩ D` containing
/// the tooth, the admissible density `1/(r0 - r)` on it, and the modulus of
/// the paths from `E_k ∩ B(x0, r - margin)` to `f`. `mask` is the comb's
/// rasterisation.
pub fn vanishing_modulus_probe(
    comb: &CombDomain,
    x0: &Point,
    r: f64,
    r0: f64,
    f: &DomainSpec,
    mask: &CellMask,
    opts: &SolverOptions,
    k_range: &[usize],
) -> Result<VanishingReport> {
    comb.validate()?;
    opts.validate()?;
    let grid = mask.grid();
    let n = grid.dim();
    let h = grid.h();
    if !(0.0 < r && r < r0) {
        return Err(Error::InvalidArgument(format!("need 0 < r < r0, got r={r} r0={r0}")));
    }
    if r0 >= comb.slit_top() - comb.min[1] {
        return Err(Error::InvalidArgument("B(x0, r0) must stay below the slit tops".into()));
    }
    let f_pts = region_samples(f, grid);
    if f_pts.iter().any(|y| euclid_dist_unchecked(y, x0) < r0) {
        return Err(Error::InvalidArgument("F must lie outside B(x0, r0)".into()));
    }
    let near = rasterize_clipped(&DomainSpec::ball(x0.clone(), r0), grid)?;
    let pieces = connected_components(&mask.and(&near)?);
    let margin = 1.5 * h * (n as f64).sqrt();
    let graph = GridGraph::new(mask, opts.stencil);
    let tooth_label = |k: usize| -> Result<Option<usize>> {
        let (left, right) = comb.tooth_interval(k);
        let mut anchor: Vec<f64> = (0..n).map(|i| x0[i].clamp(comb.min[i], comb.max[i])).collect();
        anchor[0] = 0.5 * (left + right);
        anchor[1] = comb.min[1] + 0.5 * h;
        Ok(pieces.label(grid.locate(&anchor)?))
    };
    let labels = (1..=comb.teeth_count).map(tooth_label).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(k_range.len());
    for &k in k_range {
        if k == 0 || k > comb.teeth_count {
            return Err(Error::InvalidArgument(format!("tooth {k} outside 1..={}", comb.teeth_count)));
        }
        let (left, right) = comb.tooth_interval(k);
        let label = labels[k - 1].ok_or_else(|| Error::RefineGrid(format!("tooth {k} has no cell inside B(x0, r0)")))?;
        if labels.iter().filter(|l| **l == Some(label)).count() > 1 {
            return Err(Error::RefineGrid(format!("tooth {k} merges with a neighbouring tooth")));
        }
        let component = pieces.mask(label)?;
        let measure = pieces.measure(label)?;
        let bound = measure / (r0 - r).powf(opts.p);

        let mut tooth_min = comb.min.clone();
        let mut tooth_max = comb.max.clone();
        tooth_min[0] = left;
        tooth_max[0] = right;
        tooth_max[1] = comb.slit_top();
        let sources = DomainSpec::intersection(vec![
            DomainSpec::cube(tooth_min, tooth_max),
            DomainSpec::ball(x0.clone(), r - margin),
        ]);
        let seeds = JoinSeeds::new(mask, &sources, f);
        if seeds.is_empty() {
            return Err(Error::RefineGrid(format!("tooth {k} has no source cell within r - margin of x0")));
        }
        let proof: Vec<f64> =
            component.bits().iter().map(|b| if *b { 1.0 / (r0 - r) } else { 0.0 }).collect();
        let proof_min_length = shortest_join(&graph, &proof, &seeds)?.length;
        let result = compute_modulus_seeds(mask, &seeds, opts)?;
        rows.push(ToothRow {
            k,
            label,
            measure,
            bound,
            proof_min_length,
            proof_admissible: proof_min_length >= 1.0 - opts.admissibility_tol,
            value: result.value,
            lower_bound: result.lower_bound,
            converged: result.converged,
        });
    }
    let slack = 1.0 + 10.0 * opts.gap_tol;
    Ok(VanishingReport {
        p: opts.p,
        r,
        r0,
        margin,
        measures_below_inverse_k: rows.iter().all(|row| row.measure < 1.0 / row.k as f64),
        bounds_decreasing: rows.windows(2).all(|w| w[1].bound < w[0].bound),
        values_decreasing: rows.windows(2).all(|w| w[1].value < w[0].value),
        values_below_bounds: rows.iter().all(|row| row.value <= row.bound * slack),
        converged: rows.iter().all(|row| row.converged),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::rasterize;

    fn disc_scenario() -> AccessibilityScenario {
        AccessibilityScenario {
            domain: DomainSpec::ball([0.0, 0.0], 1.0),
            x0: Point::from([1.0, 0.0]),
            u: DomainSpec::ball([1.0, 0.0], 0.5),
            v: DomainSpec::ball([1.0, 0.0], 0.25),
            e: DomainSpec::ball([-0.3, 0.0], 0.1),
        }
    }

    fn disc_mask(res: usize) -> CellMask {
        let d = DomainSpec::ball([0.0, 0.0], 1.0);
        let g = Grid::with_resolution(&d.bounding_box(), res).unwrap();
        rasterize(&d, &g).unwrap()
    }

    fn quick(p: f64) -> SolverOptions {
        SolverOptions { gap_tol: 1e-2, stencil: Stencil::Radius(1), ..SolverOptions::with_p(p) }
    }

    #[test]
    fn scenario_validation_rejects_bad_inputs() {
        let mask = disc_mask(24);
        assert!(disc_scenario().validate(&mask).is_ok());

        let mut s = disc_scenario();
        s.x0 = Point::from([2.0, 0.0]);
        assert!(matches!(s.validate(&mask), Err(Error::InvalidArgument(_))));

        let mut s = disc_scenario();
        s.v = DomainSpec::ball([1.0, 0.0], 0.7);
        assert!(matches!(s.validate(&mask), Err(Error::InvalidArgument(_))));

        let mut s = disc_scenario();
        s.v = DomainSpec::ball([0.0, 0.5], 0.1);
        assert!(matches!(s.validate(&mask), Err(Error::InvalidArgument(_))));

        let mut s = disc_scenario();
        s.e = DomainSpec::ball([3.0, 3.0], 0.1);
        assert!(matches!(s.validate(&mask), Err(Error::EmptyFamily(_))));

        let mut s = disc_scenario();
        s.e = DomainSpec::ball([0.0, 0.0, 0.0], 0.1);
        assert!(matches!(s.validate(&mask), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn generated_continua_cross_both_boundaries() {
        let mask = disc_mask(32);
        let s = disc_scenario();
        let (continua, skipped) = generate_continua(&s, &mask, 9, 3).unwrap();
        assert_eq!(continua.len() + skipped, 9);
        assert!(continua.len() >= 6);
        for kind in [ContinuumKind::Radial, ContinuumKind::Spiral, ContinuumKind::GridPath] {
            assert!(continua.iter().any(|c| c.kind == kind));
        }
        let h = mask.grid().h();
        for c in &continua {
            let samples = DomainSpec::polyline_samples(&c.vertices, h / 8.0);
            assert!(crosses(&s.v, &samples) && crosses(&s.u, &samples));
            assert!(samples.iter().all(|x| s.domain.contains(x)));
        }
        // same seed, same continua
        assert_eq!(generate_continua(&s, &mask, 9, 3).unwrap().0, continua);
    }

    #[test]
    fn exit_param_finds_circle() {
        let b = DomainSpec::ball([0.0, 0.0], 0.5);
        let t = exit_param(&b, &[0.0, 0.0], &[0.6, 0.8], 0.01, 2.0).unwrap();
        assert!((t - 0.5).abs() < 1e-12);
        assert!(exit_param(&b, &[0.0, 0.0], &[1.0, 0.0], 0.01, 0.3).is_none());
    }

    #[test]
    fn delta_estimate_is_positive_minimum() {
        let mask = disc_mask(20);
        let r = estimate_delta(&disc_scenario(), &mask, &quick(2.0), 3, 1).unwrap();
        assert!(r.delta > 0.0 && r.delta.is_finite());
        let min = r.moduli.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
        assert_eq!(r.delta, min);
        assert!(r.moduli.iter().all(|m| m.lower_bound <= m.value));
    }

    #[test]
    fn swap_rejects_intersecting_sets_and_coarse_grids() {
        let mask = disc_mask(24);
        let s = disc_scenario();
        let touching = DomainSpec::segment([-0.3, 0.0], [0.0, 0.5]);
        assert!(matches!(
            continuum_swap_check(&s, &touching, &mask, &quick(2.0), 2, 1),
            Err(Error::InvalidArgument(_))
        ));
        let far = DomainSpec::segment([-0.2, 0.65], [0.2, 0.7]);
        assert!(matches!(continuum_swap_check(&s, &far, &mask, &quick(2.0), 2, 1), Err(Error::RefineGrid(_))));
    }

    #[test]
    fn uniformity_errors_and_monotonicity() {
        let mask = disc_mask(16);
        let d = DomainSpec::ball([0.0, 0.0], 1.0);
        let o = quick(2.0);
        assert!(matches!(uniformity_probe(&d, 0.0, &mask, &o, 4, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(uniformity_probe(&d, 0.99, &mask, &o, 4, 1), Err(Error::NoValidSets(_))));
        let small = uniformity_probe(&d, 0.2, &mask, &o, 6, 5).unwrap();
        let large = uniformity_probe(&d, 0.4, &mask, &o, 6, 5).unwrap();
        assert!(small.pairs.len() >= large.pairs.len());
        assert!(small.delta <= large.delta);
        assert!(small.pairs.iter().all(|p| p.first_diameter >= 0.2 && p.second_diameter >= 0.2));
    }

    #[test]
    fn vanishing_probe_on_a_small_comb() {
        let comb = CombDomain::with_harmonic_widths(vec![0.0, 0.0], vec![1.1, 1.1], 4, 1.0 / 1.1, 0.18).unwrap();
        let d = DomainSpec::Comb(comb.clone());
        let g = Grid::with_resolution(&d.bounding_box(), 110).unwrap();
        let mask = rasterize(&d, &g).unwrap();
        let f = DomainSpec::cube([0.0, 1.05], [1.1, 1.1]);
        let o = SolverOptions { gap_tol: 1e-2, ..SolverOptions::with_p(2.0) };
        let rep = vanishing_modulus_probe(&comb, &Point::from([0.0, 0.0]), 0.6, 0.9, &f, &mask, &o, &[1, 2, 3]).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.measures_below_inverse_k && rep.bounds_decreasing, "{:?}", rep.rows);
        assert!(rep.rows.iter().all(|row| row.proof_admissible));
        assert!(rep.values_below_bounds, "{:?}", rep.rows);
        let mut out = Vec::new();
        rep.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 4);

        let bad_f = DomainSpec::cube([0.0, 0.0], [0.1, 0.1]);
        assert!(vanishing_modulus_probe(&comb, &Point::from([0.0, 0.0]), 0.6, 0.9, &bad_f, &mask, &o, &[1]).is_err());
        assert!(vanishing_modulus_probe(&comb, &Point::from([0.0, 0.0]), 0.9, 0.6, &f, &mask, &o, &[1]).is_err());
        assert!(vanishing_modulus_probe(&comb, &Point::from([0.0, 0.0]), 0.6, 0.9, &f, &mask, &o, &[5]).is_err());

        // the narrowest slit falls between cell centres and two teeth merge
        let thin = CombDomain::with_harmonic_widths(vec![0.0, 0.0], vec![1.1, 1.1], 4, 1.0 / 1.1, 0.1).unwrap();
        let thin_mask = rasterize(&DomainSpec::Comb(thin.clone()), &g).unwrap();
        assert!(matches!(
            vanishing_modulus_probe(&thin, &Point::from([0.0, 0.0]), 0.6, 0.9, &f, &thin_mask, &o, &[3]),
            Err(Error::RefineGrid(_))
        ));
    }
}
