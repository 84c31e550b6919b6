//! Discrete p-modulus by constraint generation.
//!
//! The program is `min sum_c w rho_c^p` over `rho >= 0` subject to
//! `row_k . rho >= 1` for every path `k`, with `w = h^n`. The outer loop asks
//! the shortest-path oracle for the most violated path and adds its row. The
//! inner problem over the active rows is solved in the dual: with
//! `s = sum_k lambda_k row_k` the primal minimiser is
//! `rho_c = (s_c / (p w))^(1/(p-1))`, and each dual coordinate `lambda_k` is
//! maximised exactly (a monotone scalar equation). Stopping uses the gap
//! between the dual value and the energy of the rescaled, feasible primal.

use serde::{Deserialize, Serialize};

use crate::domain::Region;
use crate::error::{Error, Result};
use crate::grid::{CellMask, Grid};
use crate::path::{
    domains_intersect, path_row, shortest_with, DensityField, DiscretePath, FamilySpec, GridGraph, JoinSeeds, Row,
    Terminals,
    Stencil,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub p: f64,
    pub max_outer_iters: usize,
    /// Relative duality gap at which an inner solve stops.
    pub inner_tol: f64,
    /// The returned density must give every path ρ-length `>= 1 - tol`;
    /// checked by a final oracle call.
    pub admissibility_tol: f64,
    /// The outer loop stops once the best admissible energy is within this
    /// relative distance of the dual lower bound.
    pub gap_tol: f64,
    /// Cap on stored constraints; `None` means ten per source cell.
    pub max_active_paths: Option<usize>,
    /// Newton-plus-coordinate sweeps per outer iteration. One is usually
    /// fastest: the next oracle call refines the active set anyway.
    pub max_inner_sweeps: usize,
    /// Violated paths added per oracle call, each from a different source.
    pub paths_per_iter: usize,
    pub stencil: Stencil,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            p: 2.0,
            max_outer_iters: 20_000,
            inner_tol: 1e-9,
            admissibility_tol: 1e-6,
            gap_tol: 1e-4,
            max_active_paths: None,
            max_inner_sweeps: 1,
            paths_per_iter: 16,
            stencil: Stencil::Face,
        }
    }
}

impl SolverOptions {
    pub fn with_p(p: f64) -> Self {
        SolverOptions { p, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidArgument(format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.inner_tol > 0.0 && self.gap_tol > 0.0 && self.admissibility_tol > 0.0 && self.admissibility_tol < 1.0)
        {
            return Err(Error::InvalidArgument("tolerances must be positive (admissibility below 1)".into()));
        }
        if self.max_outer_iters == 0 || self.max_inner_sweeps == 0 || self.paths_per_iter == 0 {
            return Err(Error::InvalidArgument("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ModulusResult {
    /// `f64::INFINITY` when the family contains a constant path.
    pub value: f64,
    pub density: DensityField,
    pub active_paths: Vec<DiscretePath>,
    pub min_path_rho_length: f64,
    pub outer_iters: usize,
    pub converged: bool,
    /// Dual value over the final active set; a lower bound for the discrete
    /// modulus.
    pub lower_bound: f64,
}

impl ModulusResult {
    fn infinite(grid: Grid) -> Self {
        ModulusResult {
            value: f64::INFINITY,
            density: DensityField::zeros(grid),
            active_paths: Vec::new(),
            min_path_rho_length: 0.0,
            outer_iters: 0,
            converged: true,
            lower_bound: f64::INFINITY,
        }
    }

    fn zero(grid: Grid) -> Self {
        ModulusResult {
            value: 0.0,
            density: DensityField::zeros(grid),
            active_paths: Vec::new(),
            min_path_rho_length: f64::INFINITY,
            outer_iters: 0,
            converged: true,
            lower_bound: 0.0,
        }
    }
}

/// `x^e` with shortcuts for the exponents met at p in {1.5, 2, 3}.
#[inline]
fn fpow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 1.5 {
        x * x.sqrt()
    } else if e == 3.0 {
        x * x * x
    } else {
        x.powf(e)
    }
}

/// Dual coordinate ascent over a set of rows.
struct Dual {
    p: f64,
    e: f64,
    pw: f64,
    w: f64,
    s: Vec<f64>,
    touched: Vec<bool>,
    support: Vec<usize>,
    rows: Vec<Row>,
    paths: Vec<DiscretePath>,
    lambda: Vec<f64>,
    curv: Vec<f64>,
    work: Vec<f64>,
}

struct Gap {
    primal: f64,
    dual: f64,
    energy: f64,
}

impl Gap {
    fn relative(&self) -> f64 {
        if self.primal.is_finite() && self.primal > 0.0 {
            ((self.primal - self.dual) / self.primal).max(0.0)
        } else {
            f64::INFINITY
        }
    }
}

impl Dual {
    fn new(p: f64, w: f64, cells: usize) -> Self {
        Dual {
            p,
            e: 1.0 / (p - 1.0),
            pw: p * w,
            w,
            s: vec![0.0; cells],
            touched: vec![false; cells],
            support: Vec::new(),
            rows: Vec::new(),
            paths: Vec::new(),
            lambda: Vec::new(),
            curv: vec![0.0; cells],
            work: vec![0.0; cells],
        }
    }

    #[inline]
    fn rho_of(&self, s: f64) -> f64 {
        if s > 0.0 {
            fpow(s / self.pw, self.e)
        } else {
            0.0
        }
    }

    fn push(&mut self, row: Row, path: DiscretePath) {
        for &c in &row.cells {
            if !self.touched[c] {
                self.touched[c] = true;
                self.support.push(c);
            }
        }
        self.rows.push(row);
        self.paths.push(path);
        self.lambda.push(0.0);
    }

    fn remove(&mut self, k: usize) {
        let lam = self.lambda[k];
        if lam > 0.0 {
            let row = &self.rows[k];
            for (c, a) in row.cells.iter().zip(&row.coef) {
                self.s[*c] = (self.s[*c] - lam * a).max(0.0);
            }
        }
        self.rows.remove(k);
        self.paths.remove(k);
        self.lambda.remove(k);
    }

    fn recompute_s(&mut self) {
        for &c in &self.support {
            self.s[c] = 0.0;
        }
        for (row, lam) in self.rows.iter().zip(&self.lambda) {
            if *lam > 0.0 {
                for (c, a) in row.cells.iter().zip(&row.coef) {
                    self.s[*c] += lam * a;
                }
            }
        }
    }

    /// Maximises the dual in coordinate `k` with the others fixed.
    fn update(&mut self, k: usize) {
        let lam = self.lambda[k];
        let row = &self.rows[k];
        if lam > 0.0 {
            for (c, a) in row.cells.iter().zip(&row.coef) {
                self.s[*c] = (self.s[*c] - lam * a).max(0.0);
            }
        }
        let phi0: f64 = row.cells.iter().zip(&row.coef).map(|(c, a)| a * self.rho_of(self.s[*c])).sum();
        let t = if phi0 >= 1.0 { 0.0 } else { self.solve_coordinate(k) };
        let row = &self.rows[k];
        if t > 0.0 {
            for (c, a) in row.cells.iter().zip(&row.coef) {
                self.s[*c] += t * a;
            }
        }
        self.lambda[k] = t;
    }

    /// Root of `sum a_c rho(s_c + t a_c) = 1` in `t > 0`.
    fn solve_coordinate(&self, k: usize) -> f64 {
        let row = &self.rows[k];
        let (e, pw) = (self.e, self.pw);
        let eval = |t: f64| -> (f64, f64) {
            let mut f = -1.0;
            let mut df = 0.0;
            for (c, a) in row.cells.iter().zip(&row.coef) {
                let v = self.s[*c] + t * a;
                if v > 0.0 {
                    let r = fpow(v / pw, e);
                    f += a * r;
                    df += a * a * e * r / v;
                }
            }
            (f, df)
        };
        let sum: f64 = row.coef.iter().map(|a| a.powf(1.0 + e)).sum();
        let mut hi = pw * sum.powf(-1.0 / e);
        let mut lo = 0.0;
        let mut t = hi;
        for _ in 0..200 {
            let (f, df) = eval(t);
            if f == 0.0 {
                return t;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let mut next = if df > 0.0 { t - f / df } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-15 * t.abs() || hi - lo <= 1e-15 * hi {
                return next;
            }
            t = next;
        }
        t
    }

    fn gap(&self) -> Gap {
        let energy: f64 = self.support.iter().map(|&c| self.w * fpow(self.rho_of(self.s[c]), self.p)).sum();
        let rho = |c: usize| self.rho_of(self.s[c]);
        let mu = self
            .rows
            .iter()
            .map(|r| r.cells.iter().zip(&r.coef).map(|(c, a)| a * rho(*c)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let primal = if mu > 0.0 { energy / mu.powf(self.p) } else { f64::INFINITY };
        let dual = self.lambda.iter().sum::<f64>() - (self.p - 1.0) * energy;
        Gap { primal, dual, energy }
    }

    fn row_dot(&self, k: usize, v: &[f64]) -> f64 {
        let r = &self.rows[k];
        r.cells.iter().zip(&r.coef).map(|(c, a)| a * v[*c]).sum()
    }

    /// `sum lambda - (p-1) energy` at `lambda`, leaving the matching `s` in
    /// `self.work`.
    fn trial_value(&mut self, lambda: &[f64]) -> f64 {
        for &c in &self.support {
            self.work[c] = 0.0;
        }
        for (row, lam) in self.rows.iter().zip(lambda) {
            if *lam > 0.0 {
                for (c, a) in row.cells.iter().zip(&row.coef) {
                    self.work[*c] += lam * a;
                }
            }
        }
        let energy: f64 = self.support.iter().map(|&c| fpow(self.rho_of(self.work[c]), self.p)).sum::<f64>() * self.w;
        lambda.iter().sum::<f64>() - (self.p - 1.0) * energy
    }

    /// One projected Newton step on the dual, with the reduced Hessian
    /// `A D A^T` inverted approximately by Jacobi-preconditioned CG.
    /// Returns false if no ascent was made.
    fn newton_step(&mut self) -> bool {
        let m = self.rows.len();
        if m == 0 {
            return false;
        }
        let smax = self.support.iter().map(|&c| self.s[c]).fold(0.0, f64::max);
        if smax <= 0.0 {
            return false;
        }
        let floor = 1e-12 * smax;
        let mut rho = std::mem::take(&mut self.work);
        for &c in &self.support {
            let v = self.s[c].max(floor);
            rho[c] = self.rho_of(self.s[c]);
            self.curv[c] = self.e * self.rho_of(v) / v;
        }
        let grad: Vec<f64> = (0..m).map(|k| 1.0 - self.row_dot(k, &rho)).collect();
        let free: Vec<usize> = (0..m).filter(|&k| self.lambda[k] > 0.0 || grad[k] > 0.0).collect();
        if free.is_empty() {
            self.work = rho;
            return false;
        }
        let diag: Vec<f64> = free
            .iter()
            .map(|&k| {
                let r = &self.rows[k];
                r.cells.iter().zip(&r.coef).map(|(c, a)| a * a * self.curv[*c]).sum::<f64>()
            })
            .collect();
        let mu = 1e-10 * diag.iter().sum::<f64>() / diag.len() as f64;
        let diag: Vec<f64> = diag.iter().map(|d| d + mu).collect();
        // rho is no longer needed; reuse the buffer for A^T v
        for &c in &self.support {
            rho[c] = 0.0;
        }
        let mut tmp = rho;
        let mut apply = |v: &[f64], out: &mut [f64], rows: &[Row], curv: &[f64]| {
            for (j, &k) in free.iter().enumerate() {
                let r = &rows[k];
                for (c, a) in r.cells.iter().zip(&r.coef) {
                    tmp[*c] += a * v[j];
                }
            }
            for (j, &k) in free.iter().enumerate() {
                let r = &rows[k];
                out[j] = r.cells.iter().zip(&r.coef).map(|(c, a)| a * curv[*c] * tmp[*c]).sum::<f64>() + mu * v[j];
            }
            for &k in free.iter() {
                for c in &rows[k].cells {
                    tmp[*c] = 0.0;
                }
            }
        };
        let f = free.len();
        let b: Vec<f64> = free.iter().map(|&k| grad[k]).collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; f];
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut dir = z.clone();
        let mut q = vec![0.0; f];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..50 {
            apply(&dir, &mut q, &self.rows, &self.curv);
            let dq: f64 = dir.iter().zip(&q).map(|(a, b)| a * b).sum();
            if !(dq > 0.0) {
                break;
            }
            let alpha = rz / dq;
            for j in 0..f {
                x[j] += alpha * dir[j];
                r[j] -= alpha * q[j];
            }
            if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-2 * bnorm {
                break;
            }
            for j in 0..f {
                z[j] = r[j] / diag[j];
            }
            let rz2: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz2 / rz;
            rz = rz2;
            for j in 0..f {
                dir[j] = z[j] + beta * dir[j];
            }
        }
        self.work = tmp;
        let lam0 = self.lambda.clone();
        let g0 = self.trial_value(&lam0);
        let mut t = 1.0;
        for _ in 0..40 {
            let mut lam = lam0.clone();
            let mut ascent = 0.0;
            for (j, &k) in free.iter().enumerate() {
                lam[k] = (lam0[k] + t * x[j]).max(0.0);
                ascent += grad[k] * (lam[k] - lam0[k]);
            }
            if ascent <= 0.0 {
                return false;
            }
            let g = self.trial_value(&lam);
            if g >= g0 + 1e-4 * ascent {
                self.lambda = lam;
                for &c in &self.support {
                    self.s[c] = self.work[c];
                }
                return true;
            }
            t *= 0.5;
        }
        false
    }

    /// Alternates Newton steps with coordinate sweeps until the relative
    /// gap is below `tol` or `max_sweeps` runs out.
    fn solve(&mut self, tol: f64, max_sweeps: usize) -> Gap {
        let mut gap = self.gap();
        if gap.relative() <= tol {
            return gap;
        }
        for _ in 1..=max_sweeps {
            self.newton_step();
            for k in (0..self.rows.len()).rev() {
                self.update(k);
            }
            self.recompute_s();
            gap = self.gap();
            if gap.relative() <= tol {
                break;
            }
        }
        gap
    }

    fn density(&self, out: &mut [f64]) {
        for &c in &self.support {
            out[c] = self.rho_of(self.s[c]);
        }
    }
}

enum Oracle<'a> {
    Graph { graph: GridGraph, terminals: Terminals },
    List { rows: Vec<Row>, paths: &'a [DiscretePath] },
}

struct Found {
    length: f64,
    row: Row,
    path: DiscretePath,
}

impl Oracle<'_> {
    /// The shortest path first, then up to `max - 1` further paths shorter
    /// than `limit`.
    fn shortest(&self, grid: &Grid, rho: &[f64], limit: f64, max: usize) -> Result<Vec<Found>> {
        match self {
            Oracle::Graph { graph, terminals, .. } => {
                let found = shortest_with(graph, terminals, rho, limit, max)?;
                found
                    .into_iter()
                    .map(|sp| Ok(Found { length: sp.length, row: path_row(grid, &sp.path)?, path: sp.path }))
                    .collect()
            }
            Oracle::List { rows, paths } => {
                let mut order: Vec<(f64, usize)> = rows.iter().enumerate().map(|(i, r)| (r.dot(rho), i)).collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                Ok(order
                    .iter()
                    .enumerate()
                    .take_while(|(j, (l, _))| *j == 0 || (*j < max && *l < limit))
                    .map(|(_, &(length, i))| Found { length, row: rows[i].clone(), path: paths[i].clone() })
                    .collect())
            }
        }
    }
}

fn grid_diameter(grid: &Grid) -> f64 {
    grid.dims().iter().map(|d| (*d as f64 * grid.h()).powi(2)).sum::<f64>().sqrt()
}

fn run(grid: &Grid, oracle: &Oracle, opts: &SolverOptions, cap: usize) -> Result<ModulusResult> {
    opts.validate()?;
    let p = opts.p;
    let w = grid.cell_volume();
    let mut dual = Dual::new(p, w, grid.len());
    let mut rho = vec![1.0 / grid_diameter(grid); grid.len()];
    let mut energy: f64 = rho.iter().map(|v| w * v.powf(p)).sum();
    let mut best_upper = f64::INFINITY;
    let mut best: Option<Vec<f64>> = None;
    let mut lower = 0.0f64;
    let mut target = 1e-2f64;
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_outer_iters {
        iters += 1;
        let batch = oracle.shortest(grid, &rho, 1.0, opts.paths_per_iter)?;
        let found = &batch[0];
        // rho / length is admissible for the whole family
        if found.length > 0.0 {
            let upper = energy / found.length.powf(p);
            if upper < best_upper {
                best_upper = upper;
                best = Some(rho.iter().map(|v| v / found.length).collect());
            }
        }
        let rel = if best_upper.is_finite() { (best_upper - lower) / best_upper } else { f64::INFINITY };
        if rel <= opts.gap_tol {
            converged = true;
            break;
        }
        let length = found.length;
        let mut added = false;
        for f in batch {
            if !dual.rows.iter().any(|r| *r == f.row) {
                dual.push(f.row, f.path);
                added = true;
            }
        }
        if added {
            target = (0.1 * rel).min(1e-2);
        } else {
            target *= 0.1;
        }
        target = target.max(opts.inner_tol).max(1e-15);
        let gap = dual.solve(target, opts.max_inner_sweeps);
        lower = lower.max(gap.dual);
        log::trace!(
            "outer {iters}: len {:.6e} upper {best_upper:.8e} lower {lower:.8e} active {} inner gap {:.2e}",
            length,
            dual.rows.len(),
            gap.relative()
        );
        if dual.rows.len() > cap {
            let mut k = 0;
            while dual.rows.len() > cap && k < dual.rows.len() {
                if dual.lambda[k] == 0.0 {
                    dual.remove(k);
                } else {
                    k += 1;
                }
            }
        }
        rho.iter_mut().for_each(|v| *v = 0.0);
        dual.density(&mut rho);
        energy = gap.energy;
    }
    let Some(values) = best else {
        return Err(Error::InvalidArgument("solver found no admissible density; raise max_outer_iters".into()));
    };
    let density = DensityField::new(grid.clone(), values)?;
    let certificate = oracle.shortest(grid, density.values(), 0.0, 1)?[0].length;
    converged &= certificate >= 1.0 - opts.admissibility_tol;
    let value = density.energy(p);
    Ok(ModulusResult {
        value,
        density,
        active_paths: dual.paths,
        min_path_rho_length: certificate,
        outer_iters: iters,
        converged,
        lower_bound: lower,
    })
}

/// Modulus of the paths in `mask` joining the cells that touch `from` to
/// the cells that touch `to`.
pub fn compute_modulus_between(
    mask: &CellMask,
    from: &dyn Region,
    to: &dyn Region,
    opts: &SolverOptions,
) -> Result<ModulusResult> {
    let seeds = JoinSeeds::new(mask, from, to);
    compute_modulus_seeds(mask, &seeds, opts)
}

pub fn compute_modulus_seeds(mask: &CellMask, seeds: &JoinSeeds, opts: &SolverOptions) -> Result<ModulusResult> {
    opts.validate()?;
    if seeds.is_empty() {
        return Err(Error::EmptyFamily("no mask cell touches one of the end sets".into()));
    }
    let graph = GridGraph::new(mask, opts.stencil);
    let terminals = Terminals::new(&graph, seeds)?;
    let oracle = Oracle::Graph { graph, terminals };
    let cap = opts.max_active_paths.unwrap_or(10 * seeds.sources.len()).max(1);
    match run(mask.grid(), &oracle, opts, cap) {
        Err(Error::DisconnectedFamily) => Ok(ModulusResult::zero(mask.grid().clone())),
        r => r,
    }
}

/// Modulus of a finite list of paths on `grid`.
pub fn compute_modulus_explicit(paths: &[DiscretePath], grid: &Grid, opts: &SolverOptions) -> Result<ModulusResult> {
    opts.validate()?;
    if paths.is_empty() {
        return Ok(ModulusResult::zero(grid.clone()));
    }
    let rows = paths.iter().map(|p| path_row(grid, p)).collect::<Result<Vec<_>>>()?;
    if rows.iter().any(|r| r.is_empty()) {
        return Ok(ModulusResult::infinite(grid.clone()));
    }
    let cap = opts.max_active_paths.unwrap_or(usize::MAX).max(1);
    run(grid, &Oracle::List { rows, paths }, opts, cap)
}

pub fn compute_modulus(fam: &FamilySpec, mask: &CellMask, opts: &SolverOptions) -> Result<ModulusResult> {
    opts.validate()?;
    let grid = mask.grid();
    if fam.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: fam.dim() });
    }
    match fam {
        FamilySpec::Explicit { paths } => compute_modulus_explicit(paths, grid, opts),
        FamilySpec::Join { from, to, .. } => {
            from.validate()?;
            to.validate()?;
            let seeds = JoinSeeds::new(mask, from, to);
            if seeds.is_empty() {
                return Err(Error::EmptyFamily("no mask cell touches one of the end sets".into()));
            }
            let shared = seeds.sources.iter().any(|&c| seeds.targets[c]);
            if shared && domains_intersect(from, to, grid) {
                return Ok(ModulusResult::infinite(grid.clone()));
            }
            compute_modulus_seeds(mask, &seeds, opts)
        }
    }
}

/// Solves the program with every listed path as a constraint, to a relative
/// duality gap of `1e-12`. Test oracle for small grids.
pub fn exact_small_modulus(paths: &[DiscretePath], mask: &CellMask, p: f64) -> Result<f64> {
    const LIMIT: usize = 64;
    let grid = mask.grid();
    if grid.len() > LIMIT {
        return Err(Error::SizeCap { cells: grid.len(), limit: LIMIT });
    }
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("p must exceed 1, got {p}")));
    }
    if paths.is_empty() {
        return Ok(0.0);
    }
    let rows = paths.iter().map(|q| path_row(grid, q)).collect::<Result<Vec<_>>>()?;
    if rows.iter().any(|r| r.is_empty()) {
        return Ok(f64::INFINITY);
    }
    let mut dual = Dual::new(p, grid.cell_volume(), grid.len());
    for (r, q) in rows.into_iter().zip(paths) {
        dual.push(r, q.clone());
    }
    let gap = dual.solve(1e-12, 1_000_000);
    dual.recompute_s();
    let gap2 = dual.gap();
    if gap2.relative() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "exact solve stalled at relative gap {:.3e}",
            gap.relative().min(gap2.relative())
        )));
    }
    Ok(gap2.primal)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubadditivityReport {
    pub parts: Vec<f64>,
    pub sum: f64,
    pub union_value: f64,
    pub slack: f64,
    pub holds: bool,
    pub converged: bool,
}

/// Checks `M(union) <= sum M(part)`, allowing the slack implied by the
/// solver's gap tolerance.
pub fn verify_subadditivity(
    families: &[FamilySpec],
    union_fam: &FamilySpec,
    mask: &CellMask,
    opts: &SolverOptions,
) -> Result<SubadditivityReport> {
    let mut parts = Vec::with_capacity(families.len());
    let mut converged = true;
    for f in families {
        let r = compute_modulus(f, mask, opts)?;
        converged &= r.converged;
        parts.push(r.value);
    }
    let u = compute_modulus(union_fam, mask, opts)?;
    converged &= u.converged;
    let sum: f64 = parts.iter().sum();
    let slack = opts.gap_tol / (1.0 - opts.gap_tol);
    let holds = u.value <= sum * (1.0 + slack) + 1e-12;
    Ok(SubadditivityReport { parts, sum, union_value: u.value, slack, holds, converged })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub s: f64,
    pub base: f64,
    pub scaled: f64,
    pub ratio: f64,
    pub expected: f64,
    pub rel_err: f64,
}

/// Computes the modulus of a join family and of its image under `x -> s x`
/// on the dilated grid, and compares the ratio with `s^(n-p)`.
pub fn scaling_check(fam: &FamilySpec, s: f64, mask: &CellMask, opts: &SolverOptions) -> Result<ScalingReport> {
    let FamilySpec::Join { from, to, domain } = fam else {
        return Err(Error::InvalidArgument("scaling check needs a join family".into()));
    };
    let base = compute_modulus(fam, mask, opts)?;
    let grid = mask.grid().scaled(s)?;
    let sdomain = domain.scaled(s)?;
    let smask = crate::grid::rasterize_clipped(&sdomain, &grid)?;
    let sfam = FamilySpec::join(from.scaled(s)?, to.scaled(s)?, sdomain);
    let scaled = compute_modulus(&sfam, &smask, opts)?;
    let n = grid.dim() as f64;
    let ratio = scaled.value / base.value;
    let expected = s.powf(n - opts.p);
    Ok(ScalingReport { s, base: base.value, scaled: scaled.value, ratio, expected, rel_err: (ratio / expected - 1.0).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundingBox, DomainSpec};
    use crate::geometry::Point;
    use crate::grid::rasterize;

    fn square_setup(h: f64, l: f64) -> (FamilySpec, CellMask) {
        let d = DomainSpec::cube([0.0, 0.0], [l, 1.0]);
        let fam = FamilySpec::join(
            DomainSpec::segment([0.0, 0.0], [0.0, 1.0]),
            DomainSpec::segment([l, 0.0], [l, 1.0]),
            d.clone(),
        );
        let g = Grid::covering(&BoundingBox::new(vec![0.0, 0.0], vec![l, 1.0]), h).unwrap();
        let mask = rasterize(&d, &g).unwrap();
        (fam, mask)
    }

    #[test]
    fn unit_square_crossing() {
        let (fam, mask) = square_setup(1.0 / 16.0, 1.0);
        let r = compute_modulus(&fam, &mask, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.value - 1.0).abs() < 1e-5, "{}", r.value);
        assert!((r.density.energy(2.0) - r.value).abs() <= 1e-12 * r.value);
    }

    #[test]
    fn rectangle_value_follows_length() {
        // side 1, length 2: value 2^(1-p)
        for p in [1.5, 2.0, 3.0] {
            let (fam, mask) = square_setup(1.0 / 8.0, 2.0);
            let r = compute_modulus(&fam, &mask, &SolverOptions::with_p(p)).unwrap();
            assert!((r.value - 2f64.powf(1.0 - p)).abs() < 1e-5, "p {p}: {}", r.value);
        }
    }

    #[test]
    fn single_straight_path() {
        // 1 x k strip; one constraint: rho = 1/(k h) on the strip
        let k = 5;
        let h = 0.5;
        let g = Grid::new(vec![0.0, 0.0], h, vec![k, 1]).unwrap();
        let mask = CellMask::full(g.clone());
        let path = DiscretePath::new(vec![Point::from([0.0, 0.25]), Point::from([2.5, 0.25])]).unwrap();
        for p in [1.5, 2.0, 4.0] {
            let v = exact_small_modulus(std::slice::from_ref(&path), &mask, p).unwrap();
            let expect = k as f64 * h * h * (1.0 / (k as f64 * h)).powf(p);
            assert!((v - expect).abs() < 1e-10 * expect, "{v} vs {expect}");
        }
    }

    #[test]
    fn two_disjoint_paths_double() {
        let g = Grid::new(vec![0.0, 0.0], 0.5, vec![4, 2]).unwrap();
        let mask = CellMask::full(g);
        let a = DiscretePath::new(vec![Point::from([0.0, 0.25]), Point::from([2.0, 0.25])]).unwrap();
        let b = DiscretePath::new(vec![Point::from([0.0, 0.75]), Point::from([2.0, 0.75])]).unwrap();
        let one = exact_small_modulus(std::slice::from_ref(&a), &mask, 2.0).unwrap();
        let two = exact_small_modulus(&[a, b], &mask, 2.0).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-10);
    }

    #[test]
    fn degenerate_families() {
        let g = Grid::new(vec![0.0, 0.0], 1.0, vec![2, 2]).unwrap();
        let mask = CellMask::full(g.clone());
        assert_eq!(exact_small_modulus(&[], &mask, 2.0).unwrap(), 0.0);
        let c = DiscretePath::new(vec![Point::from([0.5, 0.5])]).unwrap();
        assert!(exact_small_modulus(std::slice::from_ref(&c), &mask, 2.0).unwrap().is_infinite());
        let r = compute_modulus_explicit(&[c], &g, &SolverOptions::default()).unwrap();
        assert!(r.value.is_infinite());
        let big = CellMask::full(Grid::new(vec![0.0, 0.0], 1.0, vec![9, 8]).unwrap());
        assert!(matches!(exact_small_modulus(&[], &big, 2.0), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn touching_sets_give_infinity_and_walls_give_zero() {
        let d = DomainSpec::cube([0.0, 0.0], [1.0, 1.0]);
        let g = Grid::covering(&BoundingBox::new(vec![0.0, 0.0], vec![1.0, 1.0]), 0.125).unwrap();
        let mask = rasterize(&d, &g).unwrap();
        let fam = FamilySpec::join(
            DomainSpec::segment([0.0, 0.5], [1.0, 0.5]),
            DomainSpec::segment([0.5, 0.0], [0.5, 1.0]),
            d.clone(),
        );
        assert!(compute_modulus(&fam, &mask, &SolverOptions::default()).unwrap().value.is_infinite());

        let walled = DomainSpec::difference(d.clone(), DomainSpec::cube([0.4, -1.0], [0.6, 2.0]));
        let wmask = rasterize(&walled, &g).unwrap();
        let fam = FamilySpec::join(
            DomainSpec::segment([0.0, 0.0], [0.0, 1.0]),
            DomainSpec::segment([1.0, 0.0], [1.0, 1.0]),
            walled,
        );
        let r = compute_modulus(&fam, &wmask, &SolverOptions::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.active_paths.is_empty());
    }

    #[test]
    fn rejects_bad_options() {
        let (fam, mask) = square_setup(0.25, 1.0);
        assert!(compute_modulus(&fam, &mask, &SolverOptions::with_p(1.0)).is_err());
    }

    #[test]
    fn certificate_holds_with_diagonal_stencil() {
        let (fam, mask) = square_setup(1.0 / 12.0, 1.0);
        let opts = SolverOptions { stencil: Stencil::Radius(2), ..SolverOptions::with_p(2.0) };
        let r = compute_modulus(&fam, &mask, &opts).unwrap();
        assert!(r.converged);
        let sp = crate::path::shortest_rho_path(&r.density, &fam, &mask, Stencil::Radius(2)).unwrap();
        assert!(sp.length >= 1.0 - 1e-6);
        assert!(r.lower_bound <= r.value * (1.0 + 1e-9));
    }
}
