//! Browser bindings. Every export takes plain numbers or a JSON string and
//! returns a JSON string; the `*_json` functions hold the logic so they can
//! be tested natively.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use pmodulus::bounds::{ring_lower_bound, spherical_ring_exact, BoundParams};
use pmodulus::domain::Region;
use pmodulus::grid::{rasterize, Grid};
use pmodulus::path::{FamilySpec, Stencil};
use pmodulus::qc::{matrix_dilatations, ConeRegion, ConeStretchMap};
use pmodulus::solver::{compute_modulus, SolverOptions};

const MAX_RES: usize = 96;

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

fn err(e: pmodulus::Error) -> String {
    e.to_string()
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Samples the canonical planar cone-stretch on a `res x res` lattice over
/// its cylinder plus a margin. Returns the inner dilatation and region code
/// per sample, and the images of the lattice rows and columns.
pub fn dilatation_field_json(d0: f64, d1: f64, p: f64, res: usize) -> Result<Value, String> {
    if !(2..=200).contains(&res) {
        return Err(format!("res must lie in 2..=200, got {res}"));
    }
    if !(p > 1.0) {
        return Err(format!("p must exceed 1, got {p}"));
    }
    let m = ConeStretchMap::canonical(2, d0, d1).map_err(err)?;
    let (xmin, xmax) = (-1.5 * d0, 1.5 * d0);
    let (ymin, ymax) = (-0.25 * (d0 + d1), 1.25 * (d0 + d1));
    let xs: Vec<f64> = (0..res).map(|i| xmin + (xmax - xmin) * i as f64 / (res - 1) as f64).collect();
    let ys: Vec<f64> = (0..res).map(|j| ymin + (ymax - ymin) * j as f64 / (res - 1) as f64).collect();
    let mut k_inner = Vec::with_capacity(res * res);
    let mut region = Vec::with_capacity(res * res);
    for &y in &ys {
        for &x in &xs {
            let z = [x, y];
            let d = matrix_dilatations(&m.jacobian_canonical(&z), p, p).map_err(err)?;
            k_inner.push(d.k_inner);
            region.push(match m.classify_canonical(&z) {
                ConeRegion::LowerCone => 1,
                ConeRegion::UpperCone => 2,
                ConeRegion::Shell => 3,
                ConeRegion::Outside => 0,
            });
        }
    }
    let image = |pts: Vec<[f64; 2]>| -> Vec<[f64; 2]> {
        pts.iter()
            .map(|z| {
                let w = m.apply_canonical(z);
                [w[0], w[1]]
            })
            .collect()
    };
    let fine = 4 * res;
    let mut lines = Vec::new();
    for &y in ys.iter().step_by(4) {
        lines.push(image((0..fine).map(|i| [xmin + (xmax - xmin) * i as f64 / (fine - 1) as f64, y]).collect()));
    }
    for &x in xs.iter().step_by(4) {
        lines.push(image((0..fine).map(|j| [x, ymin + (ymax - ymin) * j as f64 / (fine - 1) as f64]).collect()));
    }
    Ok(json!({
        "xs": xs,
        "ys": ys,
        "k_inner": k_inner,
        "region": region,
        "bound": m.dilatation_bound(p),
        "lines": lines,
    }))
}

/// Solves a planar join family given as JSON and returns the extremal
/// density on the grid.
pub fn modulus_heatmap_json(family: &str, p: f64, res: usize, radius: usize) -> Result<Value, String> {
    if !(4..=MAX_RES).contains(&res) {
        return Err(format!("res must lie in 4..={MAX_RES}, got {res}"));
    }
    let fam: FamilySpec = serde_json::from_str(family).map_err(|e| e.to_string())?;
    let FamilySpec::Join { domain, .. } = &fam else {
        return Err("only join families are supported here".into());
    };
    if fam.dim() != 2 {
        return Err(format!("the demo draws planar families, got dimension {}", fam.dim()));
    }
    domain.validate().map_err(err)?;
    let grid = Grid::with_resolution(&domain.bounding_box(), res).map_err(err)?;
    let mask = rasterize(domain, &grid).map_err(err)?;
    let stencil = if radius == 0 { Stencil::Face } else { Stencil::Radius(radius) };
    let opts = SolverOptions { gap_tol: 1e-3, stencil, ..SolverOptions::with_p(p) };
    let r = compute_modulus(&fam, &mask, &opts).map_err(err)?;
    Ok(json!({
        "value": finite_or_null(r.value),
        "lower_bound": finite_or_null(r.lower_bound),
        "converged": r.converged,
        "outer_iters": r.outer_iters,
        "origin": grid.origin(),
        "h": grid.h(),
        "dims": grid.dims(),
        "mask": mask.bits(),
        "rho": r.density.values(),
        "paths": r.active_paths.iter().take(12).map(|q| {
            q.vertices().iter().map(|v| [v[0], v[1]]).collect::<Vec<_>>()
        }).collect::<Vec<_>>(),
    }))
}

/// Ring lower bound and exact ring modulus for `1 < b/a <= max_ratio`.
pub fn ring_curve_json(n: usize, p: f64, max_ratio: f64, samples: usize) -> Result<Value, String> {
    if !(max_ratio > 1.0 && max_ratio.is_finite()) || !(2..=2000).contains(&samples) {
        return Err("need max_ratio > 1 and 2 <= samples <= 2000".into());
    }
    let params = BoundParams::new(n, p).map_err(err)?;
    let mut ratio = Vec::with_capacity(samples);
    let mut bound = Vec::with_capacity(samples);
    let mut exact = Vec::with_capacity(samples);
    for i in 1..=samples {
        let b = 1.0 + (max_ratio - 1.0) * i as f64 / samples as f64;
        ratio.push(b);
        bound.push(ring_lower_bound(&params, 1.0, b).map_err(err)?);
        exact.push(spherical_ring_exact(n, p, 1.0, b).map_err(err)?);
    }
    Ok(json!({ "b_np": params.b_np, "ratio": ratio, "ring_lower_bound": bound, "exact": exact }))
}

#[wasm_bindgen]
pub fn dilatation_field(d0: f64, d1: f64, p: f64, res: usize) -> Result<String, JsError> {
    to_js(dilatation_field_json(d0, d1, p, res))
}

#[wasm_bindgen]
pub fn modulus_heatmap(family: &str, p: f64, res: usize, radius: usize) -> Result<String, JsError> {
    to_js(modulus_heatmap_json(family, p, res, radius))
}

#[wasm_bindgen]
pub fn ring_curve(n: usize, p: f64, max_ratio: f64, samples: usize) -> Result<String, JsError> {
    to_js(ring_curve_json(n, p, max_ratio, samples))
}
