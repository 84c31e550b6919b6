//! Batch front end: reads a JSON input, runs one computation and writes a
//! JSON report (plus CSV tables where asked).
//!
//! Exit status: 0 success, 1 invalid input, 2 solver did not converge (the
//! report is still written), 3 internal or output error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use pmodulus::bounds::{choose_r, ring_lower_bound, spherical_ring_exact, set_pair_bound, BoundParams, RadiusChoice};
use pmodulus::domain::{BoundingBox, CombDomain, DomainSpec, Region};
use pmodulus::experiments::{
    continuum_swap_check, estimate_delta, region_samples, uniformity_probe, vanishing_modulus_probe,
    AccessibilityScenario,
};
use pmodulus::geometry::Point;
use pmodulus::grid::{rasterize, CellMask, Grid};
use pmodulus::path::{FamilySpec, Stencil};
use pmodulus::qc::{dilatations, verify_dilatation_bound, CompositeMap, ConeStretchMap, Dilatations, PointMap};
use pmodulus::report::{ext_f64, to_json, ModulusSummary};
use pmodulus::solver::{compute_modulus, SolverOptions};
use pmodulus::Error;

#[derive(Parser, Debug)]
#[command(name = "pmodulus", version, about = "Discrete p-modulus computations")]
struct Cli {
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON input document.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Cells along the longest side of the domain's bounding box.
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative duality gap at which the solver stops.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Cap on constraint-generation rounds per modulus solve.
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    /// `face` or `radius:K`.
    #[arg(long, default_value = "face", value_parser = parse_stencil)]
    stencil: Stencil,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Modulus of a path family (input: a family document).
    Modulus {
        #[command(flatten)]
        common: Common,
        /// Also write the extremal density as CSV.
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Ring lower bound against the exact ring modulus, and optionally the
    /// modulus bound for two sets (input: `{a, a_star, domain}`).
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Inner radius of the ring.
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        /// Outer radius of the ring.
        #[arg(long, default_value_t = std::f64::consts::E)]
        b: f64,
        /// Table of bound and exact value over ratios `b/a`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cone-stretch dilatation checks, or dilatations of a map at given
    /// points (input: `{map, points}`).
    Qcmap {
        #[command(flatten)]
        common: Common,
        /// Sample the canonical cone-stretch and check its dilatation bound.
        #[arg(long)]
        verify_bound: bool,
        #[arg(long, default_value_t = 1.0)]
        d0: f64,
        #[arg(long, default_value_t = 2.0)]
        d1: f64,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Accessibility experiments (input: a probe document).
    Probe {
        #[command(flatten)]
        common: Common,
        /// Per-tooth table for vanishing probes.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_stencil(s: &str) -> Result<Stencil, String> {
    if s == "face" {
        return Ok(Stencil::Face);
    }
    s.strip_prefix("radius:")
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|k| *k >= 1)
        .map(Stencil::Radius)
        .ok_or_else(|| format!("expected `face` or `radius:K` with K >= 1, got `{s}`"))
}

/// Failure of a run, carrying its exit status.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::SvdFailure | Error::Csv(_) | Error::Io(_) => Failure::Internal(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

type Outcome = Result<bool, Failure>;

impl Common {
    fn validate(&self) -> Result<(), Failure> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Failure::Invalid(format!("--p must exceed 1, got {}", self.p)));
        }
        if self.res < 4 {
            return Err(Failure::Invalid(format!("--res must be at least 4, got {}", self.res)));
        }
        if self.max_iters == 0 {
            return Err(Failure::Invalid("--max-iters must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Failure::Invalid(format!("--tol must lie in (0, 1), got {}", self.tol)));
        }
        Ok(())
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions {
            gap_tol: self.tol,
            stencil: self.stencil,
            max_outer_iters: self.max_iters,
            ..SolverOptions::with_p(self.p)
        }
    }

    fn read<T: DeserializeOwned>(&self) -> Result<T, Failure> {
        let path = self.input.as_ref().ok_or_else(|| Failure::Invalid("--input is required".into()))?;
        read_json(path)
    }

    fn emit<T: Serialize>(&self, report: &T) -> Result<(), Failure> {
        let text = to_json(report)?;
        match &self.output {
            Some(path) => std::fs::write(path, text).map_err(|e| output_error(path, e)),
            None => io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Internal(e.to_string())),
        }
    }

    fn mask(&self, domain: &DomainSpec) -> Result<CellMask, Failure> {
        let grid = Grid::with_resolution(&domain.bounding_box(), self.res)?;
        Ok(rasterize(domain, &grid)?)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let mut at = e.path().to_string();
        let mut msg = e.inner().to_string();
        // Tagged enums are buffered before dispatch, which loses the path;
        // find the innermost region that fails on its own instead.
        if at == "." {
            if let Some((p, m)) = failing_region(&value, String::new()) {
                at = p;
                msg = m;
            }
        }
        Failure::Invalid(format!("{}: at `{at}`: {msg}", path.display()))
    })
}

fn failing_region(v: &Value, at: String) -> Option<(String, String)> {
    let join = |key: &str| if at.is_empty() { key.to_string() } else { format!("{at}.{key}") };
    let inner = match v {
        Value::Object(map) => map.iter().find_map(|(k, child)| failing_region(child, join(k))),
        Value::Array(items) => items.iter().enumerate().find_map(|(i, child)| failing_region(child, format!("{at}[{i}]"))),
        _ => None,
    };
    if inner.is_some() {
        return inner;
    }
    let obj = v.as_object()?;
    let err = if obj.contains_key("type") {
        serde_json::from_value::<DomainSpec>(v.clone()).err()
    } else if obj.get("kind").and_then(Value::as_str).is_some_and(|k| k == "join" || k == "explicit") {
        serde_json::from_value::<FamilySpec>(v.clone()).err()
    } else {
        None
    }?;
    Some((if at.is_empty() { ".".into() } else { at }, err.to_string()))
}

fn output_error(path: &Path, e: io::Error) -> Failure {
    Failure::Internal(format!("cannot write {}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| output_error(path, e))
}

#[derive(Serialize)]
struct GridInfo {
    origin: Vec<f64>,
    h: f64,
    dims: Vec<usize>,
    cells_in_domain: usize,
}

#[derive(Serialize)]
struct ModulusReport {
    family: FamilySpec,
    stencil: Stencil,
    grid: GridInfo,
    #[serde(flatten)]
    summary: ModulusSummary,
}

fn family_grid(fam: &FamilySpec, res: usize) -> Result<CellMask, Failure> {
    match fam {
        FamilySpec::Join { domain, .. } => {
            let grid = Grid::with_resolution(&domain.bounding_box(), res)?;
            Ok(rasterize(domain, &grid)?)
        }
        FamilySpec::Explicit { paths } => {
            let n = fam.dim();
            let mut bb = BoundingBox::empty(n);
            for path in paths {
                for v in path.vertices() {
                    bb.include_point(v);
                }
            }
            let side = bb.min.iter().zip(&bb.max).map(|(a, b)| b - a).fold(0.0, f64::max);
            let grid = Grid::with_resolution(&bb.pad(side / res as f64), res)?;
            Ok(CellMask::full(grid))
        }
    }
}

fn run_modulus(c: &Common, density: Option<&Path>) -> Outcome {
    let fam: FamilySpec = c.read()?;
    let mask = family_grid(&fam, c.res)?;
    let result = compute_modulus(&fam, &mask, &c.solver())?;
    let grid = mask.grid();
    let report = ModulusReport {
        family: fam,
        stencil: c.stencil,
        grid: GridInfo {
            origin: grid.origin().to_vec(),
            h: grid.h(),
            dims: grid.dims().to_vec(),
            cells_in_domain: mask.count(),
        },
        summary: ModulusSummary::new(c.p, &result),
    };
    c.emit(&report)?;
    if let Some(path) = density {
        let mut w = create(path)?;
        result.density.write_csv(&mut w)?;
        w.flush().map_err(|e| output_error(path, e))?;
    }
    Ok(result.converged)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetsInput {
    a: DomainSpec,
    a_star: DomainSpec,
    domain: DomainSpec,
}

#[derive(Serialize)]
struct SetsReport {
    choice: RadiusChoice,
    bound: f64,
}

#[derive(Serialize)]
struct BoundsReport {
    params: BoundParams,
    a: f64,
    b: f64,
    ring_lower_bound: f64,
    #[serde(serialize_with = "ext_f64")]
    exact: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sets: Option<SetsReport>,
}

const TABLE_RATIOS: usize = 64;

fn run_bounds(c: &Common, n: usize, a: f64, b: f64, csv_path: Option<&Path>) -> Outcome {
    let params = BoundParams::new(n, c.p)?;
    let sets = match &c.input {
        Some(_) => {
            let input: SetsInput = c.read()?;
            let mask = c.mask(&input.domain)?;
            let grid = mask.grid();
            let choice = choose_r(&region_samples(&input.a, grid), &region_samples(&input.a_star, grid), &input.domain)?;
            let bound = set_pair_bound(&params, choice.r)?;
            Some(SetsReport { choice, bound })
        }
        None => None,
    };
    let report = BoundsReport {
        params: params.clone(),
        a,
        b,
        ring_lower_bound: ring_lower_bound(&params, a, b)?,
        exact: spherical_ring_exact(n, c.p, a, b)?,
        sets,
    };
    c.emit(&report)?;
    if let Some(path) = csv_path {
        let mut w = csv::Writer::from_writer(create(path)?);
        let io_err = |e: csv::Error| Failure::Internal(e.to_string());
        w.write_record(["ratio", "ring_lower_bound", "exact"]).map_err(io_err)?;
        for i in 1..=TABLE_RATIOS {
            let ratio = 1.0 + 7.0 * i as f64 / TABLE_RATIOS as f64;
            let lower = ring_lower_bound(&params, 1.0, ratio)?;
            let exact = spherical_ring_exact(n, c.p, 1.0, ratio)?;
            w.write_record([format!("{ratio:.16e}"), format!("{lower:.16e}"), format!("{exact:.16e}")])
                .map_err(io_err)?;
        }
        w.flush().map_err(|e| output_error(path, e))?;
    }
    Ok(true)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapInput {
    map: CompositeMap,
    points: Vec<Point>,
}

#[derive(Serialize)]
struct PointDilatations {
    x: Point,
    image: Point,
    #[serde(flatten)]
    d: Dilatations,
}

#[derive(Serialize)]
struct MapReport {
    p: f64,
    bound: f64,
    points: Vec<PointDilatations>,
}

fn run_qcmap(c: &Common, verify: bool, d0: f64, d1: f64, n: usize, samples: usize) -> Outcome {
    if verify {
        let m = ConeStretchMap::canonical(n, d0, d1)?;
        let report = verify_dilatation_bound(&m, c.p, samples, c.seed)?;
        c.emit(&report)?;
        return Ok(true);
    }
    let input: MapInput = c.read()?;
    let points = input
        .points
        .into_iter()
        .map(|x| {
            let d = dilatations(&input.map, &x, c.p, c.p)?;
            Ok(PointDilatations { image: input.map.apply(&x)?, x, d })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    c.emit(&MapReport { p: c.p, bound: input.map.dilatation_bound(c.p), points })?;
    Ok(true)
}

fn default_count() -> usize {
    20
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ProbeInput {
    /// Least modulus over generated continua.
    Delta {
        scenario: AccessibilityScenario,
        #[serde(default = "default_count")]
        num_f: usize,
    },
    /// Swap `E` for a disjoint `E*` and compare with `δ*`.
    Swap {
        scenario: AccessibilityScenario,
        e_star: DomainSpec,
        #[serde(default = "default_count")]
        num_f: usize,
    },
    Uniformity {
        domain: DomainSpec,
        r: f64,
        #[serde(default = "default_count")]
        num_pairs: usize,
    },
    Vanishing {
        comb: CombDomain,
        x0: Point,
        r: f64,
        r0: f64,
        f: DomainSpec,
        teeth: Vec<usize>,
    },
}

fn run_probe(c: &Common, csv_path: Option<&Path>) -> Outcome {
    let input: ProbeInput = c.read()?;
    let opts = c.solver();
    match input {
        ProbeInput::Delta { scenario, num_f } => {
            let mask = c.mask(&scenario.domain)?;
            let r = estimate_delta(&scenario, &mask, &opts, num_f, c.seed)?;
            c.emit(&r)?;
            Ok(r.converged)
        }
        ProbeInput::Swap { scenario, e_star, num_f } => {
            let mask = c.mask(&scenario.domain)?;
            let r = continuum_swap_check(&scenario, &e_star, &mask, &opts, num_f, c.seed)?;
            c.emit(&r)?;
            Ok(r.converged)
        }
        ProbeInput::Uniformity { domain, r, num_pairs } => {
            let mask = c.mask(&domain)?;
            let rep = uniformity_probe(&domain, r, &mask, &opts, num_pairs, c.seed)?;
            c.emit(&rep)?;
            Ok(rep.converged)
        }
        ProbeInput::Vanishing { comb, x0, r, r0, f, teeth } => {
            let mask = c.mask(&DomainSpec::Comb(comb.clone()))?;
            let rep = vanishing_modulus_probe(&comb, &x0, r, r0, &f, &mask, &opts, &teeth)?;
            c.emit(&rep)?;
            if let Some(path) = csv_path {
                let mut w = create(path)?;
                rep.write_csv(&mut w)?;
                w.flush().map_err(|e| output_error(path, e))?;
            }
            Ok(rep.converged)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Modulus { common, density } => {
            common.validate()?;
            run_modulus(common, density.as_deref())
        }
        Command::Bounds { common, n, a, b, csv } => {
            common.validate()?;
            run_bounds(common, *n, *a, *b, csv.as_deref())
        }
        Command::Qcmap { common, verify_bound, d0, d1, n, samples } => {
            common.validate()?;
            run_qcmap(common, *verify_bound, *d0, *d1, *n, *samples)
        }
        Command::Probe { common, csv } => {
            common.validate()?;
            run_probe(common, csv.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: the solver stopped before reaching the requested tolerance");
            ExitCode::from(2)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
