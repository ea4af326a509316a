//! Command implementations behind the `chernlab` binary.
//!
//! Every command writes into the configured output directory:
//! `results.json`, plot-ready `tables/*.csv`, and for `bubble` also `tree.json`
//! and one snapshot per tree node under `nodes/`.

use crate::bubble::{
    build_tree, distance_bubbling_check, energy_identity_check, mass_accounting, BubbleTree, DistanceBubblingReport,
    EnergyIdentityReport, MassRow,
};
use crate::config::{ExperimentConfig, InitialMap};
use crate::domain::{DiskMetric, DomainChart, DomainPoint, DomainSpec};
use crate::error::{Error, Result};
use crate::fit::convergence_order;
use crate::flow::{concentrating_family, flow_to_harmonic, FamilyKind, FlowConfig, Scheme, SolveReport};
use crate::map::{MapSpec, MapState};
use crate::pullback::{conformal_change_check, first_order_operator_check, max_norm, second_order_operator_check, Pullback};
use crate::regularity::{bochner_check, bochner_sides, epsilon_regularity_check, isoperimetric_check, monotonicity_check, region_mask};
use crate::snapshot::{self, SnapshotHeader, FORMAT_VERSION};
use crate::target::{HermitianTarget, Pt, TargetId, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const TARGETS: [TargetId; 3] = [TargetId::FlatC2, TargetId::FsProduct, TargetId::Hopf];

/// Smallest torsion-identity order accepted.
pub const TORSION_MIN_ORDER: f64 = 3.5;
/// Residuals below this count as exact (the identity holds to rounding on Kähler targets).
pub const ROUNDOFF_FLOOR: f64 = 1e-10;
pub const HOPF_TORSION_MAX: f64 = 1e-6;
pub const HOLOMORPHIC_RESIDUAL_MAX: f64 = 1e-6;
/// Accepted Bochner defect reduction per mesh halving.
pub const BOCHNER_FACTOR_BAND: (f64, f64) = (2.5, 6.0);
pub const FLAT_BOCHNER_MAX: f64 = 1e-8;
pub const CONSTANT_MU_MAX: f64 = 1e-8;
pub const CONFORMAL_MIN_ORDER: f64 = 3.5;
pub const ISOPERIMETRIC_FLAT_TOL: f64 = 0.01;
pub const EPSILON_STABILITY: f64 = 0.10;
pub const IDENTITY_TOL: f64 = 0.02;
pub const MASS_TOL: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Torsion,
    Bochner,
    Conformal,
    Operators,
    Isoperimetric,
    Monotonicity,
    Regularity,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Torsion,
        Suite::Bochner,
        Suite::Conformal,
        Suite::Operators,
        Suite::Isoperimetric,
        Suite::Monotonicity,
        Suite::Regularity,
    ];

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Torsion => "torsion",
            Suite::Bochner => "bochner",
            Suite::Conformal => "conformal",
            Suite::Operators => "operators",
            Suite::Isoperimetric => "isoperimetric",
            Suite::Monotonicity => "monotonicity",
            Suite::Regularity => "regularity",
        }
    }
}

/// One tested quantity against its tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: String,
    pub passed: bool,
}

fn check(name: impl Into<String>, value: f64, limit: impl Into<String>, passed: bool) -> Check {
    Check { name: name.into(), value, limit: limit.into(), passed }
}

/// Rows destined for `tables/<name>.csv`.
#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&'static str]) -> Table {
        Table { name: name.into(), header: header.to_vec(), rows: vec![] }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Process exit status for an error: 2 for a diverged flow, 3 for a failed
/// invariant, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged(_) | Error::StepTooLarge(_) => 2,
        Error::NotHarmonic { .. } => 3,
        _ => 1,
    }
}

fn sample_seed(seed: u64, salt: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)).gen()
}

fn flat_disk(n: usize, radius: f64) -> Result<Arc<DomainChart>> {
    Ok(Arc::new(DomainChart::new(DomainSpec::Disk { n, radius, metric: DiskMetric::Flat { scale: 1.0 } })?))
}

/// Base point of randomized maps, kept away from the Hopf singularity.
fn base_point(t: TargetId) -> Pt {
    match t {
        TargetId::Hopf => [C64::new(0.8, 0.2), C64::new(-0.3, 0.5)],
        _ => [C64::new(0.3, -0.1), C64::new(0.2, 0.4)],
    }
}

fn max_finite(v: impl Iterator<Item = f64>) -> f64 {
    let mut m: f64 = 0.0;
    for x in v {
        if !x.is_finite() {
            return f64::NAN;
        }
        m = m.max(x);
    }
    m
}

pub fn run_suite(cfg: &ExperimentConfig, suite: Suite) -> Result<SuiteOutcome> {
    match suite {
        Suite::Torsion => torsion_suite(cfg),
        Suite::Bochner => bochner_suite(cfg),
        Suite::Conformal => conformal_suite(cfg),
        Suite::Operators => operators_suite(cfg),
        Suite::Isoperimetric => corpus_suite(cfg, Suite::Isoperimetric),
        Suite::Monotonicity => corpus_suite(cfg, Suite::Monotonicity),
        Suite::Regularity => regularity_suite(cfg),
    }
}

fn resolutions(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    let r = cfg.verify.resolutions.clone();
    if r.len() < 2 || r.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("verify.resolutions needs at least two increasing entries".into()));
    }
    Ok(r)
}

/// Torsion identity residual of random trigonometric maps into every target
/// under grid refinement.
fn torsion_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let res = resolutions(cfg)?;
    let domains: Vec<Arc<DomainChart>> = res.iter().map(|&n| flat_disk(n, 1.0)).collect::<Result<_>>()?;
    let mut table = Table::new("torsion", &["target", "sample", "n", "h", "residual"]);
    let mut checks = vec![];
    for t in TARGETS {
        let target = HermitianTarget::new(t);
        let mut worst_order = f64::INFINITY;
        let mut finest_max: f64 = 0.0;
        for s in 0..cfg.verify.samples {
            let spec = MapSpec::random_trig(sample_seed(cfg.seed, 16 * t.code() as u64 + s as u64), base_point(t), 0.15, 2.0 * PI, 3);
            let mut h = vec![];
            let mut r = vec![];
            for d in &domains {
                let m = MapState::from_spec(d.clone(), target, &spec)?;
                let pb = Pullback::compute(&m)?;
                let tr = pb.torsion_identity_residual();
                let v = max_finite((0..d.len()).filter(|&p| d.inside[p] > 0.0).map(|p| tr[p]));
                table.push(vec![t.name().into(), s.to_string(), d.n.to_string(), num(d.h), num(v)]);
                h.push(d.h);
                r.push(v);
            }
            let last = *r.last().unwrap();
            finest_max = if last.is_finite() { finest_max.max(last) } else { f64::NAN };
            let exact = r.iter().all(|v| *v < ROUNDOFF_FLOOR);
            let order = if exact { f64::INFINITY } else { convergence_order(&h, &r).map(|f| f.slope).unwrap_or(f64::NAN) };
            worst_order = if order.is_nan() { f64::NAN } else { worst_order.min(order) };
        }
        let exact = worst_order == f64::INFINITY;
        checks.push(check(
            format!("{} minimum order", t.name()),
            worst_order,
            format!(">= {TORSION_MIN_ORDER} or residual < {ROUNDOFF_FLOOR:e}"),
            exact || worst_order >= TORSION_MIN_ORDER,
        ));
        let limit = if t == TargetId::Hopf { HOPF_TORSION_MAX } else { f64::INFINITY };
        checks.push(check(
            format!("{} max residual at n={}", t.name(), res.last().unwrap()),
            finest_max,
            format!("< {limit:e}"),
            finest_max < limit,
        ));
    }
    Ok(SuiteOutcome { suite: Suite::Torsion, checks, tables: vec![table] })
}

/// Dirichlet data for the solved Bochner map: holomorphic part plus x̄ terms.
pub fn bochner_initial_map() -> MapSpec {
    let one = C64::from(1.0);
    MapSpec::poly(&[(one * 1.2, 0, 0), (one * 0.3, 1, 0), (one * 0.2, 0, 1)], &[(one * 0.5, 0, 0), (one * 0.2, 0, 2)])
}

/// Flow configuration for suites that solve: the configured one with the
/// step count bounded and the tolerance at most 1e-10.
fn solve_config(cfg: &ExperimentConfig) -> FlowConfig {
    FlowConfig { tol: cfg.flow.tol.min(1e-10), ..cfg.flow }
}

fn bochner_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let res = resolutions(cfg)?;
    let target = HermitianTarget::new(cfg.target);
    let spec = bochner_initial_map();
    let flow = solve_config(cfg);
    let mut maps = vec![];
    let mut solve = Table::new("bochner_solve", &["n", "steps", "converged", "residual"]);
    for &n in &res {
        let m = MapState::from_spec(flat_disk(n, 1.0)?, target, &spec)?;
        let (out, rep) = flow_to_harmonic(&m, &flow)?;
        solve.push(vec![
            n.to_string(),
            rep.steps_taken.to_string(),
            rep.converged.to_string(),
            num(*rep.residual_history.last().unwrap_or(&f64::NAN)),
        ]);
        maps.push(out);
    }
    let rad = cfg.verify.region_radius;
    let rep = bochner_check(&maps, |x| x.norm() < rad, 1e-6)?;
    let mut table = Table::new("bochner", &["n", "h", "defect", "factor"]);
    let mut checks = vec![];
    let (lo, hi) = BOCHNER_FACTOR_BAND;
    for i in 0..rep.defects.len() {
        let factor = if i == 0 { f64::NAN } else { rep.defects[i - 1] / rep.defects[i] };
        table.push(vec![rep.resolutions[i].to_string(), num(rep.h[i]), num(rep.defects[i]), num(factor)]);
        if i > 0 {
            checks.push(check(
                format!("{} defect factor n={}->{}", cfg.target.name(), rep.resolutions[i - 1], rep.resolutions[i]),
                factor,
                format!("in [{lo}, {hi}]"),
                (lo..=hi).contains(&factor),
            ));
        }
    }
    checks.push(check(format!("{} fitted order", cfg.target.name()), rep.order, "reported", rep.order.is_finite()));

    // flat identity Δe = 2|A|² on a cubic
    let d = flat_disk(128, 1.0)?;
    let flat = MapState::from_spec(
        d.clone(),
        HermitianTarget::new(TargetId::FlatC2),
        &MapSpec::poly(&[(C64::from(1.0), 3, 0)], &[(C64::new(0.2, 0.1), 2, 0)]),
    )?;
    let mask = region_mask(&d, |x| x.norm() < rad);
    let (lhs, rhs) = bochner_sides(&flat, &mask)?;
    let flat_defect = max_finite((0..d.len()).filter(|&q| mask[q]).map(|q| (lhs[q] - rhs[q]).abs()));
    checks.push(check("flat polynomial identity at n=128", flat_defect, format!("< {FLAT_BOCHNER_MAX:e}"), flat_defect < FLAT_BOCHNER_MAX));
    Ok(SuiteOutcome { suite: Suite::Bochner, checks, tables: vec![solve, table] })
}

fn conformal_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let res = resolutions(cfg)?;
    let mut table = Table::new("conformal", &["target", "factor", "n", "deviation"]);
    let mut checks = vec![];
    for t in TARGETS {
        let target = HermitianTarget::new(t);
        let spec = MapSpec::random_trig(sample_seed(cfg.seed, 100 + t.code() as u64), base_point(t), 0.15, 2.0 * PI, 3);
        let mut h = vec![];
        let mut dev = vec![];
        let mut const_dev: f64 = 0.0;
        for &n in &res {
            let d = flat_disk(n, 1.0)?;
            let m = MapState::from_spec(d.clone(), target, &spec)?;
            let inside: Vec<bool> = d.inside.iter().map(|&w| w > 0.0).collect();
            let lt: Vec<f64> = d.lambda.iter().map(|l| l / 2.5).collect();
            let c = conformal_change_check(&m, &lt, &d.dlog_lambda, Some(&inside))?;
            const_dev = const_dev.max(c);
            table.push(vec![t.name().into(), "constant".into(), n.to_string(), num(c)]);
            // λ̃ = λ exp(0.3 Re x² + 0.2|x|²)
            let psi = |x: C64| 0.3 * (x * x).re + 0.2 * x.norm_sqr();
            let lv: Vec<f64> = d.lambda.iter().zip(&d.coords).map(|(l, &x)| l * psi(x).exp()).collect();
            let dv: Vec<C64> = d.dlog_lambda.iter().zip(&d.coords).map(|(g, &x)| g + x * 0.3 + x.conj() * 0.2).collect();
            let v = conformal_change_check(&m, &lv, &dv, Some(&inside))?;
            table.push(vec![t.name().into(), "variable".into(), n.to_string(), num(v)]);
            h.push(d.h);
            dev.push(v);
        }
        checks.push(check(format!("{} constant factor deviation", t.name()), const_dev, format!("< {CONSTANT_MU_MAX:e}"), const_dev < CONSTANT_MU_MAX));
        let exact = dev.iter().all(|v| *v < ROUNDOFF_FLOOR);
        let order = if exact { f64::INFINITY } else { convergence_order(&h, &dev).map(|f| f.slope).unwrap_or(f64::NAN) };
        let decreasing = dev.windows(2).all(|w| w[1] < w[0]);
        checks.push(check(
            format!("{} variable factor order", t.name()),
            order,
            format!(">= {CONFORMAL_MIN_ORDER}, decreasing"),
            exact || (decreasing && order >= CONFORMAL_MIN_ORDER),
        ));
    }
    Ok(SuiteOutcome { suite: Suite::Conformal, checks, tables: vec![table] })
}

/// Five closed-form holomorphic maps per target.
pub fn holomorphic_corpus(t: TargetId) -> Vec<MapSpec> {
    let c = |re: f64, im: f64| C64::new(re, im);
    let shift = if t == TargetId::Hopf { [c(1.0, 0.0), c(0.0, 0.5)] } else { [c(0.0, 0.0), c(0.0, 0.0)] };
    let rows: [(Vec<(C64, u32, u32)>, Vec<(C64, u32, u32)>); 5] = [
        (vec![(c(0.2, 0.0), 0, 0), (c(0.5, 0.0), 1, 0)], vec![(c(0.3, 0.0), 2, 0)]),
        (vec![(c(0.6, 0.1), 1, 0)], vec![(c(0.4, 0.0), 1, 0), (c(0.2, -0.1), 3, 0)]),
        (vec![(c(0.1, 0.0), 0, 0), (c(0.3, 0.2), 2, 0)], vec![(c(0.6, 0.0), 1, 0)]),
        (vec![(c(0.5, 0.0), 1, 0), (c(-0.2, 0.0), 2, 0)], vec![(c(0.1, 0.3), 0, 0), (c(0.3, 0.0), 1, 0)]),
        (vec![(c(0.3, 0.0), 3, 0)], vec![(c(0.4, -0.2), 1, 0), (c(0.1, 0.0), 4, 0)]),
    ];
    rows.into_iter()
        .map(|(mut a, mut b)| {
            a.push((shift[0], 0, 0));
            b.push((shift[1], 0, 0));
            MapSpec::poly(&a, &b)
        })
        .collect()
}

fn operators_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let n = cfg.domain.n();
    let d = flat_disk(n, 1.0)?;
    let inside: Vec<bool> = d.inside.iter().map(|&w| w > 0.0).collect();
    let mut table = Table::new("operators", &["target", "map", "harmonic_residual", "first_order_defect", "second_order_defect"]);
    let mut checks = vec![];
    for t in TARGETS {
        let target = HermitianTarget::new(t);
        let mut worst: f64 = 0.0;
        let mut worst_first: f64 = 0.0;
        for (i, spec) in holomorphic_corpus(t).iter().enumerate() {
            let m = MapState::from_spec(d.clone(), target, spec)?;
            let pb = Pullback::compute(&m)?;
            let r = max_norm(&pb.harmonic_residual(), Some(&inside));
            let first = first_order_operator_check(&m, f64::INFINITY, Some(&inside))?;
            let second = second_order_operator_check(&m, f64::INFINITY, Some(&inside))?;
            table.push(vec![t.name().into(), i.to_string(), num(r), num(first), num(second)]);
            worst = if r.is_finite() { worst.max(r) } else { f64::NAN };
            worst_first = if first.is_finite() { worst_first.max(first) } else { f64::NAN };
        }
        checks.push(check(
            format!("{} holomorphic harmonic residual at n={n}", t.name()),
            worst,
            format!("< {HOLOMORPHIC_RESIDUAL_MAX:e}"),
            worst < HOLOMORPHIC_RESIDUAL_MAX,
        ));
        checks.push(check(
            format!("{} first-order operator defect at n={n}", t.name()),
            worst_first,
            format!("< {HOLOMORPHIC_RESIDUAL_MAX:e}"),
            worst_first < HOLOMORPHIC_RESIDUAL_MAX,
        ));
    }
    Ok(SuiteOutcome { suite: Suite::Operators, checks, tables: vec![table] })
}

/// Holomorphic and solved maps of the unit disk for the isoperimetric and
/// monotonicity checks: the flat inclusion first, then random holomorphic
/// quadratics into each target, then Dirichlet solutions.
pub fn disk_corpus(cfg: &ExperimentConfig) -> Result<Vec<(String, MapState)>> {
    let n = cfg.domain.n();
    let d = flat_disk(n, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![(
        "flat_inclusion".to_string(),
        MapState::from_spec(d.clone(), HermitianTarget::new(TargetId::FlatC2), &MapSpec::poly(&[(C64::from(1.0), 1, 0)], &[]))?,
    )];
    for t in TARGETS {
        let base = if t == TargetId::FsProduct { [C64::new(0.1, 0.0), C64::new(0.0, 0.1)] } else { base_point(t) };
        for i in 0..6 {
            // images stay inside the first Fubini-Study chart over the whole grid
            let mut c = || C64::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let (a1, a2, b1, b2) = (c(), c() * 0.5, c(), c() * 0.5);
            let spec = MapSpec::poly(&[(base[0], 0, 0), (a1, 1, 0), (a2, 2, 0)], &[(base[1], 0, 0), (b1, 1, 0), (b2, 2, 0)]);
            out.push((format!("{}_holomorphic_{i}", t.name()), MapState::from_spec(d.clone(), HermitianTarget::new(t), &spec)?));
        }
    }
    let small = flat_disk(64, 1.0)?;
    let flow = FlowConfig { dt: 0.2, tol: 1e-10, max_steps: 400, scheme: Scheme::SemiImplicit, cfl_safety: 0.5 };
    for t in [TargetId::FsProduct, TargetId::Hopf] {
        let m = MapState::from_spec(small.clone(), HermitianTarget::new(t), &bochner_initial_map())?;
        let (solved, _) = flow_to_harmonic(&m, &flow)?;
        out.push((format!("{}_solved", t.name()), solved));
    }
    Ok(out)
}

/// Chord distance from f(0) to the image of the disk boundary.
fn boundary_clearance(m: &MapState) -> Result<f64> {
    let d = &m.domain;
    let (cy, y) = m.sample(0, C64::from(0.0))?;
    Ok((0..m.len())
        .filter(|&p| d.inside[p] > 0.0 && d.inside[p] < 1.0)
        .map(|p| m.target.chord_distance(cy as usize, y, m.chart_ids[p] as usize, m.points[p]))
        .fold(f64::INFINITY, f64::min))
}

fn corpus_suite(cfg: &ExperimentConfig, suite: Suite) -> Result<SuiteOutcome> {
    let corpus = disk_corpus(cfg)?;
    let mut checks = vec![];
    let origin = DomainPoint { chart: 0, x: C64::from(0.0) };
    if suite == Suite::Isoperimetric {
        let mut table = Table::new("isoperimetric", &["map", "area", "boundary_length", "ratio", "conformality_defect"]);
        let mut bound: f64 = 0.0;
        let mut flat_ratio = f64::NAN;
        for (name, m) in &corpus {
            let row = isoperimetric_check(m, C64::from(0.0), 0.5)?;
            table.push(vec![name.clone(), num(row.area), num(row.boundary_length), num(row.ratio), num(row.conformality_defect)]);
            bound = if row.ratio.is_finite() { bound.max(row.ratio) } else { f64::NAN };
            if name == "flat_inclusion" {
                flat_ratio = row.ratio;
            }
        }
        checks.push(check("corpus size", corpus.len() as f64, ">= 20", corpus.len() >= 20));
        checks.push(check("common bound on A/L^2", bound, "finite", bound.is_finite()));
        let rel = (flat_ratio * 4.0 * PI - 1.0).abs();
        checks.push(check("flat inclusion A/L^2 relative to 1/4pi", rel, format!("< {ISOPERIMETRIC_FLAT_TOL}"), rel < ISOPERIMETRIC_FLAT_TOL));
        return Ok(SuiteOutcome { suite, checks, tables: vec![table] });
    }
    let mut table = Table::new("monotonicity", &["map", "r", "area", "ratio"]);
    let mut inf = f64::INFINITY;
    for (name, m) in &corpus {
        let reach = boundary_clearance(m)?;
        let radii: Vec<f64> = [0.15, 0.3, 0.45, 0.6, 0.75, 0.9].iter().map(|f| f * reach).collect();
        let curve = monotonicity_check(m, origin, &radii)?;
        for i in 0..radii.len() {
            table.push(vec![name.clone(), num(radii[i]), num(curve.areas[i]), num(curve.ratios[i])]);
        }
        inf = inf.min(curve.infimum);
    }
    checks.push(check("corpus size", corpus.len() as f64, ">= 20", corpus.len() >= 20));
    checks.push(check("infimum of A(r)/r^2", inf, "> 0", inf > 0.0 && inf.is_finite()));
    Ok(SuiteOutcome { suite, checks, tables: vec![table] })
}

/// Largest admissible e·r²/E(2r) on the concentrating family at one grid size.
pub fn epsilon_bound(cfg: &ExperimentConfig, n: usize, table: &mut Table) -> Result<f64> {
    let d = flat_disk(n, 1.0)?;
    let kind = match cfg.family_kind() {
        Ok(k) => k,
        Err(_) => FamilyKind::FsProductBubble,
    };
    let fam = concentrating_family(&d, HermitianTarget::new(TargetId::FsProduct), &kind, &cfg.bubble.k_values)?;
    let mut best: f64 = 0.0;
    for (m, k) in fam.iter().zip(&cfg.bubble.k_values) {
        for &r in &cfg.analysis.radii_ladder {
            // fixed lattice of centers, independent of the grid size
            let reach = 1.0 - 2.0 * r - 0.05;
            if reach < 0.0 {
                continue;
            }
            let steps = (reach / 0.1).floor() as i32;
            let centers: Vec<DomainPoint> = (-steps..=steps)
                .flat_map(|i| (-steps..=steps).map(move |j| C64::new(i as f64 * 0.1, j as f64 * 0.1)))
                .filter(|x| x.norm() <= reach)
                .map(|x| DomainPoint { chart: 0, x })
                .collect();
            let rep = epsilon_regularity_check(m, &centers, r, cfg.analysis.epsilon1_candidate)?;
            let admissible = rep.rows.iter().filter(|row| row.admissible).count();
            table.push(vec![n.to_string(), num(*k), num(r), admissible.to_string(), num(rep.c3)]);
            best = best.max(rep.c3);
        }
    }
    Ok(best)
}

fn regularity_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    let res = resolutions(cfg)?;
    let mut table = Table::new("epsilon_regularity", &["n", "k", "r", "admissible_rows", "bound"]);
    let pair = &res[res.len() - 2..];
    let coarse = epsilon_bound(cfg, pair[0], &mut table)?;
    let fine = epsilon_bound(cfg, pair[1], &mut table)?;
    let rel = (fine / coarse - 1.0).abs();
    let checks = vec![
        check(format!("bound at n={}", pair[1]), fine, "finite, positive", fine.is_finite() && fine > 0.0),
        check(
            format!("bound change n={} -> {}", pair[0], pair[1]),
            rel,
            format!("<= {EPSILON_STABILITY}"),
            rel <= EPSILON_STABILITY,
        ),
    ];
    Ok(SuiteOutcome { suite: Suite::Regularity, checks, tables: vec![table] })
}

// ---------------------------------------------------------------- output

fn unix_time() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Top-level fields of every results.json. `timestamp` is the only field
/// that varies between identical runs.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    format_version: u32,
    command: &'a str,
    timestamp: u64,
    seed: u64,
    config: &'a ExperimentConfig,
    passed: bool,
    result: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn write_results<T: Serialize>(cfg: &ExperimentConfig, out: &Path, command: &str, passed: bool, result: T) -> Result<()> {
    let env = Envelope { format_version: FORMAT_VERSION, command, timestamp: unix_time(), seed: cfg.seed, config: cfg, passed, result };
    write_json(&out.join("results.json"), &env)
}

pub fn write_tables(out: &Path, tables: &[Table]) -> Result<()> {
    let dir = out.join("tables");
    std::fs::create_dir_all(&dir)?;
    for t in tables {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name))).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(&t.header).map_err(|e| Error::Io(e.to_string()))?;
        for r in &t.rows {
            w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

#[derive(Serialize)]
struct VerifyResult<'a> {
    suite: Suite,
    checks: &'a [Check],
}

/// Run a suite and write `results.json` and its tables. Failed invariants
/// are reported in the outcome, not as an error.
pub fn cmd_verify(cfg: &ExperimentConfig, suite: Suite, out: &Path) -> Result<SuiteOutcome> {
    let outcome = run_suite(cfg, suite)?;
    prepare(out)?;
    write_tables(out, &outcome.tables)?;
    write_results(cfg, out, &format!("verify {}", suite.name()), outcome.passed(), VerifyResult { suite, checks: &outcome.checks })?;
    Ok(outcome)
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveOutcome {
    pub report: SolveReport,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub final_residual: f64,
    pub snapshot: PathBuf,
}

/// Initial map of a solve: the closed form on the configured domain, or a
/// stored snapshot.
pub fn initial_state(cfg: &ExperimentConfig) -> Result<MapState> {
    match cfg.initial_map()? {
        InitialMap::Snapshot { path } => {
            let m = snapshot::load(path)?;
            if m.target.id != cfg.target {
                return Err(Error::Config(format!(
                    "snapshot target {} differs from `target` = {}",
                    m.target.id.name(),
                    cfg.target.name()
                )));
            }
            Ok(m)
        }
        other => {
            let period = match cfg.domain {
                DomainSpec::Torus { period, .. } => period,
                _ => 2.0 * PI,
            };
            let spec = other.spec(cfg.seed, period).expect("closed-form map");
            let d = Arc::new(DomainChart::new(cfg.domain)?);
            MapState::from_spec(d, HermitianTarget::new(cfg.target), &spec)
        }
    }
}

/// Flow the initial map to a Chern-harmonic map; writes `solution.snap`,
/// `results.json` and `tables/solve_history.csv`.
pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<SolveOutcome> {
    let m = initial_state(cfg)?;
    let e0 = crate::pullback::energy(&m, None)?.total;
    let (solved, report) = flow_to_harmonic(&m, &cfg.flow)?;
    prepare(out)?;
    let snap = out.join("solution.snap");
    snapshot::save(&solved, &snap)?;
    let mut hist = Table::new("solve_history", &["step", "residual", "energy"]);
    for (i, (r, e)) in report.residual_history.iter().zip(&report.energy_history).enumerate() {
        hist.push(vec![i.to_string(), num(*r), num(*e)]);
    }
    write_tables(out, &[hist])?;
    let outcome = SolveOutcome {
        initial_energy: e0,
        final_energy: *report.energy_history.last().unwrap_or(&e0),
        final_residual: *report.residual_history.last().unwrap_or(&f64::NAN),
        report,
        snapshot: PathBuf::from("solution.snap"),
    };
    write_results(cfg, out, "solve", outcome.report.converged, &outcome)?;
    Ok(outcome)
}

#[derive(Clone, Debug, Serialize)]
pub struct BubbleOutcome {
    #[serde(skip)]
    pub tree: BubbleTree,
    pub depth: usize,
    pub node_count: usize,
    pub identity: EnergyIdentityReport,
    pub identity_tolerance: f64,
    pub identity_holds: bool,
    pub distance: DistanceBubblingReport,
    pub mass_accounting: Vec<MassRow>,
}

/// Build the concentrating family, its bubble tree and the tree checks.
pub fn run_bubble(cfg: &ExperimentConfig) -> Result<BubbleOutcome> {
    let kind = cfg.family_kind()?;
    cfg.bubble.validate()?;
    let d = Arc::new(DomainChart::new(cfg.domain)?);
    let family = concentrating_family(&d, HermitianTarget::new(cfg.target), &kind, &cfg.bubble.k_values)?;
    let tree = build_tree(&family, &cfg.bubble)?;
    let identity = energy_identity_check(&tree, &family)?;
    let distance = distance_bubbling_check(&tree);
    let mass = mass_accounting(&tree, MASS_TOL);
    Ok(BubbleOutcome {
        depth: tree.root.depth(),
        node_count: tree.node_count,
        identity_holds: identity.relative <= IDENTITY_TOL,
        identity_tolerance: IDENTITY_TOL,
        identity,
        distance,
        mass_accounting: mass,
        tree,
    })
}

fn bubble_tables(o: &BubbleOutcome) -> Vec<Table> {
    let mut nodes = Table::new(
        "bubble_nodes",
        &["label", "point_chart", "point_re", "point_im", "mass_in", "energy", "plateau_radius", "children"],
    );
    let mut renorm = Table::new(
        "renormalization",
        &["label", "k", "r_k", "x_re", "x_im", "mu_k", "omega_energy", "neck_inner", "neck_outer", "neck_energy", "center_bound", "scale_bound", "scale_separated"],
    );
    let mut ladder = Table::new("concentration", &["label", "point", "radius", "ladder_energy"]);
    for n in o.tree.root.nodes() {
        let (pc, pr, pi) = n.point.map_or((String::new(), String::new(), String::new()), |p| (p.chart.to_string(), num(p.x.re), num(p.x.im)));
        nodes.push(vec![
            n.label.clone(),
            pc,
            pr,
            pi,
            num(n.mass_in),
            num(n.energy),
            n.plateau_radius.map(num).unwrap_or_default(),
            n.children.len().to_string(),
        ]);
        for r in &n.renormalization {
            renorm.push(vec![
                n.label.clone(),
                r.k.to_string(),
                num(r.r_k),
                num(r.x_tilde.x.re),
                num(r.x_tilde.x.im),
                num(r.mu_k),
                num(r.omega_energy),
                num(r.neck_inner),
                num(r.neck_outer),
                r.neck.as_ref().map(|x| num(x.energy)).unwrap_or_default(),
                r.center_bound.to_string(),
                r.scale_bound.to_string(),
                r.scale_separated.to_string(),
            ]);
        }
        if let Some(c) = &n.concentration {
            for (i, row) in c.ladder_energy.iter().enumerate() {
                for (r, e) in c.radii.iter().zip(row) {
                    ladder.push(vec![n.label.clone(), i.to_string(), num(*r), num(*e)]);
                }
            }
        }
    }
    let mut mass = Table::new("mass_accounting", &["label", "mass_in", "energy", "children_mass", "relative_mismatch", "holds"]);
    for r in &o.mass_accounting {
        mass.push(vec![r.label.clone(), num(r.mass_in), num(r.energy), num(r.children_mass), num(r.relative_mismatch), r.holds.to_string()]);
    }
    vec![nodes, renorm, ladder, mass]
}

/// Writes `tree.json`, `results.json`, tables and `nodes/<label>.snap`.
pub fn cmd_bubble(cfg: &ExperimentConfig, out: &Path) -> Result<BubbleOutcome> {
    let o = run_bubble(cfg)?;
    prepare(out)?;
    write_json(&out.join("tree.json"), &o.tree)?;
    let nodes = out.join("nodes");
    std::fs::create_dir_all(&nodes)?;
    for n in o.tree.root.nodes() {
        snapshot::save(&n.map, &nodes.join(format!("node_{}.snap", n.label)))?;
    }
    write_tables(out, &bubble_tables(&o))?;
    write_results(cfg, out, "bubble", o.identity_holds, &o)?;
    Ok(o)
}

pub fn snapshot_info(path: &Path) -> Result<SnapshotHeader> {
    snapshot::read_header(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!("seed = 5\ntarget = \"hopf\"\ndomain.kind = \"disk\"\ndomain.n = 32\n{extra}")).unwrap()
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()), Some(s));
        }
        assert_eq!(Suite::parse("torsions"), None);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Diverged(3)), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::NotHarmonic { residual: 1.0, threshold: 0.0 }), 3);
    }

    #[test]
    fn constant_torus_solve_takes_no_steps() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg("map.kind = \"constant\"\nmap.value = [0.5, 0.0, 0.2, 0.1]\n");
        c.domain = DomainSpec::Torus { n: 16, period: 1.0 };
        let o = cmd_solve(&c, dir.path()).unwrap();
        assert!(o.report.converged);
        assert_eq!(o.report.steps_taken, 0);
        let back = snapshot::load(&dir.path().join("solution.snap")).unwrap();
        assert_eq!(back.points, initial_state(&c).unwrap().points);
        assert!(dir.path().join("tables/solve_history.csv").exists());
    }

    #[test]
    fn flat_torsion_suite_passes_at_rounding() {
        let mut c = cfg("verify.resolutions = [16, 32]\nverify.samples = 2\n");
        c.verify.samples = 2;
        let o = torsion_suite(&c).unwrap();
        let flat = o.checks.iter().find(|k| k.name.starts_with("flat_c2 max")).unwrap();
        assert!(flat.value < 1e-8, "{}", flat.value);
        assert_eq!(o.tables[0].rows.len(), 3 * 2 * 2);
    }
}
