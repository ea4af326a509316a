//! Bochner formula, the differential inequality it implies, ε-regularity,
//! isoperimetry, monotonicity and Morrey decay, measured on grid maps.

use crate::domain::{DiskMetric, DomainChart, DomainPoint, DomainSpec, Mask};
use crate::error::{Error, Result};
use crate::fit::{convergence_order, log_log_fit, LinearFit};
use crate::map::MapState;
use crate::pullback::{chart_view, max_norm, FrameCoefficients, Pullback};
use crate::target::{hnorm_sqr, CurvatureTensor, Mat2, Pt, C64, ZERO};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub radii_ladder: Vec<f64>,
    pub epsilon1_candidate: f64,
    pub epsilon2_candidate: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            radii_ladder: vec![0.05, 0.1, 0.2, 0.4],
            epsilon1_candidate: 2.0 * std::f64::consts::PI,
            epsilon2_candidate: 1.0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii_ladder.iter().any(|r| !(*r > 0.0)) || self.radii_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("analysis.radii_ladder must be positive and increasing".into()));
        }
        if !(self.epsilon1_candidate > 0.0) || !(self.epsilon2_candidate > 0.0) {
            return Err(Error::Config("analysis epsilon candidates must be positive".into()));
        }
        Ok(())
    }
}

/// Coefficient of the pulled-back curvature form Ω^i_j against φ∧φ̄.
pub fn curvature_contraction(a: &Pt, b: &Pt, r: &CurvatureTensor) -> Mat2 {
    let mut out = Mat2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            let mut s = ZERO;
            for k in 0..2 {
                for l in 0..2 {
                    s += r.hol[i][j][k][l] * a[k] * b[l] * 2.0;
                    s += r.mixed[i][j][k][l] * (a[k] * a[l].conj() - b[k] * b[l].conj());
                    s += r.anti[i][j][k][l] * b[k].conj() * a[l].conj() * 2.0;
                }
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Ω^i_j/(φ∧φ̄) at every grid point of a map.
pub fn curvature_contraction_field(map: &MapState, pb: &Pullback) -> Result<Vec<Mat2>> {
    let fc: &FrameCoefficients = &pb.fc;
    (0..map.len())
        .into_par_iter()
        .map(|q| {
            let geo = pb.geometry(map, q)?;
            Ok(curvature_contraction(&fc.a1[q], &fc.a1bar[q], &geo.curvature))
        })
        .collect()
}

/// Both sides of the Bochner identity per grid point: Δe (with Δ = 2∂∂̄/λ²)
/// and the assembled right-hand side. Points outside `mask` are zero.
pub fn bochner_sides(map: &MapState, mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    let pb = Pullback::compute(map)?;
    let d = &map.domain;
    let e = pb.energy_density();
    let lhs = bochner_lhs(map, &e, mask);
    let rhs: Vec<Result<f64>> = (0..e.len())
        .into_par_iter()
        .map(|q| {
            if !mask[q] {
                return Ok(0.0);
            }
            let geo = pb.geometry(map, q)?;
            Ok(bochner_rhs_at(&pb, q, &geo, d.curvature[q], e[q]))
        })
        .collect();
    let rhs = rhs.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok((lhs, rhs))
}

fn bochner_rhs_at(pb: &Pullback, q: usize, geo: &crate::target::LocalGeometry, k: f64, e: f64) -> f64 {
    let a = &pb.fc.a1[q];
    let b = &pb.fc.a1bar[q];
    let a11 = &pb.sf.a11[q];
    let a11b = &pb.sf.a11bar[q];
    let a1b1 = &pb.sf.a1bar1[q];
    let a1b1b = &pb.sf.a1bar1bar[q];
    let l = &geo.torsion.l;
    let l1 = &geo.torsion.l1;
    let l1b = &geo.torsion.l1bar;
    let sq = |v: &Pt| v[0].norm_sqr() + v[1].norm_sqr();
    let a_norm = sq(a11) + 2.0 * sq(a11b) + sq(a1b1b);
    let om = curvature_contraction(a, b, &geo.curvature);
    // with Ω = dω + ω∧ω the commutation identities give −Ω on the a-term
    // and +Ω̄ on the ā-term
    let mut omega_term = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            omega_term += -a[i].conj() * a[j] * om[(i, j)] + b[i] * b[j].conj() * om[(i, j)].conj();
        }
    }
    let mut y = ZERO;
    let mut z = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            for kk in 0..2 {
                let lc = l[i][j][kk].conj();
                let mut dy = ZERO;
                let mut dz = ZERO;
                for m in 0..2 {
                    dy += l1[i][j][kk][m].conj() * a[m].conj() + l1b[i][j][kk][m].conj() * b[m];
                    dz += l1[i][j][kk][m].conj() * b[m].conj() + l1b[i][j][kk][m].conj() * a[m];
                }
                let ab = a[j].conj() * b[kk].conj();
                y += a[i] * dy * ab + a[i] * lc * (a11[j].conj() * b[kk].conj() + a[j].conj() * a1b1[kk].conj());
                z += b[i] * dz * ab + b[i] * lc * (a11b[j].conj() * b[kk].conj() + a[j].conj() * a1b1b[kk].conj());
            }
        }
    }
    2.0 * a_norm + 2.0 * k * e + 2.0 * omega_term.re - 4.0 * y.re + 4.0 * z.re
}

#[derive(Clone, Debug, Serialize)]
pub struct BochnerReport {
    pub resolutions: Vec<usize>,
    pub h: Vec<f64>,
    /// max |Δe − rhs| per resolution.
    pub defects: Vec<f64>,
    /// Defect at the finest resolution.
    pub defect: f64,
    pub order: f64,
    pub order_residual: f64,
    #[serde(skip)]
    pub lhs: Vec<f64>,
    #[serde(skip)]
    pub rhs: Vec<f64>,
}

/// Bochner defect on the same map sampled at several resolutions, restricted
/// to chart-0 points with `region(x)` true.
pub fn bochner_check<F>(maps: &[MapState], region: F, threshold: f64) -> Result<BochnerReport>
where
    F: Fn(C64) -> bool,
{
    if maps.is_empty() {
        return Err(Error::EmptySuite);
    }
    let mut rep = BochnerReport {
        resolutions: vec![],
        h: vec![],
        defects: vec![],
        defect: 0.0,
        order: f64::NAN,
        order_residual: f64::NAN,
        lhs: vec![],
        rhs: vec![],
    };
    for map in maps {
        let d = &map.domain;
        let mask = region_mask(d, &region);
        let pb = Pullback::compute(map)?;
        let r = max_norm(&pb.harmonic_residual(), Some(&mask));
        if !(r <= threshold) {
            return Err(Error::NotHarmonic { residual: r, threshold });
        }
        let (lhs, rhs) = bochner_sides(map, &mask)?;
        let defect = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rep.resolutions.push(d.n);
        rep.h.push(d.h);
        rep.defects.push(defect);
        rep.defect = defect;
        rep.lhs = lhs;
        rep.rhs = rhs;
    }
    if rep.h.len() >= 2 && rep.defects.iter().all(|&v| v > 0.0) {
        let f = convergence_order(&rep.h, &rep.defects)?;
        rep.order = f.slope;
        rep.order_residual = f.residual;
    }
    Ok(rep)
}

/// Grid points of chart 0 whose coordinate satisfies `region`.
pub fn region_mask<F: Fn(C64) -> bool>(d: &DomainChart, region: F) -> Vec<bool> {
    let n2 = d.n * d.n;
    (0..d.len()).map(|p| p < n2 && d.inside[p] > 0.0 && region(d.coords[p])).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityFit {
    pub c1: f64,
    pub c2: f64,
    /// Largest energy density seen; weights C₂ against C₁ in the objective.
    pub e_max: f64,
}

const INEQUALITY_SLACK: f64 = 1e-10;

/// Least (C₁, C₂) ≥ 0 with Δe ≥ −C₁e − C₂e² at every masked point of the
/// suite. "Least" minimises C₁ + C₂·e_max, which is invariant under constant
/// rescaling of the domain metric.
pub fn fit_differential_inequality<F>(suite: &[MapState], region: F) -> Result<InequalityFit>
where
    F: Fn(C64) -> bool,
{
    if suite.is_empty() {
        return Err(Error::EmptySuite);
    }
    let mut pts: Vec<(f64, f64)> = vec![];
    for map in suite {
        let mask = region_mask(&map.domain, &region);
        let pb = Pullback::compute(map)?;
        let e = pb.energy_density();
        let lhs = bochner_lhs(map, &e, &mask);
        for q in 0..e.len() {
            if mask[q] {
                pts.push((e[q], (-lhs[q] - INEQUALITY_SLACK).max(0.0)));
            }
        }
    }
    Ok(fit_inequality_points(&pts))
}

/// Δe = 2∂∂̄e/λ² on the mask, zero elsewhere.
fn bochner_lhs(map: &MapState, e: &[f64], mask: &[bool]) -> Vec<f64> {
    let d = &map.domain;
    let dd = d.ddbar_real(e);
    (0..e.len()).map(|q| if mask[q] { 2.0 * dd[q] / (d.lambda[q] * d.lambda[q]) } else { 0.0 }).collect()
}

/// Solve the two-parameter covering problem on (e, deficit) pairs.
pub fn fit_inequality_points(pts: &[(f64, f64)]) -> InequalityFit {
    let e_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let active: Vec<(f64, f64)> = pts.iter().copied().filter(|&(e, d)| d > 0.0 && e > 0.0).collect();
    if active.is_empty() {
        return InequalityFit { c1: 0.0, c2: 0.0, e_max };
    }
    let c1_for = |c2: f64| active.iter().map(|&(e, d)| (d - c2 * e * e) / e).fold(0.0, f64::max);
    let c2_hi = active.iter().map(|&(e, d)| d / (e * e)).fold(0.0, f64::max);
    let objective = |c2: f64| c1_for(c2) + c2 * e_max;
    let (mut lo, mut hi) = (0.0, c2_hi);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if objective(m1) <= objective(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let c2 = 0.5 * (lo + hi);
    InequalityFit { c1: c1_for(c2), c2, e_max }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub scale: f64,
    pub base: InequalityFit,
    pub scaled: InequalityFit,
    /// |C̃₁·λ² − C₁| / C₁ (0 when C₁ = 0).
    pub c1_rel_err: f64,
    pub c2_rel_err: f64,
    pub holds: bool,
}

/// Refit on the same maps with the flat disk metric multiplied by `scale`
/// and compare against C̃₁ = C₁/λ², C̃₂ = C₂ within 1%.
pub fn scaling_law_check<F>(suite: &[MapState], scale: f64, region: F) -> Result<ScalingReport>
where
    F: Fn(C64) -> bool + Copy,
{
    let base = fit_differential_inequality(suite, region)?;
    let mut scaled_suite = Vec::with_capacity(suite.len());
    for map in suite {
        let DomainSpec::Disk { n, radius, metric: DiskMetric::Flat { scale: s0 } } = map.domain.spec else {
            return Err(Error::Config("scaling check needs a flat disk domain".into()));
        };
        let d = Arc::new(DomainChart::new(DomainSpec::Disk { n, radius, metric: DiskMetric::Flat { scale: s0 * scale } })?);
        scaled_suite.push(MapState::from_points(d, map.target, map.points.clone(), map.chart_ids.clone())?);
    }
    let scaled = fit_differential_inequality(&scaled_suite, region)?;
    let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { (a - b).abs() / b.abs() };
    let c1_rel_err = rel(scaled.c1 * scale * scale, base.c1);
    let c2_rel_err = rel(scaled.c2, base.c2);
    let holds = c1_rel_err <= 0.01 && c2_rel_err <= 0.01;
    Ok(ScalingReport { scale, base, scaled, c1_rel_err, c2_rel_err, holds })
}

/// Energy density of a map, from its closed form when it has one.
pub fn density(map: &MapState) -> Result<Vec<f64>> {
    match map.exact_energy_density() {
        Some(r) => r,
        None => Ok(Pullback::compute(map)?.energy_density()),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsilonRow {
    pub chart: usize,
    pub center_re: f64,
    pub center_im: f64,
    pub r: f64,
    pub sup_e: f64,
    pub energy_2r: f64,
    pub scaled_energy: f64,
    pub ratio: f64,
    /// E(2r) within the ε₁ candidate.
    pub admissible: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsilonReport {
    pub rows: Vec<EpsilonRow>,
    /// Largest ratio over admissible rows.
    pub c3: f64,
}

/// Largest density on the circle |x − c| = r where geodesic circles are
/// coordinate circles (torus, flat disk); 0 elsewhere. Uses the closed form
/// when the map has one and interpolates the grid density otherwise.
fn circle_sup(map: &MapState, e: &[f64], c: DomainPoint, r: f64) -> f64 {
    let d = &map.domain;
    let flat = match d.spec {
        DomainSpec::Torus { .. } => true,
        DomainSpec::Disk { metric, .. } => matches!(metric, DiskMetric::Flat { .. }),
        DomainSpec::SpherePair { .. } => false,
    };
    if !flat {
        return 0.0;
    }
    let samples = ((16.0 * std::f64::consts::PI * r / d.h).ceil() as usize).max(64);
    let field: Vec<C64> = if map.spec.is_none() { e.iter().map(|&v| C64::from(v)).collect() } else { vec![] };
    (0..samples)
        .filter_map(|i| {
            let x = c.x + C64::from_polar(r, 2.0 * std::f64::consts::PI * i as f64 / samples as f64);
            match &map.spec {
                Some(spec) => spec.energy_density(&map.target, c.chart, x, d.lambda_at(x)).ok(),
                None => d.interpolate(&field, c.chart, x).map(|v| v.re),
            }
        })
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
}

/// sup_{D_r} e against E(2r)/r² about each center; rows with E(2r) = 0 are
/// skipped.
pub fn epsilon_regularity_check(map: &MapState, centers: &[DomainPoint], r: f64, epsilon1: f64) -> Result<EpsilonReport> {
    let d = &map.domain;
    let e = density(map)?;
    let mut rows = vec![];
    for c in centers {
        let m2 = d.geodesic_disk_mask(*c, 2.0 * r)?;
        let m1 = d.geodesic_disk_mask(*c, r)?;
        let e2 = d.integrate(&e, Some(&m2))?;
        if !(e2 > 0.0) {
            continue;
        }
        let sup = (0..e.len()).filter(|&p| m1[p] >= 0.5 && d.inside[p] > 0.0).map(|p| e[p]).fold(0.0, f64::max);
        let sup = sup.max(circle_sup(map, &e, *c, r));
        let scaled = e2 / (r * r);
        rows.push(EpsilonRow {
            chart: c.chart,
            center_re: c.x.re,
            center_im: c.x.im,
            r,
            sup_e: sup,
            energy_2r: e2,
            scaled_energy: scaled,
            ratio: sup / scaled,
            admissible: e2 <= epsilon1,
        });
    }
    let c3 = rows.iter().filter(|r| r.admissible).map(|r| r.ratio).fold(0.0, f64::max);
    Ok(EpsilonReport { rows, c3 })
}

#[derive(Clone, Debug, Serialize)]
pub struct IsoperimetricRow {
    pub area: f64,
    pub boundary_length: f64,
    pub ratio: f64,
    pub conformality_defect: f64,
    /// Conformality defect above 1e-2 (reported, not fatal).
    pub nonconformal: bool,
    pub degenerate: bool,
}

pub const CONFORMAL_TOL: f64 = 1e-2;

fn circle_mask(d: &DomainChart, center: C64, rho: f64) -> Mask {
    let n2 = d.n * d.n;
    (0..d.len())
        .map(|p| if p < n2 { (0.5 + (rho - (d.coords[p] - center).norm()) / d.h).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

/// Image area of the coordinate disk |x − center| < ρ (chart 0) and the image
/// length of its boundary circle.
pub fn isoperimetric_check(map: &MapState, center: C64, rho: f64) -> Result<IsoperimetricRow> {
    let d = &map.domain;
    let pb = Pullback::compute(map)?;
    let mask = circle_mask(d, center, rho);
    let area = d.integrate(&pb.area_density(), Some(&mask))?;
    let defect = pb.conformality_defect(Some(&mask));
    let (c, _) = map.sample(0, center)?;
    let v = chart_view(map, c, &d.lambda, &d.dlog_lambda)?;
    let comp = |f: &Vec<Pt>, m: usize| -> Vec<C64> { f.iter().map(|x| x[m]).collect() };
    let fields = [comp(&v.z, 0), comp(&v.z, 1), comp(&v.alpha, 0), comp(&v.alpha, 1), comp(&v.beta, 0), comp(&v.beta, 1)];
    let lam: Vec<C64> = d.lambda.iter().map(|&l| C64::from(l)).collect();
    let target = map.target;
    let speed = |x: C64, dx: C64| -> f64 {
        let mut s = [ZERO; 6];
        for (k, f) in fields.iter().enumerate() {
            s[k] = d.interpolate(f, 0, x).unwrap_or(C64::new(f64::NAN, f64::NAN));
        }
        let l = d.interpolate(&lam, 0, x).map(|v| v.re).unwrap_or(f64::NAN);
        let z = [s[0], s[1]];
        let vel = [(s[2] * dx + s[4] * dx.conj()) * l, (s[3] * dx + s[5] * dx.conj()) * l];
        match target.metric(c as usize, z) {
            Ok(h) => hnorm_sqr(&h, &vel).max(0.0).sqrt(),
            Err(_) => f64::NAN,
        }
    };
    let samples = ((2.0 * std::f64::consts::PI * rho / d.h) as usize * 4).max(256);
    let len = d.boundary_length(&crate::domain::Loop::Circle { center, radius: rho, samples }, speed)?;
    if !len.is_finite() {
        return Err(Error::ChartTear(0));
    }
    let degenerate = len == 0.0 || area == 0.0;
    let ratio = if degenerate { f64::NAN } else { area / (len * len) };
    Ok(IsoperimetricRow {
        area,
        boundary_length: len,
        ratio,
        conformality_defect: defect,
        nonconformal: defect > CONFORMAL_TOL,
        degenerate,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityCurve {
    pub radii: Vec<f64>,
    pub areas: Vec<f64>,
    pub ratios: Vec<f64>,
    pub infimum: f64,
    pub positive: bool,
}

/// A(f(Σ) ∩ B_r(y))/r² with y = f(center) and extrinsic balls measured by
/// target chords.
pub fn monotonicity_check(map: &MapState, center: DomainPoint, radii: &[f64]) -> Result<MonotonicityCurve> {
    let d = &map.domain;
    let (cy, y) = map.sample(center.chart, center.x)?;
    let pb = Pullback::compute(map)?;
    let area = pb.area_density();
    let dist: Vec<f64> = (0..map.len())
        .into_par_iter()
        .map(|p| map.target.chord_distance(cy as usize, y, map.chart_ids[p] as usize, map.points[p]))
        .collect();
    let boundary = matches!(d.spec, DomainSpec::Disk { .. });
    let mut areas = vec![];
    let mut ratios = vec![];
    for &r in radii {
        if boundary && (0..map.len()).any(|p| d.inside[p] < 1.0 && d.inside[p] > 0.0 && dist[p] < r) {
            return Err(Error::BoundaryIntersected);
        }
        let mask: Mask = dist.iter().map(|&s| if s < r { 1.0 } else { 0.0 }).collect();
        let a = d.integrate(&area, Some(&mask)).unwrap_or(0.0);
        areas.push(a);
        ratios.push(a / (r * r));
    }
    let infimum = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MonotonicityCurve { radii: radii.to_vec(), areas, ratios, infimum, positive: infimum > 0.0 })
}

#[derive(Clone, Debug, Serialize)]
pub struct MorreyFit {
    pub radii: Vec<f64>,
    pub areas: Vec<f64>,
    pub fit: Option<LinearFit>,
    /// Fitted exponent α (NaN when degenerate).
    pub alpha: f64,
    pub degenerate: bool,
    pub positive: bool,
}

/// Fit log A(f(D_r(center))) against log r.
pub fn morrey_decay_fit(map: &MapState, center: DomainPoint, radii: &[f64]) -> Result<MorreyFit> {
    if radii.len() < 4 {
        return Err(Error::InsufficientRadii { need: 4, got: radii.len() });
    }
    let d = &map.domain;
    let area = Pullback::compute(map)?.area_density();
    let mut areas = vec![];
    for &r in radii {
        let m = d.geodesic_disk_mask(center, r)?;
        areas.push(d.integrate(&area, Some(&m))?);
    }
    let scale = areas.iter().copied().fold(0.0, f64::max);
    if !(scale > 1e-14) {
        return Ok(MorreyFit { radii: radii.to_vec(), areas, fit: None, alpha: f64::NAN, degenerate: true, positive: false });
    }
    let fit = log_log_fit(radii, &areas)?;
    Ok(MorreyFit {
        radii: radii.to_vec(),
        areas,
        fit: Some(fit),
        alpha: fit.slope,
        degenerate: false,
        positive: fit.slope > 0.0,
    })
}
