//! Energy concentration in map families, renormalization at bubble points,
//! neck diagnostics and the bubble tree.

use crate::domain::{stencil_derivative, DomainChart, DomainPoint, DomainSpec};
use crate::error::{Error, Result};
use crate::fit::{log_log_fit, power_corrected_limit, LimitFit};
use crate::map::{place, CompJet, MapSpec, MapState};
use crate::regularity::density;
use crate::target::{hnorm_sqr, HermitianTarget, Pt, TargetId, C64, I, ZERO};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Upper bound on density maxima examined per detection pass.
const MAX_CANDIDATES: usize = 64;
/// Coordinate radius of the neighbourhood U of a point on a sphere chart.
const SPHERE_REACH: f64 = 4.0;
const RING_SAMPLES: usize = 256;
/// Energy tolerance per cell between the 2×2 and 4×4 midpoint rules.
const CELL_TOL: f64 = 1e-8;
const CELL_DEPTH: usize = 12;
const RESOLVED_REL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleConfig {
    pub k_values: Vec<f64>,
    pub c0: f64,
    pub epsilon1: f64,
    /// Geodesic radii for masses and excisions, ascending.
    pub radii_ladder: Vec<f64>,
    /// Resolution of the sphere grids carrying renormalized maps.
    pub sphere_n: usize,
    /// Log-polar cells per direction on neck annuli.
    pub neck_cells: usize,
}

impl Default for BubbleConfig {
    fn default() -> Self {
        let epsilon1 = 2.0 * PI;
        BubbleConfig {
            k_values: vec![8.0, 16.0, 32.0, 64.0],
            c0: 0.25 * epsilon1,
            epsilon1,
            radii_ladder: vec![0.1, 0.2, 0.3, 0.4],
            sphere_n: 256,
            neck_cells: 64,
        }
    }
}

impl BubbleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon1 > 0.0) {
            return Err(Error::Config("bubble.epsilon1_candidate must be positive".into()));
        }
        if !(self.c0 > 0.0 && self.c0 < 0.5 * self.epsilon1) {
            return Err(Error::Config(format!(
                "bubble.c0 = {} must lie in (0, epsilon1/2 = {})",
                self.c0,
                0.5 * self.epsilon1
            )));
        }
        check_ladder(&self.radii_ladder)?;
        if self.k_values.len() < 3 || self.k_values.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::Config("bubble.k_values needs at least 3 positive entries".into()));
        }
        if self.sphere_n < 8 {
            return Err(Error::ResolutionTooSmall(self.sphere_n));
        }
        if self.neck_cells < 8 {
            return Err(Error::Config("bubble.neck_cells must be at least 8".into()));
        }
        Ok(())
    }
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 3 {
        return Err(Error::InsufficientRadii { need: 3, got: ladder.len() });
    }
    if ladder.iter().any(|r| !(*r > 0.0)) || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("radii ladder must be positive and ascending".into()));
    }
    Ok(())
}

/// The measure e dA of one map, possibly restricted by a weight.
#[derive(Clone, Debug)]
pub struct EnergyMeasure {
    pub domain: Arc<DomainChart>,
    /// Energy density times the weight.
    pub density: Vec<f64>,
    /// e dA per grid point.
    pub mass: Vec<f64>,
}

impl EnergyMeasure {
    pub fn from_density(domain: Arc<DomainChart>, e: &[f64], weight: Option<&[f64]>) -> EnergyMeasure {
        let mut dens = Vec::with_capacity(e.len());
        let mut mass = Vec::with_capacity(e.len());
        for p in 0..domain.len() {
            let w = domain.inside[p] * weight.map_or(1.0, |w| w[p]);
            if w == 0.0 {
                dens.push(0.0);
                mass.push(0.0);
            } else {
                dens.push(w * e[p]);
                mass.push(w * e[p] * domain.quad[p] * domain.lambda[p] * domain.lambda[p]);
            }
        }
        EnergyMeasure { domain, density: dens, mass }
    }

    /// For closed-form maps, cells the grid does not resolve get the
    /// adaptively integrated cell average of e·λ², so bubbles narrower than a
    /// cell keep their full energy.
    pub fn of_map(map: &MapState, weight: Option<&[f64]>) -> Result<EnergyMeasure> {
        let e = density(map)?;
        let mut out = EnergyMeasure::from_density(map.domain.clone(), &e, weight);
        if let Some(spec) = &map.spec {
            let d = &map.domain;
            let n2 = d.n * d.n;
            let cell = (0..d.len())
                .into_par_iter()
                .map(|p| {
                    if out.mass[p] == 0.0 {
                        return Ok(0.0);
                    }
                    let f = |x: C64| spec.energy_density(&map.target, p / n2, x, 1.0);
                    let x = d.coords[p];
                    if cell_resolved(&f, x, d.h)? {
                        return Ok(f64::NAN);
                    }
                    // minus the h²/24 Δf bias of a cell mean against a point value,
                    // so sums over mixed regions stay consistent with the grid rule
                    let mut lap = -4.0 * f(x)?;
                    for s in [C64::new(d.h, 0.0), C64::new(-d.h, 0.0), C64::new(0.0, d.h), C64::new(0.0, -d.h)] {
                        lap += f(x + s)?;
                    }
                    Ok(cell_average(&f, x, d.h, 0)? - lap / 24.0)
                })
                .collect::<Result<Vec<f64>>>()?;
            for p in 0..d.len() {
                // resolved cells keep the grid quadrature
                if out.mass[p] != 0.0 && !cell[p].is_nan() {
                    out.mass[p] = d.inside[p] * weight.map_or(1.0, |w| w[p]) * d.quad[p] * cell[p];
                }
            }
        }
        Ok(out)
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn weighted(&self, w: &[f64]) -> f64 {
        self.mass.iter().zip(w).map(|(m, w)| m * w).sum()
    }

    /// Energy in the coordinate disk B_r(center).
    pub fn in_disk(&self, center: DomainPoint, r: f64) -> f64 {
        let rad = Radial::new(&self.domain, center);
        (0..self.mass.len()).map(|p| self.mass[p] * rad.weight(p, r)).sum()
    }
}

/// Midpoint rule on an m×m subgrid of the square cell.
fn midpoint_rule<F: Fn(C64) -> Result<f64>>(f: &F, center: C64, size: f64, m: usize) -> Result<f64> {
    let mut s = 0.0;
    for a in 0..m {
        for b in 0..m {
            let off = C64::new(a as f64 + 0.5, b as f64 + 0.5) / m as f64 - C64::new(0.5, 0.5);
            s += f(center + off * size)?;
        }
    }
    Ok(s / (m * m) as f64)
}

/// Whether the 2×2 and 4×4 midpoint rules agree to a relative `RESOLVED_REL`.
fn cell_resolved<F: Fn(C64) -> Result<f64>>(f: &F, center: C64, size: f64) -> Result<bool> {
    let fine = midpoint_rule(f, center, size, 4)?;
    let gap = fine - midpoint_rule(f, center, size, 2)?;
    Ok(gap.abs() <= RESOLVED_REL * fine.abs())
}

/// Mean of f over a square cell: Richardson-extrapolated midpoint rules,
/// bisecting where the 2×2 and 4×4 rules disagree.
fn cell_average<F: Fn(C64) -> Result<f64>>(f: &F, center: C64, size: f64, depth: usize) -> Result<f64> {
    let coarse = midpoint_rule(f, center, size, 2)?;
    let fine = midpoint_rule(f, center, size, 4)?;
    let gap = fine - coarse;
    if !gap.is_finite() {
        return Ok(f64::NAN);
    }
    if gap.abs() * size * size <= CELL_TOL || depth >= CELL_DEPTH {
        return Ok(fine + gap / 3.0);
    }
    let q = 0.25 * size;
    let mut s = 0.0;
    for off in [C64::new(-q, -q), C64::new(q, -q), C64::new(-q, q), C64::new(q, q)] {
        s += cell_average(f, center + off, 0.5 * size, depth + 1)?;
    }
    Ok(0.25 * s)
}

/// Coordinate distances from a center with the local softening width.
struct Radial {
    dist: Vec<f64>,
    soft: Vec<f64>,
    offset: Vec<C64>,
}

impl Radial {
    fn new(d: &DomainChart, center: DomainPoint) -> Radial {
        let n2 = d.n * d.n;
        let data: Vec<(f64, f64, C64)> = (0..d.len())
            .into_par_iter()
            .map(|p| {
                let (y, jac) = d.coordinate_in(DomainPoint { chart: p / n2, x: d.coords[p] }, center.chart);
                if !y.is_finite() {
                    return (f64::INFINITY, 1.0, ZERO);
                }
                let mut off = y - center.x;
                if let DomainSpec::Torus { period, .. } = d.spec {
                    let wrap = |v: f64| v - period * (v / period).round();
                    off = C64::new(wrap(off.re), wrap(off.im));
                }
                (off.norm(), d.h * jac, off)
            })
            .collect();
        let mut dist = Vec::with_capacity(data.len());
        let mut soft = Vec::with_capacity(data.len());
        let mut offset = Vec::with_capacity(data.len());
        for (a, b, c) in data {
            dist.push(a);
            soft.push(b);
            offset.push(c);
        }
        Radial { dist, soft, offset }
    }

    fn weight(&self, p: usize, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        (0.5 + (r - self.dist[p]) / self.soft[p]).clamp(0.0, 1.0)
    }
}

/// Soft geodesic disk weights from precomputed distances.
fn geodesic_weights(d: &DomainChart, dist: &[f64], r: f64) -> Vec<f64> {
    dist.iter().zip(&d.lambda).map(|(&g, &l)| (0.5 + (r - g) / (l * d.h)).clamp(0.0, 1.0)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationReport {
    pub bubble_points: Vec<DomainPoint>,
    pub masses: Vec<f64>,
    pub mass_fits: Vec<LimitFit>,
    /// Density of the weak limit at each point, from the r² term of the mass fit.
    pub background_density: Vec<f64>,
    pub radii: Vec<f64>,
    /// Per point: max over the family tail of the energy in D_r(p) for each radius.
    pub ladder_energy: Vec<Vec<f64>>,
    /// Pairs of detections closer than two grid cells; the second was merged into the first.
    pub ambiguous_points: Vec<(DomainPoint, DomainPoint)>,
    pub tail: usize,
}

impl ConcentrationReport {
    fn empty(radii: &[f64], tail: usize) -> ConcentrationReport {
        ConcentrationReport {
            bubble_points: vec![],
            masses: vec![],
            mass_fits: vec![],
            background_density: vec![],
            radii: radii.to_vec(),
            ladder_energy: vec![],
            ambiguous_points: vec![],
            tail,
        }
    }
}

pub fn detect_concentration(family: &[MapState], radii_ladder: &[f64], epsilon1: f64) -> Result<ConcentrationReport> {
    if family.len() < 3 {
        return Err(Error::NoFamily);
    }
    let measures = family
        .iter()
        .map(|m| EnergyMeasure::of_map(m, None))
        .collect::<Result<Vec<_>>>()?;
    detect_in(&measures, radii_ladder, epsilon1)
}

fn tail_len(n: usize) -> usize {
    n.div_ceil(2).max(2).min(n)
}

/// Non-strict local maxima of the density over the 8-neighbourhood, on owned
/// grid points, highest first.
fn density_maxima(m: &EnergyMeasure) -> Vec<usize> {
    let d = &m.domain;
    let n = d.n as isize;
    let n2 = d.n * d.n;
    let periodic = d.is_periodic();
    let mut cands: Vec<usize> = (0..d.len())
        .into_par_iter()
        .filter(|&p| {
            let e = m.density[p];
            if !(e > 0.0) || !d.interior[p] {
                return false;
            }
            let base = (p / n2) * n2;
            let (ix, iy) = (((p % n2) % d.n) as isize, ((p % n2) / d.n) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (mut jx, mut jy) = (ix + dx, iy + dy);
                    if periodic {
                        jx = jx.rem_euclid(n);
                        jy = jy.rem_euclid(n);
                    } else if jx < 0 || jy < 0 || jx >= n || jy >= n {
                        continue;
                    }
                    if m.density[base + (jy * n + jx) as usize] > e {
                        return false;
                    }
                }
            }
            true
        })
        .collect();
    cands.sort_by(|&a, &b| m.density[b].total_cmp(&m.density[a]).then(a.cmp(&b)));
    cands
}

fn detect_in(measures: &[EnergyMeasure], radii: &[f64], epsilon1: f64) -> Result<ConcentrationReport> {
    if measures.len() < 3 {
        return Err(Error::NoFamily);
    }
    check_ladder(radii)?;
    let tail = tail_len(measures.len());
    let tail_ms = &measures[measures.len() - tail..];
    let last = &measures[measures.len() - 1];
    let d = &last.domain;
    let cell = |p: DomainPoint| 2.0 * d.h * d.lambda_at(p.x);
    let r_min = radii[0];

    // candidate maxima, thinned to one per two cells
    let mut picked: Vec<DomainPoint> = Vec::new();
    for p in density_maxima(last) {
        if picked.len() >= MAX_CANDIDATES {
            break;
        }
        let pt = d.point(p);
        if picked.iter().all(|q| d.distance(*q, pt) >= cell(*q)) {
            picked.push(pt);
        }
    }

    // accepted points with their geodesic distance fields
    let mut accepted: Vec<(DomainPoint, Vec<f64>, f64)> = Vec::new();
    let mut ambiguous = Vec::new();
    for pt in picked {
        if r_min > d.radius_bound(pt) {
            continue;
        }
        let dist = d.geodesic_distances(pt);
        let w = geodesic_weights(d, &dist, r_min);
        let energies: Vec<f64> = tail_ms.iter().map(|m| m.weighted(&w)).collect();
        if !energies.iter().all(|&e| e > epsilon1) {
            continue;
        }
        let e_last = *energies.last().unwrap();
        if let Some(k) = accepted.iter().position(|(q, _, _)| d.distance(*q, pt) < cell(*q)) {
            if e_last > accepted[k].2 {
                ambiguous.push((pt, accepted[k].0));
                accepted[k] = (pt, dist, e_last);
            } else {
                ambiguous.push((accepted[k].0, pt));
            }
            continue;
        }
        accepted.push((pt, dist, e_last));
    }

    let mut rep = ConcentrationReport::empty(radii, tail);
    rep.ambiguous_points = ambiguous;
    for (pt, dist, _) in accepted {
        let bound = d.radius_bound(pt);
        if radii.iter().any(|&r| r > bound) {
            return Err(Error::RadiusTooLarge { r: radii[radii.len() - 1], bound });
        }
        let ladder: Vec<f64> = radii
            .iter()
            .map(|&r| {
                let w = geodesic_weights(d, &dist, r);
                tail_ms.iter().map(|m| m.weighted(&w)).fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let fit = power_corrected_limit(radii, &ladder)?;
        if !(fit.limit > epsilon1) {
            continue;
        }
        rep.bubble_points.push(pt);
        rep.masses.push(fit.limit);
        rep.background_density.push((fit.a / PI).max(0.0));
        rep.mass_fits.push(fit);
        rep.ladder_energy.push(ladder);
    }
    Ok(rep)
}

/// Energy-weighted mean coordinate over the coordinate disk B_r(center).
pub fn center_of_mass(measure: &EnergyMeasure, center: DomainPoint, r: f64) -> Result<DomainPoint> {
    let rad = Radial::new(&measure.domain, center);
    let mut w_sum = 0.0;
    let mut x_sum = ZERO;
    for p in 0..measure.mass.len() {
        let w = measure.mass[p] * rad.weight(p, r);
        if w != 0.0 {
            w_sum += w;
            x_sum += rad.offset[p] * w;
        }
    }
    if !(w_sum > 0.0) {
        return Err(Error::ZeroEnergyRegion);
    }
    Ok(DomainPoint { chart: center.chart, x: center.x + x_sum / w_sum })
}

/// Largest μ with ∫_{B_{2r}(center) ∖ B_μ(x̃)} e dA ≥ C₀.
pub fn scale_mu(measure: &EnergyMeasure, x_tilde: DomainPoint, center: DomainPoint, r: f64, c0: f64) -> Result<f64> {
    let outer = Radial::new(&measure.domain, center);
    let inner = Radial::new(&measure.domain, x_tilde);
    let ow: Vec<f64> = (0..measure.mass.len()).map(|p| outer.weight(p, 2.0 * r)).collect();
    let annulus = |mu: f64| -> f64 {
        (0..measure.mass.len())
            .map(|p| {
                if ow[p] == 0.0 {
                    0.0
                } else {
                    measure.mass[p] * (ow[p] - inner.weight(p, mu)).max(0.0)
                }
            })
            .sum()
    };
    let e0 = annulus(0.0);
    if e0 < c0 {
        return Err(Error::EnergyBelowC0 { energy: e0, c0 });
    }
    let mut lo = 0.0;
    let mut hi = 2.0 * r + (x_tilde.x - center.x).norm() + 4.0 * measure.domain.h;
    if annulus(hi) >= c0 {
        return Ok(hi);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if annulus(mid) >= c0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Source map value at a coordinate of `chart`, exact for closed forms and
/// interpolated otherwise. Sphere coordinates far out switch charts.
struct Sampler<'a> {
    map: &'a MapState,
    spec: Option<MapSpec>,
    views: Vec<Option<[Vec<C64>; 2]>>,
}

impl<'a> Sampler<'a> {
    fn new(map: &'a MapState, chart: usize) -> Sampler<'a> {
        match map.spec.as_ref().and_then(|s| s.in_chart(chart).ok()) {
            Some(spec) => Sampler { map, spec: Some(spec), views: vec![] },
            None => Sampler::grid(map),
        }
    }

    /// Interpolating sampler that ignores any closed form.
    fn grid(map: &'a MapState) -> Sampler<'a> {
        let present = map.charts_present();
        let views = (0..4u8)
            .map(|c| {
                present.contains(&c).then(|| {
                    let v = map.view(c);
                    [v.iter().map(|z| z[0]).collect(), v.iter().map(|z| z[1]).collect()]
                })
            })
            .collect();
        Sampler { map, spec: None, views }
    }

    fn jets(&self, x: C64) -> Option<Result<[CompJet; 2]>> {
        self.spec.as_ref().map(|s| s.jet(0, x))
    }

    /// (target chart, value) at coordinate x of `chart`.
    fn value(&self, chart: usize, x: C64) -> Result<(u8, Pt)> {
        if let Some(j) = self.jets(x) {
            return place(&self.map.target, &j?);
        }
        let d = &self.map.domain;
        let (c, y) = match d.spec {
            DomainSpec::SpherePair { .. } if x.norm() > 1.5 => (1 - chart, 1.0 / x),
            _ => (chart, x),
        };
        let n = d.n;
        let u = ((y.re - d.origin()) / d.h).round();
        let v = ((y.im - d.origin()) / d.h).round();
        let (ix, iy) = if d.is_periodic() {
            ((u as i64).rem_euclid(n as i64) as usize, (v as i64).rem_euclid(n as i64) as usize)
        } else {
            if !(u >= 0.0 && v >= 0.0 && u <= (n - 1) as f64 && v <= (n - 1) as f64) {
                return Err(Error::ResampleOutOfDomain);
            }
            (u as usize, v as usize)
        };
        let near = self.map.chart_ids[c * n * n + iy * n + ix] as usize;
        // the nearest point's chart first; others when the stencil meets a pole
        for tc in std::iter::once(near).chain((0..self.views.len()).filter(|&t| t != near)) {
            let Some(view) = self.views[tc].as_ref() else { continue };
            let a = d.interpolate(&view[0], c, y);
            let b = d.interpolate(&view[1], c, y);
            if let (Some(a), Some(b)) = (a, b) {
                if a.is_finite() && b.is_finite() {
                    let (nc, nz) = self.map.target.assign_chart(tc, [a, b]);
                    return Ok((nc as u8, nz));
                }
            }
        }
        Err(Error::ResampleOutOfDomain)
    }
}

/// Renormalized map w ↦ f(x̃ + μ w) on a sphere grid (w the chart-0
/// coordinate, w = ∞ the south pole). Sampled maps are held constant along
/// rays beyond coordinate distance `reach` from x̃.
pub fn renormalize(
    map: &MapState,
    x_tilde: DomainPoint,
    mu: f64,
    reach: f64,
    sphere: &Arc<DomainChart>,
) -> Result<MapState> {
    if !(mu > 0.0) {
        return Err(Error::Config("renormalization scale must be positive".into()));
    }
    if !matches!(sphere.spec, DomainSpec::SpherePair { .. }) {
        return Err(Error::Config("renormalized maps live on a sphere-pair domain".into()));
    }
    if let Some(spec) = &map.spec {
        let composed = spec.in_chart(x_tilde.chart).and_then(|s| s.compose_affine(C64::from(mu), x_tilde.x));
        if let Ok(s) = composed {
            return MapState::from_spec(sphere.clone(), map.target, &s);
        }
    }
    let sampler = Sampler::grid(map);
    let n2 = sphere.n * sphere.n;
    let vals: Vec<Result<(u8, Pt)>> = (0..sphere.len())
        .into_par_iter()
        .map(|p| {
            let y = sphere.coords[p];
            let w = if p < n2 {
                y
            } else if y == ZERO {
                C64::new(f64::INFINITY, 0.0)
            } else {
                1.0 / y
            };
            let step = if w.is_finite() { w * mu } else { C64::from(reach) };
            let step = if step.norm() > reach { step * (reach / step.norm()) } else { step };
            sampler.value(x_tilde.chart, x_tilde.x + step)
        })
        .collect();
    let mut points = Vec::with_capacity(vals.len());
    let mut charts = Vec::with_capacity(vals.len());
    for v in vals {
        let (c, z) = v?;
        points.push(z);
        charts.push(c);
    }
    let mut out = MapState::from_points(sphere.clone(), map.target, points, charts)?;
    out.reassign_charts();
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct NeckDiagnostics {
    pub inner: f64,
    pub outer: f64,
    /// T = log(outer / inner)
    pub t_max: f64,
    pub energy: f64,
    pub loop_t: Vec<f64>,
    pub loop_lengths: Vec<f64>,
    pub diameter: f64,
}

/// Speed |d/ds f(x(s))| in the target metric for domain velocity ẋ.
fn exact_speed(target: &HermitianTarget, j: &[CompJet; 2], xdot: C64) -> Result<f64> {
    let mut num = [ZERO; 2];
    let mut val = [ZERO; 2];
    let mut fs = 0.0;
    for m in 0..2 {
        let nd = j[m].n_x * xdot + j[m].n_xb * xdot.conj();
        let dd = j[m].d_x * xdot + j[m].d_xb * xdot.conj();
        let w = nd * j[m].d - j[m].n * dd;
        if target.id == TargetId::FsProduct {
            let s = j[m].n.norm_sqr() + j[m].d.norm_sqr();
            fs += 4.0 * w.norm_sqr() / (s * s);
        } else {
            num[m] = w / (j[m].d * j[m].d);
            val[m] = j[m].value();
        }
    }
    if target.id == TargetId::FsProduct {
        return Ok(fs.sqrt());
    }
    let h = target.metric(0, val)?;
    Ok(hnorm_sqr(&h, &num).max(0.0).sqrt())
}

/// Periodic fourth-order derivative.
fn periodic_derivative(f: &[C64], h: f64) -> Vec<C64> {
    let n = f.len();
    (0..n)
        .map(|j| {
            let at = |k: isize| f[(j as isize + k).rem_euclid(n as isize) as usize];
            ((at(1) - at(-1)) * 8.0 - (at(2) - at(-2))) / (12.0 * h)
        })
        .collect()
}

/// Energy, loop lengths and image diameter of the map on the annulus
/// inner < |x − center| < outer, resampled on a log-polar grid.
pub fn neck_diagnostics(map: &MapState, center: DomainPoint, inner: f64, outer: f64, cells: usize) -> Result<NeckDiagnostics> {
    if !(inner > 0.0 && outer > inner) || cells < 8 {
        return Err(Error::AnnulusTooThin { inner, outer });
    }
    let d = &map.domain;
    let sampler = Sampler::new(map, center.chart);
    if sampler.spec.is_none() && outer - inner < 8.0 * d.h {
        return Err(Error::AnnulusTooThin { inner, outer });
    }
    let t_max = (outer / inner).ln();
    let nt = cells;
    let nth = cells;
    let dt = t_max / (nt - 1) as f64;
    let dth = 2.0 * PI / nth as f64;
    let pos = |a: usize, b: usize| {
        let rho = outer * (-(a as f64) * dt).exp();
        (rho, C64::from_polar(rho, b as f64 * dth))
    };
    let tw = |a: usize| if a == 0 || a == nt - 1 { 0.5 } else { 1.0 };
    let target = map.target;

    let mut values: Vec<(u8, Pt)> = Vec::with_capacity(nt * nth);
    let mut energy = 0.0;
    let mut lengths = vec![0.0; nt];
    if let Some(spec) = &sampler.spec {
        let rows: Vec<Result<(Vec<(u8, Pt)>, f64, f64)>> = (0..nt)
            .into_par_iter()
            .map(|a| {
                let mut vals = Vec::with_capacity(nth);
                let mut e_row = 0.0;
                let mut len = 0.0;
                for b in 0..nth {
                    let (rho, off) = pos(a, b);
                    let x = center.x + off;
                    let j = spec.jet(0, x)?;
                    vals.push(place(&target, &j)?);
                    let lam = d.lambda_at(x);
                    e_row += spec.energy_density(&target, 0, x, lam)? * lam * lam * rho * rho;
                    len += exact_speed(&target, &j, I * off)?;
                }
                Ok((vals, e_row * dt * dth * tw(a), len * dth))
            })
            .collect();
        for (a, r) in rows.into_iter().enumerate() {
            let (v, e, l) = r?;
            values.extend(v);
            energy += e;
            lengths[a] = l;
        }
    } else {
        for a in 0..nt {
            for b in 0..nth {
                let (_, off) = pos(a, b);
                values.push(sampler.value(center.chart, center.x + off)?);
            }
        }
        // each sample's neighbours re-expressed in its own chart
        let comp = |c: u8, idx: usize, m: usize| target.convert_unchecked(values[idx].0 as usize, c as usize, values[idx].1)[m];
        let mut e_sum = 0.0;
        for a in 0..nt {
            let mut len = 0.0;
            for b in 0..nth {
                let (c, z) = values[a * nth + b];
                let mut fth = [ZERO; 2];
                let mut ft = [ZERO; 2];
                for m in 0..2 {
                    let ring: Vec<C64> = (0..nth).map(|bb| comp(c, a * nth + bb, m)).collect();
                    fth[m] = periodic_derivative(&ring, dth)[b];
                    let ray: Vec<C64> = (0..nt).map(|aa| comp(c, aa * nth + b, m)).collect();
                    ft[m] = stencil_derivative(&ray, dt)[a];
                }
                let h = target.metric(c as usize, z)?;
                let sth = hnorm_sqr(&h, &fth).max(0.0);
                let st = hnorm_sqr(&h, &ft).max(0.0);
                len += sth.sqrt();
                e_sum += 0.5 * (sth + st) * tw(a);
            }
            lengths[a] = len * dth;
        }
        energy = e_sum * dt * dth;
    }

    let diameter = (0..values.len())
        .into_par_iter()
        .map(|i| {
            let (ca, za) = values[i];
            values[i + 1..]
                .iter()
                .map(|&(cb, zb)| target.chord_distance(ca as usize, za, cb as usize, zb))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(NeckDiagnostics {
        inner,
        outer,
        t_max,
        energy,
        loop_t: (0..nt).map(|a| a as f64 * dt).collect(),
        loop_lengths: lengths,
        diameter,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TargetValue {
    pub chart: u8,
    pub z: Pt,
}

/// Mean of target points, taken per factor in the chart holding most of them.
fn mean_point(target: &HermitianTarget, pts: &[(u8, Pt)]) -> TargetValue {
    let mut chart = 0u8;
    if target.id == TargetId::FsProduct {
        for m in 0..2 {
            let far = pts
                .iter()
                .filter(|(c, z)| target.convert_unchecked(*c as usize, 0, *z)[m].norm() > 1.0)
                .count();
            if 2 * far > pts.len() {
                chart |= 1 << m;
            }
        }
    }
    let mut s = [ZERO; 2];
    for (c, z) in pts {
        let w = target.convert_unchecked(*c as usize, chart as usize, *z);
        s[0] += w[0];
        s[1] += w[1];
    }
    let k = pts.len() as f64;
    TargetValue { chart, z: [s[0] / k, s[1] / k] }
}

/// Average of the map over the coordinate circle |x − center| = radius.
pub fn ring_average(map: &MapState, center: DomainPoint, radius: f64) -> Result<TargetValue> {
    let sampler = Sampler::new(map, center.chart);
    let pts = (0..RING_SAMPLES)
        .map(|b| {
            let x = center.x + C64::from_polar(radius, 2.0 * PI * b as f64 / RING_SAMPLES as f64);
            sampler.value(center.chart, x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_point(&map.target, &pts))
}

#[derive(Clone, Debug, Serialize)]
pub struct RenormalizationData {
    /// Family index (1-based position).
    pub k: usize,
    pub r_k: f64,
    pub x_tilde: DomainPoint,
    pub mu_k: f64,
    pub c0: f64,
    /// ∫_{B_{2r_k}} e dA, the energy carried onto Ω_k.
    pub omega_energy: f64,
    pub neck_inner: f64,
    pub neck_outer: f64,
    pub t_k: f64,
    /// |x̃_k − p| ≤ r_k/(4k²)
    pub center_bound: bool,
    /// μ_k ≤ r_k/k²
    pub scale_bound: bool,
    /// kμ_k < r_k
    pub scale_separated: bool,
    pub neck: Option<NeckDiagnostics>,
    pub neck_error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NeckSummary {
    pub k: Vec<usize>,
    /// Neck energy per index; None where the annulus is empty.
    pub energies: Vec<Option<f64>>,
    pub all_resolved: bool,
    pub monotone_decreasing: bool,
    pub last_energy: Option<f64>,
    /// Decay exponent of max(L(γ_0), L(γ_T)) in k, with its fitted constant.
    pub end_loop_exponent: Option<f64>,
    pub end_loop_constant: Option<f64>,
    /// Largest loop length over t ∈ [1, T − 1] and all k.
    pub interior_loop_max: Option<f64>,
    /// limsup of the neck energy over the tail: the residual mass at s.
    pub south_mass: Option<f64>,
}

fn summarize_necks(data: &[RenormalizationData]) -> NeckSummary {
    let energies: Vec<Option<f64>> = data.iter().map(|r| r.neck.as_ref().map(|n| n.energy)).collect();
    let present: Vec<f64> = energies.iter().flatten().copied().collect();
    let all_resolved = !energies.is_empty() && energies.iter().all(|e| e.is_some());
    let monotone = all_resolved && present.windows(2).all(|w| w[1] < w[0]);
    let mut ks = vec![];
    let mut ends = vec![];
    let mut interior: Option<f64> = None;
    for r in data {
        if let Some(n) = &r.neck {
            let l = n.loop_lengths[0].max(*n.loop_lengths.last().unwrap());
            if l > 0.0 {
                ks.push(r.k as f64);
                ends.push(l);
            }
            for (t, l) in n.loop_t.iter().zip(&n.loop_lengths) {
                if *t >= 1.0 && *t <= n.t_max - 1.0 {
                    interior = Some(interior.map_or(*l, |m: f64| m.max(*l)));
                }
            }
        }
    }
    let fit = if ks.len() >= 2 { log_log_fit(&ks, &ends).ok() } else { None };
    let tail = data.len().div_ceil(2);
    let south = energies[data.len() - tail..].iter().flatten().copied().fold(None, |a: Option<f64>, e| {
        Some(a.map_or(e, |m| m.max(e)))
    });
    NeckSummary {
        k: data.iter().map(|r| r.k).collect(),
        last_energy: energies.last().copied().flatten(),
        energies,
        all_resolved,
        monotone_decreasing: monotone,
        end_loop_exponent: fit.map(|f| -f.slope),
        end_loop_constant: fit.map(|f| f.intercept.exp()),
        interior_loop_max: interior,
        south_mass: south,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BubbleTreeNode {
    pub index: Vec<usize>,
    pub label: String,
    /// Representative map: the last family member (root) or its renormalization.
    #[serde(skip)]
    pub map: MapState,
    pub children: Vec<BubbleTreeNode>,
    /// Concentrated mass attributed from the parent (total limit energy at the root).
    pub mass_in: f64,
    /// Energy of the limit map, extrapolated over the excision ladder.
    pub energy: f64,
    pub energy_fit: LimitFit,
    /// Bubble spheres: radius |w| = R* where the energy profile is flattest.
    pub plateau_radius: Option<f64>,
    /// Bubble point in the parent's domain.
    pub point: Option<DomainPoint>,
    /// f_{p_I}(s), bubbles only.
    pub south_pole_value: Option<TargetValue>,
    /// Parent limit map at the bubble point.
    pub parent_value: Option<TargetValue>,
    pub concentration: Option<ConcentrationReport>,
    pub renormalization: Vec<RenormalizationData>,
    pub necks: Option<NeckSummary>,
    pub depth_cap_hit: bool,
}

impl BubbleTreeNode {
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }

    /// Depth-first list of all nodes.
    pub fn nodes(&self) -> Vec<&BubbleTreeNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.nodes());
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BubbleTree {
    pub root: BubbleTreeNode,
    /// Limit of E(f_k) over the family tail.
    pub total_energy: f64,
    pub depth_cap: usize,
    pub depth_cap_hit: bool,
    pub node_count: usize,
}

/// Coordinate radius of the neighbourhood U of a bubble point that holds no
/// other bubble point.
fn reach(d: &DomainChart, p: DomainPoint, others: &[DomainPoint]) -> f64 {
    let mut r = match d.spec {
        DomainSpec::SpherePair { .. } => SPHERE_REACH,
        DomainSpec::Disk { radius, .. } => radius - p.x.norm(),
        DomainSpec::Torus { period, .. } => 0.5 * period,
    };
    for q in others {
        if *q == p {
            continue;
        }
        let (y, _) = d.coordinate_in(*q, p.chart);
        if y.is_finite() {
            r = r.min(0.5 * (y - p.x).norm());
        }
    }
    r
}

/// Base scale r_k: the largest r ≤ reach/(4k) with ∫_{B_{2r}} e(f₀) dA ≤ m/(32k²),
/// the base energy modelled by its density at the point.
fn base_radius(mass: f64, background: f64, lambda_p: f64, reach: f64, k: usize) -> f64 {
    let kf = k as f64;
    let cap = reach / (4.0 * kf);
    if !(background > 0.0) {
        return cap;
    }
    let r = (mass / (32.0 * kf * kf * background * PI)).sqrt() / (2.0 * lambda_p);
    r.min(cap)
}

/// Radius on a bubble sphere where the energy profile |w| ≤ R is flattest,
/// between the bubble's own tail and the parent map's growth: the first
/// local minimum of the profile's increments. The profile is
/// sampled at R = 2^(j/2) up to half the valid radius.
fn plateau_radius(m: &EnergyMeasure, excised: &[f64], valid: f64) -> f64 {
    let d = &m.domain;
    let south = Radial::new(d, DomainPoint { chart: 0, x: ZERO });
    let radii: Vec<f64> = (0..).map(|j| 2f64.powf(0.5 * j as f64)).take_while(|r| *r <= 0.5 * valid).collect();
    if radii.len() < 3 {
        return radii.last().copied().unwrap_or(1.0);
    }
    let g: Vec<f64> = radii
        .iter()
        .map(|&r| (0..d.len()).map(|p| m.mass[p] * excised[p] * south.weight(p, r)).sum())
        .collect();
    // further out the parent's own energy may saturate into a spurious plateau
    let inc = |j: usize| g[j + 1] - g[j - 1];
    let best = (1..radii.len() - 1).find(|&j| j + 2 > radii.len() - 1 || inc(j) <= inc(j + 1)).unwrap_or(1);
    radii[best]
}

/// Limit-map energy: the last member's energy with child disks excised and,
/// on bubble spheres, the cap |w| > R around s removed, extrapolated in the
/// excision radius. On bubble spheres R runs over [R*/s, R* s] centred on the
/// plateau radius R*, with s² the ladder's radius ratio; R* is returned.
fn limit_energy(m: &EnergyMeasure, children: &[DomainPoint], ladder: &[f64], valid: Option<f64>) -> Result<(LimitFit, Option<f64>)> {
    if children.is_empty() && valid.is_none() {
        return Ok((LimitFit { limit: m.total(), a: 0.0, b: 0.0, residual: 0.0 }, None));
    }
    let d = &m.domain;
    let dists: Vec<Vec<f64>> = children.iter().map(|c| d.geodesic_distances(*c)).collect();
    let excised = |rho: f64| {
        let mut w = vec![1.0; d.len()];
        for dist in &dists {
            for (wp, g) in w.iter_mut().zip(geodesic_weights(d, dist, rho)) {
                *wp *= 1.0 - g;
            }
        }
        w
    };
    let mid = (ladder[0] * ladder[ladder.len() - 1]).sqrt();
    let r_star = valid.map(|v| plateau_radius(m, &excised(mid), v));
    let south = r_star.map(|_| Radial::new(d, DomainPoint { chart: 0, x: ZERO }));
    let e: Vec<f64> = ladder
        .iter()
        .map(|&rho| {
            let mut w = excised(rho);
            if let (Some(s), Some(rs)) = (&south, r_star) {
                let big = rs * mid / rho;
                for (p, wp) in w.iter_mut().enumerate() {
                    *wp *= s.weight(p, big);
                }
            }
            m.weighted(&w)
        })
        .collect();
    Ok((power_corrected_limit(ladder, &e)?, r_star))
}

struct Level {
    maps: Vec<MapState>,
    measures: Vec<EnergyMeasure>,
}

pub fn build_tree(family: &[MapState], cfg: &BubbleConfig) -> Result<BubbleTree> {
    cfg.validate()?;
    if family.len() < 3 {
        return Err(Error::NoFamily);
    }
    let measures = family
        .par_iter()
        .map(|m| EnergyMeasure::of_map(m, None))
        .collect::<Result<Vec<_>>>()?;
    let tail = tail_len(family.len());
    let total = measures[family.len() - tail..].iter().map(|m| m.total()).sum::<f64>() / tail as f64;
    let depth_cap = (total / cfg.c0).ceil().max(1.0) as usize;
    let sphere = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: cfg.sphere_n })?);
    let level = Level { maps: family.to_vec(), measures };
    let root = build_node(vec![], &level, total, None, cfg, depth_cap, &sphere)?;
    let hit = root.nodes().iter().any(|n| n.depth_cap_hit);
    Ok(BubbleTree { node_count: root.node_count(), root, total_energy: total, depth_cap, depth_cap_hit: hit })
}

fn label(index: &[usize]) -> String {
    if index.is_empty() {
        "0".into()
    } else {
        index.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".")
    }
}

fn build_node(
    index: Vec<usize>,
    level: &Level,
    mass_in: f64,
    valid: Option<f64>,
    cfg: &BubbleConfig,
    depth_cap: usize,
    sphere: &Arc<DomainChart>,
) -> Result<BubbleTreeNode> {
    let last = level.measures.last().ok_or(Error::NoFamily)?;
    let ladder = &cfg.radii_ladder;
    let capped = index.len() >= depth_cap;
    let mut report = if capped {
        None
    } else {
        match detect_in(&level.measures, ladder, cfg.epsilon1) {
            Ok(r) => Some(r),
            Err(Error::NoFamily) => None,
            Err(e) => return Err(e),
        }
    };
    let points = report.as_ref().map_or(vec![], |r| r.bubble_points.clone());
    let (mut fit, mut plateau) = limit_energy(last, &points, ladder, valid)?;
    if valid.is_some() && !points.is_empty() && mass_in - fit.limit < cfg.c0 {
        // no concentrated mass left for further bubbles
        if let Some(r) = report.as_mut() {
            *r = ConcentrationReport::empty(ladder, r.tail);
        }
        (fit, plateau) = limit_energy(last, &[], ladder, valid)?;
    }
    let points = report.as_ref().map_or(vec![], |r| r.bubble_points.clone());
    let d = &last.domain;

    let mut children = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        let rep = report.as_ref().unwrap();
        let (m_i, bg) = (rep.masses[i], rep.background_density[i]);
        let u = reach(d, p, &points);
        let lam = d.lambda_at(p.x);
        let per_k: Vec<Result<Option<(RenormalizationData, MapState, EnergyMeasure)>>> = level
            .maps
            .par_iter()
            .zip(&level.measures)
            .enumerate()
            .map(|(j, (map, meas))| {
                let k = j + 1;
                let kf = k as f64;
                let r = base_radius(m_i, bg, lam, u, k);
                let xt = match center_of_mass(meas, p, 2.0 * r) {
                    Ok(x) => x,
                    Err(Error::ZeroEnergyRegion) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let mu = match scale_mu(meas, xt, p, r, cfg.c0) {
                    Ok(mu) => mu,
                    Err(Error::EnergyBelowC0 { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let (inner, outer) = (kf * mu, r);
                let (neck, neck_error) = match neck_diagnostics(map, xt, inner, outer, cfg.neck_cells) {
                    Ok(n) => (Some(n), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                let data = RenormalizationData {
                    k,
                    r_k: r,
                    x_tilde: xt,
                    mu_k: mu,
                    c0: cfg.c0,
                    omega_energy: meas.in_disk(p, 2.0 * r),
                    neck_inner: inner,
                    neck_outer: outer,
                    t_k: if inner > 0.0 && outer > inner { (outer / inner).ln() } else { 0.0 },
                    center_bound: (xt.x - p.x).norm() <= r / (4.0 * kf * kf),
                    scale_bound: mu <= r / (kf * kf),
                    scale_separated: inner < outer,
                    neck,
                    neck_error,
                };
                let ren = renormalize(map, xt, mu, u, sphere)?;
                let valid = sphere.coordinate_disk_mask(DomainPoint { chart: 0, x: ZERO }, u / mu);
                let rm = EnergyMeasure::of_map(&ren, Some(&valid))?;
                Ok(Some((data, ren, rm)))
            })
            .collect();
        let mut data = Vec::new();
        let mut maps = Vec::new();
        let mut meas = Vec::new();
        for r in per_k {
            if let Some((a, b, c)) = r? {
                data.push(a);
                maps.push(b);
                meas.push(c);
            }
        }
        if maps.is_empty() {
            continue;
        }
        let sub = Level { maps, measures: meas };
        let mut child_index = index.clone();
        child_index.push(i + 1);
        let valid = u / data[data.len() - 1].mu_k;
        let mut child = build_node(child_index, &sub, m_i, Some(valid), cfg, depth_cap, sphere)?;
        child.point = Some(p);
        child.parent_value = Some(ring_average(&level.maps[level.maps.len() - 1], p, ladder[ladder.len() - 1] / lam)?);
        let r_s = child.plateau_radius.unwrap_or(1.0);
        child.south_pole_value = Some(ring_average(&child.map, DomainPoint { chart: 0, x: ZERO }, r_s)?);
        child.necks = Some(summarize_necks(&data));
        child.renormalization = data;
        children.push(child);
    }

    Ok(BubbleTreeNode {
        label: label(&index),
        index,
        map: level.maps[level.maps.len() - 1].clone(),
        children,
        mass_in,
        energy: fit.limit,
        energy_fit: fit,
        plateau_radius: plateau,
        point: None,
        south_pole_value: None,
        parent_value: None,
        concentration: report,
        renormalization: vec![],
        necks: None,
        depth_cap_hit: capped,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyIdentityReport {
    pub limit_energy: f64,
    pub base_energy: f64,
    pub bubble_energies: Vec<(String, f64)>,
    pub absolute: f64,
    pub relative: f64,
}

/// |lim E(f_k) − E(f₀) − Σ_I E(f_{p_I})|, the limit taken as the tail mean.
pub fn energy_identity_check(tree: &BubbleTree, family: &[MapState]) -> Result<EnergyIdentityReport> {
    if family.is_empty() {
        return Err(Error::NoFamily);
    }
    let tail = tail_len(family.len());
    let mut lim = 0.0;
    for m in &family[family.len() - tail..] {
        lim += EnergyMeasure::of_map(m, None)?.total();
    }
    lim /= tail as f64;
    let bubbles: Vec<(String, f64)> =
        tree.root.nodes().iter().skip(1).map(|n| (n.label.clone(), n.energy)).collect();
    let sum = tree.root.energy + bubbles.iter().map(|b| b.1).sum::<f64>();
    let abs = (lim - sum).abs();
    Ok(EnergyIdentityReport {
        limit_energy: lim,
        base_energy: tree.root.energy,
        bubble_energies: bubbles,
        absolute: abs,
        relative: if lim != 0.0 { abs / lim.abs() } else { abs },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceBubblingReport {
    pub edges: Vec<(String, f64)>,
    pub max_mismatch: f64,
}

/// max over edges of dist(f_{p_I}(s), f_{p_I'}(p_I)).
pub fn distance_bubbling_check(tree: &BubbleTree) -> DistanceBubblingReport {
    let target = tree.root.map.target;
    let mut edges = Vec::new();
    for n in tree.root.nodes().iter().skip(1) {
        if let (Some(s), Some(p)) = (n.south_pole_value, n.parent_value) {
            edges.push((n.label.clone(), target.chord_distance(s.chart as usize, s.z, p.chart as usize, p.z)));
        }
    }
    let max = edges.iter().map(|e| e.1).fold(0.0, f64::max);
    DistanceBubblingReport { edges, max_mismatch: max }
}

#[derive(Clone, Debug, Serialize)]
pub struct MassRow {
    pub label: String,
    pub mass_in: f64,
    pub energy: f64,
    pub children_mass: f64,
    /// |m_I − E(f_{p_I}) − Σ m_{I·}| / m_I
    pub relative_mismatch: f64,
    /// m_I ≥ E(f_{p_I}) + Σ m_{I·} − tolerance
    pub holds: bool,
}

pub fn mass_accounting(tree: &BubbleTree, tolerance: f64) -> Vec<MassRow> {
    tree.root
        .nodes()
        .iter()
        .map(|n| {
            let cm: f64 = n.children.iter().map(|c| c.mass_in).sum();
            let gap = n.mass_in - n.energy - cm;
            MassRow {
                label: n.label.clone(),
                mass_in: n.mass_in,
                energy: n.energy,
                children_mass: cm,
                relative_mismatch: if n.mass_in != 0.0 { gap.abs() / n.mass_in.abs() } else { gap.abs() },
                holds: gap >= -tolerance,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DiskMetric;
    use crate::flow::{concentrating_family, FamilyKind};
    use crate::target::TargetId;

    fn flat_disk(n: usize, radius: f64) -> Arc<DomainChart> {
        Arc::new(DomainChart::new(DomainSpec::Disk { n, radius, metric: DiskMetric::Flat { scale: 1.0 } }).unwrap())
    }

    fn origin() -> DomainPoint {
        DomainPoint { chart: 0, x: ZERO }
    }

    #[test]
    fn uniform_density_scale() {
        let d = flat_disk(256, 1.5);
        let e: Vec<f64> = d.coords.iter().map(|x| if x.norm() < 1.0 { 1.0 } else { 0.0 }).collect();
        let m = EnergyMeasure::from_density(d.clone(), &e, None);
        let total = m.in_disk(origin(), 1.0);
        let mu = scale_mu(&m, origin(), origin(), 0.5, 0.5 * total).unwrap();
        assert!((mu - 0.5f64.sqrt()).abs() < d.h, "{mu}");
        assert!(matches!(scale_mu(&m, origin(), origin(), 0.5, 1.01 * total), Err(Error::EnergyBelowC0 { .. })));
    }

    #[test]
    fn center_of_mass_follows_translation() {
        let d = flat_disk(128, 1.0);
        for c in [ZERO, C64::new(0.21, -0.13)] {
            let e: Vec<f64> = d.coords.iter().map(|x| (-(x - c).norm_sqr() / 0.01).exp()).collect();
            let m = EnergyMeasure::from_density(d.clone(), &e, None);
            let xt = center_of_mass(&m, DomainPoint { chart: 0, x: c }, 0.5).unwrap();
            assert!((xt.x - c).norm() < 1e-10, "{c}: {}", xt.x);
        }
        let zero = EnergyMeasure::from_density(d.clone(), &vec![0.0; d.len()], None);
        assert!(matches!(center_of_mass(&zero, origin(), 0.5), Err(Error::ZeroEnergyRegion)));
    }

    #[test]
    fn constant_family_has_no_bubbles() {
        let d = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: 64 }).unwrap());
        let t = HermitianTarget::new(TargetId::FsProduct);
        let fam: Vec<MapState> = (0..4)
            .map(|_| MapState::from_spec(d.clone(), t, &MapSpec::constant([C64::new(0.3, 0.0), ZERO])).unwrap())
            .collect();
        let rep = detect_concentration(&fam, &[0.1, 0.2, 0.3, 0.4], 2.0 * PI).unwrap();
        assert!(rep.bubble_points.is_empty());
        let tree = build_tree(&fam, &BubbleConfig { sphere_n: 32, ..Default::default() }).unwrap();
        assert!(tree.root.children.is_empty());
        assert!(tree.root.energy.abs() < 1e-12);
        assert_eq!(distance_bubbling_check(&tree).max_mismatch, 0.0);
        let id = energy_identity_check(&tree, &fam).unwrap();
        assert!(id.absolute < 1e-12);
        assert!(matches!(detect_concentration(&fam[..2], &[0.1, 0.2, 0.3], 1.0), Err(Error::NoFamily)));
    }

    #[test]
    fn identity_renormalization_keeps_energy() {
        let d = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: 64 }).unwrap());
        let t = HermitianTarget::new(TargetId::FsProduct);
        let m = MapState::from_spec(d.clone(), t, &MapSpec::fs_bubble(2.0)).unwrap();
        let r = renormalize(&m, origin(), 1.0, SPHERE_REACH, &d).unwrap();
        let e0 = EnergyMeasure::of_map(&m, None).unwrap().total();
        let e1 = EnergyMeasure::of_map(&r, None).unwrap().total();
        assert!((e0 - e1).abs() < 1e-6 * e0);
        // the grid path: drop the closed form and resample
        let mut g = m.clone();
        g.spec = None;
        let rg = renormalize(&g, origin(), 1.0, SPHERE_REACH, &d).unwrap();
        // beyond the reach the resampled map is held constant along rays
        let err = (0..d.len())
            .filter(|&p| p < d.n * d.n || d.coords[p].norm() > 1.0 / SPHERE_REACH)
            .map(|p| t.chord_distance(rg.chart_ids[p] as usize, rg.points[p], m.chart_ids[p] as usize, m.points[p]))
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
        assert!(renormalize(&m, origin(), 0.0, 1.0, &d).is_err());
    }

    #[test]
    fn constant_neck_is_trivial() {
        let d = flat_disk(64, 1.0);
        let t = HermitianTarget::new(TargetId::FlatC2);
        let m = MapState::from_spec(d, t, &MapSpec::constant([C64::new(0.5, 0.0), ZERO])).unwrap();
        let n = neck_diagnostics(&m, origin(), 0.1, 0.8, 32).unwrap();
        assert_eq!(n.energy, 0.0);
        assert!(n.loop_lengths.iter().all(|l| *l == 0.0));
        assert_eq!(n.diameter, 0.0);
        assert!(matches!(neck_diagnostics(&m, origin(), 0.5, 0.4, 32), Err(Error::AnnulusTooThin { .. })));
    }

    #[test]
    fn neck_energy_matches_closed_form() {
        let d = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: 128 }).unwrap());
        let t = HermitianTarget::new(TargetId::FsProduct);
        let k = 8.0;
        let m = MapState::from_spec(d, t, &MapSpec::fs_bubble(k)).unwrap();
        let (a, b) = (0.05, 0.4);
        let n = neck_diagnostics(&m, origin(), a, b, 128).unwrap();
        let band = |s: f64| 1.0 / (1.0 + s * s);
        let exact = 4.0 * PI * (band(k * a) - band(k * b) + band(a) - band(b));
        assert!((n.energy - exact).abs() < 1e-4 * exact, "{} vs {exact}", n.energy);
        // circle |x| = b maps to circles of chordal radius 2b/(1+b²) and 2kb/(1+k²b²)
        let circ = |s: f64| 4.0 * PI * s / (1.0 + s * s);
        let l0 = (circ(b).powi(2) + circ(k * b).powi(2)).sqrt();
        assert!((n.loop_lengths[0] - l0).abs() < 1e-8, "{} vs {l0}", n.loop_lengths[0]);

        // grid path agrees at scheme accuracy
        let mut g = m.clone();
        g.spec = None;
        let ng = neck_diagnostics(&g, origin(), 0.1, 0.8, 128).unwrap();
        let exact_g = 4.0 * PI * (band(k * 0.1) - band(k * 0.8) + band(0.1) - band(0.8));
        assert!((ng.energy - exact_g).abs() < 2e-2 * exact_g, "{} vs {exact_g}", ng.energy);
    }

    #[test]
    fn single_bubble_tree() {
        let d = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: 512 }).unwrap());
        let t = HermitianTarget::new(TargetId::FsProduct);
        let cfg = BubbleConfig { neck_cells: 16, ..Default::default() };
        let fam = concentrating_family(&d, t, &FamilyKind::FsProductBubble, &cfg.k_values).unwrap();
        let tree = build_tree(&fam, &cfg).unwrap();
        assert_eq!(tree.root.children.len(), 1);
        let b = &tree.root.children[0];
        assert!(b.point.unwrap().x.norm() < 1e-12);
        let sphere = 4.0 * PI;
        for (what, e) in [("mass", b.mass_in), ("base", tree.root.energy), ("bubble", b.energy)] {
            assert!((e / sphere - 1.0).abs() < 0.01, "{what} {}", e / sphere);
        }
        assert!(energy_identity_check(&tree, &fam).unwrap().relative < 0.01);
        assert!(b.children.is_empty());
        assert!(distance_bubbling_check(&tree).max_mismatch < 1e-6);
        assert!(tree.node_count <= tree.depth_cap + 1);
    }
}
