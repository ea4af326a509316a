//! Residual-driven flow towards Chern-harmonic maps, and generators of
//! concentrating families.

use crate::domain::{DomainChart, DomainSpec};
use crate::error::{Error, Result};
use crate::map::{MapSpec, MapState};
use crate::pullback::{max_norm, Pullback};
use crate::target::{HermitianTarget, Pt, TargetId, C64, ZERO};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    SemiImplicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub tol: f64,
    pub max_steps: usize,
    pub cfl_safety: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { dt: 1e-2, scheme: Scheme::SemiImplicit, tol: 1e-8, max_steps: 2000, cfl_safety: 0.5 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config("flow.dt must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("flow.tol must be positive".into()));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety < 1.0) {
            return Err(Error::Config("flow.cfl_safety must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub residual_history: Vec<f64>,
    pub energy_history: Vec<f64>,
    pub converged: bool,
    pub steps_taken: usize,
    /// Step size actually used.
    pub dt: f64,
}

const DIVERGENCE_BOUND: f64 = 1e6;

/// Explicit stability bound cfl·h²/4·min λ².
pub fn explicit_dt(domain: &DomainChart, cfl: f64) -> f64 {
    let lmin = domain
        .lambda
        .iter()
        .zip(&domain.interior)
        .filter(|(_, &i)| i)
        .map(|(l, _)| *l)
        .fold(f64::INFINITY, f64::min);
    cfl * domain.h * domain.h / 4.0 * lmin * lmin
}

/// Tension field τ of a map (target coordinates, own chart per point).
pub fn tension_field(map: &MapState) -> Result<Vec<Pt>> {
    Ok(Pullback::compute(map)?.tension())
}

/// Max |a_{11̄} + a_{1̄1}| over the free grid points.
pub fn interior_residual(map: &MapState, pb: &Pullback) -> f64 {
    max_norm(&pb.harmonic_residual(), Some(&map.domain.interior))
}

pub fn flow_to_harmonic(map: &MapState, cfg: &FlowConfig) -> Result<(MapState, SolveReport)> {
    cfg.validate()?;
    let domain = map.domain.clone();
    let dt = match cfg.scheme {
        Scheme::Explicit => cfg.dt.min(explicit_dt(&domain, cfg.cfl_safety)),
        Scheme::SemiImplicit => cfg.dt,
    };
    let mut cur = map.clone();
    let mut report = SolveReport { dt, ..Default::default() };
    let mut increases = 0usize;
    for step in 0..=cfg.max_steps {
        let pb = Pullback::compute(&cur)?;
        let res = interior_residual(&cur, &pb);
        // the grid energy is the functional the discrete flow descends
        let e = domain.integrate_grid(&pb.energy_density());
        if !res.is_finite() || !e.is_finite() {
            return Err(Error::Diverged(step));
        }
        if let Some(&prev) = report.energy_history.last() {
            if cfg.scheme == Scheme::Explicit && e > prev {
                increases += 1;
                if increases >= 10 {
                    return Err(Error::StepTooLarge(step));
                }
            } else {
                increases = 0;
            }
        }
        report.residual_history.push(res);
        report.energy_history.push(e);
        report.steps_taken = step;
        if res <= cfg.tol {
            report.converged = true;
            break;
        }
        if step == cfg.max_steps {
            break;
        }
        let tau = pb.tension();
        let tmax = max_norm(&tau, Some(&domain.interior));
        if !(tmax <= DIVERGENCE_BOUND) {
            return Err(Error::Diverged(step));
        }
        let delta: Vec<Pt> = match cfg.scheme {
            Scheme::Explicit => tau.iter().map(|t| [t[0] * dt, t[1] * dt]).collect(),
            Scheme::SemiImplicit => {
                // the implicit smoothing couples neighbours, so it runs on
                // tangent vectors expressed in the affine chart of each factor
                let to_affine: Vec<Pt> = (0..cur.len()).map(|q| affine_jacobian(&cur, q)).collect();
                let tau0: Vec<Pt> = tau.iter().zip(&to_affine).map(|(t, j)| [t[0] * j[0], t[1] * j[1]]).collect();
                let d0 = semi_implicit_increment(&domain, &tau0, dt);
                d0.iter().zip(&to_affine).map(|(d, j)| [d[0] / j[0], d[1] / j[1]]).collect()
            }
        };
        for q in 0..cur.len() {
            if domain.interior[q] {
                cur.points[q][0] += delta[q][0];
                cur.points[q][1] += delta[q][1];
            }
        }
        cur.spec = None;
        cur.reassign_charts();
        if matches!(domain.spec, DomainSpec::SpherePair { .. }) {
            resync_sphere(&mut cur)?;
        }
        if !(cur.max_abs() <= DIVERGENCE_BOUND) || !cur.is_finite() {
            return Err(Error::Diverged(step + 1));
        }
    }
    Ok((cur, report))
}

/// Solve (λ² − dt Δ_flat) δ = dt λ² τ.
/// Per component, the factor mapping a tangent vector in the point's chart to
/// the affine chart: −1/w² where the component is stored inverted (w = 1/z).
fn affine_jacobian(map: &MapState, q: usize) -> Pt {
    let c = map.chart_ids[q];
    let mut j = [C64::from(1.0); 2];
    if map.target.id == TargetId::FsProduct {
        for m in 0..2 {
            if c & (1 << m) != 0 {
                let w = map.points[q][m];
                // at the pole itself the affine chart is unusable; keep the local one
                if w.norm() > 1e-6 {
                    j[m] = -(w * w).inv();
                }
            }
        }
    }
    j
}

fn semi_implicit_increment(domain: &DomainChart, tau: &[Pt], dt: f64) -> Vec<Pt> {
    let mut out = vec![[ZERO; 2]; tau.len()];
    for m in 0..2 {
        let rhs: Vec<C64> = tau.iter().zip(&domain.lambda).map(|(t, l)| t[m] * (dt * l * l)).collect();
        let sol = if domain.is_periodic() { fft_solve(domain, &rhs, dt) } else { cg_solve(domain, &rhs, dt) };
        for q in 0..tau.len() {
            out[q][m] = sol[q];
        }
    }
    out
}

/// Periodic grid (λ ≡ 1): δ̂ = r̂ / (1 + dt|k|²).
fn fft_solve(domain: &DomainChart, rhs: &[C64], dt: f64) -> Vec<C64> {
    let n = domain.n;
    let period = domain.h * n as f64;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf = rhs.to_vec();
    for row in buf.chunks_mut(n) {
        fwd.process(row);
    }
    transpose(&mut buf, n);
    for row in buf.chunks_mut(n) {
        fwd.process(row);
    }
    let k0 = 2.0 * PI / period;
    let wave = |j: usize| -> f64 {
        let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        k * k0
    };
    for a in 0..n {
        for b in 0..n {
            let k2 = wave(a).powi(2) + wave(b).powi(2);
            buf[a * n + b] /= (1.0 + dt * k2) * (n * n) as f64;
        }
    }
    for row in buf.chunks_mut(n) {
        inv.process(row);
    }
    transpose(&mut buf, n);
    for row in buf.chunks_mut(n) {
        inv.process(row);
    }
    buf
}

fn transpose(buf: &mut [C64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Composition of the centered fourth-order first-derivative stencil with
/// itself, as a 9-point second-derivative stencil (times 144h²).
const D2: [f64; 9] = [1.0, -16.0, 64.0, 16.0, -130.0, 16.0, 64.0, -16.0, 1.0];

/// Conjugate gradients for λ²δ − dt (Dx² + Dy²) δ on the free points, with
/// δ = 0 elsewhere. Free points sit at least five cells from the slab edge,
/// so the composed operator is the centered one and is symmetric.
fn cg_solve(domain: &DomainChart, rhs: &[C64], dt: f64) -> Vec<C64> {
    let n = domain.n;
    let len = rhs.len();
    let free: Vec<usize> = (0..len).filter(|&q| domain.interior[q]).collect();
    let w = dt / (144.0 * domain.h * domain.h);
    let diag: Vec<f64> = free.iter().map(|&q| domain.lambda[q] * domain.lambda[q]).collect();
    let apply = |x: &[C64], out: &mut [C64]| {
        out.par_iter_mut().zip(free.par_iter().zip(&diag)).for_each(|(o, (&q, &l2))| {
            let mut lap = ZERO;
            for (k, c) in D2.iter().enumerate() {
                let off = k as isize - 4;
                lap += (x[(q as isize + off) as usize] + x[(q as isize + off * n as isize) as usize]) * *c;
            }
            *o = x[q] * l2 - lap * w;
        });
    };
    // Hermitian inner product over the free points, real for Hermitian
    // operators; chunked sums keep the result independent of thread count
    let dot = |a: &[C64], b: &[C64]| -> f64 {
        let parts: Vec<f64> =
            a.par_chunks(n).zip(b.par_chunks(n)).map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u.conj() * v).re).sum()).collect();
        parts.iter().sum()
    };
    let m = free.len();
    let b: Vec<C64> = free.iter().map(|&q| rhs[q]).collect();
    let mut x = vec![ZERO; m];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut full = vec![ZERO; len];
    let mut ap = vec![ZERO; m];
    let mut rr = dot(&r, &r);
    let target = 1e-26 * dot(&b, &b).max(1e-300);
    for _ in 0..10 * n {
        if rr <= target {
            break;
        }
        for (k, &q) in free.iter().enumerate() {
            full[q] = p[k];
        }
        apply(&full, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for k in 0..m {
            x[k] += p[k] * alpha;
            r[k] -= ap[k] * alpha;
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..m {
            p[k] = r[k] + p[k] * beta;
        }
    }
    let mut out = vec![ZERO; len];
    for (k, &q) in free.iter().enumerate() {
        out[q] = x[k];
    }
    out
}

/// Overwrite points outside each sphere chart's owned region with values
/// interpolated from the other chart.
fn resync_sphere(map: &mut MapState) -> Result<()> {
    let d = map.domain.clone();
    let n2 = d.n * d.n;
    let mut updates = Vec::new();
    for q in 0..map.len() {
        if d.interior[q] {
            continue;
        }
        let chart = q / n2;
        let other = 1 - chart;
        let x = d.coords[q].inv();
        // take the target chart of the nearest owned point in the other chart
        let u = ((x.re - d.origin()) / d.h).round() as usize;
        let v = ((x.im - d.origin()) / d.h).round() as usize;
        let near = other * n2 + v.min(d.n - 1) * d.n + u.min(d.n - 1);
        let c = map.chart_ids[near];
        updates.push((q, other, x, c));
    }
    let mut views: [Option<Vec<Pt>>; 4] = Default::default();
    for &(_, _, _, c) in &updates {
        if views[c as usize].is_none() {
            views[c as usize] = Some(map.view(c));
        }
    }
    let comps: Vec<[Option<Vec<C64>>; 2]> = views
        .iter()
        .map(|v| match v {
            Some(v) => [Some(v.iter().map(|z| z[0]).collect()), Some(v.iter().map(|z| z[1]).collect())],
            None => [None, None],
        })
        .collect();
    for (q, other, x, c) in updates {
        let mut z = [ZERO; 2];
        for m in 0..2 {
            let f = comps[c as usize][m].as_ref().unwrap();
            z[m] = d.interpolate(f, other, x).ok_or(Error::ResampleOutOfDomain)?;
        }
        if !(z[0].is_finite() && z[1].is_finite()) {
            return Err(Error::ChartTear(q));
        }
        let (nc, nz) = map.target.assign_chart(c as usize, z);
        map.points[q] = nz;
        map.chart_ids[q] = nc as u8;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    /// f_k(x) = (x, k x)
    FsProductBubble,
    /// f_k(x) = (k x, k² x)
    TwoScale,
    /// f_k(x) = (k(x − c), k(x + c))
    TwoCenter { c: f64 },
    /// base(x / k)
    MoebiusComposed { base: MapSpec },
}

pub fn concentrating_family(
    domain: &Arc<DomainChart>,
    target: HermitianTarget,
    kind: &FamilyKind,
    k_values: &[f64],
) -> Result<Vec<MapState>> {
    k_values
        .iter()
        .map(|&k| {
            let spec = family_spec(kind, k)?;
            MapState::from_spec(domain.clone(), target, &spec)
        })
        .collect()
}

pub fn family_spec(kind: &FamilyKind, k: f64) -> Result<MapSpec> {
    Ok(match kind {
        FamilyKind::FsProductBubble => MapSpec::fs_bubble(k),
        FamilyKind::TwoScale => MapSpec::two_scale(k),
        FamilyKind::TwoCenter { c } => MapSpec::two_center(k, *c),
        FamilyKind::MoebiusComposed { base } => base.compose_affine(C64::from(1.0 / k), ZERO)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GapProbeRow {
    pub initial_energy: f64,
    pub final_diameter: f64,
    pub collapsed: bool,
}

/// Flow small trigonometric perturbations of a constant on a closed domain
/// and report the largest initial energy whose run collapsed to a point.
pub fn energy_gap_probe(
    domain: &Arc<DomainChart>,
    target: HermitianTarget,
    base: Pt,
    amplitudes: &[f64],
    seed: u64,
    cfg: &FlowConfig,
) -> Result<(f64, Vec<GapProbeRow>)> {
    let period = match domain.spec {
        DomainSpec::Torus { period, .. } => period,
        _ => return Err(Error::Config("energy gap probe runs on the torus".into())),
    };
    let mut rows = Vec::new();
    let mut best: f64 = 0.0;
    for (i, &amp) in amplitudes.iter().enumerate() {
        let spec = MapSpec::random_trig(seed.wrapping_add(i as u64), base, amp, period, 3);
        let m = MapState::from_spec(domain.clone(), target, &spec)?;
        let e0 = crate::pullback::energy(&m, None)?.total;
        let (out, _) = flow_to_harmonic(&m, cfg)?;
        let diam = image_diameter(&out);
        let collapsed = diam < 1e-3;
        if collapsed {
            best = best.max(e0);
        }
        rows.push(GapProbeRow { initial_energy: e0, final_diameter: diam, collapsed });
    }
    Ok((best, rows))
}

/// Coordinate diameter of the image (single-chart maps).
pub fn image_diameter(map: &MapState) -> f64 {
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for z in &map.points {
        let v = [z[0].re, z[0].im, z[1].re, z[1].im];
        for k in 0..4 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (0..4).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DiskMetric;
    use crate::target::TargetId;

    #[test]
    fn constant_map_is_fixed_point() {
        let d = Arc::new(DomainChart::new(DomainSpec::Torus { n: 16, period: 1.0 }).unwrap());
        let m = MapState::from_spec(d, HermitianTarget::new(TargetId::Hopf), &MapSpec::constant([C64::new(1.0, 0.0), ZERO]))
            .unwrap();
        let (out, rep) = flow_to_harmonic(&m, &FlowConfig::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.steps_taken, 0);
        assert_eq!(out.points, m.points);
    }

    #[test]
    fn flat_dirichlet_recovers_holomorphic_map() {
        let d = Arc::new(
            DomainChart::new(DomainSpec::Disk { n: 32, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } }).unwrap(),
        );
        let t = HermitianTarget::new(TargetId::FlatC2);
        let one = C64::from(1.0);
        let exact = MapState::from_spec(d.clone(), t, &MapSpec::poly(&[(one, 2, 0)], &[(one * 0.5, 1, 0)])).unwrap();
        // perturb only the free points so the boundary data is the exact map
        let mut pts = exact.points.clone();
        for q in 0..pts.len() {
            if d.interior[q] {
                let x = d.coords[q];
                pts[q][0] += one * 0.3 * (0.75 - x.norm_sqr()).max(0.0);
            }
        }
        let start = MapState::from_points(d.clone(), t, pts, exact.chart_ids.clone()).unwrap();
        let cfg = FlowConfig { dt: 0.05, tol: 1e-9, max_steps: 4000, ..Default::default() };
        let (out, rep) = flow_to_harmonic(&start, &cfg).unwrap();
        assert!(rep.converged, "{:?}", rep.residual_history.last());
        for w in rep.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let err = (0..out.len())
            .filter(|&q| d.interior[q])
            .map(|q| (out.points[q][0] - exact.points[q][0]).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn torus_heat_flow_collapses_small_maps() {
        let d = Arc::new(DomainChart::new(DomainSpec::Torus { n: 16, period: 1.0 }).unwrap());
        let t = HermitianTarget::new(TargetId::FlatC2);
        let cfg = FlowConfig { dt: 0.02, tol: 1e-10, max_steps: 500, ..Default::default() };
        let (best, rows) = energy_gap_probe(&d, t, [ZERO, ZERO], &[0.01, 0.05], 1, &cfg).unwrap();
        assert!(rows.iter().all(|r| r.collapsed));
        assert!(best > 0.0);
    }

    #[test]
    fn moebius_composed_constant_family() {
        let d = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: 16 }).unwrap());
        let t = HermitianTarget::new(TargetId::FsProduct);
        let base = MapSpec::constant([C64::new(0.2, 0.0), ZERO]);
        let fam = concentrating_family(&d, t, &FamilyKind::MoebiusComposed { base }, &[1.0, 10.0]).unwrap();
        assert_eq!(fam[0].points, fam[1].points);
    }
}
