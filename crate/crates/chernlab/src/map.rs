//! Discretized maps from a domain grid into a target atlas, and the
//! closed-form map families used to generate them.

use crate::domain::{DomainChart, DomainSpec};
use crate::error::{Error, Result};
use crate::target::{hnorm_sqr, HermitianTarget, Pt, TargetId, C64, FS_CHART_RADIUS, I, ZERO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

/// Value u = n/d of one target component with its Wirtinger derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompJet {
    pub n: C64,
    pub d: C64,
    pub n_x: C64,
    pub n_xb: C64,
    pub d_x: C64,
    pub d_xb: C64,
}

impl CompJet {
    fn plain(n: C64, n_x: C64, n_xb: C64) -> CompJet {
        CompJet { n, d: C64::from(1.0), n_x, n_xb, d_x: ZERO, d_xb: ZERO }
    }

    pub fn value(&self) -> C64 {
        self.n / self.d
    }

    /// (∂u, ∂̄u)
    pub fn derivs(&self) -> (C64, C64) {
        let d2 = self.d * self.d;
        (
            (self.n_x * self.d - self.n * self.d_x) / d2,
            (self.n_xb * self.d - self.n * self.d_xb) / d2,
        )
    }

    /// Fubini-Study energy density numerator 4(|∂u|² + |∂̄u|²)/(1+|u|²)²,
    /// written without poles.
    fn fs_density(&self) -> f64 {
        let a = (self.n_x * self.d - self.n * self.d_x).norm_sqr();
        let b = (self.n_xb * self.d - self.n * self.d_xb).norm_sqr();
        let s = self.n.norm_sqr() + self.d.norm_sqr();
        4.0 * (a + b) / (s * s)
    }
}

/// c x^a x̄^b
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolyTerm {
    pub c: C64,
    pub a: u32,
    pub b: u32,
}

/// c exp(i(kx Re x + ky Im x))
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrigMode {
    pub c: C64,
    pub kx: f64,
    pub ky: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Component {
    /// (a x + b)/(c x + d); also valid in the second sphere chart.
    Mobius { a: C64, b: C64, c: C64, d: C64 },
    Poly(Vec<PolyTerm>),
    Trig { c0: C64, modes: Vec<TrigMode> },
}

impl Component {
    pub fn constant(v: C64) -> Component {
        Component::Mobius { a: ZERO, b: v, c: ZERO, d: C64::from(1.0) }
    }

    pub fn linear(k: C64, shift: C64) -> Component {
        Component::Mobius { a: k, b: k * shift, c: ZERO, d: C64::from(1.0) }
    }

    fn jet(&self, chart: usize, x: C64) -> Result<CompJet> {
        match self {
            Component::Mobius { a, b, c, d } if a * d == b * c => {
                // degenerate: constant value
                let (n, dd) = if b.norm() + d.norm() > 0.0 { (*b, *d) } else { (*a, *c) };
                Ok(CompJet { n, d: dd, n_x: ZERO, n_xb: ZERO, d_x: ZERO, d_xb: ZERO })
            }
            Component::Mobius { a, b, c, d } => Ok(if chart == 0 {
                CompJet { n: a * x + b, d: c * x + d, n_x: *a, n_xb: ZERO, d_x: *c, d_xb: ZERO }
            } else {
                // x = 1/x': multiply through by x'
                CompJet { n: a + b * x, d: c + d * x, n_x: *b, n_xb: ZERO, d_x: *d, d_xb: ZERO }
            }),
            Component::Poly(terms) => {
                if chart != 0 {
                    return Err(Error::OutOfChart { chart, detail: "polynomial needs chart 0".into() });
                }
                let xb = x.conj();
                let mut n = ZERO;
                let mut nx = ZERO;
                let mut nxb = ZERO;
                for t in terms {
                    let xa = x.powu(t.a);
                    let xbb = xb.powu(t.b);
                    n += t.c * xa * xbb;
                    if t.a > 0 {
                        nx += t.c * t.a as f64 * x.powu(t.a - 1) * xbb;
                    }
                    if t.b > 0 {
                        nxb += t.c * t.b as f64 * xa * xb.powu(t.b - 1);
                    }
                }
                Ok(CompJet::plain(n, nx, nxb))
            }
            Component::Trig { c0, modes } => {
                if chart != 0 {
                    return Err(Error::OutOfChart { chart, detail: "trigonometric map needs chart 0".into() });
                }
                let mut n = *c0;
                let mut nx = ZERO;
                let mut nxb = ZERO;
                for m in modes {
                    let e = m.c * C64::from_polar(1.0, m.kx * x.re + m.ky * x.im);
                    n += e;
                    nx += e * I * C64::new(m.kx, -m.ky) * 0.5;
                    nxb += e * I * C64::new(m.kx, m.ky) * 0.5;
                }
                Ok(CompJet::plain(n, nx, nxb))
            }
        }
    }

    /// Precompose with x ↦ s x + t.
    pub fn compose_affine(&self, s: C64, t: C64) -> Result<Component> {
        match self {
            Component::Mobius { a, b, c, d } => Ok(Component::Mobius { a: a * s, b: a * t + b, c: c * s, d: c * t + d }),
            Component::Poly(terms) if t == ZERO => Ok(Component::Poly(
                terms
                    .iter()
                    .map(|p| PolyTerm { c: p.c * s.powu(p.a) * s.conj().powu(p.b), ..*p })
                    .collect(),
            )),
            _ => Err(Error::Config("affine precomposition supports Möbius components only".into())),
        }
    }

    fn is_holomorphic(&self) -> bool {
        match self {
            Component::Mobius { .. } => true,
            Component::Poly(t) => t.iter().all(|p| p.b == 0 || p.c == ZERO),
            Component::Trig { modes, .. } => modes.is_empty(),
        }
    }
}

/// Closed-form map x ↦ (u¹(x), u²(x)).
#[derive(Clone, Debug, PartialEq)]
pub struct MapSpec {
    pub comps: [Component; 2],
}

impl MapSpec {
    pub fn new(c1: Component, c2: Component) -> MapSpec {
        MapSpec { comps: [c1, c2] }
    }

    pub fn constant(z: Pt) -> MapSpec {
        MapSpec::new(Component::constant(z[0]), Component::constant(z[1]))
    }

    /// x ↦ (x, k x)
    pub fn fs_bubble(k: f64) -> MapSpec {
        MapSpec::new(Component::linear(C64::from(1.0), ZERO), Component::linear(C64::from(k), ZERO))
    }

    /// x ↦ (k x, k² x): concentrates at two nested scales.
    pub fn two_scale(k: f64) -> MapSpec {
        MapSpec::new(Component::linear(C64::from(k), ZERO), Component::linear(C64::from(k * k), ZERO))
    }

    /// x ↦ (k (x - c), k (x + c)): one bubble at each of ±c.
    pub fn two_center(k: f64, c: f64) -> MapSpec {
        MapSpec::new(
            Component::linear(C64::from(k), C64::from(-c)),
            Component::linear(C64::from(k), C64::from(c)),
        )
    }

    /// Sum of monomials per component.
    pub fn poly(p1: &[(C64, u32, u32)], p2: &[(C64, u32, u32)]) -> MapSpec {
        let mk = |p: &[(C64, u32, u32)]| Component::Poly(p.iter().map(|&(c, a, b)| PolyTerm { c, a, b }).collect());
        MapSpec::new(mk(p1), mk(p2))
    }

    /// Precompose with x ↦ s x + t.
    pub fn compose_affine(&self, s: C64, t: C64) -> Result<MapSpec> {
        Ok(MapSpec { comps: [self.comps[0].compose_affine(s, t)?, self.comps[1].compose_affine(s, t)?] })
    }

    pub fn is_holomorphic(&self) -> bool {
        self.comps.iter().all(|c| c.is_holomorphic())
    }

    /// The same map written in the coordinate of sphere chart `chart`
    /// (x' = 1/x for chart 1). Only Möbius components can be rewritten.
    pub fn in_chart(&self, chart: usize) -> Result<MapSpec> {
        if chart == 0 {
            return Ok(self.clone());
        }
        let flip = |c: &Component| match c {
            Component::Mobius { a, b, c, d } => Ok(Component::Mobius { a: *b, b: *a, c: *d, d: *c }),
            _ => Err(Error::Config("only Möbius components can change sphere chart".into())),
        };
        Ok(MapSpec { comps: [flip(&self.comps[0])?, flip(&self.comps[1])?] })
    }

    pub fn jet(&self, chart: usize, x: C64) -> Result<[CompJet; 2]> {
        Ok([self.comps[0].jet(chart, x)?, self.comps[1].jet(chart, x)?])
    }

    /// Smooth trigonometric map with random low modes around `base`.
    /// Wave numbers are multiples of 2π/period so the map is periodic on the torus.
    pub fn random_trig(seed: u64, base: Pt, amplitude: f64, period: f64, modes: usize) -> MapSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k0 = 2.0 * PI / period;
        let mut comp = |c0: C64| {
            let ms = (0..modes)
                .map(|_| {
                    let kx = rng.gen_range(-2i32..=2) as f64 * k0;
                    let ky = rng.gen_range(-2i32..=2) as f64 * k0;
                    let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * (amplitude / modes as f64);
                    TrigMode { c, kx, ky }
                })
                .collect();
            Component::Trig { c0, modes: ms }
        };
        let c1 = comp(base[0]);
        let c2 = comp(base[1]);
        MapSpec::new(c1, c2)
    }

    /// Energy density e(f) from the closed form (exact derivatives).
    pub fn energy_density(&self, target: &HermitianTarget, chart: usize, x: C64, lambda: f64) -> Result<f64> {
        let j = self.jet(chart, x)?;
        let l2 = lambda * lambda;
        match target.id {
            TargetId::FsProduct => Ok((j[0].fs_density() + j[1].fs_density()) / l2),
            TargetId::FlatC2 | TargetId::Hopf => {
                let z = [j[0].value(), j[1].value()];
                let (d0, db0) = j[0].derivs();
                let (d1, db1) = j[1].derivs();
                let h = target.metric(0, z)?;
                Ok((hnorm_sqr(&h, &[d0, d1]) + hnorm_sqr(&h, &[db0, db1])) / l2)
            }
        }
    }
}

/// Target chart and coordinates of a component pair given as ratios.
pub(crate) fn place(target: &HermitianTarget, jet: &[CompJet; 2]) -> Result<(u8, Pt)> {
    match target.id {
        TargetId::FsProduct => {
            let mut chart = 0u8;
            let mut z = [ZERO; 2];
            for m in 0..2 {
                let (n, d) = (jet[m].n, jet[m].d);
                if n.norm() > d.norm() {
                    chart |= 1 << m;
                    z[m] = d / n;
                } else {
                    z[m] = n / d;
                }
                if !z[m].is_finite() {
                    return Err(Error::OutOfChart { chart: chart as usize, detail: "indeterminate value".into() });
                }
            }
            Ok((chart, z))
        }
        _ => {
            let z = [jet[0].value(), jet[1].value()];
            if !(z[0].is_finite() && z[1].is_finite()) {
                return Err(Error::OutOfChart { chart: 0, detail: "pole in closed form".into() });
            }
            if target.id == TargetId::Hopf && z[0].norm_sqr() + z[1].norm_sqr() < 1e-200 {
                return Err(Error::OutOfChart { chart: 0, detail: "z = 0".into() });
            }
            Ok((0, z))
        }
    }
}

#[derive(Clone, Debug)]
pub struct MapState {
    pub domain: Arc<DomainChart>,
    pub target: HermitianTarget,
    pub points: Vec<Pt>,
    pub chart_ids: Vec<u8>,
    /// Generator, kept when the map is an exact closed form.
    pub spec: Option<MapSpec>,
}

impl MapState {
    pub fn from_spec(domain: Arc<DomainChart>, target: HermitianTarget, spec: &MapSpec) -> Result<MapState> {
        if matches!(domain.spec, DomainSpec::SpherePair { .. })
            && spec.comps.iter().any(|c| !matches!(c, Component::Mobius { .. }))
        {
            return Err(Error::Config("sphere-pair maps must be Möbius per component".into()));
        }
        let placed: Vec<Result<(u8, Pt)>> = (0..domain.len())
            .into_par_iter()
            .map(|p| {
                let pt = domain.point(p);
                place(&target, &spec.jet(pt.chart, pt.x)?)
            })
            .collect();
        let mut points = Vec::with_capacity(placed.len());
        let mut chart_ids = Vec::with_capacity(placed.len());
        for r in placed {
            let (c, z) = r?;
            points.push(z);
            chart_ids.push(c);
        }
        Ok(MapState { domain, target, points, chart_ids, spec: Some(spec.clone()) })
    }

    pub fn from_points(domain: Arc<DomainChart>, target: HermitianTarget, points: Vec<Pt>, chart_ids: Vec<u8>) -> Result<MapState> {
        if points.len() != domain.len() || chart_ids.len() != domain.len() {
            return Err(Error::Snapshot("point count does not match grid".into()));
        }
        if chart_ids.iter().any(|&c| c as usize >= target.chart_count()) {
            return Err(Error::Snapshot("chart id out of range".into()));
        }
        Ok(MapState { domain, target, points, chart_ids, spec: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|z| z[0].is_finite() && z[1].is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.points.iter().map(|z| z[0].norm().max(z[1].norm())).fold(0.0, f64::max)
    }

    /// Distinct target charts in use, ascending.
    pub fn charts_present(&self) -> Vec<u8> {
        let mut seen = [false; 4];
        for &c in &self.chart_ids {
            seen[c as usize] = true;
        }
        (0..4u8).filter(|&c| seen[c as usize]).collect()
    }

    /// Every point expressed in target chart `c`; NaN where the point is
    /// outside that chart's domain.
    pub fn view(&self, c: u8) -> Vec<Pt> {
        let nan = C64::new(f64::NAN, f64::NAN);
        self.points
            .iter()
            .zip(&self.chart_ids)
            .map(|(z, &from)| {
                if from == c {
                    return *z;
                }
                let w = self.target.convert_unchecked(from as usize, c as usize, *z);
                let ok = match self.target.id {
                    TargetId::FsProduct => w[0].norm() < FS_CHART_RADIUS && w[1].norm() < FS_CHART_RADIUS,
                    _ => w[0].is_finite() && w[1].is_finite(),
                };
                if ok {
                    w
                } else {
                    [nan, nan]
                }
            })
            .collect()
    }

    /// Move every point to its preferred chart.
    pub fn reassign_charts(&mut self) {
        for (z, c) in self.points.iter_mut().zip(self.chart_ids.iter_mut()) {
            let (nc, nz) = self.target.assign_chart(*c as usize, *z);
            *c = nc as u8;
            *z = nz;
        }
    }

    /// Map value at a domain coordinate: exact for closed forms, otherwise
    /// interpolated within the chart of the nearest grid point.
    pub fn sample(&self, chart: usize, x: C64) -> Result<(u8, Pt)> {
        if let Some(spec) = &self.spec {
            return place(&self.target, &spec.jet(chart, x)?);
        }
        let d = &self.domain;
        let n = d.n;
        let u = ((x.re - d.origin()) / d.h).round();
        let v = ((x.im - d.origin()) / d.h).round();
        let (ix, iy) = if d.is_periodic() {
            ((u as i64).rem_euclid(n as i64) as usize, (v as i64).rem_euclid(n as i64) as usize)
        } else {
            if u < 0.0 || v < 0.0 || u > (n - 1) as f64 || v > (n - 1) as f64 {
                return Err(Error::ResampleOutOfDomain);
            }
            (u as usize, v as usize)
        };
        let c = self.chart_ids[chart * n * n + iy * n + ix];
        let view = self.view(c);
        let mut out = [ZERO; 2];
        for m in 0..2 {
            let f: Vec<C64> = view.iter().map(|z| z[m]).collect();
            out[m] = d.interpolate(&f, chart, x).ok_or(Error::ResampleOutOfDomain)?;
            if !out[m].is_finite() {
                return Err(Error::ResampleOutOfDomain);
            }
        }
        Ok((c, out))
    }

    /// Energy density from the closed form when available.
    pub fn exact_energy_density(&self) -> Option<Result<Vec<f64>>> {
        let spec = self.spec.as_ref()?;
        let d = &self.domain;
        let r: Result<Vec<f64>> = (0..d.len())
            .into_par_iter()
            .map(|p| {
                let pt = d.point(p);
                spec.energy_density(&self.target, pt.chart, pt.x, d.lambda[p])
            })
            .collect();
        Some(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DiskMetric;

    fn sphere(n: usize) -> Arc<DomainChart> {
        Arc::new(DomainChart::new(DomainSpec::SpherePair { n }).unwrap())
    }

    #[test]
    fn fs_bubble_energy_is_eight_pi() {
        let d = sphere(128);
        let t = HermitianTarget::new(TargetId::FsProduct);
        for k in [1.0, 3.0] {
            let m = MapState::from_spec(d.clone(), t, &MapSpec::fs_bubble(k)).unwrap();
            let e = m.exact_energy_density().unwrap().unwrap();
            let total = d.integrate(&e, None).unwrap();
            assert!((total - 8.0 * PI).abs() < 1e-3, "k={k}: {total}");
        }
    }

    #[test]
    fn chart_assignment_inverts_large_values() {
        let d = sphere(16);
        let t = HermitianTarget::new(TargetId::FsProduct);
        let m = MapState::from_spec(d.clone(), t, &MapSpec::fs_bubble(4.0)).unwrap();
        for p in 0..m.len() {
            assert!(m.points[p][0].norm() <= 1.0 + 1e-12 && m.points[p][1].norm() <= 1.0 + 1e-12);
        }
        assert!(m.charts_present().len() >= 2);
    }

    #[test]
    fn trig_jet_matches_finite_differences() {
        let s = MapSpec::random_trig(7, [C64::new(1.0, 0.0), ZERO], 0.3, 1.0, 4);
        let x = C64::new(0.31, 0.17);
        let j = s.jet(0, x).unwrap();
        let e = 1e-6;
        let u = |x: C64| s.jet(0, x).unwrap()[0].value();
        let dx = (u(x + e) - u(x - e)) / (2.0 * e);
        let dy = (u(x + I * e) - u(x - I * e)) / (2.0 * e);
        let (d, db) = j[0].derivs();
        assert!((d - (dx - I * dy) * 0.5).norm() < 1e-8);
        assert!((db - (dx + I * dy) * 0.5).norm() < 1e-8);
    }

    #[test]
    fn mobius_composition() {
        let s = MapSpec::fs_bubble(2.0).compose_affine(C64::from(0.5), C64::new(0.1, 0.0)).unwrap();
        let x = C64::new(0.3, -0.2);
        let v = s.jet(0, x).unwrap()[1].value();
        assert!((v - 2.0 * (0.5 * x + 0.1)).norm() < 1e-14);
        // second sphere chart evaluates at 1/x'
        let w = s.jet(1, x.inv()).unwrap()[1].value();
        assert!((w - v).norm() < 1e-12);
    }

    #[test]
    fn flat_sample_interpolates() {
        let d = Arc::new(
            DomainChart::new(DomainSpec::Disk { n: 32, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } }).unwrap(),
        );
        let t = HermitianTarget::new(TargetId::FlatC2);
        let spec = MapSpec::poly(&[(C64::from(1.0), 2, 0)], &[(C64::from(1.0), 0, 1)]);
        let mut m = MapState::from_spec(d, t, &spec).unwrap();
        m.spec = None;
        let x = C64::new(0.21, 0.33);
        let (_, z) = m.sample(0, x).unwrap();
        assert!((z[0] - x * x).norm() < 1e-12 && (z[1] - x.conj()).norm() < 1e-12);
    }
}
