//! Conformal coordinate grids on the source surface.
//!
//! A chart carries ds² = λ² |dx|². Grids are N×N, row-major (`iy * N + ix`).
//! `SpherePair` stores two stereographic grids back to back: chart 0 uses the
//! coordinate x (x = 0 is the north pole), chart 1 uses x' = 1/x.

use crate::error::{Error, Result};
use crate::target::{C64, I, ZERO};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiskMetric {
    /// λ ≡ scale
    Flat { scale: f64 },
    /// λ = 2/(1+|x|²), K ≡ 1
    Spherical,
    /// λ = 2/(1-|x|²), K ≡ -1
    Hyperbolic,
}

impl DiskMetric {
    pub fn lambda(&self, x: C64) -> f64 {
        match *self {
            DiskMetric::Flat { scale } => scale,
            DiskMetric::Spherical => 2.0 / (1.0 + x.norm_sqr()),
            DiskMetric::Hyperbolic => 2.0 / (1.0 - x.norm_sqr()),
        }
    }

    /// ∂ log λ
    pub fn dlog_lambda(&self, x: C64) -> C64 {
        match *self {
            DiskMetric::Flat { .. } => ZERO,
            DiskMetric::Spherical => -x.conj() / (1.0 + x.norm_sqr()),
            DiskMetric::Hyperbolic => x.conj() / (1.0 - x.norm_sqr()),
        }
    }

    pub fn curvature(&self) -> f64 {
        match *self {
            DiskMetric::Flat { .. } => 0.0,
            DiskMetric::Spherical => 1.0,
            DiskMetric::Hyperbolic => -1.0,
        }
    }

    fn geodesic_distance(&self, x: C64, c: C64) -> f64 {
        match *self {
            DiskMetric::Flat { scale } => scale * (x - c).norm(),
            DiskMetric::Spherical => sphere_angle(stereo_to_s2(x), stereo_to_s2(c)),
            DiskMetric::Hyperbolic => {
                let a = 1.0 + 2.0 * (x - c).norm_sqr() / ((1.0 - x.norm_sqr()) * (1.0 - c.norm_sqr()));
                a.max(1.0).acosh()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Torus { n: usize, period: f64 },
    Disk { n: usize, radius: f64, metric: DiskMetric },
    SpherePair { n: usize },
}

impl DomainSpec {
    pub fn n(&self) -> usize {
        match *self {
            DomainSpec::Torus { n, .. } | DomainSpec::Disk { n, .. } | DomainSpec::SpherePair { n } => n,
        }
    }

    pub fn with_n(&self, n: usize) -> DomainSpec {
        match *self {
            DomainSpec::Torus { period, .. } => DomainSpec::Torus { n, period },
            DomainSpec::Disk { radius, metric, .. } => DomainSpec::Disk { n, radius, metric },
            DomainSpec::SpherePair { .. } => DomainSpec::SpherePair { n },
        }
    }

    pub fn charts(&self) -> usize {
        match self {
            DomainSpec::SpherePair { .. } => 2,
            _ => 1,
        }
    }
}

/// A point of the source surface: chart index and coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainPoint {
    pub chart: usize,
    pub x: C64,
}

/// Soft region weights in [0, 1], one per grid point.
pub type Mask = Vec<f64>;

#[derive(Clone, Debug)]
pub enum Loop {
    Circle { center: C64, radius: f64, samples: usize },
    /// Closed polygon; first and last vertex must coincide.
    Polygon(Vec<C64>),
}

pub struct DomainChart {
    pub spec: DomainSpec,
    pub n: usize,
    pub h: f64,
    pub coords: Vec<C64>,
    pub lambda: Vec<f64>,
    /// ∂ log λ per point (∂̄ log λ is its conjugate).
    pub dlog_lambda: Vec<C64>,
    /// Closed-form Gaussian curvature.
    pub curvature: Vec<f64>,
    /// Quadrature weight: cell area times partition of unity.
    pub quad: Vec<f64>,
    /// Soft membership of the principal region (disk for `Disk`, 1 otherwise).
    pub inside: Vec<f64>,
    /// Grid points whose values are free (Dirichlet interior / owned sphere region).
    pub interior: Vec<bool>,
    fft: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl std::fmt::Debug for DomainChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DomainChart").field("spec", &self.spec).field("h", &self.h).finish()
    }
}

/// Smooth step on the log-radius: 0 for |x| ≤ 1/2, 1 for |x| ≥ 2, s(-u) = 1 - s(u).
fn log_step(u: f64) -> f64 {
    let a = 2f64.ln();
    let t = (u + a) / (2.0 * a);
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let g = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    g(t) / (g(t) + g(1.0 - t))
}

/// Partition-of-unity weight of a sphere chart point.
pub fn sphere_partition(x: C64) -> f64 {
    let r = x.norm();
    if r == 0.0 {
        return 1.0;
    }
    1.0 - log_step(r.ln())
}

/// Inverse southern stereographic projection: x = 0 ↦ north pole.
pub fn stereo_to_s2(x: C64) -> [f64; 3] {
    let r2 = x.norm_sqr();
    [2.0 * x.re / (1.0 + r2), 2.0 * x.im / (1.0 + r2), (1.0 - r2) / (1.0 + r2)]
}

fn sphere_angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    // chord-based formula is stable for small angles
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    2.0 * (0.5 * d).min(1.0).asin()
}

/// Point of the Riemann sphere for a sphere-chart point.
pub fn sphere_point_to_s2(p: DomainPoint) -> [f64; 3] {
    let v = stereo_to_s2(p.x);
    if p.chart == 0 {
        v
    } else {
        // x' = 1/x: conjugation-free inversion flips z and reflects y
        [v[0], -v[1], -v[2]]
    }
}

impl DomainChart {
    pub fn new(spec: DomainSpec) -> Result<DomainChart> {
        let n = spec.n();
        if n < 8 {
            return Err(Error::ResolutionTooSmall(n));
        }
        let charts = spec.charts();
        let g = charts * n * n;
        let (h, x0) = match spec {
            DomainSpec::Torus { period, .. } => (period / n as f64, 0.0),
            DomainSpec::Disk { radius, .. } => (2.0 * radius / n as f64, -radius),
            DomainSpec::SpherePair { .. } => (4.0 / n as f64, -2.0),
        };
        let mut coords = Vec::with_capacity(g);
        for _c in 0..charts {
            for iy in 0..n {
                for ix in 0..n {
                    coords.push(C64::new(x0 + ix as f64 * h, x0 + iy as f64 * h));
                }
            }
        }
        let mut lambda = vec![1.0; g];
        let mut dlog = vec![ZERO; g];
        let mut curv = vec![0.0; g];
        let mut quad = vec![h * h; g];
        let mut inside = vec![1.0; g];
        let mut interior = vec![true; g];
        match spec {
            DomainSpec::Torus { .. } => {}
            DomainSpec::Disk { radius, metric, .. } => {
                if let DiskMetric::Hyperbolic = metric {
                    if radius * 2f64.sqrt() >= 1.0 {
                        return Err(Error::RadiusTooLarge { r: radius, bound: 1.0 / 2f64.sqrt() });
                    }
                }
                for p in 0..g {
                    let x = coords[p];
                    lambda[p] = metric.lambda(x);
                    dlog[p] = metric.dlog_lambda(x);
                    curv[p] = metric.curvature();
                    inside[p] = (0.5 + (radius - x.norm()) / h).clamp(0.0, 1.0);
                    // keep free points where the composed stencils are centered and
                    // outside the reach of the edge closures
                    let (ix, iy) = (p % n, p / n);
                    let clear = (5..n - 5).contains(&ix) && (5..n - 5).contains(&iy);
                    interior[p] = clear && x.norm() < radius - 4.0 * h;
                }
            }
            DomainSpec::SpherePair { .. } => {
                for p in 0..g {
                    let x = coords[p];
                    lambda[p] = DiskMetric::Spherical.lambda(x);
                    dlog[p] = DiskMetric::Spherical.dlog_lambda(x);
                    curv[p] = 1.0;
                    quad[p] = h * h * sphere_partition(x);
                    // chart 0 owns |x| <= 1, chart 1 owns |x'| < 1
                    interior[p] = if p < n * n { x.norm() <= 1.0 } else { x.norm() < 1.0 };
                }
            }
        }
        let fft = match spec {
            DomainSpec::Torus { .. } => {
                let mut planner = FftPlanner::new();
                Some((planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
            }
            _ => None,
        };
        Ok(DomainChart {
            spec,
            n,
            h,
            coords,
            lambda,
            dlog_lambda: dlog,
            curvature: curv,
            quad,
            inside,
            interior,
            fft,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn charts(&self) -> usize {
        self.spec.charts()
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.spec, DomainSpec::Torus { .. })
    }

    pub fn chart_of(&self, p: usize) -> usize {
        p / (self.n * self.n)
    }

    pub fn point(&self, p: usize) -> DomainPoint {
        DomainPoint { chart: self.chart_of(p), x: self.coords[p] }
    }

    /// Lower-left coordinate of the grid.
    pub fn origin(&self) -> f64 {
        match self.spec {
            DomainSpec::Torus { .. } => 0.0,
            DomainSpec::Disk { radius, .. } => -radius,
            DomainSpec::SpherePair { .. } => -2.0,
        }
    }

    /// Derivatives d/dx and d/dy of a complex field, chart by chart.
    pub fn d_xy(&self, f: &[C64]) -> (Vec<C64>, Vec<C64>) {
        assert_eq!(f.len(), self.len());
        let n = self.n;
        let mut dx = vec![ZERO; f.len()];
        let mut dy = vec![ZERO; f.len()];
        for c in 0..self.charts() {
            let r = c * n * n..(c + 1) * n * n;
            let slab = &f[r.clone()];
            self.d_lines(slab, &mut dx[r.clone()], false);
            self.d_lines(slab, &mut dy[r], true);
        }
        (dx, dy)
    }

    fn d_lines(&self, slab: &[C64], out: &mut [C64], along_y: bool) {
        let n = self.n;
        let h = self.h;
        let lines: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|l| {
                let line: Vec<C64> = (0..n)
                    .map(|j| if along_y { slab[j * n + l] } else { slab[l * n + j] })
                    .collect();
                match &self.fft {
                    Some((fwd, inv)) => spectral_derivative(&line, h * n as f64, fwd, inv),
                    None => stencil_derivative(&line, h),
                }
            })
            .collect();
        for (l, d) in lines.into_iter().enumerate() {
            for j in 0..n {
                if along_y {
                    out[j * n + l] = d[j];
                } else {
                    out[l * n + j] = d[j];
                }
            }
        }
    }

    /// Wirtinger derivatives (∂f, ∂̄f) against dx, dx̄.
    pub fn d_complex(&self, f: &[C64]) -> Result<(Vec<C64>, Vec<C64>)> {
        if self.n < 8 {
            return Err(Error::ResolutionTooSmall(self.n));
        }
        let (dx, dy) = self.d_xy(f);
        let d: Vec<C64> = dx.iter().zip(&dy).map(|(a, b)| (a - I * b) * 0.5).collect();
        let db: Vec<C64> = dx.iter().zip(&dy).map(|(a, b)| (a + I * b) * 0.5).collect();
        Ok((d, db))
    }

    /// ∂∂̄ of a real field, by composing first derivatives.
    pub fn ddbar_real(&self, f: &[f64]) -> Vec<f64> {
        let fc: Vec<C64> = f.iter().map(|&v| C64::from(v)).collect();
        let (d, _) = self.d_complex(&fc).expect("resolution checked at construction");
        let (_, dbd) = self.d_complex(&d).expect("resolution checked at construction");
        dbd.iter().map(|v| v.re).collect()
    }

    /// K = -(4/λ²) ∂∂̄ log λ computed with the grid derivatives.
    pub fn gauss_curvature(&self) -> Vec<f64> {
        let logl: Vec<f64> = self.lambda.iter().map(|l| l.ln()).collect();
        let dd = self.ddbar_real(&logl);
        dd.iter().zip(&self.lambda).map(|(v, l)| -4.0 * v / (l * l)).collect()
    }

    /// ∫ field dA over the principal region, optionally restricted by a mask.
    pub fn integrate(&self, field: &[f64], mask: Option<&[f64]>) -> Result<f64> {
        assert_eq!(field.len(), self.len());
        let mut total = 0.0;
        let mut support = 0.0;
        // sequential row sums keep the result independent of thread count
        let rows: Vec<(f64, f64)> = (0..self.len() / self.n)
            .into_par_iter()
            .map(|row| {
                let mut s = 0.0;
                let mut w = 0.0;
                for p in row * self.n..(row + 1) * self.n {
                    let m = self.inside[p] * mask.map_or(1.0, |m| m[p]);
                    if m == 0.0 || self.quad[p] == 0.0 {
                        continue;
                    }
                    let wt = m * self.quad[p] * self.lambda[p] * self.lambda[p];
                    s += wt * field[p];
                    w += wt;
                }
                (s, w)
            })
            .collect();
        for (s, w) in rows {
            total += s;
            support += w;
        }
        if support == 0.0 {
            return Err(Error::EmptyRegion);
        }
        Ok(total)
    }

    /// ∫ field dA over the whole computational grid, ignoring the region
    /// mask (for `Disk` this includes the corners of the square).
    pub fn integrate_grid(&self, field: &[f64]) -> f64 {
        let rows: Vec<f64> = (0..self.len() / self.n)
            .into_par_iter()
            .map(|row| {
                (row * self.n..(row + 1) * self.n)
                    .map(|p| self.quad[p] * self.lambda[p] * self.lambda[p] * field[p])
                    .sum()
            })
            .collect();
        rows.iter().sum()
    }

    /// Geodesic distance from a chart point to every grid point.
    pub fn geodesic_distances(&self, center: DomainPoint) -> Vec<f64> {
        let n2 = self.n * self.n;
        (0..self.len())
            .map(|p| match self.spec {
                DomainSpec::Torus { period, .. } => {
                    let d = self.coords[p] - center.x;
                    let wrap = |v: f64| v - period * (v / period).round();
                    C64::new(wrap(d.re), wrap(d.im)).norm()
                }
                DomainSpec::Disk { metric, .. } => metric.geodesic_distance(self.coords[p], center.x),
                DomainSpec::SpherePair { .. } => {
                    let a = sphere_point_to_s2(DomainPoint { chart: p / n2, x: self.coords[p] });
                    sphere_angle(a, sphere_point_to_s2(center))
                }
            })
            .collect()
    }

    /// Soft mask of the geodesic disk of radius r about `center`.
    pub fn geodesic_disk_mask(&self, center: DomainPoint, r: f64) -> Result<Mask> {
        let bound = self.radius_bound(center);
        if !(r > 0.0) || r > bound {
            return Err(Error::RadiusTooLarge { r, bound });
        }
        let d = self.geodesic_distances(center);
        Ok(d.iter()
            .zip(&self.lambda)
            .map(|(&dist, &l)| (0.5 + (r - dist) / (l * self.h)).clamp(0.0, 1.0))
            .collect())
    }

    /// Geodesic distance between two surface points.
    pub fn distance(&self, a: DomainPoint, b: DomainPoint) -> f64 {
        match self.spec {
            DomainSpec::Torus { period, .. } => {
                let d = a.x - b.x;
                let wrap = |v: f64| v - period * (v / period).round();
                C64::new(wrap(d.re), wrap(d.im)).norm()
            }
            DomainSpec::Disk { metric, .. } => metric.geodesic_distance(a.x, b.x),
            DomainSpec::SpherePair { .. } => sphere_angle(sphere_point_to_s2(a), sphere_point_to_s2(b)),
        }
    }

    /// Conformal factor at an arbitrary chart coordinate.
    pub fn lambda_at(&self, x: C64) -> f64 {
        match self.spec {
            DomainSpec::Torus { .. } => 1.0,
            DomainSpec::Disk { metric, .. } => metric.lambda(x),
            DomainSpec::SpherePair { .. } => DiskMetric::Spherical.lambda(x),
        }
    }

    /// Coordinate of `p` expressed in chart `chart` (sphere charts invert),
    /// with the stretch factor |dy/dx| of that change of chart.
    pub fn coordinate_in(&self, p: DomainPoint, chart: usize) -> (C64, f64) {
        if p.chart == chart || !matches!(self.spec, DomainSpec::SpherePair { .. }) {
            return (p.x, 1.0);
        }
        if p.x.norm_sqr() == 0.0 {
            return (C64::new(f64::INFINITY, 0.0), f64::INFINITY);
        }
        (1.0 / p.x, 1.0 / p.x.norm_sqr())
    }

    /// Soft mask of the coordinate disk |y - c| < r, where y is the
    /// coordinate of the center's chart (both sphere charts are covered).
    pub fn coordinate_disk_mask(&self, center: DomainPoint, r: f64) -> Mask {
        let n2 = self.n * self.n;
        (0..self.len())
            .into_par_iter()
            .map(|p| {
                let (y, jac) = self.coordinate_in(DomainPoint { chart: p / n2, x: self.coords[p] }, center.chart);
                if !y.is_finite() {
                    return 0.0;
                }
                let mut d = y - center.x;
                if let DomainSpec::Torus { period, .. } = self.spec {
                    let wrap = |v: f64| v - period * (v / period).round();
                    d = C64::new(wrap(d.re), wrap(d.im));
                }
                (0.5 + (r - d.norm()) / (self.h * jac)).clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Largest admissible geodesic radius about a point.
    pub fn radius_bound(&self, center: DomainPoint) -> f64 {
        match self.spec {
            DomainSpec::Torus { period, .. } => 0.5 * period,
            DomainSpec::SpherePair { .. } => PI,
            DomainSpec::Disk { radius, metric, .. } => {
                if center.x.norm() >= radius {
                    return 0.0;
                }
                (0..512)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / 512.0;
                        metric.geodesic_distance(C64::from_polar(radius, t), center.x)
                    })
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Arc length ∮ speed(x, dx/dt) dt of a closed loop; `speed` returns the
    /// length of the image velocity for domain velocity dx/dt.
    pub fn boundary_length<F>(&self, lp: &Loop, speed: F) -> Result<f64>
    where
        F: Fn(C64, C64) -> f64 + Sync,
    {
        match lp {
            Loop::Circle { center, radius, samples } => {
                let m = (*samples).max(8);
                let dt = 2.0 * PI / m as f64;
                let vals: Vec<f64> = (0..m)
                    .into_par_iter()
                    .map(|k| {
                        let e = C64::from_polar(1.0, k as f64 * dt);
                        speed(center + radius * e, I * radius * e)
                    })
                    .collect();
                Ok(vals.iter().sum::<f64>() * dt)
            }
            Loop::Polygon(v) => {
                if v.len() < 3 || (v[0] - v[v.len() - 1]).norm() > 1e-12 {
                    return Err(Error::OpenCurve);
                }
                // 3-point Gauss on each segment
                let gx = [0.5 - 0.5 * (0.6f64).sqrt(), 0.5, 0.5 + 0.5 * (0.6f64).sqrt()];
                let gw = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
                let mut total = 0.0;
                for s in v.windows(2) {
                    let d = s[1] - s[0];
                    for k in 0..3 {
                        total += gw[k] * speed(s[0] + d * gx[k], d);
                    }
                }
                Ok(total)
            }
        }
    }

    /// Tensor-product Lagrange interpolation (6 points per axis) of a field
    /// on one chart at coordinate x. Returns None outside the grid.
    pub fn interpolate(&self, field: &[C64], chart: usize, x: C64) -> Option<C64> {
        let n = self.n;
        let slab = &field[chart * n * n..(chart + 1) * n * n];
        let x0 = self.origin();
        let u = (x.re - x0) / self.h;
        let v = (x.im - x0) / self.h;
        let (ix, wx) = lagrange_weights(u, n, self.is_periodic())?;
        let (iy, wy) = lagrange_weights(v, n, self.is_periodic())?;
        let mut s = ZERO;
        for (a, &wa) in wy.iter().enumerate() {
            let row = wrap_index(iy + a as isize, n);
            for (b, &wb) in wx.iter().enumerate() {
                let col = wrap_index(ix + b as isize, n);
                s += slab[row * n + col] * (wa * wb);
            }
        }
        Some(s)
    }
}

fn wrap_index(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Stencil start and weights for 6-point Lagrange interpolation at grid
/// position u (in cells).
fn lagrange_weights(u: f64, n: usize, periodic: bool) -> Option<(isize, [f64; 6])> {
    if !u.is_finite() {
        return None;
    }
    let base = u.floor() as isize;
    let mut start = base - 2;
    if !periodic {
        if u < -1e-9 || u > (n - 1) as f64 + 1e-9 {
            return None;
        }
        start = start.clamp(0, n as isize - 6);
    }
    let mut w = [0.0; 6];
    for (k, wk) in w.iter_mut().enumerate() {
        let xk = (start + k as isize) as f64;
        let mut p = 1.0;
        for j in 0..6 {
            if j != k {
                let xj = (start + j as isize) as f64;
                p *= (u - xj) / (xk - xj);
            }
        }
        *wk = p;
    }
    Some((start, w))
}

/// Fourth-order centered differences with one-sided closures at both ends.
pub fn stencil_derivative(f: &[C64], h: f64) -> Vec<C64> {
    let n = f.len();
    let s = 1.0 / (12.0 * h);
    let mut d = vec![ZERO; n];
    for j in 2..n - 2 {
        d[j] = ((f[j + 1] - f[j - 1]) * 8.0 - (f[j + 2] - f[j - 2])) * s;
    }
    // differences against the base point keep constants exactly stationary
    let left = |g: &dyn Fn(usize) -> C64| {
        let e0 = (g(1) - g(0)) * 48.0 - (g(2) - g(0)) * 36.0 + (g(3) - g(0)) * 16.0 - (g(4) - g(0)) * 3.0;
        let e1 = (g(0) - g(1)) * -3.0 + (g(2) - g(1)) * 18.0 - (g(3) - g(1)) * 6.0 + (g(4) - g(1));
        (e0 * s, e1 * s)
    };
    let (d0, d1) = left(&|j| f[j]);
    d[0] = d0;
    d[1] = d1;
    let m = n - 1;
    let (e0, e1) = left(&|j| f[m - j]);
    d[m] = -e0;
    d[m - 1] = -e1;
    d
}

fn spectral_derivative(
    f: &[C64],
    period: f64,
    fwd: &Arc<dyn Fft<f64>>,
    inv: &Arc<dyn Fft<f64>>,
) -> Vec<C64> {
    let n = f.len();
    let f0 = f[0];
    let mut buf: Vec<C64> = f.iter().map(|v| v - f0).collect();
    fwd.process(&mut buf);
    let k0 = 2.0 * PI / period;
    for (j, b) in buf.iter_mut().enumerate() {
        let k = if j < n / 2 {
            j as f64
        } else if j == n / 2 {
            0.0
        } else {
            j as f64 - n as f64
        };
        *b *= I * (k * k0) / n as f64;
    }
    inv.process(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(n: usize, metric: DiskMetric) -> DomainChart {
        DomainChart::new(DomainSpec::Disk { n, radius: 0.7, metric }).unwrap()
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(matches!(
            DomainChart::new(DomainSpec::Torus { n: 4, period: 1.0 }),
            Err(Error::ResolutionTooSmall(4))
        ));
    }

    #[test]
    fn spectral_derivative_of_plane_wave() {
        let d = DomainChart::new(DomainSpec::Torus { n: 32, period: 1.0 }).unwrap();
        let f: Vec<C64> = d.coords.iter().map(|x| C64::from_polar(1.0, 2.0 * PI * x.re)).collect();
        let (df, dbf) = d.d_complex(&f).unwrap();
        for p in 0..d.len() {
            // ∂ = ∂̄ = (1/2) d/dx for a function of Re x
            let exact = I * PI * f[p];
            assert!((df[p] - exact).norm() < 1e-12);
            assert!((dbf[p] - exact).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_and_modulus_square() {
        let d = disk(64, DiskMetric::Flat { scale: 1.0 });
        let f: Vec<C64> = d.coords.clone();
        let (df, dbf) = d.d_complex(&f).unwrap();
        assert!(df.iter().all(|v| (v - 1.0).norm() < 1e-12));
        assert!(dbf.iter().all(|v| v.norm() < 1e-12));
        let g: Vec<C64> = d.coords.iter().map(|x| C64::from(x.norm_sqr())).collect();
        let (dg, dbg) = d.d_complex(&g).unwrap();
        for p in 0..d.len() {
            assert!((dg[p] - d.coords[p].conj()).norm() < 1e-11);
            assert!((dbg[p] - d.coords[p]).norm() < 1e-11);
        }
    }

    #[test]
    fn constant_curvatures() {
        for (m, k) in [
            (DiskMetric::Flat { scale: 1.0 }, 0.0),
            (DiskMetric::Spherical, 1.0),
            (DiskMetric::Hyperbolic, -1.0),
        ] {
            let d = disk(128, m);
            let kk = d.gauss_curvature();
            let err = (0..d.len())
                .filter(|&p| d.coords[p].norm() < 0.5)
                .map(|p| (kk[p] - k).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-4, "{m:?}: {err}");
        }
    }

    #[test]
    fn sphere_area_and_hemisphere() {
        let d = DomainChart::new(DomainSpec::SpherePair { n: 128 }).unwrap();
        let one = vec![1.0; d.len()];
        let area = d.integrate(&one, None).unwrap();
        assert!((area - 4.0 * PI).abs() < 1e-6, "{area}");
        let north = DomainPoint { chart: 0, x: ZERO };
        let m = d.geodesic_disk_mask(north, PI / 2.0).unwrap();
        let hemi = d.integrate(&one, Some(&m)).unwrap();
        assert!((hemi - 2.0 * PI).abs() < 1e-4, "{hemi}");
        assert!(d.geodesic_disk_mask(north, 4.0).is_err());
    }

    #[test]
    fn coordinate_disks_span_both_sphere_charts() {
        let d = DomainChart::new(DomainSpec::SpherePair { n: 256 }).unwrap();
        let one = vec![1.0; d.len()];
        for (chart, c, r) in [(0, ZERO, 0.5), (0, ZERO, 1.5), (1, C64::new(0.2, -0.1), 0.3), (0, C64::new(0.9, 0.0), 0.8)] {
            let m = d.coordinate_disk_mask(DomainPoint { chart, x: c }, r);
            let area = d.integrate(&one, Some(&m)).unwrap();
            // stereographic images of circles are caps; the angular radius is half
            // the angle between the images of the two points c ± r on the ray
            let (a, b) = (c.norm() - r, c.norm() + r);
            let theta = b.atan() - a.atan();
            let exact = 2.0 * PI * (1.0 - theta.cos());
            assert!((area - exact).abs() < 2e-3 * exact, "chart {chart} c {c} r {r}: {area} vs {exact}");
        }
        let p = DomainPoint { chart: 0, x: C64::new(0.5, 0.0) };
        let q = DomainPoint { chart: 1, x: C64::new(2.0, 0.0) };
        assert!(d.distance(p, q) < 1e-12);
    }

    #[test]
    fn gaussian_bump_mass() {
        let d = DomainChart::new(DomainSpec::Disk { n: 128, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } })
            .unwrap();
        let s2 = 0.15f64 * 0.15;
        let f: Vec<f64> = d.coords.iter().map(|x| (-x.norm_sqr() / s2).exp()).collect();
        let m = d.integrate(&f, None).unwrap();
        assert!((m - PI * s2).abs() < 1e-8, "{}", m - PI * s2);
    }

    #[test]
    fn unit_torus_integral() {
        let d = DomainChart::new(DomainSpec::Torus { n: 16, period: 1.0 }).unwrap();
        assert!((d.integrate(&vec![1.0; d.len()], None).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn loop_lengths() {
        let d = disk(32, DiskMetric::Flat { scale: 1.0 });
        let lp = Loop::Circle { center: ZERO, radius: 0.3, samples: 64 };
        let l = d.boundary_length(&lp, |_, v| v.norm()).unwrap();
        assert!((l - 2.0 * PI * 0.3).abs() < 1e-12);
        // f(x) = x²: |df/dt| = |2x| |dx/dt|
        let l2 = d.boundary_length(&lp, |x, v| (2.0 * x * v).norm()).unwrap();
        assert!((l2 - 2.0 * PI * 0.3 * 0.6).abs() < 1e-12);
        let open = Loop::Polygon(vec![ZERO, C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        assert_eq!(d.boundary_length(&open, |_, v| v.norm()), Err(Error::OpenCurve));
    }

    #[test]
    fn interpolation_is_exact_for_quintics() {
        let d = disk(32, DiskMetric::Flat { scale: 1.0 });
        let f: Vec<C64> = d.coords.iter().map(|x| x.powi(3) + x.conj() * 2.0).collect();
        let x = C64::new(0.123, -0.377);
        let v = d.interpolate(&f, 0, x).unwrap();
        assert!((v - (x.powi(3) + x.conj() * 2.0)).norm() < 1e-12);
    }

    #[test]
    fn partition_sums_to_one() {
        for r in [0.3, 0.6, 0.9, 1.0, 1.4, 1.9] {
            let x = C64::new(r, 0.0);
            assert!((sphere_partition(x) + sphere_partition(x.inv()) - 1.0).abs() < 1e-14);
        }
    }
}
