//! Pullback frame coefficients, second fundamental form and the identities
//! built on them.
//!
//! Differentiation happens in target coordinates. With α = ∂f/λ and
//! β = ∂̄f/λ, the coordinate second form is
//!
//! ```text
//! α₁   = (∂α − α ∂log λ)/λ + Γ(α, α)      α₁̄ = (∂̄α + α ∂̄log λ)/λ + Γ(β, α)
//! β₁   = (∂β + β ∂log λ)/λ + Γ(α, β)      β₁̄ = (∂̄β − β ∂̄log λ)/λ + Γ(β, β)
//! ```
//!
//! with Γ(u, v)^i = Γ^i_{jk} u^j v^k. Unitary components are P times these.

use crate::domain::DomainChart;
use crate::error::{Error, Result};
use crate::map::MapState;
use crate::target::{rot3, LocalGeometry, Mat2, Pt, T3, C64, ZERO};
use rayon::prelude::*;

/// a^i_1 and a^i_{1̄} per grid point, unitary frame.
#[derive(Clone, Debug)]
pub struct FrameCoefficients {
    pub a1: Vec<Pt>,
    pub a1bar: Vec<Pt>,
}

/// a^i_{11}, a^i_{11̄}, a^i_{1̄1}, a^i_{1̄1̄} per grid point, unitary frame.
#[derive(Clone, Debug)]
pub struct SecondForm {
    pub a11: Vec<Pt>,
    pub a11bar: Vec<Pt>,
    pub a1bar1: Vec<Pt>,
    pub a1bar1bar: Vec<Pt>,
}

#[derive(Clone, Debug)]
pub struct EnergyField {
    pub density: Vec<f64>,
    pub total: f64,
}

/// Pullback data on one map, evaluated at each point in its own target chart.
#[derive(Clone, Debug)]
pub struct Pullback {
    pub lambda: Vec<f64>,
    pub chart_ids: Vec<u8>,
    pub z: Vec<Pt>,
    /// ∂f/λ and ∂̄f/λ in coordinates.
    pub alpha: Vec<Pt>,
    pub beta: Vec<Pt>,
    /// Coordinate second form: [α₁, α₁̄, β₁, β₁̄].
    pub coord: [Vec<Pt>; 4],
    pub p: Vec<Mat2>,
    pub gamma: Vec<T3>,
    pub fc: FrameCoefficients,
    pub sf: SecondForm,
}

pub(crate) fn nan_pt() -> Pt {
    let n = C64::new(f64::NAN, f64::NAN);
    [n, n]
}

fn finite(v: &Pt) -> bool {
    v[0].is_finite() && v[1].is_finite()
}

pub fn mat_vec(m: &Mat2, v: &Pt) -> Pt {
    [m[(0, 0)] * v[0] + m[(0, 1)] * v[1], m[(1, 0)] * v[0] + m[(1, 1)] * v[1]]
}

fn gamma_apply(g: &T3, u: &Pt, v: &Pt) -> Pt {
    let mut out = [ZERO; 2];
    for (i, o) in out.iter_mut().enumerate() {
        for j in 0..2 {
            for k in 0..2 {
                *o += g[i][j][k] * u[j] * v[k];
            }
        }
    }
    out
}

fn add(a: &Pt, b: &Pt) -> Pt {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(a: &Pt, s: C64) -> Pt {
    [a[0] * s, a[1] * s]
}

pub(crate) fn pt_norm(a: &Pt) -> f64 {
    a[0].norm().max(a[1].norm())
}

/// Wirtinger derivatives of a vector field, component by component.
pub fn d_vec(domain: &DomainChart, f: &[Pt]) -> Result<(Vec<Pt>, Vec<Pt>)> {
    let c0: Vec<C64> = f.iter().map(|v| v[0]).collect();
    let c1: Vec<C64> = f.iter().map(|v| v[1]).collect();
    let (d0, db0) = domain.d_complex(&c0)?;
    let (d1, db1) = domain.d_complex(&c1)?;
    let d = d0.iter().zip(&d1).map(|(a, b)| [*a, *b]).collect();
    let db = db0.iter().zip(&db1).map(|(a, b)| [*a, *b]).collect();
    Ok((d, db))
}

/// The map and its coordinate second form expressed in one target chart at
/// every grid point (NaN where the point is outside that chart).
pub(crate) struct ChartView {
    pub z: Vec<Pt>,
    pub alpha: Vec<Pt>,
    pub beta: Vec<Pt>,
    pub coord: [Vec<Pt>; 4],
    pub p: Vec<Option<Mat2>>,
    pub gamma: Vec<Option<T3>>,
}

pub(crate) fn chart_view(map: &MapState, c: u8, lambda: &[f64], dlog: &[C64]) -> Result<ChartView> {
    let d = &map.domain;
    let z = map.view(c);
    let (dz, dbz) = d_vec(d, &z)?;
    let alpha: Vec<Pt> = dz.iter().zip(lambda).map(|(v, &l)| scale(v, C64::from(1.0 / l))).collect();
    let beta: Vec<Pt> = dbz.iter().zip(lambda).map(|(v, &l)| scale(v, C64::from(1.0 / l))).collect();
    let (da, dba) = d_vec(d, &alpha)?;
    let (db, dbb) = d_vec(d, &beta)?;
    let target = map.target;
    let rows: Vec<(Option<(Mat2, T3)>, [Pt; 4])> = (0..z.len())
        .into_par_iter()
        .map(|q| {
            let geo = if finite(&z[q]) { target.frame_and_gamma(c as usize, z[q]).ok() } else { None };
            let Some((_, p, g)) = geo else {
                return (None, [nan_pt(); 4]);
            };
            let l = C64::from(1.0 / lambda[q]);
            let dl = dlog[q];
            let dlb = dl.conj();
            let (a, b) = (alpha[q], beta[q]);
            let a1 = add(&scale(&add(&da[q], &scale(&a, -dl)), l), &gamma_apply(&g, &a, &a));
            let a1b = add(&scale(&add(&dba[q], &scale(&a, dlb)), l), &gamma_apply(&g, &b, &a));
            let b1 = add(&scale(&add(&db[q], &scale(&b, dl)), l), &gamma_apply(&g, &a, &b));
            let b1b = add(&scale(&add(&dbb[q], &scale(&b, -dlb)), l), &gamma_apply(&g, &b, &b));
            (Some((p, g)), [a1, a1b, b1, b1b])
        })
        .collect();
    let mut coord: [Vec<Pt>; 4] = Default::default();
    let mut pv = Vec::with_capacity(rows.len());
    let mut gv = Vec::with_capacity(rows.len());
    for (geo, s) in rows {
        for k in 0..4 {
            coord[k].push(s[k]);
        }
        pv.push(geo.map(|x| x.0));
        gv.push(geo.map(|x| x.1));
    }
    Ok(ChartView { z, alpha, beta, coord, p: pv, gamma: gv })
}

impl Pullback {
    pub fn compute(map: &MapState) -> Result<Pullback> {
        let d = map.domain.clone();
        Pullback::with_metric(map, &d.lambda, &d.dlog_lambda)
    }

    /// Pullback against the domain metric λ²|dx|² with the given λ and ∂log λ.
    pub fn with_metric(map: &MapState, lambda: &[f64], dlog: &[C64]) -> Result<Pullback> {
        let n = map.len();
        let mut z = vec![nan_pt(); n];
        let mut alpha = vec![nan_pt(); n];
        let mut beta = vec![nan_pt(); n];
        let mut coord: [Vec<Pt>; 4] = std::array::from_fn(|_| vec![nan_pt(); n]);
        let mut p = vec![Mat2::zeros(); n];
        let mut gamma = vec![crate::target::zero3(); n];
        for c in map.charts_present() {
            let v = chart_view(map, c, lambda, dlog)?;
            for q in (0..n).filter(|&q| map.chart_ids[q] == c) {
                let ok = finite(&v.alpha[q])
                    && finite(&v.beta[q])
                    && v.coord.iter().all(|f| finite(&f[q]))
                    && v.p[q].is_some();
                if !ok {
                    return Err(Error::ChartTear(q));
                }
                z[q] = v.z[q];
                alpha[q] = v.alpha[q];
                beta[q] = v.beta[q];
                for k in 0..4 {
                    coord[k][q] = v.coord[k][q];
                }
                p[q] = v.p[q].unwrap();
                gamma[q] = v.gamma[q].unwrap();
            }
        }
        let rot = |f: &Vec<Pt>| -> Vec<Pt> { f.iter().zip(&p).map(|(v, m)| mat_vec(m, v)).collect() };
        let fc = FrameCoefficients { a1: rot(&alpha), a1bar: rot(&beta) };
        let sf = SecondForm {
            a11: rot(&coord[0]),
            a11bar: rot(&coord[1]),
            a1bar1: rot(&coord[2]),
            a1bar1bar: rot(&coord[3]),
        };
        Ok(Pullback { lambda: lambda.to_vec(), chart_ids: map.chart_ids.clone(), z, alpha, beta, coord, p, gamma, fc, sf })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Target geometry at f(x_q) in its own chart.
    pub fn geometry(&self, map: &MapState, q: usize) -> Result<LocalGeometry> {
        map.target.local_geometry(self.chart_ids[q] as usize, self.z[q])
    }

    /// Unitary torsion L^i_{jk} at f(x_q).
    pub fn torsion_at(&self, q: usize) -> T3 {
        rot3(&coord_torsion(&self.gamma[q]), &self.p[q], &self.p[q].try_inverse().unwrap_or(Mat2::zeros()))
    }

    pub fn energy_density(&self) -> Vec<f64> {
        self.fc
            .a1
            .iter()
            .zip(&self.fc.a1bar)
            .map(|(a, b)| a[0].norm_sqr() + a[1].norm_sqr() + b[0].norm_sqr() + b[1].norm_sqr())
            .collect()
    }

    /// Hopf differential coefficient Φ = Σ a^i_1 conj(a^i_{1̄}).
    pub fn hopf_coefficient(&self) -> Vec<C64> {
        self.fc
            .a1
            .iter()
            .zip(&self.fc.a1bar)
            .map(|(a, b)| a[0] * b[0].conj() + a[1] * b[1].conj())
            .collect()
    }

    /// Area density of the image against dA: √(e² − 4|Φ|²).
    pub fn area_density(&self) -> Vec<f64> {
        self.energy_density()
            .iter()
            .zip(self.hopf_coefficient())
            .map(|(e, phi)| (e * e - 4.0 * phi.norm_sqr()).max(0.0).sqrt())
            .collect()
    }

    /// max 2|Φ| / max e: scale-free deviation of f*h from a multiple of ds².
    pub fn conformality_defect(&self, mask: Option<&[f64]>) -> f64 {
        let e = self.energy_density();
        let phi = self.hopf_coefficient();
        let mut me: f64 = 0.0;
        let mut mp: f64 = 0.0;
        for q in 0..e.len() {
            if mask.map_or(true, |m| m[q] > 0.0) {
                me = me.max(e[q]);
                mp = mp.max(2.0 * phi[q].norm());
            }
        }
        if me == 0.0 {
            0.0
        } else {
            mp / me
        }
    }

    /// r^i = a^i_{11̄} + a^i_{1̄1}
    pub fn harmonic_residual(&self) -> Vec<Pt> {
        self.sf.a11bar.iter().zip(&self.sf.a1bar1).map(|(a, b)| add(a, b)).collect()
    }

    /// Pointwise max_i |−a^i_{11̄} + a^i_{1̄1} − 2 L^i_{jk} a^j_1 a^k_{1̄}|.
    pub fn torsion_identity_residual(&self) -> Vec<f64> {
        (0..self.len())
            .map(|q| {
                let t = coord_torsion(&self.gamma[q]);
                let c = [
                    self.coord[2][q][0] - self.coord[1][q][0],
                    self.coord[2][q][1] - self.coord[1][q][1],
                ];
                let tt = gamma_apply(&t, &self.alpha[q], &self.beta[q]);
                let res = [c[0] - tt[0] * 2.0, c[1] - tt[1] * 2.0];
                pt_norm(&mat_vec(&self.p[q], &res))
            })
            .collect()
    }

    /// Tension field in target coordinates: τ = 2(α₁̄ + β₁), which is
    /// 4∂∂̄f/λ² (the Laplace-Beltrami operator) on a flat target.
    pub fn tension(&self) -> Vec<Pt> {
        (0..self.len())
            .map(|q| scale(&add(&self.coord[1][q], &self.coord[2][q]), C64::from(2.0)))
            .collect()
    }

    /// Mean curvature coefficients H^i (of e_i; the e̅_i part is conjugate).
    pub fn mean_curvature(&self) -> Vec<Pt> {
        (0..self.len())
            .map(|q| {
                let l = self.torsion_at(q);
                let a = &self.fc.a1[q];
                let b = &self.fc.a1bar[q];
                let mut h = [ZERO; 2];
                for (i, hi) in h.iter_mut().enumerate() {
                    for j in 0..2 {
                        for k in 0..2 {
                            *hi += b[j] * l[j][k][i].conj() * b[k].conj() + a[j].conj() * l[k][j][i].conj() * a[k];
                        }
                    }
                    *hi *= 2.0;
                }
                h
            })
            .collect()
    }

    /// |H| with the real vector H^i e_i + conj: √2 (Σ|H^i|²)^{1/2}.
    pub fn mean_curvature_norm(&self) -> Vec<f64> {
        self.mean_curvature()
            .iter()
            .map(|h| (2.0 * (h[0].norm_sqr() + h[1].norm_sqr())).sqrt())
            .collect()
    }
}

/// T^i_{jk} = ½(Γ^i_{jk} − Γ^i_{kj})
pub fn coord_torsion(g: &T3) -> T3 {
    let mut t = crate::target::zero3();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                t[i][j][k] = 0.5 * (g[i][j][k] - g[i][k][j]);
            }
        }
    }
    t
}

pub fn max_norm(f: &[Pt], mask: Option<&[bool]>) -> f64 {
    f.iter()
        .enumerate()
        .filter(|(q, _)| mask.map_or(true, |m| m[*q]))
        .map(|(_, v)| pt_norm(v))
        .fold(0.0, f64::max)
}

pub fn energy(map: &MapState, mask: Option<&[f64]>) -> Result<EnergyField> {
    let pb = Pullback::compute(map)?;
    let density = pb.energy_density();
    let total = map.domain.integrate(&density, mask)?;
    Ok(EnergyField { density, total })
}

/// Max over points of the (A-29)-type defect: the 0-form part is the harmonic
/// residual, the 2-form part compares −a_{11̄} + a_{1̄1} with 2 L a_1 a_{1̄}.
pub fn first_order_operator_check(map: &MapState, threshold: f64, mask: Option<&[bool]>) -> Result<f64> {
    let pb = Pullback::compute(map)?;
    let r = max_norm(&pb.harmonic_residual(), mask);
    if !(r <= threshold) {
        return Err(Error::NotHarmonic { residual: r, threshold });
    }
    let t = pb.torsion_identity_residual();
    let tmax = t
        .iter()
        .enumerate()
        .filter(|(q, _)| mask.map_or(true, |m| m[*q]))
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    Ok(r.max(tmax))
}

/// Second-order check: with c = −a_{11̄} + a_{1̄1} (coefficient of φ∧φ̄),
/// compare its covariant derivatives c_1, c_{1̄} with the φ and φ̄ parts of q.
pub fn second_order_operator_check(map: &MapState, threshold: f64, mask: Option<&[bool]>) -> Result<f64> {
    let pb = Pullback::compute(map)?;
    let r = max_norm(&pb.harmonic_residual(), mask);
    if !(r <= threshold) {
        return Err(Error::NotHarmonic { residual: r, threshold });
    }
    let d = &map.domain;
    let n = map.len();
    let mut c1 = vec![nan_pt(); n];
    let mut c1b = vec![nan_pt(); n];
    for ch in map.charts_present() {
        let v = chart_view(map, ch, &d.lambda, &d.dlog_lambda)?;
        let c: Vec<Pt> = (0..n).map(|q| [v.coord[2][q][0] - v.coord[1][q][0], v.coord[2][q][1] - v.coord[1][q][1]]).collect();
        let (dc, dbc) = d_vec(d, &c)?;
        for q in (0..n).filter(|&q| map.chart_ids[q] == ch) {
            let g = v.gamma[q].ok_or(Error::ChartTear(q))?;
            let l = C64::from(1.0 / d.lambda[q]);
            let x1 = add(&scale(&dc[q], l), &gamma_apply(&g, &v.alpha[q], &c[q]));
            let x2 = add(&scale(&dbc[q], l), &gamma_apply(&g, &v.beta[q], &c[q]));
            if !(finite(&x1) && finite(&x2)) {
                return Err(Error::ChartTear(q));
            }
            c1[q] = mat_vec(&pb.p[q], &x1);
            c1b[q] = mat_vec(&pb.p[q], &x2);
        }
    }
    let defects: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|q| {
            if !mask.map_or(true, |m| m[q]) {
                return Ok(0.0);
            }
            let geo = pb.geometry(map, q)?;
            let (q1, q2) = q_terms(&geo, &pb, q);
            Ok(pt_norm(&[c1[q][0] - q1[0], c1[q][1] - q1[1]]).max(pt_norm(&[c1b[q][0] - q2[0], c1b[q][1] - q2[1]])))
        })
        .collect();
    let mut m: f64 = 0.0;
    for x in defects {
        m = m.max(x?);
    }
    Ok(m)
}

/// φ and φ̄ coefficients (of e_i) of q(∇df, df, df, df), up to the sign of
/// the φ̄ part: returns (q₁, q₂) with q = q₁ φ − q₂ φ̄.
pub fn q_terms(geo: &LocalGeometry, pb: &Pullback, q: usize) -> (Pt, Pt) {
    let l = &geo.torsion.l;
    let l1 = &geo.torsion.l1;
    let l1b = &geo.torsion.l1bar;
    let a = &pb.fc.a1[q];
    let b = &pb.fc.a1bar[q];
    let a11 = &pb.sf.a11[q];
    let a11b = &pb.sf.a11bar[q];
    let a1b1 = &pb.sf.a1bar1[q];
    let a1b1b = &pb.sf.a1bar1bar[q];
    let mut q1 = [ZERO; 2];
    let mut q2 = [ZERO; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                let mut dphi = ZERO;
                let mut dphib = ZERO;
                for m in 0..2 {
                    dphi += l1[i][j][k][m] * a[m] + l1b[i][j][k][m] * b[m].conj();
                    dphib += l1[i][j][k][m] * b[m] + l1b[i][j][k][m] * a[m].conj();
                }
                q1[i] += dphi * a[j] * b[k] + l[i][j][k] * (a11[j] * b[k] + a[j] * a1b1[k]);
                q2[i] += dphib * a[j] * b[k] + l[i][j][k] * (a11b[j] * b[k] + a[j] * a1b1b[k]);
            }
        }
        q1[i] *= 2.0;
        q2[i] *= 2.0;
    }
    (q1, q2)
}

/// Max relative deviation from b_{11̄} = |μ|² a_{11̄} and b_{1̄1} = |μ|² a_{1̄1}
/// where a uses the chart metric λ and b uses λ̃, μ = λ/λ̃.
pub fn conformal_change_check(map: &MapState, lambda_tilde: &[f64], dlog_tilde: &[C64], mask: Option<&[bool]>) -> Result<f64> {
    let d = &map.domain;
    if lambda_tilde.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::ZeroConformalFactor);
    }
    let a = Pullback::compute(map)?;
    let b = Pullback::with_metric(map, lambda_tilde, dlog_tilde)?;
    let mut dev: f64 = 0.0;
    let mut size: f64 = 0.0;
    for q in 0..map.len() {
        if !mask.map_or(true, |m| m[q]) {
            continue;
        }
        let mu2 = (d.lambda[q] / lambda_tilde[q]).powi(2);
        for (fa, fb) in [(&a.sf.a11bar, &b.sf.a11bar), (&a.sf.a1bar1, &b.sf.a1bar1)] {
            let diff = [fb[q][0] - fa[q][0] * mu2, fb[q][1] - fa[q][1] * mu2];
            dev = dev.max(pt_norm(&diff));
            size = size.max(pt_norm(&fb[q]));
        }
    }
    Ok(if size == 0.0 { dev } else { dev / size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DiskMetric, DomainSpec};
    use crate::map::MapSpec;
    use crate::target::{HermitianTarget, TargetId};
    use std::sync::Arc;

    fn flat_disk(n: usize) -> Arc<DomainChart> {
        Arc::new(DomainChart::new(DomainSpec::Disk { n, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } }).unwrap())
    }

    fn one() -> C64 {
        C64::from(1.0)
    }

    #[test]
    fn identity_and_conjugate_coefficients() {
        let d = flat_disk(32);
        let t = HermitianTarget::new(TargetId::FlatC2);
        let m = MapState::from_spec(d.clone(), t, &MapSpec::poly(&[(one(), 1, 0)], &[])).unwrap();
        let pb = Pullback::compute(&m).unwrap();
        for q in 0..m.len() {
            assert!((pb.fc.a1[q][0] - 1.0).norm() < 1e-12 && pb.fc.a1bar[q][0].norm() < 1e-12);
            assert!(pb.fc.a1[q][1].norm() < 1e-12);
            for f in [&pb.sf.a11, &pb.sf.a11bar, &pb.sf.a1bar1, &pb.sf.a1bar1bar] {
                assert!(pt_norm(&f[q]) < 1e-10);
            }
        }
        let m = MapState::from_spec(d, t, &MapSpec::poly(&[(one(), 0, 1)], &[])).unwrap();
        let pb = Pullback::compute(&m).unwrap();
        assert!(pb.fc.a1.iter().all(|a| a[0].norm() < 1e-12));
        assert!(pb.fc.a1bar.iter().all(|a| (a[0] - 1.0).norm() < 1e-12));
    }

    #[test]
    fn square_map_second_form() {
        let d = flat_disk(64);
        let t = HermitianTarget::new(TargetId::FlatC2);
        let m = MapState::from_spec(d.clone(), t, &MapSpec::poly(&[(one(), 2, 0)], &[])).unwrap();
        let pb = Pullback::compute(&m).unwrap();
        for q in 0..m.len() {
            assert!((pb.fc.a1[q][0] - d.coords[q] * 2.0).norm() < 1e-10);
            assert!((pb.sf.a11[q][0] - 2.0).norm() < 1e-8);
            assert!(pt_norm(&pb.sf.a11bar[q]) < 1e-8);
        }
    }

    #[test]
    fn constant_map_has_zero_residual() {
        let d = flat_disk(16);
        let t = HermitianTarget::new(TargetId::Hopf);
        let m = MapState::from_spec(d, t, &MapSpec::constant([C64::new(1.0, 0.5), C64::new(-0.3, 0.0)])).unwrap();
        let pb = Pullback::compute(&m).unwrap();
        assert_eq!(max_norm(&pb.harmonic_residual(), None), 0.0);
        assert_eq!(energy(&m, None).unwrap().total, 0.0);
    }

    #[test]
    fn constant_mu_scaling() {
        let d = flat_disk(32);
        let t = HermitianTarget::new(TargetId::Hopf);
        let spec = MapSpec::random_trig(3, [C64::new(1.0, 0.0), C64::new(0.5, 0.0)], 0.3, 2.0, 3);
        let m = MapState::from_spec(d.clone(), t, &spec).unwrap();
        let lt: Vec<f64> = d.lambda.iter().map(|l| l / 2.0).collect();
        let dev = conformal_change_check(&m, &lt, &d.dlog_lambda, None).unwrap();
        assert!(dev < 1e-12, "{dev}");
        assert!(conformal_change_check(&m, &vec![0.0; d.len()], &d.dlog_lambda, None).is_err());
    }
}
