//! Hermitian target surfaces: flat C², CP¹×CP¹ with the product Fubini-Study
//! metric, and the Hopf surface (C²∖{0})/(z ~ 2z) with metric δ_ij/|z|².
//!
//! Everything is computed in holomorphic coordinates from closed-form metric
//! jets and rotated into the unitary frame ω^a = P^a_i dz^i, P = Lᵀ where
//! h = L Lᴴ is the lower Cholesky factor.

use crate::error::{Error, Result};
use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Pt = [C64; 2];
/// Rank-3 tensor indexed `[upper][lower][lower]`.
pub type T3 = [[[C64; 2]; 2]; 2];
/// Rank-4 tensor indexed `[upper][lower][lower][lower]`.
pub type T4 = [[[[C64; 2]; 2]; 2]; 2];

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);
pub const PD_TOL: f64 = 1e-12;
/// Coordinate radius of one CP¹ factor chart. Charts overlap on 1/4 < |z| < 4.
pub const FS_CHART_RADIUS: f64 = 4.0;

pub fn zero3() -> T3 {
    [[[ZERO; 2]; 2]; 2]
}

pub fn zero4() -> T4 {
    [[[[ZERO; 2]; 2]; 2]; 2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetId {
    FlatC2,
    FsProduct,
    Hopf,
}

impl TargetId {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flat_c2" | "flat" => Some(TargetId::FlatC2),
            "fs_product" | "fs" => Some(TargetId::FsProduct),
            "hopf" => Some(TargetId::Hopf),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TargetId::FlatC2 => "flat_c2",
            TargetId::FsProduct => "fs_product",
            TargetId::Hopf => "hopf",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            TargetId::FlatC2 => 0,
            TargetId::FsProduct => 1,
            TargetId::Hopf => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(TargetId::FlatC2),
            1 => Some(TargetId::FsProduct),
            2 => Some(TargetId::Hopf),
            _ => None,
        }
    }

    pub fn is_kahler(&self) -> bool {
        !matches!(self, TargetId::Hopf)
    }
}

/// Closed-form metric and its first and second derivatives at a point.
/// `dh[m] = ∂_m h`, `dd[m][n] = ∂_m ∂_n h`, `ddbar[m][n] = ∂_m ∂̄_n h`.
/// Antiholomorphic first derivatives follow from ∂̄_m h = (∂_m h)ᴴ.
#[derive(Clone, Copy, Debug)]
pub struct MetricJet {
    pub h: Mat2,
    pub dh: [Mat2; 2],
    pub dd: [[Mat2; 2]; 2],
    pub ddbar: [[Mat2; 2]; 2],
}

#[derive(Clone, Copy, Debug)]
pub struct ConnectionData {
    /// Coordinate Christoffels Γ^i_{jk} = h^{i l̄} ∂_j h_{k l̄}.
    pub gamma: T3,
    /// Lower Cholesky factor L of h.
    pub frame_l: Mat2,
    /// Coframe matrix P (ω^a = P^a_i dz^i).
    pub p: Mat2,
    /// Frame matrix Q = P⁻¹ (e_a = Q^i_a ∂_i).
    pub q: Mat2,
    /// Unitary connection ω^a_b: coefficient of dz^m is `omega_hol[m][(a, b)]`.
    pub omega_hol: [Mat2; 2],
    /// Coefficient of dz̄^m.
    pub omega_anti: [Mat2; 2],
}

#[derive(Clone, Copy, Debug)]
pub struct TorsionJet {
    /// L^a_{bc}, unitary frame.
    pub l: T3,
    /// L^a_{bcd}.
    pub l1: T4,
    /// L^a_{bc d̄}.
    pub l1bar: T4,
}

#[derive(Clone, Copy, Debug)]
pub struct CurvatureTensor {
    /// R^a_{bcd}
    pub hol: T4,
    /// R^a_{bc d̄}
    pub mixed: T4,
    /// R^a_{b c̄ d̄}
    pub anti: T4,
}

/// Everything the pullback calculus needs at one target point.
#[derive(Clone, Copy, Debug)]
pub struct LocalGeometry {
    pub h: Mat2,
    pub p: Mat2,
    pub q: Mat2,
    pub gamma: T3,
    pub torsion: TorsionJet,
    pub curvature: CurvatureTensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HermitianTarget {
    pub id: TargetId,
}

impl HermitianTarget {
    pub fn new(id: TargetId) -> Self {
        HermitianTarget { id }
    }

    pub fn chart_count(&self) -> usize {
        match self.id {
            TargetId::FsProduct => 4,
            _ => 1,
        }
    }

    fn check_point(&self, chart: usize, z: Pt) -> Result<()> {
        if chart >= self.chart_count() {
            return Err(Error::OutOfChart { chart, detail: "no such chart".into() });
        }
        if !(z[0].is_finite() && z[1].is_finite()) {
            return Err(Error::OutOfChart { chart, detail: "non-finite coordinate".into() });
        }
        match self.id {
            TargetId::FlatC2 => Ok(()),
            TargetId::FsProduct => {
                if z[0].norm() < FS_CHART_RADIUS && z[1].norm() < FS_CHART_RADIUS {
                    Ok(())
                } else {
                    Err(Error::OutOfChart { chart, detail: format!("|z| >= {FS_CHART_RADIUS}") })
                }
            }
            TargetId::Hopf => {
                if z[0].norm_sqr() + z[1].norm_sqr() > 1e-200 {
                    Ok(())
                } else {
                    Err(Error::OutOfChart { chart, detail: "z = 0".into() })
                }
            }
        }
    }

    /// Metric jet in the given chart. The FS factor metric is invariant under
    /// w = 1/z, so all four charts share one formula.
    pub fn metric_jet(&self, chart: usize, z: Pt) -> Result<MetricJet> {
        self.check_point(chart, z)?;
        let zero = Mat2::zeros();
        let jet = match self.id {
            TargetId::FlatC2 => MetricJet {
                h: Mat2::identity(),
                dh: [zero; 2],
                dd: [[zero; 2]; 2],
                ddbar: [[zero; 2]; 2],
            },
            TargetId::FsProduct => {
                let mut jet = MetricJet {
                    h: zero,
                    dh: [zero; 2],
                    dd: [[zero; 2]; 2],
                    ddbar: [[zero; 2]; 2],
                };
                for m in 0..2 {
                    let w = z[m];
                    let r = 1.0 + w.norm_sqr();
                    jet.h[(m, m)] = C64::from(4.0 / (r * r));
                    jet.dh[m][(m, m)] = -8.0 * w.conj() / (r * r * r);
                    jet.dd[m][m][(m, m)] = 24.0 * w.conj() * w.conj() / (r * r * r * r);
                    jet.ddbar[m][m][(m, m)] =
                        C64::from(-8.0 * (1.0 - 2.0 * w.norm_sqr()) / (r * r * r * r));
                }
                jet
            }
            TargetId::Hopf => {
                let rho = z[0].norm_sqr() + z[1].norm_sqr();
                let id = Mat2::identity();
                let mut jet = MetricJet {
                    h: id * C64::from(1.0 / rho),
                    dh: [zero; 2],
                    dd: [[zero; 2]; 2],
                    ddbar: [[zero; 2]; 2],
                };
                for m in 0..2 {
                    jet.dh[m] = id * (-z[m].conj() / (rho * rho));
                    for n in 0..2 {
                        jet.dd[m][n] = id * (2.0 * z[m].conj() * z[n].conj() / rho.powi(3));
                        let delta = if m == n { 1.0 } else { 0.0 };
                        jet.ddbar[m][n] =
                            id * (-delta / (rho * rho) + 2.0 * z[m].conj() * z[n] / rho.powi(3));
                    }
                }
                jet
            }
        };
        Ok(jet)
    }

    pub fn metric(&self, chart: usize, z: Pt) -> Result<Mat2> {
        Ok(self.metric_jet(chart, z)?.h)
    }

    pub fn chern_connection(&self, chart: usize, z: Pt) -> Result<ConnectionData> {
        let jet = self.metric_jet(chart, z)?;
        let core = Core::new(&jet)?;
        Ok(core.connection(&jet))
    }

    pub fn torsion(&self, chart: usize, z: Pt) -> Result<T3> {
        let jet = self.metric_jet(chart, z)?;
        let core = Core::new(&jet)?;
        Ok(rot3(&core.torsion_coord(), &core.p, &core.q))
    }

    pub fn torsion_jet(&self, chart: usize, z: Pt) -> Result<TorsionJet> {
        let jet = self.metric_jet(chart, z)?;
        let core = Core::new(&jet)?;
        let d = core.gamma_derivs(&jet);
        Ok(core.torsion_jet(&d))
    }

    pub fn curvature(&self, chart: usize, z: Pt) -> Result<CurvatureTensor> {
        let jet = self.metric_jet(chart, z)?;
        let core = Core::new(&jet)?;
        let d = core.gamma_derivs(&jet);
        Ok(core.curvature(&d))
    }

    pub fn local_geometry(&self, chart: usize, z: Pt) -> Result<LocalGeometry> {
        let jet = self.metric_jet(chart, z)?;
        let core = Core::new(&jet)?;
        let d = core.gamma_derivs(&jet);
        Ok(LocalGeometry {
            h: jet.h,
            p: core.p,
            q: core.q,
            gamma: core.gamma,
            torsion: core.torsion_jet(&d),
            curvature: core.curvature(&d),
        })
    }

    /// Frame data only (h, P, Γ); cheaper than `local_geometry`.
    pub fn frame_and_gamma(&self, chart: usize, z: Pt) -> Result<(Mat2, Mat2, T3)> {
        let jet = self.metric_jet(chart, z)?;
        let core = Core::new(&jet)?;
        Ok((jet.h, core.p, core.gamma))
    }

    /// Holomorphic chart transition. FS charts encode per-factor inversion in
    /// bits 0 and 1; the Hopf chart maps into the fundamental annulus 1 ≤ |z| < 2.
    pub fn transition(&self, from: usize, to: usize, z: Pt) -> Result<Pt> {
        if from >= self.chart_count() || to >= self.chart_count() {
            return Err(Error::NotInOverlap { from, to });
        }
        match self.id {
            TargetId::FlatC2 => Ok(z),
            TargetId::Hopf => {
                let r = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::NotInOverlap { from, to });
                }
                let s = 2f64.powf(-(r.log2().floor()));
                Ok([z[0] * s, z[1] * s])
            }
            TargetId::FsProduct => {
                let mut out = z;
                for m in 0..2 {
                    if ((from ^ to) >> m) & 1 == 1 {
                        let n = z[m].norm();
                        if !(n > 1.0 / FS_CHART_RADIUS && n < FS_CHART_RADIUS) {
                            return Err(Error::NotInOverlap { from, to });
                        }
                        out[m] = z[m].inv();
                    }
                }
                Ok(out)
            }
        }
    }

    /// Preferred chart for a point given in `chart`; returns the new chart and
    /// coordinates. Only the FS target ever switches (|z^i| > 1 → inverted).
    pub fn assign_chart(&self, chart: usize, z: Pt) -> (usize, Pt) {
        match self.id {
            TargetId::FsProduct => {
                let mut c = chart;
                let mut out = z;
                for m in 0..2 {
                    if z[m].norm() > 1.0 {
                        c ^= 1 << m;
                        out[m] = z[m].inv();
                    }
                }
                (c, out)
            }
            _ => (chart, z),
        }
    }

    /// Coordinates of a point re-expressed in another chart without overlap
    /// checks (used for stencil neighbours; infinities are possible).
    pub fn convert_unchecked(&self, from: usize, to: usize, z: Pt) -> Pt {
        match self.id {
            TargetId::FsProduct => {
                let mut out = z;
                for m in 0..2 {
                    if ((from ^ to) >> m) & 1 == 1 {
                        out[m] = if z[m] == ZERO { C64::new(f64::INFINITY, 0.0) } else { z[m].inv() };
                    }
                }
                out
            }
            _ => z,
        }
    }

    /// Metric-weighted chord length between two points, measured in the chart
    /// of `a` with the metric at the midpoint.
    pub fn chord_distance(&self, ca: usize, a: Pt, cb: usize, b: Pt) -> f64 {
        let b = self.convert_unchecked(cb, ca, b);
        let d = [b[0] - a[0], b[1] - a[1]];
        if !(d[0].is_finite() && d[1].is_finite()) {
            return f64::INFINITY;
        }
        let mid = [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5];
        let h = match self.id {
            TargetId::FsProduct => {
                // midpoint may leave the chart radius for far-apart points
                let mut h = Mat2::zeros();
                for m in 0..2 {
                    let r = 1.0 + mid[m].norm_sqr();
                    h[(m, m)] = C64::from(4.0 / (r * r));
                }
                h
            }
            _ => match self.metric(ca, mid) {
                Ok(h) => h,
                Err(_) => return f64::INFINITY,
            },
        };
        hnorm_sqr(&h, &d).max(0.0).sqrt()
    }
}

/// h(v, v) = Σ h_{k l̄} v^k conj(v^l).
pub fn hnorm_sqr(h: &Mat2, v: &[C64; 2]) -> f64 {
    let mut s = ZERO;
    for k in 0..2 {
        for l in 0..2 {
            s += h[(k, l)] * v[k] * v[l].conj();
        }
    }
    s.re
}

/// Smallest eigenvalue of a 2×2 Hermitian matrix.
pub fn min_eig(h: &Mat2) -> f64 {
    let a = h[(0, 0)].re;
    let d = h[(1, 1)].re;
    let b = h[(0, 1)].norm();
    0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
}

fn adj(m: &Mat2) -> Mat2 {
    m.adjoint()
}

/// Lower-triangular part with halved diagonal.
fn lower_half(x: &Mat2) -> Mat2 {
    Mat2::new(x[(0, 0)] * 0.5, ZERO, x[(1, 0)], x[(1, 1)] * 0.5)
}

struct Core {
    hinv: Mat2,
    l: Mat2,
    linv: Mat2,
    p: Mat2,
    q: Mat2,
    gamma: T3,
    dh: [Mat2; 2],
}

struct GammaDerivs {
    /// `d[m][i][j][k] = ∂_m Γ^i_{jk}`
    d: [T3; 2],
    /// `dbar[m][i][j][k] = ∂̄_m Γ^i_{jk}`
    dbar: [T3; 2],
}

impl Core {
    fn new(jet: &MetricJet) -> Result<Core> {
        let ev = min_eig(&jet.h);
        if !(ev > PD_TOL) {
            return Err(Error::SingularMetric(ev));
        }
        let chol = jet.h.cholesky().ok_or(Error::SingularMetric(ev))?;
        let l = chol.l();
        let linv = l.try_inverse().ok_or(Error::SingularMetric(ev))?;
        let hinv = jet.h.try_inverse().ok_or(Error::SingularMetric(ev))?;
        let p = l.transpose();
        let q = linv.transpose();
        let mut gamma = zero3();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut s = ZERO;
                    for ll in 0..2 {
                        s += jet.dh[j][(k, ll)] * hinv[(ll, i)];
                    }
                    gamma[i][j][k] = s;
                }
            }
        }
        Ok(Core { hinv, l, linv, p, q, gamma, dh: jet.dh })
    }

    fn connection(&self, _jet: &MetricJet) -> ConnectionData {
        let mut omega_hol = [Mat2::zeros(); 2];
        let mut omega_anti = [Mat2::zeros(); 2];
        for m in 0..2 {
            let dhx = self.dh[m] + adj(&self.dh[m]);
            let dhy = (self.dh[m] - adj(&self.dh[m])) * I;
            let dlx = self.l * lower_half(&(self.linv * dhx * adj(&self.linv)));
            let dly = self.l * lower_half(&(self.linv * dhy * adj(&self.linv)));
            let dl = (dlx - dly * I) * C64::from(0.5);
            let dlbar = (dlx + dly * I) * C64::from(0.5);
            let dp = dl.transpose();
            let dpbar = dlbar.transpose();
            let mut g = Mat2::zeros();
            for i in 0..2 {
                for k in 0..2 {
                    g[(i, k)] = self.gamma[i][m][k];
                }
            }
            omega_hol[m] = -dp * self.q + self.p * g * self.q;
            omega_anti[m] = -dpbar * self.q;
        }
        ConnectionData {
            gamma: self.gamma,
            frame_l: self.l,
            p: self.p,
            q: self.q,
            omega_hol,
            omega_anti,
        }
    }

    fn gamma_derivs(&self, jet: &MetricJet) -> GammaDerivs {
        let mut d = [zero3(); 2];
        let mut dbar = [zero3(); 2];
        for m in 0..2 {
            let dhinv = -self.hinv * jet.dh[m] * self.hinv;
            let dhinv_bar = -self.hinv * adj(&jet.dh[m]) * self.hinv;
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let mut s = ZERO;
                        let mut sb = ZERO;
                        for l in 0..2 {
                            s += jet.dd[j][m][(k, l)] * self.hinv[(l, i)]
                                + jet.dh[j][(k, l)] * dhinv[(l, i)];
                            sb += jet.ddbar[j][m][(k, l)] * self.hinv[(l, i)]
                                + jet.dh[j][(k, l)] * dhinv_bar[(l, i)];
                        }
                        d[m][i][j][k] = s;
                        dbar[m][i][j][k] = sb;
                    }
                }
            }
        }
        GammaDerivs { d, dbar }
    }

    fn torsion_coord(&self) -> T3 {
        let mut t = zero3();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    t[i][j][k] = 0.5 * (self.gamma[i][j][k] - self.gamma[i][k][j]);
                }
            }
        }
        t
    }

    fn torsion_jet(&self, gd: &GammaDerivs) -> TorsionJet {
        let t = self.torsion_coord();
        let g = &self.gamma;
        // cov[i][j][k][l] = ∇_l T^i_{jk}; covbar uses ∂̄_l (no (0,1) connection part).
        let mut cov = zero4();
        let mut covbar = zero4();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let mut s = 0.5 * (gd.d[l][i][j][k] - gd.d[l][i][k][j]);
                        for m in 0..2 {
                            s += g[i][l][m] * t[m][j][k]
                                - g[m][l][j] * t[i][m][k]
                                - g[m][l][k] * t[i][j][m];
                        }
                        cov[i][j][k][l] = s;
                        covbar[i][j][k][l] = 0.5 * (gd.dbar[l][i][j][k] - gd.dbar[l][i][k][j]);
                    }
                }
            }
        }
        TorsionJet {
            l: rot3(&t, &self.p, &self.q),
            l1: rot4(&cov, &self.p, &self.q, false),
            l1bar: rot4(&covbar, &self.p, &self.q, true),
        }
    }

    fn curvature(&self, gd: &GammaDerivs) -> CurvatureTensor {
        let g = &self.gamma;
        let mut hol = zero4();
        let mut mixed = zero4();
        for i in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    for j in 0..2 {
                        let x = |a: usize, b: usize| {
                            let mut s = gd.d[a][i][b][k];
                            for m in 0..2 {
                                s += g[i][a][m] * g[m][b][k];
                            }
                            s
                        };
                        hol[i][k][l][j] = 0.5 * (x(l, j) - x(j, l));
                        // coefficient of dz^l ∧ dz̄^j
                        mixed[i][k][l][j] = -gd.dbar[j][i][l][k];
                    }
                }
            }
        }
        CurvatureTensor {
            hol: rot4(&hol, &self.p, &self.q, false),
            mixed: rot4(&mixed, &self.p, &self.q, true),
            anti: zero4(),
        }
    }
}

/// L^a_{bc} = P^a_i t^i_{jk} Q^j_b Q^k_c
pub fn rot3(t: &T3, p: &Mat2, q: &Mat2) -> T3 {
    let mut out = zero3();
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                let mut s = ZERO;
                for i in 0..2 {
                    for j in 0..2 {
                        for k in 0..2 {
                            s += p[(a, i)] * t[i][j][k] * q[(j, b)] * q[(k, c)];
                        }
                    }
                }
                out[a][b][c] = s;
            }
        }
    }
    out
}

/// Rotate a rank-4 tensor; the last index is barred when `last_bar`.
pub fn rot4(t: &T4, p: &Mat2, q: &Mat2, last_bar: bool) -> T4 {
    let q4 = if last_bar { q.map(|x| x.conj()) } else { *q };
    let mut out = zero4();
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                for d in 0..2 {
                    let mut s = ZERO;
                    for i in 0..2 {
                        for j in 0..2 {
                            for k in 0..2 {
                                for l in 0..2 {
                                    s += p[(a, i)] * t[i][j][k][l] * q[(j, b)] * q[(k, c)] * q4[(l, d)];
                                }
                            }
                        }
                    }
                    out[a][b][c][d] = s;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn flat_connection_vanishes() {
        let t = HermitianTarget::new(TargetId::FlatC2);
        let cd = t.chern_connection(0, [c(0.3, -1.0), c(2.0, 0.5)]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(cd.gamma[i][j][k], ZERO);
                }
            }
            assert_eq!(cd.omega_hol[i], Mat2::zeros());
        }
    }

    #[test]
    fn fs_gamma_zero_at_origin() {
        let t = HermitianTarget::new(TargetId::FsProduct);
        let cd = t.chern_connection(0, [ZERO, ZERO]).unwrap();
        assert!(cd.gamma.iter().flatten().flatten().all(|g| g.norm() < 1e-15));
    }

    #[test]
    fn hopf_torsion_at_unit_point() {
        // Γ^i_{jk} = -δ_ik z̄_j/|z|², so at z = (1,0) only L²_{12} = -L²_{21} = -1/2.
        let t = HermitianTarget::new(TargetId::Hopf);
        let l = t.torsion(0, [c(1.0, 0.0), ZERO]).unwrap();
        let mut expect = zero3();
        expect[1][0][1] = c(-0.5, 0.0);
        expect[1][1][0] = c(0.5, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                for cc in 0..2 {
                    assert!((l[a][b][cc] - expect[a][b][cc]).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn transitions() {
        let fs = HermitianTarget::new(TargetId::FsProduct);
        let w = fs.transition(0, 1, [c(1.0, 0.0), c(3.0, 0.0)]).unwrap();
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-15);
        let w = fs.transition(0, 1, [c(2.0, 0.0), ZERO]).unwrap();
        assert!((w[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!(fs.transition(0, 1, [c(0.1, 0.0), ZERO]).is_err());
        let hopf = HermitianTarget::new(TargetId::Hopf);
        let w = hopf.transition(0, 0, [c(2.5, 0.0), ZERO]).unwrap();
        assert!((w[0] - c(1.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn singular_and_out_of_chart() {
        let hopf = HermitianTarget::new(TargetId::Hopf);
        assert!(matches!(hopf.chern_connection(0, [ZERO, ZERO]), Err(Error::OutOfChart { .. })));
        let fs = HermitianTarget::new(TargetId::FsProduct);
        assert!(fs.metric(0, [c(5.0, 0.0), ZERO]).is_err());
        // h ~ 4/|z|^8 at |z| = 3.9 is still well above tolerance
        assert!(fs.metric(0, [c(3.9, 0.0), ZERO]).is_ok());
    }

    #[test]
    fn fs_holomorphic_sectional_curvature_at_origin() {
        // -∂̄Γ¹₁₁ = -∂̄∂ log s = 2/(1+|z|²)², i.e. 2 at the origin; the unit frame
        // rescales by P Q Q Q̄ = 2 · (1/2)³.
        let t = HermitianTarget::new(TargetId::FsProduct);
        let r = t.curvature(0, [ZERO, ZERO]).unwrap();
        assert!((r.mixed[0][0][0][0] - c(0.5, 0.0)).norm() < 1e-14);
        assert!((r.mixed[1][1][1][1] - c(0.5, 0.0)).norm() < 1e-14);
        assert!(r.mixed[0][0][1][1].norm() < 1e-14);
    }

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [TargetId; 3] = [TargetId::FlatC2, TargetId::FsProduct, TargetId::Hopf];

    fn random_point(rng: &mut ChaCha8Rng, id: TargetId) -> Pt {
        let mut g = || c(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        let z = [g(), g()];
        if id == TargetId::Hopf && z[0].norm() + z[1].norm() < 0.2 {
            return [c(1.0, 0.0), z[1]];
        }
        z
    }

    fn shift(z: Pt, m: usize, d: C64) -> Pt {
        let mut w = z;
        w[m] += d;
        w
    }

    /// (∂_m f, ∂̄_m f) by centered differences of a matrix-valued function.
    fn wirtinger<F: Fn(Pt) -> Mat2>(f: F, z: Pt, m: usize, step: f64) -> (Mat2, Mat2) {
        let fx = (f(shift(z, m, c(step, 0.0))) - f(shift(z, m, c(-step, 0.0)))) / C64::from(2.0 * step);
        let fy = (f(shift(z, m, c(0.0, step))) - f(shift(z, m, c(0.0, -step)))) / C64::from(2.0 * step);
        ((fx - fy * I) * C64::from(0.5), (fx + fy * I) * C64::from(0.5))
    }

    #[test]
    fn metric_compatibility_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for id in ALL {
            let t = HermitianTarget::new(id);
            for _ in 0..100 {
                let z = random_point(&mut rng, id);
                let jet = t.metric_jet(0, z).unwrap();
                let g = t.chern_connection(0, z).unwrap().gamma;
                let mut res: f64 = 0.0;
                for m in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            // ∇_m h_{k l̄} = ∂_m h_{k l̄} − Γ^i_{mk} h_{i l̄}
                            let mut v = jet.dh[m][(k, l)];
                            for i in 0..2 {
                                v -= g[i][m][k] * jet.h[(i, l)];
                            }
                            res = res.max(v.norm() / jet.h.norm());
                        }
                    }
                }
                assert!(res < 1e-10, "{id:?} {res}");
            }
        }
    }

    #[test]
    fn unitary_connection_is_skew_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for id in ALL {
            let t = HermitianTarget::new(id);
            for _ in 0..100 {
                let z = random_point(&mut rng, id);
                let cd = t.chern_connection(0, z).unwrap();
                for m in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            let v = cd.omega_hol[m][(j, i)] + cd.omega_anti[m][(i, j)].conj();
                            assert!(v.norm() < 1e-10, "{id:?} {v}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn curvature_symmetries_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for id in ALL {
            let t = HermitianTarget::new(id);
            for _ in 0..100 {
                let z = random_point(&mut rng, id);
                let r = t.curvature(0, z).unwrap();
                for i in 0..2 {
                    for j in 0..2 {
                        for k in 0..2 {
                            for l in 0..2 {
                                assert!((r.hol[i][j][k][l] + r.hol[i][j][l][k]).norm() < 1e-12);
                                assert!((r.anti[i][j][k][l] + r.anti[i][j][l][k]).norm() < 1e-12);
                                assert!((r.hol[i][j][k][l] - r.anti[j][i][l][k].conj()).norm() < 1e-12);
                                assert!((r.mixed[i][j][k][l] - r.mixed[j][i][l][k].conj()).norm() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn curvature_matches_structure_equation() {
        // Ω = dω + ω∧ω on the unitary connection, by finite differences
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let step = 1e-4;
        for id in ALL {
            let t = HermitianTarget::new(id);
            for _ in 0..20 {
                let z = random_point(&mut rng, id);
                let cd = t.chern_connection(0, z).unwrap();
                let r = t.curvature(0, z).unwrap();
                let mut omega = [[Mat2::zeros(); 2]; 2];
                for l in 0..2 {
                    for j in 0..2 {
                        let (db, _) = wirtinger(|w| t.chern_connection(0, w).unwrap().omega_anti[j], z, l, step);
                        let (_, dba) = wirtinger(|w| t.chern_connection(0, w).unwrap().omega_hol[l], z, j, step);
                        let a = cd.omega_hol[l];
                        let b = cd.omega_anti[j];
                        omega[l][j] = db - dba + a * b - b * a;
                    }
                }
                let scale = 1.0 + r.mixed.iter().flatten().flatten().flatten().map(|v| v.norm()).fold(0.0, f64::max);
                for a in 0..2 {
                    for b in 0..2 {
                        for cc in 0..2 {
                            for d in 0..2 {
                                let mut v = ZERO;
                                for l in 0..2 {
                                    for j in 0..2 {
                                        v += omega[l][j][(a, b)] * cd.q[(l, cc)] * cd.q[(j, d)].conj();
                                    }
                                }
                                let err = (v - r.mixed[a][b][cc][d]).norm();
                                assert!(err < 1e-6 * scale, "{id:?} {a}{b}{cc}{d} {v} {}", r.mixed[a][b][cc][d]);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn metric_jet_matches_finite_differences_at_order_two() {
        let t = HermitianTarget::new(TargetId::Hopf);
        let z = [c(0.7, -0.4), c(0.3, 0.9)];
        let jet = t.metric_jet(0, z).unwrap();
        let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&s| {
                let mut e: f64 = 0.0;
                for m in 0..2 {
                    let (d, db) = wirtinger(|w| t.metric(0, w).unwrap(), z, m, s);
                    e = e.max((d - jet.dh[m]).norm()).max((db - jet.dh[m].adjoint()).norm());
                    let (dd, ddb) = wirtinger(|w| t.metric_jet(0, w).unwrap().dh[m], z, 1 - m, s);
                    e = e.max((dd - jet.dd[1 - m][m]).norm()).max((ddb - jet.ddbar[m][1 - m]).norm());
                }
                e
            })
            .collect();
        let o1 = (errs[0] / errs[1]).log2();
        let o2 = (errs[1] / errs[2]).log2();
        assert!((o1 - 2.0).abs() < 0.3 && (o2 - 2.0).abs() < 0.3, "{errs:?}");
    }

    #[test]
    fn torsion_jet_matches_finite_differences() {
        // ∇L = dL + L ω-terms in the unitary frame, evaluated on e_l / ē_l
        let t = HermitianTarget::new(TargetId::Hopf);
        let z = [c(0.8, 0.3), c(-0.5, 0.6)];
        let jet = t.torsion_jet(0, z).unwrap();
        let cd = t.chern_connection(0, z).unwrap();
        let l0 = jet.l;
        let errs: Vec<f64> = [1e-2, 5e-3]
            .iter()
            .map(|&s| {
                let mut e: f64 = 0.0;
                // coordinate-direction covariant derivatives
                let mut cov = [[zero3(); 2]; 2];
                for m in 0..2 {
                    let comp = |w: Pt, a: usize, b: usize, cc: usize| t.torsion(0, w).unwrap()[a][b][cc];
                    for a in 0..2 {
                        for b in 0..2 {
                            for cc in 0..2 {
                                let fx = (comp(shift(z, m, c(s, 0.0)), a, b, cc) - comp(shift(z, m, c(-s, 0.0)), a, b, cc)) / (2.0 * s);
                                let fy = (comp(shift(z, m, c(0.0, s)), a, b, cc) - comp(shift(z, m, c(0.0, -s)), a, b, cc)) / (2.0 * s);
                                let d = (fx - fy * I) * 0.5;
                                let db = (fx + fy * I) * 0.5;
                                let mut vh = d;
                                let mut va = db;
                                for k in 0..2 {
                                    vh += l0[k][b][cc] * cd.omega_hol[m][(a, k)]
                                        - l0[a][k][cc] * cd.omega_hol[m][(k, b)]
                                        - l0[a][b][k] * cd.omega_hol[m][(k, cc)];
                                    va += l0[k][b][cc] * cd.omega_anti[m][(a, k)]
                                        - l0[a][k][cc] * cd.omega_anti[m][(k, b)]
                                        - l0[a][b][k] * cd.omega_anti[m][(k, cc)];
                                }
                                cov[0][m][a][b][cc] = vh;
                                cov[1][m][a][b][cc] = va;
                            }
                        }
                    }
                }
                for a in 0..2 {
                    for b in 0..2 {
                        for cc in 0..2 {
                            for d in 0..2 {
                                let mut vh = ZERO;
                                let mut va = ZERO;
                                for m in 0..2 {
                                    vh += cov[0][m][a][b][cc] * cd.q[(m, d)];
                                    va += cov[1][m][a][b][cc] * cd.q[(m, d)].conj();
                                }
                                e = e.max((vh - jet.l1[a][b][cc][d]).norm()).max((va - jet.l1bar[a][b][cc][d]).norm());
                            }
                        }
                    }
                }
                e
            })
            .collect();
        assert!(errs[1] < 1e-3, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    proptest! {
        #[test]
        fn metric_is_hermitian_positive(x0 in -3.0f64..3.0, y0 in -3.0f64..3.0, x1 in -3.0f64..3.0, y1 in -3.0f64..3.0) {
            let z = [c(x0, y0), c(x1, y1)];
            for id in ALL {
                let t = HermitianTarget::new(id);
                if let Ok(h) = t.metric(0, z) {
                    prop_assert!((h - h.adjoint()).norm() < 1e-14);
                    prop_assert!(min_eig(&h) > 0.0);
                }
            }
        }

        #[test]
        fn torsion_antisymmetric_and_kahler_free(x0 in -2.0f64..2.0, y0 in -2.0f64..2.0, x1 in -2.0f64..2.0, y1 in 0.1f64..2.0) {
            let z = [c(x0, y0), c(x1, y1)];
            for id in ALL {
                let l = HermitianTarget::new(id).torsion(0, z).unwrap();
                for a in 0..2 {
                    for b in 0..2 {
                        for cc in 0..2 {
                            prop_assert_eq!(l[a][b][cc], -l[a][cc][b]);
                            if id.is_kahler() {
                                prop_assert!(l[a][b][cc].norm() < 1e-12);
                            }
                        }
                    }
                }
            }
        }

        #[test]
        fn fs_transition_roundtrip(x0 in 0.3f64..3.0, y0 in -1.0f64..1.0, x1 in 0.3f64..3.0, y1 in -1.0f64..1.0) {
            let t = HermitianTarget::new(TargetId::FsProduct);
            let z = [c(x0, y0), c(x1, y1)];
            for to in 1..4 {
                let w = t.transition(0, to, z).unwrap();
                let back = t.transition(to, 0, w).unwrap();
                prop_assert!((back[0] - z[0]).norm() < 1e-12 && (back[1] - z[1]).norm() < 1e-12);
                // metric compatibility of the transition: pullback of h_to equals h_from
                let jac: Vec<C64> = (0..2).map(|m| if to >> m & 1 == 1 { -1.0 / (z[m] * z[m]) } else { C64::from(1.0) }).collect();
                let hf = t.metric(0, z).unwrap();
                let ht = t.metric(to, w).unwrap();
                for m in 0..2 {
                    prop_assert!((ht[(m, m)] * jac[m].norm_sqr() - hf[(m, m)]).norm() < 1e-12 * (1.0 + hf[(m, m)].norm()));
                }
            }
        }
    }
}
