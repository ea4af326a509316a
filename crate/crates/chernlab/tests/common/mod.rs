//! Shared helpers for the integration tests.
#![allow(dead_code)]

use chernlab::config::ExperimentConfig;
use chernlab::target::{TargetId, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&configs_dir().join(name)).expect("bundled config parses")
}

/// Terms c x^a x̄^b of a polynomial in x and x̄.
pub type Terms = Vec<(C64, u32, u32)>;

/// Random polynomial of total degree ≤ 4 with |value| ≤ `bound` on |x| ≤ 1.5.
pub fn random_poly(rng: &mut ChaCha8Rng, base: C64, bound: f64) -> Terms {
    let mut terms = vec![(base, 0, 0)];
    let budget = bound - base.norm();
    let monomials: Vec<(u32, u32)> = (0..=4u32).flat_map(|a| (0..=4 - a).map(move |b| (a, b))).filter(|&(a, b)| a + b > 0).collect();
    let picks: Vec<(u32, u32)> = (0..4).map(|_| monomials[rng.gen_range(0..monomials.len())]).collect();
    for (a, b) in picks {
        let size = budget / 4.0 / 1.5f64.powi((a + b) as i32);
        let c = C64::from_polar(rng.gen_range(0.2..1.0) * size, rng.gen_range(0.0..std::f64::consts::TAU));
        terms.push((c, a, b));
    }
    terms
}

/// Value, x- and y-derivatives and flat Laplacian of a polynomial at x,
/// from the monomial rules ∂_s = ∂ + ∂̄, ∂_t = i(∂ − ∂̄), Δ = 4∂∂̄.
pub fn poly_jet(terms: &Terms, x: C64) -> (C64, C64, C64, C64) {
    let pw = |z: C64, k: i64| if k < 0 { C64::from(0.0) } else { z.powu(k as u32) };
    let xb = x.conj();
    let (mut v, mut ds, mut dt, mut lap) = (C64::from(0.0), C64::from(0.0), C64::from(0.0), C64::from(0.0));
    let i = C64::new(0.0, 1.0);
    for &(c, a, b) in terms {
        let (a, b) = (a as i64, b as i64);
        let d = c * a as f64 * pw(x, a - 1) * pw(xb, b);
        let db = c * b as f64 * pw(x, a) * pw(xb, b - 1);
        v += c * pw(x, a) * pw(xb, b);
        ds += d + db;
        dt += i * (d - db);
        lap += c * (4 * a * b) as f64 * pw(x, a - 1) * pw(xb, b - 1);
    }
    (v, ds, dt, lap)
}

/// Gradient (in real coordinates of one factor) of the log conformal factor
/// φ of the factor metric e^{2φ}|dz|², for Kähler targets built from flat or
/// Fubini-Study lines.
fn log_factor_gradient(t: TargetId, z: C64) -> [f64; 2] {
    match t {
        TargetId::FlatC2 => [0.0, 0.0],
        // φ = log 2 − log(1 + |z|²)
        TargetId::FsProduct => {
            let s = 1.0 + z.norm_sqr();
            [-2.0 * z.re / s, -2.0 * z.im / s]
        }
        TargetId::Hopf => panic!("the Levi-Civita oracle covers Kähler targets only"),
    }
}

/// Harmonic-map tension of a map into a product of conformal real surfaces,
/// with the Levi-Civita symbols Γ^a_{bc} = δ^a_b φ_c + δ^a_c φ_b − δ_{bc} φ^a
/// in real coordinates; flat domain metric.
pub fn levi_civita_tension(t: TargetId, comps: [&Terms; 2], x: C64) -> [C64; 2] {
    let mut out = [C64::from(0.0); 2];
    for m in 0..2 {
        let (v, fs, ft, lap) = poly_jet(comps[m], x);
        let g = log_factor_gradient(t, v);
        let us = [fs.re, fs.im];
        let ut = [ft.re, ft.im];
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let mut tau = [lap.re, lap.im];
        for a in 0..2 {
            // Γ^a_{bc} u^b u^c = 2 (φ·u) u^a − |u|² φ^a, summed over s and t
            for u in [us, ut] {
                tau[a] += 2.0 * dot(g, u) * u[a] - dot(u, u) * g[a];
            }
        }
        out[m] = C64::new(tau[0], tau[1]);
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
