mod common;

use chernlab::domain::{DiskMetric, DomainChart, DomainSpec};
use chernlab::flow::tension_field;
use chernlab::map::{MapSpec, MapState};
use chernlab::pullback::{energy, conformal_change_check, Pullback};
use chernlab::target::{HermitianTarget, TargetId, C64};
use common::{levi_civita_tension, random_poly};
use proptest::prelude::*;
use std::sync::Arc;

fn disk(n: usize) -> Arc<DomainChart> {
    Arc::new(DomainChart::new(DomainSpec::Disk { n, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } }).unwrap())
}

fn target(code: u8) -> TargetId {
    [TargetId::FlatC2, TargetId::FsProduct, TargetId::Hopf][code as usize]
}

fn trig_map(seed: u64, t: TargetId, amplitude: f64) -> MapState {
    let base = [C64::new(1.0, 0.3), C64::new(0.4, -0.2)];
    MapState::from_spec(disk(24), HermitianTarget::new(t), &MapSpec::random_trig(seed, base, amplitude, 2.0, 3)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_is_nonnegative(seed in 0u64..10_000, code in 0u8..3, amplitude in 0.0f64..0.4) {
        let m = trig_map(seed, target(code), amplitude);
        let e = energy(&m, None).unwrap();
        prop_assert!(e.density.iter().all(|&v| v >= 0.0));
        prop_assert!(e.total >= 0.0);
    }

    #[test]
    fn torsion_identity_holds_pointwise(seed in 0u64..10_000, code in 0u8..3) {
        let m = trig_map(seed, target(code), 0.2);
        let pb = Pullback::compute(&m).unwrap();
        let worst = pb.torsion_identity_residual().into_iter().fold(0.0, f64::max);
        prop_assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn constant_rescaling_multiplies_by_mu_squared(seed in 0u64..10_000, code in 0u8..3, mu in 0.2f64..5.0) {
        let m = trig_map(seed, target(code), 0.2);
        let lambda: Vec<f64> = m.domain.lambda.iter().map(|l| l / mu).collect();
        let dlog = vec![C64::from(0.0); m.len()];
        let dev = conformal_change_check(&m, &lambda, &dlog, None).unwrap();
        prop_assert!(dev < 1e-10, "{dev}");
    }

    #[test]
    fn kahler_tension_matches_levi_civita(seed in 0u64..10_000, fs in any::<bool>()) {
        let t = if fs { TargetId::FsProduct } else { TargetId::FlatC2 };
        let mut rng = common::rng(seed);
        let p1 = random_poly(&mut rng, C64::new(0.1, 0.2), 0.9);
        let p2 = random_poly(&mut rng, C64::new(-0.3, 0.0), 0.9);
        let d = disk(16);
        let m = MapState::from_spec(d.clone(), HermitianTarget::new(t), &MapSpec::poly(&p1, &p2)).unwrap();
        let tau = tension_field(&m).unwrap();
        for q in (0..d.len()).filter(|&q| d.inside[q] > 0.0) {
            let want = levi_civita_tension(t, [&p1, &p2], d.coords[q]);
            for i in 0..2 {
                prop_assert!((tau[q][i] - want[i]).norm() <= 1e-9 * (1.0 + want[i].norm()));
            }
        }
    }
}
