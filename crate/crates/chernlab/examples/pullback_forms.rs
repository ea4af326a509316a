//! Pullback calculus on a smooth map into the Hopf surface: energy, Hopf
//! differential, the torsion identity and the harmonic residual.
use chernlab::domain::{DiskMetric, DomainChart, DomainSpec};
use chernlab::map::{MapSpec, MapState};
use chernlab::pullback::{energy, first_order_operator_check, Pullback};
use chernlab::target::{HermitianTarget, TargetId, C64};
use std::sync::Arc;

fn main() -> chernlab::Result<()> {
    let d = Arc::new(DomainChart::new(DomainSpec::Disk { n: 96, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } })?);
    let hopf = HermitianTarget::new(TargetId::Hopf);
    let base = [C64::new(1.0, 0.5), C64::new(0.5, 0.0)];
    let smooth = MapState::from_spec(d.clone(), hopf, &MapSpec::random_trig(7, base, 0.2, 2.0, 3))?;
    let pb = Pullback::compute(&smooth)?;
    let torsion = pb.torsion_identity_residual().into_iter().fold(0.0, f64::max);
    let harmonic = pb.harmonic_residual().iter().map(|r| r[0].norm().max(r[1].norm())).fold(0.0, f64::max);
    println!("random map: E={:.5} conformality defect={:.3} torsion identity residual={:.2e} harmonic residual={:.3}",
        energy(&smooth, None)?.total, pb.conformality_defect(None), torsion, harmonic);

    let holo = MapSpec::poly(
        &[(C64::new(1.0, 0.5), 0, 0), (C64::new(0.3, 0.0), 1, 0)],
        &[(C64::new(0.5, 0.0), 0, 0), (C64::new(0.0, 0.2), 2, 0)],
    );
    let m = MapState::from_spec(d, hopf, &holo)?;
    println!("holomorphic map: first-order operator max={:.2e}", first_order_operator_check(&m, 1e-6, None)?);
    Ok(())
}
