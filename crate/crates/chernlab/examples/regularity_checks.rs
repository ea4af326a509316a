//! Isoperimetric ratio, monotonicity and epsilon-regularity on a holomorphic
//! disk in the Fubini-Study product.
use chernlab::domain::{DiskMetric, DomainChart, DomainPoint, DomainSpec};
use chernlab::map::{MapSpec, MapState};
use chernlab::regularity::{epsilon_regularity_check, isoperimetric_check, monotonicity_check};
use chernlab::target::{HermitianTarget, TargetId, C64};
use std::f64::consts::PI;
use std::sync::Arc;

fn main() -> chernlab::Result<()> {
    let d = Arc::new(DomainChart::new(DomainSpec::Disk { n: 128, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } })?);
    let spec = MapSpec::poly(&[(C64::new(0.1, 0.0), 0, 0), (C64::new(0.8, 0.0), 1, 0)], &[(C64::new(0.0, 0.3), 2, 0)]);
    let m = MapState::from_spec(d, HermitianTarget::new(TargetId::FsProduct), &spec)?;
    let origin = DomainPoint { chart: 0, x: C64::new(0.0, 0.0) };

    let iso = isoperimetric_check(&m, origin.x, 0.5)?;
    println!("A/L^2 = {:.5} (A={:.4}, L={:.4})", iso.ratio, iso.area, iso.boundary_length);

    let mono = monotonicity_check(&m, origin, &[0.05, 0.1, 0.2, 0.3])?;
    for (r, q) in mono.radii.iter().zip(&mono.ratios) {
        println!("A(r)/r^2 at r={r:.2}: {q:.4}");
    }

    let centers: Vec<DomainPoint> = [0.0, 0.2, -0.2].iter().map(|&s| DomainPoint { chart: 0, x: C64::new(s, 0.0) }).collect();
    let eps = epsilon_regularity_check(&m, &centers, 0.2, 2.0 * PI)?;
    println!("epsilon-regularity: {} admissible rows, largest r^2 sup e / E = {:.4}", eps.rows.len(), eps.c3);
    Ok(())
}
