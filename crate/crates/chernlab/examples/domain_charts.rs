//! Source surfaces: area, Gauss curvature and geodesic disks on each kind.
use chernlab::domain::{DiskMetric, DomainChart, DomainPoint, DomainSpec};
use chernlab::target::C64;

fn main() -> chernlab::Result<()> {
    let specs = [
        DomainSpec::Torus { n: 64, period: 1.0 },
        DomainSpec::Disk { n: 64, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } },
        DomainSpec::Disk { n: 64, radius: 0.6, metric: DiskMetric::Hyperbolic },
        DomainSpec::SpherePair { n: 64 },
    ];
    for spec in specs {
        let d = DomainChart::new(spec)?;
        let ones = vec![1.0; d.len()];
        let area = d.integrate(&ones, None)?;
        let k = d.gauss_curvature();
        let center = DomainPoint { chart: 0, x: C64::new(0.0, 0.0) };
        let disk = d.geodesic_disk_mask(center, 0.2)?;
        let disk_area = d.integrate(&ones, Some(&disk))?;
        println!(
            "{:?}: points={} area={:.5} K in [{:.4}, {:.4}] area of geodesic 0.2-disk={:.5}",
            spec,
            d.len(),
            area,
            k.iter().cloned().fold(f64::INFINITY, f64::min),
            k.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            disk_area
        );
    }
    Ok(())
}
