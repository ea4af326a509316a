//! Metric, Chern connection, torsion and curvature of the three targets at a
//! sample point.
use chernlab::target::{min_eig, HermitianTarget, TargetId, C64};

fn main() -> chernlab::Result<()> {
    let z = [C64::new(0.7, 0.2), C64::new(-0.3, 0.5)];
    for id in [TargetId::FlatC2, TargetId::FsProduct, TargetId::Hopf] {
        let t = HermitianTarget::new(id);
        let h = t.metric(0, z)?;
        let torsion = t.torsion(0, z)?;
        let tmax = torsion.iter().flatten().flatten().map(|c| c.norm()).fold(0.0, f64::max);
        let r = t.curvature(0, z)?;
        let rmax = r.mixed.iter().flatten().flatten().flatten().map(|c| c.norm()).fold(0.0, f64::max);
        println!(
            "{:<10} charts={} kahler={} h11={:.4} min eig={:.4} max|T|={:.3e} max|R mixed|={:.4}",
            id.name(),
            t.chart_count(),
            id.is_kahler(),
            h[(0, 0)].re,
            min_eig(&h),
            tmax,
            rmax
        );
    }
    let fs = HermitianTarget::new(TargetId::FsProduct);
    let w = fs.transition(0, 3, z)?;
    println!("fs_product chart 0 -> 3: ({:.4}, {:.4})", w[0], w[1]);
    Ok(())
}
