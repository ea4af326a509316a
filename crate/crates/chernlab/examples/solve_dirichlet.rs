//! Flow a polynomial map of the unit disk into the Hopf surface to a
//! Chern-harmonic map with fixed boundary values.
use chernlab::domain::{DiskMetric, DomainChart, DomainSpec};
use chernlab::flow::{flow_to_harmonic, FlowConfig};
use chernlab::map::{MapSpec, MapState};
use chernlab::target::{HermitianTarget, TargetId, C64};
use std::sync::Arc;

fn main() -> chernlab::Result<()> {
    let d = Arc::new(DomainChart::new(DomainSpec::Disk { n: 48, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } })?);
    let spec = MapSpec::poly(
        &[(C64::new(1.2, 0.0), 0, 0), (C64::new(0.3, 0.0), 1, 0), (C64::new(0.2, 0.0), 0, 1)],
        &[(C64::new(0.5, 0.0), 0, 0), (C64::new(0.2, 0.0), 0, 2)],
    );
    let initial = MapState::from_spec(d, HermitianTarget::new(TargetId::Hopf), &spec)?;
    let cfg = FlowConfig { dt: 0.2, tol: 1e-9, max_steps: 400, ..FlowConfig::default() };
    let (_, report) = flow_to_harmonic(&initial, &cfg)?;
    for (i, (r, e)) in report.residual_history.iter().zip(&report.energy_history).enumerate().step_by(5) {
        println!("step {i:>3}: residual {r:.3e} energy {e:.6}");
    }
    println!("converged={} after {} steps", report.converged, report.steps_taken);
    Ok(())
}
