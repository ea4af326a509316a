//! Bubble tree of the two-scale family (x, k x, k^2 x) concentrating at 0.
use chernlab::bubble::{build_tree, distance_bubbling_check, energy_identity_check, mass_accounting, BubbleConfig};
use chernlab::domain::{DomainChart, DomainSpec};
use chernlab::flow::{concentrating_family, FamilyKind};
use chernlab::target::{HermitianTarget, TargetId};
use std::sync::Arc;

fn main() -> chernlab::Result<()> {
    let cfg = BubbleConfig::default();
    let d = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: 256 })?);
    let family = concentrating_family(&d, HermitianTarget::new(TargetId::FsProduct), &FamilyKind::TwoScale, &cfg.k_values)?;
    let tree = build_tree(&family, &cfg)?;
    for node in tree.root.nodes() {
        println!("node {:<5} mass {:.4} energy {:.4}", node.label, node.mass_in, node.energy);
    }
    let id = energy_identity_check(&tree, &family)?;
    println!("energy identity: limit {:.4}, relative error {:.2e}", id.limit_energy, id.relative);
    println!("distance mismatch {:.2e}", distance_bubbling_check(&tree).max_mismatch);
    for row in mass_accounting(&tree, 0.03) {
        println!("mass accounting {}: mismatch {:.2e}", row.label, row.relative_mismatch);
    }
    Ok(())
}
