//! Save a map, read its header and check that save -> load -> save is
//! byte-identical.
use chernlab::domain::{DomainChart, DomainSpec};
use chernlab::map::{MapSpec, MapState};
use chernlab::snapshot;
use chernlab::target::{HermitianTarget, TargetId};
use std::sync::Arc;

fn main() -> chernlab::Result<()> {
    let d = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: 32 })?);
    let m = MapState::from_spec(d, HermitianTarget::new(TargetId::FsProduct), &MapSpec::fs_bubble(4.0))?;
    let bytes = snapshot::encode(&m);
    let header = snapshot::decode_header(&bytes)?;
    println!("{} bytes, header {:?}", bytes.len(), header);
    let again = snapshot::encode(&snapshot::decode(&bytes)?);
    println!("round trip identical: {}", again == bytes);
    Ok(())
}
