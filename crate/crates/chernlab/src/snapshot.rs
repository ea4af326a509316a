//! Binary map snapshots.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `CHLS` |
//! | 4 | 4 | u32 format version |
//! | 8 | 1 | domain kind: 0 torus, 1 disk, 2 sphere pair |
//! | 9 | 1 | disk metric: 0 flat, 1 spherical, 2 hyperbolic (0 otherwise) |
//! | 10 | 1 | target code |
//! | 11 | 1 | chart-id encoding: 0 all points in chart 0, 1 one byte per point |
//! | 12 | 4 | u32 N |
//! | 16 | 8 | f64 torus period or disk radius (0 on the sphere) |
//! | 24 | 8 | f64 flat disk scale (0 otherwise) |
//! | 32 | 8 | u64 point count = charts·N² |
//! | 40 | count | chart ids, encoding 1 only |
//!
//! The payload follows: per point, row-major, Re z¹, Im z¹, Re z², Im z² as f64.

use crate::domain::{DiskMetric, DomainChart, DomainSpec};
use crate::error::{Error, Result};
use crate::map::MapState;
use crate::target::{HermitianTarget, Pt, TargetId, C64};
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

pub const MAGIC: &[u8; 4] = b"CHLS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotHeader {
    pub version: u32,
    pub domain: DomainSpec,
    pub target: TargetId,
    /// 0: every point in chart 0, 1: one chart byte per point.
    pub chart_encoding: u8,
    pub points: u64,
}

impl SnapshotHeader {
    pub fn payload_len(&self) -> usize {
        self.points as usize * 32
    }
}

fn header_of(map: &MapState) -> SnapshotHeader {
    let uniform = map.chart_ids.iter().all(|&c| c == 0);
    SnapshotHeader {
        version: FORMAT_VERSION,
        domain: map.domain.spec,
        target: map.target.id,
        chart_encoding: if uniform { 0 } else { 1 },
        points: map.points.len() as u64,
    }
}

pub fn encode(map: &MapState) -> Vec<u8> {
    let h = header_of(map);
    let (kind, metric, size, scale) = match h.domain {
        DomainSpec::Torus { period, .. } => (0u8, 0u8, period, 0.0),
        DomainSpec::Disk { radius, metric, .. } => match metric {
            DiskMetric::Flat { scale } => (1, 0, radius, scale),
            DiskMetric::Spherical => (1, 1, radius, 0.0),
            DiskMetric::Hyperbolic => (1, 2, radius, 0.0),
        },
        DomainSpec::SpherePair { .. } => (2, 0, 0.0, 0.0),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + map.points.len() * 33);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&h.version.to_le_bytes());
    out.extend_from_slice(&[kind, metric, h.target.code(), h.chart_encoding]);
    out.extend_from_slice(&(h.domain.n() as u32).to_le_bytes());
    out.extend_from_slice(&size.to_le_bytes());
    out.extend_from_slice(&scale.to_le_bytes());
    out.extend_from_slice(&h.points.to_le_bytes());
    if h.chart_encoding == 1 {
        out.extend_from_slice(&map.chart_ids);
    }
    for z in &map.points {
        for v in [z[0].re, z[0].im, z[1].re, z[1].im] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Snapshot(msg.into())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn decode_header(bytes: &[u8]) -> Result<SnapshotHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let size = f64_at(bytes, 16);
    let scale = f64_at(bytes, 24);
    let domain = match (bytes[8], bytes[9]) {
        (0, _) => DomainSpec::Torus { n, period: size },
        (1, 0) => DomainSpec::Disk { n, radius: size, metric: DiskMetric::Flat { scale } },
        (1, 1) => DomainSpec::Disk { n, radius: size, metric: DiskMetric::Spherical },
        (1, 2) => DomainSpec::Disk { n, radius: size, metric: DiskMetric::Hyperbolic },
        (2, _) => DomainSpec::SpherePair { n },
        (k, m) => return Err(bad(format!("unknown domain kind {k} / metric {m}"))),
    };
    let target = TargetId::from_code(bytes[10]).ok_or_else(|| bad(format!("unknown target code {}", bytes[10])))?;
    let chart_encoding = bytes[11];
    if chart_encoding > 1 {
        return Err(bad(format!("unknown chart encoding {chart_encoding}")));
    }
    let points = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
    let expected = (domain.charts() * n * n) as u64;
    if points != expected {
        return Err(bad(format!("point count {points} does not match the domain ({expected})")));
    }
    Ok(SnapshotHeader { version, domain, target, chart_encoding, points })
}

pub fn decode(bytes: &[u8]) -> Result<MapState> {
    let h = decode_header(bytes)?;
    let count = h.points as usize;
    let table = if h.chart_encoding == 1 { count } else { 0 };
    let want = HEADER_LEN + table + h.payload_len();
    if bytes.len() != want {
        return Err(bad(format!("length {} differs from the expected {want}", bytes.len())));
    }
    let target = HermitianTarget::new(h.target);
    let charts: Vec<u8> = if table > 0 {
        bytes[HEADER_LEN..HEADER_LEN + table].to_vec()
    } else {
        vec![0; count]
    };
    if let Some(c) = charts.iter().find(|&&c| c as usize >= target.chart_count()) {
        return Err(bad(format!("chart id {c} outside the target atlas")));
    }
    let payload = &bytes[HEADER_LEN + table..];
    let points: Vec<Pt> = (0..count)
        .map(|p| {
            let at = p * 32;
            [
                C64::new(f64_at(payload, at), f64_at(payload, at + 8)),
                C64::new(f64_at(payload, at + 16), f64_at(payload, at + 24)),
            ]
        })
        .collect();
    let domain = Arc::new(DomainChart::new(h.domain)?);
    MapState::from_points(domain, target, points, charts)
}

pub fn save(map: &MapState, path: &Path) -> Result<()> {
    std::fs::write(path, encode(map))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MapState> {
    decode(&std::fs::read(path)?)
}

pub fn read_header(path: &Path) -> Result<SnapshotHeader> {
    decode_header(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::MapSpec;
    use proptest::prelude::*;

    fn sample_map(domain: DomainSpec, target: TargetId, seed: u64) -> MapState {
        let d = Arc::new(DomainChart::new(domain).unwrap());
        let spec = MapSpec::random_trig(seed, [C64::new(0.4, 0.1), C64::new(-0.2, 0.3)], 0.3, 2.0 * std::f64::consts::PI, 2);
        MapState::from_spec(d, HermitianTarget::new(target), &spec).unwrap()
    }

    #[test]
    fn payload_length_and_layout() {
        let m = sample_map(DomainSpec::Torus { n: 8, period: 2.0 * std::f64::consts::PI }, TargetId::FlatC2, 3);
        let b = encode(&m);
        assert_eq!(b.len(), HEADER_LEN + 2 * 2 * 8 * 64);
        assert_eq!(&b[0..4], MAGIC);
        let first = f64::from_le_bytes(b[HEADER_LEN..HEADER_LEN + 8].try_into().unwrap());
        assert_eq!(first, m.points[0][0].re);
        let z2im = f64::from_le_bytes(b[HEADER_LEN + 24..HEADER_LEN + 32].try_into().unwrap());
        assert_eq!(z2im, m.points[0][1].im);
    }

    #[test]
    fn corrupt_snapshots_are_rejected() {
        let m = sample_map(DomainSpec::Torus { n: 8, period: 1.0 }, TargetId::Hopf, 1);
        let b = encode(&m);
        assert!(matches!(decode(&b[..b.len() - 1]), Err(Error::Snapshot(_))));
        let mut wrong = b.clone();
        wrong[0] = b'X';
        assert!(matches!(decode(&wrong), Err(Error::Snapshot(_))));
        let mut ver = b.clone();
        ver[4] = 9;
        assert!(matches!(decode(&ver), Err(Error::Snapshot(_))));
    }

    #[test]
    fn sphere_pair_carries_chart_table() {
        let d = Arc::new(DomainChart::new(DomainSpec::SpherePair { n: 16 }).unwrap());
        let m = MapState::from_spec(d, HermitianTarget::new(TargetId::FsProduct), &MapSpec::fs_bubble(3.0)).unwrap();
        let b = encode(&m);
        let h = decode_header(&b).unwrap();
        assert_eq!(h.chart_encoding, 1);
        assert_eq!(h.points, 2 * 256);
        let back = decode(&b).unwrap();
        assert_eq!(back.chart_ids, m.chart_ids);
        assert_eq!(encode(&back), b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn save_load_save_is_identical(seed in 0u64..1000, kind in 0usize..3, target in 0u8..3) {
            let domain = match kind {
                0 => DomainSpec::Torus { n: 8, period: 3.0 },
                1 => DomainSpec::Disk { n: 12, radius: 0.6, metric: DiskMetric::Hyperbolic },
                _ => DomainSpec::Disk { n: 10, radius: 1.5, metric: DiskMetric::Flat { scale: 0.7 } },
            };
            let m = sample_map(domain, TargetId::from_code(target).unwrap(), seed);
            let first = encode(&m);
            let second = encode(&decode(&first).unwrap());
            prop_assert_eq!(first, second);
        }
    }
}
