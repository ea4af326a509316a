//! Experiment configuration: TOML with flat dotted keys.
//!
//! ```toml
//! seed = 7
//! target = "fs_product"          # flat_c2 | fs_product | hopf
//! domain.kind = "disk"           # torus | disk | sphere
//! domain.n = 128
//! domain.size = 1.0              # torus period or disk radius
//! domain.metric = "flat"         # disk: flat | spherical | hyperbolic
//! map.kind = "poly"              # constant | fs_bubble | two_scale | two_center | poly | random_trig | snapshot
//! map.z1 = [[0.3, 0.0, 0, 0], [0.6, 0.0, 1, 0]]   # terms [re, im, a, b] of c x^a x̄^b
//! flow.dt = 0.2
//! bubble.family = "fs_product_bubble"
//! output.dir = "out"
//! ```
//!
//! Unknown keys are rejected; missing required keys are named in the error.

use crate::bubble::BubbleConfig;
use crate::domain::{DiskMetric, DomainSpec};
use crate::error::{Error, Result};
use crate::flow::{FamilyKind, FlowConfig, Scheme};
use crate::map::MapSpec;
use crate::regularity::AnalysisConfig;
use crate::target::{TargetId, C64};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Environment variable overriding `output.dir`.
pub const OUT_DIR_ENV: &str = "CHERNLAB_OUT";

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "target",
    "domain.kind",
    "domain.n",
    "domain.size",
    "domain.metric",
    "domain.scale",
    "map.kind",
    "map.k",
    "map.c",
    "map.value",
    "map.z1",
    "map.z2",
    "map.base",
    "map.amplitude",
    "map.modes",
    "map.path",
    "flow.dt",
    "flow.scheme",
    "flow.tol",
    "flow.max_steps",
    "flow.cfl_safety",
    "analysis.radii_ladder",
    "analysis.epsilon1_candidate",
    "analysis.epsilon2_candidate",
    "bubble.family",
    "bubble.c",
    "bubble.k_values",
    "bubble.c0",
    "bubble.epsilon1_candidate",
    "bubble.radii_ladder",
    "bubble.sphere_n",
    "bubble.neck_cells",
    "verify.resolutions",
    "verify.samples",
    "verify.region_radius",
    "output.dir",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialMap {
    Constant { value: [f64; 4] },
    FsBubble { k: f64 },
    TwoScale { k: f64 },
    TwoCenter { k: f64, c: f64 },
    /// Terms [re, im, a, b] of c x^a x̄^b per component.
    Poly { z1: Vec<[f64; 4]>, z2: Vec<[f64; 4]> },
    RandomTrig { base: [f64; 4], amplitude: f64, modes: usize },
    Snapshot { path: PathBuf },
}

impl InitialMap {
    /// Closed form of the map; `None` for snapshots.
    pub fn spec(&self, seed: u64, period: f64) -> Option<MapSpec> {
        let pt = |v: &[f64; 4]| [C64::new(v[0], v[1]), C64::new(v[2], v[3])];
        let terms = |t: &[[f64; 4]]| -> Vec<(C64, u32, u32)> {
            t.iter().map(|r| (C64::new(r[0], r[1]), r[2] as u32, r[3] as u32)).collect()
        };
        Some(match self {
            InitialMap::Constant { value } => MapSpec::constant(pt(value)),
            InitialMap::FsBubble { k } => MapSpec::fs_bubble(*k),
            InitialMap::TwoScale { k } => MapSpec::two_scale(*k),
            InitialMap::TwoCenter { k, c } => MapSpec::two_center(*k, *c),
            InitialMap::Poly { z1, z2 } => MapSpec::poly(&terms(z1), &terms(z2)),
            InitialMap::RandomTrig { base, amplitude, modes } => {
                MapSpec::random_trig(seed, pt(base), *amplitude, period, *modes)
            }
            InitialMap::Snapshot { .. } => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub resolutions: Vec<usize>,
    /// Maps per target in randomized corpora.
    pub samples: usize,
    /// Radius of the interior disk on which disk-domain checks are evaluated.
    pub region_radius: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { resolutions: vec![64, 128, 256], samples: 10, region_radius: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub target: TargetId,
    pub domain: DomainSpec,
    pub map: Option<InitialMap>,
    pub flow: FlowConfig,
    pub analysis: AnalysisConfig,
    /// `fs_product_bubble`, `two_scale`, `two_center` or `constant`.
    pub family: Option<String>,
    /// Half distance between the two centers of the two-center family.
    pub family_c: f64,
    pub bubble: BubbleConfig,
    pub verify: VerifyConfig,
    pub output_dir: PathBuf,
}

/// Leaf values of a TOML table keyed by dotted path.
fn flatten(prefix: &str, t: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(sub) => flatten(&key, sub, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

struct Keys(BTreeMap<String, toml::Value>);

fn wrong(key: &str, what: &str) -> Error {
    Error::Config(format!("key `{key}` must be {what}"))
}

fn missing(key: &str) -> Error {
    Error::Config(format!("missing key `{key}`"))
}

impl Keys {
    fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    fn num(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(wrong(key, "a number")),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn f64_req(&self, key: &str) -> Result<f64> {
        self.num(key)?.ok_or_else(|| missing(key))
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(wrong(key, "a non-negative integer")),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.uint(key)?.map_or(default, |v| v as usize))
    }

    fn str_opt(&self, key: &str) -> Result<Option<&str>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(wrong(key, "a string")),
        }
    }

    fn str_req(&self, key: &str) -> Result<&str> {
        self.str_opt(key)?.ok_or_else(|| missing(key))
    }

    fn nums(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    toml::Value::Float(f) => Ok(*f),
                    toml::Value::Integer(i) => Ok(*i as f64),
                    _ => Err(wrong(key, "an array of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(wrong(key, "an array of numbers")),
        }
    }

    fn quad(&self, key: &str) -> Result<[f64; 4]> {
        let v = self.nums(key)?.ok_or_else(|| missing(key))?;
        v.try_into().map_err(|_| wrong(key, "an array of 4 numbers"))
    }

    fn terms(&self, key: &str) -> Result<Vec<[f64; 4]>> {
        let Some(v) = self.0.get(key) else { return Err(missing(key)) };
        let toml::Value::Array(rows) = v else { return Err(wrong(key, "an array of [re, im, a, b] terms")) };
        rows.iter()
            .map(|r| {
                let toml::Value::Array(xs) = r else { return Err(wrong(key, "an array of [re, im, a, b] terms")) };
                let nums: Vec<f64> = xs
                    .iter()
                    .map(|x| match x {
                        toml::Value::Float(f) => Ok(*f),
                        toml::Value::Integer(i) => Ok(*i as f64),
                        _ => Err(wrong(key, "an array of [re, im, a, b] terms")),
                    })
                    .collect::<Result<_>>()?;
                let t: [f64; 4] = nums.try_into().map_err(|_| wrong(key, "an array of [re, im, a, b] terms"))?;
                if t[2] < 0.0 || t[3] < 0.0 || t[2].fract() != 0.0 || t[3].fract() != 0.0 {
                    return Err(wrong(key, "a list of terms with non-negative integer exponents"));
                }
                Ok(t)
            })
            .collect()
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        if let Some(k) = flat.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let keys = Keys(flat);

        let seed = keys.uint("seed")?.ok_or_else(|| missing("seed"))?;
        let target_name = keys.str_req("target")?;
        let target = TargetId::parse(target_name).ok_or_else(|| wrong("target", "one of flat_c2, fs_product, hopf"))?;

        let n = keys.uint("domain.n")?.ok_or_else(|| missing("domain.n"))? as usize;
        let domain = match keys.str_req("domain.kind")? {
            "torus" => DomainSpec::Torus { n, period: keys.f64_or("domain.size", 2.0 * std::f64::consts::PI)? },
            "disk" => {
                let metric = match keys.str_opt("domain.metric")?.unwrap_or("flat") {
                    "flat" => DiskMetric::Flat { scale: keys.f64_or("domain.scale", 1.0)? },
                    "spherical" => DiskMetric::Spherical,
                    "hyperbolic" => DiskMetric::Hyperbolic,
                    _ => return Err(wrong("domain.metric", "one of flat, spherical, hyperbolic")),
                };
                DomainSpec::Disk { n, radius: keys.f64_or("domain.size", 1.0)?, metric }
            }
            "sphere" => DomainSpec::SpherePair { n },
            _ => return Err(wrong("domain.kind", "one of torus, disk, sphere")),
        };

        let map = match keys.str_opt("map.kind")? {
            None => None,
            Some(kind) => Some(match kind {
                "constant" => InitialMap::Constant { value: keys.quad("map.value")? },
                "fs_bubble" => InitialMap::FsBubble { k: keys.f64_req("map.k")? },
                "two_scale" => InitialMap::TwoScale { k: keys.f64_req("map.k")? },
                "two_center" => InitialMap::TwoCenter { k: keys.f64_req("map.k")?, c: keys.f64_or("map.c", 0.5)? },
                "poly" => InitialMap::Poly { z1: keys.terms("map.z1")?, z2: keys.terms("map.z2")? },
                "random_trig" => InitialMap::RandomTrig {
                    base: keys.quad("map.base")?,
                    amplitude: keys.f64_or("map.amplitude", 0.3)?,
                    modes: keys.usize_or("map.modes", 3)?,
                },
                "snapshot" => InitialMap::Snapshot { path: PathBuf::from(keys.str_req("map.path")?) },
                _ => return Err(wrong("map.kind", "a known map id")),
            }),
        };

        let fd = FlowConfig::default();
        let flow = FlowConfig {
            dt: keys.f64_or("flow.dt", fd.dt)?,
            scheme: match keys.str_opt("flow.scheme")? {
                None => fd.scheme,
                Some("explicit") => Scheme::Explicit,
                Some("semi_implicit") => Scheme::SemiImplicit,
                Some(_) => return Err(wrong("flow.scheme", "explicit or semi_implicit")),
            },
            tol: keys.f64_or("flow.tol", fd.tol)?,
            max_steps: keys.usize_or("flow.max_steps", fd.max_steps)?,
            cfl_safety: keys.f64_or("flow.cfl_safety", fd.cfl_safety)?,
        };
        flow.validate()?;

        let ad = AnalysisConfig::default();
        let analysis = AnalysisConfig {
            radii_ladder: keys.nums("analysis.radii_ladder")?.unwrap_or(ad.radii_ladder),
            epsilon1_candidate: keys.f64_or("analysis.epsilon1_candidate", ad.epsilon1_candidate)?,
            epsilon2_candidate: keys.f64_or("analysis.epsilon2_candidate", ad.epsilon2_candidate)?,
        };
        analysis.validate()?;

        let family = keys.str_opt("bubble.family")?.map(str::to_string);
        let bd = BubbleConfig::default();
        let epsilon1 = keys.f64_or("bubble.epsilon1_candidate", bd.epsilon1)?;
        let bubble = BubbleConfig {
            k_values: keys.nums("bubble.k_values")?.unwrap_or(bd.k_values),
            c0: keys.f64_or("bubble.c0", 0.25 * epsilon1)?,
            epsilon1,
            radii_ladder: keys.nums("bubble.radii_ladder")?.unwrap_or(bd.radii_ladder),
            sphere_n: keys.usize_or("bubble.sphere_n", bd.sphere_n)?,
            neck_cells: keys.usize_or("bubble.neck_cells", bd.neck_cells)?,
        };
        if family.is_some() || keys.has("bubble.k_values") {
            bubble.validate()?;
        }

        let vd = VerifyConfig::default();
        let verify = VerifyConfig {
            resolutions: match keys.nums("verify.resolutions")? {
                None => vd.resolutions,
                Some(v) => v.iter().map(|x| *x as usize).collect(),
            },
            samples: keys.usize_or("verify.samples", vd.samples)?,
            region_radius: keys.f64_or("verify.region_radius", vd.region_radius)?,
        };

        let output_dir = match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => PathBuf::from(keys.str_opt("output.dir")?.unwrap_or("out")),
        };

        let cfg = ExperimentConfig {
            seed,
            target,
            domain,
            map,
            flow,
            analysis,
            family_c: keys.f64_or("bubble.c", 0.5)?,
            family,
            bubble,
            verify,
            output_dir,
        };
        if let Some(f) = &cfg.family {
            cfg.family_kind_of(f)?;
        }
        Ok(cfg)
    }

    fn family_kind_of(&self, name: &str) -> Result<FamilyKind> {
        match name {
            "fs_product_bubble" => Ok(FamilyKind::FsProductBubble),
            "two_scale" => Ok(FamilyKind::TwoScale),
            "two_center" => Ok(FamilyKind::TwoCenter { c: self.family_c }),
            "constant" => Ok(FamilyKind::MoebiusComposed { base: MapSpec::constant([C64::new(0.3, 0.0), C64::new(0.0, 0.0)]) }),
            _ => Err(wrong("bubble.family", "one of fs_product_bubble, two_scale, two_center, constant")),
        }
    }

    pub fn family_kind(&self) -> Result<FamilyKind> {
        self.family_kind_of(self.family.as_deref().ok_or_else(|| missing("bubble.family"))?)
    }

    pub fn initial_map(&self) -> Result<&InitialMap> {
        self.map.as_ref().ok_or_else(|| missing("map.kind"))
    }

    /// Replace the grid resolution; verification ladders become N/4, N/2, N.
    pub fn override_resolution(&mut self, n: usize) {
        self.domain = self.domain.with_n(n);
        self.verify.resolutions = vec![n / 4, n / 2, n];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "seed = 3\ntarget = \"hopf\"\ndomain.kind = \"disk\"\ndomain.n = 64\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(c.domain, DomainSpec::Disk { n: 64, radius: 1.0, metric: DiskMetric::Flat { scale: 1.0 } });
        assert_eq!(c.flow, FlowConfig::default());
        assert!(c.map.is_none());
        assert!(matches!(c.initial_map(), Err(Error::Config(m)) if m.contains("map.kind")));
    }

    #[test]
    fn missing_keys_are_named() {
        for key in ["seed", "target", "domain.n", "domain.kind"] {
            let text: String = BASE.lines().filter(|l| !l.starts_with(&format!("{key} "))).map(|l| format!("{l}\n")).collect();
            match ExperimentConfig::from_toml_str(&text) {
                Err(Error::Config(m)) => assert!(m.contains(key), "{m}"),
                other => panic!("{key}: {other:?}"),
            }
        }
        let e = ExperimentConfig::from_toml_str(&format!("{BASE}map.kind = \"fs_bubble\"\n")).unwrap_err();
        assert!(e.to_string().contains("map.k"), "{e}");
    }

    #[test]
    fn unknown_and_mistyped_keys_fail() {
        assert!(ExperimentConfig::from_toml_str(&format!("{BASE}flow.dtt = 0.1\n")).is_err());
        assert!(ExperimentConfig::from_toml_str(&format!("{BASE}flow.dt = \"x\"\n")).is_err());
        assert!(ExperimentConfig::from_toml_str(&format!("{BASE}bubble.family = \"three\"\n")).is_err());
    }

    #[test]
    fn nested_tables_and_dotted_keys_agree() {
        let a = ExperimentConfig::from_toml_str(&format!("{BASE}map.kind = \"poly\"\nmap.z1 = [[0.5, 0.0, 1, 0]]\nmap.z2 = [[0.1, 0.2, 0, 2]]\n")).unwrap();
        let b = ExperimentConfig::from_toml_str(&format!("{BASE}[map]\nkind = \"poly\"\nz1 = [[0.5, 0.0, 1, 0]]\nz2 = [[0.1, 0.2, 0, 2]]\n")).unwrap();
        assert_eq!(a, b);
        assert!(a.initial_map().unwrap().spec(0, 1.0).unwrap().is_holomorphic() == false);
    }
}
