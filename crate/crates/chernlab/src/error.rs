use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("metric not positive-definite (smallest eigenvalue {0:e})")]
    SingularMetric(f64),
    #[error("point outside chart {chart}: {detail}")]
    OutOfChart { chart: usize, detail: String },
    #[error("point not in overlap of charts {from} and {to}")]
    NotInOverlap { from: usize, to: usize },
    #[error("grid resolution {0} below minimum of 8")]
    ResolutionTooSmall(usize),
    #[error("integration region is empty")]
    EmptyRegion,
    #[error("radius {r} exceeds chart bound {bound}")]
    RadiusTooLarge { r: f64, bound: f64 },
    #[error("loop is not closed")]
    OpenCurve,
    #[error("chart tear at grid point {0}")]
    ChartTear(usize),
    #[error("map not Chern-harmonic: residual {residual:e} above threshold {threshold:e}")]
    NotHarmonic { residual: f64, threshold: f64 },
    #[error("conformal factor vanishes")]
    ZeroConformalFactor,
    #[error("flow diverged at step {0}")]
    Diverged(usize),
    #[error("energy increased for 10 consecutive explicit steps (step {0})")]
    StepTooLarge(usize),
    #[error("empty test suite")]
    EmptySuite,
    #[error("extrinsic ball meets the map boundary")]
    BoundaryIntersected,
    #[error("need at least {need} radii, got {got}")]
    InsufficientRadii { need: usize, got: usize },
    #[error("family is empty or too short")]
    NoFamily,
    #[error("region carries no energy")]
    ZeroEnergyRegion,
    #[error("energy {energy:e} below renormalization constant {c0:e}")]
    EnergyBelowC0 { energy: f64, c0: f64 },
    #[error("resample point outside source domain")]
    ResampleOutOfDomain,
    #[error("annulus too thin: inner {inner:e}, outer {outer:e}")]
    AnnulusTooThin { inner: f64, outer: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
