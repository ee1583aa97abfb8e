use std::fmt;

/// Axis-aligned rectangle `[x0, x1] x [t0, t1]` in the `(x, t)` plane.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
}

impl Rect {
    pub const WHOLE_PLANE: Rect = Rect {
        x0: f64::NEG_INFINITY,
        x1: f64::INFINITY,
        t0: f64::NEG_INFINITY,
        t1: f64::INFINITY,
    };

    pub fn new(x0: f64, x1: f64, t0: f64, t1: f64) -> Self {
        Rect { x0, x1, t0, t1 }
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        x >= self.x0 && x <= self.x1 && t >= self.t0 && t <= self.t1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.t0 >= self.t0 && other.t1 <= self.t1
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        Rect {
            x0: self.x0.max(other.x0),
            x1: self.x1.min(other.x1),
            t0: self.t0.max(other.t0),
            t1: self.t1.min(other.t1),
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.x0 <= self.x1 && self.t0 <= self.t1)
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}] x [{}, {}]", self.x0, self.x1, self.t0, self.t1)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("covariance matrix is not positive semidefinite (failed at pivot {pivot})")]
    KernelNotPsd { pivot: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid step {step} does not resolve kernel scale {scale} (need step <= scale/8)")]
    Resolution { step: f64, scale: f64 },

    #[error("point ({x}, {t}) lies outside the domain {domain}")]
    Domain { x: f64, t: f64, domain: Rect },

    #[error("characteristic left the coefficient domain at t = {time} (position {position})")]
    DomainEscape { time: f64, position: f64 },

    #[error("empty domain of determinacy: kappa = {kappa} <= c*T = {reach}")]
    EmptyDomain { kappa: f64, reach: f64 },

    #[error("Picard iteration stopped after {iterations} sweeps, last sup difference {last_difference:e}")]
    IterationLimit { iterations: usize, last_difference: f64 },

    #[error("speed is not invertible: inf |lambda| = {infimum:e} is below the floor {floor:e}")]
    Invertibility { infimum: f64, floor: f64 },

    #[error("scale map gives eta = {value} at eps = {eps}; need 0 < eta < 1")]
    Scale { eps: f64, value: f64 },

    #[error("a-priori bound violated: {0}")]
    Invariant(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
