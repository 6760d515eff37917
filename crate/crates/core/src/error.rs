use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("{name} is out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },

    #[error("vehicle {vehicle}: {reason}")]
    Infeasible { vehicle: usize, reason: Infeasibility },

    #[error("{0}")]
    Capacity(Infeasibility),

    #[error("{what} did not converge within {iters} iterations")]
    NotConverged { what: &'static str, iters: usize },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. } | Error::Capacity(_))
    }
}

/// Why a per-vehicle subproblem (or the server allocation) has no feasible point.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infeasibility {
    #[error("latency budget exhausted (remaining {remaining} s)")]
    NoLatencyBudget { remaining: f64 },

    #[error("size window is empty: lower {lower} > upper {upper}")]
    SizeWindow { lower: f64, upper: f64 },

    #[error("no grid size inside [{lower}, {upper}]")]
    EmptyGridWindow { lower: f64, upper: f64 },

    #[error("required power {required} W exceeds P_max {p_max} W")]
    PowerBound { required: f64, p_max: f64 },

    #[error("required CPU frequency {required} Hz exceeds f_max {f_max} Hz")]
    CpuBound { required: f64, f_max: f64 },

    #[error("server demand {demand} Hz exceeds capacity {capacity} Hz")]
    ServerCapacity { demand: f64, capacity: f64 },

    #[error("server capacity {capacity} Hz leaves nothing to allocate")]
    NoCapacity { capacity: f64 },
}
