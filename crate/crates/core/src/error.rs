use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("propulsion model unavailable: no rotor constants given, use the tabulated propulsion power")]
    PowerModelUnavailable,

    #[error("invalid tour: {0}")]
    InvalidTour(String),

    #[error("arc set contains a cycle that does not visit the depot: {0:?}")]
    DepotFreeCycle(Vec<usize>),

    #[error("{what}: instance size {k} exceeds the supported bound {max}")]
    SizeBound {
        what: &'static str,
        k: usize,
        max: usize,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("mixed-integer model is infeasible")]
    Infeasible,

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("benders loop hit the iteration cap ({cap}) with gap {gap:e}")]
    IterationCap {
        cap: usize,
        gap: f64,
        trace: crate::benders::BendersTrace,
    },

    #[error("at lambda = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
