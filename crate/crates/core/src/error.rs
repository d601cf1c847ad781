use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("netlist syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown branch kind `{0}`")]
    UnknownBranchKind(String),
    #[error("unit `{unit}` is not valid for a {kind} branch")]
    BadUnit { kind: String, unit: String },
    #[error("branch {branch} references undeclared node `{node}`")]
    UndeclaredNode { branch: usize, node: String },
    #[error("branch {branch} has non-positive value {value}")]
    NonPositiveValue { branch: usize, value: f64 },
    #[error("invalid netlist: {0}")]
    InvalidNetlist(String),

    #[error("unknown builtin circuit `{0}`")]
    UnknownBuiltin(String),
    #[error("builtin `{builtin}` requires parameter `{param}`")]
    MissingParameter { builtin: String, param: String },
    #[error("unknown parameter `{param}` for builtin `{builtin}`")]
    UnknownParameter { builtin: String, param: String },

    #[error("circuit failed validation: {0}")]
    InvalidCircuit(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("transform is singular or ill-conditioned (reciprocal condition {rcond:e})")]
    SingularTransform { rcond: f64 },
    #[error("kinetic form is not invertible: {0}")]
    SingularKinetic(String),
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
    #[error("variable `{0}` appears in the potential and cannot be eliminated")]
    NotCyclic(String),
    #[error("cyclic block is not positive definite")]
    IndefiniteBlock,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("truncation too small for mode `{mode}`: top level population {population:e}")]
    TruncationTooSmall { mode: String, population: f64 },
    #[error("two-level approximation invalid: {0}")]
    TwoLevelInvalid(String),
    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("potential is not bound: {0}")]
    Unbound(String),
    #[error("resonant divergence: Delta equals omega")]
    Resonance,
    #[error("coupling parity mismatch: {0}")]
    ParityMismatch(String),
    #[error("ambiguous adiabatic labels: {0}")]
    LabelAmbiguity(String),
    #[error("unstable normal modes: Omega_minus^2 = {0:e} <= 0")]
    Instability(f64),

    #[error("unknown qubit {0}")]
    UnknownQubit(usize),
    #[error("time step {dt:e} too coarse, need dt <= {limit:e}")]
    StepTooCoarse { dt: f64, limit: f64 },
    #[error("norm drift {drift:e} exceeds tolerance at t = {time}")]
    NormDrift { drift: f64, time: f64 },
    #[error("step-halving check failed: expectations differ by {difference:e}")]
    NotConverged { difference: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("infeasible guard band: best achievable gap {best:e} < {requested:e}")]
    InfeasibleGuardBand { best: f64, requested: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation-type failures (bad input) as opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Syntax { .. }
                | Error::UnknownBranchKind(_)
                | Error::BadUnit { .. }
                | Error::UndeclaredNode { .. }
                | Error::NonPositiveValue { .. }
                | Error::InvalidNetlist(_)
                | Error::UnknownBuiltin(_)
                | Error::MissingParameter { .. }
                | Error::UnknownParameter { .. }
                | Error::InvalidCircuit(_)
                | Error::UnsupportedTopology(_)
                | Error::UnknownVariable(_)
                | Error::UnknownQubit(_)
                | Error::InvalidArgument(_)
                | Error::InvalidState(_)
                | Error::Json(_)
        )
    }
}
