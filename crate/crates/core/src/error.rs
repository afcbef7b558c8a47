use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite derivative in state slice `{slice}` (index {index}) at t = {t} s")]
    NonFinite { slice: String, index: usize, t: f64 },

    #[error(
        "no steady state within {max_duration} s: peak-to-peak {last_ptp:e} in `{channel}` exceeds {tol:e} \
         (operating point unstable or badly chosen?)"
    )]
    SteadyStateTimeout {
        max_duration: f64,
        channel: String,
        last_ptp: f64,
        tol: f64,
    },

    #[error("operating point infeasible: {0}")]
    Infeasible(String),

    #[error("equilibrium search diverged (residual {residual:e})")]
    EquilibriumDiverged { residual: f64, last: Vec<f64> },

    #[error("{freq} Hz is not on an FFT bin of the {n}-sample window at fs = {fs} Hz")]
    OffBin { freq: f64, n: usize, fs: f64 },

    #[error("terminal voltage matrix at {freq} Hz is ill-conditioned (condition number {cond:e})")]
    IllConditioned { freq: f64, cond: f64 },

    #[error(
        "cross-axis voltage at {freq} Hz is {ratio:.3e} of the driven axis; \
         the direct estimate needs < 1e-2, use the two-injection estimate instead"
    )]
    CrossAxisVoltage { freq: f64, ratio: f64 },

    #[error("frequencies missing a d- or q-axis run: {0:?}")]
    IncompleteSweep(Vec<f64>),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("least-squares problem is rank deficient ({0}); try fewer poles")]
    RankDeficient(String),

    #[error("Jacobian entry ({row}, {col}) failed the step-halving check: {coarse:e} vs {fine:e}")]
    Richardson {
        row: usize,
        col: usize,
        coarse: f64,
        fine: f64,
    },

    #[error("model has a nonzero proportional term and cannot be realized; refit without it")]
    Improper,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
