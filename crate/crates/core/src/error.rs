use thiserror::Error;

use crate::median::MedianResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("exp-overflow: matrix exponential is not finite")]
    ExpOverflow,

    #[error("eig-fail: eigenvalue iteration did not converge")]
    EigFail,

    #[error("not-hurwitz: spectral abscissa {0} is not negative")]
    NotHurwitz(f64),

    #[error("period-singular: I - exp(A T) is numerically singular for T = {period}")]
    PeriodSingular { period: f64 },

    #[error("empty: median of an empty sample set")]
    Empty,

    #[error("no-converge: geometric median residual {} after {} iterations", best.residual, best.iterations)]
    NoConverge { best: MedianResult },

    #[error("sup-fail: unit-sphere search did not converge (best lower estimate {best})")]
    SupFail { best: f64 },

    #[error("invalid-bound: invariant-set bound b = {0} must be positive for a nonzero input")]
    InvalidBound(f64),

    #[error("structure-mismatch: {0}")]
    StructureMismatch(String),

    #[error("diverged: state became non-finite after sample {last_finite}")]
    Diverged { last_finite: usize },

    #[error("no-pss: no periodic steady state after {periods} periods (last increment {increment:e})")]
    NoPss { periods: usize, increment: f64 },

    #[error("unbounded-suspect: trial {trial} diverged while estimating b")]
    UnboundedSuspect { trial: usize },
}
