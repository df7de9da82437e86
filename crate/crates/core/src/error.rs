use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains NaN or infinite entries ({0})")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("spectra overlap: eigenvalue gap {gap:e} below tolerance {tol:e}")]
    SpectraOverlap { gap: f64, tol: f64 },
    #[error("matrix {which} is not stable (spectral abscissa {abscissa:e})")]
    UnstableMatrix { which: &'static str, abscissa: f64 },
    #[error("right-hand side is not symmetric (asymmetry {0:e})")]
    NonSymmetricInput(f64),
    #[error("pair is not observable (rank {rank} < {order})")]
    NotObservable { rank: usize, order: usize },
    #[error("pair is not controllable (rank {rank} < {order})")]
    NotControllable { rank: usize, order: usize },
    #[error("pole placement failed: {0}")]
    PlacementFailed(String),
    #[error("resolvent at s = {re} + {im}j is singular or too ill-conditioned")]
    ResolventSingular { re: f64, im: f64 },
    #[error("Gramian traces disagree: {ctrl:e} vs {obs:e}")]
    GramianMismatch { ctrl: f64, obs: f64 },
    #[error("interpolation point {re} + {im}j lies on the spectrum of {which}")]
    PointOnSpectrum { re: f64, im: f64, which: &'static str },
    #[error("Krylov basis is rank deficient")]
    RankDeficient,
    #[error("interpolation points are clustered (basis condition {0:e})")]
    ClusteredPoints(f64),
    #[error("decision variables are outside the stability domain (abscissa {0:e})")]
    InfeasiblePoint(f64),
    #[error("initial point is outside the stability domain (abscissa {0:e})")]
    InfeasibleStart(f64),
    #[error("iteration diverged at step {0}")]
    Diverged(usize),
    #[error("Schur decomposition did not converge")]
    SchurFailed,
    #[error("semidefinite program is infeasible (phase I slack {0:e})")]
    Infeasible(f64),
    #[error("interior-point iteration stalled ({0:e})")]
    NewtonStalled(f64),
    #[error("problem has {vars} scalar variables, limit is {limit}")]
    SizeLimit { vars: usize, limit: usize },
    #[error("M22 is singular or indefinite (min eigenvalue {0:e})")]
    SingularM22(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
