use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} must satisfy {constraint}, got {value}")]
    Domain {
        what: &'static str,
        constraint: &'static str,
        value: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solution blew up (value > 1e12) at t = {time}")]
    BlowUp { time: f64 },

    #[error("a-priori bound violated at r = {radius}: value {value} > bound {bound}")]
    AprioriBound { radius: f64, value: f64, bound: f64 },

    #[error(
        "sweep did not converge at t = {t}, M = {radius} (last relative change {last_change:e}); refine the grid near r = M"
    )]
    Resolution {
        t: f64,
        radius: f64,
        last_change: f64,
    },

    #[error("origin value decreased along the sweep ({previous} -> {current}); scheme is not monotone at this resolution")]
    Monotonicity { previous: f64, current: f64 },

    #[error("inconsistent blow-up solves: numerator {numerator} is negative beyond tolerance")]
    Inconsistent { numerator: f64 },

    #[error("particle population exceeded cap of {cap} at t = {time}")]
    Explosion { cap: usize, time: f64 },

    #[error("singular design in rate fit: {0}")]
    SingularFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn require(
    cond: bool,
    what: &'static str,
    constraint: &'static str,
    value: f64,
) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            constraint,
            value,
        })
    }
}
