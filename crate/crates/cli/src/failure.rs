use std::fmt;

use hirul_core::case::CaseError;
use hirul_core::cell::CellError;
use hirul_core::montecarlo::McError;
use hirul_core::opf::OpfError;
use hirul_core::region::RegionError;
use hirul_core::stats::StatsError;

/// A failed run, split by exit code: bad input (2) or a computation that
/// could not finish (3).
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e:#}"),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn config(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Outcome<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow::anyhow!(msg.into()))
}

impl From<CellError> for Failure {
    fn from(e: CellError) -> Self {
        match e {
            CellError::AlreadyDead { .. } | CellError::NonTerminating { .. } => {
                Failure::Runtime(e.into())
            }
            _ => Failure::Config(e.into()),
        }
    }
}

impl From<McError> for Failure {
    fn from(e: McError) -> Self {
        match e {
            McError::Cell {
                source,
                scenario_id,
            } => {
                let inner = Failure::from(source);
                let wrap = |err: anyhow::Error| err.context(format!("scenario {scenario_id}"));
                match inner {
                    Failure::Config(err) => Failure::Config(wrap(err)),
                    Failure::Runtime(err) => Failure::Runtime(wrap(err)),
                }
            }
            _ => Failure::Config(e.into()),
        }
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        Failure::Config(e.into())
    }
}

impl From<RegionError> for Failure {
    fn from(e: RegionError) -> Self {
        match e {
            RegionError::Mc(e) => e.into(),
            RegionError::Cell(e) => e.into(),
            _ => Failure::Config(e.into()),
        }
    }
}

impl From<CaseError> for Failure {
    fn from(e: CaseError) -> Self {
        Failure::Config(e.into())
    }
}

impl From<OpfError> for Failure {
    fn from(e: OpfError) -> Self {
        match e {
            OpfError::Solver(_) => Failure::Runtime(e.into()),
            OpfError::Cell(e) => e.into(),
            OpfError::Region(e) => e.into(),
            _ => Failure::Config(e.into()),
        }
    }
}
