use std::fmt;
use std::process::ExitCode;

use cfsr::data::DataError;
use cfsr::metrics::MetricError;
use cfsr::model::StoreError;
use cfsr::train::TrainError;
use cfsr::{ModelError, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Io,
    Config,
    Numeric,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Config => 4,
            Kind::Numeric => 5,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Io => "io",
            Kind::Config => "config",
            Kind::Numeric => "numeric",
        }
    }
}

/// A command failure rendered as one `error[kind]: message` line.
#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Kind::Io, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {flat}", self.kind.tag())
    }
}

/// Message including every `source` in the chain.
fn chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        let text = s.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
        cur = s.source();
    }
    msg
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let kind = match e {
            DataError::NotFound(_)
            | DataError::Io { .. }
            | DataError::Decode { .. }
            | DataError::Encode { .. }
            | DataError::NonRgb { .. }
            | DataError::Unsupported { .. } => Kind::Io,
            DataError::Dimensions(_)
            | DataError::ScaleMismatch { .. }
            | DataError::PatchTooLarge { .. }
            | DataError::Empty
            | DataError::Tensor(_) => Kind::Config,
        };
        Self::new(kind, chain(&e))
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Self::new(Kind::Io, chain(&e))
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Store(s) => s.into(),
            other => Self::new(Kind::Config, chain(&other)),
        }
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        Self::new(Kind::Config, chain(&e))
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        Self::new(Kind::Config, chain(&e))
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Store(s) => s.into(),
            TrainError::Tensor(t) => t.into(),
            TrainError::NonFiniteLoss { .. } => Self::new(Kind::Numeric, chain(&e)),
            TrainError::Io { .. } => Self::new(Kind::Io, chain(&e)),
            TrainError::InvalidConfig(_) => Self::new(Kind::Config, chain(&e)),
            TrainError::MissingGradient(_) => Self::new(Kind::Config, chain(&e)),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(Kind::Io, chain(&e))
    }
}
