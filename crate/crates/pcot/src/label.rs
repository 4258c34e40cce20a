//! Binary labels shared across the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The binary credibility verdict: gold labels and stage-2 predictions both
/// use it, with `Disinformation` as the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Credibility {
    Disinformation,
    Credible,
}

impl Credibility {
    pub fn is_positive(self) -> bool {
        self == Credibility::Disinformation
    }

    /// The opposite label.
    pub fn flipped(self) -> Credibility {
        match self {
            Credibility::Disinformation => Credibility::Credible,
            Credibility::Credible => Credibility::Disinformation,
        }
    }
}

impl fmt::Display for Credibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Credibility::Disinformation => f.write_str("Disinformation"),
            Credibility::Credible => f.write_str("Credible"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown credibility label: {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for Credibility {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disinformation" => Ok(Credibility::Disinformation),
            "credible" => Ok(Credibility::Credible),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_flip() {
        assert_eq!("Disinformation".parse::<Credibility>().unwrap(), Credibility::Disinformation);
        assert_eq!("credible".parse::<Credibility>().unwrap(), Credibility::Credible);
        assert!("maybe".parse::<Credibility>().is_err());
        assert_eq!(Credibility::Credible.flipped(), Credibility::Disinformation);
    }
}
