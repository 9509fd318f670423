//! Shared domain vocabulary: languages, directions, unit and frame sequences.

use serde::{Deserialize, Serialize};

/// Identifier of one discrete speech unit within a language's alphabet.
pub type UnitId = u32;

/// A stream of discrete units, possibly with consecutive repeats ("durations").
pub type UnitSequence = Vec<UnitId>;

/// One feature frame, a fixed-dimension real vector.
pub type FeatureFrame = Vec<f64>;

/// An ordered sequence of feature frames.
pub type FeatureFrameSequence = Vec<FeatureFrame>;

/// One of the two synthetic languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Language {
    A,
    B,
}

impl Language {
    pub fn other(self) -> Language {
        match self {
            Language::A => Language::B,
            Language::B => Language::A,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Language::A => "a",
            Language::B => "b",
        }
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Language::A => "A",
            Language::B => "B",
        })
    }
}

/// Translation direction between the two languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a2b")]
    A2B,
    #[serde(rename = "b2a")]
    B2A,
}

impl Direction {
    pub fn source(self) -> Language {
        match self {
            Direction::A2B => Language::A,
            Direction::B2A => Language::B,
        }
    }

    pub fn target(self) -> Language {
        self.source().other()
    }

    pub fn reversed(self) -> Direction {
        match self {
            Direction::A2B => Direction::B2A,
            Direction::B2A => Direction::A2B,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::A2B => "a2b",
            Direction::B2A => "b2a",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a2b" | "A2B" => Ok(Direction::A2B),
            "b2a" | "B2A" => Ok(Direction::B2A),
            other => Err(format!("unknown direction `{other}` (expected a2b or b2a)")),
        }
    }
}

/// Collapse consecutive duplicate units into single occurrences.
///
/// `[5, 5, 3, 3, 3, 5]` becomes `[5, 3, 5]`.
pub fn collapse_runs(units: &[UnitId]) -> UnitSequence {
    let mut out = Vec::with_capacity(units.len());
    for &u in units {
        if out.last() != Some(&u) {
            out.push(u);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_runs_removes_consecutive_duplicates() {
        assert_eq!(collapse_runs(&[5, 5, 3, 3, 3, 5]), vec![5, 3, 5]);
        assert_eq!(collapse_runs(&[]), Vec::<UnitId>::new());
        assert_eq!(collapse_runs(&[1]), vec![1]);
        assert_eq!(collapse_runs(&[2, 2, 2]), vec![2]);
    }

    #[test]
    fn direction_endpoints() {
        assert_eq!(Direction::A2B.source(), Language::A);
        assert_eq!(Direction::A2B.target(), Language::B);
        assert_eq!(Direction::B2A.reversed(), Direction::A2B);
    }
}
