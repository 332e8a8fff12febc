//! Segmenter and completer implementations, and selection by name.

pub mod corrupt;
pub mod heuristic;
pub mod inpaint;
pub mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use corrupt::{CorruptedSegmenter, CorruptionConfig};
pub use heuristic::HeuristicSegmenter;
pub use inpaint::InpaintCompleter;
pub use oracle::{OracleCompleter, OracleSegmenter};

use crate::edit::Provenance;
use crate::engine::{Completer, Segmenter};
use crate::error::{Error, Result};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterKind {
    Oracle,
    Corrupted,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompleterKind {
    Oracle,
    Inpaint,
}

impl SegmenterKind {
    pub const NAMES: [&'static str; 3] = ["oracle", "corrupted", "heuristic"];

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Corrupted => "corrupted",
            Self::Heuristic => "heuristic",
        }
    }

    pub fn needs_ground_truth(self) -> bool {
        self != Self::Heuristic
    }
}

impl CompleterKind {
    pub const NAMES: [&'static str; 2] = ["oracle", "inpaint"];

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Inpaint => "inpaint",
        }
    }

    pub fn needs_ground_truth(self) -> bool {
        self == Self::Oracle
    }

    pub fn provenance(self) -> Provenance {
        match self {
            Self::Oracle => Provenance::Oracle,
            Self::Inpaint => Provenance::Inpainted,
        }
    }
}

impl FromStr for SegmenterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "corrupted" => Ok(Self::Corrupted),
            "heuristic" => Ok(Self::Heuristic),
            _ => Err(Error::InvalidConfig(format!(
                "unknown segmenter '{s}'; valid names: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

impl FromStr for CompleterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "inpaint" => Ok(Self::Inpaint),
            _ => Err(Error::InvalidConfig(format!(
                "unknown completer '{s}'; valid names: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

impl fmt::Display for SegmenterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for CompleterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn require<'a>(gt: Option<&'a Scene>, what: &str) -> Result<&'a Scene> {
    gt.ok_or_else(|| Error::InvalidConfig(format!("{what} needs a ground-truth scene")))
}

pub fn build_segmenter(
    kind: SegmenterKind,
    gt: Option<&Scene>,
    overlap_threshold: u64,
    corruption: &CorruptionConfig,
    heuristic: &HeuristicSegmenter,
) -> Result<Box<dyn Segmenter + Send>> {
    Ok(match kind {
        SegmenterKind::Oracle => Box::new(OracleSegmenter::new(require(gt, "oracle segmenter")?.clone(), overlap_threshold)),
        SegmenterKind::Corrupted => Box::new(CorruptedSegmenter::new(
            OracleSegmenter::new(require(gt, "corrupted segmenter")?.clone(), overlap_threshold),
            corruption.clone(),
        )?),
        SegmenterKind::Heuristic => Box::new(heuristic.clone()),
    })
}

pub fn build_completer(kind: CompleterKind, gt: Option<&Scene>, inpaint: &InpaintCompleter) -> Result<Box<dyn Completer + Send>> {
    Ok(match kind {
        CompleterKind::Oracle => Box::new(OracleCompleter::new(require(gt, "oracle completer")?.clone())),
        CompleterKind::Inpaint => Box::new(inpaint.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_errors_list_choices() {
        for n in SegmenterKind::NAMES {
            assert_eq!(n.parse::<SegmenterKind>().unwrap().name(), n);
        }
        for n in CompleterKind::NAMES {
            assert_eq!(n.parse::<CompleterKind>().unwrap().to_string(), n);
        }
        let e = "magic".parse::<SegmenterKind>().unwrap_err().to_string();
        assert!(e.contains("oracle, corrupted, heuristic"), "{e}");
        let e = "magic".parse::<CompleterKind>().unwrap_err().to_string();
        assert!(e.contains("oracle, inpaint"), "{e}");
    }

    #[test]
    fn oracles_require_a_scene() {
        let c = CorruptionConfig::default();
        let h = HeuristicSegmenter::default();
        assert!(build_segmenter(SegmenterKind::Oracle, None, 1, &c, &h).is_err());
        assert!(build_segmenter(SegmenterKind::Heuristic, None, 1, &c, &h).is_ok());
        assert!(build_completer(CompleterKind::Oracle, None, &InpaintCompleter::default()).is_err());
        assert!(build_completer(CompleterKind::Inpaint, None, &InpaintCompleter::default()).is_ok());
    }
}
