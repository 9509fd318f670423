//! Back-translation quality metrics: WER, BLEU, METEOR, MCD, and score
//! orientation.
//!
//! All four metrics are pure functions over label or frame sequences. Raw
//! values keep each metric's native scale and direction; [`orient`] flips the
//! low-is-better metrics (WER, MCD) by negation so that a higher oriented
//! score always means a better candidate, which is what the preference pair
//! builder compares against its margin.

mod bleu;
mod mcd;
mod meteor;
mod wer;

pub use bleu::{bleu, CorpusBleu, Smoothing};
pub use mcd::mcd;
pub use meteor::meteor_lite;
pub use wer::{edit_distance, wer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Worst possible oriented score, used as the sentinel for candidates whose
/// back-translation could not be scored at all. Finite so records serialize
/// cleanly, yet below any reachable oriented value.
pub const WORST_ORIENTED: f64 = f64::MIN;

/// The four back-translation evaluation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Wer,
    Bleu,
    Meteor,
    Mcd,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Wer,
        MetricKind::Bleu,
        MetricKind::Meteor,
        MetricKind::Mcd,
    ];

    /// True when lower raw values mean better quality.
    pub fn lower_is_better(self) -> bool {
        matches!(self, MetricKind::Wer | MetricKind::Mcd)
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Wer => "wer",
            MetricKind::Bleu => "bleu",
            MetricKind::Meteor => "meteor",
            MetricKind::Mcd => "mcd",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wer" => Ok(MetricKind::Wer),
            "bleu" => Ok(MetricKind::Bleu),
            "meteor" => Ok(MetricKind::Meteor),
            "mcd" => Ok(MetricKind::Mcd),
            other => Err(Error::Config(format!(
                "unknown metric `{other}` (expected wer, bleu, meteor, or mcd)"
            ))),
        }
    }
}

/// A raw metric value together with its oriented (higher-is-better) form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: MetricKind,
    pub raw: f64,
    pub oriented: f64,
}

impl MetricScore {
    pub fn new(metric: MetricKind, raw: f64) -> MetricScore {
        MetricScore {
            metric,
            raw,
            oriented: orient(metric, raw),
        }
    }

    /// The sentinel score for an unscorable candidate.
    pub fn worst(metric: MetricKind) -> MetricScore {
        MetricScore {
            metric,
            raw: f64::NAN,
            oriented: WORST_ORIENTED,
        }
    }

    pub fn is_worst_sentinel(&self) -> bool {
        self.oriented == WORST_ORIENTED
    }
}

/// Orient a raw metric value so that higher always means better: identity for
/// BLEU and METEOR, negation for WER and MCD.
pub fn orient(metric: MetricKind, raw: f64) -> f64 {
    if metric.lower_is_better() {
        -raw
    } else {
        raw
    }
}
