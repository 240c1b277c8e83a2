//! Survey statistics for paired story evaluations.
//!
//! Participants rate stories on eight criteria plus a separate holistic score, once per
//! condition. This crate groups ratings by condition, pairs participants across two
//! conditions, runs the Wilcoxon signed-rank test on paired differences and renders
//! mean (SD) tables.

mod descriptive;
mod ingest;
mod paired;
mod report;
mod wilcoxon;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use descriptive::{aggregate_rating, group_aggregate_mean, mean_sd, mean_sd_with, ConditionGroup, SdDenominator};
pub use ingest::{load_csv, load_dataset, load_json, parse_csv, parse_json};
pub use paired::{compare_conditions, paired_subset, PairedComparison, Subgroup};
pub use report::{
    format_cell, render_report, report_rows, round_half_up_2, run_comparison, ComparisonSpec, GroupSpec, ReportRow,
};
pub use wilcoxon::{p_value_exact, p_value_normal, wilcoxon_signed_rank, Method, WilcoxonResult, EXACT_MAX_N};

/// The eight scored criteria, in table order. Holistic is rated separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Theme,
    Setting,
    Structure,
    Plot,
    Pace,
    Consistency,
    Characters,
    Dialogue,
}

impl Criterion {
    pub const ALL: [Criterion; 8] = [
        Criterion::Theme,
        Criterion::Setting,
        Criterion::Structure,
        Criterion::Plot,
        Criterion::Pace,
        Criterion::Consistency,
        Criterion::Characters,
        Criterion::Dialogue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Theme => "theme",
            Criterion::Setting => "setting",
            Criterion::Structure => "structure",
            Criterion::Plot => "plot",
            Criterion::Pace => "pace",
            Criterion::Consistency => "consistency",
            Criterion::Characters => "characters",
            Criterion::Dialogue => "dialogue",
        }
    }

    /// Column header used in reports.
    pub fn short_label(self) -> &'static str {
        match self {
            Criterion::Theme => "Theme",
            Criterion::Setting => "Setting",
            Criterion::Structure => "Struct.",
            Criterion::Plot => "Plot",
            Criterion::Pace => "Pace",
            Criterion::Consistency => "Consist.",
            Criterion::Characters => "Char.",
            Criterion::Dialogue => "Dialogue",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded = s.trim().to_lowercase();
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == folded || c.short_label().to_lowercase() == folded)
            .ok_or_else(|| StatsError::Parse(format!("unknown criterion {s:?}")))
    }
}

/// What a paired difference is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Aggregate,
    Holistic,
    Criterion(Criterion),
}

impl Measure {
    pub fn value(self, record: &RatingRecord) -> f64 {
        match self {
            Measure::Aggregate => aggregate_rating(record),
            Measure::Holistic => f64::from(record.holistic),
            Measure::Criterion(c) => f64::from(record.rating(c)),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Aggregate => f.write_str("aggregate"),
            Measure::Holistic => f.write_str("holistic"),
            Measure::Criterion(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Measure {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "aggregate" | "aggr" | "aggr." => Ok(Measure::Aggregate),
            "holistic" => Ok(Measure::Holistic),
            other => other.parse().map(Measure::Criterion),
        }
    }
}

/// One participant's ratings of one story under one condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub participant_id: String,
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre_group: Option<String>,
    pub ratings: BTreeMap<Criterion, u8>,
    pub holistic: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
}

impl RatingRecord {
    /// Rating for `c`. Only meaningful on a validated record.
    pub fn rating(&self, c: Criterion) -> u8 {
        self.ratings.get(&c).copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        let invalid = |reason: String| StatsError::InvalidRecord {
            participant: self.participant_id.clone(),
            reason,
        };
        if self.participant_id.trim().is_empty() {
            return Err(invalid("empty participant id".into()));
        }
        if self.condition.trim().is_empty() {
            return Err(invalid("empty condition".into()));
        }
        for c in Criterion::ALL {
            match self.ratings.get(&c) {
                None => return Err(invalid(format!("missing rating for {c}"))),
                Some(r) if !(1..=5).contains(r) => return Err(invalid(format!("{c} rating {r} outside 1..=5"))),
                _ => {}
            }
        }
        if !(1..=5).contains(&self.holistic) {
            return Err(invalid(format!("holistic rating {} outside 1..=5", self.holistic)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("group {label} has no records")]
    EmptyGroup { label: String },
    #[error("every paired difference is zero")]
    AllZeroDifferences,
    #[error("no participants in both conditions")]
    EmptyComparison,
    #[error("invalid record for participant {participant}: {reason}")]
    InvalidRecord { participant: String, reason: String },
    #[error("participant {participant} has more than one record for condition {condition}")]
    DuplicateRecord { participant: String, condition: String },
    #[error("{0}")]
    Parse(String),
}
