use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Criterion, RatingRecord, StatsError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdDenominator {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1 (0 for a single value).
    Sample,
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64), StatsError> {
    mean_sd_with(values, SdDenominator::Population)
}

pub fn mean_sd_with(values: &[f64], denominator: SdDenominator) -> Result<(f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyGroup { label: String::new() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = match denominator {
        SdDenominator::Population => (ss / n).sqrt(),
        SdDenominator::Sample if values.len() > 1 => (ss / (n - 1.0)).sqrt(),
        SdDenominator::Sample => 0.0,
    };
    Ok((mean, sd))
}

/// Mean of the eight criterion ratings. Holistic is not part of it.
pub fn aggregate_rating(record: &RatingRecord) -> f64 {
    let sum: u32 = Criterion::ALL.iter().map(|c| u32::from(record.rating(*c))).sum();
    f64::from(sum) / Criterion::ALL.len() as f64
}

/// All records for one condition, at most one per participant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionGroup {
    pub label: String,
    pub records: Vec<RatingRecord>,
}

impl ConditionGroup {
    pub fn new(label: impl Into<String>, records: Vec<RatingRecord>) -> Result<Self, StatsError> {
        let label = label.into();
        let mut seen = BTreeSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.participant_id.as_str()) {
                return Err(StatsError::DuplicateRecord {
                    participant: r.participant_id.clone(),
                    condition: label,
                });
            }
        }
        Ok(Self { label, records })
    }

    /// Records of `dataset` with the given condition and, if set, genre group.
    pub fn select(dataset: &[RatingRecord], condition: &str, genre_group: Option<&str>) -> Result<Self, StatsError> {
        let records = dataset
            .iter()
            .filter(|r| r.condition == condition)
            .filter(|r| genre_group.is_none_or(|g| r.genre_group.as_deref() == Some(g)))
            .cloned()
            .collect();
        Self::new(condition, records)
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn participants(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.participant_id.as_str()).collect()
    }

    fn empty(&self) -> StatsError {
        StatsError::EmptyGroup {
            label: self.label.clone(),
        }
    }

    pub fn criterion_mean_sd(&self, c: Criterion, denominator: SdDenominator) -> Result<(f64, f64), StatsError> {
        let values: Vec<f64> = self.records.iter().map(|r| f64::from(r.rating(c))).collect();
        mean_sd_with(&values, denominator).map_err(|_| self.empty())
    }

    pub fn holistic_mean_sd(&self, denominator: SdDenominator) -> Result<(f64, f64), StatsError> {
        let values: Vec<f64> = self.records.iter().map(|r| f64::from(r.holistic)).collect();
        mean_sd_with(&values, denominator).map_err(|_| self.empty())
    }

    pub fn aggregate_mean_sd(&self, denominator: SdDenominator) -> Result<(f64, f64), StatsError> {
        let values: Vec<f64> = self.records.iter().map(aggregate_rating).collect();
        mean_sd_with(&values, denominator).map_err(|_| self.empty())
    }
}

/// Mean and population SD of per-participant aggregate ratings.
pub fn group_aggregate_mean(group: &ConditionGroup) -> Result<(f64, f64), StatsError> {
    group.aggregate_mean_sd(SdDenominator::Population)
}
