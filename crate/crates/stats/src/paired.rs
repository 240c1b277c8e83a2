use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{wilcoxon_signed_rank, ConditionGroup, Measure, RatingRecord, StatsError, WilcoxonResult};

/// A named participant subset, e.g. everyone who wrote a story of one genre group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgroup {
    pub label: String,
    pub participants: BTreeSet<String>,
}

impl Subgroup {
    /// Participants with at least one record in genre group `label`.
    pub fn genre(dataset: &[RatingRecord], label: &str) -> Self {
        Self {
            label: label.to_string(),
            participants: dataset
                .iter()
                .filter(|r| r.genre_group.as_deref() == Some(label))
                .map(|r| r.participant_id.clone())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedComparison {
    pub condition_a: String,
    pub condition_b: String,
    pub subgroup: Option<String>,
    /// Ordered by participant id.
    pub pairs: Vec<(String, RatingRecord, RatingRecord)>,
}

impl PairedComparison {
    pub fn participants(&self) -> Vec<&str> {
        self.pairs.iter().map(|(p, _, _)| p.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Participants rated under both conditions, optionally restricted to a subgroup.
pub fn paired_subset(a: &ConditionGroup, b: &ConditionGroup, subgroup: Option<&Subgroup>) -> PairedComparison {
    let mut pairs: Vec<_> = a
        .records
        .iter()
        .filter(|ra| subgroup.is_none_or(|g| g.participants.contains(&ra.participant_id)))
        .filter_map(|ra| {
            b.records
                .iter()
                .find(|rb| rb.participant_id == ra.participant_id)
                .map(|rb| (ra.participant_id.clone(), ra.clone(), rb.clone()))
        })
        .collect();
    pairs.sort_by(|x, y| x.0.cmp(&y.0));
    PairedComparison {
        condition_a: a.label.clone(),
        condition_b: b.label.clone(),
        subgroup: subgroup.map(|g| g.label.clone()),
        pairs,
    }
}

/// Signed-rank test on `measure(A) - measure(B)` over the pairs.
pub fn compare_conditions(cmp: &PairedComparison, measure: Measure) -> Result<WilcoxonResult, StatsError> {
    if cmp.is_empty() {
        return Err(StatsError::EmptyComparison);
    }
    let diffs: Vec<f64> = cmp
        .pairs
        .iter()
        .map(|(_, ra, rb)| measure.value(ra) - measure.value(rb))
        .collect();
    wilcoxon_signed_rank(&diffs)
}
