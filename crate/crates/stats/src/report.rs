use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{
    compare_conditions, paired_subset, ConditionGroup, Criterion, Measure, RatingRecord, SdDenominator, StatsError,
    Subgroup, WilcoxonResult,
};

const EMPTY_CELL: &str = "—";

/// One table row: records of `condition`, optionally limited to a genre group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub condition: String,
    #[serde(default)]
    pub genre_group: Option<String>,
}

impl FromStr for GroupSpec {
    type Err = StatsError;

    /// `LABEL=CONDITION` or `LABEL=CONDITION@GENRE`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (label, rest) = s
            .split_once('=')
            .ok_or_else(|| StatsError::Parse(format!("group spec {s:?} needs LABEL=CONDITION[@GENRE]")))?;
        let (condition, genre) = match rest.split_once('@') {
            Some((c, g)) => (c, Some(g.trim().to_string())),
            None => (rest, None),
        };
        if label.trim().is_empty() || condition.trim().is_empty() {
            return Err(StatsError::Parse(format!("group spec {s:?} has an empty part")));
        }
        Ok(Self {
            label: label.trim().to_string(),
            condition: condition.trim().to_string(),
            genre_group: genre,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub condition_a: String,
    pub condition_b: String,
    #[serde(default)]
    pub genre_group: Option<String>,
    pub measure: Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub n: usize,
    /// Eight criteria, then Holistic, then the aggregate. `None` for an empty group.
    pub cells: Vec<Option<(f64, f64)>>,
}

/// Round half away from zero to two decimals, returned in hundredths.
///
/// The small nudge keeps decimal halves like 2.675, stored as 2.67499999..., on the
/// upper side.
pub fn round_half_up_2(x: f64) -> i64 {
    let scaled = x.abs() * 100.0;
    let hundredths = (scaled + 0.5 + 1e-9).floor() as i64;
    if x < 0.0 {
        -hundredths
    } else {
        hundredths
    }
}

fn fixed2(x: f64) -> String {
    let h = round_half_up_2(x);
    let sign = if h < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", h.abs() / 100, h.abs() % 100)
}

/// `M.MM (S.SS)`.
pub fn format_cell(mean: f64, sd: f64) -> String {
    format!("{} ({})", fixed2(mean), fixed2(sd))
}

pub fn report_rows(
    dataset: &[RatingRecord],
    groups: &[GroupSpec],
    denominator: SdDenominator,
) -> Result<Vec<ReportRow>, StatsError> {
    groups
        .iter()
        .map(|spec| {
            let group = ConditionGroup::select(dataset, &spec.condition, spec.genre_group.as_deref())?;
            let mut cells: Vec<Option<(f64, f64)>> = Criterion::ALL
                .iter()
                .map(|c| group.criterion_mean_sd(*c, denominator).ok())
                .collect();
            cells.push(group.holistic_mean_sd(denominator).ok());
            cells.push(group.aggregate_mean_sd(denominator).ok());
            Ok(ReportRow {
                label: spec.label.clone(),
                n: group.n(),
                cells,
            })
        })
        .collect()
}

pub fn run_comparison(dataset: &[RatingRecord], spec: &ComparisonSpec) -> Result<WilcoxonResult, StatsError> {
    let a = ConditionGroup::select(dataset, &spec.condition_a, None)?;
    let b = ConditionGroup::select(dataset, &spec.condition_b, None)?;
    let sub = spec.genre_group.as_deref().map(|g| Subgroup::genre(dataset, g));
    compare_conditions(&paired_subset(&a, &b, sub.as_ref()), spec.measure)
}

/// Tab-separated mean (SD) table, one row per group in the given order, followed by
/// one line per requested comparison.
pub fn render_report(
    dataset: &[RatingRecord],
    groups: &[GroupSpec],
    comparisons: &[ComparisonSpec],
    denominator: SdDenominator,
) -> Result<String, StatsError> {
    let mut header = vec!["Group"];
    header.extend(Criterion::ALL.iter().map(|c| c.short_label()));
    header.extend(["Holistic", "Aggr."]);
    let mut out = header.join("\t");
    out.push('\n');
    for row in report_rows(dataset, groups, denominator)? {
        let mut line = vec![row.label.clone()];
        line.extend(row.cells.iter().map(|c| match c {
            Some((m, s)) => format_cell(*m, *s),
            None => EMPTY_CELL.to_string(),
        }));
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
    if !comparisons.is_empty() {
        out.push_str("\nWilcoxon signed-rank (two-sided)\n");
        for spec in comparisons {
            let scope = spec.genre_group.as_deref().map(|g| format!(" [{g}]")).unwrap_or_default();
            let head = format!("{} vs {}{scope}, {}", spec.condition_a, spec.condition_b, spec.measure);
            let result = match run_comparison(dataset, spec) {
                Ok(r) => format!(
                    "n = {}, W = {}, p = {:.3} ({})",
                    r.n_used,
                    r.w,
                    r.p_two_sided,
                    match r.method {
                        crate::Method::Exact => "exact",
                        crate::Method::NormalApprox => "normal approx.",
                    }
                ),
                Err(e) => e.to_string(),
            };
            out.push_str(&format!("{head}: {result}\n"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::record;

    #[test]
    fn cells() {
        assert_eq!(format_cell(3.7312, 1.0349), "3.73 (1.03)");
        assert_eq!(format_cell(4.0, 0.0), "4.00 (0.00)");
        assert_eq!(format_cell(2.675, 0.125), "2.68 (0.13)");
        assert_eq!(format_cell(1.005, 0.995), "1.01 (1.00)");
        assert_eq!(fixed2(-0.125), "-0.13");
    }

    #[test]
    fn group_spec_parse() {
        let g: GroupSpec = "K (KG)=kg@kinetic".parse().unwrap();
        assert_eq!(g.label, "K (KG)");
        assert_eq!(g.condition, "kg");
        assert_eq!(g.genre_group.as_deref(), Some("kinetic"));
        assert!("nolabel".parse::<GroupSpec>().is_err());
    }

    #[test]
    fn rows_follow_spec_order_and_empty_rows_dash() {
        let data = vec![record("1", "A", [4; 8], 3), record("1", "B", [3; 8], 5)];
        let groups: Vec<GroupSpec> = ["B=B", "A=A", "Z=Z"].iter().map(|s| s.parse().unwrap()).collect();
        let text = render_report(&data, &groups, &[], SdDenominator::Population).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "Group\tTheme\tSetting\tStruct.\tPlot\tPace\tConsist.\tChar.\tDialogue\tHolistic\tAggr."
        );
        assert!(lines[1].starts_with("B\t3.00 (0.00)"));
        assert!(lines[1].ends_with("5.00 (0.00)\t3.00 (0.00)"));
        assert!(lines[2].starts_with("A\t4.00 (0.00)"));
        assert_eq!(lines[3], format!("Z{}", "\t—".repeat(10)));
    }

    #[test]
    fn comparison_appendix() {
        let data: Vec<RatingRecord> = (1..=3)
            .flat_map(|i| {
                let id = i.to_string();
                [record(&id, "A", [3 + i as u8 % 2; 8], 3), record(&id, "B", [1; 8], 3)]
            })
            .collect();
        let groups = vec!["A=A".parse().unwrap()];
        let cmp = vec![ComparisonSpec {
            condition_a: "A".into(),
            condition_b: "B".into(),
            genre_group: None,
            measure: Measure::Aggregate,
        }];
        let text = render_report(&data, &groups, &cmp, SdDenominator::Population).unwrap();
        assert!(text.contains("A vs B, aggregate: n = 3, W = 0, p = 0.250 (exact)"), "{text}");
    }
}
